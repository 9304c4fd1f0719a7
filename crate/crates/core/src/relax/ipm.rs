//! Primal-dual interior point method for small dense convex programs
//!
//! ```text
//!     minimize    f_0(z)
//!     subject to  f_j(z) <= 0,   j = 1..p
//! ```
//!
//! where every `f_j(z) = zᵀ H_j z + g_jᵀ z + c_j` has `H_j ⪰ 0`. Slacks make the
//! method infeasible-start; steps use a Mehrotra predictor-corrector.

use nalgebra::{DMatrix, DVector};

/// Curvature term `zᵀ H z` of a quadratic function.
#[derive(Debug, Clone)]
pub(crate) enum Curvature {
    Zero,
    Dense(DMatrix<f64>),
    /// `scale · (aᵀz)²`
    RankOne { scale: f64, dir: DVector<f64> },
}

#[derive(Debug, Clone)]
pub(crate) struct QuadFn {
    pub curvature: Curvature,
    pub grad: DVector<f64>,
    pub constant: f64,
}

impl QuadFn {
    pub fn linear(grad: DVector<f64>, constant: f64) -> Self {
        Self {
            curvature: Curvature::Zero,
            grad,
            constant,
        }
    }

    pub fn value(&self, z: &DVector<f64>) -> f64 {
        let quad = match &self.curvature {
            Curvature::Zero => 0.0,
            Curvature::Dense(h) => z.dot(&(h * z)),
            Curvature::RankOne { scale, dir } => scale * dir.dot(z).powi(2),
        };
        quad + self.grad.dot(z) + self.constant
    }

    pub fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        match &self.curvature {
            Curvature::Zero => self.grad.clone(),
            Curvature::Dense(h) => h * z * 2.0 + &self.grad,
            Curvature::RankOne { scale, dir } => dir * (2.0 * scale * dir.dot(z)) + &self.grad,
        }
    }

    /// `k += weight · ∇²f`.
    fn add_hessian(&self, weight: f64, k: &mut DMatrix<f64>) {
        match &self.curvature {
            Curvature::Zero => {}
            Curvature::Dense(h) => *k += h * (2.0 * weight),
            Curvature::RankOne { scale, dir } => k.ger(2.0 * weight * scale, dir, dir, 1.0),
        }
    }

    fn magnitude(&self) -> f64 {
        let curv = match &self.curvature {
            Curvature::Zero => 0.0,
            Curvature::Dense(h) => h.amax(),
            Curvature::RankOne { scale, dir } => scale.abs() * dir.amax().powi(2),
        };
        curv.max(self.grad.amax())
    }

    fn scaled(&self, s: f64) -> Self {
        let curvature = match &self.curvature {
            Curvature::Zero => Curvature::Zero,
            Curvature::Dense(h) => Curvature::Dense(h * s),
            Curvature::RankOne { scale, dir } => Curvature::RankOne {
                scale: scale * s,
                dir: dir.clone(),
            },
        };
        Self {
            curvature,
            grad: &self.grad * s,
            constant: self.constant * s,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct ConvexProgram {
    pub dim: usize,
    pub objective: QuadFn,
    pub constraints: Vec<QuadFn>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct IpmSettings {
    pub max_iter: usize,
    pub feas_tol: f64,
    pub dual_tol: f64,
    pub gap_tol: f64,
}

impl Default for IpmSettings {
    fn default() -> Self {
        Self {
            max_iter: 200,
            feas_tol: 1e-10,
            dual_tol: 1e-10,
            gap_tol: 1e-12,
        }
    }
}

impl IpmSettings {
    pub fn tightened(self) -> Self {
        Self {
            max_iter: self.max_iter * 2,
            ..self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum IpmStatus {
    Optimal,
    MaxIterations,
    Stalled,
}

#[derive(Debug, Clone)]
pub(crate) struct IpmSolution {
    pub z: DVector<f64>,
    /// Unscaled multipliers, one per constraint.
    pub multipliers: DVector<f64>,
    pub objective: f64,
    /// `f_0(z) + Σ ν_j f_j(z)`, a lower bound when `z` minimizes the Lagrangian.
    pub lagrangian: f64,
    /// Largest constraint violation `max_j f_j(z)⁺` (unscaled).
    pub infeasibility: f64,
    /// Scaled KKT residual (stationarity, feasibility, complementarity).
    pub kkt_residual: f64,
    pub iterations: usize,
    pub status: IpmStatus,
}

const STEP_FRACTION: f64 = 0.99;

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, &d)| d < 0.0)
        .map(|(&x, &d)| -x / d)
        .fold(f64::INFINITY, f64::min)
}

pub(crate) fn solve(
    program: &ConvexProgram,
    start: &DVector<f64>,
    settings: IpmSettings,
) -> IpmSolution {
    let n = program.dim;
    let p = program.constraints.len();
    let obj_scale = 1.0 / program.objective.magnitude().max(1.0);
    let objective = program.objective.scaled(obj_scale);
    let con_scales: Vec<f64> = program
        .constraints
        .iter()
        .map(|c| 1.0 / c.magnitude().max(1.0))
        .collect();
    let constraints: Vec<QuadFn> = program
        .constraints
        .iter()
        .zip(&con_scales)
        .map(|(c, &s)| c.scaled(s))
        .collect();

    let finish = |z: DVector<f64>, lam: &DVector<f64>, kkt: f64, iterations, status| {
        let multipliers = DVector::from_iterator(
            p,
            lam.iter()
                .zip(&con_scales)
                .map(|(&l, &s)| l * s / obj_scale),
        );
        let f0 = program.objective.value(&z);
        let mut lagrangian = f0;
        let mut infeasibility = 0.0_f64;
        for (c, nu) in program.constraints.iter().zip(multipliers.iter()) {
            let fj = c.value(&z);
            lagrangian += nu * fj;
            infeasibility = infeasibility.max(fj);
        }
        IpmSolution {
            z,
            multipliers,
            objective: f0,
            lagrangian,
            infeasibility,
            kkt_residual: kkt,
            iterations,
            status,
        }
    };

    let mut z = start.clone();
    assert_eq!(z.len(), n, "starting point has wrong dimension");
    if p == 0 && n == 0 {
        return finish(z, &DVector::zeros(0), 0.0, 0, IpmStatus::Optimal);
    }

    let mut s = DVector::from_iterator(p, constraints.iter().map(|c| (-c.value(&z)).max(1.0)));
    let mut lam = DVector::from_element(p, 1.0);
    let mut best: Option<(f64, DVector<f64>, DVector<f64>)> = None;
    let mut stalls = 0;

    for iter in 0..settings.max_iter {
        let fvals = DVector::from_iterator(p, constraints.iter().map(|c| c.value(&z)));
        let mut jac = DMatrix::<f64>::zeros(p, n);
        for (j, c) in constraints.iter().enumerate() {
            jac.row_mut(j).copy_from(&c.gradient(&z).transpose());
        }
        let f0 = objective.value(&z);
        let r_p = &fvals + &s;
        let r_d = objective.gradient(&z) + jac.tr_mul(&lam);
        let gap = s.dot(&lam);
        let mu = if p > 0 { gap / p as f64 } else { 0.0 };

        let dual_scale = 1.0 + objective.grad.amax();
        let feas = r_p.amax();
        let dual = r_d.amax() / dual_scale;
        let rel_gap = gap / f0.abs().max(1.0);
        let kkt = feas.max(dual).max(rel_gap);
        if best.as_ref().map_or(true, |(b, _, _)| kkt < *b) {
            best = Some((kkt, z.clone(), lam.clone()));
        }
        if feas <= settings.feas_tol && dual <= settings.dual_tol && rel_gap <= settings.gap_tol {
            return finish(z, &lam, kkt, iter, IpmStatus::Optimal);
        }

        // K = ∇²f_0 + Σ λ_j ∇²f_j + Jᵀ (Λ/S) J
        let mut k = DMatrix::<f64>::zeros(n, n);
        objective.add_hessian(1.0, &mut k);
        for (c, &l) in constraints.iter().zip(lam.iter()) {
            c.add_hessian(l, &mut k);
        }
        let w = lam.component_div(&s);
        let mut wj = jac.clone();
        for (j, mut row) in wj.row_iter_mut().enumerate() {
            row *= w[j];
        }
        k += jac.tr_mul(&wj);

        let Some(chol) = regularized_cholesky(k) else {
            break;
        };

        let direction = |r_c: &DVector<f64>| {
            // dz from the reduced system, then ds and dλ by back substitution
            let t = (r_c + lam.component_mul(&r_p)).component_div(&s);
            let rhs = -(&r_d + jac.tr_mul(&t));
            let dz = chol.solve(&rhs);
            let jdz = &jac * &dz;
            let ds = -(&r_p + &jdz);
            let dl = &t + w.component_mul(&jdz);
            (dz, ds, dl)
        };

        let rc_aff = -s.component_mul(&lam);
        let (_, ds_aff, dl_aff) = direction(&rc_aff);
        let a_aff = max_step(&s, &ds_aff).min(max_step(&lam, &dl_aff)).min(1.0);
        let mu_aff = if p > 0 {
            (&s + &ds_aff * a_aff).dot(&(&lam + &dl_aff * a_aff)) / p as f64
        } else {
            0.0
        };
        let sigma = if mu > 0.0 { (mu_aff / mu).powi(3).min(1.0) } else { 0.0 };
        let rc = DVector::from_element(p, sigma * mu) - s.component_mul(&lam)
            - ds_aff.component_mul(&dl_aff);
        let (dz, ds, dl) = direction(&rc);

        let a_max = max_step(&s, &ds).min(max_step(&lam, &dl));
        let step = (STEP_FRACTION * a_max).min(1.0);
        if !(step > 1e-12) || !dz.iter().all(|v| v.is_finite()) {
            stalls += 1;
            if stalls > 3 {
                break;
            }
            // recentre and retry
            for (sj, lj) in s.iter_mut().zip(lam.iter_mut()) {
                let target = mu.max(1e-14);
                *lj = lj.max(target / sj.max(1e-300));
            }
            continue;
        }
        z += &dz * step;
        s += &ds * step;
        lam += &dl * step;
        // keep the iterates strictly interior
        s.iter_mut().for_each(|v| *v = v.max(1e-300));
        lam.iter_mut().for_each(|v| *v = v.max(1e-300));
    }

    let status = if stalls > 3 {
        IpmStatus::Stalled
    } else {
        IpmStatus::MaxIterations
    };
    let (kkt, z, lam) = best.expect("at least one iterate was evaluated");
    finish(z, &lam, kkt, settings.max_iter, status)
}

fn regularized_cholesky(k: DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let n = k.nrows();
    let scale = k.amax().max(1.0);
    let mut reg = 0.0;
    for _ in 0..8 {
        let mut m = k.clone();
        for i in 0..n {
            m[(i, i)] += reg;
        }
        if let Some(c) = m.cholesky() {
            return Some(c);
        }
        reg = if reg == 0.0 { 1e-14 * scale } else { reg * 100.0 };
    }
    None
}
