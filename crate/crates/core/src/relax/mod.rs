//! Convex relaxations built from diagonal perturbations.
//!
//! For a perturbation `d` with `Zᵀ(Q + diag d)Z ⪰ 0` the quadratic cut
//! `v ≥ xᵀ(Q + diag d)x − dᵀy` is valid whenever `y_i = x_i²`. The relaxations
//! here work in nullspace coordinates `x = x̂ + Zw` and replace `y_i = x_i²` by
//! the hull `l_i(x_i) ≤ y_i ≤ u_i(x_i)`.

pub(crate) mod ipm;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::{self, LinalgError, NullspaceBasis};
use crate::model::{LowerHull, MiqpInstance};
use crate::separation::{self, SeparationConfig, SeparationError, SeparationInput, SeparationResult};
use ipm::{ConvexProgram, Curvature, IpmSettings, IpmSolution, IpmStatus, QuadFn};

#[derive(Debug, Error)]
pub enum RelaxError {
    #[error("relaxation is infeasible: {0}")]
    Infeasible(String),
    #[error("the quadratic form is convex on the feasible directions; no perturbation is needed")]
    Convex,
    #[error("cut pool is empty")]
    EmptyPool,
    #[error("convex solver did not converge (KKT residual {kkt_residual:e}, best bound {bound})")]
    NotConverged { kkt_residual: f64, bound: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Separation(#[from] SeparationError),
}

pub type Result<T> = std::result::Result<T, RelaxError>;

/// Scaled KKT residual accepted from the convex solver.
pub const KKT_TOL: f64 = 1e-8;
/// Default relative violation needed to add a cut.
pub const VIOLATION_TOL: f64 = 1e-6;
const FIXED_TOL: f64 = 1e-12;
const RANK_TOL: f64 = 1e-10;

/// How `y_i` enters a relaxation.
#[derive(Debug, Clone, Copy, PartialEq)]
enum YVar {
    /// Explicit variable with `x_i² ≤ y_i ≤ u_i(x_i)`; index into the `y` block.
    Free(usize),
    /// `y_i = slope·x_i + intercept`.
    Affine { slope: f64, intercept: f64 },
}

/// Nullspace parametrization of `{x : Ax = b, x_i = L_i for fixed i}`.
#[derive(Debug, Clone)]
pub struct RelaxContext {
    pub basis: NullspaceBasis,
    /// Least-norm particular solution.
    pub x_hat: DVector<f64>,
    pub fixed: Vec<bool>,
    /// A point of the polytope `{Ax = b, L ≤ x ≤ U}`.
    pub feasible_point: DVector<f64>,
    yvars: Vec<YVar>,
    num_y: usize,
}

impl RelaxContext {
    /// Fails with [`RelaxError::Infeasible`] when the polytope is empty.
    pub fn new(inst: &MiqpInstance) -> Result<Self> {
        let n = inst.n();
        let fixed: Vec<bool> = inst.domains.iter().map(|d| d.width() <= FIXED_TOL).collect();
        let nfix = fixed.iter().filter(|&&f| f).count();

        let mut a = DMatrix::zeros(inst.m() + nfix, n);
        let mut b = DVector::zeros(inst.m() + nfix);
        a.rows_mut(0, inst.m()).copy_from(&inst.a);
        b.rows_mut(0, inst.m()).copy_from(&inst.b);
        let mut row = inst.m();
        for (i, &f) in fixed.iter().enumerate() {
            if f {
                a[(row, i)] = 1.0;
                b[row] = inst.domains[i].lower;
                row += 1;
            }
        }
        let (a_kept, b_kept) = if a.nrows() > 0 {
            let qr = linalg::pivoted_qr(&a.transpose(), RANK_TOL);
            let mut keep: Vec<usize> = qr.perm[..qr.rank].to_vec();
            keep.sort_unstable();
            (a.select_rows(keep.iter()), b.select_rows(keep.iter()))
        } else {
            (a.clone(), b.clone())
        };
        let x_hat = if a_kept.nrows() > 0 {
            linalg::least_norm_solution(&a_kept, &b_kept)?
        } else {
            DVector::zeros(n)
        };
        if a.nrows() > 0 {
            let resid = (&a * &x_hat - &b).amax();
            if resid > 1e-8 * (1.0 + b.amax()) {
                return Err(RelaxError::Infeasible(format!(
                    "equality system is inconsistent (residual {resid:e})"
                )));
            }
        }
        let basis = linalg::nullspace_basis(&a_kept)?;

        let mut yvars = Vec::with_capacity(n);
        let mut num_y = 0;
        for (i, h) in inst.hull.iter().enumerate() {
            let yv = match h.lower {
                LowerHull::Square if !fixed[i] => {
                    num_y += 1;
                    YVar::Free(num_y - 1)
                }
                LowerHull::Square => YVar::Affine {
                    slope: h.upper_slope,
                    intercept: h.upper_intercept,
                },
                LowerHull::Affine { slope, intercept } => YVar::Affine { slope, intercept },
            };
            yvars.push(yv);
        }

        let mut ctx = Self {
            basis,
            x_hat: x_hat.clone(),
            fixed,
            feasible_point: x_hat,
            yvars,
            num_y,
        };
        ctx.feasible_point = ctx.find_feasible_point(inst)?;
        Ok(ctx)
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    /// Number of explicit `y` variables in the QCP.
    pub fn num_y(&self) -> usize {
        self.num_y
    }

    pub fn x_of(&self, w: &DVector<f64>) -> DVector<f64> {
        if self.dim() == 0 {
            self.x_hat.clone()
        } else {
            &self.x_hat + &self.basis.z * w
        }
    }

    fn w_of(&self, x: &DVector<f64>) -> DVector<f64> {
        self.basis.z.tr_mul(&(x - &self.x_hat))
    }

    /// Row `i` of `Z`, zero-padded to length `total`.
    fn z_row(&self, i: usize, total: usize) -> DVector<f64> {
        let mut g = DVector::zeros(total);
        for j in 0..self.dim() {
            g[j] = self.basis.z[(i, j)];
        }
        g
    }

    /// Bound rows `L_i − x_i ≤ 0` and `x_i − U_i ≤ 0` for non-fixed variables.
    fn bound_constraints(&self, inst: &MiqpInstance, total: usize) -> Vec<QuadFn> {
        let mut out = Vec::new();
        for (i, dom) in inst.domains.iter().enumerate() {
            if self.fixed[i] || self.dim() == 0 {
                continue;
            }
            let zr = self.z_row(i, total);
            out.push(QuadFn::linear(-&zr, dom.lower - self.x_hat[i]));
            out.push(QuadFn::linear(zr, self.x_hat[i] - dom.upper));
        }
        out
    }

    /// `xᵀPx + cᵀx + c₀` as a function of the first `k` coordinates of a
    /// length-`total` vector.
    fn quadratic_in_w(
        &self,
        p: &DMatrix<f64>,
        c: &DVector<f64>,
        c0: f64,
        total: usize,
    ) -> QuadFn {
        let k = self.dim();
        let px = p * &self.x_hat;
        let constant = self.x_hat.dot(&px) + c.dot(&self.x_hat) + c0;
        let mut grad = DVector::zeros(total);
        let mut h = DMatrix::zeros(total, total);
        if k > 0 {
            let z = &self.basis.z;
            let g = z.tr_mul(&(px * 2.0 + c));
            grad.rows_mut(0, k).copy_from(&g);
            let zpz = self.basis.project(p);
            h.view_mut((0, 0), (k, k)).copy_from(&zpz);
        }
        QuadFn {
            curvature: if k > 0 { Curvature::Dense(h) } else { Curvature::Zero },
            grad,
            constant,
        }
    }

    /// Minimize `t` subject to `L − t ≤ x ≤ U + t`.
    fn find_feasible_point(&self, inst: &MiqpInstance) -> Result<DVector<f64>> {
        let lo = inst.lower_bounds();
        let hi = inst.upper_bounds();
        let violation = |x: &DVector<f64>| {
            (0..x.len())
                .filter(|&i| !self.fixed[i])
                .map(|i| (lo[i] - x[i]).max(x[i] - hi[i]))
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let scale = 1.0 + lo.amax().max(hi.amax());
        let tol = 1e-9 * scale;
        let v0 = violation(&self.x_hat);
        if v0 <= 0.0 || self.dim() == 0 {
            return if v0 <= tol {
                Ok(self.x_hat.clone())
            } else {
                Err(RelaxError::Infeasible(format!(
                    "bounds violated by {v0:e} at the unique point of Ax = b"
                )))
            };
        }
        let k = self.dim();
        let total = k + 1;
        let mut t_dir = DVector::zeros(total);
        t_dir[k] = 1.0;
        let mut cons = Vec::new();
        for (i, dom) in inst.domains.iter().enumerate() {
            if self.fixed[i] {
                continue;
            }
            let zr = self.z_row(i, total);
            cons.push(QuadFn::linear(-&zr - &t_dir, dom.lower - self.x_hat[i]));
            cons.push(QuadFn::linear(zr - &t_dir, self.x_hat[i] - dom.upper));
        }
        let program = ConvexProgram {
            dim: total,
            objective: QuadFn::linear(t_dir, 0.0),
            constraints: cons,
        };
        let mut start = DVector::zeros(total);
        start[k] = v0 + 1.0;
        let sol = ipm::solve(&program, &start, IpmSettings::default());
        let w = sol.z.rows(0, k).into_owned();
        let x = self.x_of(&w);
        let v = violation(&x);
        if v > tol {
            if sol.status == IpmStatus::Optimal || sol.z[k] > 1e-6 * scale {
                return Err(RelaxError::Infeasible(format!(
                    "no point of Ax = b lies within the bounds (max violation {v:e})"
                )));
            }
            return Err(RelaxError::NotConverged {
                kkt_residual: sol.kkt_residual,
                bound: f64::NAN,
            });
        }
        Ok(x.zip_map(&lo, f64::max).zip_map(&hi, f64::min))
    }

    /// `y` implied by `x` and the explicit `y` block.
    fn reconstruct_y(&self, x: &DVector<f64>, yblock: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            x.len(),
            self.yvars.iter().enumerate().map(|(i, yv)| match *yv {
                YVar::Free(j) => yblock[j],
                YVar::Affine { slope, intercept } => slope * x[i] + intercept,
            }),
        )
    }
}

/// Result of a convex relaxation solve.
#[derive(Debug, Clone)]
pub struct RelaxationSolution {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    /// Epigraph value; for single-perturbation solves the value of that cut.
    pub v: Option<f64>,
    /// Lower bound on the relaxation optimum (Lagrangian value).
    pub bound: f64,
    /// Primal objective at `(x, y, v)`.
    pub objective: f64,
    /// One multiplier per cut (QCP only).
    pub cut_multipliers: DVector<f64>,
    pub kkt_residual: f64,
    pub infeasibility: f64,
    pub iterations: usize,
}

impl RelaxationSolution {
    /// `η_i = y_i − x_i²`, clamped at zero.
    pub fn eta(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.x.len(),
            self.x.iter().zip(self.y.iter()).map(|(&x, &y)| {
                let e = y - x * x;
                if e < -1e-7 * (1.0 + y.abs()) {
                    warn!("relaxation point has y − x² = {e:e}; clamped");
                }
                e.max(0.0)
            }),
        )
    }
}

fn accept(
    program: &ConvexProgram,
    start: &DVector<f64>,
) -> std::result::Result<IpmSolution, IpmSolution> {
    let settings = IpmSettings::default();
    let sol = ipm::solve(program, start, settings);
    if sol.status == IpmStatus::Optimal || sol.kkt_residual <= KKT_TOL {
        return Ok(sol);
    }
    debug!(
        "convex solve rejected (status {:?}, KKT {:e}); retrying",
        sol.status, sol.kkt_residual
    );
    let retry = ipm::solve(program, &sol.z, settings.tightened());
    if retry.status == IpmStatus::Optimal || retry.kkt_residual <= KKT_TOL {
        Ok(retry)
    } else if retry.kkt_residual < sol.kkt_residual {
        Err(retry)
    } else {
        Err(sol)
    }
}

fn not_converged(sol: &IpmSolution) -> RelaxError {
    RelaxError::NotConverged {
        kkt_residual: sol.kkt_residual,
        bound: sol.lagrangian,
    }
}

/// Escalated `α` with the associated `μ(α) = −λ_min(Q, I + αAᵀA)`.
#[derive(Debug, Clone)]
pub struct AlphaSelection {
    pub alpha: f64,
    pub mu: f64,
    /// `(α, μ(α))` for every evaluated `α`.
    pub trace: Vec<(f64, f64)>,
    /// The escalation hit its cap without stabilizing.
    pub capped: bool,
}

/// `μ(α) = −λ_min(Q, I + αAᵀA)`.
pub fn mu_of_alpha(quad: &DMatrix<f64>, a: &DMatrix<f64>, alpha: f64) -> Result<f64> {
    let n = quad.nrows();
    let mut pencil = DMatrix::identity(n, n);
    if a.nrows() > 0 && alpha > 0.0 {
        pencil += a.tr_mul(a) * alpha;
    }
    Ok(-linalg::min_generalized_eigenvalue(quad, &pencil)?)
}

pub fn select_alpha(inst: &MiqpInstance) -> Result<AlphaSelection> {
    if inst.m() == 0 {
        let mu = -linalg::min_eigenvalue(&inst.quad)?;
        return Ok(AlphaSelection {
            alpha: 0.0,
            mu,
            trace: vec![(0.0, mu)],
            capped: false,
        });
    }
    let ata = inst.a.tr_mul(&inst.a);
    let alpha0 = (inst.quad.norm() / ata.norm().max(1.0)).max(1.0);
    let mut trace = Vec::new();
    let mut alpha = alpha0;
    let mut mu = mu_of_alpha(&inst.quad, &inst.a, alpha)?;
    trace.push((alpha, mu));
    for _ in 0..8 {
        let next = mu_of_alpha(&inst.quad, &inst.a, alpha * 10.0)?;
        trace.push((alpha * 10.0, next));
        if (next - mu).abs() <= 1e-3 * mu.abs().max(1.0) {
            return Ok(AlphaSelection {
                alpha,
                mu,
                trace,
                capped: false,
            });
        }
        alpha *= 10.0;
        mu = next;
    }
    debug!("α escalation capped at {alpha:e}");
    Ok(AlphaSelection {
        alpha,
        mu,
        trace,
        capped: true,
    })
}

/// `−λ_min(Q)`.
pub fn eig_mu(inst: &MiqpInstance) -> Result<f64> {
    Ok(-linalg::min_eigenvalue(&inst.quad)?)
}

/// `−λ_min(ZᵀQZ)` on the context's feasible directions (`−∞` when there are none).
pub fn eigns_mu(inst: &MiqpInstance, ctx: &RelaxContext) -> Result<f64> {
    Ok(-linalg::projected_min_eigenvalue(&inst.quad, &ctx.basis)?)
}

/// True iff `Q` is convex on the feasible directions.
pub fn is_convex(inst: &MiqpInstance, ctx: &RelaxContext) -> Result<bool> {
    let lam = linalg::projected_min_eigenvalue(&inst.quad, &ctx.basis)?;
    Ok(lam >= -1e-9 * linalg::max_abs(&inst.quad).max(1.0))
}

/// Uniform starting perturbation `μ𝟙` with `μ = −λ_min(ZᵀQZ)`
/// (`−λ_min(Q)` when there are no equalities).
pub fn initial_perturbation(inst: &MiqpInstance, ctx: &RelaxContext) -> Result<DVector<f64>> {
    if is_convex(inst, ctx)? {
        return Err(RelaxError::Convex);
    }
    let mu = if inst.m() == 0 && ctx.fixed.iter().all(|f| !f) {
        eig_mu(inst)?
    } else {
        eigns_mu(inst, ctx)?
    };
    Ok(DVector::from_element(inst.n(), mu.max(0.0)))
}

/// Relaxation with the single cut `d = μ𝟙`, `y` and `v` eliminated.
pub fn solve_eigenvalue_relaxation(
    inst: &MiqpInstance,
    ctx: &RelaxContext,
    mu: f64,
) -> Result<RelaxationSolution> {
    solve_qp_child(inst, ctx, &DVector::from_element(inst.n(), mu))
}

/// `min xᵀ(Q + diag d)x + qᵀx − dᵀy` over the hull, with `y_i = u_i(x_i)` when
/// `d_i ≥ 0` and `y_i = l_i(x_i)` otherwise.
pub fn solve_qp_child(
    inst: &MiqpInstance,
    ctx: &RelaxContext,
    d: &DVector<f64>,
) -> Result<RelaxationSolution> {
    let n = inst.n();
    if d.len() != n {
        return Err(RelaxError::Dimension(format!("d has length {}, n = {n}", d.len())));
    }
    let mut p = inst.quad.clone();
    let mut c = inst.linear.clone();
    let mut c0 = 0.0;
    // how y_i is chosen, for the reconstruction
    let mut choice = Vec::with_capacity(n);
    for (i, h) in inst.hull.iter().enumerate() {
        let di = d[i];
        let upper = (h.upper_slope, h.upper_intercept);
        let pick = if di >= 0.0 || ctx.fixed[i] {
            Some(upper)
        } else {
            match h.lower {
                LowerHull::Square => None,
                LowerHull::Affine { slope, intercept } => Some((slope, intercept)),
            }
        };
        match pick {
            Some((s, t)) => {
                p[(i, i)] += di;
                c[i] -= di * s;
                c0 -= di * t;
            }
            None => {}
        }
        choice.push(pick);
    }
    let k = ctx.dim();
    let objective = ctx.quadratic_in_w(&p, &c, c0, k);
    let constraints = ctx.bound_constraints(inst, k);
    let program = ConvexProgram {
        dim: k,
        objective,
        constraints,
    };
    let start = ctx.w_of(&ctx.feasible_point);
    let sol = accept(&program, &start).map_err(|s| not_converged(&s))?;
    let x = clamp_to_box(inst, &ctx.x_of(&sol.z));
    let y = DVector::from_iterator(
        n,
        choice.iter().enumerate().map(|(i, pick)| match pick {
            Some((s, t)) => s * x[i] + t,
            None => x[i] * x[i],
        }),
    );
    let qx = x.dot(&(&inst.quad * &x));
    let v = qx + (0..n).map(|i| d[i] * (x[i] * x[i] - y[i])).sum::<f64>();
    Ok(RelaxationSolution {
        objective: sol.objective,
        bound: sol.lagrangian,
        x,
        y,
        v: Some(v),
        cut_multipliers: DVector::zeros(0),
        kkt_residual: sol.kkt_residual,
        infeasibility: sol.infeasibility,
        iterations: sol.iterations,
    })
}

fn clamp_to_box(inst: &MiqpInstance, x: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        x.len(),
        x.iter()
            .zip(&inst.domains)
            .map(|(&v, d)| v.clamp(d.lower, d.upper)),
    )
}

/// QCP over `(w, y, v)` with one epigraph constraint per cut.
#[derive(Debug, Clone)]
pub struct QcpModel {
    program: ConvexProgram,
    /// Index of the first cut constraint.
    cut_offset: usize,
    num_cuts: usize,
    start: DVector<f64>,
    k: usize,
}

impl QcpModel {
    pub fn num_cuts(&self) -> usize {
        self.num_cuts
    }

    pub fn num_y(&self) -> usize {
        self.program.dim - self.k - 1
    }

    pub fn num_constraints(&self) -> usize {
        self.program.constraints.len()
    }
}

/// Cut `xᵀ(Q + diag d)x − dᵀy − v ≤ 0` in `(w, y, v)` coordinates.
fn cut_constraint(inst: &MiqpInstance, ctx: &RelaxContext, d: &DVector<f64>, total: usize) -> QuadFn {
    let k = ctx.dim();
    let mut p = inst.quad.clone();
    let mut c = DVector::zeros(inst.n());
    let mut c0 = 0.0;
    let mut y_coeffs = Vec::new();
    for (i, yv) in ctx.yvars.iter().enumerate() {
        p[(i, i)] += d[i];
        match *yv {
            YVar::Free(j) => y_coeffs.push((j, -d[i])),
            YVar::Affine { slope, intercept } => {
                c[i] -= d[i] * slope;
                c0 -= d[i] * intercept;
            }
        }
    }
    let mut f = ctx.quadratic_in_w(&p, &c, c0, total);
    for (j, coeff) in y_coeffs {
        f.grad[k + j] += coeff;
    }
    f.grad[total - 1] = -1.0;
    f
}

pub fn assemble_qcp(inst: &MiqpInstance, ctx: &RelaxContext, pool: &[DVector<f64>]) -> Result<QcpModel> {
    if pool.is_empty() {
        return Err(RelaxError::EmptyPool);
    }
    let n = inst.n();
    if let Some(bad) = pool.iter().find(|d| d.len() != n) {
        return Err(RelaxError::Dimension(format!("cut of length {}, n = {n}", bad.len())));
    }
    let k = ctx.dim();
    let ny = ctx.num_y();
    let total = k + ny + 1;
    let mut constraints = ctx.bound_constraints(inst, total);
    for (i, yv) in ctx.yvars.iter().enumerate() {
        let YVar::Free(j) = *yv else { continue };
        let h = &inst.hull[i];
        let zr = ctx.z_row(i, total);
        let xh = ctx.x_hat[i];
        // x_i² − y_i ≤ 0
        let mut grad = &zr * (2.0 * xh);
        grad[k + j] = -1.0;
        constraints.push(QuadFn {
            curvature: if k > 0 {
                Curvature::RankOne { scale: 1.0, dir: zr.clone() }
            } else {
                Curvature::Zero
            },
            grad,
            constant: xh * xh,
        });
        // y_i − u_i(x_i) ≤ 0
        let mut grad = -&zr * h.upper_slope;
        grad[k + j] = 1.0;
        constraints.push(QuadFn::linear(grad, -(h.upper_slope * xh + h.upper_intercept)));
    }
    let cut_offset = constraints.len();
    for d in pool {
        constraints.push(cut_constraint(inst, ctx, d, total));
    }

    let mut obj_grad = DVector::zeros(total);
    if k > 0 {
        obj_grad.rows_mut(0, k).copy_from(&ctx.basis.z.tr_mul(&inst.linear));
    }
    obj_grad[total - 1] = 1.0;
    let objective = QuadFn::linear(obj_grad, inst.linear.dot(&ctx.x_hat));

    let mut start = DVector::zeros(total);
    let x0 = &ctx.feasible_point;
    start.rows_mut(0, k).copy_from(&ctx.w_of(x0));
    for (i, yv) in ctx.yvars.iter().enumerate() {
        if let YVar::Free(j) = *yv {
            let h = &inst.hull[i];
            start[k + j] = 0.5 * (x0[i] * x0[i] + h.upper(x0[i]));
        }
    }
    let vmax = constraints[cut_offset..]
        .iter()
        .map(|c| c.value(&start))
        .fold(f64::NEG_INFINITY, f64::max);
    start[total - 1] = vmax + 1.0;

    Ok(QcpModel {
        program: ConvexProgram {
            dim: total,
            objective,
            constraints,
        },
        cut_offset,
        num_cuts: pool.len(),
        start,
        k,
    })
}

pub fn solve_qcp(inst: &MiqpInstance, ctx: &RelaxContext, model: &QcpModel) -> Result<RelaxationSolution> {
    let sol = accept(&model.program, &model.start).map_err(|s| not_converged(&s))?;
    let k = model.k;
    let w = sol.z.rows(0, k).into_owned();
    let yblock = sol.z.rows(k, ctx.num_y()).into_owned();
    let x = clamp_to_box(inst, &ctx.x_of(&w));
    let y = ctx.reconstruct_y(&x, &yblock);
    let cut_multipliers = sol
        .multipliers
        .rows(model.cut_offset, model.num_cuts)
        .into_owned();
    Ok(RelaxationSolution {
        x,
        y,
        v: Some(sol.z[sol.z.len() - 1]),
        bound: sol.lagrangian,
        objective: sol.objective,
        cut_multipliers,
        kkt_residual: sol.kkt_residual,
        infeasibility: sol.infeasibility,
        iterations: sol.iterations,
    })
}

/// `x̄ᵀ(Q + diag d)x̄ − dᵀȳ − v̄`; for solutions without `v̄` the objective
/// `x̄ᵀQx̄` is used in its place.
pub fn cut_violation(quad: &DMatrix<f64>, d: &DVector<f64>, sol: &RelaxationSolution) -> f64 {
    let x = &sol.x;
    let qx = x.dot(&(quad * x));
    let v = sol.v.unwrap_or(qx);
    let pert: f64 = (0..x.len()).map(|i| d[i] * (x[i] * x[i] - sol.y[i])).sum();
    qx + pert - v
}

pub fn is_violated(violation: f64, v: f64, tol: f64) -> bool {
    violation > tol * v.abs().max(1.0)
}

/// Perturbations of the relaxation with their latest multipliers.
#[derive(Debug, Clone)]
pub struct CutPool {
    pub cuts: Vec<DVector<f64>>,
    pub multipliers: DVector<f64>,
    pub alpha: f64,
}

/// `Σ ν_i d_i / Σ ν_i`, falling back to the cut with the largest multiplier
/// (or the first cut) when the multipliers vanish.
pub fn surrogate_root_perturbation(pool: &CutPool) -> Result<DVector<f64>> {
    let first = pool.cuts.first().ok_or(RelaxError::EmptyPool)?;
    let nu = &pool.multipliers;
    if nu.len() != pool.cuts.len() {
        return Ok(first.clone());
    }
    let total: f64 = nu.iter().map(|v| v.max(0.0)).sum();
    if total <= 1e-12 {
        let best = nu.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1));
        return Ok(match best {
            Some((i, &v)) if v > 0.0 => pool.cuts[i].clone(),
            _ => first.clone(),
        });
    }
    let mut d = DVector::zeros(first.len());
    for (cut, &w) in pool.cuts.iter().zip(nu.iter()) {
        d.axpy(w.max(0.0) / total, cut, 1.0);
    }
    Ok(d)
}

#[derive(Debug, Clone)]
pub struct CuttingSurfaceConfig {
    pub max_nc: usize,
    pub separation: SeparationConfig,
    pub violation_tol: f64,
    /// Overrides the scale-based starting `ρ`.
    pub rho_init: Option<f64>,
}

impl Default for CuttingSurfaceConfig {
    fn default() -> Self {
        Self {
            max_nc: 20,
            separation: SeparationConfig::default(),
            violation_tol: VIOLATION_TOL,
            rho_init: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CuttingSurfaceStop {
    /// The separated cut was not violated.
    NoViolation,
    IterationLimit,
    /// A separation or relaxation solve failed; the last valid bound is kept.
    SubproblemFailure,
}

#[derive(Debug, Clone)]
pub struct CuttingSurfaceResult {
    /// Best valid bound found.
    pub bound: f64,
    /// Bound of the single-cut relaxation.
    pub initial_bound: f64,
    /// Bound after each relaxation solve.
    pub history: Vec<f64>,
    pub pool: CutPool,
    /// Last accepted relaxation solution.
    pub solution: RelaxationSolution,
    pub separations: Vec<SeparationResult>,
    pub stop: CuttingSurfaceStop,
}

/// Alternate relaxation solves and separation, adding violated cuts to the pool.
pub fn cutting_surface(
    inst: &MiqpInstance,
    ctx: &RelaxContext,
    alpha: f64,
    config: &CuttingSurfaceConfig,
) -> Result<CuttingSurfaceResult> {
    let d0 = initial_perturbation(inst, ctx)?;
    let initial = solve_qp_child(inst, ctx, &d0)?;
    let initial_bound = initial.bound;
    let mut pool = CutPool {
        cuts: vec![d0],
        multipliers: DVector::from_element(1, 1.0),
        alpha,
    };

    let mut history = vec![initial_bound];
    let mut bound = initial_bound;
    let mut solution = match assemble_qcp(inst, ctx, &pool.cuts).and_then(|m| solve_qcp(inst, ctx, &m)) {
        Ok(s) => s,
        Err(e) => {
            warn!("initial QCP solve failed: {e}");
            return Ok(CuttingSurfaceResult {
                bound,
                initial_bound,
                history,
                pool,
                solution: initial,
                separations: Vec::new(),
                stop: CuttingSurfaceStop::SubproblemFailure,
            });
        }
    };
    pool.multipliers = solution.cut_multipliers.clone();
    history.push(solution.bound);
    bound = bound.max(solution.bound);

    let rho = match config.rho_init {
        Some(r) => r,
        None => separation::rho_init(&inst.quad, &inst.domains)?,
    };
    let mut separations = Vec::new();
    let mut stop = CuttingSurfaceStop::IterationLimit;
    for _ in 0..config.max_nc {
        let eta = solution.eta();
        let input = SeparationInput::new(inst.quad.clone(), inst.a.clone(), alpha, eta, rho)?;
        let sep = match separation::separate(&input, &config.separation) {
            Ok(s) => s,
            Err(e) => {
                warn!("separation failed: {e}");
                stop = CuttingSurfaceStop::SubproblemFailure;
                break;
            }
        };
        let d = sep.d.clone();
        separations.push(sep);
        let mut m = input.shifted_matrix();
        for i in 0..d.len() {
            m[(i, i)] += d[i];
        }
        if !linalg::psd_certificate(&m, 1e-8) {
            warn!("separated perturbation failed the PSD certificate; stopping");
            stop = CuttingSurfaceStop::SubproblemFailure;
            break;
        }
        let viol = cut_violation(&inst.quad, &d, &solution);
        if !is_violated(viol, solution.v.unwrap_or(0.0), config.violation_tol) {
            stop = CuttingSurfaceStop::NoViolation;
            break;
        }
        pool.cuts.push(d);
        match assemble_qcp(inst, ctx, &pool.cuts).and_then(|m| solve_qcp(inst, ctx, &m)) {
            Ok(s) => {
                history.push(s.bound);
                bound = bound.max(s.bound);
                pool.multipliers = s.cut_multipliers.clone();
                solution = s;
            }
            Err(e) => {
                warn!("QCP solve failed after adding a cut: {e}");
                pool.cuts.pop();
                stop = CuttingSurfaceStop::SubproblemFailure;
                break;
            }
        }
    }
    debug!(
        "cutting surface: {} cuts, bound {bound} (initial {initial_bound}), stop {stop:?}",
        pool.cuts.len()
    );
    Ok(CuttingSurfaceResult {
        bound,
        initial_bound,
        history,
        pool,
        solution,
        separations,
        stop,
    })
}
