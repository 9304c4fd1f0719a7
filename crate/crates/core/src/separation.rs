//! Regularized separation: find a diagonal perturbation `d` with
//! `Q + diag(d) + αAᵀA ⪰ 0` minimizing `ηᵀd` plus a regularizer.
//!
//! Two barrier coordinate-minimization solvers are provided:
//!
//! * [`solve_smooth`] minimizes `ηᵀd + ρ dᵀd` with an adaptive `ρ` that is
//!   increased (and the run restarted) whenever the iterates blow up.
//! * [`solve_nonsmooth`] minimizes `ηᵀd + λ Σ [d_i]₊` with `λ = Σ η_i`.
//!
//! Both keep `d̄` strictly inside the cone by minimizing
//! `G(d) − σ log det(Q + diag(d) + αAᵀA)` one coordinate at a time, with the
//! inverse of the barrier matrix maintained by Sherman–Morrison updates.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::{self, InverseState, LinalgError};
use crate::model::VariableDomain;

#[derive(Debug, Error)]
pub enum SeparationError {
    #[error("η_{index} = {value:e} is below −1e-10; relaxation solution is inconsistent")]
    InconsistentEta { index: usize, value: f64 },
    #[error("Q + αAᵀA is positive semidefinite (λ_min = {lambda_min:e}); separation is not needed")]
    NotIndefinite { lambda_min: f64 },
    #[error("all variables are fixed (δ_max = 0)")]
    AllFixed,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, SeparationError>;

const ETA_TOL: f64 = 1e-10;

/// `η_i = ȳ_i − x̄_i²`, with tiny negatives clamped to zero.
pub fn eta_from_relaxation(x: &DVector<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != y.len() {
        return Err(SeparationError::Dimension(format!(
            "x has length {}, y has length {}",
            x.len(),
            y.len()
        )));
    }
    let mut eta = DVector::zeros(x.len());
    for i in 0..x.len() {
        let value = y[i] - x[i] * x[i];
        if value < -ETA_TOL {
            return Err(SeparationError::InconsistentEta { index: i, value });
        }
        eta[i] = value.max(0.0);
    }
    Ok(eta)
}

/// Initial smooth regularization weight
/// `1e-4 · 10^(4⌊log₁₀ δ_max⌋) / max(1, ⌊Q_max/100⌋ · Q_max)`.
pub fn rho_init(quad: &DMatrix<f64>, domains: &[VariableDomain]) -> Result<f64> {
    let n = quad.nrows();
    let mut q_max = 0.0_f64;
    for j in 0..n {
        for i in 0..=j {
            q_max = q_max.max(quad[(i, j)].abs());
        }
    }
    let delta_max = domains.iter().map(|d| d.width()).fold(0.0, f64::max);
    if !(delta_max > 0.0) {
        return Err(SeparationError::AllFixed);
    }
    Ok(rho_from_scales(q_max, delta_max))
}

pub fn rho_from_scales(q_max: f64, delta_max: f64) -> f64 {
    let numerator = 10f64.powf(4.0 * delta_max.log10().floor());
    let denominator = ((q_max / 100.0).floor() * q_max).max(1.0);
    1e-4 * numerator / denominator
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeparationMode {
    Smooth,
    Nonsmooth,
}

impl std::str::FromStr for SeparationMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "smooth" => Ok(Self::Smooth),
            "nonsmooth" => Ok(Self::Nonsmooth),
            other => Err(format!("unknown separation mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SeparationConfig {
    /// `MaxIter = max_iter_factor · n`.
    pub max_iter_factor: usize,
    pub sigma_min: f64,
    pub sigma_upd: f64,
    pub eps_upd: f64,
    pub omega_check: usize,
    pub eps_check: f64,
    pub rho_upd: f64,
    /// Restart when `max |d̄_j| > restart_factor · μ`.
    pub restart_factor: f64,
    pub max_restarts: usize,
    pub mode: SeparationMode,
    pub trace: bool,
}

impl Default for SeparationConfig {
    fn default() -> Self {
        Self {
            max_iter_factor: 500,
            sigma_min: 1e-5,
            sigma_upd: 0.8,
            eps_upd: 0.03,
            omega_check: 10,
            eps_check: 1e-4,
            rho_upd: 10.0,
            restart_factor: 10.0,
            max_restarts: 12,
            mode: SeparationMode::Smooth,
            trace: false,
        }
    }
}

impl SeparationConfig {
    pub fn with_mode(mode: SeparationMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }
}

/// Data of one separation problem.
#[derive(Debug, Clone)]
pub struct SeparationInput {
    pub quad: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub alpha: f64,
    pub eta: DVector<f64>,
    /// Starting `ρ` of the smooth solver (ignored by the nonsmooth one).
    pub rho_init: f64,
}

impl SeparationInput {
    pub fn new(
        quad: DMatrix<f64>,
        a: DMatrix<f64>,
        alpha: f64,
        eta: DVector<f64>,
        rho_init: f64,
    ) -> Result<Self> {
        let n = quad.nrows();
        if quad.ncols() != n || a.ncols() != n || eta.len() != n {
            return Err(SeparationError::Dimension(format!(
                "Q {:?}, A {:?}, η {}",
                quad.shape(),
                a.shape(),
                eta.len()
            )));
        }
        let mut eta = eta;
        for (i, v) in eta.iter_mut().enumerate() {
            if *v < -ETA_TOL {
                return Err(SeparationError::InconsistentEta { index: i, value: *v });
            }
            *v = v.max(0.0);
        }
        Ok(Self {
            quad,
            a,
            alpha,
            eta,
            rho_init,
        })
    }

    /// `Q + αAᵀA`.
    pub fn shifted_matrix(&self) -> DMatrix<f64> {
        if self.a.nrows() == 0 || self.alpha == 0.0 {
            self.quad.clone()
        } else {
            &self.quad + self.a.tr_mul(&self.a) * self.alpha
        }
    }
}

/// Quantities of the closed-form smooth coordinate step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepQuantities {
    pub phi: f64,
    pub tau: f64,
    pub kappa: f64,
}

impl StepQuantities {
    pub fn new(v_ii: f64, eta_i: f64, rho: f64, d_i: f64, sigma: f64) -> Self {
        Self {
            phi: 1.0 / (2.0 * v_ii),
            tau: (eta_i + 2.0 * rho * d_i) / (4.0 * rho),
            kappa: sigma / (2.0 * rho),
        }
    }

    /// Feasible root `−(φ+τ) + √((φ−τ)² + κ)`, evaluated without cancellation.
    pub fn step(&self) -> f64 {
        let Self { phi, tau, kappa } = *self;
        let root = ((phi - tau).powi(2) + kappa).sqrt();
        let b = phi + tau;
        if b > 0.0 {
            // product of the two roots is 4φτ − κ
            (kappa - 4.0 * phi * tau) / (b + root)
        } else {
            -b + root
        }
    }
}

/// Minimizer of `g_i(d̄_i + Δ) − σ log(1 + Δ V_ii)` for `g_i(t) = η_i t + ρ t²`.
pub fn coordinate_step_smooth(v_ii: f64, eta_i: f64, rho: f64, d_i: f64, sigma: f64) -> f64 {
    StepQuantities::new(v_ii, eta_i, rho, d_i, sigma).step()
}

/// Minimizer of `r_i(d̄_i + Δ) − σ log(1 + Δ V_ii)` with the piecewise linear
/// `r_i(t) = β_i t` for `t > 0` and `η_i t` otherwise.
pub fn coordinate_step_nonsmooth(v_ii: f64, eta_i: f64, beta_i: f64, d_i: f64, sigma: f64) -> f64 {
    let inv_v = 1.0 / v_ii;
    let denom = 1.0 - d_i * v_ii;
    if denom <= 0.0 {
        return sigma / beta_i - inv_v;
    }
    // barrier slope at the kink t = 0
    let slope = sigma * v_ii / denom;
    if slope > beta_i {
        sigma / beta_i - inv_v
    } else if slope >= eta_i {
        -d_i
    } else {
        sigma / eta_i - inv_v
    }
}

/// True iff `max_j |d̄_j| > factor · μ`.
pub fn check_restart(d: &DVector<f64>, mu: f64, factor: f64) -> bool {
    d.amax() > factor * mu
}

/// `σ ← max(σ_min, σ_upd σ)` when the optimality ratio is at most `ε_upd`.
pub fn update_sigma(sigma: f64, ratio: f64, config: &SeparationConfig) -> f64 {
    if ratio <= config.eps_upd {
        config.sigma_min.max(config.sigma_upd * sigma)
    } else {
        sigma
    }
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Mutable state of one barrier coordinate-minimization run.
#[derive(Debug, Clone)]
pub struct SeparationState {
    pub mode: SeparationMode,
    pub eta: DVector<f64>,
    /// `β = η + λ𝟙` (nonsmooth mode).
    pub beta: DVector<f64>,
    pub lambda: f64,
    pub rho: f64,
    pub sigma: f64,
    pub d: DVector<f64>,
    pub inverse: InverseState,
    /// `μ = −λ_min(Q + αAᵀA)`.
    pub mu: f64,
    pub iteration: usize,
}

impl SeparationState {
    /// Start from `d̂ = 1.5 μ 𝟙` with `σ = σ_init`.
    pub fn initialize(
        shifted: &DMatrix<f64>,
        mu: f64,
        eta: &DVector<f64>,
        mode: SeparationMode,
        rho: f64,
    ) -> Result<Self> {
        let n = eta.len();
        let d = DVector::from_element(n, 1.5 * mu);
        let mut m = shifted.clone();
        for i in 0..n {
            m[(i, i)] += d[i];
        }
        let inverse = InverseState::factor(m)?;
        let lambda = eta.sum();
        let beta = eta.add_scalar(lambda);
        let mut state = Self {
            mode,
            eta: eta.clone(),
            beta,
            lambda,
            rho,
            sigma: 0.0,
            d,
            inverse,
            mu,
            iteration: 0,
        };
        state.sigma = state.sigma_init();
        Ok(state)
    }

    /// Median over `i` of `|∇G_i(d̂)/V_ii|` (smooth) or `|β_i/V_ii|` (nonsmooth).
    pub fn sigma_init(&self) -> f64 {
        let n = self.eta.len();
        let ratios = (0..n)
            .map(|i| {
                let u = match self.mode {
                    SeparationMode::Smooth => self.eta[i] + 2.0 * self.rho * self.d[i],
                    SeparationMode::Nonsmooth => self.subgradient_of_regularizer(i).1,
                };
                (u / self.inverse.diag(i)).abs()
            })
            .collect();
        median(ratios)
    }

    /// Subdifferential `[lo, hi]` of `r_i` at `d̄_i`.
    fn subgradient_of_regularizer(&self, i: usize) -> (f64, f64) {
        let di = self.d[i];
        if di > 0.0 {
            (self.beta[i], self.beta[i])
        } else if di < 0.0 {
            (self.eta[i], self.eta[i])
        } else {
            (self.eta[i], self.beta[i])
        }
    }

    /// `∇f(d̄; σ)` in smooth mode, the min-norm subgradient `s(d̄)` otherwise.
    pub fn gradient(&self) -> DVector<f64> {
        let n = self.eta.len();
        DVector::from_iterator(
            n,
            (0..n).map(|i| {
                let barrier = self.sigma * self.inverse.diag(i);
                match self.mode {
                    SeparationMode::Smooth => self.eta[i] + 2.0 * self.rho * self.d[i] - barrier,
                    SeparationMode::Nonsmooth => {
                        let (lo, hi) = self.subgradient_of_regularizer(i);
                        // project 0 onto [lo − σV_ii, hi − σV_ii]
                        0.0_f64.clamp(lo - barrier, hi - barrier)
                    }
                }
            }),
        )
    }

    /// Index of the largest-magnitude gradient entry (lowest index on ties).
    pub fn select_index(&self) -> usize {
        argmax_abs(&self.gradient())
    }

    pub fn step_length(&self, i: usize) -> f64 {
        let v_ii = self.inverse.diag(i);
        match self.mode {
            SeparationMode::Smooth => {
                coordinate_step_smooth(v_ii, self.eta[i], self.rho, self.d[i], self.sigma)
            }
            SeparationMode::Nonsmooth => {
                coordinate_step_nonsmooth(v_ii, self.eta[i], self.beta[i], self.d[i], self.sigma)
            }
        }
    }

    pub fn apply_step(&mut self, i: usize, delta: f64) -> Result<()> {
        self.inverse.sherman_morrison_update(i, delta)?;
        self.d[i] += delta;
        Ok(())
    }

    /// Objective of the regularized separation problem.
    pub fn regularized_objective(&self) -> f64 {
        regularized_objective(self.mode, &self.eta, self.rho, self.lambda, &self.d)
    }

    /// Barrier-penalized objective; factorizes the barrier matrix.
    pub fn penalized_objective(&self) -> Result<f64> {
        let log_det = linalg::log_det_pd(self.inverse.matrix())?;
        Ok(self.regularized_objective() - self.sigma * log_det)
    }

    /// Scale used by the σ schedule: `‖η‖₂` (smooth) or `‖β‖₂` (nonsmooth).
    fn optimality_scale(&self) -> f64 {
        match self.mode {
            SeparationMode::Smooth => self.eta.norm(),
            SeparationMode::Nonsmooth => self.beta.norm(),
        }
    }
}

fn regularized_objective(
    mode: SeparationMode,
    eta: &DVector<f64>,
    rho: f64,
    lambda: f64,
    d: &DVector<f64>,
) -> f64 {
    match mode {
        SeparationMode::Smooth => eta.dot(d) + rho * d.norm_squared(),
        SeparationMode::Nonsmooth => eta.dot(d) + lambda * d.iter().map(|v| v.max(0.0)).sum::<f64>(),
    }
}

fn argmax_abs(v: &DVector<f64>) -> usize {
    let mut best = 0;
    let mut best_val = -1.0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > best_val {
            best = i;
            best_val = x.abs();
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeparationStatus {
    /// Progress test fired.
    Converged,
    MaxIterations,
    /// `η = 0`: the relaxation is already exact; `d̂` is returned.
    ExactRelaxation,
    /// The `ρ` escalation cap was hit.
    RestartLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub index: usize,
    pub delta: f64,
    pub sigma: f64,
    pub rho: f64,
    pub objective: f64,
}

pub fn write_trace_csv<W: Write>(records: &[TraceRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "iteration,index,delta,sigma,rho,objective")?;
    for r in records {
        writeln!(
            out,
            "{},{},{:e},{:e},{:e},{:e}",
            r.iteration, r.index, r.delta, r.sigma, r.rho, r.objective
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SeparationResult {
    pub d: DVector<f64>,
    /// Iterations summed over all restarts.
    pub iterations: usize,
    pub sigma: f64,
    /// Final `ρ` (smooth mode).
    pub rho: Option<f64>,
    /// `λ` (nonsmooth mode).
    pub lambda: Option<f64>,
    pub restarts: usize,
    pub objective: f64,
    pub status: SeparationStatus,
    pub trace: Vec<TraceRecord>,
}

pub fn solve_smooth(input: &SeparationInput, config: &SeparationConfig) -> Result<SeparationResult> {
    solve(input, config, SeparationMode::Smooth)
}

pub fn solve_nonsmooth(
    input: &SeparationInput,
    config: &SeparationConfig,
) -> Result<SeparationResult> {
    solve(input, config, SeparationMode::Nonsmooth)
}

/// Dispatch on `config.mode`.
pub fn separate(input: &SeparationInput, config: &SeparationConfig) -> Result<SeparationResult> {
    solve(input, config, config.mode)
}

fn solve(
    input: &SeparationInput,
    config: &SeparationConfig,
    mode: SeparationMode,
) -> Result<SeparationResult> {
    let n = input.eta.len();
    let shifted = input.shifted_matrix();
    let lambda_min = linalg::min_eigenvalue(&shifted)?;
    if lambda_min >= 0.0 {
        return Err(SeparationError::NotIndefinite { lambda_min });
    }
    let mu = -lambda_min;
    let max_iter = config.max_iter_factor * n;
    let check_every = (config.omega_check * n).max(1);

    let mut rho = input.rho_init;
    let mut restarts = 0;
    let mut total_iterations = 0;
    let mut trace = Vec::new();

    'restart: loop {
        let mut state = SeparationState::initialize(&shifted, mu, &input.eta, mode, rho)?;
        let finish = |state: &SeparationState, status, iterations, restarts, trace| SeparationResult {
            d: state.d.clone(),
            iterations,
            sigma: state.sigma,
            rho: (mode == SeparationMode::Smooth).then_some(state.rho),
            lambda: (mode == SeparationMode::Nonsmooth).then_some(state.lambda),
            restarts,
            objective: state.regularized_objective(),
            status,
            trace,
        };
        let scale = state.optimality_scale();
        if input.eta.iter().all(|&v| v == 0.0) || scale == 0.0 {
            return Ok(finish(
                &state,
                SeparationStatus::ExactRelaxation,
                total_iterations,
                restarts,
                trace,
            ));
        }

        let mut last_check = state.regularized_objective();
        let mut gradient = state.gradient();
        while state.iteration < max_iter {
            state.iteration += 1;
            total_iterations += 1;
            let i = argmax_abs(&gradient);
            let delta = state.step_length(i);

            if mode == SeparationMode::Smooth {
                let new_di = state.d[i] + delta;
                let d_max = state.d.amax().max(new_di.abs());
                if d_max > config.restart_factor * mu {
                    if restarts >= config.max_restarts {
                        log::debug!("separation: restart limit reached with ρ = {rho:e}");
                        return Ok(finish(
                            &state,
                            SeparationStatus::RestartLimit,
                            total_iterations,
                            restarts,
                            trace,
                        ));
                    }
                    rho *= config.rho_upd;
                    restarts += 1;
                    continue 'restart;
                }
            }

            if let Err(e) = state.apply_step(i, delta) {
                // numerical loss of definiteness: rebuild V and retry once
                state.inverse.refactor()?;
                state.apply_step(i, delta).map_err(|_| e)?;
            }

            gradient = state.gradient();
            let ratio = gradient.norm() / scale;
            let new_sigma = update_sigma(state.sigma, ratio, config);
            if new_sigma != state.sigma {
                state.sigma = new_sigma;
                gradient = state.gradient();
            }

            if config.trace {
                trace.push(TraceRecord {
                    iteration: total_iterations,
                    index: i,
                    delta,
                    sigma: state.sigma,
                    rho: state.rho,
                    objective: state.regularized_objective(),
                });
            }

            if state.iteration % check_every == 0 {
                let objective = state.regularized_objective();
                let improvement = (last_check - objective).abs();
                if improvement < config.eps_check * last_check.abs().max(1e-12) {
                    return Ok(finish(
                        &state,
                        SeparationStatus::Converged,
                        total_iterations,
                        restarts,
                        trace,
                    ));
                }
                last_check = objective;
            }
        }
        return Ok(finish(
            &state,
            SeparationStatus::MaxIterations,
            total_iterations,
            restarts,
            trace,
        ));
    }
}
