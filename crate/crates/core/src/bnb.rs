//! Best-first branch-and-bound.
//!
//! The root is bounded by the cutting-surface relaxation. Children solve a
//! single perturbed QP with the perturbation inherited from their parent,
//! then try one separation round and keep whichever bound is higher.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use log::{debug, info};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::model::{DomainKind, MiqpInstance, ModelError, VariableDomain};
use crate::relax::{
    self, CuttingSurfaceConfig, RelaxContext, RelaxError, RelaxationSolution,
};
use crate::separation::{self, SeparationConfig, SeparationInput, SeparationMode};

#[derive(Debug, Error)]
pub enum BnbError {
    #[error("enumeration needs {0} points, above the limit of 2^20")]
    TooLarge(f64),
    #[error("continuous variables are only enumerated without equalities and for n ≤ 4")]
    ContinuousUnsupported,
    #[error(transparent)]
    Relax(#[from] RelaxError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, BnbError>;

const ETA_BRANCH_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct BnbConfig {
    pub time_limit: Option<Duration>,
    /// Relative gap, as a fraction.
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_nc: usize,
    pub mode: SeparationMode,
    pub max_nodes: usize,
    /// Keep the boxes of pruned nodes in the report.
    pub record_pruned: bool,
}

impl Default for BnbConfig {
    fn default() -> Self {
        Self {
            time_limit: None,
            rel_tol: 1e-6,
            abs_tol: 1e-6,
            max_nc: 20,
            mode: SeparationMode::Smooth,
            max_nodes: 200_000,
            record_pruned: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    TimeLimit,
    NodeLimit,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::Optimal => "optimal",
            Self::Infeasible => "infeasible",
            Self::TimeLimit => "time_limit",
            Self::NodeLimit => "node_limit",
        };
        f.write_str(s)
    }
}

/// Box of a node discarded by bound or infeasibility.
#[derive(Debug, Clone)]
pub struct PrunedNode {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub lb: f64,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub best_point: Option<DVector<f64>>,
    /// Percent.
    pub relative_gap: f64,
    pub nodes: usize,
    pub max_open_nodes: usize,
    pub wall_time: Duration,
    pub status: SolveStatus,
    pub root_bound: f64,
    pub root_initial_bound: f64,
    pub qp_children: bool,
    pub pruned: Vec<PrunedNode>,
}

/// `100 (UBD − LBD) / max(|LBD|, 1e-3)`.
pub fn relative_gap(lbd: f64, ubd: f64) -> f64 {
    100.0 * (ubd - lbd) / lbd.abs().max(1e-3)
}

#[derive(Debug, Clone)]
pub struct Node {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    /// Perturbation inherited from the parent, in original indices.
    pub d_parent: DVector<f64>,
    pub lb: f64,
    pub depth: usize,
}

/// Node restricted to its free variables.
#[derive(Debug, Clone)]
pub struct Subproblem {
    pub instance: MiqpInstance,
    pub offset: f64,
    pub free: Vec<usize>,
    /// Values of all variables, meaningful at fixed positions.
    pub fixed_values: DVector<f64>,
}

impl Subproblem {
    pub fn lift(&self, x_free: &DVector<f64>) -> DVector<f64> {
        let mut x = self.fixed_values.clone();
        for (k, &i) in self.free.iter().enumerate() {
            x[i] = x_free[k];
        }
        x
    }
}

fn node_domain(orig: &VariableDomain, lo: f64, hi: f64) -> VariableDomain {
    match orig.kind {
        DomainKind::Interval => VariableDomain::interval(lo, hi),
        DomainKind::IntegerRange => VariableDomain::integer_range(lo, hi),
        DomainKind::Binary | DomainKind::TwoPoint => *orig,
    }
}

/// Substitute fixed variables; `Err(Infeasible)` when the reduced equalities are inconsistent.
pub fn reduce(inst: &MiqpInstance, lower: &DVector<f64>, upper: &DVector<f64>) -> std::result::Result<Subproblem, ModelError> {
    let n = inst.n();
    let fixed: Vec<bool> = (0..n).map(|i| upper[i] - lower[i] <= 1e-12).collect();
    let free: Vec<usize> = (0..n).filter(|&i| !fixed[i]).collect();
    let fixed_idx: Vec<usize> = (0..n).filter(|&i| fixed[i]).collect();
    let mut fixed_values = DVector::zeros(n);
    for &i in &fixed_idx {
        fixed_values[i] = lower[i];
    }
    let xf = fixed_values.select_rows(fixed_idx.iter());
    let q_ff = inst.quad.select_rows(free.iter()).select_columns(free.iter());
    let q_fx = inst.quad.select_rows(free.iter()).select_columns(fixed_idx.iter());
    let q_xx = inst.quad.select_rows(fixed_idx.iter()).select_columns(fixed_idx.iter());
    let q_f = inst.linear.select_rows(free.iter());
    let q_x = inst.linear.select_rows(fixed_idx.iter());
    let linear = q_f + (&q_fx * &xf) * 2.0;
    let offset = xf.dot(&(&q_xx * &xf)) + q_x.dot(&xf);

    let a_f = inst.a.select_columns(free.iter());
    let b = &inst.b - inst.a.select_columns(fixed_idx.iter()) * &xf;
    // drop rows with no free support after checking them
    let scale = 1.0 + inst.b.amax();
    let mut keep = Vec::new();
    for r in 0..a_f.nrows() {
        if a_f.row(r).amax() <= 1e-14 {
            if b[r].abs() > 1e-9 * scale {
                return Err(ModelError::Infeasible(format!("equality row {r} violated by fixings")));
            }
        } else {
            keep.push(r);
        }
    }
    let a_f = a_f.select_rows(keep.iter());
    let b = b.select_rows(keep.iter());
    let domains = free
        .iter()
        .map(|&i| node_domain(&inst.domains[i], lower[i], upper[i]))
        .collect();
    let instance = MiqpInstance::new(q_ff, linear, a_f, b, domains)?;
    Ok(Subproblem {
        instance,
        offset,
        free,
        fixed_values,
    })
}

/// Outcome of bounding one node.
#[derive(Debug, Clone)]
pub struct NodeBound {
    pub lb: f64,
    /// Perturbation to pass to the children (original indices).
    pub d_pass: DVector<f64>,
    /// Relaxation point `(x, y)` in original indices.
    pub point: Option<(DVector<f64>, DVector<f64>)>,
    /// The second QP (with the separated perturbation) was solved.
    pub resolved: bool,
}

/// Shared data for bounding nodes.
#[derive(Debug, Clone)]
pub struct BoundingSetup {
    pub alpha: f64,
    pub qp_children: bool,
    pub separation: SeparationConfig,
}

/// Bound a node: QP with `d_parent`, one separation round, and a second QP
/// when the separated cut is violated by the first solution.
pub fn bound_node(
    inst: &MiqpInstance,
    node: &Node,
    setup: &BoundingSetup,
) -> std::result::Result<NodeBound, RelaxError> {
    let sub = reduce(inst, &node.lower, &node.upper)
        .map_err(|e| RelaxError::Infeasible(e.to_string()))?;
    let n = inst.n();
    if sub.free.is_empty() {
        let x = sub.fixed_values.clone();
        if inst.m() > 0 && (&inst.a * &x - &inst.b).amax() > 1e-9 * (1.0 + inst.b.amax()) {
            return Err(RelaxError::Infeasible("fixed point violates Ax = b".into()));
        }
        let y = x.map(|v| v * v);
        return Ok(NodeBound {
            lb: inst.evaluate_objective(&x),
            d_pass: node.d_parent.clone(),
            point: Some((x, y)),
            resolved: false,
        });
    }
    let s = &sub.instance;
    let ctx = RelaxContext::new(s)?;
    let lift = |sol: &RelaxationSolution| {
        let x = sub.lift(&sol.x);
        let mut y = x.map(|v| v * v);
        for (k, &i) in sub.free.iter().enumerate() {
            y[i] = sol.y[k];
        }
        (x, y)
    };
    let restrict = |d: &DVector<f64>| d.select_rows(sub.free.iter());
    let expand = |d_free: &DVector<f64>| {
        let mut d = node.d_parent.clone();
        for (k, &i) in sub.free.iter().enumerate() {
            d[i] = d_free[k];
        }
        d
    };

    if relax::is_convex(s, &ctx)? {
        let sol = relax::solve_qp_child(s, &ctx, &DVector::zeros(s.n()))?;
        return Ok(NodeBound {
            lb: sol.bound + sub.offset,
            d_pass: node.d_parent.clone(),
            point: Some(lift(&sol)),
            resolved: false,
        });
    }

    let d_first = if setup.qp_children {
        restrict(&node.d_parent)
    } else {
        relax::initial_perturbation(s, &ctx)?
    };
    let first = relax::solve_qp_child(s, &ctx, &d_first)?;
    let mut best = NodeBound {
        lb: first.bound + sub.offset,
        d_pass: if setup.qp_children { node.d_parent.clone() } else { expand(&d_first) },
        point: Some(lift(&first)),
        resolved: false,
    };
    if !setup.qp_children {
        return Ok(best);
    }

    let eta = first.eta();
    if eta.iter().all(|&e| e <= ETA_BRANCH_TOL) {
        return Ok(best);
    }
    let rho = separation::rho_init(&s.quad, &s.domains)?;
    let input = SeparationInput::new(s.quad.clone(), s.a.clone(), setup.alpha, eta, rho)?;
    let sep = match separation::solve_smooth(&input, &setup.separation) {
        Ok(r) => r,
        Err(e) => {
            debug!("node separation failed: {e}");
            return Ok(best);
        }
    };
    let mut m = input.shifted_matrix();
    for i in 0..s.n() {
        m[(i, i)] += sep.d[i];
    }
    if !crate::linalg::psd_certificate(&m, 1e-8) {
        return Ok(best);
    }
    let viol = relax::cut_violation(&s.quad, &sep.d, &first);
    if !relax::is_violated(viol, first.v.unwrap_or(0.0), relax::VIOLATION_TOL) {
        return Ok(best);
    }
    match relax::solve_qp_child(s, &ctx, &sep.d) {
        Ok(second) if second.bound + sub.offset > best.lb => {
            best = NodeBound {
                lb: second.bound + sub.offset,
                d_pass: expand(&sep.d),
                point: Some(lift(&second)),
                resolved: true,
            };
        }
        Ok(_) => best.resolved = true,
        Err(e) => debug!("second node QP failed: {e}"),
    }
    debug_assert_eq!(best.d_pass.len(), n);
    Ok(best)
}

/// A branching decision on one variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Branching {
    pub index: usize,
    /// `(lower, upper)` boxes of the children for that variable.
    pub children: Vec<(f64, f64)>,
}

/// Children boxes for variable `i` of `inst` in the node box, split near `xi`.
pub fn split_variable(dom: &VariableDomain, lo: f64, hi: f64, xi: f64) -> Vec<(f64, f64)> {
    match dom.kind {
        DomainKind::Binary | DomainKind::TwoPoint => vec![(dom.lower, dom.lower), (dom.upper, dom.upper)],
        DomainKind::IntegerRange => {
            let s = xi.floor().clamp(lo, hi - 1.0);
            vec![(lo, s), (s + 1.0, hi)]
        }
        DomainKind::Interval => {
            let w = hi - lo;
            let s = xi.clamp(lo + 0.1 * w, hi - 0.1 * w);
            vec![(lo, s), (s, hi)]
        }
    }
}

/// Pick the free variable with the largest `η_i = y_i − x_i²` (lowest index on
/// ties); fall back to the most fractional integer variable. `None` means the
/// relaxation point is feasible.
pub fn branch(
    inst: &MiqpInstance,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> Option<Branching> {
    let n = inst.n();
    let free = |i: usize| upper[i] - lower[i] > 1e-12;
    let mut best: Option<(usize, f64)> = None;
    for i in (0..n).filter(|&i| free(i)) {
        let eta = y[i] - x[i] * x[i];
        if eta > ETA_BRANCH_TOL && best.map_or(true, |(_, b)| eta > b) {
            best = Some((i, eta));
        }
    }
    if best.is_none() {
        for i in (0..n).filter(|&i| free(i)) {
            let dom = &inst.domains[i];
            let frac = match dom.kind {
                DomainKind::IntegerRange => (x[i] - x[i].round()).abs(),
                DomainKind::Binary | DomainKind::TwoPoint => {
                    (x[i] - dom.lower).abs().min((x[i] - dom.upper).abs())
                }
                DomainKind::Interval => 0.0,
            };
            if frac > FEAS_TOL && best.map_or(true, |(_, b)| frac > b) {
                best = Some((i, frac));
            }
        }
    }
    let (i, _) = best?;
    Some(Branching {
        index: i,
        children: split_variable(&inst.domains[i], lower[i], upper[i], x[i]),
    })
}

struct Open {
    lb: f64,
    seq: usize,
    node: Node,
}

impl PartialEq for Open {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Open {}
impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Open {
    // max-heap: smallest bound first, then oldest
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .lb
            .total_cmp(&self.lb)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

struct Incumbent {
    value: f64,
    x: Option<DVector<f64>>,
}

impl Incumbent {
    fn offer(&mut self, inst: &MiqpInstance, x: &DVector<f64>) {
        if !inst.is_feasible(x, FEAS_TOL) {
            return;
        }
        let v = inst.evaluate_objective(x);
        if v < self.value {
            self.value = v;
            self.x = Some(x.clone());
        }
    }
}

/// Round discrete entries, then re-solve the equalities for a set of basic
/// variables chosen among the least settled entries.
fn heuristic_points(inst: &MiqpInstance, lower: &DVector<f64>, upper: &DVector<f64>, x: &DVector<f64>) -> Vec<DVector<f64>> {
    let n = inst.n();
    let snap = |x: &DVector<f64>| {
        DVector::from_iterator(
            n,
            (0..n).map(|i| node_domain(&inst.domains[i], lower[i], upper[i]).project(x[i].clamp(lower[i], upper[i]))),
        )
    };
    let rounded = snap(x);
    let mut out = vec![rounded.clone()];
    let m = inst.m();
    if m == 0 || inst.is_feasible(&rounded, FEAS_TOL) {
        return out;
    }
    // candidates ordered by distance to their rounded value, continuous first
    let mut order: Vec<usize> = (0..n).filter(|&i| upper[i] - lower[i] > 1e-12).collect();
    order.sort_by(|&a, &b| {
        let key = |i: usize| {
            let cont = inst.domains[i].kind == DomainKind::Interval;
            (!cont, -(x[i] - rounded[i]).abs())
        };
        let (ca, da) = key(a);
        let (cb, db) = key(b);
        ca.cmp(&cb).then(da.total_cmp(&db))
    });
    let mut basic = Vec::new();
    for &i in &order {
        let mut trial = basic.clone();
        trial.push(i);
        let sub = inst.a.select_columns(trial.iter());
        if sub.clone().svd(false, false).singular_values.iter().filter(|&&s| s > 1e-9).count() == trial.len() {
            basic = trial;
        }
        if basic.len() == m {
            break;
        }
    }
    if basic.len() != m {
        return out;
    }
    let ab: DMatrix<f64> = inst.a.select_columns(basic.iter());
    let mut rhs = inst.b.clone();
    for i in 0..n {
        if !basic.contains(&i) {
            rhs -= inst.a.column(i) * rounded[i];
        }
    }
    if let Some(sol) = ab.lu().solve(&rhs) {
        let mut cand = rounded.clone();
        for (k, &i) in basic.iter().enumerate() {
            cand[i] = sol[k];
        }
        out.push(cand.clone());
        out.push(snap(&cand));
    }
    out
}

pub fn solve(inst: &MiqpInstance, config: &BnbConfig) -> SolveReport {
    let start = Instant::now();
    let n = inst.n();
    let mut report = SolveReport {
        lower_bound: f64::NEG_INFINITY,
        upper_bound: f64::INFINITY,
        best_point: None,
        relative_gap: f64::INFINITY,
        nodes: 0,
        max_open_nodes: 0,
        wall_time: Duration::ZERO,
        status: SolveStatus::Optimal,
        root_bound: f64::NEG_INFINITY,
        root_initial_bound: f64::NEG_INFINITY,
        qp_children: false,
        pruned: Vec::new(),
    };
    let finish = |mut r: SolveReport, inc: Incumbent| {
        r.upper_bound = inc.value;
        r.best_point = inc.x;
        if r.status == SolveStatus::Infeasible {
            r.lower_bound = f64::INFINITY;
        }
        r.relative_gap = if r.upper_bound.is_finite() && r.lower_bound.is_finite() {
            relative_gap(r.lower_bound, r.upper_bound).max(0.0)
        } else {
            f64::INFINITY
        };
        r.wall_time = start.elapsed();
        info!(
            "bnb: status {}, LBD {}, UBD {}, nodes {}",
            r.status, r.lower_bound, r.upper_bound, r.nodes
        );
        r
    };
    let mut inc = Incumbent {
        value: f64::INFINITY,
        x: None,
    };

    let lower0 = inst.lower_bounds();
    let upper0 = inst.upper_bounds();

    // root
    let root_ctx = match RelaxContext::new(inst) {
        Ok(c) => c,
        Err(RelaxError::Infeasible(msg)) => {
            debug!("root infeasible: {msg}");
            report.status = SolveStatus::Infeasible;
            return finish(report, inc);
        }
        Err(e) => {
            debug!("root context failed: {e}");
            report.status = SolveStatus::Infeasible;
            return finish(report, inc);
        }
    };
    let alpha = relax::select_alpha(inst).map(|a| a.alpha).unwrap_or(0.0);
    let sep_cfg = SeparationConfig::with_mode(config.mode);
    let convex_root = relax::is_convex(inst, &root_ctx).unwrap_or(false);
    let (root_lb, d_root, root_point, qp_children) = if convex_root {
        match relax::solve_qp_child(inst, &root_ctx, &DVector::zeros(n)) {
            Ok(sol) => (sol.bound, DVector::zeros(n), Some((sol.x, sol.y)), false),
            Err(_) => (f64::NEG_INFINITY, DVector::zeros(n), None, false),
        }
    } else {
        let cs_cfg = CuttingSurfaceConfig {
            max_nc: config.max_nc,
            separation: sep_cfg.clone(),
            ..Default::default()
        };
        match relax::cutting_surface(inst, &root_ctx, alpha, &cs_cfg) {
            Ok(cs) => {
                report.root_initial_bound = cs.initial_bound;
                let enabled = cs.bound > cs.initial_bound + 1e-9 * cs.initial_bound.abs().max(1.0);
                let d = relax::surrogate_root_perturbation(&cs.pool)
                    .unwrap_or_else(|_| cs.pool.cuts[0].clone());
                (cs.bound, d, Some((cs.solution.x, cs.solution.y)), enabled)
            }
            Err(e) => {
                debug!("root relaxation failed: {e}");
                let d = relax::initial_perturbation(inst, &root_ctx).unwrap_or_else(|_| DVector::zeros(n));
                (f64::NEG_INFINITY, d, None, false)
            }
        }
    };
    report.root_bound = root_lb;
    if convex_root {
        report.root_initial_bound = root_lb;
    }
    report.qp_children = qp_children;
    let setup = BoundingSetup {
        alpha,
        qp_children,
        separation: SeparationConfig::default(),
    };

    let root = Node {
        lower: lower0.clone(),
        upper: upper0.clone(),
        d_parent: d_root,
        lb: root_lb,
        depth: 0,
    };
    let mut heap = BinaryHeap::new();
    let mut seq = 0usize;
    report.nodes = 1;

    let gap_closed = |lb: f64, ub: f64| {
        ub.is_finite() && (ub - lb <= config.abs_tol || relative_gap(lb, ub) <= 100.0 * config.rel_tol)
    };

    // expand a bounded node: heuristics, fathoming, children
    let mut expand = |node: Node,
                      point: Option<(DVector<f64>, DVector<f64>)>,
                      inc: &mut Incumbent,
                      heap: &mut BinaryHeap<Open>,
                      pruned: &mut Vec<PrunedNode>| {
        let branching = match &point {
            Some((x, y)) => {
                for cand in heuristic_points(inst, &node.lower, &node.upper, x) {
                    inc.offer(inst, &cand);
                }
                branch(inst, &node.lower, &node.upper, x, y)
            }
            None => widest_split(inst, &node),
        };
        if let Some((x, _)) = &point {
            if branching.is_none() {
                inc.offer(inst, x);
            }
        }
        if gap_closed(node.lb, inc.value) || branching.is_none() {
            if config.record_pruned {
                pruned.push(PrunedNode {
                    lower: node.lower.clone(),
                    upper: node.upper.clone(),
                    lb: node.lb,
                });
            }
            return;
        }
        let br = branching.unwrap();
        for (lo, hi) in br.children {
            let mut lower = node.lower.clone();
            let mut upper = node.upper.clone();
            lower[br.index] = lo;
            upper[br.index] = hi;
            seq += 1;
            heap.push(Open {
                lb: node.lb,
                seq,
                node: Node {
                    lower,
                    upper,
                    d_parent: node.d_parent.clone(),
                    lb: node.lb,
                    depth: node.depth + 1,
                },
            });
        }
    };

    expand(root, root_point, &mut inc, &mut heap, &mut report.pruned);
    report.max_open_nodes = heap.len();

    while let Some(open) = heap.pop() {
        let global_lb = open.lb;
        if gap_closed(global_lb, inc.value) {
            heap.push(open);
            break;
        }
        if let Some(limit) = config.time_limit {
            if start.elapsed() >= limit {
                heap.push(open);
                report.status = SolveStatus::TimeLimit;
                break;
            }
        }
        if report.nodes >= config.max_nodes {
            heap.push(open);
            report.status = SolveStatus::NodeLimit;
            break;
        }
        report.nodes += 1;
        let mut node = open.node;
        match bound_node(inst, &node, &setup) {
            Ok(nb) => {
                node.lb = nb.lb.max(node.lb);
                node.d_parent = nb.d_pass;
                expand(node, nb.point, &mut inc, &mut heap, &mut report.pruned);
            }
            Err(RelaxError::Infeasible(msg)) => {
                debug!("node infeasible: {msg}");
                if config.record_pruned {
                    report.pruned.push(PrunedNode {
                        lower: node.lower,
                        upper: node.upper,
                        lb: f64::INFINITY,
                    });
                }
            }
            Err(e) => {
                // keep the parent bound and split without relaxation guidance
                debug!("node bounding failed ({e}); inheriting parent bound");
                expand(node, None, &mut inc, &mut heap, &mut report.pruned);
            }
        }
        report.max_open_nodes = report.max_open_nodes.max(heap.len());
    }

    let open_lb = heap.iter().map(|o| o.lb).fold(f64::INFINITY, f64::min);
    report.lower_bound = if heap.is_empty() {
        if inc.value.is_finite() {
            inc.value
        } else {
            report.status = SolveStatus::Infeasible;
            f64::INFINITY
        }
    } else {
        open_lb.min(inc.value)
    };
    finish(report, inc)
}

/// Midpoint split of the widest free variable.
fn widest_split(inst: &MiqpInstance, node: &Node) -> Option<Branching> {
    let n = inst.n();
    let i = (0..n)
        .filter(|&i| node.upper[i] - node.lower[i] > 1e-12)
        .max_by(|&a, &b| {
            let wa = node.upper[a] - node.lower[a];
            let wb = node.upper[b] - node.lower[b];
            wa.total_cmp(&wb).then(b.cmp(&a))
        })?;
    let mid = 0.5 * (node.lower[i] + node.upper[i]);
    Some(Branching {
        index: i,
        children: split_variable(&inst.domains[i], node.lower[i], node.upper[i], mid),
    })
}

/// Global optimum by enumeration. `Ok(None)` when no point is feasible.
pub fn brute_force_oracle(inst: &MiqpInstance) -> Result<Option<(f64, DVector<f64>)>> {
    brute_force_in_box(inst, &inst.lower_bounds(), &inst.upper_bounds())
}

/// Enumeration restricted to a box.
pub fn brute_force_in_box(
    inst: &MiqpInstance,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> Result<Option<(f64, DVector<f64>)>> {
    let n = inst.n();
    let continuous: Vec<usize> = (0..n)
        .filter(|&i| inst.domains[i].kind == DomainKind::Interval && upper[i] > lower[i])
        .collect();
    if !continuous.is_empty() && (inst.m() > 0 || n > 4) {
        return Err(BnbError::ContinuousUnsupported);
    }
    let values: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let (lo, hi) = (lower[i], upper[i]);
            let dom = &inst.domains[i];
            match dom.kind {
                DomainKind::Binary | DomainKind::TwoPoint => [dom.lower, dom.upper]
                    .into_iter()
                    .filter(|&v| v >= lo - 1e-12 && v <= hi + 1e-12)
                    .collect(),
                DomainKind::IntegerRange => {
                    let a = lo.ceil() as i64;
                    let b = hi.floor() as i64;
                    (a..=b).map(|v| v as f64).collect()
                }
                DomainKind::Interval if hi > lo => {
                    let steps = match continuous.len() {
                        1 => 2000,
                        2 => 400,
                        3 => 60,
                        _ => 24,
                    };
                    (0..=steps).map(|k| lo + (hi - lo) * k as f64 / steps as f64).collect()
                }
                DomainKind::Interval => vec![lo],
            }
        })
        .collect();
    let discrete_count: f64 = (0..n)
        .filter(|i| !continuous.contains(i))
        .map(|i| values[i].len() as f64)
        .product();
    if discrete_count > (1u64 << 20) as f64 {
        return Err(BnbError::TooLarge(discrete_count));
    }
    if values.iter().any(|v| v.is_empty()) {
        return Ok(None);
    }
    let scale = 1.0 + inst.b.amax();
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut idx = vec![0usize; n];
    let mut x = DVector::from_iterator(n, (0..n).map(|i| values[i][0]));
    loop {
        let feasible = inst.m() == 0 || (&inst.a * &x - &inst.b).amax() <= 1e-9 * scale;
        if feasible {
            let mut cand = x.clone();
            if !continuous.is_empty() {
                polish(inst, &continuous, lower, upper, &mut cand);
            }
            let v = inst.evaluate_objective(&cand);
            if best.as_ref().map_or(true, |(b, _)| v < *b) {
                best = Some((v, cand));
            }
        }
        // odometer
        let mut k = 0;
        loop {
            if k == n {
                return Ok(best);
            }
            idx[k] += 1;
            if idx[k] < values[k].len() {
                x[k] = values[k][idx[k]];
                break;
            }
            idx[k] = 0;
            x[k] = values[k][0];
            k += 1;
        }
    }
}

/// Exact coordinate minimization over the continuous entries.
fn polish(inst: &MiqpInstance, cont: &[usize], lower: &DVector<f64>, upper: &DVector<f64>, x: &mut DVector<f64>) {
    for _ in 0..50 {
        let mut moved = 0.0_f64;
        for &i in cont {
            // f(t) = Q_ii t² + (2 Σ_{j≠i} Q_ij x_j + q_i) t + const
            let a = inst.quad[(i, i)];
            let b = 2.0 * (inst.quad.row(i) * &*x)[0] - 2.0 * a * x[i] + inst.linear[i];
            let f = |t: f64| a * t * t + b * t;
            let mut t = if f(lower[i]) <= f(upper[i]) { lower[i] } else { upper[i] };
            if a > 0.0 {
                let s = (-b / (2.0 * a)).clamp(lower[i], upper[i]);
                if f(s) < f(t) {
                    t = s;
                }
            }
            if f(t) < f(x[i]) {
                moved = moved.max((t - x[i]).abs());
                x[i] = t;
            }
        }
        if moved < 1e-14 {
            break;
        }
    }
}
