//! Batch runs over a manifest of instance files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use log::warn;
use nalgebra::DVector;
use quadcut::bnb::{self, BnbConfig};
use quadcut::model::{load_instance, MiqpInstance};
use quadcut::relax::{self, CuttingSurfaceConfig, RelaxContext, RelaxError};
use quadcut::separation::{SeparationConfig, SeparationMode};
use serde::Deserialize;
use thiserror::Error;

use crate::metrics::{root_gap, shifted_geomean};

#[derive(Debug, Error)]
pub enum BatchError {
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    #[serde(default)]
    pub sdp_bound: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Manifest {
    pub instances: Vec<ManifestEntry>,
}

/// Read a manifest; relative instance paths are resolved against its directory.
pub fn load_manifest(path: &Path) -> Result<Manifest, BatchError> {
    let text = fs::read_to_string(path).map_err(|source| BatchError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut manifest: Manifest = serde_json::from_str(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    for e in &mut manifest.instances {
        if e.path.is_relative() {
            e.path = base.join(&e.path);
        }
    }
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct BatchOptions {
    pub bnb: bool,
    pub max_nc: usize,
    pub time_limit: Option<Duration>,
    pub rel_tol: f64,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self {
            bnb: false,
            max_nc: 20,
            time_limit: None,
            rel_tol: 1e-6,
        }
    }
}

/// Root bounds of one instance for one separation mode.
#[derive(Debug, Clone)]
pub struct RootBounds {
    /// Uniform shift by `−λ_min(Q)`.
    pub eig: f64,
    /// Uniform shift by `−λ_min(ZᵀQZ)`.
    pub eigns: f64,
    /// Cutting-surface bound.
    pub qcp: f64,
    /// Pool size at termination (including the initial cut).
    pub cuts: usize,
    pub seconds: f64,
    pub convex: bool,
}

pub fn root_bounds(
    inst: &MiqpInstance,
    mode: SeparationMode,
    max_nc: usize,
) -> Result<RootBounds, RelaxError> {
    let start = Instant::now();
    let ctx = RelaxContext::new(inst)?;
    if relax::is_convex(inst, &ctx)? {
        let sol = relax::solve_qp_child(inst, &ctx, &DVector::zeros(inst.n()))?;
        return Ok(RootBounds {
            eig: sol.bound,
            eigns: sol.bound,
            qcp: sol.bound,
            cuts: 0,
            seconds: start.elapsed().as_secs_f64(),
            convex: true,
        });
    }
    let eig_mu = relax::eig_mu(inst)?.max(0.0);
    let eig = relax::solve_eigenvalue_relaxation(inst, &ctx, eig_mu)?.bound;
    let alpha = relax::select_alpha(inst)?.alpha;
    let cfg = CuttingSurfaceConfig {
        max_nc,
        separation: SeparationConfig::with_mode(mode),
        ..Default::default()
    };
    let cs = relax::cutting_surface(inst, &ctx, alpha, &cfg)?;
    Ok(RootBounds {
        eig,
        eigns: cs.initial_bound,
        qcp: cs.bound,
        cuts: cs.pool.cuts.len(),
        seconds: start.elapsed().as_secs_f64(),
        convex: false,
    })
}

/// Root-gap cell: absent without an SDP bound, undefined when `μ_SDP ≤ μ_QP`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GapCell {
    Missing,
    Undefined,
    Value(f64),
}

impl GapCell {
    fn new(sdp: Option<f64>, qcp: Option<f64>, qp: Option<f64>) -> Self {
        match (sdp, qcp, qp) {
            (Some(s), Some(c), Some(p)) => root_gap(s, c, p).map_or(GapCell::Undefined, GapCell::Value),
            _ => GapCell::Missing,
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            GapCell::Value(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub instance: String,
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub eig: Option<f64>,
    pub eigns: Option<f64>,
    pub qcp_sreg: Option<f64>,
    pub qcp_nsreg: Option<f64>,
    pub sdp: Option<f64>,
    pub root_gap_sreg: GapCell,
    pub root_gap_nsreg: GapCell,
    pub cuts_sreg: Option<usize>,
    pub cuts_nsreg: Option<usize>,
    pub time_sreg: Option<f64>,
    pub time_nsreg: Option<f64>,
    pub lbd: Option<f64>,
    pub ubd: Option<f64>,
    pub relative_gap: Option<f64>,
    pub nodes: Option<f64>,
    pub max_open_nodes: Option<f64>,
    pub time_bnb: Option<f64>,
    pub status: String,
    pub error: String,
}

impl MetricsRow {
    fn empty(instance: String) -> Self {
        Self {
            instance,
            n: None,
            m: None,
            eig: None,
            eigns: None,
            qcp_sreg: None,
            qcp_nsreg: None,
            sdp: None,
            root_gap_sreg: GapCell::Missing,
            root_gap_nsreg: GapCell::Missing,
            cuts_sreg: None,
            cuts_nsreg: None,
            time_sreg: None,
            time_nsreg: None,
            lbd: None,
            ubd: None,
            relative_gap: None,
            nodes: None,
            max_open_nodes: None,
            time_bnb: None,
            status: String::new(),
            error: String::new(),
        }
    }
}

pub const CSV_HEADER: [&str; 22] = [
    "instance",
    "n",
    "m",
    "eig",
    "eigns",
    "qcp_sreg",
    "qcp_nsreg",
    "sdp",
    "root_gap_sreg",
    "root_gap_nsreg",
    "cuts_sreg",
    "cuts_nsreg",
    "time_sreg",
    "time_nsreg",
    "lbd",
    "ubd",
    "relative_gap",
    "nodes",
    "max_open_nodes",
    "time_bnb",
    "status",
    "error",
];

pub fn evaluate_instance(id: &str, inst: &MiqpInstance, sdp: Option<f64>, opts: &BatchOptions) -> MetricsRow {
    let mut row = MetricsRow::empty(id.to_string());
    row.n = Some(inst.n());
    row.m = Some(inst.m());
    row.sdp = sdp;
    let mut errors = Vec::new();
    match root_bounds(inst, SeparationMode::Smooth, opts.max_nc) {
        Ok(r) => {
            row.eig = Some(r.eig);
            row.eigns = Some(r.eigns);
            row.qcp_sreg = Some(r.qcp);
            row.cuts_sreg = Some(r.cuts);
            row.time_sreg = Some(r.seconds);
        }
        Err(e) => errors.push(format!("smooth: {e}")),
    }
    match root_bounds(inst, SeparationMode::Nonsmooth, opts.max_nc) {
        Ok(r) => {
            row.eig = row.eig.or(Some(r.eig));
            row.eigns = row.eigns.or(Some(r.eigns));
            row.qcp_nsreg = Some(r.qcp);
            row.cuts_nsreg = Some(r.cuts);
            row.time_nsreg = Some(r.seconds);
        }
        Err(e) => errors.push(format!("nonsmooth: {e}")),
    }
    row.root_gap_sreg = GapCell::new(sdp, row.qcp_sreg, row.eigns);
    row.root_gap_nsreg = GapCell::new(sdp, row.qcp_nsreg, row.eigns);
    if opts.bnb {
        let cfg = BnbConfig {
            time_limit: opts.time_limit,
            rel_tol: opts.rel_tol,
            max_nc: opts.max_nc,
            ..Default::default()
        };
        let rep = bnb::solve(inst, &cfg);
        row.lbd = Some(rep.lower_bound).filter(|v| v.is_finite());
        row.ubd = Some(rep.upper_bound).filter(|v| v.is_finite());
        row.relative_gap = Some(rep.relative_gap).filter(|v| v.is_finite());
        row.nodes = Some(rep.nodes as f64);
        row.max_open_nodes = Some(rep.max_open_nodes as f64);
        row.time_bnb = Some(rep.wall_time.as_secs_f64());
        row.status = rep.status.to_string();
    } else {
        row.status = if errors.is_empty() { "root".into() } else { "error".into() };
    }
    row.error = errors.join("; ");
    row
}

/// Evaluate every manifest entry in order; failures are recorded in the row.
pub fn run_batch(manifest: &Manifest, opts: &BatchOptions) -> Vec<MetricsRow> {
    manifest
        .instances
        .iter()
        .map(|entry| {
            let id = entry
                .path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| entry.path.display().to_string());
            match load_instance(&entry.path) {
                Ok(inst) => evaluate_instance(&id, &inst, entry.sdp_bound, opts),
                Err(e) => {
                    warn!("{}: {e}", entry.path.display());
                    let mut row = MetricsRow::empty(id);
                    row.sdp = entry.sdp_bound;
                    row.status = "error".into();
                    row.error = e.to_string();
                    row
                }
            }
        })
        .collect()
}

/// Shortest representation that parses back to the same `f64`.
fn fmt_f(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

fn fmt_gap(g: GapCell) -> String {
    match g {
        GapCell::Missing => String::new(),
        GapCell::Undefined => "undefined".into(),
        GapCell::Value(v) => format!("{v:e}"),
    }
}

fn record(row: &MetricsRow) -> Vec<String> {
    vec![
        row.instance.clone(),
        row.n.map(|v| v.to_string()).unwrap_or_default(),
        row.m.map(|v| v.to_string()).unwrap_or_default(),
        fmt_f(row.eig),
        fmt_f(row.eigns),
        fmt_f(row.qcp_sreg),
        fmt_f(row.qcp_nsreg),
        fmt_f(row.sdp),
        fmt_gap(row.root_gap_sreg),
        fmt_gap(row.root_gap_nsreg),
        row.cuts_sreg.map(|v| v.to_string()).unwrap_or_default(),
        row.cuts_nsreg.map(|v| v.to_string()).unwrap_or_default(),
        fmt_f(row.time_sreg),
        fmt_f(row.time_nsreg),
        fmt_f(row.lbd),
        fmt_f(row.ubd),
        fmt_f(row.relative_gap),
        fmt_f(row.nodes),
        fmt_f(row.max_open_nodes),
        fmt_f(row.time_bnb),
        row.status.clone(),
        row.error.clone(),
    ]
}

fn geomean_of(values: impl Iterator<Item = Option<f64>>, shift: f64) -> Option<f64> {
    let v: Vec<f64> = values.flatten().filter(|x| x.is_finite() && *x >= 0.0).collect();
    shifted_geomean(&v, shift).ok()
}

/// Shifted geometric means (shift 1 for gaps and times, 10 for node counts).
pub fn aggregate_row(rows: &[MetricsRow]) -> MetricsRow {
    let mut agg = MetricsRow::empty("shifted_geomean".into());
    let gap = |g: Option<f64>| g.map_or(GapCell::Missing, GapCell::Value);
    agg.root_gap_sreg = gap(geomean_of(rows.iter().map(|r| r.root_gap_sreg.value()), 1.0));
    agg.root_gap_nsreg = gap(geomean_of(rows.iter().map(|r| r.root_gap_nsreg.value()), 1.0));
    agg.time_sreg = geomean_of(rows.iter().map(|r| r.time_sreg), 1.0);
    agg.time_nsreg = geomean_of(rows.iter().map(|r| r.time_nsreg), 1.0);
    agg.relative_gap = geomean_of(rows.iter().map(|r| r.relative_gap), 1.0);
    agg.nodes = geomean_of(rows.iter().map(|r| r.nodes), 10.0);
    agg.max_open_nodes = geomean_of(rows.iter().map(|r| r.max_open_nodes), 10.0);
    agg.time_bnb = geomean_of(rows.iter().map(|r| r.time_bnb), 1.0);
    agg.status = "aggregate".into();
    agg
}

/// Header, one line per row and the aggregate line.
pub fn write_report<W: Write>(rows: &[MetricsRow], out: W) -> Result<(), BatchError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for row in rows {
        w.write_record(record(row))?;
    }
    w.write_record(record(&aggregate_row(rows)))?;
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
