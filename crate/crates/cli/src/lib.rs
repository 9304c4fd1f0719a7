//! Experiment harness: seeded instance families, root-bound comparisons,
//! optional branch-and-bound runs and CSV reporting.

pub mod batch;
pub mod generate;
pub mod metrics;

pub use batch::{
    evaluate_instance, load_manifest, root_bounds, run_batch, write_report, BatchError,
    BatchOptions, GapCell, Manifest, ManifestEntry, MetricsRow, RootBounds, CSV_HEADER,
};
pub use generate::{generate_instance, Family, GenerateError};
pub use metrics::{relative_gap, root_gap, shifted_geomean, MetricError};
