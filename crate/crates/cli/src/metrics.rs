//! Summary statistics reported by the batch harness.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("shifted geometric mean of an empty list")]
    Empty,
    #[error("shift must be positive, got {0}")]
    BadShift(f64),
    #[error("value {0} is negative or not finite")]
    BadValue(f64),
}

/// Root relaxation gap `100 (μ_SDP − μ_QCP) / (μ_SDP − μ_QP)` in percent,
/// `None` when `μ_SDP ≤ μ_QP + 1e-9`.
pub fn root_gap(sdp: f64, qcp: f64, qp: f64) -> Option<f64> {
    let denom = sdp - qp;
    if !(denom > 1e-9) {
        return None;
    }
    Some(100.0 * (sdp - qcp) / denom)
}

/// `100 (UBD − LBD) / max(|LBD|, 1e-3)` in percent.
pub fn relative_gap(lbd: f64, ubd: f64) -> f64 {
    quadcut::bnb::relative_gap(lbd, ubd)
}

/// `exp(mean(log(v + shift))) − shift`.
pub fn shifted_geomean(values: &[f64], shift: f64) -> Result<f64, MetricError> {
    if values.is_empty() {
        return Err(MetricError::Empty);
    }
    if !(shift > 0.0) {
        return Err(MetricError::BadShift(shift));
    }
    let mut acc = 0.0;
    for &v in values {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(MetricError::BadValue(v));
        }
        acc += (v + shift).ln();
    }
    Ok((acc / values.len() as f64).exp() - shift)
}
