//! Seeded instance families.

use nalgebra::{DMatrix, DVector};
use quadcut::linalg;
use quadcut::model::{MiqpInstance, ModelError, VariableDomain};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("n must be at least 2, got {0}")]
    TooSmall(usize),
    #[error("density must lie in (0, 1], got {0}")]
    Density(f64),
    #[error("unknown family `{0}` (expected boxqp, binary_card or eq_integer)")]
    UnknownFamily(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Continuous box `[0, 1]^n`, no equalities.
    BoxQp,
    /// Binaries with the cardinality constraint `Σ x_i = ⌊n/2⌋`.
    BinaryCard,
    /// Integers in `[0, 3]` with random full-rank equalities.
    EqInteger,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::BoxQp, Family::BinaryCard, Family::EqInteger];

    pub fn name(self) -> &'static str {
        match self {
            Family::BoxQp => "boxqp",
            Family::BinaryCard => "binary_card",
            Family::EqInteger => "eq_integer",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = GenerateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "boxqp" => Ok(Family::BoxQp),
            "binary_card" => Ok(Family::BinaryCard),
            "eq_integer" => Ok(Family::EqInteger),
            other => Err(GenerateError::UnknownFamily(other.to_string())),
        }
    }
}

/// Symmetric matrix with each upper-triangle entry present with probability
/// `density`, integer valued in `[−50s, 50s]` where `s = max(1, ⌊density·n²/100⌋)`.
fn random_quad(rng: &mut ChaCha8Rng, n: usize, density: f64) -> DMatrix<f64> {
    let scale = ((density * (n * n) as f64 / 100.0).floor() as i64).max(1);
    let bound = 50 * scale;
    let mut q = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            if rng.gen::<f64>() < density {
                let v = rng.gen_range(-bound..=bound) as f64;
                q[(i, j)] = v;
                q[(j, i)] = v;
            }
        }
    }
    q
}

fn random_linear(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(-50..=50) as f64)
}

pub fn generate_instance(
    family: Family,
    n: usize,
    density: f64,
    seed: u64,
) -> Result<MiqpInstance, GenerateError> {
    if n < 2 {
        return Err(GenerateError::TooSmall(n));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(GenerateError::Density(density));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let quad = random_quad(&mut rng, n, density);
    let linear = random_linear(&mut rng, n);
    let inst = match family {
        Family::BoxQp => MiqpInstance::new(
            quad,
            linear,
            DMatrix::zeros(0, n),
            DVector::zeros(0),
            vec![VariableDomain::interval(0.0, 1.0); n],
        )?,
        Family::BinaryCard => MiqpInstance::new(
            quad,
            linear,
            DMatrix::from_element(1, n, 1.0),
            DVector::from_element(1, (n / 2) as f64),
            vec![VariableDomain::binary(); n],
        )?,
        Family::EqInteger => {
            let m = (n / 4).max(1);
            let a = loop {
                let a = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-3..=3) as f64);
                if linalg::pivoted_qr(&a.transpose(), 1e-10).rank == m {
                    break a;
                }
            };
            let x0 = DVector::from_fn(n, |_, _| rng.gen_range(0..=3) as f64);
            let b = &a * x0;
            MiqpInstance::new(quad, linear, a, b, vec![VariableDomain::integer_range(0.0, 3.0); n])?
        }
    };
    Ok(inst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_output() {
        for fam in Family::ALL {
            let a = generate_instance(fam, 8, 0.5, 11).unwrap().to_json_string();
            let b = generate_instance(fam, 8, 0.5, 11).unwrap().to_json_string();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn family_shapes() {
        let inst = generate_instance(Family::BinaryCard, 6, 1.0, 3).unwrap();
        assert_eq!(inst.m(), 1);
        assert_eq!(inst.b[0], 3.0);
        assert!(inst.a.iter().all(|&v| v == 1.0));
        let inst = generate_instance(Family::BoxQp, 5, 0.7, 3).unwrap();
        assert_eq!(inst.m(), 0);
        let inst = generate_instance(Family::EqInteger, 12, 0.4, 3).unwrap();
        assert_eq!(inst.m(), 3);
        assert!(inst.diagnostics.is_empty());
    }

    #[test]
    fn large_dense_instances_exceed_the_scale_threshold() {
        let inst = generate_instance(Family::BoxQp, 30, 1.0, 5).unwrap();
        assert!(inst.q_max() >= 100.0);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(matches!(generate_instance(Family::BoxQp, 1, 0.5, 0), Err(GenerateError::TooSmall(1))));
        assert!(matches!(generate_instance(Family::BoxQp, 4, 0.0, 0), Err(GenerateError::Density(_))));
        assert!("foo".parse::<Family>().is_err());
    }
}
