//! Dense symmetric linear algebra used throughout the solver.
//!
//! Everything here works on `nalgebra` dense matrices. The target scale is a
//! few hundred variables, where a dense inverse is maintained anyway by the
//! separation solvers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix has rank {rank}, expected {expected}; prune dependent rows first")]
    RankDeficient { rank: usize, expected: usize },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("rank-one update leaves the positive definite cone (1 + delta * V_ii = {pivot:e})")]
    InfeasibleUpdate { pivot: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(LinalgError::NonFinite)
    }
}

fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Householder QR with column pivoting, `X Π = Q R`, with the full square `Q`.
#[derive(Debug, Clone)]
pub struct PivotedQr {
    /// Orthogonal `rows × rows` factor.
    pub q: DMatrix<f64>,
    /// Upper trapezoidal `rows × cols` factor of the permuted matrix.
    pub r: DMatrix<f64>,
    /// Column `k` of `X Π` is column `perm[k]` of `X`.
    pub perm: Vec<usize>,
    /// Numerical rank.
    pub rank: usize,
}

/// Rank-revealing QR. Columns whose remaining norm falls below
/// `rel_tol * ||X||_F` are treated as dependent.
pub fn pivoted_qr(x: &DMatrix<f64>, rel_tol: f64) -> PivotedQr {
    let (rows, cols) = x.shape();
    let mut r = x.clone();
    let mut q = DMatrix::<f64>::identity(rows, rows);
    let mut perm: Vec<usize> = (0..cols).collect();
    let threshold = rel_tol * x.norm().max(f64::MIN_POSITIVE);
    let steps = rows.min(cols);
    let mut rank = 0;

    for k in 0..steps {
        // pivot on the largest remaining column norm
        let (mut best, mut best_norm) = (k, -1.0);
        for j in k..cols {
            let norm = r.view((k, j), (rows - k, 1)).norm();
            if norm > best_norm {
                best = j;
                best_norm = norm;
            }
        }
        if best_norm <= threshold {
            break;
        }
        if best != k {
            r.swap_columns(k, best);
            perm.swap(k, best);
        }

        let mut v: DVector<f64> = r.view((k, k), (rows - k, 1)).column(0).into_owned();
        let alpha = if v[0] >= 0.0 { -best_norm } else { best_norm };
        v[0] -= alpha;
        let vnorm2 = v.norm_squared();
        if vnorm2 > 0.0 {
            // R[k.., k..] -= 2 v (v^T R) / (v^T v)
            let mut block = r.view_mut((k, k), (rows - k, cols - k));
            let w = block.tr_mul(&v) * (2.0 / vnorm2);
            block.ger(-1.0, &v, &w, 1.0);
            // Q[:, k..] -= 2 (Q v) v^T / (v^T v)
            let mut qblock = q.view_mut((0, k), (rows, rows - k));
            let u = &qblock * &v * (2.0 / vnorm2);
            qblock.ger(-1.0, &u, &v, 1.0);
        }
        for i in (k + 1)..rows {
            r[(i, k)] = 0.0;
        }
        rank += 1;
    }

    PivotedQr { q, r, perm, rank }
}

/// Orthonormal basis of `{w : A w = 0}`.
#[derive(Debug, Clone)]
pub struct NullspaceBasis {
    /// `n × (n − m)` matrix with orthonormal columns.
    pub z: DMatrix<f64>,
}

impl NullspaceBasis {
    pub fn dim(&self) -> usize {
        self.z.ncols()
    }

    /// `Zᵀ M Z`.
    pub fn project(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        symmetrized(&(self.z.transpose() * m * &self.z))
    }
}

const RANK_TOL: f64 = 1e-10;

/// Nullspace basis of a full-row-rank `A`. For `m = 0` this is the identity.
pub fn nullspace_basis(a: &DMatrix<f64>) -> Result<NullspaceBasis> {
    let (m, n) = a.shape();
    if m == 0 {
        return Ok(NullspaceBasis {
            z: DMatrix::identity(n, n),
        });
    }
    check_finite(a)?;
    if m > n {
        return Err(LinalgError::RankDeficient {
            rank: n,
            expected: m,
        });
    }
    let qr = pivoted_qr(&a.transpose(), RANK_TOL);
    if qr.rank < m {
        return Err(LinalgError::RankDeficient {
            rank: qr.rank,
            expected: m,
        });
    }
    Ok(NullspaceBasis {
        z: qr.q.columns(m, n - m).into_owned(),
    })
}

/// Least-norm solution of `A x = b` for full-row-rank `A`.
pub fn least_norm_solution(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let (m, n) = a.shape();
    if b.len() != m {
        return Err(LinalgError::Dimension(format!(
            "rhs has length {}, expected {m}",
            b.len()
        )));
    }
    if m == 0 {
        return Ok(DVector::zeros(n));
    }
    let qr = pivoted_qr(&a.transpose(), RANK_TOL);
    if qr.rank < m {
        return Err(LinalgError::RankDeficient {
            rank: qr.rank,
            expected: m,
        });
    }
    // (Πᵀ A) = R₁ᵀ Q₁ᵀ, so R₁ᵀ y = Πᵀ b and x = Q₁ y.
    let r1 = qr.r.view((0, 0), (m, m)).into_owned();
    let permuted_b = DVector::from_iterator(m, qr.perm.iter().map(|&p| b[p]));
    let y = r1
        .transpose()
        .solve_lower_triangular(&permuted_b)
        .ok_or(LinalgError::NotPositiveDefinite)?;
    Ok(qr.q.columns(0, m) * y)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    check_finite(m)?;
    if m.nrows() == 0 {
        return Ok(f64::INFINITY);
    }
    let eig = SymmetricEigen::new(symmetrized(m));
    Ok(eig.eigenvalues.min())
}

/// Smallest eigenvalue and a unit eigenvector for it.
pub fn min_eigenpair(m: &DMatrix<f64>) -> Result<(f64, DVector<f64>)> {
    check_finite(m)?;
    let eig = SymmetricEigen::new(symmetrized(m));
    let idx = eig.eigenvalues.imin();
    Ok((eig.eigenvalues[idx], eig.eigenvectors.column(idx).into_owned()))
}

/// Smallest `λ` with `M v = λ N v`, by Cholesky reduction `N = L Lᵀ`.
pub fn min_generalized_eigenvalue(m: &DMatrix<f64>, n: &DMatrix<f64>) -> Result<f64> {
    check_finite(m)?;
    check_finite(n)?;
    if m.shape() != n.shape() {
        return Err(LinalgError::Dimension("pencil matrices differ in shape".into()));
    }
    let chol = symmetrized(n)
        .cholesky()
        .ok_or(LinalgError::NotPositiveDefinite)?;
    let l = chol.l();
    let x = l
        .solve_lower_triangular(&symmetrized(m))
        .ok_or(LinalgError::NotPositiveDefinite)?;
    let c = l
        .solve_lower_triangular(&x.transpose())
        .ok_or(LinalgError::NotPositiveDefinite)?;
    min_eigenvalue(&c)
}

/// `λ_min(Zᵀ Q Z)`; `+∞` when the nullspace is trivial.
pub fn projected_min_eigenvalue(q: &DMatrix<f64>, basis: &NullspaceBasis) -> Result<f64> {
    if basis.dim() == 0 {
        return Ok(f64::INFINITY);
    }
    min_eigenvalue(&basis.project(q))
}

/// True iff `λ_min(M) ≥ −tol · max(1, ‖M‖_max)`.
pub fn psd_certificate(m: &DMatrix<f64>, tol: f64) -> bool {
    match min_eigenvalue(m) {
        Ok(lmin) => lmin >= -tol * max_abs(m).max(1.0),
        Err(_) => false,
    }
}

/// Drift above which the maintained inverse is rebuilt from scratch.
const DRIFT_TOL: f64 = 1e-8;

/// A positive definite matrix together with its maintained inverse.
#[derive(Debug, Clone)]
pub struct InverseState {
    matrix: DMatrix<f64>,
    inverse: DMatrix<f64>,
    update_count: usize,
    refactorizations: usize,
}

impl InverseState {
    /// Factor `M ≻ 0` and form `V = M⁻¹`.
    pub fn factor(matrix: DMatrix<f64>) -> Result<Self> {
        check_finite(&matrix)?;
        let matrix = symmetrized(&matrix);
        let inverse = invert_pd(&matrix)?;
        Ok(Self {
            matrix,
            inverse,
            update_count: 0,
            refactorizations: 0,
        })
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.inverse[(i, i)]
    }

    pub fn update_count(&self) -> usize {
        self.update_count
    }

    pub fn refactorizations(&self) -> usize {
        self.refactorizations
    }

    /// `‖M V − I‖_max`.
    pub fn drift(&self) -> f64 {
        let mut prod = &self.matrix * &self.inverse;
        for i in 0..self.dim() {
            prod[(i, i)] -= 1.0;
        }
        max_abs(&prod)
    }

    pub fn refactor(&mut self) -> Result<()> {
        self.inverse = invert_pd(&self.matrix)?;
        self.update_count = 0;
        self.refactorizations += 1;
        Ok(())
    }

    /// Sherman–Morrison update for `M ← M + Δ e_i e_iᵀ`.
    ///
    /// Every `n` updates the drift `‖M V − I‖` is measured and the inverse is
    /// rebuilt when it exceeds `1e-8`.
    pub fn sherman_morrison_update(&mut self, i: usize, delta: f64) -> Result<()> {
        let n = self.dim();
        if i >= n {
            return Err(LinalgError::Dimension(format!("index {i} out of range {n}")));
        }
        let pivot = 1.0 + delta * self.inverse[(i, i)];
        if !(pivot > 0.0) || !delta.is_finite() {
            return Err(LinalgError::InfeasibleUpdate { pivot });
        }
        if delta == 0.0 {
            return Ok(());
        }
        let col = self.inverse.column(i).into_owned();
        self.inverse.ger(-delta / pivot, &col, &col, 1.0);
        self.matrix[(i, i)] += delta;
        self.update_count += 1;
        if self.update_count % n.max(1) == 0 && self.drift() > DRIFT_TOL {
            self.refactor()?;
        }
        Ok(())
    }
}

fn invert_pd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = m.clone().cholesky().ok_or(LinalgError::NotPositiveDefinite)?;
    let inv = chol.inverse();
    Ok(symmetrized(&inv))
}

/// `log det M` for `M ≻ 0`.
pub fn log_det_pd(m: &DMatrix<f64>) -> Result<f64> {
    let chol = symmetrized(m)
        .cholesky()
        .ok_or(LinalgError::NotPositiveDefinite)?;
    Ok(2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn example_q() -> DMatrix<f64> {
        dmatrix![0.0, 2.0; 2.0, -1.0]
    }

    #[test]
    fn nullspace_axis_aligned() {
        let z = nullspace_basis(&dmatrix![1.0, 0.0]).unwrap().z;
        assert_eq!(z.shape(), (2, 1));
        assert!(z[(0, 0)].abs() < 1e-15);
        assert!((z[(1, 0)].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn nullspace_diagonal_direction() {
        let z = nullspace_basis(&dmatrix![1.0, 1.0]).unwrap().z;
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((z[(0, 0)].abs() - s).abs() < 1e-14);
        assert!((z[(0, 0)] + z[(1, 0)]).abs() < 1e-14);
    }

    #[test]
    fn nullspace_without_constraints_is_identity() {
        let z = nullspace_basis(&DMatrix::zeros(0, 3)).unwrap().z;
        assert_eq!(z, DMatrix::identity(3, 3));
    }

    #[test]
    fn nullspace_rejects_dependent_rows() {
        let a = dmatrix![1.0, 2.0, 3.0; 2.0, 4.0, 6.0];
        assert!(matches!(
            nullspace_basis(&a),
            Err(LinalgError::RankDeficient { rank: 1, expected: 2 })
        ));
    }

    #[test]
    fn least_norm_solves_system() {
        let a = dmatrix![1.0, 1.0, 0.0; 0.0, 1.0, -1.0];
        let b = DVector::from_vec(vec![1.0, 2.0]);
        let x = least_norm_solution(&a, &b).unwrap();
        assert!((&a * &x - &b).amax() < 1e-14);
        // least norm means x lies in range(Aᵀ)
        let z = nullspace_basis(&a).unwrap().z;
        assert!((z.transpose() * &x).amax() < 1e-14);
    }

    #[test]
    fn min_eigenvalue_examples() {
        assert_eq!(min_eigenvalue(&dmatrix![-1.0, 0.0; 0.0, 2.0]).unwrap(), -1.0);
        let expected = (-1.0 - 17f64.sqrt()) / 2.0;
        assert!((min_eigenvalue(&example_q()).unwrap() - expected).abs() < 1e-12);
        assert!((min_eigenvalue(&DMatrix::identity(4, 4)).unwrap() - 1.0).abs() < 1e-15);
        let mut bad = DMatrix::identity(2, 2);
        bad[(0, 1)] = f64::NAN;
        assert_eq!(min_eigenvalue(&bad), Err(LinalgError::NonFinite));
    }

    #[test]
    fn generalized_eigenvalue_examples() {
        let m = dmatrix![2.0, 0.0; 0.0, 3.0];
        let n = dmatrix![1.0, 0.0; 0.0, 2.0];
        assert!((min_generalized_eigenvalue(&m, &n).unwrap() - 1.5).abs() < 1e-14);
        let q = example_q();
        let ident = DMatrix::identity(2, 2);
        assert!(
            (min_generalized_eigenvalue(&q, &ident).unwrap() - min_eigenvalue(&q).unwrap()).abs()
                < 1e-14
        );
        assert_eq!(
            min_generalized_eigenvalue(&q, &dmatrix![1.0, 0.0; 0.0, -1.0]),
            Err(LinalgError::NotPositiveDefinite)
        );
    }

    #[test]
    fn generalized_eigenvalue_matches_explicit_2x2_pencil() {
        // det(Q − λN) = 0 with N = diag(1, 1 + α) solved by the quadratic formula.
        let alpha = 1e6;
        let q = example_q();
        let a = dmatrix![0.0, 1.0];
        let n = DMatrix::identity(2, 2) + alpha * a.transpose() * &a;
        let (n1, n2): (f64, f64) = (1.0, 1.0 + alpha);
        // (0 − λ)(−1 − λ n2) − 4 = 0  →  n2 λ² + λ − 4 = 0 (with n1 = 1)
        let (qa, qb, qc) = (n1 * n2, n1 * 1.0, -4.0);
        let root = (-qb - (qb * qb - 4.0 * qa * qc).sqrt()) / (2.0 * qa);
        let got = min_generalized_eigenvalue(&q, &n).unwrap();
        assert!((got - root).abs() < 1e-8, "{got} vs {root}");
        // the limit is min(0, λ_min(ZᵀQZ)) = min(0, 0) = 0
        assert!(got.abs() < 1e-2);
    }

    #[test]
    fn projected_eigenvalue_example() {
        let basis = nullspace_basis(&dmatrix![1.0, 1.0]).unwrap();
        let got = projected_min_eigenvalue(&example_q(), &basis).unwrap();
        assert!((got + 2.5).abs() < 1e-14);
        let ident = nullspace_basis(&DMatrix::zeros(0, 2)).unwrap();
        assert!(
            (projected_min_eigenvalue(&example_q(), &ident).unwrap()
                - min_eigenvalue(&example_q()).unwrap())
            .abs()
                < 1e-14
        );
    }

    #[test]
    fn factor_inverse_examples() {
        let st = InverseState::factor(DMatrix::identity(3, 3) * 2.0).unwrap();
        assert!((st.inverse() - DMatrix::identity(3, 3) * 0.5).amax() < 1e-15);
        let st = InverseState::factor(dmatrix![2.0, 1.0; 1.0, 2.0]).unwrap();
        let expected = dmatrix![2.0, -1.0; -1.0, 2.0] / 3.0;
        assert!((st.inverse() - expected).amax() < 1e-15);
        assert_eq!(st.update_count(), 0);
        assert!(InverseState::factor(dmatrix![1.0, 0.0; 0.0, -1.0]).is_err());
    }

    #[test]
    fn sherman_morrison_examples() {
        let mut st = InverseState::factor(DMatrix::identity(2, 2)).unwrap();
        st.sherman_morrison_update(1, 0.0).unwrap();
        assert_eq!(st.inverse(), &DMatrix::identity(2, 2));
        // 0-based index 1 is the second coordinate
        st.sherman_morrison_update(0, 1.0).unwrap();
        assert!((st.inverse() - dmatrix![0.5, 0.0; 0.0, 1.0]).amax() < 1e-15);
        assert!(matches!(
            st.sherman_morrison_update(1, -1.0),
            Err(LinalgError::InfeasibleUpdate { .. })
        ));
    }

    #[test]
    fn psd_certificate_examples() {
        assert!(psd_certificate(&dmatrix![2.0, 2.0; 2.0, 2.0], 1e-8));
        assert!(!psd_certificate(&example_q(), 1e-8));
        assert!(psd_certificate(&DMatrix::identity(3, 3), 0.0));
    }

    #[test]
    fn log_det_of_diagonal() {
        let m = dmatrix![2.0, 0.0; 0.0, 3.0];
        assert!((log_det_pd(&m).unwrap() - 6f64.ln()).abs() < 1e-14);
    }
}
