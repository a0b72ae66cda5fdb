//! Small dense linear-algebra helpers built on nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Cholesky factor of a covariance matrix with the log-determinant cached.
#[derive(Debug, Clone)]
pub struct CovFactor {
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
    /// Ridge that had to be added to the diagonal (0 when none).
    pub ridge: f64,
}

impl CovFactor {
    /// Factorizes `cov`; on failure retries once with a ridge of
    /// `1e-8 * trace / n` on the diagonal.
    pub fn new(cov: &DMatrix<f64>, regime: usize) -> Result<Self> {
        let sym = symmetrize(cov);
        if let Some(chol) = sym.clone().cholesky() {
            return Ok(Self::from_chol(chol, 0.0));
        }
        let n = sym.nrows().max(1) as f64;
        let ridge = 1e-8 * (sym.trace() / n).abs().max(f64::MIN_POSITIVE);
        let mut ridged = sym;
        for i in 0..ridged.nrows() {
            ridged[(i, i)] += ridge;
        }
        match ridged.cholesky() {
            Some(chol) => {
                log::warn!("covariance of regime {} needed a ridge of {:e}", regime + 1, ridge);
                Ok(Self::from_chol(chol, ridge))
            }
            None => Err(Error::NotPositiveDefinite { regime }),
        }
    }

    fn from_chol(chol: Cholesky<f64, Dyn>, ridge: f64) -> Self {
        let l = chol.l_dirty();
        let log_det = 2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>();
        Self { chol, log_det, ridge }
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// Log density of N(0, Σ) at `resid`.
    pub fn log_density(&self, resid: &DVector<f64>) -> f64 {
        let z = self
            .chol
            .l_dirty()
            .solve_lower_triangular(resid)
            .expect("cholesky factor has a positive diagonal");
        -0.5 * (self.dim() as f64 * LN_2PI + self.log_det + z.norm_squared())
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Solves the symmetric positive (semi)definite system `a x = b`, adding a
/// relative ridge when the plain factorization fails.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(b));
    }
    let n = a.nrows().max(1) as f64;
    let ridge = 1e-10 * (a.trace() / n).abs().max(1e-300);
    let mut ridged = a.clone();
    for i in 0..ridged.nrows() {
        ridged[(i, i)] += ridge;
    }
    match ridged.cholesky() {
        Some(chol) => {
            log::warn!("normal equations were singular; solved with ridge {:e}", ridge);
            Ok(chol.solve(b))
        }
        None => Err(Error::NonFinite("singular normal equations".into())),
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Sub-matrix of `m` on the index set `idx` (rows and columns).
pub fn sub_matrix(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])])
}

/// `P^n` for a square matrix.
pub fn mat_pow(p: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let mut out = DMatrix::identity(p.nrows(), p.ncols());
    for _ in 0..n {
        out = &out * p;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_normal_at_mode() {
        let f = CovFactor::new(&DMatrix::identity(1, 1), 0).unwrap();
        let ld = f.log_density(&DVector::zeros(1));
        assert!((ld - (-0.918_938_533_204_672_7)).abs() < 1e-15);
    }

    #[test]
    fn ridge_rescues_semidefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let f = CovFactor::new(&m, 0).unwrap();
        assert!(f.ridge > 0.0);
    }

    #[test]
    fn indefinite_is_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            CovFactor::new(&m, 3),
            Err(Error::NotPositiveDefinite { regime: 3 })
        ));
    }
}
