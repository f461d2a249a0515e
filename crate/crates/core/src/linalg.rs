//! Small shared linear-algebra helpers on top of nalgebra.

use crate::error::{Error, Result};
use crate::tensor::Mat;
use nalgebra::DVector;

/// Relative singular-value cutoff for all pseudo-inverses in the crate.
/// Values below 1e-12 * sigma_max are treated as zero rank.
const PINV_RTOL: f64 = 1e-12;

/// Moore-Penrose pseudo-inverse with a rank tolerance relative to the
/// largest singular value. The zero matrix maps to the zero matrix.
///
/// The SVD runs unbounded until convergence; a capped iteration count can
/// hand back a non-converged factorization for exactly rank-deficient
/// inputs. Finiteness is checked first so the iteration cannot hang.
pub(crate) fn pinv(m: &Mat) -> Result<Mat> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("SVD input"));
    }
    let svd = m.clone().svd_unordered(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    svd.pseudo_inverse(PINV_RTOL * smax)
        .map_err(|_| Error::NonFinite("pseudo-inverse"))
}

/// Minimum-norm least-squares solution of `design * theta = rhs`.
/// Rank-deficient designs are handled by the tolerant pseudo-inverse.
pub(crate) fn lstsq(design: &Mat, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(pinv(design)? * rhs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinv_inverts_a_well_conditioned_matrix() {
        let m = Mat::from_row_slice(2, 2, &[4.0, 1.0, 2.0, 3.0]);
        let p = pinv(&m).unwrap();
        let eye = &m * &p;
        assert!((eye - Mat::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn pinv_of_zero_is_zero() {
        let m = Mat::zeros(3, 2);
        let p = pinv(&m).unwrap();
        assert_eq!(p.nrows(), 2);
        assert_eq!(p.ncols(), 3);
        assert!(p.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn pinv_handles_rank_deficiency() {
        // rank-1 matrix: pinv must satisfy the Penrose condition M P M = M
        let m = Mat::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let p = pinv(&m).unwrap();
        assert!((&m * &p * &m - &m).norm() < 1e-12);
    }

    #[test]
    fn lstsq_solves_overdetermined_system() {
        // y = 2x + 1 sampled without noise
        let design = Mat::from_fn(5, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let rhs = DVector::from_fn(5, |i, _| 2.0 * i as f64 + 1.0);
        let theta = lstsq(&design, &rhs).unwrap();
        assert!((theta[0] - 1.0).abs() < 1e-10);
        assert!((theta[1] - 2.0).abs() < 1e-10);
    }
}
