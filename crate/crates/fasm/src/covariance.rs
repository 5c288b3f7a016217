//! Covariance estimation for the raw discrete data: the model-based
//! estimator Σ̂_Y = ΦΣ̂_cΦᵀ + ÂΣ̂_fÂᵀ + Σ̂_ε, the plain sample covariance
//! comparator, and the scaled Frobenius loss used to compare them.

use nalgebra::DMatrix;

use crate::basis::BasisMatrix;
use crate::error::{FasmError, Result};
use crate::estimator::FasmFit;

/// The assembled estimate with its decomposition kept separate.
#[derive(Debug, Clone)]
pub struct CovarianceEstimate {
    pub total: DMatrix<f64>,
    /// ΦΣ̂_cΦᵀ
    pub smooth_part: DMatrix<f64>,
    /// ÂΣ̂_fÂᵀ (zero when r = 0)
    pub factor_part: DMatrix<f64>,
    /// diag(n⁻¹ÊÊᵀ)
    pub error_part: DMatrix<f64>,
}

/// Σ̂_c = (1/(n−1))CCᵀ − (1/(n(n−1)))C11ᵀCᵀ over the columns of C.
///
/// Algebraically this equals the centered sample covariance of the
/// coefficient vectors.
pub fn coefficient_covariance(c_hat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    column_covariance(c_hat)
}

/// Σ̂_f for factors stored n×r (the formula applies to F̂ᵀ).
pub fn factor_covariance(f_hat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if f_hat.ncols() == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    column_covariance(&f_hat.transpose())
}

fn column_covariance(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = x.ncols();
    if n < 2 {
        return Err(FasmError::InvalidArgument(format!(
            "covariance needs at least 2 observations, got {n}"
        )));
    }
    let nf = n as f64;
    let ones = DMatrix::from_element(n, 1, 1.0);
    let row_sums = x * &ones; // K×1
    let outer = &row_sums * row_sums.transpose();
    let mut sigma = x * x.transpose() / (nf - 1.0) - outer / (nf * (nf - 1.0));
    for i in 0..sigma.nrows() {
        for j in 0..i {
            let v = 0.5 * (sigma[(i, j)] + sigma[(j, i)]);
            sigma[(i, j)] = v;
            sigma[(j, i)] = v;
        }
    }
    Ok(sigma)
}

/// Diagonal error covariance: entries are the row mean squares of the
/// residual matrix, off-diagonals zero.
pub fn error_covariance_diag(residuals: &DMatrix<f64>) -> DMatrix<f64> {
    let (p, n) = (residuals.nrows(), residuals.ncols());
    let mut d = DMatrix::zeros(p, p);
    for j in 0..p {
        let mut acc = 0.0;
        for i in 0..n {
            acc += residuals[(j, i)] * residuals[(j, i)];
        }
        d[(j, j)] = acc / n as f64;
    }
    d
}

/// Assemble the model-based covariance estimate of the raw data from a
/// fit and the basis matrix used to produce it.
pub fn model_covariance(fit: &FasmFit, phi: &BasisMatrix) -> Result<CovarianceEstimate> {
    let p = phi.nrows();
    if fit.c_hat.nrows() != phi.ncols() || fit.a_hat.num_coordinates() != p {
        return Err(FasmError::Dimension(
            "model_covariance: fit and basis matrix are not conformable".into(),
        ));
    }
    let sigma_c = coefficient_covariance(&fit.c_hat)?;
    let smooth_part = phi * sigma_c * phi.transpose();
    let factor_part = if fit.r == 0 {
        DMatrix::zeros(p, p)
    } else {
        let sigma_f = factor_covariance(&fit.f_hat)?;
        fit.a_hat.matrix() * sigma_f * fit.a_hat.matrix().transpose()
    };
    let error_part = error_covariance_diag(&fit.residuals);
    let mut total = &smooth_part + &factor_part + &error_part;
    for i in 0..p {
        for j in 0..i {
            let v = 0.5 * (total[(i, j)] + total[(j, i)]);
            total[(i, j)] = v;
            total[(j, i)] = v;
        }
    }
    Ok(CovarianceEstimate {
        total,
        smooth_part,
        factor_part,
        error_part,
    })
}

/// Regular sample covariance (1/(n−1))(Y−Ȳ)(Y−Ȳ)ᵀ with rows centered by
/// their means.
pub fn sample_covariance(y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (p, n) = (y.nrows(), y.ncols());
    if n < 2 {
        return Err(FasmError::InvalidArgument(format!(
            "sample covariance needs at least 2 subjects, got {n}"
        )));
    }
    let mut centered = y.clone();
    for j in 0..p {
        let mean = y.row(j).sum() / n as f64;
        for i in 0..n {
            centered[(j, i)] -= mean;
        }
    }
    Ok(&centered * centered.transpose() / (n as f64 - 1.0))
}

/// Scaled squared Frobenius loss (1/p)‖Σ̂ − Σ‖_F².
pub fn frobenius_mse(estimate: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<f64> {
    if estimate.shape() != truth.shape() {
        return Err(FasmError::Dimension(format!(
            "frobenius_mse: {}x{} vs {}x{}",
            estimate.nrows(),
            estimate.ncols(),
            truth.nrows(),
            truth.ncols()
        )));
    }
    Ok((estimate - truth).norm_squared() / estimate.nrows() as f64)
}
