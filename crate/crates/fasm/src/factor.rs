//! Principal-component loading extraction, factor-count selection by the
//! modified eigenvalue-ratio rule, and the complementary projector
//! M = I − AAᵀ/p.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{FasmError, Result};

/// Loadings Â (p×r) scaled so that ÂᵀÂ/p = I_r.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadingMatrix {
    matrix: DMatrix<f64>,
}

impl LoadingMatrix {
    /// Wrap a candidate loading matrix, checking the ÂᵀÂ/p = I_r scaling.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let p = matrix.nrows();
        let r = matrix.ncols();
        if r > 0 {
            let gram = matrix.transpose() * &matrix / p as f64;
            for i in 0..r {
                for j in 0..r {
                    let target = if i == j { 1.0 } else { 0.0 };
                    if (gram[(i, j)] - target).abs() > 1e-6 {
                        return Err(FasmError::InvalidArgument(format!(
                            "loading matrix violates AᵀA/p = I at ({i},{j}): {}",
                            gram[(i, j)]
                        )));
                    }
                }
            }
        }
        Ok(Self { matrix })
    }

    /// Empty loading matrix (r = 0) for p coordinates.
    pub fn empty(p: usize) -> Self {
        Self {
            matrix: DMatrix::zeros(p, 0),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn num_coordinates(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn num_factors(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Eigenvalues in nonincreasing order with matching orthonormal vectors.
#[derive(Debug, Clone)]
pub struct EigenSpectrum {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

/// Symmetric idempotent projector onto the orthogonal complement of the
/// loading column space.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    matrix: DMatrix<f64>,
}

impl ProjectionMatrix {
    pub fn identity(p: usize) -> Self {
        Self {
            matrix: DMatrix::identity(p, p),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Second-moment matrix of the smoothing residuals,
/// S = (1/(n·p)) (Y − ΦĈ)(Y − ΦĈ)ᵀ.
pub fn residual_second_moment(
    y: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    c_hat: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let (p, n) = (y.nrows(), y.ncols());
    if phi.nrows() != p || phi.ncols() != c_hat.nrows() || c_hat.ncols() != n {
        return Err(FasmError::Dimension(format!(
            "residual_second_moment: Y is {p}x{n}, Phi is {}x{}, C is {}x{}",
            phi.nrows(),
            phi.ncols(),
            c_hat.nrows(),
            c_hat.ncols()
        )));
    }
    let z = y - phi * c_hat;
    let mut s = &z * z.transpose() / (n * p) as f64;
    // enforce exact symmetry against rounding
    for i in 0..p {
        for j in 0..i {
            let v = 0.5 * (s[(i, j)] + s[(j, i)]);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    Ok(s)
}

/// Full eigendecomposition of a symmetric matrix, eigenvalues sorted
/// nonincreasing, each vector's largest-magnitude entry made positive.
pub fn sorted_eigen(s: &DMatrix<f64>) -> EigenSpectrum {
    let p = s.nrows();
    let eig = SymmetricEigen::new(s.clone());
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("eigenvalues are finite")
    });
    let mut values = Vec::with_capacity(p);
    let mut vectors = DMatrix::zeros(p, p);
    for (dst, &src) in order.iter().enumerate() {
        values.push(eig.eigenvalues[src]);
        let mut col = eig.eigenvectors.column(src).clone_owned();
        let mut max_abs = 0.0;
        let mut max_idx = 0;
        for (i, &v) in col.iter().enumerate() {
            if v.abs() > max_abs {
                max_abs = v.abs();
                max_idx = i;
            }
        }
        if col[max_idx] < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(dst, &col);
    }
    EigenSpectrum { values, vectors }
}

/// Top-r loadings of a symmetric second-moment matrix: unit eigenvectors
/// scaled by √p so that ÂᵀÂ/p = I_r, with S·Â = Â·V on the retained
/// eigenvalues.
pub fn principal_loadings(s: &DMatrix<f64>, r: usize) -> Result<(LoadingMatrix, EigenSpectrum)> {
    let p = s.nrows();
    if s.ncols() != p {
        return Err(FasmError::Dimension(format!(
            "principal_loadings: matrix is {}x{}, expected square",
            s.nrows(),
            s.ncols()
        )));
    }
    if r > p {
        return Err(FasmError::InvalidArgument(format!(
            "requested {r} factors from a {p}x{p} moment matrix"
        )));
    }
    let spectrum = sorted_eigen(s);
    let mut loadings = DMatrix::zeros(p, r);
    let sqrt_p = (p as f64).sqrt();
    for j in 0..r {
        loadings.set_column(j, &(spectrum.vectors.column(j) * sqrt_p));
    }
    Ok((LoadingMatrix { matrix: loadings }, spectrum))
}

/// Modified eigenvalue-ratio factor-count rule.
///
/// Computes ER(k) = υ_k/υ_{k+1} for k = 1..kmax; returns argmax_k ER(k)
/// (smallest k on ties) when the largest ratio exceeds the second largest
/// by more than the fraction `q`, and 0 otherwise — a flat spectrum has
/// near-equal ratios and yields no factors.
pub fn select_num_factors(eigenvalues: &[f64], kmax: usize, q: f64) -> Result<usize> {
    if kmax < 2 {
        return Err(FasmError::InvalidArgument(format!(
            "eigenvalue-ratio rule needs kmax >= 2, got {kmax}"
        )));
    }
    if !(0.0..1.0).contains(&q) {
        return Err(FasmError::InvalidArgument(format!(
            "threshold q must lie in (0,1), got {q}"
        )));
    }
    if eigenvalues.len() < kmax + 1 {
        return Err(FasmError::InvalidArgument(format!(
            "need at least kmax+1 = {} eigenvalues, got {}",
            kmax + 1,
            eigenvalues.len()
        )));
    }
    for (i, &v) in eigenvalues.iter().take(kmax + 1).enumerate() {
        if !(v > 0.0) {
            return Err(FasmError::InvalidArgument(format!(
                "eigenvalue {i} within the first kmax+1 is not positive ({v}); truncate the spectrum first"
            )));
        }
    }
    let ratios: Vec<f64> = (0..kmax)
        .map(|k| eigenvalues[k] / eigenvalues[k + 1])
        .collect();
    let mut best_k = 0usize;
    for (k, &er) in ratios.iter().enumerate() {
        if er > ratios[best_k] {
            best_k = k;
        }
    }
    let er1 = ratios[best_k];
    let er2 = ratios
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != best_k)
        .map(|(_, &er)| er)
        .fold(f64::NEG_INFINITY, f64::max);
    if (er1 - er2) / er1 > q {
        Ok(best_k + 1)
    } else {
        Ok(0)
    }
}

/// Complementary projector M = I_p − ÂÂᵀ/p; the identity when r = 0.
pub fn projection_complement(loadings: &LoadingMatrix) -> Result<ProjectionMatrix> {
    let p = loadings.num_coordinates();
    let r = loadings.num_factors();
    if r == 0 {
        return Ok(ProjectionMatrix::identity(p));
    }
    // revalidate: a drifted constraint breaks idempotency downstream
    LoadingMatrix::new(loadings.matrix.clone())?;
    let mut m = DMatrix::identity(p, p);
    m -= loadings.matrix() * loadings.matrix().transpose() / p as f64;
    Ok(ProjectionMatrix { matrix: m })
}
