//! The factor-augmented smoothing estimator: alternate a roughness-
//! penalized ridge solve for the basis coefficients with a principal
//! components step for the loadings, re-selecting the penalty weight by
//! mean generalized cross-validation at every step. Forcing the factor
//! count to zero degenerates the procedure to the plain penalized
//! smoother used as the comparison baseline.

use nalgebra::{Cholesky, DMatrix};

use crate::basis::{evaluate_basis, penalty_matrix, BasisMatrix, BasisSystem, Grid, PenaltyMatrix};
use crate::error::{FasmError, Result};
use crate::factor::{
    principal_loadings, projection_complement, residual_second_moment, sorted_eigen,
    LoadingMatrix, ProjectionMatrix,
};

/// How the number of factors is chosen at each iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FactorRule {
    /// Re-select every iteration by the eigenvalue-ratio rule.
    /// `kmax = None` defaults to min(8, ⌊min(n,p)/2⌋).
    Auto { kmax: Option<usize>, q: f64 },
    /// Keep a fixed factor count.
    Fixed(usize),
    /// No factor component: the fit is the plain penalized smoother.
    None,
}

/// Which residual enters the mGCV numerator. The penalty solve minimizes
/// the projected residual, which keeps the score consistent with the
/// degrees of freedom; the raw variant is exposed for sensitivity checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MgcvResidual {
    Projected,
    Raw,
}

/// Grid of candidate penalty weights.
#[derive(Debug, Clone, PartialEq)]
pub enum AlphaGrid {
    /// `count` log-spaced values spanning [min, max] · (p/K).
    Scaled { min: f64, max: f64, count: usize },
    /// Values used as given.
    Explicit(Vec<f64>),
}

impl AlphaGrid {
    /// Materialize the grid for a p×K design, sorted ascending.
    pub fn resolve(&self, p: usize, k: usize) -> Result<Vec<f64>> {
        let mut grid = match self {
            AlphaGrid::Scaled { min, max, count } => {
                if !(*min > 0.0 && *max >= *min) || *count == 0 {
                    return Err(FasmError::InvalidArgument(format!(
                        "scaled alpha grid requires 0 < min <= max and count >= 1, got [{min}, {max}] x{count}"
                    )));
                }
                let scale = p as f64 / k as f64;
                if *count == 1 {
                    vec![min * scale]
                } else {
                    let (lo, hi) = (min.ln(), max.ln());
                    (0..*count)
                        .map(|i| (lo + (hi - lo) * i as f64 / (*count as f64 - 1.0)).exp() * scale)
                        .collect()
                }
            }
            AlphaGrid::Explicit(values) => {
                if values.is_empty() {
                    return Err(FasmError::InvalidArgument("alpha grid is empty".into()));
                }
                if values.iter().any(|a| !a.is_finite() || *a < 0.0) {
                    return Err(FasmError::InvalidArgument(
                        "alpha grid values must be finite and nonnegative".into(),
                    ));
                }
                values.clone()
            }
        };
        grid.sort_by(|a, b| a.partial_cmp(b).expect("finite alphas"));
        Ok(grid)
    }
}

/// Estimator configuration. The estimator itself is deterministic: no
/// randomness enters the fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FasmConfig {
    pub alpha_grid: AlphaGrid,
    /// Convergence threshold on ‖Ĉ⁽ᵗ⁺¹⁾ − Ĉ⁽ᵗ⁾‖_F;
    /// `None` defaults to 1e-6·√(K·n).
    pub delta: Option<f64>,
    pub max_iterations: usize,
    pub factor_rule: FactorRule,
    pub mgcv_residual: MgcvResidual,
}

impl Default for FasmConfig {
    fn default() -> Self {
        Self {
            alpha_grid: AlphaGrid::Scaled {
                min: 1e-6,
                max: 1e4,
                count: 40,
            },
            delta: None,
            max_iterations: 100,
            factor_rule: FactorRule::Auto {
                kmax: None,
                q: 0.5,
            },
            mgcv_residual: MgcvResidual::Projected,
        }
    }
}

impl FasmConfig {
    /// Baseline smoother configuration (no factor component).
    pub fn bsmooth() -> Self {
        Self {
            factor_rule: FactorRule::None,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(FasmError::InvalidArgument(
                "max_iterations must be at least 1".into(),
            ));
        }
        if let Some(d) = self.delta {
            if !(d > 0.0) {
                return Err(FasmError::InvalidArgument(format!(
                    "delta must be positive, got {d}"
                )));
            }
        }
        if let FactorRule::Auto { q, .. } = self.factor_rule {
            if !(0.0..1.0).contains(&q) {
                return Err(FasmError::InvalidArgument(format!(
                    "factor threshold q must lie in (0,1), got {q}"
                )));
            }
        }
        Ok(())
    }
}

/// A complete fit.
#[derive(Debug, Clone)]
pub struct FasmFit {
    /// Basis coefficients Ĉ, K×n.
    pub c_hat: DMatrix<f64>,
    /// Loadings Â, p×r.
    pub a_hat: LoadingMatrix,
    /// Factor scores F̂, n×r.
    pub f_hat: DMatrix<f64>,
    /// Ê = Y − ΦĈ − ÂF̂ᵀ, p×n.
    pub residuals: DMatrix<f64>,
    /// Penalty weight chosen at each iteration (initial solve included).
    pub alpha_trace: Vec<f64>,
    /// Selected factor count.
    pub r: usize,
    /// Equivalent degrees of freedom of the final smoothing operator.
    pub df: f64,
    /// df + r.
    pub model_df: f64,
    /// Alternation rounds performed after the initial solve.
    pub iterations: usize,
    pub converged: bool,
    /// Final mGCV score.
    pub mgcv: f64,
}

impl FasmFit {
    /// Penalty weight of the final iterate.
    pub fn alpha(&self) -> f64 {
        *self
            .alpha_trace
            .last()
            .expect("a fit always selects at least one alpha")
    }
}

/// Result of one mGCV search over the alpha grid.
#[derive(Debug, Clone)]
pub struct AlphaSelection {
    pub alpha: f64,
    pub c_hat: DMatrix<f64>,
    pub df: f64,
    pub score: f64,
}

fn check_ridge_dims(
    y: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    r: &PenaltyMatrix,
    m: &ProjectionMatrix,
) -> Result<()> {
    let (p, k) = (phi.nrows(), phi.ncols());
    if y.nrows() != p || r.nrows() != k || r.ncols() != k || m.dim() != p {
        return Err(FasmError::Dimension(format!(
            "ridge solve: Y is {}x{}, Phi is {p}x{k}, R is {}x{}, M is {}x{}",
            y.nrows(),
            y.ncols(),
            r.nrows(),
            r.ncols(),
            m.dim(),
            m.dim()
        )));
    }
    Ok(())
}

/// Factor the penalized normal matrix ΦᵀMΦ + αR, rejecting systems whose
/// condition estimate (from the Cholesky diagonal) exceeds 1e12.
fn penalized_cholesky(
    phim_phi: &DMatrix<f64>,
    r: &PenaltyMatrix,
    alpha: f64,
) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    if !(alpha >= 0.0) {
        return Err(FasmError::InvalidArgument(format!(
            "alpha must be nonnegative, got {alpha}"
        )));
    }
    let mut g = phim_phi + r * alpha;
    let k = g.nrows();
    for i in 0..k {
        for j in 0..i {
            let v = 0.5 * (g[(i, j)] + g[(j, i)]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    let chol = Cholesky::new(g).ok_or(FasmError::Singular { alpha })?;
    let l = chol.l_dirty();
    let mut dmin = f64::INFINITY;
    let mut dmax = 0.0f64;
    for i in 0..k {
        let d = l[(i, i)];
        dmin = dmin.min(d);
        dmax = dmax.max(d);
    }
    if !(dmin > 0.0) || (dmax / dmin).powi(2) > 1e12 {
        return Err(FasmError::Singular { alpha });
    }
    Ok(chol)
}

/// Penalized projected least squares: solve
/// (ΦᵀMΦ + αR) Ĉ = ΦᵀM Y for all subjects via one Cholesky factorization.
pub fn ridge_smooth(
    y: &DMatrix<f64>,
    phi: &BasisMatrix,
    r: &PenaltyMatrix,
    alpha: f64,
    m: &ProjectionMatrix,
) -> Result<DMatrix<f64>> {
    check_ridge_dims(y, phi, r, m)?;
    let phim = phi.transpose() * m.matrix();
    let phim_phi = &phim * phi;
    let chol = penalized_cholesky(&phim_phi, r, alpha)?;
    let rhs = &phim * y;
    Ok(chol.solve(&rhs))
}

/// Equivalent degrees of freedom of the penalized smoother,
/// trace[Φ(ΦᵀMΦ + αR)⁻¹ΦᵀM], computed as the trace of the K×K product
/// (ΦᵀMΦ + αR)⁻¹(ΦᵀMΦ) so no p×p hat matrix is formed.
pub fn equivalent_df(
    phi: &BasisMatrix,
    r: &PenaltyMatrix,
    alpha: f64,
    m: &ProjectionMatrix,
) -> Result<f64> {
    if phi.nrows() != m.dim() || r.nrows() != phi.ncols() {
        return Err(FasmError::Dimension(
            "equivalent_df: Phi, R, M are not conformable".into(),
        ));
    }
    let phim_phi = phi.transpose() * m.matrix() * phi;
    let chol = penalized_cholesky(&phim_phi, r, alpha)?;
    Ok(chol.solve(&phim_phi).trace())
}

/// Mean generalized cross-validation score
/// (1/n) Σ_i p·SSE_i / (p − df)², with SSE_i the squared norm of the
/// (projected or raw) residual of subject i.
pub fn mgcv_score(
    y: &DMatrix<f64>,
    c_hat: &DMatrix<f64>,
    phi: &BasisMatrix,
    m: &ProjectionMatrix,
    df: f64,
    residual: MgcvResidual,
) -> Result<f64> {
    let (p, n) = (y.nrows(), y.ncols());
    if phi.nrows() != p || phi.ncols() != c_hat.nrows() || c_hat.ncols() != n || m.dim() != p {
        return Err(FasmError::Dimension(
            "mgcv_score: inputs are not conformable".into(),
        ));
    }
    if df >= p as f64 {
        return Err(FasmError::DegenerateTuning(format!(
            "df = {df} is not below p = {p}"
        )));
    }
    let raw = y - phi * c_hat;
    let sse_total = match residual {
        MgcvResidual::Projected => (m.matrix() * raw).norm_squared(),
        MgcvResidual::Raw => raw.norm_squared(),
    };
    let denom = (p as f64 - df).powi(2);
    Ok(p as f64 * sse_total / (n as f64 * denom))
}

/// Evaluate the mGCV score over a grid of penalty weights and return the
/// minimizer (smallest alpha on ties). Grid values whose system is
/// singular are skipped; if every value fails, the aggregated
/// singularity error is returned.
pub fn select_alpha(
    y: &DMatrix<f64>,
    phi: &BasisMatrix,
    r: &PenaltyMatrix,
    m: &ProjectionMatrix,
    alpha_grid: &[f64],
    residual: MgcvResidual,
) -> Result<AlphaSelection> {
    if alpha_grid.is_empty() {
        return Err(FasmError::InvalidArgument("alpha grid is empty".into()));
    }
    check_ridge_dims(y, phi, r, m)?;
    let (p, n) = (y.nrows(), y.ncols());
    let phim = phi.transpose() * m.matrix();
    let phim_phi = &phim * phi;
    let rhs = &phim * y;

    let mut ascending: Vec<f64> = alpha_grid.to_vec();
    ascending.sort_by(|a, b| a.partial_cmp(b).expect("finite alphas"));

    let mut best: Option<AlphaSelection> = None;
    for &alpha in &ascending {
        let chol = match penalized_cholesky(&phim_phi, r, alpha) {
            Ok(c) => c,
            Err(_) => continue,
        };
        let c_hat = chol.solve(&rhs);
        let df = chol.solve(&phim_phi).trace();
        if df >= p as f64 {
            continue;
        }
        let raw = y - phi * &c_hat;
        let sse_total = match residual {
            MgcvResidual::Projected => (m.matrix() * &raw).norm_squared(),
            MgcvResidual::Raw => raw.norm_squared(),
        };
        let score = p as f64 * sse_total / (n as f64 * (p as f64 - df).powi(2));
        let better = match &best {
            None => true,
            Some(b) => score < b.score,
        };
        if better {
            best = Some(AlphaSelection {
                alpha,
                c_hat,
                df,
                score,
            });
        }
    }
    best.ok_or(FasmError::SingularGrid(ascending.len()))
}

/// Factor scores given coefficients and loadings:
/// F̂ᵀ = Âᵀ(Y − ΦĈ)/p, the least squares solution under ÂᵀÂ/p = I_r.
pub fn estimate_factors(
    y: &DMatrix<f64>,
    phi: &BasisMatrix,
    c_hat: &DMatrix<f64>,
    a_hat: &LoadingMatrix,
) -> Result<DMatrix<f64>> {
    let (p, n) = (y.nrows(), y.ncols());
    if phi.nrows() != p
        || phi.ncols() != c_hat.nrows()
        || c_hat.ncols() != n
        || a_hat.num_coordinates() != p
    {
        return Err(FasmError::Dimension(
            "estimate_factors: inputs are not conformable".into(),
        ));
    }
    let z = y - phi * c_hat;
    Ok(z.transpose() * a_hat.matrix() / p as f64)
}

/// Evaluate fitted curves ĉ_iᵀΦ(u) on an arbitrary grid inside the domain.
pub fn fitted_curves(
    c_hat: &DMatrix<f64>,
    system: &BasisSystem,
    eval_grid: &Grid,
) -> Result<DMatrix<f64>> {
    if c_hat.nrows() != system.num_functions() {
        return Err(FasmError::Dimension(format!(
            "fitted_curves: C has {} rows but the system has {} functions",
            c_hat.nrows(),
            system.num_functions()
        )));
    }
    Ok(evaluate_basis(system, eval_grid)? * c_hat)
}

/// Model degrees of freedom: smoother df plus the retained factor count.
pub fn model_df(fit: &FasmFit) -> f64 {
    fit.df + fit.r as f64
}

/// Penalized projected sum of squares
/// (1/np)·Σ_i [‖M(Y_i − Φc_i)‖² + α c_iᵀRc_i], the objective each
/// coefficient solve minimizes at fixed (M, α).
pub fn projected_objective(
    y: &DMatrix<f64>,
    phi: &BasisMatrix,
    r: &PenaltyMatrix,
    m: &ProjectionMatrix,
    alpha: f64,
    c: &DMatrix<f64>,
) -> f64 {
    let (p, n) = (y.nrows(), y.ncols());
    let resid = m.matrix() * (y - phi * c);
    let pen = (c.transpose() * r * c).trace();
    (resid.norm_squared() + alpha * pen) / (n * p) as f64
}

fn default_kmax(n: usize, p: usize) -> usize {
    8.min(n.min(p) / 2)
}

/// Pick the factor count for the current residual spectrum.
///
/// The spectrum is truncated to its numerically positive part before the
/// ratio rule runs; a spectrum at the rounding floor of the data and a
/// spectrum too short for the rule both yield zero factors.
fn auto_factor_count(
    spectrum: &[f64],
    kmax: Option<usize>,
    q: f64,
    n: usize,
    p: usize,
    data_scale: f64,
) -> Result<usize> {
    let lam_max = spectrum.first().copied().unwrap_or(0.0);
    if lam_max <= 1e-14 * data_scale {
        return Ok(0);
    }
    let positive: Vec<f64> = spectrum
        .iter()
        .copied()
        .take_while(|&v| v > 1e-12 * lam_max)
        .collect();
    let kmax = kmax.unwrap_or_else(|| default_kmax(n, p));
    let effective_kmax = kmax.min(positive.len().saturating_sub(1));
    if effective_kmax < 2 {
        return Ok(0);
    }
    crate::factor::select_num_factors(&positive, effective_kmax, q)
}

/// Fit the factor-augmented smoothing model.
///
/// Starting from zero loadings (the plain ridge smoother), alternate:
/// extract loadings from the residual second moment with the factor count
/// chosen by `factor_rule`, then re-select alpha by mGCV and re-solve the
/// coefficients under the complementary projector. Stops when the
/// coefficient update falls below delta in Frobenius norm; hitting
/// `max_iterations` first returns the fit with `converged = false`.
pub fn fit_fasm(
    y: &DMatrix<f64>,
    system: &BasisSystem,
    grid: &Grid,
    config: &FasmConfig,
) -> Result<FasmFit> {
    config.validate()?;
    let (p, n) = (y.nrows(), y.ncols());
    if grid.len() != p {
        return Err(FasmError::Dimension(format!(
            "Y has {p} rows but the grid has {} points",
            grid.len()
        )));
    }
    if n < 2 {
        return Err(FasmError::InvalidArgument(format!(
            "need at least 2 subjects, got {n}"
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(FasmError::NonFinite(
            "data matrix contains NaN or infinite entries".into(),
        ));
    }
    if let FactorRule::Fixed(r) = config.factor_rule {
        if r > p {
            return Err(FasmError::InvalidArgument(format!(
                "fixed factor count {r} exceeds the dimension p = {p}"
            )));
        }
    }

    let phi = evaluate_basis(system, grid)?;
    let pen = penalty_matrix(system)?;
    let k = system.num_functions();
    let alphas = config.alpha_grid.resolve(p, k)?;
    let delta = config.delta.unwrap_or(1e-6 * ((k * n) as f64).sqrt());
    let data_scale = y.norm_squared() / (n * p) as f64;

    let mut m = ProjectionMatrix::identity(p);
    let mut selection = select_alpha(y, &phi, &pen, &m, &alphas, config.mgcv_residual)?;
    let mut alpha_trace = vec![selection.alpha];
    let mut a_hat = LoadingMatrix::empty(p);
    let mut r_selected = 0usize;
    let mut converged = false;
    let mut iterations = 0usize;

    for t in 1..=config.max_iterations {
        let s = residual_second_moment(y, &phi, &selection.c_hat)?;
        r_selected = match config.factor_rule {
            FactorRule::None => 0,
            FactorRule::Fixed(r) => r,
            FactorRule::Auto { kmax, q } => {
                let spectrum = sorted_eigen(&s);
                auto_factor_count(&spectrum.values, kmax, q, n, p, data_scale)?
            }
        };
        let (loadings, _) = principal_loadings(&s, r_selected)?;
        m = projection_complement(&loadings)?;
        a_hat = loadings;

        let next = select_alpha(y, &phi, &pen, &m, &alphas, config.mgcv_residual)?;
        alpha_trace.push(next.alpha);
        let step = (&next.c_hat - &selection.c_hat).norm();
        selection = next;
        iterations = t;
        if step < delta {
            converged = true;
            break;
        }
    }

    let f_hat = estimate_factors(y, &phi, &selection.c_hat, &a_hat)?;
    let residuals = y - &phi * &selection.c_hat - a_hat.matrix() * f_hat.transpose();
    let df = selection.df;
    Ok(FasmFit {
        c_hat: selection.c_hat,
        a_hat,
        f_hat,
        residuals,
        alpha_trace,
        r: r_selected,
        df,
        model_df: df + r_selected as f64,
        iterations,
        converged,
        mgcv: selection.score,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_bspline_system, Interval};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit() -> Interval {
        Interval::new(0.0, 1.0).unwrap()
    }

    fn cubic_system(interior: usize) -> BasisSystem {
        let knots: Vec<f64> = (1..=interior)
            .map(|i| i as f64 / (interior + 1) as f64)
            .collect();
        build_bspline_system(unit(), &knots, 4).unwrap()
    }

    #[test]
    fn ridge_interpolates_with_square_design() {
        // M = I, alpha = 0, Phi square invertible → Ĉ = Φ⁻¹Y
        let system = cubic_system(0);
        let grid = Grid::new(vec![0.0, 0.3, 0.7, 1.0]).unwrap();
        let phi = evaluate_basis(&system, &grid).unwrap();
        let r = DMatrix::zeros(4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = DMatrix::from_fn(4, 3, |_, _| rng.gen_range(-1.0..1.0));
        let c = ridge_smooth(&y, &phi, &r, 0.0, &ProjectionMatrix::identity(4)).unwrap();
        assert!((&phi * &c - &y).amax() < 1e-10);
    }

    #[test]
    fn ridge_scalar_mean_case() {
        // p=2, K=1, Φ=(1,1)ᵀ, R=(0): ĉ solves 2ĉ = y1+y2 for any alpha
        let phi = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let r = DMatrix::zeros(1, 1);
        let y = DMatrix::from_row_slice(2, 1, &[1.0, 3.0]);
        for alpha in [0.0, 0.5, 100.0] {
            let c = ridge_smooth(&y, &phi, &r, alpha, &ProjectionMatrix::identity(2)).unwrap();
            assert_abs_diff_eq!(c[(0, 0)], 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn ridge_satisfies_normal_equations() {
        let system = cubic_system(9);
        let grid = Grid::equispaced(unit(), 51).unwrap();
        let phi = evaluate_basis(&system, &grid).unwrap();
        let r = penalty_matrix(&system).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y = DMatrix::from_fn(51, 7, |_, _| rng.gen_range(-2.0..2.0));
        let s_mat = {
            let a = DMatrix::from_fn(51, 3, |_, _| rng.gen_range(-1.0..1.0));
            &a * a.transpose() / 51.0
        };
        let (loadings, _) = principal_loadings(&s_mat, 2).unwrap();
        let m = projection_complement(&loadings).unwrap();
        let alpha = 0.37;
        let c = ridge_smooth(&y, &phi, &r, alpha, &m).unwrap();
        let g = phi.transpose() * m.matrix() * &phi + &r * alpha;
        let rhs = phi.transpose() * m.matrix() * &y;
        let resid = (&g * &c - &rhs).norm();
        assert!(resid < 1e-8 * (1.0 + rhs.norm()), "residual {resid}");
    }

    #[test]
    fn ridge_reports_singular_alpha() {
        // K=2 with identical columns: unpenalized system is singular
        let phi = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        let r = DMatrix::zeros(2, 2);
        let y = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let err = ridge_smooth(&y, &phi, &r, 0.0, &ProjectionMatrix::identity(3)).unwrap_err();
        assert!(matches!(err, FasmError::Singular { alpha } if alpha == 0.0));
    }

    #[test]
    fn df_equals_k_unpenalized_and_scalar_formula() {
        let system = cubic_system(9);
        let grid = Grid::equispaced(unit(), 51).unwrap();
        let phi = evaluate_basis(&system, &grid).unwrap();
        let r = penalty_matrix(&system).unwrap();
        let m = ProjectionMatrix::identity(51);
        let df0 = equivalent_df(&phi, &r, 0.0, &m).unwrap();
        assert_abs_diff_eq!(df0, 13.0, epsilon = 1e-8);

        // K=1, Φ=(1,1)ᵀ, R=(1), α=2 → df = 2/(2+2)
        let phi1 = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let r1 = DMatrix::from_row_slice(1, 1, &[1.0]);
        let df = equivalent_df(&phi1, &r1, 2.0, &ProjectionMatrix::identity(2)).unwrap();
        assert_abs_diff_eq!(df, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn df_limits_to_penalty_null_space_dimension() {
        let system = cubic_system(9);
        let grid = Grid::equispaced(unit(), 51).unwrap();
        let phi = evaluate_basis(&system, &grid).unwrap();
        let r = penalty_matrix(&system).unwrap();
        let m = ProjectionMatrix::identity(51);
        let df = equivalent_df(&phi, &r, 1e8, &m).unwrap();
        // cubic-spline penalty annihilates constants and linears only
        assert!((df - 2.0).abs() < 1e-3, "df at huge alpha = {df}");

        // p-side oracle at a well-conditioned alpha: trace of the
        // explicit hat matrix Φ(ΦᵀΦ + αR)⁻¹Φᵀ
        let alpha = 10.0;
        let df10 = equivalent_df(&phi, &r, alpha, &m).unwrap();
        let g = phi.transpose() * &phi + &r * alpha;
        let hat = &phi * g.lu().solve(&phi.transpose()).unwrap();
        assert_abs_diff_eq!(df10, hat.trace(), epsilon = 1e-8);
    }

    #[test]
    fn mgcv_hand_values() {
        let phi = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let m = ProjectionMatrix::identity(2);

        // perfect fit → 0
        let c = DMatrix::from_row_slice(1, 1, &[1.5]);
        let y = &phi * &c;
        let s0 = mgcv_score(&y, &c, &phi, &m, 1.0, MgcvResidual::Projected).unwrap();
        assert_eq!(s0, 0.0);

        // n=1, p=2, SSE=1, df=0 → 2·1/4 = 0.5
        let y2 = DMatrix::from_row_slice(2, 1, &[2.5, 1.5]); // residual (1, 0)
        let s = mgcv_score(&y2, &c, &phi, &m, 0.0, MgcvResidual::Projected).unwrap();
        assert_abs_diff_eq!(s, 0.5, epsilon = 1e-14);

        // homogeneity: doubling residuals quadruples the score
        let y4 = DMatrix::from_row_slice(2, 1, &[3.5, 1.5]); // residual (2, 0)
        let s4 = mgcv_score(&y4, &c, &phi, &m, 0.0, MgcvResidual::Projected).unwrap();
        assert_abs_diff_eq!(s4, 4.0 * s, epsilon = 1e-12);

        // df ≥ p is degenerate
        assert!(mgcv_score(&y2, &c, &phi, &m, 2.0, MgcvResidual::Projected).is_err());
    }

    #[test]
    fn select_alpha_contracts() {
        let system = cubic_system(5);
        let grid = Grid::equispaced(unit(), 31).unwrap();
        let phi = evaluate_basis(&system, &grid).unwrap();
        let r = penalty_matrix(&system).unwrap();
        let m = ProjectionMatrix::identity(31);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let truth = DMatrix::from_fn(9, 4, |_, _| rng.gen_range(-1.5..1.5));
        let y = &phi * &truth;

        // singleton grid returns its value
        let sel = select_alpha(&y, &phi, &r, &m, &[0.25], MgcvResidual::Projected).unwrap();
        assert_eq!(sel.alpha, 0.25);

        // noiseless truth in span: smallest grid alpha wins
        let grid_alphas = [0.0, 1e-4, 1e-2, 1.0, 100.0];
        let sel = select_alpha(&y, &phi, &r, &m, &grid_alphas, MgcvResidual::Projected).unwrap();
        assert_eq!(sel.alpha, 0.0);

        // minimizer contract: returned score ≤ every grid value's score
        let mut rng2 = ChaCha8Rng::seed_from_u64(4);
        let noisy = &y + DMatrix::from_fn(31, 4, |_, _| rng2.gen_range(-0.5..0.5));
        let sel =
            select_alpha(&noisy, &phi, &r, &m, &grid_alphas, MgcvResidual::Projected).unwrap();
        for &alpha in &grid_alphas {
            let c = ridge_smooth(&noisy, &phi, &r, alpha, &m).unwrap();
            let df = equivalent_df(&phi, &r, alpha, &m).unwrap();
            let score = mgcv_score(&noisy, &c, &phi, &m, df, MgcvResidual::Projected).unwrap();
            assert!(sel.score <= score + 1e-12);
        }
    }

    #[test]
    fn estimate_factors_recovers_planted_scores() {
        let p = 40;
        let n = 9;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = {
            let a = DMatrix::from_fn(p, p, |_, _| rng.gen_range(-1.0..1.0));
            &a * a.transpose() / p as f64
        };
        let (a_hat, _) = principal_loadings(&s, 3).unwrap();
        let f0 = DMatrix::from_fn(n, 3, |_, _| rng.gen_range(-2.0..2.0));
        let phi = DMatrix::from_fn(p, 4, |_, _| rng.gen_range(-1.0..1.0));
        let c = DMatrix::zeros(4, n);
        let y = a_hat.matrix() * f0.transpose();
        let f = estimate_factors(&y, &phi, &c, &a_hat).unwrap();
        assert!((f - &f0).amax() < 1e-10);

        // zero residual → zero factors
        let f = estimate_factors(&DMatrix::zeros(p, n), &phi, &c, &a_hat).unwrap();
        assert!(f.amax() == 0.0);
    }

    #[test]
    fn factor_reconstruction_is_projection_onto_loading_space() {
        let p = 30;
        let n = 6;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = {
            let a = DMatrix::from_fn(p, p, |_, _| rng.gen_range(-1.0..1.0));
            &a * a.transpose() / p as f64
        };
        let (a_hat, _) = principal_loadings(&s, 4).unwrap();
        let z = DMatrix::from_fn(p, n, |_, _| rng.gen_range(-1.0..1.0));
        let phi = DMatrix::from_fn(p, 3, |_, _| rng.gen_range(-1.0..1.0));
        let c = DMatrix::zeros(3, n);
        let f = estimate_factors(&z, &phi, &c, &a_hat).unwrap();
        let recon = a_hat.matrix() * f.transpose();
        let projector = a_hat.matrix() * a_hat.matrix().transpose() / p as f64;
        assert!((recon - projector * &z).amax() < 1e-10);
    }

    #[test]
    fn fitted_curves_reproduce_basis_functions() {
        let system = cubic_system(3);
        let k = system.num_functions();
        let eval = Grid::equispaced(unit(), 41).unwrap();
        let phi = evaluate_basis(&system, &eval).unwrap();
        for kk in 0..k {
            let mut c = DMatrix::zeros(k, 1);
            c[(kk, 0)] = 1.0;
            let curves = fitted_curves(&c, &system, &eval).unwrap();
            for j in 0..eval.len() {
                assert_abs_diff_eq!(curves[(j, 0)], phi[(j, kk)], epsilon = 1e-14);
            }
        }
        // zero coefficients → zero curves
        let z = fitted_curves(&DMatrix::zeros(k, 2), &system, &eval).unwrap();
        assert_eq!(z.iter().filter(|v| **v != 0.0).count(), 0);
    }

    #[test]
    fn noiseless_truth_in_span_is_recovered_exactly() {
        let system = cubic_system(9);
        let grid = Grid::equispaced(unit(), 51).unwrap();
        let phi = evaluate_basis(&system, &grid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let truth = DMatrix::from_fn(13, 10, |_, _| rng.gen_range(-2.0..2.0));
        let y = &phi * &truth;
        let config = FasmConfig {
            alpha_grid: AlphaGrid::Explicit(vec![0.0, 1e-3, 1.0]),
            ..FasmConfig::default()
        };
        let fit = fit_fasm(&y, &system, &grid, &config).unwrap();
        assert!((&fit.c_hat - &truth).amax() < 1e-8);
        assert_eq!(fit.r, 0);
        assert!(fit.converged);
    }

    #[test]
    fn factor_rule_none_matches_pure_smoother_exactly() {
        let system = cubic_system(9);
        let grid = Grid::equispaced(unit(), 51).unwrap();
        let phi = evaluate_basis(&system, &grid).unwrap();
        let pen = penalty_matrix(&system).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y = DMatrix::from_fn(51, 12, |_, _| rng.gen_range(-2.0..2.0));
        let fit = fit_fasm(&y, &system, &grid, &FasmConfig::bsmooth()).unwrap();
        assert_eq!(fit.r, 0);
        assert!(fit.converged);

        let m = ProjectionMatrix::identity(51);
        let alphas = FasmConfig::default().alpha_grid.resolve(51, 13).unwrap();
        let sel = select_alpha(&y, &phi, &pen, &m, &alphas, MgcvResidual::Projected).unwrap();
        let direct = ridge_smooth(&y, &phi, &pen, sel.alpha, &m).unwrap();
        // identical path, identical arithmetic: exact equality required
        assert_eq!(fit.c_hat, direct);
        assert_eq!(fit.alpha(), sel.alpha);
    }

    #[test]
    fn objective_does_not_increase_when_coefficients_resolve() {
        let system = cubic_system(7);
        let grid = Grid::equispaced(unit(), 41).unwrap();
        let phi = evaluate_basis(&system, &grid).unwrap();
        let pen = penalty_matrix(&system).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let y = DMatrix::from_fn(41, 8, |_, _| rng.gen_range(-2.0..2.0));
        let s = residual_second_moment(&y, &phi, &DMatrix::zeros(11, 8)).unwrap();
        let (loadings, _) = principal_loadings(&s, 2).unwrap();
        let m = projection_complement(&loadings).unwrap();
        let alpha = 0.05;
        let c_opt = ridge_smooth(&y, &phi, &pen, alpha, &m).unwrap();
        let obj_opt = projected_objective(&y, &phi, &pen, &m, alpha, &c_opt);
        for seed in 0..5u64 {
            let mut rng2 = ChaCha8Rng::seed_from_u64(100 + seed);
            let other = DMatrix::from_fn(11, 8, |_, _| rng2.gen_range(-2.0..2.0));
            let obj_other = projected_objective(&y, &phi, &pen, &m, alpha, &other);
            assert!(obj_opt <= obj_other + 1e-10);
        }
    }

    #[test]
    fn fit_is_deterministic_and_residuals_reconstruct() {
        let system = cubic_system(9);
        let grid = Grid::equispaced(unit(), 51).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let phi = evaluate_basis(&system, &grid).unwrap();
        let truth = DMatrix::from_fn(13, 15, |_, _| rng.gen_range(-2.0..2.0));
        let noise = DMatrix::from_fn(51, 15, |_, _| rng.gen_range(-0.5..0.5));
        let common = DMatrix::from_fn(51, 1, |_, _| rng.gen_range(-1.0..1.0));
        let scores = DMatrix::from_fn(1, 15, |_, _| rng.gen_range(-1.0..1.0));
        let y = &phi * &truth + &common * &scores + noise;

        let config = FasmConfig::default();
        let fit1 = fit_fasm(&y, &system, &grid, &config).unwrap();
        let fit2 = fit_fasm(&y, &system, &grid, &config).unwrap();
        assert_eq!(fit1.c_hat, fit2.c_hat);
        assert_eq!(fit1.f_hat, fit2.f_hat);
        assert_eq!(fit1.alpha_trace, fit2.alpha_trace);
        assert_eq!(fit1.r, fit2.r);

        let recon = &y - &phi * &fit1.c_hat - fit1.a_hat.matrix() * fit1.f_hat.transpose();
        assert!((&recon - &fit1.residuals).amax() < 1e-10);
        assert_abs_diff_eq!(fit1.model_df, fit1.df + fit1.r as f64, epsilon = 1e-15);
        assert_abs_diff_eq!(model_df(&fit1), fit1.model_df, epsilon = 1e-15);
    }

    #[test]
    fn fit_rejects_bad_inputs() {
        let system = cubic_system(3);
        let grid = Grid::equispaced(unit(), 21).unwrap();
        let y = DMatrix::from_element(21, 3, 1.0);
        let mut bad = y.clone();
        bad[(0, 0)] = f64::NAN;
        assert!(matches!(
            fit_fasm(&bad, &system, &grid, &FasmConfig::default()),
            Err(FasmError::NonFinite(_))
        ));
        let short = DMatrix::from_element(20, 3, 1.0);
        assert!(matches!(
            fit_fasm(&short, &system, &grid, &FasmConfig::default()),
            Err(FasmError::Dimension(_))
        ));
        let single = DMatrix::from_element(21, 1, 1.0);
        assert!(matches!(
            fit_fasm(&single, &system, &grid, &FasmConfig::default()),
            Err(FasmError::InvalidArgument(_))
        ));
    }

    #[test]
    fn normal_equation_residual_at_final_iterate() {
        let system = cubic_system(9);
        let grid = Grid::equispaced(unit(), 51).unwrap();
        let phi = evaluate_basis(&system, &grid).unwrap();
        let pen = penalty_matrix(&system).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let y = DMatrix::from_fn(51, 20, |_, _| rng.gen_range(-2.0..2.0));
        let fit = fit_fasm(&y, &system, &grid, &FasmConfig::default()).unwrap();
        let m = projection_complement(&fit.a_hat).unwrap();
        let alpha = fit.alpha();
        let g = phi.transpose() * m.matrix() * &phi + &pen * alpha;
        let rhs = phi.transpose() * m.matrix() * &y;
        let resid = (&g * &fit.c_hat - &rhs).norm();
        assert!(resid < 1e-8 * (1.0 + rhs.norm()));
    }
}
