//! Seeded data generators for the simulated scenarios, the error metrics
//! used to compare methods, and Monte-Carlo experiment drivers that
//! produce summary tables (mean ± standard error per cell and method).
//!
//! Reproducibility contract: every replication draws from a ChaCha stream
//! keyed by (master seed, cell index, replication index) mixed through
//! splitmix64, so tables are bit-identical across runs and independent of
//! the execution order of replications.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::basis::{
    build_bspline_system, evaluate_basis, smoothing_spline_system, BasisKind, BasisSystem,
    FourierScale, Grid, Interval,
};
use crate::covariance::{frobenius_mse, model_covariance, sample_covariance};
use crate::error::{FasmError, Result};
use crate::estimator::{fit_fasm, FactorRule, FasmConfig, FasmFit};
use crate::factor::sorted_eigen;

/// Which simulated data-generating process to run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScenarioKind {
    /// 13 cubic B-splines, homoscedastic coefficients, 4 factors.
    Setting1,
    /// 5 cubic B-splines with decaying coefficient scales, 4 factors.
    Setting2,
    /// As Setting1 but with 21 basis functions.
    Setting3,
    /// Fourier curves whose frequencies double halfway; fitted with the
    /// first-half basis, so the misfit shows up as spiked residuals.
    ChangingBasis,
    /// Smooth random mean with a sharp rise of the given height at
    /// u = 0.5, on top of coarse B-spline curves.
    StepJump { delta: f64 },
    /// Fourier curves fitted with the knots-at-every-point spline layout.
    SplineSetting,
}

impl ScenarioKind {
    fn tag(&self) -> u64 {
        match self {
            ScenarioKind::Setting1 => 1,
            ScenarioKind::Setting2 => 2,
            ScenarioKind::Setting3 => 3,
            ScenarioKind::ChangingBasis => 4,
            ScenarioKind::StepJump { .. } => 5,
            ScenarioKind::SplineSetting => 6,
        }
    }
}

/// A seeded data-generating configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationScenario {
    pub kind: ScenarioKind,
    pub n: usize,
    pub p: usize,
    /// Scale of the factor component (loading scale for the spline
    /// setting); ignored by the changing-basis and step-jump processes,
    /// which have no factor component.
    pub sigma: f64,
    pub seed: u64,
}

/// One generated data set with its ground truth.
#[derive(Debug, Clone)]
pub struct GeneratedData {
    /// Observations, p×n.
    pub y: DMatrix<f64>,
    /// True smooth curves on the grid, p×n.
    pub true_curves: DMatrix<f64>,
    /// Coefficients of the true curves in the generating system, K×n.
    /// Exact when the truth lies in the span; for the step-jump process
    /// these are the grid least-squares coefficients.
    pub true_c: DMatrix<f64>,
    pub true_a: DMatrix<f64>,
    pub true_f: DMatrix<f64>,
    /// Population covariance of Y conditional on the drawn loadings,
    /// assembled from the generating decomposition.
    pub population_covariance: DMatrix<f64>,
    pub grid: Grid,
    pub generating_system: BasisSystem,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix an ordered list of tags into one stream seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut state = 0x6C62_272E_07BB_0142;
    let mut out = 0;
    for &part in parts {
        state ^= part;
        out = splitmix64(&mut state);
    }
    out
}

impl SimulationScenario {
    fn validate(&self) -> Result<()> {
        if self.n < 2 || self.p < 2 {
            return Err(FasmError::InvalidArgument(format!(
                "scenario needs n >= 2 and p >= 2, got n = {}, p = {}",
                self.n, self.p
            )));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(FasmError::InvalidArgument(format!(
                "sigma must be finite and nonnegative, got {}",
                self.sigma
            )));
        }
        if let ScenarioKind::StepJump { delta } = self.kind {
            if !delta.is_finite() {
                return Err(FasmError::InvalidArgument(
                    "step-jump delta must be finite".into(),
                ));
            }
        }
        Ok(())
    }

    /// Stream seed for this scenario: the user seed mixed with a
    /// replication-free hash of the configuration.
    fn stream_seed(&self) -> u64 {
        let mut parts = vec![
            self.seed,
            self.kind.tag(),
            self.n as u64,
            self.p as u64,
            self.sigma.to_bits(),
        ];
        if let ScenarioKind::StepJump { delta } = self.kind {
            parts.push(delta.to_bits());
        }
        derive_seed(&parts)
    }
}

fn unit_interval() -> Interval {
    Interval::new(0.0, 1.0).expect("unit interval is valid")
}

fn equispaced_interior(count: usize) -> Vec<f64> {
    (1..=count)
        .map(|i| i as f64 / (count + 1) as f64)
        .collect()
}

/// The system whose span the scenario's smooth curves live in (for the
/// step jump, the system of its mean function).
pub fn generating_system(kind: ScenarioKind) -> Result<BasisSystem> {
    let domain = unit_interval();
    match kind {
        ScenarioKind::Setting1 => build_bspline_system(domain, &equispaced_interior(9), 4),
        ScenarioKind::Setting2 => build_bspline_system(domain, &equispaced_interior(1), 4),
        ScenarioKind::Setting3 => build_bspline_system(domain, &equispaced_interior(17), 4),
        ScenarioKind::ChangingBasis => {
            BasisSystem::fourier_piecewise(domain, 3, 1.0, 2.0, 0.5, 1.0, 2.0)
        }
        ScenarioKind::StepJump { .. } => build_bspline_system(domain, &equispaced_interior(21), 4),
        ScenarioKind::SplineSetting => {
            BasisSystem::fourier(domain, 4, 1.0, FourierScale::Amplitude(2.0))
        }
    }
}

/// The system each method fits with. Settings 1–3 fit with their
/// generating system; the changing-basis scenario deliberately fits the
/// whole interval with the first-half (unswitched) Fourier basis; the
/// step jump fits with its rich mean system; the spline setting uses the
/// knots-at-every-point layout.
pub fn fitting_system(kind: ScenarioKind, grid: &Grid) -> Result<BasisSystem> {
    match kind {
        ScenarioKind::ChangingBasis => BasisSystem::fourier(
            unit_interval(),
            3,
            1.0,
            FourierScale::Amplitude(2.0),
        ),
        ScenarioKind::SplineSetting => smoothing_spline_system(grid),
        other => generating_system(other),
    }
}

fn draw_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            let z: f64 = rng.sample(StandardNormal);
            m[(i, j)] = std * z;
        }
    }
    m
}

/// Greville abscissae of a B-spline system: the knot averages that
/// locate each basis function's support center.
fn greville_abscissae(system: &BasisSystem) -> Vec<f64> {
    match system.kind() {
        BasisKind::BSpline { order, knots } => {
            let k = system.num_functions();
            (0..k)
                .map(|i| {
                    let span = &knots[i + 1..i + order];
                    span.iter().sum::<f64>() / (order - 1) as f64
                })
                .collect()
        }
        _ => Vec::new(),
    }
}

/// Draw one data set. All randomness comes from a counter-based stream
/// derived from the scenario's seed and configuration hash.
pub fn generate(scenario: &SimulationScenario) -> Result<GeneratedData> {
    scenario.validate()?;
    let (n, p, sigma) = (scenario.n, scenario.p, scenario.sigma);
    let grid = Grid::equispaced(unit_interval(), p)?;
    let system = generating_system(scenario.kind)?;
    let phi = evaluate_basis(&system, &grid)?;
    let k = system.num_functions();
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.stream_seed());

    let num_factors = match scenario.kind {
        ScenarioKind::ChangingBasis | ScenarioKind::StepJump { .. } => 0,
        _ => 4,
    };

    match scenario.kind {
        ScenarioKind::Setting1 | ScenarioKind::Setting3 => {
            let true_c = draw_matrix(&mut rng, k, n, 1.5);
            let true_a = draw_matrix(&mut rng, p, num_factors, 0.6);
            let true_f = draw_matrix(&mut rng, n, num_factors, sigma);
            let noise = draw_matrix(&mut rng, p, n, 0.5);
            let true_curves = &phi * &true_c;
            let y = &true_curves + &true_a * true_f.transpose() + noise;
            let population_covariance = &phi * phi.transpose() * 1.5f64.powi(2)
                + &true_a * true_a.transpose() * sigma.powi(2)
                + DMatrix::identity(p, p) * 0.25;
            Ok(GeneratedData {
                y,
                true_curves,
                true_c,
                true_a,
                true_f,
                population_covariance,
                grid,
                generating_system: system,
            })
        }
        ScenarioKind::Setting2 => {
            let gammas = [3.0, 2.5, 2.0, 1.5, 1.0];
            let mut true_c = DMatrix::zeros(k, n);
            for j in 0..n {
                for i in 0..k {
                    let z: f64 = rng.sample(StandardNormal);
                    true_c[(i, j)] = gammas[i] * z;
                }
            }
            let true_a = draw_matrix(&mut rng, p, num_factors, 0.8);
            let true_f = draw_matrix(&mut rng, n, num_factors, sigma);
            let noise = draw_matrix(&mut rng, p, n, 0.5);
            let true_curves = &phi * &true_c;
            let y = &true_curves + &true_a * true_f.transpose() + noise;
            let sigma_c = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                k,
                gammas.iter().map(|g| g * g),
            ));
            let population_covariance = &phi * sigma_c * phi.transpose()
                + &true_a * true_a.transpose() * sigma.powi(2)
                + DMatrix::identity(p, p) * 0.25;
            Ok(GeneratedData {
                y,
                true_curves,
                true_c,
                true_a,
                true_f,
                population_covariance,
                grid,
                generating_system: system,
            })
        }
        ScenarioKind::ChangingBasis => {
            let true_c = draw_matrix(&mut rng, k, n, 0.5);
            let noise = draw_matrix(&mut rng, p, n, 0.5);
            let true_curves = &phi * &true_c;
            let y = &true_curves + &noise;
            let population_covariance =
                &phi * phi.transpose() * 0.25 + DMatrix::identity(p, p) * 0.25;
            Ok(GeneratedData {
                y,
                true_curves,
                true_c,
                true_a: DMatrix::zeros(p, 0),
                true_f: DMatrix::zeros(n, 0),
                population_covariance,
                grid,
                generating_system: system,
            })
        }
        ScenarioKind::StepJump { delta } => {
            // smooth random mean in the rich system, with the jump added
            // to the coefficients whose support centers lie past 0.5
            let mut mean_coeff = draw_matrix(&mut rng, k, 1, 1.0);
            for (i, xi) in greville_abscissae(&system).iter().enumerate() {
                if *xi > 0.5 {
                    mean_coeff[(i, 0)] += delta;
                }
            }
            let mu = &phi * &mean_coeff;

            // coarse subject-level variation
            let subject_system = build_bspline_system(unit_interval(), &[0.25, 0.5, 0.75], 4)?;
            let phi7 = evaluate_basis(&subject_system, &grid)?;
            let subject_c = draw_matrix(&mut rng, 7, n, 1.5);
            let noise = draw_matrix(&mut rng, p, n, 0.5);

            let ones_row = DMatrix::from_element(1, n, 1.0);
            let true_curves = &mu * ones_row + &phi7 * &subject_c;
            let y = &true_curves + &noise;

            // grid least-squares representation of the truth in the
            // generating (fitting) system
            let gram = phi.transpose() * &phi;
            let true_c = gram
                .lu()
                .solve(&(phi.transpose() * &true_curves))
                .ok_or_else(|| {
                    FasmError::InvalidArgument(
                        "step-jump generating system is rank deficient on this grid".into(),
                    )
                })?;

            let sigma_c7 = DMatrix::identity(7, 7) * 1.5f64.powi(2);
            let population_covariance = &phi7 * sigma_c7 * phi7.transpose()
                + DMatrix::identity(p, p) * 0.25;
            Ok(GeneratedData {
                y,
                true_curves,
                true_c,
                true_a: DMatrix::zeros(p, 0),
                true_f: DMatrix::zeros(n, 0),
                population_covariance,
                grid,
                generating_system: system,
            })
        }
        ScenarioKind::SplineSetting => {
            let true_c = draw_matrix(&mut rng, k, n, 1.5);
            // loading scale is the sigma knob here; factors have a fixed
            // 0.5 standard deviation
            let true_a = draw_matrix(&mut rng, p, num_factors, sigma);
            let true_f = draw_matrix(&mut rng, n, num_factors, 0.5);
            let noise = draw_matrix(&mut rng, p, n, 0.5);
            let true_curves = &phi * &true_c;
            let y = &true_curves + &true_a * true_f.transpose() + noise;
            let population_covariance = &phi * phi.transpose() * 1.5f64.powi(2)
                + &true_a * true_a.transpose() * 0.25
                + DMatrix::identity(p, p) * 0.25;
            Ok(GeneratedData {
                y,
                true_curves,
                true_c,
                true_a,
                true_f,
                population_covariance,
                grid,
                generating_system: system,
            })
        }
    }
}

/// Mean integrated squared error (1/n)Σ_i ∫(X_i − X̂_i)² du by the
/// trapezoid rule on the grid.
pub fn mise(true_curves: &DMatrix<f64>, fitted: &DMatrix<f64>, grid: &Grid) -> Result<f64> {
    if true_curves.shape() != fitted.shape() || true_curves.nrows() != grid.len() {
        return Err(FasmError::Dimension(format!(
            "mise: curves are {}x{} vs {}x{} on a {}-point grid",
            true_curves.nrows(),
            true_curves.ncols(),
            fitted.nrows(),
            fitted.ncols(),
            grid.len()
        )));
    }
    let pts = grid.points();
    let n = true_curves.ncols();
    let mut total = 0.0;
    for i in 0..n {
        let mut integral = 0.0;
        for j in 0..pts.len() - 1 {
            let d0 = true_curves[(j, i)] - fitted[(j, i)];
            let d1 = true_curves[(j + 1, i)] - fitted[(j + 1, i)];
            integral += 0.5 * (pts[j + 1] - pts[j]) * (d0 * d0 + d1 * d1);
        }
        total += integral;
    }
    Ok(total / n as f64)
}

/// Root mean squared reconstruction error
/// √((1/np) Σ (Y_ij − Ŷ_ij)²) with Ŷ = ΦĈ + ÂF̂ᵀ.
pub fn rmse_fit(y: &DMatrix<f64>, fit: &FasmFit) -> Result<f64> {
    let (p, n) = (y.nrows(), y.ncols());
    if fit.residuals.shape() != (p, n) {
        return Err(FasmError::Dimension(
            "rmse_fit: fit residuals do not match the data shape".into(),
        ));
    }
    Ok((fit.residuals.norm_squared() / (n * p) as f64).sqrt())
}

/// Eigenvalues (nonincreasing) of the smoothing-residual second moment
/// (1/np)(Y − ΦĈ)(Y − ΦĈ)ᵀ — the scree data. The smoothing residual is
/// reconstructed from the fit as Ê + ÂF̂ᵀ.
pub fn run_residual_spectrum(y: &DMatrix<f64>, fit: &FasmFit) -> Result<Vec<f64>> {
    let (p, n) = (y.nrows(), y.ncols());
    if fit.residuals.shape() != (p, n) {
        return Err(FasmError::Dimension(
            "run_residual_spectrum: fit does not match the data shape".into(),
        ));
    }
    let z = &fit.residuals + fit.a_hat.matrix() * fit.f_hat.transpose();
    let s = &z * z.transpose() / (n * p) as f64;
    Ok(sorted_eigen(&s).values)
}

/// Estimation method entering a comparison table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Fasm,
    Bsmooth,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Fasm => "fasm",
            Method::Bsmooth => "bsmooth",
        }
    }
}

/// Driver configuration shared by the experiment runners.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub replications: usize,
    pub master_seed: u64,
    /// Fit settings for the FASM runs; the baseline reuses them with the
    /// factor rule forced off.
    pub fit: FasmConfig,
    /// Worker threads: `None` reads FASM_THREADS, 0 or unset means all
    /// available cores.
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(replications: usize, master_seed: u64) -> Self {
        Self {
            replications,
            master_seed,
            fit: FasmConfig::default(),
            threads: None,
        }
    }

    fn thread_count(&self) -> usize {
        self.threads.unwrap_or_else(|| {
            std::env::var("FASM_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
                .unwrap_or(0)
        })
    }
}

/// One summary cell: a scenario cell crossed with a method.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub n: usize,
    pub p: usize,
    pub sigma: f64,
    pub method: String,
    pub mean: f64,
    pub std_error: f64,
    pub replications: usize,
}

/// A finished experiment: one row per (cell, method).
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTable {
    pub metric: String,
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,p,sigma,method,mean,std_error,replications\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{:.16e},{},{:.16e},{:.16e},{}\n",
                row.n, row.p, row.sigma, row.method, row.mean, row.std_error, row.replications
            ));
        }
        out
    }

    /// Human-readable aligned table.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:>6} {:>6} {:>8} {:>10} {:>12} {:>12} {:>6}\n",
            "n", "p", "sigma", "method", self.metric, "stderr", "reps"
        ));
        for row in &self.rows {
            out.push_str(&format!(
                "{:>6} {:>6} {:>8.3} {:>10} {:>12.4} {:>12.4} {:>6}\n",
                row.n, row.p, row.sigma, row.method, row.mean, row.std_error, row.replications
            ));
        }
        out
    }
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

fn fit_config_for(method: Method, template: &FasmConfig) -> FasmConfig {
    match method {
        Method::Fasm => template.clone(),
        Method::Bsmooth => FasmConfig {
            factor_rule: FactorRule::None,
            ..template.clone()
        },
    }
}

fn run_cells<F>(config: &ExperimentConfig, cells: usize, per_rep: F) -> Result<Vec<Vec<Vec<f64>>>>
where
    F: Fn(usize, u64) -> Result<Vec<f64>> + Sync,
{
    if config.replications == 0 {
        return Err(FasmError::InvalidArgument(
            "experiments need at least 1 replication".into(),
        ));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.thread_count())
        .build()
        .map_err(|e| FasmError::InvalidArgument(format!("thread pool: {e}")))?;
    // indexed collection keeps the reduction deterministic regardless of
    // completion order
    let mut results = Vec::with_capacity(cells);
    for cell in 0..cells {
        let reps: Vec<Vec<f64>> = pool.install(|| {
            (0..config.replications)
                .into_par_iter()
                .map(|rep| {
                    let seed =
                        derive_seed(&[config.master_seed, cell as u64, rep as u64]);
                    per_rep(cell, seed)
                })
                .collect::<Result<Vec<_>>>()
        })?;
        results.push(reps);
    }
    Ok(results)
}

/// Monte-Carlo comparison of mean integrated squared error across the
/// given scenario cells and methods.
pub fn run_mise_experiment(
    scenarios: &[SimulationScenario],
    methods: &[Method],
    config: &ExperimentConfig,
) -> Result<SummaryTable> {
    if scenarios.is_empty() || methods.is_empty() {
        return Err(FasmError::InvalidArgument(
            "experiment needs at least one scenario and one method".into(),
        ));
    }
    let per_rep = |cell: usize, seed: u64| -> Result<Vec<f64>> {
        let scenario = SimulationScenario {
            seed,
            ..scenarios[cell]
        };
        let data = generate(&scenario)?;
        let system = fitting_system(scenario.kind, &data.grid)?;
        let mut out = Vec::with_capacity(methods.len());
        for method in methods {
            let fit = fit_fasm(
                &data.y,
                &system,
                &data.grid,
                &fit_config_for(*method, &config.fit),
            )?;
            let fitted = evaluate_basis(&system, &data.grid)? * &fit.c_hat;
            out.push(mise(&data.true_curves, &fitted, &data.grid)?);
        }
        Ok(out)
    };
    let raw = run_cells(config, scenarios.len(), per_rep)?;

    let mut rows = Vec::new();
    for (cell, scenario) in scenarios.iter().enumerate() {
        for (mi, method) in methods.iter().enumerate() {
            let values: Vec<f64> = raw[cell].iter().map(|rep| rep[mi]).collect();
            let (mean, std_error) = mean_and_se(&values);
            rows.push(SummaryRow {
                n: scenario.n,
                p: scenario.p,
                sigma: scenario.sigma,
                method: method.label().to_string(),
                mean,
                std_error,
                replications: config.replications,
            });
        }
    }
    Ok(SummaryTable {
        metric: "mise".into(),
        rows,
    })
}

/// Monte-Carlo comparison of the model-based covariance estimator against
/// the sample covariance, in scaled Frobenius loss against the
/// per-replication population covariance.
pub fn run_cov_experiment(
    scenarios: &[SimulationScenario],
    config: &ExperimentConfig,
) -> Result<SummaryTable> {
    if scenarios.is_empty() {
        return Err(FasmError::InvalidArgument(
            "experiment needs at least one scenario".into(),
        ));
    }
    let per_rep = |cell: usize, seed: u64| -> Result<Vec<f64>> {
        let scenario = SimulationScenario {
            seed,
            ..scenarios[cell]
        };
        let data = generate(&scenario)?;
        let system = fitting_system(scenario.kind, &data.grid)?;
        let phi = evaluate_basis(&system, &data.grid)?;
        let fit = fit_fasm(&data.y, &system, &data.grid, &config.fit)?;
        let model = model_covariance(&fit, &phi)?;
        let sample = sample_covariance(&data.y)?;
        Ok(vec![
            frobenius_mse(&model.total, &data.population_covariance)?,
            frobenius_mse(&sample, &data.population_covariance)?,
        ])
    };
    let raw = run_cells(config, scenarios.len(), per_rep)?;

    let mut rows = Vec::new();
    for (cell, scenario) in scenarios.iter().enumerate() {
        for (mi, method) in ["fasm", "sample"].iter().enumerate() {
            let values: Vec<f64> = raw[cell].iter().map(|rep| rep[mi]).collect();
            let (mean, std_error) = mean_and_se(&values);
            rows.push(SummaryRow {
                n: scenario.n,
                p: scenario.p,
                sigma: scenario.sigma,
                method: method.to_string(),
                mean,
                std_error,
                replications: config.replications,
            });
        }
    }
    Ok(SummaryTable {
        metric: "cov_mse".into(),
        rows,
    })
}
