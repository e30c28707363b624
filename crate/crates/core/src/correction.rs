//! Projection-based correction of a reconstruction `f̂ = f(y)`.
//!
//! * Exact: `x* = A⁺y + (I − A⁺A) f̂`, the point closest to `f̂` among the
//!   least-squares solutions of `A x = y`.
//! * Regularized: the minimizer of
//!   `‖x − f̂‖² + λ (Ax − y)ᵀ Σ⁻¹ (Ax − y)`, i.e. the solution of
//!   `(I + λ AᵀΣ⁻¹A) x = f̂ + λ AᵀΣ⁻¹ y`.
//!
//! The regularized system does not depend on `y` or `f̂`, so
//! [`RegularizedSolver`] factorizes it once per `(A, λ, Σ)` and is reused
//! across images.

use std::sync::Arc;

use log::info;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use crate::cg::{conjugate_gradient, CgOptions};
use crate::diagnostics::{psnr, ssim, SsimParams};
use crate::error::{check_finite, check_len, Error, Result};
use crate::linops::{OperatorKind, SensingOperator};
use crate::pinv::{BlurSpectrum, PinvEngine};
use crate::reconstructors::{Dataset, Reconstructor};
use crate::vecops::norm2;

/// Grid used when none is configured: 0 plus a log-spaced range up to 0.1.
pub const DEFAULT_LAMBDA_GRID: [f64; 9] = [0.0, 1e-5, 1e-4, 5e-4, 1e-3, 5e-3, 1e-2, 5e-2, 1e-1];

/// Additive Gaussian noise `n ~ N(0, Σ)` on the measurements.
///
/// `None` means no noise model is known: diagnostics treat it as noise-free
/// and the regularized correction weights the data term with `Σ = I`.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseModel {
    None,
    Isotropic { sigma: f64 },
    Diagonal { variances: Vec<f64> },
    Dense { covariance: DMatrix<f64> },
}

impl NoiseModel {
    pub fn validate(&self, m: usize) -> Result<()> {
        match self {
            NoiseModel::None => Ok(()),
            NoiseModel::Isotropic { sigma } => {
                if *sigma > 0.0 && sigma.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Parameter(format!("noise sigma must be > 0, got {sigma}")))
                }
            }
            NoiseModel::Diagonal { variances } => {
                check_len("noise variances", m, variances.len())?;
                if variances.iter().all(|v| *v > 0.0 && v.is_finite()) {
                    Ok(())
                } else {
                    Err(Error::Parameter("noise variances must be > 0".into()))
                }
            }
            NoiseModel::Dense { covariance } => {
                check_len("noise covariance rows", m, covariance.nrows())?;
                check_len("noise covariance cols", m, covariance.ncols())?;
                let asym = (covariance - covariance.transpose()).norm();
                if asym > 1e-12 * covariance.norm() {
                    return Err(Error::Parameter("noise covariance is not symmetric".into()));
                }
                if Cholesky::new(covariance.clone()).is_none() {
                    return Err(Error::Parameter(
                        "noise covariance is not positive definite".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, NoiseModel::None)
    }

    pub(crate) fn weights(&self, m: usize) -> Result<NoiseWeights> {
        self.validate(m)?;
        Ok(match self {
            NoiseModel::None => NoiseWeights::Scalar(1.0),
            NoiseModel::Isotropic { sigma } => NoiseWeights::Scalar(1.0 / (sigma * sigma)),
            NoiseModel::Diagonal { variances } => {
                NoiseWeights::Diagonal(variances.iter().map(|v| 1.0 / v).collect())
            }
            NoiseModel::Dense { covariance } => {
                NoiseWeights::Dense(Cholesky::new(covariance.clone()).expect("validated"))
            }
        })
    }
}

/// `Σ⁻¹` in the cheapest available form.
#[derive(Debug, Clone)]
pub(crate) enum NoiseWeights {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Dense(Cholesky<f64, Dyn>),
}

impl NoiseWeights {
    pub(crate) fn apply(&self, r: &[f64]) -> Vec<f64> {
        match self {
            NoiseWeights::Scalar(w) => r.iter().map(|v| w * v).collect(),
            NoiseWeights::Diagonal(w) => r.iter().zip(w).map(|(v, w)| v * w).collect(),
            NoiseWeights::Dense(chol) => chol.solve(&DVector::from_column_slice(r)).data.into(),
        }
    }

    fn dense(&self, m: usize) -> DMatrix<f64> {
        match self {
            NoiseWeights::Scalar(w) => DMatrix::from_diagonal_element(m, m, *w),
            NoiseWeights::Diagonal(w) => DMatrix::from_diagonal(&DVector::from_column_slice(w)),
            NoiseWeights::Dense(chol) => chol.inverse(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionMode {
    Exact,
    Regularized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    /// Closed-form inverse: spectral for blur, elementwise for masks, dense
    /// Cholesky otherwise.
    Direct,
    Cg,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionConfig {
    pub mode: CorrectionMode,
    pub lambda: f64,
    pub noise: NoiseModel,
    pub solver: SolverKind,
    pub cg_tol: f64,
    /// Defaults to `10 · n`.
    pub cg_max_iter: Option<usize>,
    /// Reuse one factorization across calls (see [`RegularizedSolver`]).
    pub precompute: bool,
    pub materialize_limit: usize,
}

impl Default for CorrectionConfig {
    fn default() -> Self {
        CorrectionConfig {
            mode: CorrectionMode::Exact,
            lambda: 0.0,
            noise: NoiseModel::None,
            solver: SolverKind::Direct,
            cg_tol: 1e-12,
            cg_max_iter: None,
            precompute: true,
            materialize_limit: crate::linops::DEFAULT_MATERIALIZE_LIMIT,
        }
    }
}

impl CorrectionConfig {
    pub fn exact() -> Self {
        CorrectionConfig::default()
    }

    pub fn regularized(lambda: f64, noise: NoiseModel) -> Self {
        CorrectionConfig {
            mode: CorrectionMode::Regularized,
            lambda,
            noise,
            ..CorrectionConfig::default()
        }
    }

    pub fn with_solver(mut self, solver: SolverKind) -> Self {
        self.solver = solver;
        self
    }
}

/// `x* = A⁺y + (I − A⁺A) f̂`, evaluated as `f̂ + A⁺(y − A f̂)`.
pub fn exact_correction(engine: &PinvEngine, y: &[f64], fhat: &[f64]) -> Result<Vec<f64>> {
    let op = engine.operator();
    check_len("measurement", op.output_dim(), y.len())?;
    check_len("reconstruction", op.input_dim(), fhat.len())?;
    check_finite("measurement", y)?;
    check_finite("reconstruction", fhat)?;
    let mut residual = vec![0.0; op.output_dim()];
    op.apply_into(fhat, &mut residual);
    for (r, yi) in residual.iter_mut().zip(y) {
        *r = yi - *r;
    }
    let step = engine.pinv_unchecked(&residual)?;
    Ok(fhat.iter().zip(&step).map(|(f, s)| f + s).collect())
}

#[derive(Debug, Clone)]
enum Strategy {
    /// `λ = 0`: the objective is `‖x − f̂‖²`.
    Identity,
    /// Blur with scalar weight `c = λ/σ²`, diagonal in frequency.
    Spectral { spectrum: BlurSpectrum, c: f64 },
    /// Selection operator with diagonal weights: `AᵀWA` is diagonal.
    Mask { keep: Vec<usize>, lw: Vec<f64> },
    Dense(Cholesky<f64, Dyn>),
    Cg(CgOptions),
}

/// Prepared solver for `(I + λ AᵀΣ⁻¹A) x = f̂ + λ AᵀΣ⁻¹ y`.
#[derive(Debug, Clone)]
pub struct RegularizedSolver {
    op: Arc<SensingOperator>,
    lambda: f64,
    weights: NoiseWeights,
    strategy: Strategy,
}

impl RegularizedSolver {
    pub fn new(engine: &PinvEngine, config: &CorrectionConfig) -> Result<Self> {
        let op = engine.operator_arc();
        let (m, n) = (op.output_dim(), op.input_dim());
        let lambda = config.lambda;
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Parameter(format!("lambda must be >= 0, got {lambda}")));
        }
        let weights = config.noise.weights(m)?;
        let dense_noise = matches!(weights, NoiseWeights::Dense(_));
        if dense_noise && !op.is_materializable(config.materialize_limit) {
            return Err(Error::Unsupported(format!(
                "dense noise covariance with a matrix-free {} operator of size {m} x {n}",
                op.kind().name()
            )));
        }

        let strategy = if lambda == 0.0 {
            Strategy::Identity
        } else {
            match config.solver {
                SolverKind::Cg => Strategy::Cg(CgOptions {
                    tol: config.cg_tol,
                    max_iter: config.cg_max_iter.unwrap_or(10 * n),
                }),
                SolverKind::Direct => match (op.kind(), &weights) {
                    (OperatorKind::CircularBlur, NoiseWeights::Scalar(w)) => {
                        let spectrum = match engine.blur_spectrum() {
                            Some(s) => s.clone(),
                            None => BlurSpectrum::new(&op, engine.settings().rcond)?,
                        };
                        Strategy::Spectral {
                            spectrum,
                            c: lambda * w,
                        }
                    }
                    (OperatorKind::Mask, NoiseWeights::Scalar(_) | NoiseWeights::Diagonal(_)) => {
                        let keep = op.mask_indices().expect("mask").to_vec();
                        let ones = vec![1.0; m];
                        let lw = weights.apply(&ones).into_iter().map(|w| lambda * w).collect();
                        Strategy::Mask { keep, lw }
                    }
                    _ => {
                        let a = op.materialize(config.materialize_limit)?;
                        let w = weights.dense(m);
                        let system = DMatrix::identity(n, n) + (a.transpose() * w * &a) * lambda;
                        let chol = Cholesky::new(system).ok_or_else(|| {
                            Error::Rank("regularized system is not positive definite".into())
                        })?;
                        Strategy::Dense(chol)
                    }
                },
            }
        };

        Ok(RegularizedSolver {
            op,
            lambda,
            weights,
            strategy,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.op.input_dim()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn solve(&self, y: &[f64], fhat: &[f64]) -> Result<Vec<f64>> {
        let (m, n) = (self.op.output_dim(), self.op.input_dim());
        check_len("measurement", m, y.len())?;
        check_len("reconstruction", n, fhat.len())?;
        check_finite("measurement", y)?;
        check_finite("reconstruction", fhat)?;

        match &self.strategy {
            Strategy::Identity => Ok(fhat.to_vec()),
            Strategy::Spectral { spectrum, c } => {
                let s = spectrum;
                let from_f = s.fft.filter_channels(s.geometry, fhat, |k, v| {
                    v / (1.0 + c * s.spectrum[k].norm_sqr())
                });
                let from_y = s.fft.filter_channels(s.geometry, y, |k, v| {
                    let h = s.spectrum[k];
                    v * h.conj() * (*c / (1.0 + c * h.norm_sqr()))
                });
                Ok(from_f.iter().zip(&from_y).map(|(a, b)| a + b).collect())
            }
            Strategy::Mask { keep, lw } => {
                let mut x = fhat.to_vec();
                for ((&i, &l), &yi) in keep.iter().zip(lw).zip(y) {
                    x[i] = (fhat[i] + l * yi) / (1.0 + l);
                }
                Ok(x)
            }
            Strategy::Dense(chol) => {
                let rhs = self.rhs(y, fhat);
                Ok(chol.solve(&DVector::from_vec(rhs)).data.into())
            }
            Strategy::Cg(opts) => {
                let rhs = self.rhs(y, fhat);
                let op = &self.op;
                let mut av = vec![0.0; m];
                let mut back = vec![0.0; n];
                let outcome = conjugate_gradient(
                    |v, out| {
                        op.apply_into(v, &mut av);
                        let wav = self.weights.apply(&av);
                        op.adjoint_into(&wav, &mut back);
                        for ((o, vi), bi) in out.iter_mut().zip(v).zip(&back) {
                            *o = vi + self.lambda * bi;
                        }
                    },
                    &rhs,
                    Some(fhat),
                    *opts,
                )?;
                Ok(outcome.x)
            }
        }
    }

    /// `f̂ + λ AᵀΣ⁻¹ y`
    fn rhs(&self, y: &[f64], fhat: &[f64]) -> Vec<f64> {
        let wy = self.weights.apply(y);
        let mut aty = vec![0.0; self.op.input_dim()];
        self.op.adjoint_into(&wy, &mut aty);
        fhat.iter()
            .zip(&aty)
            .map(|(f, a)| f + self.lambda * a)
            .collect()
    }
}

/// Minimizer of `‖x − f̂‖² + λ (Ax − y)ᵀ Σ⁻¹ (Ax − y)`.
///
/// Builds the solver for this call only; use [`RegularizedSolver`] to
/// share one factorization across many images.
pub fn regularized_correction(
    engine: &PinvEngine,
    y: &[f64],
    fhat: &[f64],
    config: &CorrectionConfig,
) -> Result<Vec<f64>> {
    RegularizedSolver::new(engine, config)?.solve(y, fhat)
}

pub fn correct(
    engine: &PinvEngine,
    y: &[f64],
    fhat: &[f64],
    config: &CorrectionConfig,
) -> Result<Vec<f64>> {
    match config.mode {
        CorrectionMode::Exact => {
            if !config.noise.is_none() {
                info!("exact correction on noisy measurements fits the noise; consider regularized mode");
            }
            exact_correction(engine, y, fhat)
        }
        CorrectionMode::Regularized => regularized_correction(engine, y, fhat, config),
    }
}

/// Norm of the gradient of the regularized objective (halved) at `x`:
/// `‖(x − f̂) + λ AᵀΣ⁻¹(Ax − y)‖`.
pub fn stationarity_residual(
    op: &SensingOperator,
    y: &[f64],
    fhat: &[f64],
    x: &[f64],
    lambda: f64,
    noise: &NoiseModel,
) -> Result<f64> {
    let weights = noise.weights(op.output_dim())?;
    let ax = op.apply(x)?;
    let r: Vec<f64> = ax.iter().zip(y).map(|(a, b)| a - b).collect();
    let back = op.adjoint(&weights.apply(&r))?;
    let g: Vec<f64> = x
        .iter()
        .zip(fhat)
        .zip(&back)
        .map(|((xi, fi), bi)| xi - fi + lambda * bi)
        .collect();
    Ok(norm2(&g))
}

/// Weighted data misfit `(Ax − y)ᵀ Σ⁻¹ (Ax − y)`.
pub fn weighted_misfit(op: &SensingOperator, y: &[f64], x: &[f64], noise: &NoiseModel) -> Result<f64> {
    let weights = noise.weights(op.output_dim())?;
    let r: Vec<f64> = op.apply(x)?.iter().zip(y).map(|(a, b)| a - b).collect();
    Ok(crate::vecops::dot(&r, &weights.apply(&r)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GridObjective {
    #[default]
    MeanPsnr,
    MeanSsim,
}

#[derive(Debug, Clone)]
pub struct GridOptions {
    pub objective: GridObjective,
    pub solver: SolverKind,
    pub peak: f64,
    pub ssim: SsimParams,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions {
            objective: GridObjective::MeanPsnr,
            solver: SolverKind::Direct,
            peak: 1.0,
            ssim: SsimParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub lambda: f64,
    pub mean_psnr: f64,
    /// Present when the dataset carries image geometry.
    pub mean_ssim: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchResult {
    pub best_lambda: f64,
    /// One row per distinct grid value, ascending in λ.
    pub table: Vec<GridRow>,
}

impl GridSearchResult {
    pub fn best(&self) -> &GridRow {
        self.table
            .iter()
            .find(|r| r.lambda == self.best_lambda)
            .expect("best lambda is in the table")
    }
}

pub fn lambda_grid_search(
    engine: &PinvEngine,
    dataset: &Dataset,
    reconstructor: &Reconstructor,
    grid: &[f64],
    noise: &NoiseModel,
) -> Result<GridSearchResult> {
    lambda_grid_search_with(engine, dataset, reconstructor, grid, noise, &GridOptions::default())
}

/// Selects the λ maximizing the mean PSNR (or SSIM) of the regularized
/// correction over `dataset`. Ties go to the smallest λ.
pub fn lambda_grid_search_with(
    engine: &PinvEngine,
    dataset: &Dataset,
    reconstructor: &Reconstructor,
    grid: &[f64],
    noise: &NoiseModel,
    options: &GridOptions,
) -> Result<GridSearchResult> {
    if dataset.is_empty() {
        return Err(Error::Parameter("grid search needs a non-empty dataset".into()));
    }
    if grid.is_empty() {
        return Err(Error::Parameter("grid search needs a non-empty lambda grid".into()));
    }
    if grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
        return Err(Error::Parameter("lambda grid values must be finite and >= 0".into()));
    }
    if options.objective == GridObjective::MeanSsim && dataset.geometry.is_none() {
        return Err(Error::Parameter("SSIM objective needs image geometry".into()));
    }
    let mut lambdas = grid.to_vec();
    lambdas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    lambdas.dedup();

    let fhats: Vec<Vec<f64>> = dataset
        .samples
        .iter()
        .map(|s| reconstructor.reconstruct(&s.id, &s.y))
        .collect::<Result<_>>()?;

    let table: Vec<GridRow> = lambdas
        .par_iter()
        .map(|&lambda| {
            let config = CorrectionConfig {
                noise: noise.clone(),
                solver: options.solver,
                ..CorrectionConfig::regularized(lambda, noise.clone())
            };
            let solver = RegularizedSolver::new(engine, &config)?;
            let mut psnr_sum = 0.0;
            let mut ssim_sum = 0.0;
            for (sample, fhat) in dataset.samples.iter().zip(&fhats) {
                let x = solver.solve(&sample.y, fhat)?;
                psnr_sum += psnr(&x, &sample.x, options.peak)?;
                if let Some(g) = dataset.geometry {
                    ssim_sum += ssim(&x, &sample.x, g, &options.ssim)?;
                }
            }
            let count = dataset.len() as f64;
            Ok(GridRow {
                lambda,
                mean_psnr: psnr_sum / count,
                mean_ssim: dataset.geometry.map(|_| ssim_sum / count),
            })
        })
        .collect::<Result<_>>()?;

    let score = |row: &GridRow| match options.objective {
        GridObjective::MeanPsnr => row.mean_psnr,
        GridObjective::MeanSsim => row.mean_ssim.unwrap_or(f64::NEG_INFINITY),
    };
    let mut best = &table[0];
    for row in &table[1..] {
        let (s, b) = (score(row), score(best));
        let tie = s == b || (s - b).abs() <= 1e-12 * s.abs().max(b.abs());
        if s > b && !tie {
            best = row;
        }
    }
    Ok(GridSearchResult {
        best_lambda: best.lambda,
        table,
    })
}
