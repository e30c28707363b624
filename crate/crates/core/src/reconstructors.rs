//! Sources of the initial estimate `f̂(y)`.
//!
//! Deep networks are out of reach here, so the learned reconstructors are
//! affine maps `y ↦ W y + b` fitted to paired data. Outputs of external
//! networks come in through [`Reconstructor::External`].

use std::collections::BTreeMap;
use std::sync::Arc;

use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::correction::{CorrectionConfig, NoiseModel, RegularizedSolver};
use crate::error::{check_finite, check_len, Error, Result};
use crate::linops::{Geometry, SensingOperator, DEFAULT_MATERIALIZE_LIMIT};
use crate::pinv::PinvEngine;
use crate::rng::rng_from_seed;

/// One paired example: ground truth `x` and its measurement `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub geometry: Option<Geometry>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, geometry: Option<Geometry>) -> Result<Self> {
        if let Some(first) = samples.first() {
            for s in &samples {
                check_len("dataset signal", first.x.len(), s.x.len())?;
                check_len("dataset measurement", first.y.len(), s.y.len())?;
                check_finite("dataset signal", &s.x)?;
                check_finite("dataset measurement", &s.y)?;
            }
            if let Some(g) = geometry {
                check_len("dataset geometry", g.len(), first.x.len())?;
            }
        }
        Ok(Dataset { samples, geometry })
    }

    /// Noise-free dataset `y = A x` from a list of signals.
    pub fn from_signals(op: &SensingOperator, signals: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let samples = signals
            .into_iter()
            .map(|(id, x)| {
                let y = op.apply(&x)?;
                Ok(Sample { id, x, y })
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(samples, op.geometry())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn check_operator(&self, op: &SensingOperator) -> Result<()> {
        if let Some(s) = self.samples.first() {
            check_len("dataset signal vs operator", op.input_dim(), s.x.len())?;
            check_len("dataset measurement vs operator", op.output_dim(), s.y.len())?;
        }
        Ok(())
    }

    /// Signals as columns (`n × N`) and measurements as columns (`m × N`).
    pub(crate) fn columns(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.samples[0].x.len();
        let m = self.samples[0].y.len();
        let mut xs = DMatrix::zeros(n, self.len());
        let mut ys = DMatrix::zeros(m, self.len());
        for (j, s) in self.samples.iter().enumerate() {
            xs.column_mut(j).copy_from_slice(&s.x);
            ys.column_mut(j).copy_from_slice(&s.y);
        }
        (xs, ys)
    }
}

/// `y ↦ W y + b` with `W` of shape `n × m`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl AffineMap {
    pub fn apply(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len("affine map input", self.weights.ncols(), y.len())?;
        let out = &self.weights * DVector::from_column_slice(y) + &self.bias;
        Ok(out.data.into())
    }

    /// Outputs for every column of `ys`.
    pub(crate) fn apply_columns(&self, ys: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = &self.weights * ys;
        for mut col in out.column_iter_mut() {
            col += &self.bias;
        }
        out
    }
}

#[derive(Debug, Clone)]
pub enum Reconstructor {
    /// `Aᵀ y`
    Adjoint(Arc<SensingOperator>),
    /// `A⁺ y`
    Pinv(Arc<PinvEngine>),
    /// `(AᵀA + αI)⁻¹ Aᵀ y`
    Tikhonov { alpha: f64, solver: RegularizedSolver },
    /// Ridge-fitted affine map.
    LearnedLinear(AffineMap),
    /// Snapshot of a gradient-descent-trained affine map.
    TrainableLinear { map: AffineMap, epoch: usize },
    /// Precomputed outputs keyed by measurement id.
    External { outputs: BTreeMap<String, Vec<f64>>, dim: usize },
}

impl Reconstructor {
    pub fn adjoint(op: Arc<SensingOperator>) -> Self {
        Reconstructor::Adjoint(op)
    }

    pub fn pinv(engine: Arc<PinvEngine>) -> Self {
        Reconstructor::Pinv(engine)
    }

    /// Tikhonov is the regularized correction of `f̂ = 0` with `λ = 1/α`
    /// and `Σ = I`, so it shares that solver (spectral for blur, closed form
    /// for masks).
    pub fn tikhonov(engine: &PinvEngine, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::Parameter(format!("tikhonov alpha must be > 0, got {alpha}")));
        }
        let config = CorrectionConfig::regularized(1.0 / alpha, NoiseModel::None);
        Ok(Reconstructor::Tikhonov {
            alpha,
            solver: RegularizedSolver::new(engine, &config)?,
        })
    }

    pub fn external(outputs: BTreeMap<String, Vec<f64>>, dim: usize) -> Result<Self> {
        for (id, v) in &outputs {
            check_len("external reconstruction", dim, v.len())?;
            check_finite(&format!("external reconstruction {id}"), v)?;
        }
        Ok(Reconstructor::External { outputs, dim })
    }

    pub fn name(&self) -> String {
        match self {
            Reconstructor::Adjoint(_) => "adjoint".into(),
            Reconstructor::Pinv(_) => "pinv".into(),
            Reconstructor::Tikhonov { alpha, .. } => format!("tikhonov({alpha})"),
            Reconstructor::LearnedLinear(_) => "learned_linear".into(),
            Reconstructor::TrainableLinear { epoch, .. } => format!("trainable_linear@{epoch}"),
            Reconstructor::External { .. } => "external".into(),
        }
    }

    /// `f̂(y)`. `id` is only consulted by external sources.
    pub fn reconstruct(&self, id: &str, y: &[f64]) -> Result<Vec<f64>> {
        match self {
            Reconstructor::Adjoint(op) => op.adjoint(y),
            Reconstructor::Pinv(engine) => engine.pinv_apply(y),
            Reconstructor::Tikhonov { solver, .. } => solver.solve(y, &vec![0.0; solver.input_dim()]),
            Reconstructor::LearnedLinear(map) | Reconstructor::TrainableLinear { map, .. } => {
                check_finite("measurement", y)?;
                map.apply(y)
            }
            Reconstructor::External { outputs, .. } => outputs
                .get(id)
                .cloned()
                .ok_or_else(|| Error::Lookup(id.to_string())),
        }
    }

    pub fn affine_map(&self) -> Option<&AffineMap> {
        match self {
            Reconstructor::LearnedLinear(m) | Reconstructor::TrainableLinear { map: m, .. } => Some(m),
            _ => None,
        }
    }
}

/// Per-element training MSE of an affine map over a dataset.
pub fn dataset_mse(map: &AffineMap, dataset: &Dataset) -> f64 {
    let (xs, ys) = dataset.columns();
    let r = map.apply_columns(&ys) - xs;
    r.norm_squared() / (r.nrows() * r.ncols()) as f64
}

/// Ridge fit of `W, b` minimizing `Σᵢ ‖W yᵢ + b − xᵢ‖² + α ‖W‖²_F` through
/// the centered normal equations `W (Y_c Y_cᵀ + αI) = X_c Y_cᵀ`.
pub fn fit_learned_linear(op: &SensingOperator, dataset: &Dataset, alpha: f64) -> Result<Reconstructor> {
    if dataset.is_empty() {
        return Err(Error::Parameter("cannot fit on an empty dataset".into()));
    }
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::Parameter(format!("ridge alpha must be >= 0, got {alpha}")));
    }
    dataset.check_operator(op)?;
    let (xs, ys) = dataset.columns();
    let (n, m, count) = (xs.nrows(), ys.nrows(), xs.ncols());
    let x_mean = xs.column_mean();
    let y_mean = ys.column_mean();
    let mut xc = xs;
    let mut yc = ys;
    for j in 0..count {
        xc.column_mut(j).axpy(-1.0, &x_mean, 1.0);
        yc.column_mut(j).axpy(-1.0, &y_mean, 1.0);
    }

    let weights = if yc.iter().all(|v| *v == 0.0) {
        // No variation in y: the bias alone is optimal and W = 0 is the
        // minimum-norm choice.
        DMatrix::zeros(n, m)
    } else {
        let gram = &yc * yc.transpose() + DMatrix::identity(m, m) * alpha;
        let rhs = &yc * xc.transpose();
        let chol = match Cholesky::new(gram.clone()) {
            Some(c) => c,
            None if alpha > 0.0 => {
                let jitter = 1e-12 * (gram.trace() / m as f64 + 1.0);
                Cholesky::new(gram + DMatrix::identity(m, m) * jitter)
                    .ok_or_else(|| Error::Rank("ridge normal equations are singular".into()))?
            }
            None => {
                return Err(Error::Rank(
                    "normal equations are singular with alpha = 0; use alpha > 0".into(),
                ))
            }
        };
        if alpha == 0.0 {
            let diag = chol.l_dirty().diagonal();
            let (lo, hi) = diag
                .iter()
                .fold((f64::INFINITY, 0.0_f64), |(lo, hi), d| (lo.min(d * d), hi.max(d * d)));
            if lo <= 1e-13 * hi {
                return Err(Error::Rank(
                    "normal equations are numerically singular with alpha = 0; use alpha > 0".into(),
                ));
            }
        }
        chol.solve(&rhs).transpose()
    };
    let bias = &x_mean - &weights * &y_mean;
    Ok(Reconstructor::LearnedLinear(AffineMap { weights, bias }))
}

/// Result of [`train_epochs`]: `snapshots[k]` and `train_mse[k]` describe the
/// map after `k` epochs (`k = 0` is the initialization).
#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub snapshots: Vec<Reconstructor>,
    pub train_mse: Vec<f64>,
    /// Largest eigenvalue of the empirical Hessian.
    pub lipschitz: f64,
}

/// Measurements as columns, centered on their mean, and the mean.
fn centered_measurements(ys: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let mean = ys.column_mean();
    let mut yc = ys.clone();
    for mut col in yc.column_iter_mut() {
        col -= &mean;
    }
    (yc, mean)
}

/// Largest eigenvalue of the Hessian of the per-element MSE
/// `(1/(N n)) Σᵢ ‖W (yᵢ − ȳ) + c − xᵢ‖²` with respect to one row of `[W c]`,
/// estimated by power iteration on the `N × N` Gram matrix of `[Y − ȳ; 1]`.
pub fn estimate_lipschitz(dataset: &Dataset, seed: u64) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Parameter("empty dataset".into()));
    }
    let (xs, ys) = dataset.columns();
    let (n, count) = (xs.nrows(), xs.ncols());
    let (yc, _) = centered_measurements(&ys);
    let gram = yc.transpose() * &yc + DMatrix::from_element(count, count, 1.0);
    let mut rng = rng_from_seed(seed);
    let mut v = DVector::from_fn(count, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut estimate = 0.0;
    for _ in 0..1000 {
        let norm = v.norm();
        if norm == 0.0 {
            break;
        }
        v /= norm;
        let next = &gram * &v;
        let value = v.dot(&next);
        let converged = (value - estimate).abs() <= 1e-10 * value.abs();
        estimate = value;
        v = next;
        if converged {
            break;
        }
    }
    Ok(2.0 * estimate / (count * n) as f64)
}

/// Scaled adjoint `W = Aᵀ/‖A‖²`, `b = 0`.
pub fn initial_affine_map(op: &SensingOperator) -> Result<AffineMap> {
    let a = op.materialize(DEFAULT_MATERIALIZE_LIMIT)?;
    let norm = op.spectral_norm();
    let scale = if norm > 0.0 { 1.0 / (norm * norm) } else { 1.0 };
    Ok(AffineMap {
        weights: a.transpose() * scale,
        bias: DVector::zeros(op.input_dim()),
    })
}

/// Full-batch gradient descent on the per-element training MSE, calling
/// `on_epoch(k, map, mse)` for the initialization (`k = 0`) and after every
/// epoch. The map is parametrized as `W (y − ȳ) + c` with `ȳ` the mean
/// training measurement, which spans the same affine maps as `W y + b` but
/// keeps the bias from dominating the curvature. Returns the MSE sequence and the Hessian bound used for the
/// step-size check (`learning_rate ≤ 1/L` guarantees a non-increasing MSE).
pub fn train_epochs_with<F>(
    op: &SensingOperator,
    dataset: &Dataset,
    epochs: usize,
    learning_rate: f64,
    seed: u64,
    mut on_epoch: F,
) -> Result<(Vec<f64>, f64)>
where
    F: FnMut(usize, &AffineMap, f64) -> Result<()>,
{
    if epochs == 0 {
        return Err(Error::Parameter("epochs must be >= 1".into()));
    }
    if !(learning_rate > 0.0) || !learning_rate.is_finite() {
        return Err(Error::Parameter(format!("learning rate must be > 0, got {learning_rate}")));
    }
    if dataset.is_empty() {
        return Err(Error::Parameter("cannot train on an empty dataset".into()));
    }
    dataset.check_operator(op)?;
    let lipschitz = estimate_lipschitz(dataset, seed)?;
    if learning_rate > 1.0 / lipschitz {
        warn!(
            "learning rate {learning_rate} exceeds 1/L = {}; the loss may not decrease monotonically",
            1.0 / lipschitz
        );
    }

    let (xs, ys) = dataset.columns();
    let (n, count) = (xs.nrows(), xs.ncols());
    let (yc, y_mean) = centered_measurements(&ys);
    let scale = 2.0 / (count * n) as f64;
    let mut map = initial_affine_map(op)?;
    let mut offset = &map.weights * &y_mean + &map.bias;
    let mut history = Vec::with_capacity(epochs + 1);

    let mut residual = map.apply_columns(&ys) - &xs;
    let mut mse = residual.norm_squared() / (count * n) as f64;
    history.push(mse);
    on_epoch(0, &map, mse)?;

    for epoch in 1..=epochs {
        let grad_w = &residual * yc.transpose() * scale;
        let grad_c = residual.column_sum() * scale;
        map.weights -= grad_w * learning_rate;
        offset.axpy(-learning_rate, &grad_c, 1.0);
        map.bias = &offset - &map.weights * &y_mean;

        residual = map.apply_columns(&ys) - &xs;
        mse = residual.norm_squared() / (count * n) as f64;
        if !mse.is_finite() || mse > 1e12 {
            return Err(Error::Divergence { epoch, mse });
        }
        history.push(mse);
        on_epoch(epoch, &map, mse)?;
    }
    Ok((history, lipschitz))
}

/// [`train_epochs_with`], keeping every snapshot in memory.
pub fn train_epochs(
    op: &SensingOperator,
    dataset: &Dataset,
    epochs: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<TrainingRun> {
    let mut snapshots = Vec::with_capacity(epochs + 1);
    let (train_mse, lipschitz) = train_epochs_with(op, dataset, epochs, learning_rate, seed, |epoch, map, _| {
        snapshots.push(Reconstructor::TrainableLinear {
            map: map.clone(),
            epoch,
        });
        Ok(())
    })?;
    Ok(TrainingRun {
        snapshots,
        train_mse,
        lipschitz,
    })
}

/// Test fixture satisfying both conditions of a well-trained reconstructor
/// by construction: `f̂(y) = A⁺y + (I − A⁺A) x` for the true `x`.
#[derive(Debug, Clone)]
pub struct WellTrained {
    engine: Arc<PinvEngine>,
}

pub fn make_well_trained(engine: Arc<PinvEngine>) -> WellTrained {
    WellTrained { engine }
}

impl WellTrained {
    pub fn output(&self, y: &[f64], x_true: &[f64]) -> Result<Vec<f64>> {
        let range = self.engine.pinv_apply(y)?;
        let null = self.engine.nullspace_projector_apply(x_true)?;
        Ok(range.iter().zip(&null).map(|(a, b)| a + b).collect())
    }

    pub fn engine(&self) -> &PinvEngine {
        &self.engine
    }
}
