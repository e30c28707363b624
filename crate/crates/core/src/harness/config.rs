//! JSON experiment configuration and the short operator/reconstructor forms
//! accepted on the command line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::correction::{CorrectionConfig, CorrectionMode, NoiseModel, SolverKind, DEFAULT_LAMBDA_GRID};
use crate::error::{Error, Result};
use crate::linops::{
    make_gaussian_blur, make_inpainting_mask_with, make_spi_operator_with, Geometry, SensingOperator, SpiOptions,
    DEFAULT_BLUR_TRUNCATION, DEFAULT_MATERIALIZE_LIMIT,
};

/// Noise levels swept by default.
pub const DEFAULT_SIGMAS: [f64; 5] = [0.01, 0.05, 0.1, 0.2, 0.3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Simulate,
    Reconstruct,
    Correct,
    Evaluate,
    TrainDynamics,
    SweepLambda,
    Bench,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::Reconstruct => "reconstruct",
            Experiment::Correct => "correct",
            Experiment::Evaluate => "evaluate",
            Experiment::TrainDynamics => "train_dynamics",
            Experiment::SweepLambda => "sweep_lambda",
            Experiment::Bench => "bench",
        }
    }
}

fn default_truncation() -> f64 {
    DEFAULT_BLUR_TRUNCATION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorSpec {
    Identity,
    Mask {
        p: f64,
        seed: u64,
        #[serde(default)]
        per_channel: bool,
    },
    Blur {
        /// `[row, column]` standard deviations in pixels.
        sigma: [f64; 2],
        #[serde(default = "default_truncation")]
        truncation: f64,
    },
    Spi {
        m: usize,
        seed: u64,
        #[serde(default)]
        gaussian: bool,
    },
}

impl OperatorSpec {
    pub fn build(&self, geometry: Geometry) -> Result<SensingOperator> {
        match *self {
            OperatorSpec::Identity => SensingOperator::identity(geometry.len())?.with_geometry(geometry),
            OperatorSpec::Mask { p, seed, per_channel } => make_inpainting_mask_with(geometry, p, seed, per_channel),
            OperatorSpec::Blur { sigma, truncation } => make_gaussian_blur(geometry, (sigma[0], sigma[1]), truncation),
            OperatorSpec::Spi { m, seed, gaussian } => make_spi_operator_with(
                geometry.len(),
                m,
                seed,
                SpiOptions {
                    gaussian,
                    materialize_limit: DEFAULT_MATERIALIZE_LIMIT,
                },
            )?
            .with_geometry(geometry),
        }
    }

    pub fn label(&self) -> String {
        match self {
            OperatorSpec::Identity => "identity".into(),
            OperatorSpec::Mask { p, .. } => format!("mask(p={p})"),
            OperatorSpec::Blur { sigma, .. } => format!("blur({},{})", sigma[0], sigma[1]),
            OperatorSpec::Spi { m, .. } => format!("spi(m={m})"),
        }
    }
}

/// Splits `kind:key=value,key=value` into its kind and parameters.
fn split_short_form(s: &str) -> Result<(&str, BTreeMap<&str, &str>)> {
    let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
    let mut params = BTreeMap::new();
    for item in rest.split(',').filter(|p| !p.is_empty()) {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::Parameter(format!("expected key=value in {s:?}, got {item:?}")))?;
        params.insert(k.trim(), v.trim());
    }
    Ok((kind.trim(), params))
}

fn take<T: FromStr>(params: &mut BTreeMap<&str, &str>, key: &str, source: &str) -> Result<Option<T>> {
    params
        .remove(key)
        .map(|v| {
            v.parse()
                .map_err(|_| Error::Parameter(format!("cannot parse {key}={v:?} in {source:?}")))
        })
        .transpose()
}

fn require<T: FromStr>(params: &mut BTreeMap<&str, &str>, key: &str, source: &str) -> Result<T> {
    take(params, key, source)?.ok_or_else(|| Error::Parameter(format!("missing {key} in {source:?}")))
}

fn reject_rest(params: &BTreeMap<&str, &str>, source: &str) -> Result<()> {
    match params.keys().next() {
        Some(k) => Err(Error::Parameter(format!("unknown key {k:?} in {source:?}"))),
        None => Ok(()),
    }
}

/// `identity`, `mask:p=0.5,seed=7`, `blur:sigma_row=3,sigma_col=0.15[,truncation=4]`
/// (or `blur:sigma=1.2` for isotropic), `spi:m=64,seed=1[,gaussian=true]`.
impl FromStr for OperatorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, mut p) = split_short_form(s)?;
        let spec = match kind {
            "identity" => OperatorSpec::Identity,
            "mask" => OperatorSpec::Mask {
                p: require(&mut p, "p", s)?,
                seed: require(&mut p, "seed", s)?,
                per_channel: take(&mut p, "per_channel", s)?.unwrap_or(false),
            },
            "blur" => {
                let iso: Option<f64> = take(&mut p, "sigma", s)?;
                let row = take(&mut p, "sigma_row", s)?.or(iso);
                let col = take(&mut p, "sigma_col", s)?.or(iso);
                match (row, col) {
                    (Some(r), Some(c)) => OperatorSpec::Blur {
                        sigma: [r, c],
                        truncation: take(&mut p, "truncation", s)?.unwrap_or(DEFAULT_BLUR_TRUNCATION),
                    },
                    _ => return Err(Error::Parameter(format!("blur needs sigma or sigma_row/sigma_col in {s:?}"))),
                }
            }
            "spi" => OperatorSpec::Spi {
                m: require(&mut p, "m", s)?,
                seed: require(&mut p, "seed", s)?,
                gaussian: take(&mut p, "gaussian", s)?.unwrap_or(false),
            },
            other => return Err(Error::Parameter(format!("unknown operator kind {other:?}"))),
        };
        reject_rest(&p, s)?;
        Ok(spec)
    }
}

fn default_ridge() -> f64 {
    1e-3
}

fn default_epochs() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReconstructorSpec {
    Adjoint,
    Pinv,
    Tikhonov {
        alpha: f64,
    },
    /// Ridge-fitted affine map, trained on the training split.
    LearnedLinear {
        #[serde(default = "default_ridge")]
        alpha: f64,
    },
    /// Affine map trained by gradient descent; `learning_rate` defaults to `1/L`.
    TrainableLinear {
        #[serde(default = "default_epochs")]
        epochs: usize,
        #[serde(default)]
        learning_rate: Option<f64>,
    },
    /// NIT1 files `<dir>/<image_id>.nit` produced elsewhere.
    External {
        dir: PathBuf,
    },
}

impl ReconstructorSpec {
    pub fn label(&self) -> String {
        match self {
            ReconstructorSpec::Adjoint => "adjoint".into(),
            ReconstructorSpec::Pinv => "pinv".into(),
            ReconstructorSpec::Tikhonov { alpha } => format!("tikhonov(alpha={alpha})"),
            ReconstructorSpec::LearnedLinear { alpha } => format!("learned_linear(alpha={alpha})"),
            ReconstructorSpec::TrainableLinear { epochs, .. } => format!("trainable_linear(epochs={epochs})"),
            ReconstructorSpec::External { .. } => "external".into(),
        }
    }

    pub fn needs_training(&self) -> bool {
        matches!(
            self,
            ReconstructorSpec::LearnedLinear { .. } | ReconstructorSpec::TrainableLinear { .. }
        )
    }
}

/// `adjoint`, `pinv`, `tikhonov:alpha=0.01`, `learned:alpha=1e-3`,
/// `trainable:epochs=100[,lr=0.5]`, `external:dir=path`.
impl FromStr for ReconstructorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, mut p) = split_short_form(s)?;
        let spec = match kind {
            "adjoint" => ReconstructorSpec::Adjoint,
            "pinv" => ReconstructorSpec::Pinv,
            "tikhonov" => ReconstructorSpec::Tikhonov {
                alpha: require(&mut p, "alpha", s)?,
            },
            "learned" | "learned_linear" => ReconstructorSpec::LearnedLinear {
                alpha: take(&mut p, "alpha", s)?.unwrap_or_else(default_ridge),
            },
            "trainable" | "trainable_linear" => ReconstructorSpec::TrainableLinear {
                epochs: take(&mut p, "epochs", s)?.unwrap_or_else(default_epochs),
                learning_rate: take(&mut p, "lr", s)?,
            },
            "external" => ReconstructorSpec::External {
                dir: PathBuf::from(require::<String>(&mut p, "dir", s)?),
            },
            other => return Err(Error::Parameter(format!("unknown reconstructor kind {other:?}"))),
        };
        reject_rest(&p, s)?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// Isotropic noise levels; experiments that use a single level take the first.
    pub sigma: Vec<f64>,
    /// Dense covariance as a 2-D NIT1 tensor, used by the regularized
    /// correction instead of `σ²I`.
    pub covariance: Option<PathBuf>,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            sigma: vec![0.0],
            covariance: None,
        }
    }
}

impl NoiseSpec {
    pub fn first_sigma(&self) -> Result<f64> {
        let s = *self
            .sigma
            .first()
            .ok_or_else(|| Error::Parameter("noise sigma list is empty".into()))?;
        check_sigma(s)?;
        Ok(s)
    }
}

pub(crate) fn check_sigma(s: f64) -> Result<()> {
    if s >= 0.0 && s.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("noise sigma must be >= 0, got {s}")))
    }
}

/// Noise model for a given level: `σ = 0` carries no weighting information.
pub fn isotropic(sigma: f64) -> NoiseModel {
    if sigma > 0.0 {
        NoiseModel::Isotropic { sigma }
    } else {
        NoiseModel::None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrectionSpec {
    pub mode: CorrectionMode,
    /// Used by the regularized mode outside of sweeps.
    pub lambda: f64,
    pub lambda_grid: Vec<f64>,
    pub solver: SolverKind,
}

impl Default for CorrectionSpec {
    fn default() -> Self {
        CorrectionSpec {
            mode: CorrectionMode::Exact,
            lambda: 1e-2,
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            solver: SolverKind::Direct,
        }
    }
}

impl CorrectionSpec {
    pub fn config(&self, noise: NoiseModel) -> CorrectionConfig {
        match self.mode {
            CorrectionMode::Exact => CorrectionConfig {
                noise,
                ..CorrectionConfig::exact()
            },
            CorrectionMode::Regularized => CorrectionConfig::regularized(self.lambda, noise).with_solver(self.solver),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Smooth random images drawn from a seeded low-dimensional dictionary.
    Synthetic {
        height: usize,
        width: usize,
        #[serde(default = "one")]
        channels: usize,
        #[serde(default = "default_components")]
        components: usize,
        seed: u64,
    },
    /// Binary PGM files or NIT1 tensors of shape `[H, W]` or `[C, H, W]`.
    Files { paths: Vec<PathBuf> },
}

fn one() -> usize {
    1
}

fn default_components() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    #[serde(default = "default_dataset_name")]
    pub name: String,
    pub source: DatasetSource,
    /// Evaluation images (synthetic sources only).
    #[serde(default = "default_count")]
    pub count: usize,
    /// Training images for learned reconstructors (synthetic sources only;
    /// file sources train on the evaluation images).
    #[serde(default = "default_train_count")]
    pub train_count: usize,
}

fn default_dataset_name() -> String {
    "synthetic".into()
}

fn default_count() -> usize {
    8
}

fn default_train_count() -> usize {
    64
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            name: default_dataset_name(),
            source: DatasetSource::Synthetic {
                height: 16,
                width: 16,
                channels: 1,
                components: default_components(),
                seed: 1,
            },
            count: default_count(),
            train_count: default_train_count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub operator: OperatorSpec,
    /// Extra operators for `bench`; `operator` is always included first.
    #[serde(default)]
    pub bench_operators: Vec<OperatorSpec>,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default = "default_reconstructor")]
    pub reconstructor: ReconstructorSpec,
    /// Extra reconstructors for `bench`.
    #[serde(default)]
    pub bench_reconstructors: Vec<ReconstructorSpec>,
    #[serde(default)]
    pub correction: CorrectionSpec,
    #[serde(default)]
    pub dataset: DatasetSpec,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub base_seed: u64,
    /// Epochs for `train_dynamics`.
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub learning_rate: Option<f64>,
}

fn default_reconstructor() -> ReconstructorSpec {
    ReconstructorSpec::Pinv
}

impl ExperimentConfig {
    pub fn new(experiment: Experiment, out_dir: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            experiment,
            operator: OperatorSpec::Mask { p: 0.5, seed: 7, per_channel: false },
            bench_operators: Vec::new(),
            noise: NoiseSpec::default(),
            reconstructor: default_reconstructor(),
            bench_reconstructors: Vec::new(),
            correction: CorrectionSpec::default(),
            dataset: DatasetSpec::default(),
            out_dir: out_dir.into(),
            base_seed: 0,
            epochs: default_epochs(),
            learning_rate: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks that referenced inputs exist before any work starts.
    pub fn validate(&self) -> Result<()> {
        for s in &self.noise.sigma {
            check_sigma(*s)?;
        }
        if let Some(p) = &self.noise.covariance {
            ensure_exists(p)?;
        }
        if let DatasetSource::Files { paths } = &self.dataset.source {
            if paths.is_empty() {
                return Err(Error::Parameter("dataset file list is empty".into()));
            }
            for p in paths {
                ensure_exists(p)?;
            }
        }
        for r in std::iter::once(&self.reconstructor).chain(&self.bench_reconstructors) {
            if let ReconstructorSpec::External { dir } = r {
                ensure_exists(dir)?;
            }
        }
        if self.correction.lambda_grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Error::Parameter("lambda grid values must be finite and >= 0".into()));
        }
        Ok(())
    }
}

fn ensure_exists(p: &Path) -> Result<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} does not exist", p.display()),
        )))
    }
}

/// Parses a comma-separated list of reals.
pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Error::Parameter(format!("cannot parse {t:?} as a number")))
        })
        .collect()
}
