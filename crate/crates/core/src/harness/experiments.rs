//! Experiment drivers. Every driver reads its inputs from the configuration
//! and the output directory, writes NIT1 tensors and CSV tables there, and
//! is bit-for-bit reproducible from `(config, base_seed)`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::info;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{isotropic, DatasetSource, ExperimentConfig, OperatorSpec, ReconstructorSpec};
use super::csv::{format_number, metrics_to_csv, table_to_csv, write_text};
use super::io::{load_image, read_nit1, write_nit1, SmoothDictionary, Tensor};
use crate::correction::{
    correct, exact_correction, lambda_grid_search, CorrectionMode, NoiseModel, RegularizedSolver,
};
use crate::diagnostics::{mse, nullspace_consistency, psnr, ssim, Evaluation, MetricsRecord, SsimParams};
use crate::error::{Error, Result};
use crate::linops::{Geometry, SensingOperator};
use crate::pinv::PinvEngine;
use crate::reconstructors::{
    estimate_lipschitz, fit_learned_linear, train_epochs_with, AffineMap, Dataset, Reconstructor, Sample,
};
use crate::rng::{derive_seed, rng_from_seed};

pub const MANIFEST: &str = "manifest.json";
pub const TRUTH_DIR: &str = "truth";
pub const MEASUREMENT_DIR: &str = "measurements";
pub const RECONSTRUCTION_DIR: &str = "reconstructions";
pub const CORRECTED_DIR: &str = "corrected";

pub const TRAIN_DYNAMICS_HEADER: [&str; 7] = [
    "epoch",
    "train_mse_net",
    "train_mse_projected",
    "test_mse_net",
    "test_mse_projected",
    "nullspace_consistency_train",
    "nullspace_consistency_test",
];

pub const SWEEP_HEADER: [&str; 6] = ["sigma", "dataset", "best_lambda", "method", "psnr", "ssim"];

/// Ground-truth image with its position in the source, which fixes its seed.
#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub id: String,
    pub index: u64,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Split {
    Train,
    Test,
    Validation,
}

/// Images of one split. Synthetic sources lay the splits out as
/// `[train | test | validation]` in index space; file sources serve the
/// same images for every split.
fn load_split(cfg: &ExperimentConfig, split: Split) -> Result<(Geometry, Vec<LabeledImage>)> {
    let spec = &cfg.dataset;
    match &spec.source {
        DatasetSource::Synthetic {
            height,
            width,
            channels,
            components,
            seed,
        } => {
            let geometry = Geometry::new(*height, *width, *channels)?;
            let dict = SmoothDictionary::new(geometry, *components, *seed)?;
            let (start, count, prefix) = match split {
                Split::Train => (0, spec.train_count, "train"),
                Split::Test => (spec.train_count, spec.count, "img"),
                Split::Validation => (spec.train_count + spec.count, spec.count, "val"),
            };
            let images = (start..start + count)
                .map(|i| LabeledImage {
                    id: format!("{prefix}{i:05}"),
                    index: i as u64,
                    x: dict.image(i as u64),
                })
                .collect();
            Ok((geometry, images))
        }
        DatasetSource::Files { paths } => {
            let mut geometry = None;
            let mut images = Vec::with_capacity(paths.len());
            for (i, path) in paths.iter().enumerate() {
                let (g, x) = load_image(path)?;
                match geometry {
                    None => geometry = Some(g),
                    Some(first) if first != g => {
                        return Err(Error::Dimension {
                            what: "dataset image",
                            expected: first.len(),
                            actual: g.len(),
                        })
                    }
                    _ => {}
                }
                let id = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .map(String::from)
                    .unwrap_or_else(|| format!("img{i:05}"));
                images.push(LabeledImage { id, index: i as u64, x });
            }
            let geometry = geometry.ok_or_else(|| Error::Parameter("dataset file list is empty".into()))?;
            Ok((geometry, images))
        }
    }
}

/// `y = A x + σ g` with `g` drawn from the stream `base_seed ⊕ index`.
pub fn measure(op: &SensingOperator, x: &[f64], sigma: f64, seed: u64) -> Result<Vec<f64>> {
    let mut y = op.apply(x)?;
    if sigma > 0.0 {
        let mut rng = rng_from_seed(seed);
        for v in &mut y {
            *v += sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(y)
}

fn measured_dataset(
    op: &SensingOperator,
    geometry: Geometry,
    images: &[LabeledImage],
    sigma: f64,
    base_seed: u64,
) -> Result<Dataset> {
    let samples = images
        .par_iter()
        .map(|img| {
            Ok(Sample {
                id: img.id.clone(),
                y: measure(op, &img.x, sigma, derive_seed(base_seed, img.index))?,
                x: img.x.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples, Some(geometry))
}

struct Setup {
    geometry: Geometry,
    engine: Arc<PinvEngine>,
}

impl Setup {
    fn new(spec: &OperatorSpec, geometry: Geometry) -> Result<Self> {
        let op = Arc::new(spec.build(geometry)?);
        Ok(Setup {
            geometry,
            engine: Arc::new(PinvEngine::new(op)?),
        })
    }

    fn op(&self) -> &SensingOperator {
        self.engine.operator()
    }
}

/// Builds a reconstructor; learned kinds are trained on `train()`.
fn build_reconstructor(
    spec: &ReconstructorSpec,
    setup: &Setup,
    ids: &[String],
    train: impl FnOnce() -> Result<Dataset>,
    seed: u64,
) -> Result<Reconstructor> {
    match spec {
        ReconstructorSpec::Adjoint => Ok(Reconstructor::adjoint(setup.engine.operator_arc())),
        ReconstructorSpec::Pinv => Ok(Reconstructor::pinv(setup.engine.clone())),
        ReconstructorSpec::Tikhonov { alpha } => Reconstructor::tikhonov(&setup.engine, *alpha),
        ReconstructorSpec::LearnedLinear { alpha } => fit_learned_linear(setup.op(), &train()?, *alpha),
        ReconstructorSpec::TrainableLinear { epochs, learning_rate } => {
            let data = train()?;
            let lr = match learning_rate {
                Some(lr) => *lr,
                None => 1.0 / estimate_lipschitz(&data, seed)?,
            };
            let mut last = None;
            train_epochs_with(setup.op(), &data, *epochs, lr, seed, |epoch, map, _| {
                if epoch == *epochs {
                    last = Some(map.clone());
                }
                Ok(())
            })?;
            Ok(Reconstructor::TrainableLinear {
                map: last.expect("final epoch reported"),
                epoch: *epochs,
            })
        }
        ReconstructorSpec::External { dir } => {
            let n = setup.op().input_dim();
            let mut outputs = BTreeMap::new();
            for id in ids {
                let path = dir.join(format!("{id}.nit"));
                if path.exists() {
                    outputs.insert(id.clone(), read_nit1(&path)?.data);
                }
            }
            Reconstructor::external(outputs, n)
        }
    }
}

fn training_data(cfg: &ExperimentConfig, setup: &Setup, sigma: f64) -> Result<Dataset> {
    let (g, images) = load_split(cfg, Split::Train)?;
    if g != setup.geometry {
        return Err(Error::Dimension {
            what: "training image",
            expected: setup.geometry.len(),
            actual: g.len(),
        });
    }
    measured_dataset(setup.op(), g, &images, sigma, cfg.base_seed)
}

fn noise_for_correction(cfg: &ExperimentConfig, sigma: f64) -> Result<NoiseModel> {
    match &cfg.noise.covariance {
        Some(path) => {
            let t = read_nit1(path)?;
            match t.dims[..] {
                [r, c] => Ok(NoiseModel::Dense {
                    covariance: nalgebra::DMatrix::from_row_slice(r, c, &t.data),
                }),
                _ => Err(Error::Format(format!("covariance must be a 2-D tensor, got {:?}", t.dims))),
            }
        }
        None => Ok(isotropic(sigma)),
    }
}

fn quantize(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x as f32 as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestImage {
    pub id: String,
    pub index: u64,
    pub noise_seed: u64,
    pub truth: String,
    pub measurement: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestOperator {
    pub spec: OperatorSpec,
    pub kind: String,
    pub input_dim: usize,
    pub output_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset: String,
    pub geometry: Geometry,
    pub operator: ManifestOperator,
    pub sigma: f64,
    pub base_seed: u64,
    pub images: Vec<ManifestImage>,
}

impl Manifest {
    pub fn load(out_dir: &Path) -> Result<Self> {
        let path = out_dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e} (run simulate first)", path.display()),
            ))
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Writes ground truth and measurements for the evaluation split.
pub fn run_simulate(cfg: &ExperimentConfig) -> Result<Manifest> {
    cfg.validate()?;
    let sigma = cfg.noise.first_sigma()?;
    let (geometry, images) = load_split(cfg, Split::Test)?;
    let setup = Setup::new(&cfg.operator, geometry)?;
    let data = measured_dataset(setup.op(), geometry, &images, sigma, cfg.base_seed)?;
    let out = &cfg.out_dir;
    let mut entries = Vec::with_capacity(images.len());
    for (img, sample) in images.iter().zip(&data.samples) {
        let truth = format!("{TRUTH_DIR}/{}.nit", img.id);
        let measurement = format!("{MEASUREMENT_DIR}/{}.nit", img.id);
        write_nit1(&out.join(&truth), &Tensor::image(geometry, img.x.clone())?)?;
        write_nit1(&out.join(&measurement), &Tensor::vector(sample.y.clone()))?;
        entries.push(ManifestImage {
            id: img.id.clone(),
            index: img.index,
            noise_seed: derive_seed(cfg.base_seed, img.index),
            truth,
            measurement,
        });
    }
    let manifest = Manifest {
        dataset: cfg.dataset.name.clone(),
        geometry,
        operator: ManifestOperator {
            spec: cfg.operator.clone(),
            kind: setup.op().kind().name().into(),
            input_dim: setup.op().input_dim(),
            output_dim: setup.op().output_dim(),
        },
        sigma,
        base_seed: cfg.base_seed,
        images: entries,
    };
    write_text(
        &out.join(MANIFEST),
        &(serde_json::to_string_pretty(&manifest)? + "\n"),
    )?;
    info!("simulated {} measurements into {}", manifest.images.len(), out.display());
    Ok(manifest)
}

/// Simulated files as read back from disk.
struct Simulated {
    manifest: Manifest,
    setup: Setup,
    truths: Vec<Vec<f64>>,
    measurements: Vec<Vec<f64>>,
}

fn load_simulated(cfg: &ExperimentConfig) -> Result<Simulated> {
    let manifest = Manifest::load(&cfg.out_dir)?;
    let setup = Setup::new(&manifest.operator.spec, manifest.geometry)?;
    let mut truths = Vec::with_capacity(manifest.images.len());
    let mut measurements = Vec::with_capacity(manifest.images.len());
    for img in &manifest.images {
        let x = read_nit1(&cfg.out_dir.join(&img.truth))?.data;
        let y = read_nit1(&cfg.out_dir.join(&img.measurement))?.data;
        crate::error::check_len("stored truth", setup.op().input_dim(), x.len())?;
        crate::error::check_len("stored measurement", setup.op().output_dim(), y.len())?;
        truths.push(x);
        measurements.push(y);
    }
    Ok(Simulated {
        manifest,
        setup,
        truths,
        measurements,
    })
}

fn ids(manifest: &Manifest) -> Vec<String> {
    manifest.images.iter().map(|i| i.id.clone()).collect()
}

/// Applies the configured reconstructor to every stored measurement.
pub fn run_reconstruct(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let sim = load_simulated(cfg)?;
    let names = ids(&sim.manifest);
    let recon = build_reconstructor(
        &cfg.reconstructor,
        &sim.setup,
        &names,
        || training_data(cfg, &sim.setup, sim.manifest.sigma),
        cfg.base_seed,
    )?;
    let outputs = names
        .par_iter()
        .zip(&sim.measurements)
        .map(|(id, y)| recon.reconstruct(id, y))
        .collect::<Result<Vec<_>>>()?;
    let mut written = Vec::with_capacity(outputs.len());
    for (id, f) in names.iter().zip(outputs) {
        let path = cfg.out_dir.join(RECONSTRUCTION_DIR).join(format!("{id}.nit"));
        write_nit1(&path, &Tensor::image(sim.setup.geometry, f)?)?;
        written.push(path);
    }
    Ok(written)
}

fn reconstruction_source(cfg: &ExperimentConfig) -> PathBuf {
    match &cfg.reconstructor {
        ReconstructorSpec::External { dir } => dir.clone(),
        _ => cfg.out_dir.join(RECONSTRUCTION_DIR),
    }
}

fn read_reconstructions(dir: &Path, names: &[String], n: usize) -> Result<Vec<Vec<f64>>> {
    names
        .iter()
        .map(|id| {
            let path = dir.join(format!("{id}.nit"));
            if !path.exists() {
                return Err(Error::Lookup(format!("no reconstruction for measurement {id} in {}", dir.display())));
            }
            let data = read_nit1(&path)?.data;
            crate::error::check_len("stored reconstruction", n, data.len())?;
            Ok(data)
        })
        .collect()
}

fn correction_lambda(cfg: &ExperimentConfig) -> Option<f64> {
    match cfg.correction.mode {
        CorrectionMode::Exact => None,
        CorrectionMode::Regularized => Some(cfg.correction.lambda),
    }
}

/// Projects every reconstruction in memory: the pure part of [`run_correct`].
pub fn correct_all(
    engine: &PinvEngine,
    cfg: &ExperimentConfig,
    sigma: f64,
    measurements: &[Vec<f64>],
    reconstructions: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let config = cfg.correction.config(noise_for_correction(cfg, sigma)?);
    if config.mode == CorrectionMode::Regularized {
        let solver = RegularizedSolver::new(engine, &config)?;
        return measurements
            .par_iter()
            .zip(reconstructions)
            .map(|(y, f)| solver.solve(y, f))
            .collect();
    }
    measurements
        .par_iter()
        .zip(reconstructions)
        .map(|(y, f)| correct(engine, y, f, &config))
        .collect()
}

fn evaluation(engine: &PinvEngine, geometry: Geometry) -> Evaluation<'_> {
    Evaluation {
        engine,
        geometry: Some(geometry),
        ssim: SsimParams::default(),
        peak: 1.0,
    }
}

/// Network and projected metrics for every image.
#[allow(clippy::too_many_arguments)]
fn metric_rows(
    experiment: &str,
    dataset: &str,
    methods: (&str, &str),
    lambda: Option<f64>,
    ev: &Evaluation<'_>,
    names: &[String],
    truths: &[Vec<f64>],
    measurements: &[Vec<f64>],
    network: &[Vec<f64>],
    projected: Option<&[Vec<f64>]>,
) -> Result<Vec<MetricsRecord>> {
    let per_image = (0..names.len())
        .into_par_iter()
        .map(|i| {
            let mut rows = vec![ev.record(
                (experiment, dataset, &names[i], methods.0),
                None,
                &truths[i],
                &measurements[i],
                &network[i],
            )?];
            if let Some(p) = projected {
                rows.push(ev.record(
                    (experiment, dataset, &names[i], methods.1),
                    lambda,
                    &truths[i],
                    &measurements[i],
                    &p[i],
                )?);
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_image.into_iter().flatten().collect())
}

/// Corrects stored reconstructions, writes them and a metrics table with a
/// `network` and a `projected` row per image.
pub fn run_correct(cfg: &ExperimentConfig) -> Result<Vec<MetricsRecord>> {
    cfg.validate()?;
    let sim = load_simulated(cfg)?;
    let names = ids(&sim.manifest);
    let n = sim.setup.op().input_dim();
    let network = read_reconstructions(&reconstruction_source(cfg), &names, n)?;
    let corrected = correct_all(&sim.setup.engine, cfg, sim.manifest.sigma, &sim.measurements, &network)?;
    let corrected: Vec<Vec<f64>> = corrected.into_iter().map(quantize).collect();
    for (id, x) in names.iter().zip(&corrected) {
        let path = cfg.out_dir.join(CORRECTED_DIR).join(format!("{id}.nit"));
        write_nit1(&path, &Tensor::image(sim.setup.geometry, x.clone())?)?;
    }
    let ev = evaluation(&sim.setup.engine, sim.setup.geometry);
    let rows = metric_rows(
        "correct",
        &sim.manifest.dataset,
        ("network", "projected"),
        correction_lambda(cfg),
        &ev,
        &names,
        &sim.truths,
        &sim.measurements,
        &network,
        Some(&corrected),
    )?;
    write_text(&cfg.out_dir.join("metrics.csv"), &metrics_to_csv(&rows)?)?;
    Ok(rows)
}

/// Recomputes metrics from the files on disk.
pub fn run_evaluate(cfg: &ExperimentConfig) -> Result<Vec<MetricsRecord>> {
    cfg.validate()?;
    let sim = load_simulated(cfg)?;
    let names = ids(&sim.manifest);
    let n = sim.setup.op().input_dim();
    let network = read_reconstructions(&reconstruction_source(cfg), &names, n)?;
    let corrected_dir = cfg.out_dir.join(CORRECTED_DIR);
    let corrected = if corrected_dir.exists() {
        Some(read_reconstructions(&corrected_dir, &names, n)?)
    } else {
        None
    };
    let ev = evaluation(&sim.setup.engine, sim.setup.geometry);
    let rows = metric_rows(
        "evaluate",
        &sim.manifest.dataset,
        ("network", "projected"),
        correction_lambda(cfg),
        &ev,
        &names,
        &sim.truths,
        &sim.measurements,
        &network,
        corrected.as_deref(),
    )?;
    write_text(&cfg.out_dir.join("evaluate.csv"), &metrics_to_csv(&rows)?)?;
    Ok(rows)
}

/// One row of the training-dynamics table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_mse_net: f64,
    pub train_mse_projected: f64,
    pub test_mse_net: f64,
    pub test_mse_projected: f64,
    pub nullspace_consistency_train: f64,
    pub nullspace_consistency_test: f64,
}

struct SplitStats {
    mse_net: f64,
    mse_projected: f64,
    consistency: f64,
}

fn split_stats(engine: &PinvEngine, map: &AffineMap, data: &Dataset) -> Result<SplitStats> {
    let (_, ys) = data.columns();
    let outputs = map.apply_columns(&ys);
    let per = data
        .samples
        .par_iter()
        .zip(outputs.column_iter().collect::<Vec<_>>())
        .map(|(s, f)| {
            let f = f.as_slice();
            let p = exact_correction(engine, &s.y, f)?;
            Ok((mse(f, &s.x)?, mse(&p, &s.x)?, nullspace_consistency(engine, &s.y, f)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let count = per.len() as f64;
    let (a, b, c) = per
        .iter()
        .fold((0.0, 0.0, 0.0), |acc, v| (acc.0 + v.0, acc.1 + v.1, acc.2 + v.2));
    Ok(SplitStats {
        mse_net: a / count,
        mse_projected: b / count,
        consistency: c / count,
    })
}

/// Trains an affine reconstructor by gradient descent and tracks raw and
/// projected errors plus the consistency term on both splits.
pub fn run_train_dynamics(cfg: &ExperimentConfig) -> Result<Vec<EpochRow>> {
    cfg.validate()?;
    let sigma = cfg.noise.first_sigma()?;
    let (geometry, train_images) = load_split(cfg, Split::Train)?;
    let (_, test_images) = load_split(cfg, Split::Test)?;
    let setup = Setup::new(&cfg.operator, geometry)?;
    let train = measured_dataset(setup.op(), geometry, &train_images, sigma, cfg.base_seed)?;
    let test = measured_dataset(setup.op(), geometry, &test_images, sigma, cfg.base_seed)?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::Parameter("train_dynamics needs non-empty train and test splits".into()));
    }
    let lr = match cfg.learning_rate {
        Some(lr) => lr,
        None => 1.0 / estimate_lipschitz(&train, cfg.base_seed)?,
    };
    let mut rows = Vec::with_capacity(cfg.epochs + 1);
    train_epochs_with(setup.op(), &train, cfg.epochs, lr, cfg.base_seed, |epoch, map, _| {
        let tr = split_stats(&setup.engine, map, &train)?;
        let te = split_stats(&setup.engine, map, &test)?;
        rows.push(EpochRow {
            epoch,
            train_mse_net: tr.mse_net,
            train_mse_projected: tr.mse_projected,
            test_mse_net: te.mse_net,
            test_mse_projected: te.mse_projected,
            nullspace_consistency_train: tr.consistency,
            nullspace_consistency_test: te.consistency,
        });
        Ok(())
    })?;
    let table = rows.iter().map(|r| {
        vec![
            r.epoch.to_string(),
            format_number(r.train_mse_net),
            format_number(r.train_mse_projected),
            format_number(r.test_mse_net),
            format_number(r.test_mse_projected),
            format_number(r.nullspace_consistency_train),
            format_number(r.nullspace_consistency_test),
        ]
    });
    write_text(
        &cfg.out_dir.join("train_dynamics.csv"),
        &table_to_csv(&TRAIN_DYNAMICS_HEADER, table)?,
    )?;
    Ok(rows)
}

/// One row of the noise sweep table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub sigma: f64,
    pub dataset: String,
    pub best_lambda: Option<f64>,
    pub method: String,
    pub psnr: f64,
    pub ssim: Option<f64>,
}

fn mean_quality(
    recon: &Reconstructor,
    data: &Dataset,
    fix: impl Fn(&Sample, Vec<f64>) -> Result<Vec<f64>> + Sync,
) -> Result<(f64, Option<f64>)> {
    let g = data.geometry.expect("harness datasets carry geometry");
    let params = SsimParams::default();
    let with_ssim = g.height >= params.window && g.width >= params.window;
    let per = data
        .samples
        .par_iter()
        .map(|s| {
            let x = fix(s, recon.reconstruct(&s.id, &s.y)?)?;
            let q = psnr(&x, &s.x, 1.0)?;
            let w = if with_ssim { Some(ssim(&x, &s.x, g, &params)?) } else { None };
            Ok((q, w))
        })
        .collect::<Result<Vec<_>>>()?;
    let count = per.len() as f64;
    let p = per.iter().map(|v| v.0).sum::<f64>() / count;
    let s = with_ssim.then(|| per.iter().map(|v| v.1.unwrap_or(0.0)).sum::<f64>() / count);
    Ok((p, s))
}

/// For each noise level: trains the reconstructor at that level, picks `λ`
/// on a validation split and reports network and projected quality on the
/// test split.
pub fn run_sweep_lambda(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    if cfg.noise.sigma.is_empty() {
        return Err(Error::Parameter("sweep_lambda needs at least one sigma".into()));
    }
    let (geometry, test_images) = load_split(cfg, Split::Test)?;
    let (_, val_images) = load_split(cfg, Split::Validation)?;
    let setup = Setup::new(&cfg.operator, geometry)?;
    let mut rows = Vec::new();
    for &sigma in &cfg.noise.sigma {
        let test = measured_dataset(setup.op(), geometry, &test_images, sigma, cfg.base_seed)?;
        let val = measured_dataset(setup.op(), geometry, &val_images, sigma, cfg.base_seed)?;
        let names: Vec<String> = test.samples.iter().chain(&val.samples).map(|s| s.id.clone()).collect();
        let recon = build_reconstructor(
            &cfg.reconstructor,
            &setup,
            &names,
            || training_data(cfg, &setup, sigma),
            cfg.base_seed,
        )?;
        let noise = noise_for_correction(cfg, sigma)?;
        let search = lambda_grid_search(&setup.engine, &val, &recon, &cfg.correction.lambda_grid, &noise)?;
        let best = search.best_lambda;
        let config = crate::correction::CorrectionConfig::regularized(best, noise).with_solver(cfg.correction.solver);
        let solver = RegularizedSolver::new(&setup.engine, &config)?;
        let (net_psnr, net_ssim) = mean_quality(&recon, &test, |_, f| Ok(f))?;
        let (proj_psnr, proj_ssim) = mean_quality(&recon, &test, |s, f| solver.solve(&s.y, &f))?;
        info!("sigma {sigma}: best lambda {best}, network {net_psnr:.3} dB, projected {proj_psnr:.3} dB");
        rows.push(SweepRow {
            sigma,
            dataset: cfg.dataset.name.clone(),
            best_lambda: None,
            method: "Network".into(),
            psnr: net_psnr,
            ssim: net_ssim,
        });
        rows.push(SweepRow {
            sigma,
            dataset: cfg.dataset.name.clone(),
            best_lambda: Some(best),
            method: "Projected".into(),
            psnr: proj_psnr,
            ssim: proj_ssim,
        });
    }
    let table = rows.iter().map(|r| {
        vec![
            format_number(r.sigma),
            r.dataset.clone(),
            r.best_lambda.map(format_number).unwrap_or_default(),
            r.method.clone(),
            format_number(r.psnr),
            r.ssim.map(format_number).unwrap_or_default(),
        ]
    });
    write_text(&cfg.out_dir.join("sweep_lambda.csv"), &table_to_csv(&SWEEP_HEADER, table)?)?;
    Ok(rows)
}

/// Every configured operator against every configured reconstructor, before
/// and after correction, on the test split.
pub fn run_bench(cfg: &ExperimentConfig) -> Result<Vec<MetricsRecord>> {
    cfg.validate()?;
    let sigma = cfg.noise.first_sigma()?;
    let (geometry, images) = load_split(cfg, Split::Test)?;
    let operators: Vec<&OperatorSpec> = std::iter::once(&cfg.operator).chain(&cfg.bench_operators).collect();
    let recons: Vec<&ReconstructorSpec> =
        std::iter::once(&cfg.reconstructor).chain(&cfg.bench_reconstructors).collect();
    let mut rows = Vec::new();
    for op_spec in operators {
        let setup = Setup::new(op_spec, geometry)?;
        let data = measured_dataset(setup.op(), geometry, &images, sigma, cfg.base_seed)?;
        let names: Vec<String> = data.samples.iter().map(|s| s.id.clone()).collect();
        let truths: Vec<Vec<f64>> = data.samples.iter().map(|s| s.x.clone()).collect();
        let ys: Vec<Vec<f64>> = data.samples.iter().map(|s| s.y.clone()).collect();
        let dataset = format!("{}/{}", cfg.dataset.name, op_spec.label());
        for spec in &recons {
            let recon = build_reconstructor(spec, &setup, &names, || training_data(cfg, &setup, sigma), cfg.base_seed)?;
            let network = names
                .par_iter()
                .zip(&ys)
                .map(|(id, y)| recon.reconstruct(id, y))
                .collect::<Result<Vec<_>>>()?;
            let projected = correct_all(&setup.engine, cfg, sigma, &ys, &network)?;
            let label = spec.label();
            rows.extend(metric_rows(
                "bench",
                &dataset,
                (&label, &format!("{label}+projected")),
                correction_lambda(cfg),
                &evaluation(&setup.engine, geometry),
                &names,
                &truths,
                &ys,
                &network,
                Some(&projected),
            )?);
        }
    }
    write_text(&cfg.out_dir.join("bench.csv"), &metrics_to_csv(&rows)?)?;
    Ok(rows)
}

/// Outcome of [`run`], for reporting.
#[derive(Debug)]
pub enum RunSummary {
    Simulated(Manifest),
    Reconstructed(Vec<PathBuf>),
    Metrics(Vec<MetricsRecord>),
    TrainDynamics(Vec<EpochRow>),
    Sweep(Vec<SweepRow>),
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunSummary> {
    use super::config::Experiment::*;
    std::fs::create_dir_all(&cfg.out_dir)?;
    Ok(match cfg.experiment {
        Simulate => RunSummary::Simulated(run_simulate(cfg)?),
        Reconstruct => RunSummary::Reconstructed(run_reconstruct(cfg)?),
        Correct => RunSummary::Metrics(run_correct(cfg)?),
        Evaluate => RunSummary::Metrics(run_evaluate(cfg)?),
        TrainDynamics => RunSummary::TrainDynamics(run_train_dynamics(cfg)?),
        SweepLambda => RunSummary::Sweep(run_sweep_lambda(cfg)?),
        Bench => RunSummary::Metrics(run_bench(cfg)?),
    })
}
