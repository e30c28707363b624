//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use projcorr::correction::{
    exact_correction, regularized_correction, stationarity_residual, CorrectionConfig, NoiseModel, SolverKind,
};
use projcorr::diagnostics::{monte_carlo_noise_error, mse, noise_bias_trace, psnr, ssim, SsimParams};
use projcorr::harness::config::{DatasetSource, DatasetSpec, Experiment, ExperimentConfig, OperatorSpec, ReconstructorSpec};
use projcorr::harness::experiments::{run_train_dynamics, EpochRow};
use projcorr::harness::run;
use projcorr::linops::{make_gaussian_blur, make_inpainting_mask, make_spi_operator, Geometry, SensingOperator};
use projcorr::pinv::{PinvEngine, PinvMethod, PinvSettings};
use projcorr::reconstructors::make_well_trained;
use projcorr::rng::{rng_from_seed, PortableRng};

type Outcome = std::result::Result<String, String>;

fn randn(rng: &mut PortableRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn diff(a: &[f64], b: &[f64]) -> f64 {
    norm(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>())
}

/// Gaussian `m × n` matrix with `s_min / s_max ≥ min_ratio` (redrawn otherwise).
fn full_row_rank(rng: &mut PortableRng, m: usize, n: usize, min_ratio: f64) -> DMatrix<f64> {
    loop {
        let a = DMatrix::from_fn(m, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let s = a.singular_values();
        if s.min() >= min_ratio * s.max() {
            return a;
        }
    }
}

fn engine(a: &DMatrix<f64>) -> PinvEngine {
    PinvEngine::new(Arc::new(SensingOperator::dense(a.clone()).unwrap())).unwrap()
}

/// Random instance with `m ∈ [1, 8]`, `n ∈ [m, 12]`.
fn random_instance(rng: &mut PortableRng, min_ratio: f64) -> (DMatrix<f64>, Vec<f64>, Vec<f64>) {
    let m = rng.random_range(1..=8);
    let n = rng.random_range(m..=12);
    let a = full_row_rank(rng, m, n, min_ratio);
    let y = randn(rng, m);
    let f = randn(rng, n);
    (a, y, f)
}

/// `min ‖x − f̂‖²` s.t. `Ax = y` through its KKT system.
fn kkt_solve(a: &DMatrix<f64>, y: &[f64], f: &[f64]) -> Vec<f64> {
    let (m, n) = a.shape();
    let mut k = DMatrix::zeros(n + m, n + m);
    k.view_mut((0, 0), (n, n)).fill_with_identity();
    k.view_mut((0, 0), (n, n)).scale_mut(2.0);
    k.view_mut((0, n), (n, m)).copy_from(&a.transpose());
    k.view_mut((n, 0), (m, n)).copy_from(a);
    let mut rhs = DVector::zeros(n + m);
    for i in 0..n {
        rhs[i] = 2.0 * f[i];
    }
    for i in 0..m {
        rhs[n + i] = y[i];
    }
    let sol = k.lu().solve(&rhs).expect("KKT system is nonsingular");
    sol.rows(0, n).iter().copied().collect()
}

fn criterion_1_2() -> (Outcome, Outcome) {
    let start = Instant::now();
    let mut rng = rng_from_seed(101);
    let (mut worst_kkt, mut worst_constraint) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let (a, y, f) = random_instance(&mut rng, 1e-6);
        let x = exact_correction(&engine(&a), &y, &f).unwrap();
        let oracle = kkt_solve(&a, &y, &f);
        worst_kkt = worst_kkt.max(diff(&x, &oracle) / norm(&oracle).max(f64::MIN_POSITIVE));
        let ax: Vec<f64> = (&a * DVector::from_column_slice(&x)).iter().copied().collect();
        worst_constraint = worst_constraint.max(diff(&ax, &y) / (norm(&y) + 1.0));
    }
    let elapsed = start.elapsed().as_secs_f64();
    let c1 = format!("max relative KKT deviation {worst_kkt:.2e}, {elapsed:.2}s");
    let c1 = if worst_kkt <= 1e-8 && elapsed < 5.0 { Ok(c1) } else { Err(c1) };
    let c2 = format!("max ‖Ax*−y‖/(‖y‖+1) = {worst_constraint:.2e}");
    let c2 = if worst_constraint <= 1e-8 { Ok(c2) } else { Err(c2) };
    (c1, c2)
}

fn criterion_3() -> Outcome {
    let mut rng = rng_from_seed(103);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (a, y, _) = random_instance(&mut rng, 1e-6);
        let e = engine(&a);
        let z = randn(&mut rng, a.ncols());
        let range = e.pinv_apply(&y).unwrap();
        let null = e.nullspace_projector_apply(&z).unwrap();
        let fhat: Vec<f64> = range.iter().zip(&null).map(|(p, q)| p + q).collect();
        let out = exact_correction(&e, &y, &fhat).unwrap();
        worst = worst.max(diff(&out, &fhat) / norm(&fhat).max(f64::MIN_POSITIVE));
    }
    let msg = format!("max relative deviation {worst:.2e} over 200 inputs");
    if worst <= 1e-9 { Ok(msg) } else { Err(msg) }
}

fn criterion_4() -> Outcome {
    let mut rng = rng_from_seed(104);
    let mut worst = 0.0f64;
    for i in 0..100 {
        // Dense instances plus a mask and a blur every tenth draw.
        let op = match i % 10 {
            0 => make_inpainting_mask(Geometry::gray(8, 8), 0.5, i as u64).unwrap(),
            5 => make_gaussian_blur(Geometry::gray(8, 8), (0.8, 0.6), 2.0).unwrap(),
            _ => {
                let (a, _, _) = random_instance(&mut rng, 1e-6);
                SensingOperator::dense(a).unwrap()
            }
        };
        let x = randn(&mut rng, op.input_dim());
        let y = op.apply(&x).unwrap();
        let wt = make_well_trained(Arc::new(PinvEngine::new(Arc::new(op)).unwrap()));
        worst = worst.max(mse(&wt.output(&y, &x).unwrap(), &x).unwrap());
    }
    let msg = format!("max MSE {worst:.2e} over 100 instances");
    if worst <= 1e-18 { Ok(msg) } else { Err(msg) }
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let mut rng = rng_from_seed(105);
    let mut worst = 0.0f64;
    for k in 0..10 {
        let m = rng.random_range(2..=6);
        let n = rng.random_range(m..=10);
        let a = full_row_rank(&mut rng, m, n, 1e-3);
        let e = engine(&a);
        let x = randn(&mut rng, n);
        for (j, sigma) in [0.05, 0.3].into_iter().enumerate() {
            let noise = NoiseModel::Isotropic { sigma };
            let trace = noise_bias_trace(&e, &noise).unwrap();
            let mc = monte_carlo_noise_error(&e, &x, &noise, 100_000, 1000 + 2 * k + j as u64).unwrap();
            worst = worst.max((mc - trace).abs() / trace);
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let msg = format!("max relative gap {:.2}% over 20 cases, {elapsed:.1}s", 100.0 * worst);
    if worst <= 0.05 && elapsed < 60.0 { Ok(msg) } else { Err(msg) }
}

fn criterion_6() -> Outcome {
    let mut rng = rng_from_seed(106);
    let mut worst_stat = 0.0f64;
    let mut worst_solvers = 0.0f64;
    let mut zero_exact = true;
    for _ in 0..200 {
        let (a, y, f) = random_instance(&mut rng, 1e-6);
        let e = engine(&a);
        let lambda = 10f64.powf(rng.random_range(-3.0..1.0));
        let noise = if rng.random::<bool>() {
            NoiseModel::None
        } else {
            NoiseModel::Isotropic { sigma: rng.random_range(0.2..2.0) }
        };
        let config = CorrectionConfig::regularized(lambda, noise.clone());
        let direct = regularized_correction(&e, &y, &f, &config).unwrap();
        let cg = regularized_correction(&e, &y, &f, &config.clone().with_solver(SolverKind::Cg)).unwrap();
        worst_stat = worst_stat.max(stationarity_residual(e.operator(), &y, &f, &direct, lambda, &noise).unwrap());
        worst_solvers = worst_solvers.max(diff(&direct, &cg));
        let zero = regularized_correction(&e, &y, &f, &CorrectionConfig::regularized(0.0, noise)).unwrap();
        zero_exact &= zero == f;
    }
    // Large λ on well-conditioned full-row-rank instances.
    let mut worst_limit = 0.0f64;
    for _ in 0..200 {
        let (a, y, f) = random_instance(&mut rng, 0.1);
        let e = engine(&a);
        let x = regularized_correction(&e, &y, &f, &CorrectionConfig::regularized(1e6, NoiseModel::None)).unwrap();
        let exact = exact_correction(&e, &y, &f).unwrap();
        worst_limit = worst_limit.max(diff(&x, &exact));
    }
    let msg = format!(
        "stationarity {worst_stat:.2e}, λ=0 exact: {zero_exact}, λ=1e6 gap {worst_limit:.2e}, direct vs CG {worst_solvers:.2e}"
    );
    if worst_stat <= 1e-8 && zero_exact && worst_limit <= 1e-3 && worst_solvers <= 1e-8 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_7() -> Outcome {
    let mut rng = rng_from_seed(107);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (a, y, f) = random_instance(&mut rng, 1e-6);
        let e = engine(&a);
        let sigma = rng.random_range(0.05..1.0);
        let lambda = 10f64.powf(rng.random_range(-3.0..2.0));
        let x = regularized_correction(&e, &y, &f, &CorrectionConfig::regularized(lambda, NoiseModel::Isotropic { sigma }))
            .unwrap();
        // Tikhonov form through the m × m system: f̂ + Aᵀ(σ²/λ I + AAᵀ)⁻¹(y − A f̂).
        let fv = DVector::from_column_slice(&f);
        let r = DVector::from_column_slice(&y) - &a * &fv;
        let m = a.nrows();
        let k = DMatrix::identity(m, m) * (sigma * sigma / lambda) + &a * a.transpose();
        let oracle = fv + a.transpose() * k.lu().solve(&r).unwrap();
        worst = worst.max(diff(&x, oracle.as_slice()) / norm(oracle.as_slice()).max(1.0));
    }
    let msg = format!("max relative deviation {worst:.2e} over 100 instances");
    if worst <= 1e-10 { Ok(msg) } else { Err(msg) }
}

fn dominance_config(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(Experiment::TrainDynamics, out);
    cfg.operator = OperatorSpec::Blur { sigma: [3.0, 0.15], truncation: 4.0 };
    cfg.noise.sigma = vec![0.0];
    cfg.dataset = DatasetSpec {
        name: "deblur-toy".into(),
        source: DatasetSource::Synthetic { height: 32, width: 32, channels: 1, components: 8, seed: 11 },
        count: 50,
        train_count: 200,
    };
    cfg.epochs = 100;
    cfg.base_seed = 3;
    cfg
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<EpochRow> = run_train_dynamics(&dominance_config(dir.path())).map_err(|e| e.to_string())?;
    let violations = rows.iter().filter(|r| r.test_mse_projected > r.test_mse_net).count();
    let first = rows[0].nullspace_consistency_test;
    let last = rows.last().unwrap().nullspace_consistency_test;
    let msg = format!(
        "{} epochs, {violations} dominance violations, null-space term {first:.3e} -> {last:.3e} ({:.2}%)",
        rows.len() - 1,
        100.0 * last / first
    );
    if violations == 0 && rows.len() == 101 && last <= 0.1 * first { Ok(msg) } else { Err(msg) }
}

fn rel_matrix_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

fn criterion_9() -> Outcome {
    let svd = |op: &Arc<SensingOperator>| {
        PinvEngine::with_method(op.clone(), PinvMethod::SvdDense, PinvSettings::default())
            .unwrap()
            .pinv_matrix()
            .unwrap()
    };
    let blur = Arc::new(make_gaussian_blur(Geometry::gray(16, 16), (1.2, 0.6), 4.0).unwrap());
    let spectral = PinvEngine::new(blur.clone()).unwrap();
    let min_response = spectral
        .blur_spectrum()
        .unwrap()
        .spectrum
        .iter()
        .map(|z| z.norm())
        .fold(f64::INFINITY, f64::min);
    let blur_gap = rel_matrix_gap(&spectral.pinv_matrix().unwrap(), &svd(&blur));

    let mask = Arc::new(make_inpainting_mask(Geometry::gray(16, 16), 0.5, 7).unwrap());
    let mask_gap = (PinvEngine::new(mask.clone()).unwrap().pinv_matrix().unwrap() - svd(&mask)).amax();

    let spi = Arc::new(make_spi_operator(256, 64, 9).unwrap());
    let cg = PinvEngine::with_method(spi.clone(), PinvMethod::CgMinimumNorm, PinvSettings::default()).unwrap();
    let spi_gap = rel_matrix_gap(&cg.pinv_matrix().unwrap(), &svd(&spi));

    let msg = format!(
        "spectral vs SVD {blur_gap:.2e} (min |ĥ| {min_response:.2e}), mask vs SVD {mask_gap:.2e}, CG vs SVD {spi_gap:.2e}"
    );
    if blur_gap <= 1e-6 && mask_gap <= 1e-10 && spi_gap <= 1e-8 { Ok(msg) } else { Err(msg) }
}

/// Sliding-window SSIM written out in full, one window at a time.
fn reference_ssim(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let (k, sigma, c1, c2) = (11usize, 1.5f64, 0.01f64.powi(2), 0.03f64.powi(2));
    let mut g = vec![vec![0.0; k]; k];
    let mut total = 0.0;
    for (i, row) in g.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    let mut acc = 0.0;
    let mut windows = 0usize;
    for r in 0..=(h - k) {
        for c in 0..=(w - k) {
            let mut s = [0.0f64; 5];
            for i in 0..k {
                for j in 0..k {
                    let wt = g[i][j] / total;
                    let (p, q) = (a[(r + i) * w + c + j], b[(r + i) * w + c + j]);
                    s[0] += wt * p;
                    s[1] += wt * q;
                    s[2] += wt * p * p;
                    s[3] += wt * q * q;
                    s[4] += wt * p * q;
                }
            }
            let (mx, my) = (s[0], s[1]);
            let num = (2.0 * mx * my + c1) * (2.0 * (s[4] - mx * my) + c2);
            let den = (mx * mx + my * my + c1) * (s[2] - mx * mx + s[3] - my * my + c2);
            acc += num / den;
            windows += 1;
        }
    }
    acc / windows as f64
}

/// Largest violation of the four Moore-Penrose conditions, relative to `‖A‖`/`‖A⁺‖`.
fn moore_penrose_violation(a: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    let ap = a * p;
    let pa = p * a;
    [
        (&ap * a - a).norm() / a.norm(),
        (&pa * p - p).norm() / p.norm(),
        (&ap - ap.transpose()).norm() / ap.norm().max(1.0),
        (&pa - pa.transpose()).norm() / pa.norm().max(1.0),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

fn criterion_10() -> Outcome {
    let mut rng = rng_from_seed(110);
    let mut problems = Vec::new();

    let a: Vec<f64> = (0..256).map(|_| rng.random::<f64>()).collect();
    let b: Vec<f64> = a.iter().map(|v| (v + 0.1 * rng.random::<f64>()).min(1.0)).collect();
    let naive = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / 256.0;
    if (mse(&a, &b).unwrap() - naive).abs() > 1e-14 {
        problems.push("mse vs direct loop".to_string());
    }
    if mse(&[0.0, 0.0], &[1.0, 1.0]).unwrap() != 1.0 || psnr(&[0.0], &[1.0], 1.0).unwrap() != 0.0 {
        problems.push("mse/psnr unit examples".to_string());
    }
    if psnr(&a, &a, 1.0).unwrap() != f64::INFINITY {
        problems.push("psnr identical inputs".to_string());
    }
    if (psnr(&[0.0; 16], &[0.5; 16], 1.0).unwrap() - 10.0 * 4f64.log10()).abs() > 1e-12 {
        problems.push("psnr 0 vs 0.5".to_string());
    }
    let g = Geometry::gray(16, 16);
    let s = ssim(&a, &b, g, &SsimParams::default()).unwrap();
    let ssim_gap = (s - reference_ssim(&a, &b, 16, 16)).abs();
    if ssim_gap > 1e-10 || (ssim(&a, &a, g, &SsimParams::default()).unwrap() - 1.0).abs() > 1e-12 {
        problems.push(format!("ssim gap {ssim_gap:.2e}"));
    }

    let operators: Vec<(&str, Arc<SensingOperator>, PinvMethod)> = vec![
        ("dense", Arc::new(SensingOperator::dense(full_row_rank(&mut rng, 5, 9, 1e-3)).unwrap()), PinvMethod::SvdDense),
        ("mask", Arc::new(make_inpainting_mask(Geometry::gray(8, 8), 0.4, 3).unwrap()), PinvMethod::MaskAnalytic),
        ("blur", Arc::new(make_gaussian_blur(Geometry::gray(10, 10), (1.0, 0.7), 3.0).unwrap()), PinvMethod::SpectralFft),
        ("spi", Arc::new(make_spi_operator(64, 20, 5).unwrap()), PinvMethod::CgMinimumNorm),
    ];
    let mut worst_mp = 0.0f64;
    for (name, op, method) in operators {
        let e = PinvEngine::with_method(op.clone(), method, PinvSettings::default()).unwrap();
        let v = moore_penrose_violation(&op.materialize(usize::MAX).unwrap(), &e.pinv_matrix().unwrap());
        worst_mp = worst_mp.max(v);
        if v > 1e-8 {
            problems.push(format!("Moore-Penrose {name}: {v:.2e}"));
        }
    }
    let msg = format!("ssim gap {ssim_gap:.2e}, worst Moore-Penrose violation {worst_mp:.2e}");
    if problems.is_empty() { Ok(msg) } else { Err(format!("{msg}; {}", problems.join("; "))) }
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    files
}

fn run_all_experiments(out: &Path) -> projcorr::Result<()> {
    let mut base = ExperimentConfig::new(Experiment::Simulate, out);
    base.base_seed = 0xfeed;
    base.noise.sigma = vec![0.05];
    base.operator = OperatorSpec::Blur { sigma: [1.0, 0.6], truncation: 3.0 };
    base.reconstructor = ReconstructorSpec::LearnedLinear { alpha: 1e-2 };
    base.dataset.count = 4;
    base.dataset.train_count = 32;
    for experiment in [Experiment::Simulate, Experiment::Reconstruct, Experiment::Correct, Experiment::Evaluate] {
        run(&ExperimentConfig { experiment, ..base.clone() })?;
    }
    let mut td = ExperimentConfig { experiment: Experiment::TrainDynamics, ..base.clone() };
    td.epochs = 5;
    run(&td)?;
    let mut sweep = ExperimentConfig { experiment: Experiment::SweepLambda, ..base.clone() };
    sweep.noise.sigma = vec![0.0, 0.1];
    run(&sweep)?;
    let mut bench = ExperimentConfig { experiment: Experiment::Bench, ..base.clone() };
    bench.bench_operators = vec![
        OperatorSpec::Mask { p: 0.5, seed: 7, per_channel: false },
        OperatorSpec::Spi { m: 96, seed: 2, gaussian: false },
    ];
    bench.bench_reconstructors = vec![ReconstructorSpec::Pinv, ReconstructorSpec::Tikhonov { alpha: 0.05 }];
    run(&bench)?;
    Ok(())
}

fn criterion_11() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_all_experiments(a.path()).map_err(|e| e.to_string())?;
    run_all_experiments(b.path()).map_err(|e| e.to_string())?;
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    let csv = sa.keys().filter(|k| k.ends_with(".csv")).count();
    let nit = sa.keys().filter(|k| k.ends_with(".nit")).count();
    let differing: Vec<&String> = sa.keys().filter(|k| sa.get(*k) != sb.get(*k)).collect();
    let msg = format!("{csv} CSV and {nit} NIT1 files compared, {} differ", differing.len());
    if sa.len() == sb.len() && differing.is_empty() && csv >= 5 && nit > 0 { Ok(msg) } else { Err(msg) }
}

fn main() {
    let (c1, c2) = criterion_1_2();
    let results: Vec<(usize, &str, Outcome)> = vec![
        (1, "exact correction equals KKT solve", c1),
        (2, "measurement constraint satisfied", c2),
        (3, "idempotence on well-trained inputs", criterion_3()),
        (4, "well-trained fixture recovers x", criterion_4()),
        (5, "noise trace matches Monte Carlo", criterion_5()),
        (6, "regularized closed form", criterion_6()),
        (7, "isotropic reduction to Tikhonov form", criterion_7()),
        (8, "noise-free dominance over training", criterion_8()),
        (9, "cross-engine pseudoinverse agreement", criterion_9()),
        (10, "metric correctness and Moore-Penrose axioms", criterion_10()),
        (11, "bit-identical reruns", criterion_11()),
    ];
    let mut failed = 0;
    for (id, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
