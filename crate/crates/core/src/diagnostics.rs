//! Image-quality metrics and the consistency/noise diagnostics.

use nalgebra::{Cholesky, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::correction::NoiseModel;
use crate::error::{check_finite, check_len, Error, Result};
use crate::linops::{Geometry, OperatorKind};
use crate::pinv::PinvEngine;
use crate::reconstructors::make_well_trained;
use crate::rng::rng_from_seed;
use crate::vecops::{norm2_sq, sub};

pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len("mse operand", a.len(), b.len())?;
    if a.is_empty() {
        return Err(Error::Parameter("mse of empty signals".into()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// `10 log10(peak² / mse)`; infinite for identical signals.
pub fn psnr(a: &[f64], b: &[f64], peak: f64) -> Result<f64> {
    if !(peak > 0.0) || !peak.is_finite() {
        return Err(Error::Parameter(format!("psnr peak must be > 0, got {peak}")));
    }
    let e = mse(a, b)?;
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / e).log10())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    /// Side of the square Gaussian window.
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
        }
    }
}

fn gaussian_window(params: &SsimParams) -> Vec<f64> {
    let half = (params.window as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..params.window)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * params.sigma * params.sigma)).exp()
        })
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Valid-mode separable filtering of an `h × w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = taps.iter().enumerate().map(|(i, t)| t * plane[r * w + c + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = taps.iter().enumerate().map(|(i, t)| t * rows[(r + i) * ow + c]).sum();
        }
    }
    out
}

/// Mean structural similarity with a Gaussian window, computed over valid
/// window positions only and averaged across channels.
pub fn ssim(a: &[f64], b: &[f64], geometry: Geometry, params: &SsimParams) -> Result<f64> {
    check_len("ssim operand", geometry.len(), a.len())?;
    check_len("ssim operand", geometry.len(), b.len())?;
    check_finite("ssim operand", a)?;
    check_finite("ssim operand", b)?;
    if params.window == 0 || !(params.sigma > 0.0) || !(params.data_range > 0.0) {
        return Err(Error::Parameter("invalid ssim parameters".into()));
    }
    let (h, w) = (geometry.height, geometry.width);
    if h < params.window || w < params.window {
        return Err(Error::Parameter(format!(
            "image {h}x{w} is smaller than the {0}x{0} ssim window",
            params.window
        )));
    }
    let taps = gaussian_window(params);
    let c1 = (params.k1 * params.data_range).powi(2);
    let c2 = (params.k2 * params.data_range).powi(2);
    let plane = h * w;
    let mut total = 0.0;
    for ch in 0..geometry.channels {
        let x = &a[ch * plane..(ch + 1) * plane];
        let y = &b[ch * plane..(ch + 1) * plane];
        let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(u, v)| u * v).collect() };
        let mx = filter_valid(x, h, w, &taps);
        let my = filter_valid(y, h, w, &taps);
        let mxx = filter_valid(&prod(x, x), h, w, &taps);
        let myy = filter_valid(&prod(y, y), h, w, &taps);
        let mxy = filter_valid(&prod(x, y), h, w, &taps);
        let mut sum = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cxy = mxy[i] - ux * uy;
            sum += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += sum / mx.len() as f64;
    }
    Ok(total / geometry.channels as f64)
}

/// `‖A(f̂ − A⁺y)‖²`
pub fn nullspace_consistency(engine: &PinvEngine, y: &[f64], fhat: &[f64]) -> Result<f64> {
    let op = engine.operator();
    check_len("reconstruction", op.input_dim(), fhat.len())?;
    let d = sub(fhat, &engine.pinv_apply(y)?);
    Ok(norm2_sq(&op.apply(&d)?))
}

/// `‖A f̂ − y‖²`
pub fn range_residual(engine: &PinvEngine, y: &[f64], fhat: &[f64]) -> Result<f64> {
    let op = engine.operator();
    check_len("measurement", op.output_dim(), y.len())?;
    Ok(norm2_sq(&sub(&op.apply(fhat)?, y)))
}

/// `Tr(A⁺ Σ A⁺ᵀ)`, the expected squared error that measurement noise adds
/// through the range-space component.
pub fn noise_bias_trace(engine: &PinvEngine, noise: &NoiseModel) -> Result<f64> {
    let op = engine.operator();
    let m = op.output_dim();
    noise.validate(m)?;
    match noise {
        NoiseModel::None => return Ok(0.0),
        NoiseModel::Isotropic { sigma } => {
            if let Some(s) = engine.singular_values() {
                return Ok(sigma * sigma * s.iter().map(|v| 1.0 / (v * v)).sum::<f64>());
            }
        }
        NoiseModel::Diagonal { variances } if op.kind() == OperatorKind::Mask => {
            return Ok(variances.iter().sum());
        }
        _ => {}
    }
    let p = engine.pinv_matrix()?;
    Ok(match noise {
        NoiseModel::Isotropic { sigma } => sigma * sigma * p.norm_squared(),
        NoiseModel::Diagonal { variances } => p
            .column_iter()
            .zip(variances)
            .map(|(col, v)| v * col.norm_squared())
            .sum(),
        NoiseModel::Dense { covariance } => (&p * covariance * p.transpose()).trace(),
        NoiseModel::None => unreachable!(),
    })
}

/// Monte Carlo estimate of `E‖f̂ − x‖²` for the well-trained reconstructor
/// `f̂ = A⁺(Ax + n) + (I − A⁺A)x` with `n ~ N(0, Σ)`.
pub fn monte_carlo_noise_error(
    engine: &PinvEngine,
    x: &[f64],
    noise: &NoiseModel,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let op = engine.operator();
    let m = op.output_dim();
    noise.validate(m)?;
    if trials == 0 {
        return Err(Error::Parameter("trials must be >= 1".into()));
    }
    let clean = op.apply(x)?;
    let well = make_well_trained(std::sync::Arc::new(engine.clone()));
    let factor = match noise {
        NoiseModel::Dense { covariance } => Some(Cholesky::new(covariance.clone()).expect("validated").l()),
        _ => None,
    };
    let mut rng = rng_from_seed(seed);
    let mut total = 0.0;
    for _ in 0..trials {
        let z: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n: Vec<f64> = match noise {
            NoiseModel::None => vec![0.0; m],
            NoiseModel::Isotropic { sigma } => z.iter().map(|v| sigma * v).collect(),
            NoiseModel::Diagonal { variances } => z.iter().zip(variances).map(|(v, s)| s.sqrt() * v).collect(),
            NoiseModel::Dense { .. } => {
                let l = factor.as_ref().expect("dense factor");
                (l * DVector::from_vec(z)).data.into()
            }
        };
        let y: Vec<f64> = clean.iter().zip(&n).map(|(a, b)| a + b).collect();
        total += norm2_sq(&sub(&well.output(&y, x)?, x));
    }
    Ok(total / trials as f64)
}

/// One row of an evaluation table.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct MetricsRecord {
    pub experiment: String,
    pub dataset: String,
    pub image_id: String,
    pub method: String,
    pub lambda: Option<f64>,
    pub psnr: f64,
    pub ssim: Option<f64>,
    pub mse: f64,
    pub nullspace_consistency: f64,
    pub range_residual: f64,
}

/// Metrics of `estimate` against `truth` for measurement `y`. SSIM is left
/// out when no geometry is known or the image is smaller than the window.
pub struct Evaluation<'a> {
    pub engine: &'a PinvEngine,
    pub geometry: Option<Geometry>,
    pub ssim: SsimParams,
    pub peak: f64,
}

impl Evaluation<'_> {
    pub fn record(
        &self,
        labels: (&str, &str, &str, &str),
        lambda: Option<f64>,
        truth: &[f64],
        y: &[f64],
        estimate: &[f64],
    ) -> Result<MetricsRecord> {
        let (experiment, dataset, image_id, method) = labels;
        let ssim_value = match self.geometry {
            Some(g) if g.height >= self.ssim.window && g.width >= self.ssim.window => {
                Some(ssim(estimate, truth, g, &self.ssim)?)
            }
            _ => None,
        };
        Ok(MetricsRecord {
            experiment: experiment.into(),
            dataset: dataset.into(),
            image_id: image_id.into(),
            method: method.into(),
            lambda,
            psnr: psnr(estimate, truth, self.peak)?,
            ssim: ssim_value,
            mse: mse(estimate, truth)?,
            nullspace_consistency: nullspace_consistency(self.engine, y, estimate)?,
            range_residual: range_residual(self.engine, y, estimate)?,
        })
    }
}
