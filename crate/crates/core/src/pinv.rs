//! Moore-Penrose pseudoinverse `A⁺` and the projectors `A⁺A` and
//! `I − A⁺A`, one strategy per operator kind.
//!
//! | method            | operator kinds      | cached at construction          |
//! |-------------------|---------------------|---------------------------------|
//! | `SvdDense`        | any materializable  | truncated thin SVD              |
//! | `MaskAnalytic`    | mask                | nothing (`A⁺ = Aᵀ`)             |
//! | `SpectralFft`     | circular blur       | kernel spectrum and FFT plans   |
//! | `CgMinimumNorm`   | any full row rank   | nothing; CG on `AAᵀ z = y`      |
//!
//! The null-space projector is always applied as `v − A⁺(A v)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::cg::{conjugate_gradient, CgOptions};
use crate::error::{check_finite, check_len, Error, Result};
use crate::linops::{Geometry, OperatorKind, SensingOperator, DEFAULT_MATERIALIZE_LIMIT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PinvMethod {
    SvdDense,
    MaskAnalytic,
    SpectralFft,
    CgMinimumNorm,
}

impl PinvMethod {
    pub fn name(self) -> &'static str {
        match self {
            PinvMethod::SvdDense => "svd_dense",
            PinvMethod::MaskAnalytic => "mask_analytic",
            PinvMethod::SpectralFft => "spectral_fft",
            PinvMethod::CgMinimumNorm => "cg_minimum_norm",
        }
    }

    /// Default strategy for an operator kind.
    pub fn for_kind(kind: OperatorKind) -> Self {
        match kind {
            OperatorKind::Dense => PinvMethod::SvdDense,
            OperatorKind::Mask => PinvMethod::MaskAnalytic,
            OperatorKind::CircularBlur => PinvMethod::SpectralFft,
            OperatorKind::RandomProjection => PinvMethod::CgMinimumNorm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinvSettings {
    /// Singular values (or spectrum magnitudes) at or below
    /// `rcond · max` are treated as zero.
    pub rcond: f64,
    pub cg_tol: f64,
    /// Defaults to `10 · min(m, n)`.
    pub cg_max_iter: Option<usize>,
    pub materialize_limit: usize,
}

impl Default for PinvSettings {
    fn default() -> Self {
        PinvSettings {
            rcond: 1e-10,
            cg_tol: 1e-10,
            cg_max_iter: None,
            materialize_limit: DEFAULT_MATERIALIZE_LIMIT,
        }
    }
}

/// Thin SVD restricted to the retained singular triplets.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    /// `m × r`
    pub u: DMatrix<f64>,
    /// Retained singular values, length `r`.
    pub s: Vec<f64>,
    /// `n × r`
    pub v: DMatrix<f64>,
}

#[derive(Clone)]
pub(crate) struct Fft2 {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Fft2({}x{})", self.height, self.width)
    }
}

impl Fft2 {
    pub(crate) fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let (h, w) = (self.height, self.width);
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        for r in 0..h {
            row.process(&mut data[r * w..(r + 1) * w]);
        }
        let mut column = vec![Complex64::new(0.0, 0.0); h];
        for c in 0..w {
            for r in 0..h {
                column[r] = data[r * w + c];
            }
            col.process(&mut column);
            for r in 0..h {
                data[r * w + c] = column[r];
            }
        }
        if inverse {
            let scale = 1.0 / (h * w) as f64;
            data.iter_mut().for_each(|z| *z *= scale);
        }
    }

    pub(crate) fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, false);
    }

    pub(crate) fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, true);
    }

    /// Applies a per-frequency multiplier to each channel of a real planar
    /// signal.
    pub(crate) fn filter_channels(
        &self,
        g: Geometry,
        x: &[f64],
        multiplier: impl Fn(usize, Complex64) -> Complex64,
    ) -> Vec<f64> {
        let hw = g.pixels();
        let mut out = vec![0.0; x.len()];
        let mut buf = vec![Complex64::new(0.0, 0.0); hw];
        for c in 0..g.channels {
            for (b, v) in buf.iter_mut().zip(&x[c * hw..(c + 1) * hw]) {
                *b = Complex64::new(*v, 0.0);
            }
            self.forward(&mut buf);
            for (k, b) in buf.iter_mut().enumerate() {
                *b = multiplier(k, *b);
            }
            self.inverse(&mut buf);
            for (o, b) in out[c * hw..(c + 1) * hw].iter_mut().zip(&buf) {
                *o = b.re;
            }
        }
        out
    }
}

/// Spectrum of a circular blur: `A x = IFFT(spectrum · FFT(x))` per channel.
#[derive(Debug, Clone)]
pub struct BlurSpectrum {
    pub geometry: Geometry,
    /// Transfer function, `H·W` entries in row-major frequency order.
    pub spectrum: Vec<Complex64>,
    /// `true` where `|spectrum| > rcond · max |spectrum|`.
    pub retained: Vec<bool>,
    pub(crate) fft: Fft2,
}

impl BlurSpectrum {
    pub fn new(op: &SensingOperator, rcond: f64) -> Result<Self> {
        let kernel = op.blur_kernel().ok_or_else(|| {
            Error::Unsupported(format!(
                "spectral pseudoinverse needs a circular blur, got {}",
                op.kind().name()
            ))
        })?;
        let g = op.geometry().expect("blur operators carry geometry");
        let (h, w) = (g.height as isize, g.width as isize);
        // out[r] = Σ k[d] x[r+d] is convolution with the flipped kernel, so
        // tap (dr, dc) sits at (-dr, -dc) mod (H, W).
        let mut placed = vec![Complex64::new(0.0, 0.0); g.pixels()];
        let (rr, rc) = (kernel.radius_row() as isize, kernel.radius_col() as isize);
        for dr in -rr..=rr {
            for dc in -rc..=rc {
                let idx = ((-dr).rem_euclid(h) * w + (-dc).rem_euclid(w)) as usize;
                placed[idx] += kernel.tap(dr, dc);
            }
        }
        let fft = Fft2::new(g.height, g.width);
        fft.forward(&mut placed);
        let max = placed.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let retained = placed.iter().map(|z| z.norm() > rcond * max).collect();
        Ok(BlurSpectrum {
            geometry: g,
            spectrum: placed,
            retained,
            fft,
        })
    }

    pub fn max_magnitude(&self) -> f64 {
        self.spectrum.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
enum Cache {
    None,
    Svd(SvdFactors),
    Spectral(BlurSpectrum),
}

/// Pseudoinverse service bound to a single operator.
#[derive(Debug, Clone)]
pub struct PinvEngine {
    op: Arc<SensingOperator>,
    method: PinvMethod,
    settings: PinvSettings,
    cache: Cache,
}

impl PinvEngine {
    /// Engine with the default method for the operator kind.
    pub fn new(op: Arc<SensingOperator>) -> Result<Self> {
        Self::with_settings(op, PinvSettings::default())
    }

    pub fn with_settings(op: Arc<SensingOperator>, settings: PinvSettings) -> Result<Self> {
        let method = PinvMethod::for_kind(op.kind());
        Self::with_method(op, method, settings)
    }

    pub fn with_method(
        op: Arc<SensingOperator>,
        method: PinvMethod,
        settings: PinvSettings,
    ) -> Result<Self> {
        if !(settings.rcond >= 0.0) || !(settings.cg_tol > 0.0) {
            return Err(Error::Parameter(format!(
                "rcond must be >= 0 and cg_tol > 0, got {} and {}",
                settings.rcond, settings.cg_tol
            )));
        }
        let cache = match method {
            PinvMethod::SvdDense => {
                let a = op.materialize(settings.materialize_limit)?;
                Cache::Svd(truncated_svd(a, settings.rcond))
            }
            PinvMethod::MaskAnalytic => {
                if op.kind() != OperatorKind::Mask {
                    return Err(Error::Unsupported(format!(
                        "mask_analytic pseudoinverse needs a mask, got {}",
                        op.kind().name()
                    )));
                }
                Cache::None
            }
            PinvMethod::SpectralFft => Cache::Spectral(BlurSpectrum::new(&op, settings.rcond)?),
            PinvMethod::CgMinimumNorm => Cache::None,
        };
        Ok(PinvEngine {
            op,
            method,
            settings,
            cache,
        })
    }

    pub fn operator(&self) -> &SensingOperator {
        &self.op
    }

    pub fn operator_arc(&self) -> Arc<SensingOperator> {
        Arc::clone(&self.op)
    }

    pub fn method(&self) -> PinvMethod {
        self.method
    }

    pub fn settings(&self) -> &PinvSettings {
        &self.settings
    }

    pub fn svd_factors(&self) -> Option<&SvdFactors> {
        match &self.cache {
            Cache::Svd(f) => Some(f),
            _ => None,
        }
    }

    pub fn blur_spectrum(&self) -> Option<&BlurSpectrum> {
        match &self.cache {
            Cache::Spectral(s) => Some(s),
            _ => None,
        }
    }

    fn cg_options(&self) -> CgOptions {
        let (m, n) = (self.op.output_dim(), self.op.input_dim());
        CgOptions {
            tol: self.settings.cg_tol,
            max_iter: self.settings.cg_max_iter.unwrap_or(10 * m.min(n)),
        }
    }

    /// `A⁺ y`, the minimum-norm least-squares solution of `A x ≈ y`.
    pub fn pinv_apply(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len("pseudoinverse input", self.op.output_dim(), y.len())?;
        check_finite("pseudoinverse input", y)?;
        self.pinv_unchecked(y)
    }

    pub(crate) fn pinv_unchecked(&self, y: &[f64]) -> Result<Vec<f64>> {
        let n = self.op.input_dim();
        match (&self.cache, self.method) {
            (Cache::Svd(f), _) => {
                let yv = DVector::from_column_slice(y);
                let mut z = f.u.tr_mul(&yv);
                for (zi, si) in z.iter_mut().zip(&f.s) {
                    *zi /= si;
                }
                Ok((&f.v * z).data.into())
            }
            (Cache::Spectral(s), _) => Ok(s.fft.filter_channels(s.geometry, y, |k, yk| {
                if s.retained[k] {
                    yk * s.spectrum[k].conj() / s.spectrum[k].norm_sqr()
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })),
            (Cache::None, PinvMethod::MaskAnalytic) => {
                let mut out = vec![0.0; n];
                self.op.adjoint_into(y, &mut out);
                Ok(out)
            }
            (Cache::None, _) => {
                let m = self.op.output_dim();
                let op = &self.op;
                let mut scratch = vec![0.0; n];
                let outcome = conjugate_gradient(
                    |v, out| {
                        op.adjoint_into(v, &mut scratch);
                        op.apply_into(&scratch, out);
                    },
                    y,
                    None,
                    self.cg_options(),
                )?;
                debug_assert_eq!(outcome.x.len(), m);
                let mut out = vec![0.0; n];
                self.op.adjoint_into(&outcome.x, &mut out);
                Ok(out)
            }
        }
    }

    /// `A⁺A v`, the orthogonal projection onto the row space of `A`.
    pub fn range_projector_apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("projector input", self.op.input_dim(), v.len())?;
        check_finite("projector input", v)?;
        self.range_unchecked(v)
    }

    fn range_unchecked(&self, v: &[f64]) -> Result<Vec<f64>> {
        match &self.cache {
            Cache::Svd(f) => {
                let vv = DVector::from_column_slice(v);
                Ok((&f.v * f.v.tr_mul(&vv)).data.into())
            }
            Cache::Spectral(s) => Ok(s.fft.filter_channels(s.geometry, v, |k, vk| {
                if s.retained[k] {
                    vk
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })),
            Cache::None => {
                let mut av = vec![0.0; self.op.output_dim()];
                self.op.apply_into(v, &mut av);
                self.pinv_unchecked(&av)
            }
        }
    }

    /// `(I − A⁺A) v`, the orthogonal projection onto the null space of `A`.
    pub fn nullspace_projector_apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("projector input", self.op.input_dim(), v.len())?;
        check_finite("projector input", v)?;
        let mut av = vec![0.0; self.op.output_dim()];
        self.op.apply_into(v, &mut av);
        let back = self.pinv_unchecked(&av)?;
        Ok(v.iter().zip(&back).map(|(a, b)| a - b).collect())
    }

    /// Dense `A⁺` (`n × m`), column `j` being `A⁺ e_j`.
    pub fn pinv_matrix(&self) -> Result<DMatrix<f64>> {
        let (m, n) = (self.op.output_dim(), self.op.input_dim());
        if let Cache::Svd(f) = &self.cache {
            let mut vs = f.v.clone();
            for (j, s) in f.s.iter().enumerate() {
                vs.column_mut(j).scale_mut(1.0 / s);
            }
            return Ok(vs * f.u.transpose());
        }
        if m.saturating_mul(n) > self.settings.materialize_limit {
            return Err(Error::Unsupported(format!(
                "dense pseudoinverse of a {m} x {n} operator exceeds the materialization limit"
            )));
        }
        let mut out = DMatrix::zeros(n, m);
        let mut e = vec![0.0; m];
        for j in 0..m {
            e[j] = 1.0;
            let col = self.pinv_unchecked(&e)?;
            out.column_mut(j).copy_from_slice(&col);
            e[j] = 0.0;
        }
        Ok(out)
    }

    /// Retained singular values of `A`, when the engine knows them without
    /// further work.
    pub fn singular_values(&self) -> Option<Vec<f64>> {
        match &self.cache {
            Cache::Svd(f) => Some(f.s.clone()),
            Cache::Spectral(s) => {
                let per_channel: Vec<f64> = s
                    .spectrum
                    .iter()
                    .zip(&s.retained)
                    .filter(|(_, keep)| **keep)
                    .map(|(z, _)| z.norm())
                    .collect();
                Some(
                    std::iter::repeat_n(per_channel, s.geometry.channels)
                        .flatten()
                        .collect(),
                )
            }
            Cache::None if self.method == PinvMethod::MaskAnalytic => {
                Some(vec![1.0; self.op.output_dim()])
            }
            Cache::None => None,
        }
    }
}

fn truncated_svd(a: DMatrix<f64>, rcond: f64) -> SvdFactors {
    let (m, n) = a.shape();
    let svd = a.svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested Vᵀ");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > rcond * smax && svd.singular_values[i] > 0.0)
        .collect();
    let mut uk = DMatrix::zeros(m, keep.len());
    let mut vk = DMatrix::zeros(n, keep.len());
    let mut s = Vec::with_capacity(keep.len());
    for (j, &i) in keep.iter().enumerate() {
        uk.column_mut(j).copy_from(&u.column(i));
        vk.column_mut(j).copy_from(&vt.row(i).transpose());
        s.push(svd.singular_values[i]);
    }
    SvdFactors { u: uk, s, v: vk }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::{make_gaussian_blur, make_inpainting_mask, make_spi_operator};
    use crate::rng::rng_from_seed;
    use crate::vecops::norm2;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn randn(rng: &mut crate::rng::PortableRng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    }

    fn random_dense(m: usize, n: usize, seed: u64) -> Arc<SensingOperator> {
        let mut rng = rng_from_seed(seed);
        Arc::new(SensingOperator::dense(DMatrix::from_fn(m, n, |_, _| rng.sample(StandardNormal))).unwrap())
    }

    fn engines() -> Vec<PinvEngine> {
        let settings = PinvSettings::default();
        vec![
            PinvEngine::new(random_dense(3, 5, 1)).unwrap(),
            PinvEngine::new(random_dense(6, 4, 2)).unwrap(),
            // rank 2 in a 4 x 5 matrix
            {
                let a = random_dense(4, 2, 3).dense_matrix().unwrap().clone();
                let b = random_dense(2, 5, 4).dense_matrix().unwrap().clone();
                PinvEngine::new(Arc::new(SensingOperator::dense(a * b).unwrap())).unwrap()
            },
            PinvEngine::new(Arc::new(
                make_inpainting_mask(Geometry::new(5, 4, 2).unwrap(), 0.5, 9).unwrap(),
            ))
            .unwrap(),
            PinvEngine::new(Arc::new(
                make_gaussian_blur(Geometry::new(8, 6, 2).unwrap(), (1.0, 0.6), 2.0).unwrap(),
            ))
            .unwrap(),
            PinvEngine::with_method(
                Arc::new(make_spi_operator(20, 7, 5).unwrap()),
                PinvMethod::CgMinimumNorm,
                settings,
            )
            .unwrap(),
        ]
    }

    #[test]
    fn mask_examples() {
        let e = PinvEngine::new(Arc::new(SensingOperator::mask(2, vec![0]).unwrap())).unwrap();
        assert_eq!(e.method(), PinvMethod::MaskAnalytic);
        assert_eq!(e.pinv_apply(&[4.0]).unwrap(), vec![4.0, 0.0]);
        assert_eq!(e.range_projector_apply(&[5.0, 7.0]).unwrap(), vec![5.0, 0.0]);
        assert_eq!(e.nullspace_projector_apply(&[5.0, 7.0]).unwrap(), vec![0.0, 7.0]);
    }

    #[test]
    fn identity_pinv_is_identity() {
        let e = PinvEngine::new(Arc::new(SensingOperator::identity(3).unwrap())).unwrap();
        let y = [1.0, -2.0, 0.5];
        let x = e.pinv_apply(&y).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn cg_matches_svd_on_full_row_rank() {
        let op = random_dense(3, 5, 17);
        let svd = PinvEngine::new(op.clone()).unwrap();
        let cg = PinvEngine::with_method(op, PinvMethod::CgMinimumNorm, PinvSettings::default()).unwrap();
        let mut rng = rng_from_seed(5);
        for _ in 0..20 {
            let y = randn(&mut rng, 3);
            let a = svd.pinv_apply(&y).unwrap();
            let b = cg.pinv_apply(&y).unwrap();
            let diff: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p - q).collect();
            assert!(norm2(&diff) <= 1e-8 * norm2(&a));
        }
    }

    #[test]
    fn range_projector_matches_explicit_product() {
        let op = random_dense(3, 5, 23);
        let e = PinvEngine::new(op.clone()).unwrap();
        let a = op.dense_matrix().unwrap();
        // pinv via normal equations, independent of the SVD path
        let aat = a * a.transpose();
        let pinv = a.transpose() * aat.try_inverse().unwrap();
        let p = &pinv * a;
        let mut rng = rng_from_seed(6);
        for _ in 0..10 {
            let v = randn(&mut rng, 5);
            let got = e.range_projector_apply(&v).unwrap();
            let want = &p * DVector::from_vec(v);
            for (x, y) in got.iter().zip(want.iter()) {
                assert!((x - y).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn row_space_vectors_are_fixed_points() {
        let op = random_dense(3, 6, 29);
        let e = PinvEngine::new(op.clone()).unwrap();
        let v = op.adjoint(&[0.3, -1.0, 2.0]).unwrap();
        let p = e.range_projector_apply(&v).unwrap();
        let nv = e.nullspace_projector_apply(&v).unwrap();
        for i in 0..6 {
            assert!((p[i] - v[i]).abs() <= 1e-9);
            assert!(nv[i].abs() <= 1e-9);
        }
    }

    #[test]
    fn nullspace_output_is_annihilated() {
        let op = random_dense(4, 7, 31);
        let e = PinvEngine::new(op.clone()).unwrap();
        let mut rng = rng_from_seed(7);
        for _ in 0..100 {
            let v = randn(&mut rng, 7);
            let w = e.nullspace_projector_apply(&v).unwrap();
            assert!(norm2(&op.apply(&w).unwrap()) <= 1e-8 * norm2(&v));
        }
    }

    #[test]
    fn projectors_idempotent_and_complementary() {
        let mut rng = rng_from_seed(8);
        for e in engines() {
            let n = e.operator().input_dim();
            for _ in 0..10 {
                let v = randn(&mut rng, n);
                let p = e.range_projector_apply(&v).unwrap();
                let q = e.nullspace_projector_apply(&v).unwrap();
                let pp = e.range_projector_apply(&p).unwrap();
                let qq = e.nullspace_projector_apply(&q).unwrap();
                let nv = norm2(&v);
                for i in 0..n {
                    assert!((pp[i] - p[i]).abs() <= 1e-9 * nv, "{:?}", e.method());
                    assert!((qq[i] - q[i]).abs() <= 1e-9 * nv, "{:?}", e.method());
                    assert!((p[i] + q[i] - v[i]).abs() <= 1e-10 * (1.0 + nv), "{:?}", e.method());
                }
            }
        }
    }

    #[test]
    fn moore_penrose_axioms_for_every_engine() {
        for e in engines() {
            let a = e.operator().materialize(usize::MAX).unwrap();
            let p = e.pinv_matrix().unwrap();
            let na = a.norm();
            let np = p.norm();
            let apa = &a * &p * &a;
            let pap = &p * &a * &p;
            let ap = &a * &p;
            let pa = &p * &a;
            assert!((apa - &a).norm() <= 1e-8 * na, "{:?}", e.method());
            assert!((pap - &p).norm() <= 1e-8 * np, "{:?}", e.method());
            assert!((&ap - ap.transpose()).norm() <= 1e-8, "{:?}", e.method());
            assert!((&pa - pa.transpose()).norm() <= 1e-8, "{:?}", e.method());
        }
    }

    #[test]
    fn spectral_transfer_function_reproduces_apply() {
        let op = make_gaussian_blur(Geometry::new(7, 9, 2).unwrap(), (1.4, 0.9), 2.0).unwrap();
        let s = BlurSpectrum::new(&op, 1e-10).unwrap();
        let mut rng = rng_from_seed(10);
        let x = randn(&mut rng, op.input_dim());
        let direct = op.apply(&x).unwrap();
        let spectral = s.fft.filter_channels(s.geometry, &x, |k, xk| xk * s.spectrum[k]);
        for (a, b) in direct.iter().zip(&spectral) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn spectral_agrees_with_dense_svd() {
        let op = Arc::new(make_gaussian_blur(Geometry::gray(12, 12), (1.0, 0.5), 2.0).unwrap());
        let fft = PinvEngine::new(op.clone()).unwrap();
        let svd = PinvEngine::with_method(op, PinvMethod::SvdDense, PinvSettings::default()).unwrap();
        let diff = fft.pinv_matrix().unwrap() - svd.pinv_matrix().unwrap();
        assert!(diff.amax() <= 1e-6);
    }

    #[test]
    fn mask_analytic_rejects_other_kinds() {
        let err = PinvEngine::with_method(random_dense(2, 3, 1), PinvMethod::MaskAnalytic, PinvSettings::default())
            .unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
        assert!(PinvEngine::with_method(random_dense(2, 3, 1), PinvMethod::SpectralFft, PinvSettings::default()).is_err());
    }

    #[test]
    fn cg_non_convergence_is_reported() {
        let settings = PinvSettings {
            cg_max_iter: Some(1),
            cg_tol: 1e-14,
            ..PinvSettings::default()
        };
        let e = PinvEngine::with_method(random_dense(5, 8, 3), PinvMethod::CgMinimumNorm, settings).unwrap();
        let err = e.pinv_apply(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap_err();
        assert!(matches!(err, Error::Solver { .. }));
    }

    #[test]
    fn svd_rank_truncation() {
        let e = &engines()[2];
        assert_eq!(e.svd_factors().unwrap().s.len(), 2);
        let s = e.singular_values().unwrap();
        let smax = s.iter().cloned().fold(0.0, f64::max);
        assert!(s.iter().all(|&v| v > 1e-10 * smax));
    }

    #[test]
    fn dimension_mismatch() {
        let e = PinvEngine::new(random_dense(2, 3, 1)).unwrap();
        assert!(matches!(e.pinv_apply(&[1.0]).unwrap_err(), Error::Dimension { .. }));
        assert!(matches!(e.nullspace_projector_apply(&[1.0]).unwrap_err(), Error::Dimension { .. }));
    }
}
