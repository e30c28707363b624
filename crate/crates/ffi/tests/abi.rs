use std::ffi::CStr;
use std::ptr;

use projcorr_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(pc_last_error()) }.to_string_lossy().into_owned()
}

fn dense(rows: usize, cols: usize, data: &[f64]) -> *mut PcOperator {
    let mut op = ptr::null_mut();
    assert_eq!(unsafe { pc_operator_dense(rows, cols, data.as_ptr(), &mut op) }, PcStatus::Ok);
    op
}

fn engine(op: *const PcOperator) -> *mut PcEngine {
    let mut e = ptr::null_mut();
    assert_eq!(unsafe { pc_engine_new(op, &mut e) }, PcStatus::Ok);
    e
}

#[test]
fn dense_pipeline_matches_hand_values() {
    // A = [1 0 0; 0 2 0]: A⁺ = diag(1, 1/2) padded, null space is e3.
    let op = dense(2, 3, &[1.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
    unsafe {
        assert_eq!((pc_operator_input_dim(op), pc_operator_output_dim(op)), (3, 2));
        let mut y = [0.0; 2];
        assert_eq!(pc_operator_apply(op, [1.0, 1.0, 1.0].as_ptr(), 3, y.as_mut_ptr(), 2), PcStatus::Ok);
        assert_eq!(y, [1.0, 2.0]);
        let mut at = [0.0; 3];
        assert_eq!(pc_operator_adjoint(op, y.as_ptr(), 2, at.as_mut_ptr(), 3), PcStatus::Ok);
        assert_eq!(at, [1.0, 4.0, 0.0]);

        let e = engine(op);
        pc_operator_free(op);
        let mut x = [0.0; 3];
        assert_eq!(pc_engine_pinv(e, [3.0, 4.0].as_ptr(), 2, x.as_mut_ptr(), 3), PcStatus::Ok);
        assert!((x[0] - 3.0).abs() < 1e-14 && (x[1] - 2.0).abs() < 1e-14 && x[2].abs() < 1e-14);

        let v = [5.0, 6.0, 7.0];
        let (mut r, mut nn) = ([0.0; 3], [0.0; 3]);
        assert_eq!(pc_engine_range_project(e, v.as_ptr(), 3, r.as_mut_ptr(), 3), PcStatus::Ok);
        assert_eq!(pc_engine_null_project(e, v.as_ptr(), 3, nn.as_mut_ptr(), 3), PcStatus::Ok);
        for i in 0..3 {
            assert!((r[i] + nn[i] - v[i]).abs() < 1e-14);
        }
        assert!(nn[0].abs() < 1e-14 && (nn[2] - 7.0).abs() < 1e-14);

        // Exact correction keeps the null-space part of f̂ and takes the rest from y.
        let mut c = [0.0; 3];
        assert_eq!(pc_correct_exact(e, [3.0, 4.0].as_ptr(), 2, v.as_ptr(), 3, c.as_mut_ptr(), 3), PcStatus::Ok);
        assert!((c[0] - 3.0).abs() < 1e-14 && (c[1] - 2.0).abs() < 1e-14 && (c[2] - 7.0).abs() < 1e-14);

        // λ = 0 returns f̂.
        assert_eq!(
            pc_correct_regularized(e, [3.0, 4.0].as_ptr(), 2, v.as_ptr(), 3, 0.0, 0.1, c.as_mut_ptr(), 3),
            PcStatus::Ok
        );
        assert_eq!(c, v);
        // Σ = I, λ = 1: x1 = (5 + 3)/2, x2 = (6 + 2·4)/5.
        assert_eq!(
            pc_correct_regularized(e, [3.0, 4.0].as_ptr(), 2, v.as_ptr(), 3, 1.0, 0.0, c.as_mut_ptr(), 3),
            PcStatus::Ok
        );
        assert!((c[0] - 4.0).abs() < 1e-12 && (c[1] - 2.8).abs() < 1e-12 && (c[2] - 7.0).abs() < 1e-12);

        let mut value = 0.0;
        assert_eq!(pc_nullspace_consistency(e, [3.0, 4.0].as_ptr(), 2, v.as_ptr(), 3, &mut value), PcStatus::Ok);
        // A(f̂ − A⁺y) = (5 − 3, 2·(6 − 2)) = (2, 8).
        assert!((value - 68.0).abs() < 1e-12);
        assert_eq!(pc_noise_bias_trace(e, 0.5, &mut value), PcStatus::Ok);
        assert!((value - 0.25 * 1.25).abs() < 1e-14);
        pc_engine_free(e);
    }
}

#[test]
fn structured_operators_and_metrics() {
    unsafe {
        let mut mask = ptr::null_mut();
        assert_eq!(pc_operator_mask(16, 16, 1, 0.5, 7, &mut mask), PcStatus::Ok);
        assert_eq!(pc_operator_output_dim(mask), 124);
        pc_operator_free(mask);

        let mut blur = ptr::null_mut();
        assert_eq!(pc_operator_blur(16, 16, 1, 1.0, 0.5, 3.0, &mut blur), PcStatus::Ok);
        let e = engine(blur);
        let ones = vec![1.0; 256];
        let mut out = vec![0.0; 256];
        assert_eq!(pc_engine_pinv(e, ones.as_ptr(), 256, out.as_mut_ptr(), 256), PcStatus::Ok);
        assert!(out.iter().all(|v| (v - 1.0).abs() < 1e-10));
        pc_engine_free(e);
        pc_operator_free(blur);

        let mut spi = ptr::null_mut();
        assert_eq!(pc_operator_spi(64, 20, 3, &mut spi), PcStatus::Ok);
        assert_eq!((pc_operator_input_dim(spi), pc_operator_output_dim(spi)), (64, 20));
        pc_operator_free(spi);

        let a = vec![0.5; 144];
        let b: Vec<f64> = (0..144).map(|i| 0.5 + 0.01 * (i % 3) as f64).collect();
        let mut v = 0.0;
        assert_eq!(pc_ssim(a.as_ptr(), a.as_ptr(), 12, 12, 1, &mut v), PcStatus::Ok);
        assert!((v - 1.0).abs() < 1e-12);
        assert_eq!(pc_mse(a.as_ptr(), b.as_ptr(), 144, &mut v), PcStatus::Ok);
        let expected = (0..144).map(|i| (0.01 * (i % 3) as f64).powi(2)).sum::<f64>() / 144.0;
        assert!((v - expected).abs() < 1e-15);
        assert_eq!(pc_psnr(a.as_ptr(), b.as_ptr(), 144, 1.0, &mut v), PcStatus::Ok);
        assert!((v + 10.0 * expected.log10()).abs() < 1e-9);
        assert_eq!(pc_psnr(a.as_ptr(), a.as_ptr(), 144, 1.0, &mut v), PcStatus::Ok);
        assert_eq!(v, f64::INFINITY);
    }
}

#[test]
fn errors_are_reported_with_codes_and_messages() {
    unsafe {
        let mut op = ptr::null_mut();
        assert_eq!(pc_operator_mask(4, 4, 1, 1.5, 0, &mut op), PcStatus::Parameter);
        assert!(op.is_null());
        assert!(last_error().contains("keep probability"));
        assert_eq!(pc_operator_mask(4, 4, 1, 0.0, 0, &mut op), PcStatus::DegenerateOperator);
        assert_eq!(pc_operator_dense(2, 2, ptr::null(), &mut op), PcStatus::NullPointer);
        assert_eq!(pc_operator_spi(8, 2, 0, ptr::null_mut()), PcStatus::NullPointer);
        assert_eq!(pc_operator_input_dim(ptr::null()), 0);

        let op = dense(1, 2, &[1.0, 1.0]);
        let mut y = [0.0; 1];
        assert_eq!(pc_operator_apply(op, [1.0].as_ptr(), 1, y.as_mut_ptr(), 1), PcStatus::Dimension);
        assert!(last_error().contains("expected length 2"));
        assert_eq!(pc_operator_apply(op, [1.0, 2.0].as_ptr(), 2, y.as_mut_ptr(), 3), PcStatus::Dimension);
        assert_eq!(pc_operator_apply(op, [1.0, f64::NAN].as_ptr(), 2, y.as_mut_ptr(), 1), PcStatus::NonFinite);
        assert_eq!(pc_engine_pinv(ptr::null(), y.as_ptr(), 1, y.as_mut_ptr(), 1), PcStatus::NullPointer);

        let e = engine(op);
        let mut c = [0.0; 2];
        assert_eq!(
            pc_correct_regularized(e, [1.0].as_ptr(), 1, [0.0, 0.0].as_ptr(), 2, -1.0, 0.1, c.as_mut_ptr(), 2),
            PcStatus::Parameter
        );
        pc_engine_free(e);
        pc_operator_free(op);
        pc_operator_free(ptr::null_mut());
        pc_engine_free(ptr::null_mut());
    }
}
