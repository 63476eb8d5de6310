//! Tensor-op contracts checked against independent reference
//! implementations (triple-loop matmul, sliding-window convolution,
//! scalar bilinear interpolation) plus property tests for the
//! structural invariants.

use pmsdiff_core::rng::stream;
use pmsdiff_core::tensor::fd_check;
use pmsdiff_core::{Error, Tape, Tensor};
use proptest::prelude::*;

// ---------------------------------------------------------------------
// reference implementations (independent of the tape path)
// ---------------------------------------------------------------------

fn matmul_reference(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a.data()[i * k + p] * b.data()[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    Tensor::from_vec(vec![m, n], out).unwrap()
}

fn conv_reference(x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; cout * oh * ow];
    for co in 0..cout {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ci in 0..cin {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            acc += x.at(&[ci, iy as usize, ix as usize])
                                * k.at(&[co, ci, ky, kx]);
                        }
                    }
                }
                out[co * oh * ow + oy * ow + ox] = acc;
            }
        }
    }
    Tensor::from_vec(vec![cout, oh, ow], out).unwrap()
}

/// Scalar 1-D bilinear sample with half-pixel centers (align-corners=false).
fn bilinear_sample_1d(src: &[f64], dst_index: usize, dst_len: usize) -> f64 {
    let scale = src.len() as f64 / dst_len as f64;
    let pos = ((dst_index as f64 + 0.5) * scale - 0.5).max(0.0);
    let lo = (pos.floor() as usize).min(src.len() - 1);
    let hi = (lo + 1).min(src.len() - 1);
    let t = if hi > lo { pos - lo as f64 } else { 0.0 };
    src[lo] * (1.0 - t) + src[hi] * t
}

// ---------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------

#[test]
fn matmul_identity_leaves_operand_unchanged() {
    let tape = Tape::new();
    let x = Tensor::randn([2, 4], &mut stream(3, "mm", 0));
    let out = tape.matmul(&Tensor::eye(2), &x).unwrap();
    assert!(out.max_abs_diff(&x).unwrap() < 1e-15);
}

#[test]
fn matmul_known_product() {
    let tape = Tape::new();
    let a = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
    let b = Tensor::from_rows(&[&[5.0, 6.0], &[7.0, 8.0]]).unwrap();
    let c = tape.matmul(&a, &b).unwrap();
    let expect = matmul_reference(&a, &b);
    assert_eq!(c, expect);
    assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
}

#[test]
fn matmul_zero_annihilates() {
    let tape = Tape::new();
    let a = Tensor::randn([3, 2], &mut stream(3, "mm", 1));
    let z = Tensor::zeros([2, 5]);
    let c = tape.matmul(&a, &z).unwrap();
    assert_eq!(c, Tensor::zeros([3, 5]));
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let tape = Tape::new();
    let a = Tensor::zeros([2, 3]);
    let b = Tensor::zeros([4, 2]);
    match tape.matmul(&a, &b) {
        Err(Error::Dimension(msg)) => {
            assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
        }
        other => panic!("expected dimension error, got {other:?}"),
    }
}

#[test]
fn matmul_matches_reference_on_random_inputs() {
    let tape = Tape::new();
    for seed in 0..10 {
        let mut rng = stream(40, "mmref", seed);
        let a = Tensor::randn([3, 4], &mut rng);
        let b = Tensor::randn([4, 2], &mut rng);
        let got = tape.matmul(&a, &b).unwrap();
        let expect = matmul_reference(&a, &b);
        assert!(got.max_abs_diff(&expect).unwrap() < 1e-12);
    }
}

// ---------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------

#[test]
fn softmax_symmetry() {
    let tape = Tape::new();
    let out = tape.softmax_axis(&Tensor::vector(&[0.0, 0.0]), 0).unwrap();
    assert!(out.max_abs_diff(&Tensor::vector(&[0.5, 0.5])).unwrap() < 1e-15);
}

#[test]
fn softmax_of_logs_recovers_ratios() {
    let tape = Tape::new();
    let x = Tensor::vector(&[1.0_f64.ln(), 2.0_f64.ln(), 3.0_f64.ln()]);
    let out = tape.softmax_axis(&x, 0).unwrap();
    let expect = Tensor::vector(&[1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]);
    assert!(out.max_abs_diff(&expect).unwrap() < 1e-15);
}

#[test]
fn softmax_axis_out_of_range_is_index_error() {
    let tape = Tape::new();
    let x = Tensor::zeros([2, 2]);
    assert!(matches!(tape.softmax_axis(&x, 2), Err(Error::Index(_))));
}

proptest! {
    #[test]
    fn softmax_shift_invariant(vals in proptest::collection::vec(-20.0..20.0f64, 2..12), c in -50.0..50.0f64) {
        let tape = Tape::new();
        let x = Tensor::vector(&vals);
        let shifted = x.map(|v| v + c);
        let a = tape.softmax_axis(&x, 0).unwrap();
        let b = tape.softmax_axis(&shifted, 0).unwrap();
        prop_assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
    }

    #[test]
    fn softmax_slices_are_distributions(
        extents in proptest::collection::vec(1usize..5, 1..4),
        seed in 0u64..1000,
    ) {
        let mut rng = stream(seed, "sm", 0);
        let x = Tensor::randn(extents.clone(), &mut rng);
        let tape = Tape::new();
        for axis in 0..extents.len() {
            let y = tape.softmax_axis(&x, axis).unwrap();
            prop_assert!(y.data().iter().all(|&v| v >= 0.0));
            // Sum along the axis must be one for every slice.
            let outer: usize = extents[..axis].iter().product();
            let len = extents[axis];
            let inner: usize = extents[axis + 1..].iter().product();
            for o in 0..outer {
                for i in 0..inner {
                    let s: f64 = (0..len).map(|j| y.data()[(o * len + j) * inner + i]).sum();
                    prop_assert!((s - 1.0).abs() < 1e-12, "slice sum {s}");
                }
            }
        }
    }
}

// ---------------------------------------------------------------------
// concat
// ---------------------------------------------------------------------

#[test]
fn concat_definition_and_identity() {
    let tape = Tape::new();
    let joined = tape
        .concat_axis(&Tensor::vector(&[1.0, 2.0]), &Tensor::vector(&[3.0]), 0)
        .unwrap();
    assert_eq!(joined.data(), &[1.0, 2.0, 3.0]);

    let x = Tensor::randn([4], &mut stream(9, "cc", 0));
    let empty = Tensor::zeros([0]);
    let same = tape.concat_axis(&x, &empty, 0).unwrap();
    assert_eq!(same, x);
}

#[test]
fn concat_shape_arithmetic() {
    let tape = Tape::new();
    let a = Tensor::zeros([2, 3]);
    let b = Tensor::zeros([2, 5]);
    let c = tape.concat_axis(&a, &b, 1).unwrap();
    assert_eq!(c.shape(), &[2, 8]);
}

#[test]
fn concat_non_axis_mismatch_is_dimension_error() {
    let tape = Tape::new();
    let a = Tensor::zeros([2, 3]);
    let b = Tensor::zeros([3, 3]);
    assert!(matches!(tape.concat_axis(&a, &b, 1), Err(Error::Dimension(_))));
}

proptest! {
    #[test]
    fn concat_then_split_is_identity(
        rows in 1usize..4,
        cols_a in 1usize..4,
        cols_b in 1usize..4,
        axis in 0usize..2,
        seed in 0u64..500,
    ) {
        let mut rng = stream(seed, "ccsplit", 0);
        let (sa, sb) = if axis == 0 {
            (vec![cols_a, rows], vec![cols_b, rows])
        } else {
            (vec![rows, cols_a], vec![rows, cols_b])
        };
        let a = Tensor::randn(sa, &mut rng);
        let b = Tensor::randn(sb, &mut rng);
        let tape = Tape::new();
        let joined = tape.concat_axis(&a, &b, axis).unwrap();
        // Split back by reading slices along the axis.
        let mut back_a = Vec::new();
        let mut back_b = Vec::new();
        let la = a.shape()[axis];
        for idx in 0..joined.numel() {
            let (i, j) = (idx / joined.shape()[1], idx % joined.shape()[1]);
            let along = if axis == 0 { i } else { j };
            if along < la {
                back_a.push(joined.data()[idx]);
            } else {
                back_b.push(joined.data()[idx]);
            }
        }
        prop_assert_eq!(back_a, a.data().to_vec());
        prop_assert_eq!(back_b, b.data().to_vec());
    }
}

// ---------------------------------------------------------------------
// bilinear resize
// ---------------------------------------------------------------------

#[test]
fn resize_constant_image_stays_constant() {
    let tape = Tape::new();
    let x = Tensor::full([2, 3, 3], 0.7);
    let y = tape.bilinear_resize(&x, 7, 5).unwrap();
    assert!(y.max_abs_diff(&Tensor::full([2, 7, 5], 0.7)).unwrap() < 1e-15);
}

#[test]
fn resize_same_size_is_identity() {
    let tape = Tape::new();
    let x = Tensor::randn([1, 4, 6], &mut stream(5, "rs", 0));
    let y = tape.bilinear_resize(&x, 4, 6).unwrap();
    assert_eq!(y, x);
}

#[test]
fn resize_matches_scalar_reference() {
    let tape = Tape::new();
    let x = Tensor::from_vec(vec![1, 1, 2], vec![0.0, 1.0]).unwrap();
    let y = tape.bilinear_resize(&x, 1, 4).unwrap();
    let expect: Vec<f64> = (0..4).map(|i| bilinear_sample_1d(&[0.0, 1.0], i, 4)).collect();
    assert_eq!(y.data(), expect.as_slice());
    // Frozen from the reference interpolator.
    assert_eq!(y.data(), &[0.0, 0.25, 0.75, 1.0]);
}

#[test]
fn resize_zero_target_is_dimension_error() {
    let tape = Tape::new();
    let x = Tensor::zeros([1, 2, 2]);
    assert!(matches!(tape.bilinear_resize(&x, 0, 3), Err(Error::Dimension(_))));
}

// ---------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------

#[test]
fn conv_identity_kernel() {
    let tape = Tape::new();
    let x = Tensor::randn([3, 4, 4], &mut stream(6, "cv", 0));
    let mut k = vec![0.0; 3 * 3];
    k[0] = 1.0;
    k[4] = 1.0;
    k[8] = 1.0;
    let kernel = Tensor::from_vec(vec![3, 3, 1, 1], k).unwrap();
    let y = tape.conv2d(&x, &kernel, 1, 0).unwrap();
    assert_eq!(y, x);
}

#[test]
fn conv_zero_kernel_gives_zero() {
    let tape = Tape::new();
    let x = Tensor::randn([2, 4, 4], &mut stream(6, "cv", 1));
    let kernel = Tensor::zeros([5, 2, 3, 3]);
    let y = tape.conv2d(&x, &kernel, 1, 1).unwrap();
    assert_eq!(y, Tensor::zeros([5, 4, 4]));
}

#[test]
fn conv_box_kernel_counts_window_coverage() {
    let tape = Tape::new();
    let x = Tensor::full([1, 5, 5], 1.0);
    let kernel = Tensor::full([1, 1, 3, 3], 1.0);
    let y = tape.conv2d(&x, &kernel, 1, 1).unwrap();
    assert_eq!(y, conv_reference(&x, &kernel, 1, 1));
    // Interior windows see 9 ones, edges 6, corners 4.
    assert_eq!(y.at(&[0, 2, 2]), 9.0);
    assert_eq!(y.at(&[0, 0, 2]), 6.0);
    assert_eq!(y.at(&[0, 0, 0]), 4.0);
}

#[test]
fn conv_matches_reference_on_random_inputs() {
    let tape = Tape::new();
    for seed in 0..6 {
        let mut rng = stream(41, "cvref", seed);
        let x = Tensor::randn([2, 5, 6], &mut rng);
        let k = Tensor::randn([3, 2, 3, 3], &mut rng);
        for (stride, pad) in [(1, 1), (1, 0), (2, 1)] {
            if (5 + 2 * pad - 3) % stride != 0 || (6 + 2 * pad - 3) % stride != 0 {
                continue;
            }
            let got = tape.conv2d(&x, &k, stride, pad).unwrap();
            let expect = conv_reference(&x, &k, stride, pad);
            assert!(got.max_abs_diff(&expect).unwrap() < 1e-12);
        }
    }
}

#[test]
fn conv_rejects_non_integral_output() {
    let tape = Tape::new();
    let x = Tensor::zeros([1, 6, 6]);
    let k = Tensor::zeros([1, 1, 3, 3]);
    // (6 + 2 − 3) = 5 does not divide by stride 2.
    assert!(matches!(tape.conv2d(&x, &k, 2, 1), Err(Error::Dimension(_))));
}

#[test]
fn conv_rejects_even_kernels() {
    let tape = Tape::new();
    let x = Tensor::zeros([1, 4, 4]);
    let k = Tensor::zeros([1, 1, 2, 2]);
    assert!(matches!(tape.conv2d(&x, &k, 1, 0), Err(Error::Dimension(_))));
}

// ---------------------------------------------------------------------
// backward / fd_check
// ---------------------------------------------------------------------

#[test]
fn backward_requires_scalar_root() {
    let tape = Tape::new();
    let x = tape.watch(&Tensor::zeros([2, 2]));
    assert!(matches!(tape.backward(&x), Err(Error::Contract(_))));
}

#[test]
fn backward_unreached_leaf_gets_zero_gradient() {
    let tape = Tape::new();
    let x = tape.watch(&Tensor::vector(&[1.0, 2.0]));
    let unused = tape.watch(&Tensor::vector(&[5.0]));
    let root = tape.sum(&x);
    let grads = tape.backward(&root).unwrap();
    assert_eq!(grads.grad(&unused).unwrap(), Tensor::zeros([1]));
}

#[test]
fn softmax_cross_entropy_gradient_is_probs_minus_target() {
    // d/dx of −Σ y·ln(softmax(x)) must equal softmax(x) − y; checked
    // against both the closed form and central finite differences.
    let y = Tensor::vector(&[0.0, 1.0, 0.0, 0.0]);
    let ce = |tape: &Tape, x: &Tensor| {
        let p = tape.softmax_axis(x, 0)?;
        let lp = tape.ln_clamped(&p, 1e-300);
        let picked = tape.mul(&lp, &y)?;
        Ok(tape.scale(&tape.sum(&picked), -1.0))
    };

    let x = Tensor::randn([4], &mut stream(11, "ce", 0));
    let err = fd_check(ce, &x, 1e-4).unwrap();
    assert!(err < 1e-6, "fd err {err}");

    let tape = Tape::new();
    let xw = tape.watch(&x);
    let root = ce(&tape, &xw).unwrap();
    let grad = tape.backward(&root).unwrap().grad(&xw).unwrap();
    let probs = tape.softmax_axis(&x, 0).unwrap();
    let expect = tape.sub(&probs, &y).unwrap();
    assert!(grad.max_abs_diff(&expect).unwrap() < 1e-12);
}

#[test]
fn matmul_chain_gradient_matches_finite_differences() {
    let mut rng = stream(12, "chain", 0);
    let b = Tensor::randn([3, 4], &mut rng);
    let c = Tensor::randn([4, 2], &mut rng);
    let f = |tape: &Tape, a: &Tensor| {
        let ab = tape.matmul(a, &b)?;
        let abc = tape.matmul(&ab, &c)?;
        let sq = tape.mul(&abc, &abc)?;
        Ok(tape.sum(&sq))
    };
    let a = Tensor::randn([2, 3], &mut rng);
    let err = fd_check(f, &a, 1e-4).unwrap();
    assert!(err <= 1e-4, "fd err {err}");
}

#[test]
fn gradients_flow_through_every_primitive() {
    // One composite touching conv, resize, concat, bias, silu, softmax,
    // channel_sum, div: the fd check is the oracle for all backward rules.
    let mut rng = stream(13, "all", 0);
    let kernel = Tensor::randn([2, 2, 3, 3], &mut rng);
    let bias = Tensor::randn([2], &mut rng);
    let f = |tape: &Tape, x: &Tensor| {
        let c = tape.conv2d(x, &kernel, 1, 1)?;
        let cb = tape.bias_add(&c, &bias, 0)?;
        let act = tape.silu(&cb);
        let up = tape.bilinear_resize(&act, 6, 6)?;
        let both = tape.concat_axis(&up, &up, 0)?;
        let sm = tape.softmax_axis(&both, 0)?;
        let sums = tape.channel_sum(&sm)?;
        let denom = tape.add_scalar(&sums, 3.0);
        let ratio = tape.div(&sums, &denom)?;
        Ok(tape.mean(&ratio))
    };
    let x = Tensor::randn([2, 4, 4], &mut rng);
    let err = fd_check(f, &x, 1e-4).unwrap();
    assert!(err <= 1e-4, "fd err {err}");
}

proptest! {
    #[test]
    fn matmul_associativity(seed in 0u64..200) {
        let mut rng = stream(seed, "assoc", 0);
        let a = Tensor::randn([3, 4], &mut rng);
        let b = Tensor::randn([4, 5], &mut rng);
        let c = Tensor::randn([5, 2], &mut rng);
        let tape = Tape::new();
        let left = tape.matmul(&tape.matmul(&a, &b).unwrap(), &c).unwrap();
        let right = tape.matmul(&a, &tape.matmul(&b, &c).unwrap()).unwrap();
        let scale = left.data().iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        prop_assert!(left.max_abs_diff(&right).unwrap() / scale < 1e-9);
    }
}
