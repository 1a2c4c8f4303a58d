mod common;

use common::rng;
use jl1vae::autodiff::{conv_out_extent, conv_transpose_out_extent, Tape, Tensor};
use proptest::prelude::*;
use rand::Rng;

fn conv(x: &Tensor<f64>, k: &Tensor<f64>, s: usize, p: usize) -> Tensor<f64> {
    let mut t = Tape::new();
    let (xv, kv) = (t.constant(x.clone()).unwrap(), t.constant(k.clone()).unwrap());
    let y = t.conv2d(xv, kv, s, p).unwrap();
    t.value(y).clone()
}

fn convt(y: &Tensor<f64>, k: &Tensor<f64>, s: usize, p: usize, op: usize) -> Tensor<f64> {
    let mut t = Tape::new();
    let (yv, kv) = (t.constant(y.clone()).unwrap(), t.constant(k.clone()).unwrap());
    let x = t.conv_transpose2d(yv, kv, s, p, op).unwrap();
    t.value(x).clone()
}

/// Direct-loop reference for `conv2d`.
fn conv_reference(x: &Tensor<f64>, k: &Tensor<f64>, s: usize, p: usize) -> Vec<f64> {
    let (n, ci, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let (oh, ow) = (conv_out_extent(h, kh, s, p).unwrap(), conv_out_extent(w, kw, s, p).unwrap());
    let mut out = vec![0.0; n * co * oh * ow];
    for b in 0..n {
        for o in 0..co {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = 0.0;
                    for c in 0..ci {
                        for u in 0..kh {
                            for v in 0..kw {
                                let (r, q) = ((i * s + u) as isize - p as isize, (j * s + v) as isize - p as isize);
                                if r >= 0 && q >= 0 && (r as usize) < h && (q as usize) < w {
                                    acc += x.data()[((b * ci + c) * h + r as usize) * w + q as usize]
                                        * k.data()[((o * ci + c) * kh + u) * kw + v];
                                }
                            }
                        }
                    }
                    out[((b * co + o) * oh + i) * ow + j] = acc;
                }
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_matches_direct_loops(seed in 0u64..1_000_000, s in 1usize..3, k in 1usize..5, extra in 0usize..4) {
        let mut r = rng(seed);
        let p = r.gen_range(0..k);
        let (h, w) = (k + extra, k + extra + 1);
        let x = Tensor::from_fn(&[2, 2, h, w], |_| r.gen_range(-1.0..1.0));
        let kern = Tensor::from_fn(&[3, 2, k, k], |_| r.gen_range(-1.0..1.0));
        let got = conv(&x, &kern, s, p);
        for (a, b) in got.data().iter().zip(conv_reference(&x, &kern, s, p)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    /// `⟨conv(x), y⟩ = ⟨x, convᵀ(y)⟩` for the same kernel.
    #[test]
    fn transpose_is_the_adjoint(seed in 0u64..1_000_000, s in 1usize..3, k in 1usize..5, extra in 0usize..4) {
        let mut r = rng(seed);
        let p = r.gen_range(0..k);
        let h = k + extra;
        let oh = conv_out_extent(h, k, s, p).unwrap();
        // output padding recovers input rows dropped by the strided forward pass
        let op = h - conv_transpose_out_extent(oh, k, s, p, 0).unwrap();
        prop_assume!(op < s);
        let kern = Tensor::from_fn(&[3, 2, k, k], |_| r.gen_range(-1.0..1.0));
        let x = Tensor::from_fn(&[1, 2, h, h], |_| r.gen_range(-1.0..1.0));
        let y = Tensor::from_fn(&[1, 3, oh, oh], |_| r.gen_range(-1.0..1.0));
        let lhs = conv(&x, &kern, s, p).dot(&y);
        // conv's [c_out, c_in] kernel is read by the transpose as its
        // [c_in, c_out] layout, so the same tensor is passed to both
        let rhs = convt(&y, &kern, s, p, op).dot(&x);
        prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
    }
}
