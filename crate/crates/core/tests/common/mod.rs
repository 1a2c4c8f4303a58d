#![allow(dead_code)]

pub mod gradcases;
pub mod oracles;

use jl1vae::autodiff::{Tape, Tensor, Var};
use jl1vae::Result;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Uniform in `±[gap, hi]`, away from the kink at 0.
pub fn away_from_zero(rng: &mut impl Rng, shape: &[usize], gap: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(gap..hi);
        if rng.gen_bool(0.5) { m } else { -m }
    })
}

/// Largest elementwise relative error between reverse-mode gradients and
/// central differences.
///
/// `build` maps the input handles to any tensor; it is contracted with a
/// fixed random weight tensor to get a scalar, so the whole Jacobian is
/// exercised. Relative error is `|a − n| / max(|a|, |n|, 1e-3·s)` where `s`
/// is the largest gradient magnitude of that input, so entries that are
/// tiny relative to their neighbours are compared on an absolute footing.
pub fn max_rel_error(
    inputs: &[Tensor<f64>],
    seed: u64,
    build: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> f64 {
    let weights = std::cell::RefCell::new(None::<Tensor<f64>>);
    let eval = |vals: &[Tensor<f64>], grad: bool| -> (f64, Vec<Tensor<f64>>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|v| tape.param(v.clone()).unwrap()).collect();
        let y = build(&mut tape, &vars).unwrap();
        let shape = tape.shape(y).to_vec();
        let w = weights
            .borrow_mut()
            .get_or_insert_with(|| uniform(&mut rng(seed ^ 0x5eed), &shape, -1.0, 1.0))
            .clone();
        let wv = tape.constant(w).unwrap();
        let prod = tape.mul(y, wv).unwrap();
        let root = tape.sum(prod).unwrap();
        let value = tape.value(root).item();
        if !grad {
            return (value, Vec::new());
        }
        let grads = tape.backward(root).unwrap();
        (value, vars.iter().map(|&v| grads.get_or_zeros(v)).collect())
    };
    let (_, analytic) = eval(inputs, true);
    // small enough that ReLU/|·| kinks are rarely straddled, large enough
    // that f64 round-off stays ~1e-9 relative
    let h = 1e-6;
    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        let scale = analytic[i].data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for j in 0..input.numel() {
            let mut vals = inputs.to_vec();
            vals[i].data_mut()[j] += h;
            let up = eval(&vals, false).0;
            vals[i].data_mut()[j] -= 2.0 * h;
            let down = eval(&vals, false).0;
            let num = (up - down) / (2.0 * h);
            let a = analytic[i].data()[j];
            let denom = a.abs().max(num.abs()).max(1e-3 * scale).max(1e-12);
            worst = worst.max((a - num).abs() / denom);
        }
    }
    worst
}
