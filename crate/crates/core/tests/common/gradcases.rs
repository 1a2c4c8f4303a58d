//! Gradient-check instances for every tape primitive and the full
//! objectives, shared by the unit suite and the acceptance runner.

use jl1vae::autodiff::{Bound, Tape, Tensor, Var};
use jl1vae::vae::{jl1_loss_on, Architecture, ConvVae, JacobianPoint, LossConfig};
use rand::Rng;

use super::{away_from_zero, max_rel_error, rng, uniform};

pub const INSTANCES: u64 = 20;
pub const TOL: f64 = 1e-3;

/// Maps an instance seed to the worst relative error of that instance.
pub type Case = Box<dyn Fn(u64) -> f64>;

/// Worst error over all instances, and the instance it came from.
pub fn worst(case: &Case) -> (f64, u64) {
    (0..INSTANCES).map(|i| (case(i), i)).fold((0.0, 0), |a, b| if b.0 > a.0 { b } else { a })
}

fn dims(seed: u64, n: usize) -> Vec<usize> {
    let mut r = rng(seed ^ 0xd1);
    (0..n).map(|_| r.gen_range(1..5)).collect()
}

fn unary(lo: f64, hi: f64, kink: bool, op: fn(&mut Tape<f64>, Var) -> jl1vae::Result<Var>) -> Case {
    Box::new(move |s| {
        let d = dims(s, 2);
        let mut r = rng(s);
        let x = if kink { away_from_zero(&mut r, &d, lo, hi) } else { uniform(&mut r, &d, lo, hi) };
        max_rel_error(&[x], s, |t, v| op(t, v[0]))
    })
}

fn binary(op: fn(&mut Tape<f64>, Var, Var) -> jl1vae::Result<Var>) -> Case {
    Box::new(move |s| {
        let d = dims(s, 3);
        let mut r = rng(s);
        let ins = [uniform(&mut r, &d, -1.0, 1.0), uniform(&mut r, &d, -1.0, 1.0)];
        max_rel_error(&ins, s, |t, v| op(t, v[0], v[1]))
    })
}

/// Every parameter tensor of a tiny network, biases randomized too, plus
/// the data; the objective is rebuilt from these on each evaluation.
fn full_loss(cfg: LossConfig) -> Case {
    Box::new(move |s| {
        let mut r = rng(s);
        let mut model: ConvVae<f64> = ConvVae::init(Architecture::tiny8(3), &mut r).unwrap();
        for (_, e) in model.params.iter_mut() {
            for v in e.value.data_mut() {
                *v += r.gen_range(-0.05..0.05);
            }
        }
        let n = 2;
        let x = uniform(&mut r, &[n, 1, 8, 8], 0.0, 1.0);
        let noise = uniform(&mut r, &[n, 3], -1.5, 1.5);
        let values: Vec<Tensor<f64>> = model.params.iter().map(|(_, e)| e.value.clone()).collect();
        max_rel_error(&values, s, |t, vars| {
            let bound = Bound::from_vars(vars.to_vec());
            let xv = t.constant(x.clone())?;
            let nv = t.constant(noise.clone())?;
            Ok(jl1_loss_on(t, &model, &bound, xv, nv, &cfg)?.total)
        })
    })
}

/// All cases by name.
pub fn cases() -> Vec<(&'static str, Case)> {
    vec![
        ("matmul", Box::new(|s| {
            let d = dims(s, 3);
            let mut r = rng(s);
            let ins = [uniform(&mut r, &[d[0], d[1]], -1.0, 1.0), uniform(&mut r, &[d[1], d[2]], -1.0, 1.0)];
            max_rel_error(&ins, s, |t, v| t.matmul(v[0], v[1]))
        })),
        ("add_row_bias", Box::new(|s| {
            let d = dims(s, 2);
            let mut r = rng(s);
            let ins = [uniform(&mut r, &[d[0], d[1]], -1.0, 1.0), uniform(&mut r, &[d[1]], -1.0, 1.0)];
            max_rel_error(&ins, s, |t, v| t.add_row_bias(v[0], v[1]))
        })),
        ("add_channel_bias", Box::new(|s| {
            let d = dims(s, 4);
            let mut r = rng(s);
            let ins = [uniform(&mut r, &[d[0], d[1], d[2], d[3]], -1.0, 1.0), uniform(&mut r, &[d[1]], -1.0, 1.0)];
            max_rel_error(&ins, s, |t, v| t.add_channel_bias(v[0], v[1]))
        })),
        ("conv2d", Box::new(|s| {
            let mut r = rng(s);
            let (n, ci, co) = (r.gen_range(1..3), r.gen_range(1..4), r.gen_range(1..4));
            let k = r.gen_range(1..4);
            let stride = r.gen_range(1..3);
            let pad = r.gen_range(0..k);
            let hw = r.gen_range(k.max(2)..7);
            let ins = [uniform(&mut r, &[n, ci, hw, hw + 1], -1.0, 1.0), uniform(&mut r, &[co, ci, k, k], -1.0, 1.0)];
            max_rel_error(&ins, s, |t, v| t.conv2d(v[0], v[1], stride, pad))
        })),
        ("conv_transpose2d", Box::new(|s| {
            let mut r = rng(s);
            let (n, ci, co) = (r.gen_range(1..3), r.gen_range(1..4), r.gen_range(1..4));
            let k = r.gen_range(2..5);
            let stride = r.gen_range(1..3);
            let pad = r.gen_range(0..=(k - 1) / 2);
            let out_pad = r.gen_range(0..stride);
            let hw = r.gen_range(2..5);
            let ins = [uniform(&mut r, &[n, ci, hw, hw], -1.0, 1.0), uniform(&mut r, &[ci, co, k, k], -1.0, 1.0)];
            max_rel_error(&ins, s, |t, v| t.conv_transpose2d(v[0], v[1], stride, pad, out_pad))
        })),
        ("relu", unary(0.05, 2.0, true, |t, x| t.relu(x))),
        ("sigmoid", unary(-4.0, 4.0, false, |t, x| t.sigmoid(x))),
        ("exp", unary(-2.0, 2.0, false, |t, x| t.exp(x))),
        ("abs", unary(0.05, 2.0, true, |t, x| t.abs(x))),
        ("square", unary(-2.0, 2.0, false, |t, x| t.square(x))),
        ("scale", unary(-2.0, 2.0, false, |t, x| t.scale(x, -1.7))),
        // values straddle both bounds, kept clear of them
        ("clamp", Box::new(|s| {
            let d = dims(s, 2);
            let mut r = rng(s);
            let x = Tensor::from_fn(&d, |_| {
                let v: f64 = r.gen_range(-2.0..2.0);
                if (v.abs() - 1.0).abs() < 0.05 { v * 0.5 } else { v }
            });
            max_rel_error(&[x], s, |t, v| t.clamp(v[0], -1.0, 1.0))
        })),
        ("add", binary(|t, a, b| t.add(a, b))),
        ("sub", binary(|t, a, b| t.sub(a, b))),
        ("mul", binary(|t, a, b| t.mul(a, b))),
        ("reshape", Box::new(|s| {
            let d = dims(s, 3);
            let x = uniform(&mut rng(s), &d, -1.0, 1.0);
            max_rel_error(&[x], s, |t, v| t.reshape(v[0], &[d[0] * d[1] * d[2]]))
        })),
        ("sum", Box::new(|s| max_rel_error(&[uniform(&mut rng(s), &dims(s, 3), -1.0, 1.0)], s, |t, v| t.sum(v[0])))),
        ("mean", Box::new(|s| max_rel_error(&[uniform(&mut rng(s), &dims(s, 3), -1.0, 1.0)], s, |t, v| t.mean(v[0])))),
        ("sum_per_row", Box::new(|s| {
            max_rel_error(&[uniform(&mut rng(s), &dims(s, 3), -1.0, 1.0)], s, |t, v| t.sum_per_row(v[0]))
        })),
        ("take_rows", Box::new(|s| {
            let d = dims(s, 2);
            let mut r = rng(s);
            let x = uniform(&mut r, &[d[0] + 1, d[1]], -1.0, 1.0);
            let rows: Vec<usize> = (0..4).map(|_| r.gen_range(0..=d[0])).collect();
            max_rel_error(&[x], s, |t, v| t.take_rows(v[0], &rows))
        })),
        ("fd_expand", Box::new(|s| {
            let d = dims(s, 2);
            max_rel_error(&[uniform(&mut rng(s), &d, -1.0, 1.0)], s, |t, v| t.fd_expand(v[0], 0.01))
        })),
        ("fd_diff", Box::new(|s| {
            let d = dims(s, 3);
            let (n, l, p) = (d[0], d[1], d[2] + 1);
            max_rel_error(&[uniform(&mut rng(s), &[n * (l + 1), p], -1.0, 1.0)], s, |t, v| t.fd_diff(v[0], l, 0.01))
        })),
        ("bernoulli_log_likelihood", Box::new(|s| {
            let d = dims(s, 2);
            let mut r = rng(s);
            let mean = uniform(&mut r, &d, 0.05, 0.95);
            let target = uniform(&mut r, &d, 0.0, 1.0);
            max_rel_error(&[mean], s, |t, v| {
                let x = t.constant(target.clone())?;
                t.bernoulli_log_likelihood(v[0], x)
            })
        })),
        ("kl_diag_gaussian", Box::new(|s| {
            let d = dims(s, 2);
            let mut r = rng(s);
            let ins = [uniform(&mut r, &d, -2.0, 2.0), uniform(&mut r, &d, -3.0, 3.0)];
            max_rel_error(&ins, s, |t, v| t.kl_diag_gaussian(v[0], v[1]))
        })),
        ("jl1 loss", full_loss(LossConfig::jl1(4.0, 0.1))),
        ("jl2 loss", full_loss(LossConfig::jl2(4.0, 0.1))),
        ("jl1 loss at mean", full_loss(LossConfig { jacobian_at: JacobianPoint::Mean, ..LossConfig::jl1(1.0, 0.3) })),
        ("beta-vae loss", full_loss(LossConfig::beta_vae(4.0))),
    ]
}
