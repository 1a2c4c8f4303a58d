//! Reference computations reused by the acceptance runner.

use jl1vae::autodiff::{Bound, ModelParams, Tape, Tensor, Var};
use jl1vae::datasets::FactorSchema;
use jl1vae::metrics::FactorEmbedding;
use jl1vae::vae::{backprop_jacobian, fd_jacobian, kl_diag_gaussian, EncoderOutput, VaeModel};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Two sigmoid layers, `l → 16 → 64`: smooth everywhere.
pub struct SmoothDecoder {
    params: ModelParams<f32>,
}

impl SmoothDecoder {
    pub fn new(l: usize, r: &mut impl Rng) -> Self {
        let mut params = ModelParams::new();
        let mut add = |name: &str, shape: &[usize], scale: f32| {
            params.insert(name, Tensor::from_fn(shape, |_| r.gen_range(-scale..scale)), true).unwrap();
        };
        add("w1", &[l, 16], 1.5);
        add("b1", &[16], 0.5);
        add("w2", &[16, 64], 1.5);
        add("b2", &[64], 0.5);
        Self { params }
    }
}

impl VaeModel<f32> for SmoothDecoder {
    fn params(&self) -> &ModelParams<f32> {
        &self.params
    }
    fn latent_dim(&self) -> usize {
        self.params.get("w1").unwrap().shape()[0]
    }
    fn image_shape(&self) -> Vec<usize> {
        vec![64]
    }
    fn encode_on(&self, _: &mut Tape<f32>, _: &Bound, _: Var) -> jl1vae::Result<(Var, Var)> {
        unreachable!("decoder-only test double")
    }
    fn decode_on(&self, t: &mut Tape<f32>, b: &Bound, z: Var) -> jl1vae::Result<Var> {
        let h = t.matmul(z, b.get(0))?;
        let h = t.add_row_bias(h, b.get(1))?;
        let h = t.sigmoid(h)?;
        let y = t.matmul(h, b.get(2))?;
        let y = t.add_row_bias(y, b.get(3))?;
        t.sigmoid(y)
    }
}

impl SmoothDecoder {
    /// Largest `|fd − exact|` entry for a fresh decoder at a random latent.
    pub fn fd_error(r: &mut impl Rng, l: usize, eps: f32) -> f32 {
        let model = Self::new(l, r);
        let z: Vec<f32> = (0..l).map(|_| r.gen_range(-1.0..1.0)).collect();
        let fd = fd_jacobian(&model, &z, eps).unwrap();
        let exact = backprop_jacobian(&model, &z).unwrap();
        fd.values.data().iter().zip(exact.values.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max)
    }
}

fn log_normal(x: f64, mu: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (x - mu).powi(2) / var)
}

/// Random encoder output with `l` dimensions: closed-form KL, and the
/// Monte-Carlo mean of `log q − log p` with its standard error.
pub fn kl_monte_carlo(r: &mut impl Rng, l: usize, draws: usize) -> (f64, f64, f64) {
    let mu: Vec<f64> = (0..l).map(|_| r.gen_range(-2.0..2.0)).collect();
    let lv: Vec<f64> = (0..l).map(|_| r.gen_range(-2.0..1.5)).collect();
    let enc = EncoderOutput {
        mean: Tensor::new(vec![1, l], mu.clone()).unwrap(),
        log_var: Tensor::new(vec![1, l], lv.clone()).unwrap(),
    };
    let exact = kl_diag_gaussian(&enc);
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..draws {
        let mut d = 0.0;
        for i in 0..l {
            let e: f64 = StandardNormal.sample(r);
            let var = lv[i].exp();
            let z = mu[i] + var.sqrt() * e;
            d += log_normal(z, mu[i], var) - log_normal(z, 0.0, 1.0);
        }
        sum += d;
        sq += d * d;
    }
    let n = draws as f64;
    let mean = sum / n;
    (exact, mean, ((sq / n - mean * mean) / n).sqrt())
}

/// Factor 0 is carried by latent 0 where factor 1 < 32 and by latent 1
/// elsewhere; latent 2 copies factor 1. Globally the two carriers of
/// factor 0 tie, locally one of them is constant.
pub struct Piecewise;

impl FactorEmbedding for Piecewise {
    fn schema(&self) -> FactorSchema {
        FactorSchema::ordered(vec![64, 64])
    }

    fn embed(&self, factors: &[Vec<u16>]) -> jl1vae::Result<Vec<Vec<f64>>> {
        Ok(factors
            .iter()
            .map(|f| {
                let (a, b) = (f[0] as f64, f[1] as f64);
                if f[1] < 32 { vec![a, 0.0, b] } else { vec![0.0, a, b] }
            })
            .collect())
    }
}
