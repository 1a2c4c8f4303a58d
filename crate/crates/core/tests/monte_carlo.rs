//! Closed forms checked against sampling.

mod common;

use common::oracles::kl_monte_carlo;
use common::rng;
use jl1vae::autodiff::Tensor;
use jl1vae::vae::{bernoulli_log_likelihood, reparameterize, EncoderOutput};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

#[test]
fn kl_matches_monte_carlo() {
    let mut r = rng(11);
    let draws = 1_000_000;
    for case in 0..20 {
        let (exact, mean, se) = kl_monte_carlo(&mut r, 4, draws);
        assert!((mean - exact).abs() < 3.0 * se, "case {case}: MC {mean} ± {se}, exact {exact}");
        assert!(exact >= 0.0);
    }
}

#[test]
fn reparameterized_samples_have_the_posterior_covariance() {
    let mut r = rng(12);
    let n = 100_000;
    let lv = [0.5f64, -1.0, 1.2];
    let enc = EncoderOutput {
        mean: Tensor::new(vec![n, 3], (0..n).flat_map(|_| [1.0, -2.0, 0.0]).collect()).unwrap(),
        log_var: Tensor::new(vec![n, 3], (0..n).flat_map(|_| lv).collect()).unwrap(),
    };
    let noise = Tensor::from_fn(&[n, 3], |_| StandardNormal.sample(&mut r));
    let z = reparameterize(&enc, &noise).unwrap();
    let rows: Vec<&[f64]> = z.data().chunks_exact(3).collect();
    let mean: Vec<f64> = (0..3).map(|i| rows.iter().map(|r| r[i]).sum::<f64>() / n as f64).collect();
    for i in 0..3 {
        for j in 0..3 {
            let c: f64 = rows.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / (n as f64 - 1.0);
            let vi = lv[i].exp();
            let vj = lv[j].exp();
            let expected = if i == j { vi } else { 0.0 };
            // standard error of a sample (co)variance of Gaussians
            let se = if i == j { vi * (2.0 / n as f64).sqrt() } else { (vi * vj / n as f64).sqrt() };
            assert!((c - expected).abs() < 3.0 * se, "cov[{i}][{j}] = {c}, expected {expected} ± {se}");
        }
    }
}

#[test]
fn bernoulli_matches_high_precision_reference() {
    let mut r = rng(13);
    for _ in 0..20 {
        let n = 4096;
        let x = Tensor::<f32>::from_fn(&[1, n], |_| r.gen_range(0.0..1.0));
        let m = Tensor::<f32>::from_fn(&[1, n], |_| r.gen_range(0.001..0.999));
        let got = bernoulli_log_likelihood(&x, &m).unwrap() as f64;
        let reference: f64 = x
            .data()
            .iter()
            .zip(m.data())
            .map(|(&x, &m)| {
                let (x, m) = (x as f64, (m as f64).clamp(1e-6, 1.0 - 1e-6));
                x * m.ln() + (1.0 - x) * (1.0 - m).ln()
            })
            .sum();
        assert!(((got - reference) / reference).abs() < 1e-5, "{got} vs {reference}");
    }
}
