use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::datasets::{FactorSchema, FactorRenderer, ThreeDots};
use crate::error::{contract_err, Result};
use crate::linear::gini;
use crate::metrics::{local_metric, LocalSampleSpec, Metric, ModelEmbedding};
use crate::rng::{stream, Stream};
use crate::train::config::{DatasetSpec, TrainConfig};
use crate::train::trainer::{RunRow, Trainer};
use crate::vae::{fd_jacobian, VaeModel};

/// One line of a comparison: a label and the config used for every seed.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodSpec {
    pub name: String,
    pub config: TrainConfig,
}

/// Train every method on every seed, then score each model.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentPlan {
    pub methods: Vec<MethodSpec>,
    pub seeds: Vec<u64>,
    /// Local MIG is reported at each of these radii.
    pub rhos: Vec<f64>,
    /// Sample sizes and bins for the local metric; `rho` is overridden.
    pub local: LocalSampleSpec,
    /// Number of held-out images for the Jacobian Gini score.
    pub gini_images: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub method: String,
    pub seed: u64,
    /// `(rho, mean local MIG)` per radius.
    pub local_mig: Vec<(f64, f64)>,
    pub jacobian_gini: f64,
    pub last: Option<RunRow>,
}

impl RunSummary {
    pub fn mig_at(&self, rho: f64) -> Option<f64> {
        self.local_mig.iter().find(|(r, _)| *r == rho).map(|(_, v)| *v)
    }
}

/// Mean Gini coefficient of `|column|` over all Jacobian columns at the
/// posterior means of `n` images drawn from a fixed stream.
pub fn jacobian_gini<M: VaeModel<f32>>(model: &M, dots: &ThreeDots, n: usize, epsilon: f32) -> Result<f64> {
    if n == 0 {
        return Err(contract_err!("need at least one image"));
    }
    let schema: FactorSchema = dots.schema();
    let mut rng = stream(0, Stream::Fit, 0);
    let factors: Vec<Vec<u16>> = (0..n).map(|_| schema.sample(&mut rng)).collect();
    let means = model.encode(&dots.render_batch(&factors)?)?.mean;
    let l = model.latent_dim();
    let mut total = 0.0;
    for z in means.data().chunks_exact(l) {
        let j = fd_jacobian(model, z, epsilon)?;
        total += j.columns().iter().map(|c| gini(&c.iter().map(|&v| v as f64).collect::<Vec<_>>())).sum::<f64>();
    }
    Ok(total / (n * l) as f64)
}

impl ExperimentPlan {
    /// Trains and scores one (method, seed) pair on the three-dots generator.
    pub fn run_one(&self, method: &MethodSpec, seed: u64) -> Result<(RunSummary, Trainer)> {
        let dots = match method.config.dataset {
            DatasetSpec::ThreeDots(d) => d,
            DatasetSpec::Cache => return Err(contract_err!("the experiment driver renders three-dots on demand")),
        };
        let config = TrainConfig { seed, ..method.config.clone() };
        let mut trainer = Trainer::new(config, FactorRenderer::image_shape(&dots))?;
        let record = trainer.train(&dots)?;
        let emb = ModelEmbedding::new(&trainer.model, &dots);
        let local_mig = self
            .rhos
            .iter()
            .map(|&rho| {
                let spec = LocalSampleSpec { rho, seed, ..self.local };
                local_metric(&emb, &spec, Metric::Mig).map(|s| (rho, s.mean))
            })
            .collect::<Result<Vec<_>>>()?;
        let eps = trainer.config.fd_epsilon as f32;
        let jacobian_gini = jacobian_gini(&trainer.model, &dots, self.gini_images, eps)?;
        let summary = RunSummary {
            method: method.name.clone(),
            seed,
            local_mig,
            jacobian_gini,
            last: record.rows.last().copied(),
        };
        Ok((summary, trainer))
    }

    pub fn run(&self) -> Result<Vec<RunSummary>> {
        let mut out = Vec::new();
        for m in &self.methods {
            for &s in &self.seeds {
                out.push(self.run_one(m, s)?.0);
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WelchResult {
    pub mean_diff: f64,
    pub t: f64,
    pub df: f64,
    /// One-sided p-value for `mean(a) > mean(b)`.
    pub p: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
}

/// Welch's unequal-variance t-test of `mean(a) > mean(b)`.
pub fn welch_one_sided(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(contract_err!("each group needs at least two observations"));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se = (sa + sb).sqrt();
    let diff = ma - mb;
    if se == 0.0 {
        let p = if diff > 0.0 { 0.0 } else { 1.0 };
        return Ok(WelchResult { mean_diff: diff, t: diff.signum() * f64::INFINITY, df: f64::NAN, p });
    }
    let t = diff / se;
    let df = (sa + sb).powi(2) / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| contract_err!("t distribution: {e}"))?;
    Ok(WelchResult { mean_diff: diff, t, df, p: 1.0 - dist.cdf(t) })
}
