use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::datasets::{FactorRenderer, FactorSchema};
use crate::error::{contract_err, Error, Result};
use crate::metrics::mi::MIProfile;
use crate::metrics::scores::{mig, modularity};
use crate::rng::{stream, Stream};
use crate::vae::VaeModel;

/// How local samples are drawn and scored.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalSampleSpec {
    /// Neighbourhood radius as a fraction of each factor's range; 1 is global.
    pub rho: f64,
    pub n_points: usize,
    pub n_repeats: usize,
    pub n_bins: usize,
    pub seed: u64,
}

impl Default for LocalSampleSpec {
    fn default() -> Self {
        Self { rho: 0.1, n_points: 10_000, n_repeats: 20, n_bins: 5, seed: 0 }
    }
}

impl LocalSampleSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(contract_err!("rho must be in (0, 1], got {}", self.rho));
        }
        if self.n_points < 2 || self.n_repeats == 0 || self.n_bins == 0 {
            return Err(contract_err!("need n_points ≥ 2, n_repeats ≥ 1 and n_bins ≥ 1"));
        }
        Ok(())
    }

    /// Grid-step radius for a factor with `cardinality` values.
    pub fn radius(&self, cardinality: u16) -> u16 {
        (self.rho * (cardinality as f64 - 1.0)).floor() as u16
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mig,
    Modularity,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Mig => "mig",
            Metric::Modularity => "modularity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mig" => Ok(Metric::Mig),
            "modularity" => Ok(Metric::Modularity),
            other => Err(Error::Config(format!("unknown metric {other:?} (expected mig or modularity)"))),
        }
    }

    pub fn score(self, profile: &MIProfile) -> Result<f64> {
        match self {
            Metric::Mig => mig(profile),
            Metric::Modularity => modularity(profile),
        }
    }
}

/// Draws `spec.n_points` factor vectors from an L∞ ball around a uniformly
/// chosen centroid. Unordered factors stay at the centroid value.
pub fn sample_local_factors(schema: &FactorSchema, spec: &LocalSampleSpec, rng: &mut impl Rng) -> Vec<Vec<u16>> {
    let centroid = schema.sample(rng);
    let ranges: Vec<(u16, u16)> = schema
        .cardinalities
        .iter()
        .zip(&schema.ordered)
        .zip(&centroid)
        .map(|((&card, &ordered), &c)| {
            if ordered {
                let r = spec.radius(card);
                (c.saturating_sub(r), (c + r).min(card - 1))
            } else {
                (c, c)
            }
        })
        .collect();
    (0..spec.n_points).map(|_| ranges.iter().map(|&(lo, hi)| rng.gen_range(lo..=hi)).collect()).collect()
}

/// Deterministic representation of the images generated by factor vectors.
pub trait FactorEmbedding {
    fn schema(&self) -> FactorSchema;

    /// One latent row per factor vector.
    fn embed(&self, factors: &[Vec<u16>]) -> Result<Vec<Vec<f64>>>;
}

/// Renders factors to images and takes the posterior mean of a VAE.
pub struct ModelEmbedding<'a, M: ?Sized, R: ?Sized> {
    pub model: &'a M,
    pub renderer: &'a R,
    pub chunk: usize,
}

impl<'a, M: VaeModel<f32> + ?Sized, R: FactorRenderer + ?Sized> ModelEmbedding<'a, M, R> {
    pub fn new(model: &'a M, renderer: &'a R) -> Self {
        Self { model, renderer, chunk: 250 }
    }
}

impl<M: VaeModel<f32> + ?Sized, R: FactorRenderer + ?Sized> FactorEmbedding for ModelEmbedding<'_, M, R> {
    fn schema(&self) -> FactorSchema {
        self.renderer.schema()
    }

    fn embed(&self, factors: &[Vec<u16>]) -> Result<Vec<Vec<f64>>> {
        let l = self.model.latent_dim();
        let mut out = Vec::with_capacity(factors.len());
        for chunk in factors.chunks(self.chunk.max(1)) {
            let images: Tensor<f32> = self.renderer.render_batch(chunk)?;
            let enc = self.model.encode(&images)?;
            out.extend(enc.mean.data().chunks_exact(l).map(|r| r.iter().map(|&v| v as f64).collect()));
        }
        Ok(out)
    }
}

/// Per-sample scores and their mean.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalScore {
    pub mean: f64,
    pub per_sample: Vec<f64>,
}

const MAX_REDRAWS: usize = 10;

/// Scores `spec.n_repeats` local samples. Repeat `r` uses its own random
/// stream, so results do not depend on evaluation order. A sample whose
/// score is undefined (all factors constant) is redrawn up to 10 times.
pub fn local_metric<E: FactorEmbedding + ?Sized>(
    embedding: &E,
    spec: &LocalSampleSpec,
    metric: Metric,
) -> Result<LocalScore> {
    spec.validate()?;
    let schema = embedding.schema();
    let mut per_sample = Vec::with_capacity(spec.n_repeats);
    for repeat in 0..spec.n_repeats {
        let mut rng = stream(spec.seed, Stream::Eval, repeat as u64);
        let mut attempt = 0;
        let score = loop {
            let factors = sample_local_factors(&schema, spec, &mut rng);
            let latents = embedding.embed(&factors)?;
            let profile = MIProfile::estimate(&latents, &factors, spec.n_bins)?;
            match metric.score(&profile) {
                Err(Error::Undefined(_)) if attempt < MAX_REDRAWS => attempt += 1,
                other => break other?,
            }
        };
        per_sample.push(score);
    }
    let mean = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    Ok(LocalScore { mean, per_sample })
}

pub const METRIC_CSV_HEADER: &str = "model_id,seed,metric,rho,repeat,value";

/// Appends one row per sample and a `repeat = -1` row with the mean.
pub fn write_metric_csv(out: &mut String, model_id: &str, spec: &LocalSampleSpec, metric: Metric, score: &LocalScore) {
    let name = metric.name();
    for (r, v) in score.per_sample.iter().enumerate() {
        let _ = writeln!(out, "{model_id},{},{name},{},{r},{v}", spec.seed, spec.rho);
    }
    let _ = writeln!(out, "{model_id},{},{name},{},-1,{}", spec.seed, spec.rho, score.mean);
}
