use serde::{Deserialize, Serialize};

use crate::autodiff::AdamConfig;
use crate::datasets::ThreeDots;
use crate::error::{Error, Result};
use crate::metrics::LocalSampleSpec;
use crate::vae::{JacobianPoint, LossConfig, DEFAULT_FD_EPSILON};

/// `final_value · min(1, batch / anneal_batches)`; no ramp when
/// `anneal_batches` is 0.
pub fn anneal_linear(batch: u64, final_value: f64, anneal_batches: u64) -> f64 {
    if anneal_batches == 0 || batch >= anneal_batches {
        return final_value;
    }
    final_value * batch as f64 / anneal_batches as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    BetaVae,
    Jl1Vae,
    Jl2Vae,
}

impl ModelKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "betavae" => Ok(Self::BetaVae),
            "jl1vae" => Ok(Self::Jl1Vae),
            "jl2vae" => Ok(Self::Jl2Vae),
            other => Err(Error::Config(format!("unknown model {other:?} (expected betavae, jl1vae or jl2vae)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::BetaVae => "betavae",
            Self::Jl1Vae => "jl1vae",
            Self::Jl2Vae => "jl2vae",
        }
    }

    pub fn loss(self, beta: f64, gamma: f64) -> LossConfig {
        match self {
            Self::BetaVae => LossConfig::beta_vae(beta),
            Self::Jl1Vae => LossConfig::jl1(beta, gamma),
            Self::Jl2Vae => LossConfig::jl2(beta, gamma),
        }
    }
}

/// Where training images come from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSpec {
    /// Images rendered on demand from uniformly drawn factors.
    ThreeDots(ThreeDots),
    /// A dataset cache file supplied separately.
    Cache,
}

/// Batch composition.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    /// Every batch is an independent uniform draw with replacement.
    #[default]
    Independent,
    /// Fixed-size records are visited in a fresh permutation each epoch.
    Epoch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub beta: f64,
    pub gamma: f64,
    pub total_batches: u64,
    pub anneal_batches: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub latent_dim: usize,
    pub fd_epsilon: f64,
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub architecture: String,
    pub checkpoint_every: u64,
    pub log_every: u64,
    pub jacobian_at: JacobianPoint,
    pub sampling: Sampling,
    /// Record elapsed seconds in the run log. Off by default so that
    /// reruns produce identical files.
    pub wall_clock: bool,
}

impl TrainConfig {
    /// Desk-scale three-dots defaults for the given model.
    pub fn new(model: ModelKind) -> Self {
        Self {
            model,
            beta: 4.0,
            gamma: if model == ModelKind::BetaVae { 0.0 } else { 0.1 },
            total_batches: 30_000,
            anneal_batches: 10_000,
            batch_size: 32,
            lr: 1e-4,
            latent_dim: 10,
            fd_epsilon: DEFAULT_FD_EPSILON,
            seed: 0,
            dataset: DatasetSpec::ThreeDots(ThreeDots::default()),
            architecture: "conv64".into(),
            checkpoint_every: 10_000,
            log_every: 100,
            jacobian_at: JacobianPoint::Sampled,
            sampling: Sampling::Independent,
            wall_clock: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("total_batches", self.total_batches),
            ("batch_size", self.batch_size as u64),
            ("latent_dim", self.latent_dim as u64),
            ("checkpoint_every", self.checkpoint_every),
            ("log_every", self.log_every),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{k} must be positive")));
        }
        if self.anneal_batches > self.total_batches {
            return Err(Error::Config(format!(
                "anneal_batches ({}) exceeds total_batches ({})",
                self.anneal_batches, self.total_batches
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.model == ModelKind::BetaVae && self.gamma != 0.0 {
            return Err(Error::Config("betavae has no Jacobian penalty; gamma must be 0".into()));
        }
        self.final_loss().validated().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn final_loss(&self) -> LossConfig {
        LossConfig { fd_epsilon: self.fd_epsilon, jacobian_at: self.jacobian_at, ..self.model.loss(self.beta, self.gamma) }
    }

    /// Loss weights used for zero-based batch `batch`.
    pub fn loss_at(&self, batch: u64) -> LossConfig {
        let fin = self.final_loss();
        LossConfig {
            beta: anneal_linear(batch, fin.beta, self.anneal_batches),
            gamma: anneal_linear(batch, fin.gamma, self.anneal_batches),
            ..fin
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, ..AdamConfig::default() }
    }
}

/// Every key accepted in an experiment config, with its default.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("model", "required: betavae | jl1vae | jl2vae"),
    ("beta", "4.0"),
    ("gamma", "0.1 for jl1vae/jl2vae, 0 for betavae"),
    ("total_batches", "30000"),
    ("anneal_batches", "10000"),
    ("batch_size", "32"),
    ("lr", "0.0001"),
    ("latent_dim", "10"),
    ("fd_epsilon", "0.01"),
    ("seed", "0"),
    ("dataset", "three-dots | cache (default three-dots)"),
    ("image_size", "64"),
    ("positions", "64"),
    ("radius", "3.0"),
    ("architecture", "conv64 | conv16 | tiny8 (default conv64)"),
    ("checkpoint_every", "10000"),
    ("log_every", "100"),
    ("jacobian_at", "sampled | mean (default sampled)"),
    ("sampling", "independent | epoch (default independent)"),
    ("wall_clock", "false"),
    ("rho", "0.1"),
    ("n_points", "10000"),
    ("n_repeats", "20"),
    ("n_bins", "5"),
    ("eval_seed", "0"),
];

/// A `key = value` document describing one training run and its evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub local: LocalSampleSpec,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs: Vec<(usize, String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if !CONFIG_KEYS.iter().any(|(name, _)| *name == k) {
                return Err(Error::Config(format!("line {}: unknown key `{k}`", i + 1)));
            }
            if pairs.iter().any(|(_, seen, _)| *seen == k) {
                return Err(Error::Config(format!("line {}: duplicate key `{k}`", i + 1)));
            }
            pairs.push((i + 1, k, v));
        }
        let get = |key: &str| pairs.iter().find(|(_, k, _)| k == key).map(|(line, _, v)| (*line, v.as_str()));
        fn num<T: std::str::FromStr>(key: &str, entry: Option<(usize, &str)>, default: T) -> Result<T> {
            match entry {
                None => Ok(default),
                Some((line, v)) => {
                    v.parse().map_err(|_| Error::Config(format!("line {line}: `{key}` has invalid value {v:?}")))
                }
            }
        }

        let model = ModelKind::parse(get("model").ok_or_else(|| Error::Config("missing required key `model`".into()))?.1)?;
        let d = TrainConfig::new(model);
        let dots = ThreeDots::default();
        let size = num("image_size", get("image_size"), dots.size)?;
        let positions = num("positions", get("positions"), dots.positions)?;
        let radius = num("radius", get("radius"), dots.radius)?;
        let dataset = match get("dataset").map(|e| e.1).unwrap_or("three-dots") {
            "three-dots" => DatasetSpec::ThreeDots(ThreeDots::new(size, positions, radius).map_err(|e| Error::Config(e.to_string()))?),
            "cache" => DatasetSpec::Cache,
            other => return Err(Error::Config(format!("unknown dataset {other:?} (expected three-dots or cache)"))),
        };
        let jacobian_at = match get("jacobian_at").map(|e| e.1).unwrap_or("sampled") {
            "sampled" => JacobianPoint::Sampled,
            "mean" => JacobianPoint::Mean,
            other => return Err(Error::Config(format!("unknown jacobian_at {other:?} (expected sampled or mean)"))),
        };
        let sampling = match get("sampling").map(|e| e.1).unwrap_or("independent") {
            "independent" => Sampling::Independent,
            "epoch" => Sampling::Epoch,
            other => return Err(Error::Config(format!("unknown sampling {other:?} (expected independent or epoch)"))),
        };
        let train = TrainConfig {
            model,
            beta: num("beta", get("beta"), d.beta)?,
            gamma: num("gamma", get("gamma"), d.gamma)?,
            total_batches: num("total_batches", get("total_batches"), d.total_batches)?,
            anneal_batches: num("anneal_batches", get("anneal_batches"), d.anneal_batches)?,
            batch_size: num("batch_size", get("batch_size"), d.batch_size)?,
            lr: num("lr", get("lr"), d.lr)?,
            latent_dim: num("latent_dim", get("latent_dim"), d.latent_dim)?,
            fd_epsilon: num("fd_epsilon", get("fd_epsilon"), d.fd_epsilon)?,
            seed: num("seed", get("seed"), d.seed)?,
            dataset,
            architecture: get("architecture").map(|e| e.1.to_string()).unwrap_or(d.architecture),
            checkpoint_every: num("checkpoint_every", get("checkpoint_every"), d.checkpoint_every)?,
            log_every: num("log_every", get("log_every"), d.log_every)?,
            jacobian_at,
            sampling,
            wall_clock: num("wall_clock", get("wall_clock"), d.wall_clock)?,
        };
        train.validate()?;
        let l = LocalSampleSpec::default();
        let local = LocalSampleSpec {
            rho: num("rho", get("rho"), l.rho)?,
            n_points: num("n_points", get("n_points"), l.n_points)?,
            n_repeats: num("n_repeats", get("n_repeats"), l.n_repeats)?,
            n_bins: num("n_bins", get("n_bins"), l.n_bins)?,
            seed: num("eval_seed", get("eval_seed"), l.seed)?,
        };
        local.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self { train, local })
    }
}
