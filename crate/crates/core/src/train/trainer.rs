use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{AdamState, Tensor};
use crate::datasets::{Batch, ImageSource};
use crate::error::{contract_err, Error, Result};
use crate::rng::{stream, Stream};
use crate::train::config::{Sampling, TrainConfig};
use crate::vae::{jl1_loss_and_grad, Architecture, Checkpoint, ConvVae, LossTerms};

pub const RUN_CSV_HEADER: &str = "batch,total,recon,kl,jac,seconds";

/// One logged batch. `kl` and `jac` are the weighted contributions
/// `β_t·KL` and `γ_t·J`, so `total = recon + kl + jac`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunRow {
    /// Number of batches completed when the row was logged.
    pub batch: u64,
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
    pub jac: f64,
    pub seconds: f64,
}

impl RunRow {
    fn from_terms(batch: u64, t: &LossTerms, seconds: f64) -> Self {
        Self { batch, total: t.total, recon: t.recon, kl: t.beta * t.kl, jac: t.gamma * t.jac, seconds }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunRecord {
    pub rows: Vec<RunRow>,
}

impl RunRecord {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{RUN_CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{},{}", r.batch, r.total, r.recon, r.kl, r.jac, r.seconds);
        }
        s
    }
}

/// Owns one model, its optimizer and the batch counter.
///
/// Batch `b` draws its images from stream `(seed, Batch, b)` and its
/// reparameterization noise from `(seed, Noise, b)`, so a trainer rebuilt
/// from a checkpoint continues exactly as the original would have.
#[derive(Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: ConvVae<f32>,
    pub optimizer: AdamState<f32>,
    pub step: u64,
    epochs: HashMap<u64, Vec<usize>>,
}

impl Trainer {
    pub fn new(config: TrainConfig, image_shape: [usize; 3]) -> Result<Self> {
        config.validate()?;
        let [c, h, w] = image_shape;
        let arch = Architecture::preset(&config.architecture, c, config.latent_dim)?;
        if arch.image_size != h || arch.image_size != w {
            return Err(Error::Config(format!(
                "{} expects {s}×{s} images, data are {h}×{w}",
                arch.name,
                s = arch.image_size
            )));
        }
        let model = ConvVae::init(arch, &mut stream(config.seed, Stream::Init, 0))?;
        let optimizer = AdamState::new(&model.params, config.adam());
        Ok(Self { config, model, optimizer, step: 0, epochs: HashMap::new() })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let config = ck.meta.train.ok_or_else(|| Error::Format("checkpoint carries no training config".into()))?;
        config.validate()?;
        let optimizer = ck.optimizer.ok_or_else(|| Error::Format("checkpoint carries no optimizer state".into()))?;
        if optimizer.step != ck.meta.step {
            return Err(Error::Format("optimizer step disagrees with checkpoint step".into()));
        }
        Ok(Self { config, model: ck.model, optimizer, step: ck.meta.step, epochs: HashMap::new() })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            self.model.clone(),
            self.config.final_loss(),
            self.step,
            self.config.seed,
            Some(self.config.clone()),
            Some(self.optimizer.clone()),
        )
    }

    /// The images of zero-based batch `b`.
    pub fn batch(&mut self, source: &dyn ImageSource, b: u64) -> Result<Batch> {
        let n = self.config.batch_size;
        match self.config.sampling {
            Sampling::Independent => source.sample(n, &mut stream(self.config.seed, Stream::Batch, b)),
            Sampling::Epoch => {
                let len = source.len().ok_or_else(|| contract_err!("epoch sampling needs a finite dataset"))?;
                let start = b * n as u64;
                let mut idx = Vec::with_capacity(n);
                for pos in start..start + n as u64 {
                    let epoch = pos / len as u64;
                    let perm = self.epochs.entry(epoch).or_insert_with(|| {
                        let mut p: Vec<usize> = (0..len).collect();
                        p.shuffle(&mut stream(self.config.seed, Stream::Epoch, epoch));
                        p
                    });
                    idx.push(perm[(pos % len as u64) as usize]);
                }
                self.epochs.retain(|&e, _| e + 1 >= start / len as u64);
                source.gather(&idx)
            }
        }
    }

    /// Runs one Adam step on the next batch.
    pub fn train_step(&mut self, source: &dyn ImageSource) -> Result<LossTerms> {
        let b = self.step;
        let batch = self.batch(source, b)?;
        let mut rng = stream(self.config.seed, Stream::Noise, b);
        let l = self.config.latent_dim;
        let n = batch.images.shape()[0];
        let noise = Tensor::from_fn(&[n, l], |_| StandardNormal.sample(&mut rng));
        let cfg = self.config.loss_at(b);
        let collapse = |detail: String| Error::Collapse { batch: b, detail };
        let (terms, grads) = match jl1_loss_and_grad(&self.model, &batch.images, &noise, &cfg) {
            Err(Error::NonFinite(op)) => return Err(collapse(format!("{op} produced a non-finite value"))),
            other => other?,
        };
        if ![terms.total, terms.recon, terms.kl, terms.jac].iter().all(|v| v.is_finite()) {
            return Err(collapse(format!("{terms:?}")));
        }
        if grads.iter().any(|g| !g.all_finite()) {
            return Err(collapse("non-finite gradient".into()));
        }
        self.optimizer.step(&mut self.model.params, &grads)?;
        self.step += 1;
        Ok(terms)
    }

    /// Trains until `until` batches are complete, logging every
    /// `log_every` batches and at the end, and calling `on_checkpoint`
    /// every `checkpoint_every` batches.
    pub fn train_until(
        &mut self,
        source: &dyn ImageSource,
        until: u64,
        mut on_checkpoint: impl FnMut(&Trainer) -> Result<()>,
    ) -> Result<RunRecord> {
        if source.image_shape() != self.image_shape() {
            return Err(contract_err!("data {:?} do not match the model {:?}", source.image_shape(), self.image_shape()));
        }
        let until = until.min(self.config.total_batches);
        let start = Instant::now();
        let mut record = RunRecord::default();
        while self.step < until {
            let terms = self.train_step(source)?;
            if self.step % self.config.log_every == 0 || self.step == until {
                let secs = if self.config.wall_clock { start.elapsed().as_secs_f64() } else { 0.0 };
                record.rows.push(RunRow::from_terms(self.step, &terms, secs));
            }
            if self.step % self.config.checkpoint_every == 0 {
                on_checkpoint(self)?;
            }
        }
        Ok(record)
    }

    /// Trains to `total_batches` without checkpoints.
    pub fn train(&mut self, source: &dyn ImageSource) -> Result<RunRecord> {
        let total = self.config.total_batches;
        self.train_until(source, total, |_| Ok(()))
    }

    pub fn image_shape(&self) -> [usize; 3] {
        let a = &self.model.arch;
        [a.channels, a.image_size, a.image_size]
    }
}
