//! β-VAE and Jacobian-regularized objectives.
//!
//! All objectives are written as quantities to *minimize*:
//!
//! ```text
//! total = recon + gamma·jac + beta·kl
//! recon = −log p(x | z)            (Bernoulli, summed over pixels)
//! jac   = ‖J_g(z)‖₁  or  ‖J_g(z)‖₂² (forward differences)
//! kl    = KL(q(z | x) ‖ N(0, I))
//! ```
//!
//! Each term is averaged over the batch.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, Real, Tape, Tensor, Var, BERNOULLI_CLAMP};
use crate::error::{contract_err, dim_err, Result};
use crate::vae::model::{check_batch, EncoderOutput, VaeModel};

/// Norm applied to the generator Jacobian.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianNorm {
    /// Sum of absolute entries.
    L1,
    /// Sum of squared entries.
    L2,
    None,
}

/// Latent point at which the Jacobian penalty is evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianPoint {
    /// The reparameterized sample also used for reconstruction.
    #[default]
    Sampled,
    /// The posterior mean `h(x)`.
    Mean,
}

pub const DEFAULT_FD_EPSILON: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub beta: f64,
    pub gamma: f64,
    pub jac_norm: JacobianNorm,
    pub fd_epsilon: f64,
    #[serde(default)]
    pub jacobian_at: JacobianPoint,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::beta_vae(1.0)
    }
}

impl LossConfig {
    pub fn beta_vae(beta: f64) -> Self {
        Self {
            beta,
            gamma: 0.0,
            jac_norm: JacobianNorm::None,
            fd_epsilon: DEFAULT_FD_EPSILON,
            jacobian_at: JacobianPoint::Sampled,
        }
    }

    pub fn jl1(beta: f64, gamma: f64) -> Self {
        Self { gamma, jac_norm: JacobianNorm::L1, ..Self::beta_vae(beta) }
    }

    pub fn jl2(beta: f64, gamma: f64) -> Self {
        Self { gamma, jac_norm: JacobianNorm::L2, ..Self::beta_vae(beta) }
    }

    /// Validates the weights; `JacobianNorm::None` forces `gamma = 0`.
    pub fn validated(mut self) -> Result<Self> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(contract_err!("beta must be finite and non-negative, got {}", self.beta));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(contract_err!("gamma must be finite and non-negative, got {}", self.gamma));
        }
        if !(self.fd_epsilon > 0.0 && self.fd_epsilon.is_finite()) {
            return Err(contract_err!("fd_epsilon must be positive, got {}", self.fd_epsilon));
        }
        if self.jac_norm == JacobianNorm::None {
            self.gamma = 0.0;
        }
        Ok(self)
    }

    /// Whether the Jacobian has to be evaluated at all.
    pub fn penalizes_jacobian(&self) -> bool {
        self.jac_norm != JacobianNorm::None && self.gamma > 0.0
    }
}

/// Batch-mean loss terms (unweighted) and the weighted total.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
    pub jac: f64,
    pub beta: f64,
    pub gamma: f64,
}

/// Handles of a loss built on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LossGraph {
    pub total: Var,
    pub recon: Var,
    pub kl: Var,
    pub jac: Option<Var>,
}

impl LossGraph {
    pub fn terms<T: Real>(&self, tape: &Tape<T>, cfg: &LossConfig) -> LossTerms {
        let read = |v: Var| tape.value(v).item().to_f64_lossy();
        LossTerms {
            total: read(self.total),
            recon: read(self.recon),
            kl: read(self.kl),
            jac: self.jac.map(read).unwrap_or(0.0),
            beta: cfg.beta,
            gamma: cfg.gamma,
        }
    }
}

/// `z = mean + exp(log_var / 2) ∘ noise` on the tape.
pub fn reparameterize_on<T: Real>(
    tape: &mut Tape<T>,
    mean: Var,
    log_var: Var,
    noise: Var,
) -> Result<Var> {
    let half = tape.scale(log_var, T::from_f64_lossy(0.5))?;
    let std = tape.exp(half)?;
    let scaled = tape.mul(std, noise)?;
    tape.add(mean, scaled)
}

/// Draws latents from the posterior given standard-normal `noise`.
pub fn reparameterize<T: Real>(enc: &EncoderOutput<T>, noise: &Tensor<T>) -> Result<Tensor<T>> {
    if noise.shape() != enc.mean.shape() {
        return Err(dim_err!("noise {:?} does not match latents {:?}", noise.shape(), enc.mean.shape()));
    }
    let half = T::from_f64_lossy(0.5);
    let data = enc
        .mean
        .data()
        .iter()
        .zip(enc.log_var.data())
        .zip(noise.data())
        .map(|((&m, &lv), &e)| m + (half * lv).exp() * e)
        .collect();
    Tensor::new(enc.mean.shape().to_vec(), data)
}

/// Total Bernoulli log-likelihood of `x` under pixel means `x_mean`.
pub fn bernoulli_log_likelihood<T: Real>(x: &Tensor<T>, x_mean: &Tensor<T>) -> Result<T> {
    if x.shape() != x_mean.shape() {
        return Err(dim_err!("bernoulli: {:?} vs {:?}", x.shape(), x_mean.shape()));
    }
    let lo = T::from_f64_lossy(BERNOULLI_CLAMP);
    let hi = T::one() - lo;
    Ok(x.data()
        .iter()
        .zip(x_mean.data())
        .map(|(&xv, &mv)| {
            let mv = mv.max(lo).min(hi);
            xv * mv.ln() + (T::one() - xv) * (T::one() - mv).ln()
        })
        .sum())
}

/// Total `KL(q ‖ N(0, I))` summed over the batch.
pub fn kl_diag_gaussian<T: Real>(enc: &EncoderOutput<T>) -> T {
    let half = T::from_f64_lossy(0.5);
    half * enc
        .mean
        .data()
        .iter()
        .zip(enc.log_var.data())
        .map(|(&m, &lv)| m * m + lv.exp() - T::one() - lv)
        .sum::<T>()
}

/// Per-sample Jacobian norm from an `[n, l, p]` forward-difference tensor.
fn jacobian_norm_on<T: Real>(tape: &mut Tape<T>, jac: Var, norm: JacobianNorm) -> Result<Var> {
    let mag = match norm {
        JacobianNorm::L1 => tape.abs(jac)?,
        JacobianNorm::L2 => tape.square(jac)?,
        JacobianNorm::None => return Err(contract_err!("no Jacobian norm configured")),
    };
    tape.sum_per_row(mag)
}

/// Forward-difference Jacobian of the generator at latents `z[n, l]`,
/// returned as an `[n, l, pixels]` handle. All `n·(l+1)` decodes run as
/// one batch, and the result stays differentiable.
///
/// Also returns the `[n, ...]` handle of the unperturbed decodes `g(z)`.
pub fn fd_jacobian_on<T: Real, M: VaeModel<T> + ?Sized>(
    tape: &mut Tape<T>,
    model: &M,
    bound: &Bound,
    z: Var,
    epsilon: T,
) -> Result<(Var, Var)> {
    let l = model.latent_dim();
    let n = tape.shape(z)[0];
    let expanded = tape.fd_expand(z, epsilon)?;
    let decoded = model.decode_on(tape, bound, expanded)?;
    let base_rows: Vec<usize> = (0..n).map(|s| s * (l + 1)).collect();
    let base = tape.take_rows(decoded, &base_rows)?;
    let jac = tape.fd_diff(decoded, l, epsilon)?;
    Ok((jac, base))
}

/// Builds the full objective on `tape` for images `x` and noise `noise[n, l]`.
pub fn jl1_loss_on<T: Real, M: VaeModel<T> + ?Sized>(
    tape: &mut Tape<T>,
    model: &M,
    bound: &Bound,
    x: Var,
    noise: Var,
    cfg: &LossConfig,
) -> Result<LossGraph> {
    let cfg = cfg.validated()?;
    let n = tape.shape(x)[0];
    if tape.shape(noise) != [n, model.latent_dim()] {
        return Err(dim_err!("noise must be [{n}, {}], got {:?}", model.latent_dim(), tape.shape(noise)));
    }
    let (mean, log_var) = model.encode_on(tape, bound, x)?;
    let z = reparameterize_on(tape, mean, log_var, noise)?;
    let eps = T::from_f64_lossy(cfg.fd_epsilon);

    let (recon_mean, jac) = if !cfg.penalizes_jacobian() {
        (model.decode_on(tape, bound, z)?, None)
    } else {
        match cfg.jacobian_at {
            JacobianPoint::Sampled => {
                let (jac, base) = fd_jacobian_on(tape, model, bound, z, eps)?;
                (base, Some(jac))
            }
            JacobianPoint::Mean => {
                let (jac, _) = fd_jacobian_on(tape, model, bound, mean, eps)?;
                (model.decode_on(tape, bound, z)?, Some(jac))
            }
        }
    };

    let ll = tape.bernoulli_log_likelihood(recon_mean, x)?;
    let ll_mean = tape.mean(ll)?;
    let recon = tape.scale(ll_mean, -T::one())?;
    let kl_rows = tape.kl_diag_gaussian(mean, log_var)?;
    let kl = tape.mean(kl_rows)?;
    let weighted_kl = tape.scale(kl, T::from_f64_lossy(cfg.beta))?;
    let mut total = tape.add(recon, weighted_kl)?;
    let jac = match jac {
        Some(j) => {
            let rows = jacobian_norm_on(tape, j, cfg.jac_norm)?;
            let jm = tape.mean(rows)?;
            let weighted = tape.scale(jm, T::from_f64_lossy(cfg.gamma))?;
            total = tape.add(total, weighted)?;
            Some(jm)
        }
        None => None,
    };
    Ok(LossGraph { total, recon, kl, jac })
}

/// Evaluates the objective for a batch. Returns the loss terms only.
pub fn jl1_loss<T: Real, M: VaeModel<T> + ?Sized>(
    model: &M,
    x: &Tensor<T>,
    noise: &Tensor<T>,
    cfg: &LossConfig,
) -> Result<LossTerms> {
    let mut tape = Tape::new();
    let bound = model.params().bind(&mut tape)?;
    let graph = build(&mut tape, model, &bound, x, noise, cfg)?;
    Ok(graph.terms(&tape, &cfg.validated()?))
}

/// Evaluates the objective and its gradient for every model parameter, in
/// parameter order.
pub fn jl1_loss_and_grad<T: Real, M: VaeModel<T> + ?Sized>(
    model: &M,
    x: &Tensor<T>,
    noise: &Tensor<T>,
    cfg: &LossConfig,
) -> Result<(LossTerms, Vec<Tensor<T>>)> {
    let mut tape = Tape::new();
    let bound = model.params().bind(&mut tape)?;
    let graph = build(&mut tape, model, &bound, x, noise, cfg)?;
    let terms = graph.terms(&tape, &cfg.validated()?);
    let mut grads = tape.backward(graph.total)?;
    Ok((terms, bound.gradients(&mut grads)))
}

fn build<T: Real, M: VaeModel<T> + ?Sized>(
    tape: &mut Tape<T>,
    model: &M,
    bound: &Bound,
    x: &Tensor<T>,
    noise: &Tensor<T>,
    cfg: &LossConfig,
) -> Result<LossGraph> {
    check_batch(x.shape(), &model.image_shape(), "image")?;
    let xv = tape.constant(x.clone())?;
    let nv = tape.constant(noise.clone())?;
    jl1_loss_on(tape, model, bound, xv, nv, cfg)
}
