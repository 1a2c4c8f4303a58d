use rand::Rng;

use crate::autodiff::{Bound, ModelParams, Real, Tape, Tensor, Var};
use crate::error::{dim_err, Result};
use crate::vae::arch::{Architecture, Layer, Shape};

/// Log-variances are clamped into `[-LOG_VAR_LIMIT, LOG_VAR_LIMIT]` before use.
pub const LOG_VAR_LIMIT: f64 = 12.0;

/// Gaussian posterior parameters for a batch: both `[n, latent_dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput<T: Real = f32> {
    pub mean: Tensor<T>,
    pub log_var: Tensor<T>,
}

/// Anything with an encoder `h`, diagonal log-variance head and generator `g`.
pub trait VaeModel<T: Real> {
    fn params(&self) -> &ModelParams<T>;

    fn latent_dim(&self) -> usize;

    /// Shape of one input image, without batch axis.
    fn image_shape(&self) -> Vec<usize>;

    /// Returns `(mean, log_var)` handles, each `[n, latent_dim]`, with
    /// `log_var` already clamped.
    fn encode_on(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Result<(Var, Var)>;

    /// Decodes `z[n, latent_dim]` into mean images `[n, ...image_shape]`.
    fn decode_on(&self, tape: &mut Tape<T>, bound: &Bound, z: Var) -> Result<Var>;

    /// Posterior parameters for a batch of images.
    fn encode(&self, images: &Tensor<T>) -> Result<EncoderOutput<T>> {
        check_batch(images.shape(), &self.image_shape(), "image")?;
        let mut tape = Tape::new();
        let bound = self.params().bind(&mut tape)?;
        let x = tape.constant(images.clone())?;
        let (m, lv) = self.encode_on(&mut tape, &bound, x)?;
        Ok(EncoderOutput { mean: tape.value(m).clone(), log_var: tape.value(lv).clone() })
    }

    /// Mean images `g(z)` for latents `[n, latent_dim]`.
    fn decode(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        check_batch(z.shape(), &[self.latent_dim()], "latent")?;
        let mut tape = Tape::new();
        let bound = self.params().bind(&mut tape)?;
        let zv = tape.constant(z.clone())?;
        let out = self.decode_on(&mut tape, &bound, zv)?;
        Ok(tape.value(out).clone())
    }
}

pub(crate) fn check_batch(shape: &[usize], item: &[usize], what: &str) -> Result<()> {
    if shape.len() != item.len() + 1 || shape[1..] != *item {
        return Err(dim_err!("expected {what} batch [n, {item:?}], got {shape:?}"));
    }
    Ok(())
}

/// Convolutional VAE built from an [`Architecture`].
#[derive(Clone, Debug, PartialEq)]
pub struct ConvVae<T: Real = f32> {
    pub arch: Architecture,
    pub params: ModelParams<T>,
}

fn uniform_tensor<T: Real, R: Rng>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.gen_range(-bound..bound)))
}

/// Parameters for one layer given its input shape, He-uniform weights and zero biases.
fn layer_params<T: Real, R: Rng>(
    params: &mut ModelParams<T>,
    prefix: &str,
    layer: &Layer,
    input: Shape,
    rng: &mut R,
) -> Result<()> {
    let he = |fan_in: usize| (6.0 / fan_in.max(1) as f64).sqrt();
    let in_channels = match input {
        Shape::Map { channels, .. } => channels,
        Shape::Flat(n) => n,
    };
    match *layer {
        Layer::Fc { out } => {
            let fan_in = input.numel();
            params.insert(format!("{prefix}.weight"), uniform_tensor(rng, &[fan_in, out], he(fan_in)), true)?;
            params.insert(format!("{prefix}.bias"), Tensor::zeros(&[out]), true)?;
        }
        Layer::Conv { out_channels, kernel, .. } => {
            let fan_in = in_channels * kernel * kernel;
            let shape = [out_channels, in_channels, kernel, kernel];
            params.insert(format!("{prefix}.weight"), uniform_tensor(rng, &shape, he(fan_in)), true)?;
            params.insert(format!("{prefix}.bias"), Tensor::zeros(&[out_channels]), true)?;
        }
        Layer::ConvT { out_channels, kernel, stride, .. } => {
            // taps reaching one output pixel
            let per_axis = kernel.div_ceil(stride);
            let fan_in = in_channels * per_axis * per_axis;
            let shape = [in_channels, out_channels, kernel, kernel];
            params.insert(format!("{prefix}.weight"), uniform_tensor(rng, &shape, he(fan_in)), true)?;
            params.insert(format!("{prefix}.bias"), Tensor::zeros(&[out_channels]), true)?;
        }
        Layer::Unflatten { .. } => {}
    }
    Ok(())
}

impl<T: Real> ConvVae<T> {
    /// Fresh network: fan-in scaled uniform weights, zero biases.
    pub fn init<R: Rng>(arch: Architecture, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let mut params = ModelParams::new();
        let enc = Architecture::trace(&arch.encoder, arch.image_shape())?;
        let mut input = arch.image_shape();
        for (i, layer) in arch.encoder.iter().enumerate() {
            layer_params(&mut params, &format!("enc.{i}"), layer, input, rng)?;
            input = enc[i];
        }
        let head = Layer::Fc { out: arch.latent_dim };
        layer_params(&mut params, "enc.mean", &head, input, rng)?;
        layer_params(&mut params, "enc.log_var", &head, input, rng)?;
        let dec = Architecture::trace(&arch.decoder, Shape::Flat(arch.latent_dim))?;
        let mut input = Shape::Flat(arch.latent_dim);
        for (i, layer) in arch.decoder.iter().enumerate() {
            layer_params(&mut params, &format!("dec.{i}"), layer, input, rng)?;
            input = dec[i];
        }
        Ok(Self { arch, params })
    }

    /// Wraps existing parameters, checking names and shapes against a fresh layout.
    pub fn from_params(arch: Architecture, params: ModelParams<T>) -> Result<Self> {
        let reference: ConvVae<T> = ConvVae::init(arch.clone(), &mut rand::rngs::mock::StepRng::new(0, 1))?;
        if reference.params.len() != params.len() {
            return Err(dim_err!(
                "architecture {} needs {} tensors, got {}",
                arch.name,
                reference.params.len(),
                params.len()
            ));
        }
        for ((rn, re), (pn, pe)) in reference.params.iter().zip(params.iter()) {
            if rn != pn || re.value.shape() != pe.value.shape() {
                return Err(dim_err!("parameter {pn:?} {:?} does not match {rn:?} {:?}", pe.value.shape(), re.value.shape()));
            }
        }
        Ok(Self { arch, params })
    }

    pub fn cast<U: Real>(&self) -> ConvVae<U> {
        ConvVae { arch: self.arch.clone(), params: self.params.cast() }
    }

    fn param(&self, bound: &Bound, name: &str) -> Var {
        bound.get(self.params.index_of(name).unwrap_or_else(|| panic!("missing parameter {name}")))
    }

    fn apply(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        prefix: &str,
        layer: &Layer,
        x: Var,
    ) -> Result<Var> {
        let weight = |s: &Self| s.param(bound, &format!("{prefix}.weight"));
        let bias = |s: &Self| s.param(bound, &format!("{prefix}.bias"));
        match *layer {
            Layer::Fc { .. } => {
                let n = tape.shape(x)[0];
                let flat = if tape.shape(x).len() == 2 {
                    x
                } else {
                    let inner = tape.value(x).numel() / n;
                    tape.reshape(x, &[n, inner])?
                };
                let y = tape.matmul(flat, weight(self))?;
                tape.add_row_bias(y, bias(self))
            }
            Layer::Conv { stride, pad, .. } => {
                let y = tape.conv2d(x, weight(self), stride, pad)?;
                tape.add_channel_bias(y, bias(self))
            }
            Layer::ConvT { stride, pad, out_pad, .. } => {
                let y = tape.conv_transpose2d(x, weight(self), stride, pad, out_pad)?;
                tape.add_channel_bias(y, bias(self))
            }
            Layer::Unflatten { channels, height, width } => {
                let n = tape.shape(x)[0];
                tape.reshape(x, &[n, channels, height, width])
            }
        }
    }
}

impl<T: Real> VaeModel<T> for ConvVae<T> {
    fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    fn image_shape(&self) -> Vec<usize> {
        vec![self.arch.channels, self.arch.image_size, self.arch.image_size]
    }

    fn encode_on(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Result<(Var, Var)> {
        check_batch(tape.shape(x), &self.image_shape(), "image")?;
        let mut h = x;
        for (i, layer) in self.arch.encoder.iter().enumerate() {
            h = self.apply(tape, bound, &format!("enc.{i}"), layer, h)?;
            h = tape.relu(h)?;
        }
        let head = Layer::Fc { out: self.arch.latent_dim };
        let mean = self.apply(tape, bound, "enc.mean", &head, h)?;
        let raw = self.apply(tape, bound, "enc.log_var", &head, h)?;
        let limit = T::from_f64_lossy(LOG_VAR_LIMIT);
        let log_var = tape.clamp(raw, -limit, limit)?;
        Ok((mean, log_var))
    }

    fn decode_on(&self, tape: &mut Tape<T>, bound: &Bound, z: Var) -> Result<Var> {
        check_batch(tape.shape(z), &[self.arch.latent_dim], "latent")?;
        let mut h = z;
        let last = self.arch.decoder.len() - 1;
        for (i, layer) in self.arch.decoder.iter().enumerate() {
            h = self.apply(tape, bound, &format!("dec.{i}"), layer, h)?;
            if matches!(layer, Layer::Unflatten { .. }) {
                continue;
            }
            h = if i == last { tape.sigmoid(h)? } else { tape.relu(h)? };
        }
        Ok(h)
    }
}

/// Affine encoder and affine generator `g(z) = zW + b`.
///
/// The generator is linear so finite differences are exact, which makes
/// this the reference model for Jacobian and penalty checks.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearVae<T: Real = f32> {
    pub params: ModelParams<T>,
    latent_dim: usize,
    pixels: usize,
}

impl<T: Real> LinearVae<T> {
    /// `decoder` is `[latent_dim, pixels]`; the encoder is its transpose and
    /// the log-variance head is a constant bias.
    pub fn new(decoder: Tensor<T>, log_var: T) -> Result<Self> {
        let [l, p] = *decoder.shape() else {
            return Err(dim_err!("decoder weight must be [latent_dim, pixels]"));
        };
        let mut enc = vec![T::zero(); p * l];
        for i in 0..l {
            for j in 0..p {
                enc[j * l + i] = decoder.data()[i * p + j];
            }
        }
        let mut params = ModelParams::new();
        params.insert("enc.weight", Tensor::new(vec![p, l], enc)?, true)?;
        params.insert("enc.bias", Tensor::zeros(&[l]), true)?;
        params.insert("enc.log_var.weight", Tensor::zeros(&[p, l]), true)?;
        params.insert("enc.log_var.bias", Tensor::full(&[l], log_var), true)?;
        params.insert("dec.weight", decoder, true)?;
        params.insert("dec.bias", Tensor::zeros(&[p]), true)?;
        Ok(Self { params, latent_dim: l, pixels: p })
    }
}

impl<T: Real> VaeModel<T> for LinearVae<T> {
    fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn image_shape(&self) -> Vec<usize> {
        vec![self.pixels]
    }

    fn encode_on(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Result<(Var, Var)> {
        check_batch(tape.shape(x), &[self.pixels], "image")?;
        let m = tape.matmul(x, bound.get(0))?;
        let mean = tape.add_row_bias(m, bound.get(1))?;
        let s = tape.matmul(x, bound.get(2))?;
        let raw = tape.add_row_bias(s, bound.get(3))?;
        let limit = T::from_f64_lossy(LOG_VAR_LIMIT);
        Ok((mean, tape.clamp(raw, -limit, limit)?))
    }

    fn decode_on(&self, tape: &mut Tape<T>, bound: &Bound, z: Var) -> Result<Var> {
        check_batch(tape.shape(z), &[self.latent_dim], "latent")?;
        let y = tape.matmul(z, bound.get(4))?;
        tape.add_row_bias(y, bound.get(5))
    }
}
