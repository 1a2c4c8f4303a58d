use serde::{Deserialize, Serialize};

use crate::autodiff::{conv_out_extent as conv_out, conv_transpose_out_extent as conv_transpose_out};
use crate::error::{dim_err, Result};

/// One layer of an encoder or decoder stack.
///
/// A ReLU follows every layer except the last decoder layer, which is
/// followed by a sigmoid. `Fc` after a spatial layer flattens first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Conv { out_channels: usize, kernel: usize, stride: usize, pad: usize },
    Fc { out: usize },
    /// Reshapes a flat activation into `[channels, height, width]`.
    Unflatten { channels: usize, height: usize, width: usize },
    ConvT { out_channels: usize, kernel: usize, stride: usize, pad: usize, out_pad: usize },
}

/// Encoder/decoder layer tables plus the data geometry they expect.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub name: String,
    pub channels: usize,
    pub image_size: usize,
    pub latent_dim: usize,
    /// Shared trunk; the mean and log-variance heads are appended to it.
    pub encoder: Vec<Layer>,
    pub decoder: Vec<Layer>,
}

/// Activation shape between layers (batch axis omitted).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Flat(usize),
    Map { channels: usize, height: usize, width: usize },
}

impl Shape {
    pub fn numel(self) -> usize {
        match self {
            Shape::Flat(n) => n,
            Shape::Map { channels, height, width } => channels * height * width,
        }
    }
}

impl Architecture {
    /// 64×64 stack: four 4×4 stride-2 convolutions (32, 32, 64, 64
    /// channels), FC 256, and the mirrored decoder.
    pub fn conv64(channels: usize, latent_dim: usize) -> Self {
        let conv = |c| Layer::Conv { out_channels: c, kernel: 4, stride: 2, pad: 1 };
        let convt = |c| Layer::ConvT { out_channels: c, kernel: 4, stride: 2, pad: 1, out_pad: 0 };
        Self {
            name: "conv64".into(),
            channels,
            image_size: 64,
            latent_dim,
            encoder: vec![conv(32), conv(32), conv(64), conv(64), Layer::Fc { out: 256 }],
            decoder: vec![
                Layer::Fc { out: 256 },
                Layer::Fc { out: 64 * 4 * 4 },
                Layer::Unflatten { channels: 64, height: 4, width: 4 },
                convt(64),
                convt(32),
                convt(32),
                convt(channels),
            ],
        }
    }

    /// 16×16 stack for natural-image patches: 3×3 stride-2 convolutions
    /// (64, 128), FC 128, and a decoder ending in a stride-1 layer.
    pub fn conv16(latent_dim: usize) -> Self {
        let convt = |c| Layer::ConvT { out_channels: c, kernel: 3, stride: 2, pad: 1, out_pad: 1 };
        Self {
            name: "conv16".into(),
            channels: 1,
            image_size: 16,
            latent_dim,
            encoder: vec![
                Layer::Conv { out_channels: 64, kernel: 3, stride: 2, pad: 1 },
                Layer::Conv { out_channels: 128, kernel: 3, stride: 2, pad: 1 },
                Layer::Fc { out: 128 },
            ],
            decoder: vec![
                Layer::Fc { out: 128 },
                Layer::Fc { out: 64 * 4 * 4 },
                Layer::Unflatten { channels: 64, height: 4, width: 4 },
                convt(64),
                convt(32),
                Layer::ConvT { out_channels: 1, kernel: 3, stride: 1, pad: 1, out_pad: 0 },
            ],
        }
    }

    /// Small 8×8 stack used by tests and gradient checks.
    pub fn tiny8(latent_dim: usize) -> Self {
        Self {
            name: "tiny8".into(),
            channels: 1,
            image_size: 8,
            latent_dim,
            encoder: vec![Layer::Conv { out_channels: 4, kernel: 3, stride: 2, pad: 1 }, Layer::Fc { out: 16 }],
            decoder: vec![
                Layer::Fc { out: 16 },
                Layer::Fc { out: 4 * 4 * 4 },
                Layer::Unflatten { channels: 4, height: 4, width: 4 },
                Layer::ConvT { out_channels: 1, kernel: 3, stride: 2, pad: 1, out_pad: 1 },
            ],
        }
    }

    /// Looks up a preset by name.
    pub fn preset(name: &str, channels: usize, latent_dim: usize) -> Result<Self> {
        match name {
            "conv64" => Ok(Self::conv64(channels, latent_dim)),
            "conv16" if channels == 1 => Ok(Self::conv16(latent_dim)),
            "tiny8" if channels == 1 => Ok(Self::tiny8(latent_dim)),
            "conv16" | "tiny8" => Err(dim_err!("{name} takes single-channel images")),
            other => Err(crate::Error::Config(format!(
                "unknown architecture {other:?} (expected conv64, conv16 or tiny8)"
            ))),
        }
    }

    pub fn image_shape(&self) -> Shape {
        Shape::Map { channels: self.channels, height: self.image_size, width: self.image_size }
    }

    pub fn num_pixels(&self) -> usize {
        self.image_shape().numel()
    }

    /// Output shape of each layer given its input shape.
    pub fn trace(layers: &[Layer], input: Shape) -> Result<Vec<Shape>> {
        let mut shapes = Vec::with_capacity(layers.len());
        let mut cur = input;
        for layer in layers {
            cur = match (*layer, cur) {
                (Layer::Fc { out }, _) => Shape::Flat(out),
                (Layer::Unflatten { channels, height, width }, s) => {
                    if s.numel() != channels * height * width {
                        return Err(dim_err!("cannot unflatten {} values into {channels}×{height}×{width}", s.numel()));
                    }
                    Shape::Map { channels, height, width }
                }
                (Layer::Conv { out_channels, kernel, stride, pad }, Shape::Map { height, width, .. }) => Shape::Map {
                    channels: out_channels,
                    height: conv_out(height, kernel, stride, pad)?,
                    width: conv_out(width, kernel, stride, pad)?,
                },
                (Layer::ConvT { out_channels, kernel, stride, pad, out_pad }, Shape::Map { height, width, .. }) => {
                    Shape::Map {
                        channels: out_channels,
                        height: conv_transpose_out(height, kernel, stride, pad, out_pad)?,
                        width: conv_transpose_out(width, kernel, stride, pad, out_pad)?,
                    }
                }
                (l, Shape::Flat(_)) => return Err(dim_err!("{l:?} needs a spatial input")),
            };
            shapes.push(cur);
        }
        Ok(shapes)
    }

    /// Checks that the encoder ends flat and the decoder reproduces the image shape.
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(dim_err!("latent dimension must be positive"));
        }
        let enc = Self::trace(&self.encoder, self.image_shape())?;
        if !matches!(enc.last(), Some(Shape::Flat(_))) {
            return Err(dim_err!("encoder trunk must end in a fully connected layer"));
        }
        let dec = Self::trace(&self.decoder, Shape::Flat(self.latent_dim))?;
        match dec.last() {
            Some(&s) if s == self.image_shape() => Ok(()),
            other => Err(dim_err!(
                "decoder produces {other:?}, expected {:?}",
                self.image_shape()
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spatial(shapes: &[Shape]) -> Vec<usize> {
        shapes
            .iter()
            .filter_map(|s| match s {
                Shape::Map { height, .. } => Some(*height),
                Shape::Flat(_) => None,
            })
            .collect()
    }

    #[test]
    fn conv64_halves_then_doubles() {
        let a = Architecture::conv64(1, 10);
        a.validate().unwrap();
        let enc = Architecture::trace(&a.encoder, a.image_shape()).unwrap();
        assert_eq!(spatial(&enc), [32, 16, 8, 4]);
        let dec = Architecture::trace(&a.decoder, Shape::Flat(10)).unwrap();
        assert_eq!(spatial(&dec), [4, 8, 16, 32, 64]);
        Architecture::conv64(3, 10).validate().unwrap();
    }

    #[test]
    fn conv16_geometry() {
        let a = Architecture::conv16(10);
        a.validate().unwrap();
        let enc = Architecture::trace(&a.encoder, a.image_shape()).unwrap();
        assert_eq!(spatial(&enc), [8, 4]);
        let dec = Architecture::trace(&a.decoder, Shape::Flat(10)).unwrap();
        assert_eq!(spatial(&dec), [4, 8, 16, 16]);
    }

    #[test]
    fn tiny8_and_presets() {
        Architecture::tiny8(3).validate().unwrap();
        assert!(Architecture::preset("conv16", 3, 10).is_err());
        assert!(Architecture::preset("resnet", 1, 10).is_err());
        let mut broken = Architecture::tiny8(3);
        broken.image_size = 16;
        assert!(broken.validate().is_err());
    }
}
