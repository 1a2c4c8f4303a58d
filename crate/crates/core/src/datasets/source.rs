use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::error::{contract_err, Result};

/// Cardinality of every factor and whether its values are ordered.
/// Unordered factors are held fixed inside a local sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FactorSchema {
    pub cardinalities: Vec<u16>,
    pub ordered: Vec<bool>,
}

impl FactorSchema {
    pub fn ordered(cardinalities: Vec<u16>) -> Self {
        let ordered = vec![true; cardinalities.len()];
        Self { cardinalities, ordered }
    }

    pub fn empty() -> Self {
        Self { cardinalities: Vec::new(), ordered: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.cardinalities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cardinalities.is_empty()
    }

    pub fn check(&self, factors: &[u16]) -> Result<()> {
        if factors.len() != self.len() {
            return Err(contract_err!("expected {} factors, got {}", self.len(), factors.len()));
        }
        for (k, (&v, &c)) in factors.iter().zip(&self.cardinalities).enumerate() {
            if v >= c {
                return Err(contract_err!("factor {k} = {v} outside [0, {c})"));
            }
        }
        Ok(())
    }

    /// Uniform draw over the whole grid.
    pub fn sample(&self, rng: &mut impl Rng) -> Vec<u16> {
        self.cardinalities.iter().map(|&c| rng.gen_range(0..c)).collect()
    }
}

/// Images `[n, c, h, w]` in `[0, 1]` together with their factor values
/// (empty rows for factor-free data).
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub images: Tensor<f32>,
    pub factors: Vec<Vec<u16>>,
}

/// Renders images from factor values.
pub trait FactorRenderer {
    fn schema(&self) -> FactorSchema;

    /// `[channels, height, width]`.
    fn image_shape(&self) -> [usize; 3];

    fn render_into(&self, factors: &[u16], out: &mut [f32]) -> Result<()>;

    fn render_batch(&self, factors: &[Vec<u16>]) -> Result<Tensor<f32>> {
        let [c, h, w] = self.image_shape();
        let per = c * h * w;
        let mut data = vec![0.0; factors.len() * per];
        for (f, out) in factors.iter().zip(data.chunks_exact_mut(per)) {
            self.render_into(f, out)?;
        }
        Tensor::new(vec![factors.len(), c, h, w], data)
    }
}

/// A source of training images.
pub trait ImageSource {
    fn image_shape(&self) -> [usize; 3];

    /// Number of stored records; `None` for on-demand generators.
    fn len(&self) -> Option<usize>;

    /// `n` independent uniform draws (with replacement).
    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Batch>;

    /// Specific records, for epoch-style sampling.
    fn gather(&self, indices: &[usize]) -> Result<Batch>;
}
