use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::source::{Batch, FactorRenderer, FactorSchema, ImageSource};
use crate::error::{contract_err, Result};

/// Three identical black discs on a white square. Factors are
/// `[x0, y0, x1, y1, x2, y2]`, each an index into `positions` evenly spaced
/// coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThreeDots {
    pub size: usize,
    pub positions: u16,
    pub radius: f64,
}

impl Default for ThreeDots {
    fn default() -> Self {
        Self { size: 64, positions: 64, radius: 3.0 }
    }
}

impl ThreeDots {
    pub const DOTS: usize = 3;

    pub fn new(size: usize, positions: u16, radius: f64) -> Result<Self> {
        if size == 0 || size > u16::MAX as usize {
            return Err(contract_err!("image size must be in 1..=65535, got {size}"));
        }
        if positions == 0 || positions > 256 {
            return Err(contract_err!("positions must be in 1..=256, got {positions}"));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(contract_err!("radius must be positive, got {radius}"));
        }
        Ok(Self { size, positions, radius })
    }

    /// Pixel-space coordinate of grid index `i`.
    pub fn coordinate(&self, i: u16) -> f64 {
        let step = self.size as f64 / self.positions as f64;
        (i as f64 + 0.5) * step
    }

    /// Single-channel image, row-major, 1.0 = white.
    pub fn render(&self, factors: &[u16]) -> Result<Vec<f32>> {
        let mut out = vec![0.0; self.size * self.size];
        self.render_into(factors, &mut out)?;
        Ok(out)
    }
}

impl FactorRenderer for ThreeDots {
    fn schema(&self) -> FactorSchema {
        FactorSchema::ordered(vec![self.positions; 2 * Self::DOTS])
    }

    fn image_shape(&self) -> [usize; 3] {
        [1, self.size, self.size]
    }

    fn render_into(&self, factors: &[u16], out: &mut [f32]) -> Result<()> {
        self.schema().check(factors)?;
        let n = self.size;
        if out.len() != n * n {
            return Err(contract_err!("output buffer has {} pixels, expected {}", out.len(), n * n));
        }
        out.fill(1.0);
        let r2 = self.radius * self.radius;
        for dot in factors.chunks_exact(2) {
            let (cx, cy) = (self.coordinate(dot[0]), self.coordinate(dot[1]));
            let lo = |c: f64| ((c - self.radius - 0.5).floor().max(0.0)) as usize;
            let hi = |c: f64| ((c + self.radius + 0.5).ceil().max(0.0) as usize).min(n);
            for row in lo(cy)..hi(cy) {
                let dy = row as f64 + 0.5 - cy;
                for col in lo(cx)..hi(cx) {
                    let dx = col as f64 + 0.5 - cx;
                    if dx * dx + dy * dy <= r2 {
                        out[row * n + col] = 0.0;
                    }
                }
            }
        }
        Ok(())
    }
}

impl ImageSource for ThreeDots {
    fn image_shape(&self) -> [usize; 3] {
        FactorRenderer::image_shape(self)
    }

    fn len(&self) -> Option<usize> {
        None
    }

    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Batch> {
        if n == 0 {
            return Err(contract_err!("batch size must be at least 1"));
        }
        let schema = self.schema();
        let factors: Vec<Vec<u16>> = (0..n).map(|_| schema.sample(rng)).collect();
        let images = self.render_batch(&factors)?;
        Ok(Batch { images, factors })
    }

    fn gather(&self, _indices: &[usize]) -> Result<Batch> {
        Err(contract_err!("an on-demand generator has no stored records"))
    }
}
