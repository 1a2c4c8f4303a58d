//! In-memory image cache and its file format.
//!
//! ```text
//! "JLDC"  u32 version  u32 count  u8 channels  u16 height  u16 width
//! u8 factor_count  factor_count × u16 cardinality
//! count × (factor_count × u8 factor, channels·height·width × u8 pixel)
//! ```
//!
//! Little-endian throughout. Pixels store `round(255·v)` and decode as `p / 255`.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::datasets::source::{Batch, FactorRenderer, FactorSchema, ImageSource};
use crate::error::{contract_err, Error, Result};

pub const CACHE_MAGIC: &[u8; 4] = b"JLDC";
pub const CACHE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetCache {
    channels: u8,
    height: u16,
    width: u16,
    cardinalities: Vec<u16>,
    factors: Vec<u8>,
    pixels: Vec<u8>,
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

impl DatasetCache {
    pub fn new(channels: usize, height: usize, width: usize, cardinalities: Vec<u16>) -> Result<Self> {
        let channels = u8::try_from(channels).map_err(|_| contract_err!("too many channels: {channels}"))?;
        let height = u16::try_from(height).map_err(|_| contract_err!("height too large: {height}"))?;
        let width = u16::try_from(width).map_err(|_| contract_err!("width too large: {width}"))?;
        if channels == 0 || height == 0 || width == 0 {
            return Err(contract_err!("image extents must be positive"));
        }
        if cardinalities.len() > u8::MAX as usize {
            return Err(contract_err!("at most 255 factors, got {}", cardinalities.len()));
        }
        if let Some(c) = cardinalities.iter().find(|&&c| c == 0 || c > 256) {
            return Err(contract_err!("factor cardinality {c} does not fit in one byte"));
        }
        Ok(Self { channels, height, width, cardinalities, factors: Vec::new(), pixels: Vec::new() })
    }

    /// Appends one record. `image` holds `channels·height·width` values in `[0, 1]`.
    pub fn push(&mut self, factors: &[u16], image: &[f32]) -> Result<()> {
        FactorSchema::ordered(self.cardinalities.clone()).check(factors)?;
        if image.len() != self.image_len() {
            return Err(contract_err!("image has {} values, expected {}", image.len(), self.image_len()));
        }
        if self.len() >= u32::MAX as usize {
            return Err(contract_err!("cache is full"));
        }
        self.factors.extend(factors.iter().map(|&f| f as u8));
        self.pixels.extend(image.iter().map(|&v| quantize(v)));
        Ok(())
    }

    /// `count` records with factors drawn i.i.d. uniform over the renderer's grid.
    pub fn generate<R: FactorRenderer>(renderer: &R, count: usize, seed: u64) -> Result<Self> {
        if count == 0 {
            return Err(contract_err!("count must be positive"));
        }
        let [c, h, w] = renderer.image_shape();
        let schema = renderer.schema();
        let mut cache = Self::new(c, h, w, schema.cardinalities.clone())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut image = vec![0.0; c * h * w];
        for _ in 0..count {
            let f = schema.sample(&mut rng);
            renderer.render_into(&f, &mut image)?;
            cache.push(&f, &image)?;
        }
        Ok(cache)
    }

    pub fn len(&self) -> usize {
        self.pixels.len() / self.image_len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.channels as usize * self.height as usize * self.width as usize
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels as usize, self.height as usize, self.width as usize]
    }

    pub fn schema(&self) -> FactorSchema {
        FactorSchema::ordered(self.cardinalities.clone())
    }

    pub fn factors(&self, i: usize) -> Vec<u16> {
        let f = self.cardinalities.len();
        self.factors[i * f..(i + 1) * f].iter().map(|&v| v as u16).collect()
    }

    pub fn raw_pixels(&self, i: usize) -> &[u8] {
        let p = self.image_len();
        &self.pixels[i * p..(i + 1) * p]
    }

    pub fn image(&self, i: usize) -> Vec<f32> {
        self.raw_pixels(i).iter().map(|&v| v as f32 / 255.0).collect()
    }

    /// All records flattened to `[len, pixels]` in `f64`, for linear models.
    pub fn to_matrix(&self) -> Vec<f64> {
        self.pixels.iter().map(|&v| v as f64 / 255.0).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.factors.len() + self.pixels.len());
        out.extend_from_slice(CACHE_MAGIC);
        out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.push(self.channels);
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.push(self.cardinalities.len() as u8);
        for c in &self.cardinalities {
            out.extend_from_slice(&c.to_le_bytes());
        }
        let f = self.cardinalities.len();
        for i in 0..self.len() {
            out.extend_from_slice(&self.factors[i * f..(i + 1) * f]);
            out.extend_from_slice(self.raw_pixels(i));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("dataset cache: {m}"));
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated header"))?;
            pos += n;
            Ok(s)
        };
        if take(4)? != CACHE_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != CACHE_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let channels = take(1)?[0] as usize;
        let height = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
        let width = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
        let nf = take(1)?[0] as usize;
        let cards = (0..nf).map(|_| Ok(u16::from_le_bytes(take(2)?.try_into().unwrap()))).collect::<Result<Vec<_>>>()?;
        let mut cache = Self::new(channels, height, width, cards).map_err(|e| bad(&e.to_string()))?;
        let record = nf + cache.image_len();
        let body = &bytes[pos..];
        if body.len() != count * record {
            return Err(bad(&format!("expected {} record bytes, found {}", count * record, body.len())));
        }
        cache.factors.reserve(count * nf);
        cache.pixels.reserve(count * cache.image_len());
        for rec in body.chunks_exact(record) {
            let (f, p) = rec.split_at(nf);
            if let Some(k) = (0..nf).find(|&k| f[k] as u16 >= cache.cardinalities[k]) {
                return Err(bad(&format!("factor {k} out of range")));
            }
            cache.factors.extend_from_slice(f);
            cache.pixels.extend_from_slice(p);
        }
        Ok(cache)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

impl ImageSource for DatasetCache {
    fn image_shape(&self) -> [usize; 3] {
        self.shape()
    }

    fn len(&self) -> Option<usize> {
        Some(DatasetCache::len(self))
    }

    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Batch> {
        if self.is_empty() {
            return Err(contract_err!("cannot sample from an empty cache"));
        }
        if n == 0 {
            return Err(contract_err!("batch size must be at least 1"));
        }
        let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..DatasetCache::len(self))).collect();
        self.gather(&idx)
    }

    fn gather(&self, indices: &[usize]) -> Result<Batch> {
        let len = DatasetCache::len(self);
        if let Some(&i) = indices.iter().find(|&&i| i >= len) {
            return Err(contract_err!("record {i} out of range for cache of {len}"));
        }
        let p = self.image_len();
        let mut data = Vec::with_capacity(indices.len() * p);
        for &i in indices {
            data.extend(self.raw_pixels(i).iter().map(|&v| v as f32 / 255.0));
        }
        let [c, h, w] = self.shape();
        Ok(Batch {
            images: Tensor::new(vec![indices.len(), c, h, w], data)?,
            factors: indices.iter().map(|&i| self.factors(i)).collect(),
        })
    }
}
