use rand::Rng;

use crate::datasets::cache::DatasetCache;
use crate::datasets::pgm::GrayImage;
use crate::error::{contract_err, Result};

/// Random `crop × crop` patches. Each source is first rescaled to `[0, 1]`
/// by its own min and max; a constant source yields all-0.5 patches.
pub fn crop_natural(images: &[GrayImage], count: usize, crop: usize, rng: &mut impl Rng) -> Result<DatasetCache> {
    if images.is_empty() {
        return Err(contract_err!("no source images"));
    }
    if crop == 0 {
        return Err(contract_err!("crop size must be positive"));
    }
    if let Some((i, img)) = images.iter().enumerate().find(|(_, im)| im.width < crop || im.height < crop) {
        return Err(contract_err!("source {i} is {}x{}, smaller than the {crop}x{crop} crop", img.width, img.height));
    }
    let rescaled: Vec<GrayImage> = images.iter().map(rescale).collect();
    let mut cache = DatasetCache::new(1, crop, crop, Vec::new())?;
    let mut patch = vec![0.0; crop * crop];
    for _ in 0..count {
        let img = &rescaled[rng.gen_range(0..rescaled.len())];
        let top = rng.gen_range(0..=img.height - crop);
        let left = rng.gen_range(0..=img.width - crop);
        for r in 0..crop {
            let src = (top + r) * img.width + left;
            patch[r * crop..(r + 1) * crop].copy_from_slice(&img.data[src..src + crop]);
        }
        cache.push(&[], &patch)?;
    }
    Ok(cache)
}

fn rescale(img: &GrayImage) -> GrayImage {
    let (lo, hi) = img.data.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let data = if hi > lo {
        img.data.iter().map(|&v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.5; img.data.len()]
    };
    GrayImage { data, ..*img }
}

/// Subsamples four images by a constant stride to `out_size / 2` and places
/// them in a 2×2 grid: `[0, 1]` on top, `[2, 3]` below.
pub fn tile_2x2(images: [&GrayImage; 4], out_size: usize) -> Result<GrayImage> {
    if out_size == 0 || out_size % 2 != 0 {
        return Err(contract_err!("output size must be even and positive, got {out_size}"));
    }
    let half = out_size / 2;
    let mut out = vec![0.0; out_size * out_size];
    for (q, img) in images.iter().enumerate() {
        let ok = img.width == img.height && img.width >= out_size && img.width % half == 0 && (img.width / half) % 2 == 0;
        if !ok {
            return Err(contract_err!(
                "tile {q} is {}x{}; need a square image whose side is an even multiple of {half}",
                img.width,
                img.height
            ));
        }
        let step = img.width / half;
        let (r0, c0) = ((q / 2) * half, (q % 2) * half);
        for r in 0..half {
            for c in 0..half {
                out[(r0 + r) * out_size + c0 + c] = img.get(r * step, c * step);
            }
        }
    }
    GrayImage::new(out_size, out_size, out)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn constant_source_gives_mid_gray() {
        let img = GrayImage::new(20, 20, vec![0.3; 400]).unwrap();
        let c = crop_natural(&[img], 5, 16, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(c.len(), 5);
        assert!(c.image(0).iter().all(|&v| (v - 128.0 / 255.0).abs() < 1e-7));
    }

    #[test]
    fn crops_are_in_unit_range_and_undersized_rejected() {
        let img = GrayImage::new(32, 24, (0..768).map(|v| v as f32 * 3.0 - 7.0).collect()).unwrap();
        let c = crop_natural(&[img.clone()], 50, 16, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(c.to_matrix().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(crop_natural(&[img], 1, 25, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn checkerboard_aliases_to_constant() {
        let board = GrayImage::new(64, 64, (0..4096).map(|i| ((i / 64 + i % 64) % 2) as f32).collect()).unwrap();
        let t = tile_2x2([&board; 4], 64).unwrap();
        assert_eq!((t.width, t.height), (64, 64));
        assert!(t.data.iter().all(|&v| v == 0.0));
        let odd = GrayImage::new(48, 48, vec![0.0; 48 * 48]).unwrap();
        assert!(tile_2x2([&odd; 4], 64).is_err());
    }
}
