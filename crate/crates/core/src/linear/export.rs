use std::fs;
use std::path::{Path, PathBuf};

use crate::datasets::write_pgm;
use crate::error::{contract_err, Result};
use crate::linear::LinearModel;

/// Maps signed maps to 8-bit gray with one shared scale:
/// `v ↦ clamp(round(128 + 127·v / max|v|), 0, 255)`. All-zero input maps to 128.
pub fn signed_to_gray(maps: &[Vec<f64>]) -> Vec<Vec<u8>> {
    let peak = maps.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    maps.iter()
        .map(|m| {
            m.iter()
                .map(|&v| if peak > 0.0 { (128.0 + 127.0 * v / peak).round().clamp(0.0, 255.0) as u8 } else { 128 })
                .collect()
        })
        .collect()
}

/// Gini coefficient of non-negative values: 0 for a flat vector, close to 1
/// when the mass sits on a single entry.
pub fn gini(values: &[f64]) -> f64 {
    let mut x: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let total: f64 = x.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let weighted: f64 = x.iter().enumerate().map(|(i, v)| (2.0 * (i as f64 + 1.0) - n - 1.0) * v).sum();
    weighted / (n * total)
}

/// Writes `component_NNN.pgm` for every component, reshaped to `height × width`.
pub fn export_components(model: &LinearModel, height: usize, width: usize, dir: &Path) -> Result<Vec<PathBuf>> {
    if height * width != model.dim {
        return Err(contract_err!("{height}×{width} does not match component length {}", model.dim));
    }
    fs::create_dir_all(dir)?;
    let maps: Vec<Vec<f64>> = (0..model.k).map(|i| model.component(i).to_vec()).collect();
    signed_to_gray(&maps)
        .iter()
        .enumerate()
        .map(|(i, px)| {
            let path = dir.join(format!("component_{i:03}.pgm"));
            write_pgm(&path, width, height, px)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_mapping() {
        assert_eq!(signed_to_gray(&[vec![0.0; 3]]), vec![vec![128; 3]]);
        assert_eq!(signed_to_gray(&[vec![0.0, 2.0], vec![-2.0, 1.0]]), vec![vec![128, 255], vec![1, 192]]);
    }

    #[test]
    fn gini_extremes() {
        assert_eq!(gini(&[1.0; 8]), 0.0);
        assert!((gini(&[0.0, 0.0, 0.0, 5.0]) - 0.75).abs() < 1e-12);
        assert_eq!(gini(&[0.0; 4]), 0.0);
    }
}
