//! Linear latent-variable baselines on flattened image patches.

mod export;
mod ica;
mod pca;

pub use export::{export_components, gini, signed_to_gray};
pub use ica::{fastica_fit, IcaOptions};
pub use pca::pca_fit;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearKind {
    Pca,
    Ica,
}

/// Fitted linear model. `components` has one pixel-space direction per
/// row (`k × d`, row-major).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub kind: LinearKind,
    pub dim: usize,
    pub k: usize,
    pub mean: Vec<f64>,
    pub components: Vec<f64>,
    /// PCA-whitening matrix (`k × d`) used by ICA.
    pub whitening: Option<Vec<f64>>,
    /// Variance along each PCA component; empty for ICA.
    pub explained_variance: Vec<f64>,
    /// Fixed-point iterations run (ICA only).
    pub iterations: usize,
    pub converged: bool,
}

impl LinearModel {
    pub fn component(&self, i: usize) -> &[f64] {
        &self.components[i * self.dim..(i + 1) * self.dim]
    }

    pub fn components_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.k, self.dim, &self.components)
    }

    /// Latent codes `(x − mean)·componentsᵀ` for rows of `data`.
    pub fn transform(&self, data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(center(data, &self.mean)? * self.components_matrix().transpose())
    }

    /// `codes·components + mean`. Exact inverse of `transform` for PCA with `k = d`.
    pub fn reconstruct(&self, codes: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if codes.ncols() != self.k {
            return Err(dim_err!("codes have {} columns, model has {} components", codes.ncols(), self.k));
        }
        let mut out = codes * self.components_matrix();
        for mut row in out.row_iter_mut() {
            for (v, m) in row.iter_mut().zip(&self.mean) {
                *v += m;
            }
        }
        Ok(out)
    }
}

/// Data matrix `n × d` from row-major values.
pub fn data_matrix(n: usize, d: usize, values: &[f64]) -> Result<DMatrix<f64>> {
    if values.len() != n * d {
        return Err(dim_err!("{} values do not form a {n}×{d} matrix", values.len()));
    }
    Ok(DMatrix::from_row_slice(n, d, values))
}

fn column_means(data: &DMatrix<f64>) -> Vec<f64> {
    let n = data.nrows() as f64;
    data.column_iter().map(|c| c.sum() / n).collect()
}

fn center(data: &DMatrix<f64>, mean: &[f64]) -> Result<DMatrix<f64>> {
    if data.ncols() != mean.len() {
        return Err(dim_err!("data has {} columns, model expects {}", data.ncols(), mean.len()));
    }
    let mut out = data.clone();
    for (mut col, m) in out.column_iter_mut().zip(mean) {
        col.add_scalar_mut(-m);
    }
    Ok(out)
}
