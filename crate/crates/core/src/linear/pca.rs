use nalgebra::{DMatrix, SVD};

use crate::error::{contract_err, Result};
use crate::linear::{center, column_means, LinearKind, LinearModel};

/// Principal components of `data` (`n × d`): the top-`k` right singular
/// vectors of the centered data, by decreasing singular value.
pub fn pca_fit(data: &DMatrix<f64>, k: usize) -> Result<LinearModel> {
    let (n, d) = data.shape();
    if k == 0 || k > n.min(d) {
        return Err(contract_err!("k = {k} must be in 1..={}", n.min(d)));
    }
    if n < 2 {
        return Err(contract_err!("PCA needs at least two samples"));
    }
    let mean = column_means(data);
    let centered = center(data, &mean)?;
    let svd = SVD::new(centered, false, true);
    let v_t = svd.v_t.expect("right singular vectors were requested");
    let mut components = Vec::with_capacity(k * d);
    for i in 0..k {
        components.extend(v_t.row(i).iter().copied());
    }
    let explained_variance = svd.singular_values.iter().take(k).map(|s| s * s / (n - 1) as f64).collect();
    Ok(LinearModel {
        kind: LinearKind::Pca,
        dim: d,
        k,
        mean,
        components,
        whitening: None,
        explained_variance,
        iterations: 0,
        converged: true,
    })
}
