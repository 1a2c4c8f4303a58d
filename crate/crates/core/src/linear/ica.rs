use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{contract_err, Result};
use crate::linear::{center, pca_fit, LinearKind, LinearModel};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IcaOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for IcaOptions {
    fn default() -> Self {
        Self { max_iter: 200, tol: 1e-4 }
    }
}

/// `(W Wᵀ)^{-1/2} W`
fn decorrelate(w: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(w * w.transpose());
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.max(f64::MIN_POSITIVE).sqrt()));
    &eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose() * w
}

/// FastICA with the `tanh` contrast and symmetric decorrelation.
///
/// The data are centered and PCA-whitened to `k` dimensions first. The
/// returned components are the unmixing rows composed with the whitening,
/// so `transform` yields the estimated sources directly. If the iteration
/// does not converge within `max_iter`, the partial result is returned with
/// `converged = false`.
pub fn fastica_fit(data: &DMatrix<f64>, k: usize, opts: IcaOptions, rng: &mut impl Rng) -> Result<LinearModel> {
    let (n, d) = data.shape();
    if n <= k {
        return Err(contract_err!("FastICA needs more samples ({n}) than components ({k})"));
    }
    let pca = pca_fit(data, k)?;
    if let Some(v) = pca.explained_variance.iter().find(|&&v| v <= 1e-12) {
        return Err(contract_err!("data has only rank < {k} (variance {v:e}); cannot whiten"));
    }
    let scale = DMatrix::from_diagonal(&pca.explained_variance.iter().map(|v| 1.0 / v.sqrt()).collect::<Vec<_>>().into());
    let whitening = scale * pca.components_matrix();
    let xw = center(data, &pca.mean)? * whitening.transpose();

    let mut w = decorrelate(&DMatrix::from_fn(k, k, |_, _| rng.sample(StandardNormal)));
    let nf = n as f64;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let g = (&xw * w.transpose()).map(f64::tanh);
        let mean_dg: Vec<f64> = g.column_iter().map(|c| c.iter().map(|t| 1.0 - t * t).sum::<f64>() / nf).collect();
        let mut next = g.transpose() * &xw / nf;
        for (i, dg) in mean_dg.iter().enumerate() {
            let row = w.row(i) * *dg;
            let mut target = next.row_mut(i);
            target -= row;
        }
        let next = decorrelate(&next);
        let change = (0..k).map(|i| (1.0 - next.row(i).dot(&w.row(i)).abs()).abs()).fold(0.0, f64::max);
        w = next;
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    let components = &w * &whitening;
    Ok(LinearModel {
        kind: LinearKind::Ica,
        dim: d,
        k,
        mean: pca.mean,
        components: components.transpose().as_slice().to_vec(),
        whitening: Some(whitening.transpose().as_slice().to_vec()),
        explained_variance: Vec::new(),
        iterations,
        converged,
    })
}
