use crate::autodiff::{Real, Tape, Tensor};
use crate::error::{dim_err, Result};
use crate::vae::loss::fd_jacobian_on;
use crate::vae::model::VaeModel;

/// Generator sensitivities at one latent point, `pixels × latent_dim`
/// row-major: column `i` is the image change per unit move along `e_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianMatrix<T: Real = f32> {
    pub values: Tensor<T>,
    pub base_latent: Vec<T>,
}

impl<T: Real> JacobianMatrix<T> {
    pub fn pixels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn latent_dim(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn column(&self, i: usize) -> Vec<T> {
        let l = self.latent_dim();
        self.values.data().iter().skip(i).step_by(l).copied().collect()
    }

    pub fn columns(&self) -> Vec<Vec<T>> {
        (0..self.latent_dim()).map(|i| self.column(i)).collect()
    }

    /// Euclidean norm of every column.
    pub fn column_norms(&self) -> Vec<f64> {
        self.columns()
            .iter()
            .map(|c| c.iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>().sqrt())
            .collect()
    }
}

fn single_latent<T: Real>(model_dim: usize, z: &[T]) -> Result<Tensor<T>> {
    if z.len() != model_dim {
        return Err(dim_err!("latent has {} entries, model expects {model_dim}", z.len()));
    }
    Tensor::new(vec![1, model_dim], z.to_vec())
}

/// Forward-difference Jacobian `(g(z + ε·e_i) − g(z)) / ε` at one latent.
pub fn fd_jacobian<T: Real, M: VaeModel<T> + ?Sized>(
    model: &M,
    z: &[T],
    epsilon: T,
) -> Result<JacobianMatrix<T>> {
    let l = model.latent_dim();
    let zt = single_latent(l, z)?;
    let mut tape = Tape::new();
    let bound = model.params().bind(&mut tape)?;
    let zv = tape.constant(zt)?;
    let (jac, _) = fd_jacobian_on(&mut tape, model, &bound, zv, epsilon)?;
    // [1, l, p] → [p, l]
    let src = tape.value(jac).data();
    let p = src.len() / l;
    let mut values = vec![T::zero(); p * l];
    for i in 0..l {
        for j in 0..p {
            values[j * l + i] = src[i * p + j];
        }
    }
    Ok(JacobianMatrix { values: Tensor::new(vec![p, l], values)?, base_latent: z.to_vec() })
}

/// Exact Jacobian by one reverse sweep per output pixel. Slow; meant as
/// a reference for small decoders.
pub fn backprop_jacobian<T: Real, M: VaeModel<T> + ?Sized>(
    model: &M,
    z: &[T],
) -> Result<JacobianMatrix<T>> {
    let l = model.latent_dim();
    let zt = single_latent(l, z)?;
    let pixels: usize = model.image_shape().iter().product();
    let mut values = vec![T::zero(); pixels * l];
    for j in 0..pixels {
        let mut tape = Tape::new();
        let bound = model.params().bind(&mut tape)?;
        let zv = tape.param(zt.clone())?;
        let out = model.decode_on(&mut tape, &bound, zv)?;
        let flat = tape.reshape(out, &[pixels])?;
        let pick = tape.take_rows(flat, &[j])?;
        let grads = tape.backward(pick)?;
        let g = grads.get_or_zeros(zv);
        values[j * l..(j + 1) * l].copy_from_slice(g.data());
    }
    Ok(JacobianMatrix { values: Tensor::new(vec![pixels, l], values)?, base_latent: z.to_vec() })
}
