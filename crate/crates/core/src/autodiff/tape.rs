//! Reverse-mode differentiation tape.
//!
//! Every primitive appends one node holding its forward value and the
//! handles of its inputs. Nodes are only ever appended, so inputs always
//! precede outputs and a single reverse sweep visits each node once.

use crate::autodiff::conv::{
    batch_major_to_channel_major, channel_major_to_batch_major, col2im, conv_out_extent,
    conv_transpose_out_extent, im2col, Patches,
};
use crate::autodiff::{Real, Tensor};
use crate::error::{contract_err, dim_err, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

/// Probabilities fed to the Bernoulli likelihood are clamped to this margin.
pub const BERNOULLI_CLAMP: f64 = 1e-6;

#[derive(Clone, Debug)]
enum Op<T> {
    Constant,
    Param,
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    AddChannelBias(Var, Var),
    Conv2d { x: Var, k: Var, stride: usize, pad: usize },
    ConvTranspose2d { x: Var, k: Var, stride: usize, pad: usize },
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Abs(Var),
    Square(Var),
    Clamp(Var, T, T),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Reshape(Var),
    Sum(Var),
    SumPerRow(Var),
    Mean(Var),
    TakeRows(Var, Vec<usize>),
    FdExpand { z: Var },
    FdDiff { g: Var, eps: T },
    BernoulliLogLik { mean: Var, target: Var },
    KlDiag { mu: Var, log_var: Var },
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Append-only record of a forward computation.
#[derive(Clone, Debug, Default)]
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Clone, Debug)]
pub struct Gradients<T: Real = f32> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros when the root did not depend on it.
    pub fn get_or_zeros(&self, var: Var) -> Tensor<T> {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }

    pub fn take_or_zeros(&mut self, var: Var) -> Tensor<T> {
        self.grads[var.0].take().unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }
}

fn require_same(op: &str, a: &[usize], b: &[usize]) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(dim_err!("{op}: shapes {a:?} and {b:?} differ"))
    }
}

fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, name: &'static str) -> Result<Var> {
        let value = value.check_finite(name)?;
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Input that receives no gradient of interest.
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Constant, "constant")
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Param, "param")
    }

    pub fn is_param(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].op, Op::Param)
    }

    /// `[m, k] · [k, n] → [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(dim_err!("matmul: incompatible shapes {sa:?} · {sb:?}"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.value(a).data(),
            k,
            1,
            self.value(b).data(),
            n,
            1,
            T::zero(),
            &mut out,
            n,
            1,
        );
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), "matmul")
    }

    /// Adds `bias[n]` to every row of `x[m, n]`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sx.len() != 2 || sb != [sx[1]] {
            return Err(dim_err!("add_row_bias: {sx:?} + {sb:?}"));
        }
        let n = sx[1];
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, &bv) in row.iter_mut().zip(&b) {
                *o += bv;
            }
        }
        self.push(out, Op::AddRowBias(x, bias), "add_row_bias")
    }

    /// Adds `bias[c]` to channel `c` of `x[batch, c, ...]`.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sx.len() < 2 || sb != [sx[1]] {
            return Err(dim_err!("add_channel_bias: {sx:?} + {sb:?}"));
        }
        let inner: usize = sx[2..].iter().product();
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).clone();
        for (i, chunk) in out.data_mut().chunks_mut(inner).enumerate() {
            let bv = b[i % b.len()];
            chunk.iter_mut().for_each(|o| *o += bv);
        }
        self.push(out, Op::AddChannelBias(x, bias), "add_channel_bias")
    }

    fn as_batched(shape: &[usize]) -> Option<[usize; 4]> {
        match *shape {
            [c, h, w] => Some([1, c, h, w]),
            [n, c, h, w] => Some([n, c, h, w]),
            _ => None,
        }
    }

    /// Cross-correlation of `x[n, c_in, h, w]` with `k[c_out, c_in, kh, kw]`.
    ///
    /// Rank-3 inputs are treated as a batch of one and keep rank 3.
    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sk = self.shape(k).to_vec();
        let [n, c, h, w] =
            Self::as_batched(&sx).ok_or_else(|| dim_err!("conv2d: input must be rank 3 or 4, got {sx:?}"))?;
        if sk.len() != 4 || sk[1] != c {
            return Err(dim_err!("conv2d: kernel {sk:?} does not fit input {sx:?}"));
        }
        let (c_out, kh, kw) = (sk[0], sk[2], sk[3]);
        let ho = conv_out_extent(h, kh, stride, pad)?;
        let wo = conv_out_extent(w, kw, stride, pad)?;
        let p = Patches {
            batch: n,
            channels: c,
            height: h,
            width: w,
            kh,
            kw,
            stride,
            pad,
            grid_h: ho,
            grid_w: wo,
        };
        let cols = im2col(self.value(x).data(), &p);
        let (rows, ncols) = (p.rows(), p.cols());
        let mut tmp = vec![T::zero(); c_out * ncols];
        T::gemm(
            c_out,
            rows,
            ncols,
            T::one(),
            self.value(k).data(),
            rows,
            1,
            &cols,
            ncols,
            1,
            T::zero(),
            &mut tmp,
            ncols,
            1,
        );
        let out = channel_major_to_batch_major(&tmp, n, c_out, ho * wo);
        let shape = if sx.len() == 3 { vec![c_out, ho, wo] } else { vec![n, c_out, ho, wo] };
        self.push(Tensor::new(shape, out)?, Op::Conv2d { x, k, stride, pad }, "conv2d")
    }

    /// Transposed convolution of `x[n, c_in, h, w]` with `k[c_in, c_out, kh, kw]`.
    ///
    /// This is the adjoint of [`Tape::conv2d`] with the same kernel tensor.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        k: Var,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sk = self.shape(k).to_vec();
        let [n, c_in, h, w] = Self::as_batched(&sx)
            .ok_or_else(|| dim_err!("conv_transpose2d: input must be rank 3 or 4, got {sx:?}"))?;
        if sk.len() != 4 || sk[0] != c_in {
            return Err(dim_err!("conv_transpose2d: kernel {sk:?} does not fit input {sx:?}"));
        }
        let (c_out, kh, kw) = (sk[1], sk[2], sk[3]);
        let ho = conv_transpose_out_extent(h, kh, stride, pad, out_pad)?;
        let wo = conv_transpose_out_extent(w, kw, stride, pad, out_pad)?;
        let p = Patches {
            batch: n,
            channels: c_out,
            height: ho,
            width: wo,
            kh,
            kw,
            stride,
            pad,
            grid_h: h,
            grid_w: w,
        };
        let xm = batch_major_to_channel_major(self.value(x).data(), n, c_in, h * w);
        let (rows, ncols) = (p.rows(), p.cols());
        let mut cols = vec![T::zero(); rows * ncols];
        // cols = Kᵀ · X with K viewed as [c_in, c_out·kh·kw]
        T::gemm(
            rows,
            c_in,
            ncols,
            T::one(),
            self.value(k).data(),
            1,
            rows,
            &xm,
            ncols,
            1,
            T::zero(),
            &mut cols,
            ncols,
            1,
        );
        let out = col2im(&cols, &p);
        let shape = if sx.len() == 3 { vec![c_out, ho, wo] } else { vec![n, c_out, ho, wo] };
        self.push(
            Tensor::new(shape, out)?,
            Op::ConvTranspose2d { x, k, stride, pad },
            "conv_transpose2d",
        )
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        match kind {
            Activation::Relu => self.relu(x),
            Activation::Sigmoid => self.sigmoid(x),
        }
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(T::zero()));
        self.push(out, Op::Relu(x), "relu")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x), "sigmoid")
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.exp());
        self.push(out, Op::Exp(x), "exp")
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.abs());
        self.push(out, Op::Abs(x), "abs")
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v * v);
        self.push(out, Op::Square(x), "square")
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Result<Var> {
        if lo > hi {
            return Err(contract_err!("clamp bounds inverted"));
        }
        let out = self.value(x).map(|v| v.max(lo).min(hi));
        self.push(out, Op::Clamp(x, lo, hi), "clamp")
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        require_same(name, self.shape(a), self.shape(b))?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "add", |x, y| x + y)?;
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "sub", |x, y| x - y)?;
        self.push(out, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "mul", |x, y| x * y)?;
        self.push(out, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c), "scale")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        self.push(out, Op::Reshape(x), "reshape")
    }

    /// Sum of all entries, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x), "sum")
    }

    /// Mean of all entries, shape `[1]`.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let out = Tensor::scalar(v.sum() / T::from_usize(v.numel()).unwrap());
        self.push(out, Op::Mean(x), "mean")
    }

    /// Sums everything but the leading axis: `[n, ...] → [n]`.
    pub fn sum_per_row(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let n = v.shape()[0];
        let inner = v.numel() / n;
        let data = v.data().chunks(inner).map(|c| c.iter().copied().sum()).collect();
        self.push(Tensor::new(vec![n], data)?, Op::SumPerRow(x), "sum_per_row")
    }

    /// Gathers leading-axis rows, e.g. the unperturbed decodes of a
    /// finite-difference batch.
    pub fn take_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let v = self.value(x);
        let n = v.shape()[0];
        if rows.is_empty() {
            return Err(dim_err!("take_rows: no rows requested"));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(dim_err!("take_rows: row {bad} out of {n}"));
        }
        let inner = v.numel() / n;
        let mut data = Vec::with_capacity(rows.len() * inner);
        for &r in rows {
            data.extend_from_slice(&v.data()[r * inner..(r + 1) * inner]);
        }
        let mut shape = v.shape().to_vec();
        shape[0] = rows.len();
        self.push(Tensor::new(shape, data)?, Op::TakeRows(x, rows.to_vec()), "take_rows")
    }

    /// Expands latents `z[n, l]` into `[n·(l+1), l]`: for each sample the row
    /// `z` itself followed by `z + eps·e_i` for `i = 0..l`.
    pub fn fd_expand(&mut self, z: Var, eps: T) -> Result<Var> {
        let sz = self.shape(z);
        if sz.len() != 2 {
            return Err(dim_err!("fd_expand: latents must be [n, l], got {sz:?}"));
        }
        if eps <= T::zero() {
            return Err(contract_err!("finite-difference step must be positive"));
        }
        let (n, l) = (sz[0], sz[1]);
        let src = self.value(z).data();
        let mut data = Vec::with_capacity(n * (l + 1) * l);
        for row in src.chunks(l) {
            data.extend_from_slice(row);
            for i in 0..l {
                let start = data.len();
                data.extend_from_slice(row);
                data[start + i] += eps;
            }
        }
        self.push(Tensor::new(vec![n * (l + 1), l], data)?, Op::FdExpand { z }, "fd_expand")
    }

    /// Forward differences over a decoded [`Tape::fd_expand`] batch:
    /// `g[n·(l+1), ...]` → `[n, l, p]` with entry `(g(z+eps·e_i) − g(z))/eps`.
    pub fn fd_diff(&mut self, g: Var, latent_dim: usize, eps: T) -> Result<Var> {
        let sg = self.shape(g);
        let rows = sg[0];
        let group = latent_dim + 1;
        if latent_dim == 0 || rows % group != 0 {
            return Err(dim_err!("fd_diff: {rows} rows is not a multiple of {group}"));
        }
        let n = rows / group;
        let p = self.value(g).numel() / rows;
        let src = self.value(g).data();
        let inv = T::one() / eps;
        let mut data = Vec::with_capacity(n * latent_dim * p);
        for s in 0..n {
            let base = &src[s * group * p..][..p];
            for i in 1..group {
                let moved = &src[(s * group + i) * p..][..p];
                data.extend(moved.iter().zip(base).map(|(&a, &b)| (a - b) * inv));
            }
        }
        self.push(Tensor::new(vec![n, latent_dim, p], data)?, Op::FdDiff { g, eps }, "fd_diff")
    }

    /// Per-sample Bernoulli log-likelihood `Σ x·ln m + (1−x)·ln(1−m)` with
    /// `m` clamped to `[1e-6, 1−1e-6]`. Shapes `[n, ...]` → `[n]`.
    pub fn bernoulli_log_likelihood(&mut self, mean: Var, target: Var) -> Result<Var> {
        require_same("bernoulli_log_likelihood", self.shape(mean), self.shape(target))?;
        let m = self.value(mean);
        let x = self.value(target);
        let n = m.shape()[0];
        let inner = m.numel() / n;
        let lo = T::from_f64_lossy(BERNOULLI_CLAMP);
        let hi = T::one() - lo;
        let data = m
            .data()
            .chunks(inner)
            .zip(x.data().chunks(inner))
            .map(|(mr, xr)| {
                mr.iter()
                    .zip(xr)
                    .map(|(&mv, &xv)| {
                        let mv = mv.max(lo).min(hi);
                        xv * mv.ln() + (T::one() - xv) * (T::one() - mv).ln()
                    })
                    .sum()
            })
            .collect();
        self.push(
            Tensor::new(vec![n], data)?,
            Op::BernoulliLogLik { mean, target },
            "bernoulli_log_likelihood",
        )
    }

    /// Per-sample `KL(N(mu, exp(log_var)) ‖ N(0, I))`, shapes `[n, l]` → `[n]`.
    pub fn kl_diag_gaussian(&mut self, mu: Var, log_var: Var) -> Result<Var> {
        require_same("kl_diag_gaussian", self.shape(mu), self.shape(log_var))?;
        let m = self.value(mu);
        let lv = self.value(log_var);
        let n = m.shape()[0];
        let l = m.numel() / n;
        let half = T::from_f64_lossy(0.5);
        let data = m
            .data()
            .chunks(l)
            .zip(lv.data().chunks(l))
            .map(|(mr, lr)| {
                half * mr
                    .iter()
                    .zip(lr)
                    .map(|(&u, &s)| u * u + s.exp() - T::one() - s)
                    .sum::<T>()
            })
            .collect();
        self.push(Tensor::new(vec![n], data)?, Op::KlDiag { mu, log_var }, "kl_diag_gaussian")
    }

    /// Reverse sweep from a single-element `root`. Consumes the tape.
    pub fn backward(self, root: Var) -> Result<Gradients<T>> {
        if !self.value(root).is_scalar() {
            return Err(contract_err!(
                "backward root must be scalar, got shape {:?}",
                self.shape(root)
            ));
        }
        let shapes: Vec<Vec<usize>> = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::full(&shapes[root.0], T::one()));
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let out = &node.value;
        let mut acc = |v: Var, t: Tensor<T>| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        let like = |v: Var, data: Vec<T>| Tensor::new(self.shape(v).to_vec(), data);
        match &node.op {
            Op::Constant | Op::Param => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                let mut da = vec![T::zero(); m * k];
                T::gemm(m, n, k, T::one(), g.data(), n, 1, vb.data(), 1, n, T::zero(), &mut da, k, 1);
                let mut db = vec![T::zero(); k * n];
                T::gemm(k, m, n, T::one(), va.data(), 1, k, g.data(), n, 1, T::zero(), &mut db, n, 1);
                acc(*a, like(*a, da)?);
                acc(*b, like(*b, db)?);
            }
            Op::AddRowBias(x, b) => {
                let n = self.shape(*b)[0];
                let mut db = vec![T::zero(); n];
                for row in g.data().chunks(n) {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                acc(*x, g.clone());
                acc(*b, like(*b, db)?);
            }
            Op::AddChannelBias(x, b) => {
                let c = self.shape(*b)[0];
                let inner: usize = self.shape(*x)[2..].iter().product();
                let mut db = vec![T::zero(); c];
                for (i, chunk) in g.data().chunks(inner).enumerate() {
                    db[i % c] += chunk.iter().copied().sum();
                }
                acc(*x, g.clone());
                acc(*b, like(*b, db)?);
            }
            Op::Conv2d { x, k, stride, pad } => {
                let [n, c, h, w] = Self::as_batched(self.shape(*x)).unwrap();
                let sk = self.shape(*k);
                let (c_out, kh, kw) = (sk[0], sk[2], sk[3]);
                let ho = conv_out_extent(h, kh, *stride, *pad)?;
                let wo = conv_out_extent(w, kw, *stride, *pad)?;
                let p = Patches {
                    batch: n,
                    channels: c,
                    height: h,
                    width: w,
                    kh,
                    kw,
                    stride: *stride,
                    pad: *pad,
                    grid_h: ho,
                    grid_w: wo,
                };
                let (rows, ncols) = (p.rows(), p.cols());
                let dout = batch_major_to_channel_major(g.data(), n, c_out, ho * wo);
                let cols = im2col(self.value(*x).data(), &p);
                let mut dk = vec![T::zero(); c_out * rows];
                T::gemm(c_out, ncols, rows, T::one(), &dout, ncols, 1, &cols, 1, ncols, T::zero(), &mut dk, rows, 1);
                let mut dcols = vec![T::zero(); rows * ncols];
                T::gemm(
                    rows,
                    c_out,
                    ncols,
                    T::one(),
                    self.value(*k).data(),
                    1,
                    rows,
                    &dout,
                    ncols,
                    1,
                    T::zero(),
                    &mut dcols,
                    ncols,
                    1,
                );
                acc(*x, like(*x, col2im(&dcols, &p))?);
                acc(*k, like(*k, dk)?);
            }
            Op::ConvTranspose2d { x, k, stride, pad } => {
                let [n, c_in, h, w] = Self::as_batched(self.shape(*x)).unwrap();
                let sk = self.shape(*k);
                let (c_out, kh, kw) = (sk[1], sk[2], sk[3]);
                let [_, _, ho, wo] = Self::as_batched(out.shape()).unwrap();
                let p = Patches {
                    batch: n,
                    channels: c_out,
                    height: ho,
                    width: wo,
                    kh,
                    kw,
                    stride: *stride,
                    pad: *pad,
                    grid_h: h,
                    grid_w: w,
                };
                let (rows, ncols) = (p.rows(), p.cols());
                let dcols = im2col(g.data(), &p);
                let xm = batch_major_to_channel_major(self.value(*x).data(), n, c_in, h * w);
                let mut dx = vec![T::zero(); c_in * ncols];
                T::gemm(
                    c_in,
                    rows,
                    ncols,
                    T::one(),
                    self.value(*k).data(),
                    rows,
                    1,
                    &dcols,
                    ncols,
                    1,
                    T::zero(),
                    &mut dx,
                    ncols,
                    1,
                );
                let mut dk = vec![T::zero(); c_in * rows];
                T::gemm(c_in, ncols, rows, T::one(), &xm, ncols, 1, &dcols, 1, ncols, T::zero(), &mut dk, rows, 1);
                acc(*x, like(*x, channel_major_to_batch_major(&dx, n, c_in, h * w))?);
                acc(*k, like(*k, dk)?);
            }
            Op::Relu(x) => {
                let data = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(&gv, &o)| if o > T::zero() { gv } else { T::zero() })
                    .collect();
                acc(*x, like(*x, data)?);
            }
            Op::Sigmoid(x) => {
                let data =
                    g.data().iter().zip(out.data()).map(|(&gv, &s)| gv * s * (T::one() - s)).collect();
                acc(*x, like(*x, data)?);
            }
            Op::Exp(x) => {
                let data = g.data().iter().zip(out.data()).map(|(&gv, &e)| gv * e).collect();
                acc(*x, like(*x, data)?);
            }
            Op::Abs(x) => {
                let data = g
                    .data()
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(&gv, &v)| {
                        if v > T::zero() {
                            gv
                        } else if v < T::zero() {
                            -gv
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                acc(*x, like(*x, data)?);
            }
            Op::Square(x) => {
                let two = T::one() + T::one();
                let data =
                    g.data().iter().zip(self.value(*x).data()).map(|(&gv, &v)| two * v * gv).collect();
                acc(*x, like(*x, data)?);
            }
            Op::Clamp(x, lo, hi) => {
                let data = g
                    .data()
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(&gv, &v)| if v < *lo || v > *hi { T::zero() } else { gv })
                    .collect();
                acc(*x, like(*x, data)?);
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let da = g.data().iter().zip(vb).map(|(&gv, &y)| gv * y).collect();
                let db = g.data().iter().zip(va).map(|(&gv, &x)| gv * x).collect();
                acc(*a, like(*a, da)?);
                acc(*b, like(*b, db)?);
            }
            Op::Scale(x, c) => acc(*x, g.map(|v| v * *c)),
            Op::Reshape(x) => acc(*x, like(*x, g.data().to_vec())?),
            Op::Sum(x) => acc(*x, Tensor::full(self.shape(*x), g.item())),
            Op::Mean(x) => {
                let numel = T::from_usize(self.value(*x).numel()).unwrap();
                acc(*x, Tensor::full(self.shape(*x), g.item() / numel));
            }
            Op::SumPerRow(x) => {
                let v = self.value(*x);
                let inner = v.numel() / v.shape()[0];
                let data = g.data().iter().flat_map(|&gv| std::iter::repeat(gv).take(inner)).collect();
                acc(*x, like(*x, data)?);
            }
            Op::TakeRows(x, rows) => {
                let v = self.value(*x);
                let inner = v.numel() / v.shape()[0];
                let mut data = vec![T::zero(); v.numel()];
                for (i, &r) in rows.iter().enumerate() {
                    for (d, &gv) in data[r * inner..(r + 1) * inner].iter_mut().zip(&g.data()[i * inner..]) {
                        *d += gv;
                    }
                }
                acc(*x, like(*x, data)?);
            }
            Op::FdExpand { z } => {
                let l = self.shape(*z)[1];
                let mut data = vec![T::zero(); self.value(*z).numel()];
                for (s, block) in g.data().chunks(l * (l + 1)).enumerate() {
                    let dst = &mut data[s * l..(s + 1) * l];
                    for row in block.chunks(l) {
                        for (d, &gv) in dst.iter_mut().zip(row) {
                            *d += gv;
                        }
                    }
                }
                acc(*z, like(*z, data)?);
            }
            Op::FdDiff { g: src, eps } => {
                let [n, l, p] = [out.shape()[0], out.shape()[1], out.shape()[2]];
                let inv = T::one() / *eps;
                let mut data = vec![T::zero(); self.value(*src).numel()];
                for s in 0..n {
                    for i in 0..l {
                        let gi = &g.data()[(s * l + i) * p..][..p];
                        let moved = (s * (l + 1) + i + 1) * p;
                        for (j, &gv) in gi.iter().enumerate() {
                            data[moved + j] += gv * inv;
                        }
                        let base = s * (l + 1) * p;
                        for (j, &gv) in gi.iter().enumerate() {
                            data[base + j] -= gv * inv;
                        }
                    }
                }
                acc(*src, like(*src, data)?);
            }
            Op::BernoulliLogLik { mean, target } => {
                let (m, x) = (self.value(*mean), self.value(*target));
                let inner = m.numel() / m.shape()[0];
                let lo = T::from_f64_lossy(BERNOULLI_CLAMP);
                let hi = T::one() - lo;
                let mut dm = Vec::with_capacity(m.numel());
                let mut dx = Vec::with_capacity(m.numel());
                for (i, (&mv, &xv)) in m.data().iter().zip(x.data()).enumerate() {
                    let gv = g.data()[i / inner];
                    let mc = mv.max(lo).min(hi);
                    let active = mv >= lo && mv <= hi;
                    dm.push(if active { gv * (xv / mc - (T::one() - xv) / (T::one() - mc)) } else { T::zero() });
                    dx.push(gv * (mc.ln() - (T::one() - mc).ln()));
                }
                acc(*mean, like(*mean, dm)?);
                acc(*target, like(*target, dx)?);
            }
            Op::KlDiag { mu, log_var } => {
                let (m, lv) = (self.value(*mu), self.value(*log_var));
                let l = m.numel() / m.shape()[0];
                let half = T::from_f64_lossy(0.5);
                let dmu = m.data().iter().enumerate().map(|(i, &u)| g.data()[i / l] * u).collect();
                let dlv = lv
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &s)| g.data()[i / l] * half * (s.exp() - T::one()))
                    .collect();
                acc(*mu, like(*mu, dmu)?);
                acc(*log_var, like(*log_var, dlv)?);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_arithmetic() {
        let mut tape = Tape::<f64>::new();
        let i2 = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0])).unwrap();
        let m = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let p = tape.matmul(i2, m).unwrap();
        assert_eq!(tape.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);
        let a = tape.constant(t(&[1, 2], &[1.0, 2.0])).unwrap();
        let b = tape.constant(t(&[2, 1], &[3.0, 4.0])).unwrap();
        let ab = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(ab).data(), &[11.0]);
        assert!(matches!(tape.matmul(a, a), Err(crate::Error::Dimension(_))));
    }

    #[test]
    fn activations_match_closed_forms() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[3], &[-1.0, 0.0, 2.0])).unwrap();
        let r = tape.relu(x).unwrap();
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);
        let z = tape.param(t(&[1], &[0.0])).unwrap();
        let s = tape.sigmoid(z).unwrap();
        assert_eq!(tape.value(s).item(), 0.5);
        let root = tape.sum(s).unwrap();
        let grads = tape.backward(root).unwrap();
        assert_eq!(grads.get(z).unwrap().item(), 0.25);
    }

    #[test]
    fn sigmoid_stays_inside_open_interval() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::new(vec![4], vec![-1e3, -30.0, 30.0, 1e3]).unwrap()).unwrap();
        let s = tape.sigmoid(x).unwrap();
        // f32 saturates at the extremes, so only finiteness is required there
        assert!(tape.value(s).data().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        let mid = Tensor::new(vec![2], vec![-10.0f32, 10.0]).unwrap();
        let m = tape.constant(mid).unwrap();
        let sm = tape.sigmoid(m).unwrap();
        assert!(tape.value(sm).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn backward_sum_of_squares() {
        let mut tape = Tape::<f64>::new();
        let w = tape.param(t(&[3], &[1.0, 2.0, 3.0])).unwrap();
        let unused = tape.param(t(&[2], &[5.0, 6.0])).unwrap();
        let sq = tape.mul(w, w).unwrap();
        let root = tape.sum(sq).unwrap();
        let grads = tape.backward(root).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[2.0, 4.0, 6.0]);
        assert!(grads.get(unused).is_none());
        assert_eq!(grads.get_or_zeros(unused).data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut tape = Tape::<f64>::new();
        let w = tape.param(t(&[3], &[1.0, 2.0, 3.0])).unwrap();
        assert!(matches!(tape.backward(w), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn conv_of_ones_counts_in_bounds_taps() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(&[1, 4, 4], 1.0)).unwrap();
        let k = tape.constant(Tensor::full(&[1, 1, 4, 4], 1.0)).unwrap();
        let y = tape.conv2d(x, k, 2, 1).unwrap();
        assert_eq!(tape.shape(y), &[1, 2, 2]);
        assert_eq!(tape.value(y).data(), &[9.0, 9.0, 9.0, 9.0]);
    }

    #[test]
    fn conv_transpose_one_by_one_kernel_scales() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1, 2, 2], &[1.0, -2.0, 3.0, 0.5])).unwrap();
        let k = tape.constant(t(&[1, 1, 1, 1], &[2.5])).unwrap();
        let y = tape.conv_transpose2d(x, k, 1, 0, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[2.5, -5.0, 7.5, 1.25]);
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::new(vec![1], vec![100.0]).unwrap()).unwrap();
        assert!(matches!(tape.exp(x), Err(crate::Error::NonFinite("exp"))));
        assert!(tape.constant(Tensor::new(vec![1], vec![f32::NAN]).unwrap()).is_err());
    }

    #[test]
    fn fd_expand_and_diff_recover_linear_map() {
        let mut tape = Tape::<f64>::new();
        let z = tape.constant(t(&[1, 2], &[0.3, -0.7])).unwrap();
        let zz = tape.fd_expand(z, 0.5).unwrap();
        for (a, b) in tape.value(zz).data().iter().zip([0.3, -0.7, 0.8, -0.7, 0.3, -0.2]) {
            assert!((a - b).abs() < 1e-15);
        }
        let w = tape.constant(t(&[2, 3], &[1.0, 2.0, 3.0, -1.0, 0.0, 4.0])).unwrap();
        let g = tape.matmul(zz, w).unwrap();
        let j = tape.fd_diff(g, 2, 0.5).unwrap();
        assert_eq!(tape.shape(j), &[1, 2, 3]);
        for (a, b) in tape.value(j).data().iter().zip([1.0, 2.0, 3.0, -1.0, 0.0, 4.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
