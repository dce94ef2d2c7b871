//! Differentiable layers with explicit forward/backward passes.
//!
//! Feature maps use a channel-major layout `[C, N, L]` (channel, batch,
//! length) so a whole batch convolves with one GEMM and batch-norm statistics
//! are contiguous per channel. Dense layers use `[N, F]`.

use rand::Rng;

use crate::error::{NnError, Result};
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::{Buffer, Module, Param, Tensor};

fn kaiming_uniform<S: Scalar, R: Rng>(rng: &mut R, n: usize, fan_in: usize) -> Vec<S> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..n).map(|_| S::from_f64(rng.gen_range(-bound..bound))).collect()
}

/// 1-D convolution over `[C, N, L]` with zero padding and optional channel groups.
#[derive(Debug, Clone)]
pub struct Conv1d<S> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
    pub weight: Param<S>,
    pub bias: Option<Param<S>>,
    cache: Option<ConvCache<S>>,
}

#[derive(Debug, Clone)]
struct ConvCache<S> {
    col: Vec<S>,
    n: usize,
    len_in: usize,
    len_out: usize,
}

impl<S: Scalar> Conv1d<S> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        groups: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if groups == 0 || in_ch % groups != 0 || out_ch % groups != 0 || kernel == 0 || stride == 0 {
            return Err(NnError::Config(format!(
                "conv {name}: in {in_ch}, out {out_ch}, kernel {kernel}, stride {stride}, groups {groups}"
            )));
        }
        let fan_in = in_ch / groups * kernel;
        let w = kaiming_uniform(rng, out_ch * fan_in, fan_in);
        let weight = Param::new(format!("{name}.weight"), Tensor::new(vec![out_ch, in_ch / groups, kernel], w)?);
        let bias = bias.then(|| Param::new(format!("{name}.bias"), Tensor::zeros(&[out_ch])));
        Ok(Self { in_ch, out_ch, kernel, stride, pad, groups, weight, bias, cache: None })
    }

    pub fn out_len(&self, len_in: usize) -> usize {
        (len_in + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn forward(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let &[c, n, len_in] = x.shape() else {
            return Err(NnError::Shape {
                context: "conv1d",
                expected: vec![self.in_ch, 0, 0],
                got: x.shape().to_vec(),
            });
        };
        if c != self.in_ch || len_in + 2 * self.pad < self.kernel {
            return Err(NnError::Shape {
                context: "conv1d",
                expected: vec![self.in_ch, n, len_in],
                got: x.shape().to_vec(),
            });
        }
        let len_out = self.out_len(len_in);
        let cols = n * len_out;
        let ck = c * self.kernel;
        // im2col: row (ci*k + t), column (b*len_out + j)
        let mut col = vec![S::ZERO; ck * cols];
        let xd = x.data();
        for ci in 0..c {
            for t in 0..self.kernel {
                let row = &mut col[(ci * self.kernel + t) * cols..(ci * self.kernel + t + 1) * cols];
                for b in 0..n {
                    let src = &xd[(ci * n + b) * len_in..(ci * n + b + 1) * len_in];
                    let dst = &mut row[b * len_out..(b + 1) * len_out];
                    for (j, d) in dst.iter_mut().enumerate() {
                        let pos = (j * self.stride + t) as isize - self.pad as isize;
                        if pos >= 0 && (pos as usize) < len_in {
                            *d = src[pos as usize];
                        }
                    }
                }
            }
        }
        let mut out = vec![S::ZERO; self.out_ch * cols];
        let og = self.out_ch / self.groups;
        let ckg = ck / self.groups;
        let w = self.weight.value.data();
        for g in 0..self.groups {
            gemm(
                S::ONE,
                MatRef::rm(&w[g * og * ckg..(g + 1) * og * ckg], og, ckg),
                MatRef::rm(&col[g * ckg * cols..(g + 1) * ckg * cols], ckg, cols),
                S::ZERO,
                &mut out[g * og * cols..(g + 1) * og * cols],
            );
        }
        if let Some(bias) = &self.bias {
            for (o, row) in out.chunks_mut(cols).enumerate() {
                let b = bias.value.data()[o];
                row.iter_mut().for_each(|v| *v += b);
            }
        }
        self.cache = Some(ConvCache { col, n, len_in, len_out });
        Tensor::new(vec![self.out_ch, n, len_out], out)
    }

    pub fn backward(&mut self, dy: &Tensor<S>) -> Result<Tensor<S>> {
        let cache = self.cache.as_ref().ok_or(NnError::NoForwardCache("conv1d"))?;
        let (n, len_in, len_out) = (cache.n, cache.len_in, cache.len_out);
        dy.expect_shape("conv1d backward", &[self.out_ch, n, len_out])?;
        let cols = n * len_out;
        let ck = self.in_ch * self.kernel;
        let og = self.out_ch / self.groups;
        let ckg = ck / self.groups;
        let dyd = dy.data();
        let w = self.weight.value.data();
        let mut dcol = vec![S::ZERO; ck * cols];
        for g in 0..self.groups {
            let dy_g = &dyd[g * og * cols..(g + 1) * og * cols];
            // dW += dY · colᵀ
            gemm(
                S::ONE,
                MatRef::rm(dy_g, og, cols),
                MatRef::rm_t(&cache.col[g * ckg * cols..(g + 1) * ckg * cols], ckg, cols),
                S::ONE,
                &mut self.weight.grad[g * og * ckg..(g + 1) * og * ckg],
            );
            // dcol = Wᵀ · dY
            gemm(
                S::ONE,
                MatRef::rm_t(&w[g * og * ckg..(g + 1) * og * ckg], og, ckg),
                MatRef::rm(dy_g, og, cols),
                S::ZERO,
                &mut dcol[g * ckg * cols..(g + 1) * ckg * cols],
            );
        }
        if let Some(bias) = &mut self.bias {
            for (o, row) in dyd.chunks(cols).enumerate() {
                bias.grad[o] += row.iter().copied().sum();
            }
        }
        let mut dx = vec![S::ZERO; self.in_ch * n * len_in];
        for ci in 0..self.in_ch {
            for t in 0..self.kernel {
                let row = &dcol[(ci * self.kernel + t) * cols..(ci * self.kernel + t + 1) * cols];
                for b in 0..n {
                    let dst = &mut dx[(ci * n + b) * len_in..(ci * n + b + 1) * len_in];
                    let src = &row[b * len_out..(b + 1) * len_out];
                    for (j, s) in src.iter().enumerate() {
                        let pos = (j * self.stride + t) as isize - self.pad as isize;
                        if pos >= 0 && (pos as usize) < len_in {
                            dst[pos as usize] += *s;
                        }
                    }
                }
            }
        }
        Tensor::new(vec![self.in_ch, n, len_in], dx)
    }
}

impl<S: Scalar> Module<S> for Conv1d<S> {
    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param<S>>) {
        out.push(&mut self.weight);
        if let Some(b) = &mut self.bias {
            out.push(b);
        }
    }
}

/// Batch normalization over `[C, N, L]`, statistics per channel.
///
/// Training mode normalizes with batch statistics and updates the running
/// estimates; evaluation mode uses the running estimates only.
#[derive(Debug, Clone)]
pub struct BatchNorm<S> {
    pub channels: usize,
    pub gamma: Param<S>,
    pub beta: Param<S>,
    pub running_mean: Buffer<S>,
    pub running_var: Buffer<S>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache<S>>,
}

#[derive(Debug, Clone)]
struct BnCache<S> {
    xhat: Vec<S>,
    inv_std: Vec<S>,
    shape: Vec<usize>,
    train: bool,
}

impl<S: Scalar> BatchNorm<S> {
    pub fn new(name: &str, channels: usize) -> Self {
        let ones = Tensor::new(vec![channels], vec![S::ONE; channels]).expect("shape");
        Self {
            channels,
            gamma: Param::new(format!("{name}.gamma"), ones.clone()),
            beta: Param::new(format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: Buffer { name: format!("{name}.running_mean"), value: Tensor::zeros(&[channels]) },
            running_var: Buffer { name: format!("{name}.running_var"), value: ones },
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<S>, train: bool) -> Result<Tensor<S>> {
        if x.shape().len() != 3 || x.shape()[0] != self.channels {
            return Err(NnError::Shape {
                context: "batchnorm",
                expected: vec![self.channels, 0, 0],
                got: x.shape().to_vec(),
            });
        }
        let m = x.shape()[1] * x.shape()[2];
        let mut xhat = vec![S::ZERO; x.len()];
        let mut out = vec![S::ZERO; x.len()];
        let mut inv_std = vec![S::ZERO; self.channels];
        let eps = S::from_f64(self.eps);
        for c in 0..self.channels {
            let xs = &x.data()[c * m..(c + 1) * m];
            let (mean, var) = if train {
                let mean = xs.iter().copied().sum::<S>() / S::from_f64(m as f64);
                let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / S::from_f64(m as f64);
                let mom = S::from_f64(self.momentum);
                let unbiased = if m > 1 { var * S::from_f64(m as f64 / (m - 1) as f64) } else { var };
                let rm = &mut self.running_mean.value.data_mut()[c];
                *rm = (S::ONE - mom) * *rm + mom * mean;
                let rv = &mut self.running_var.value.data_mut()[c];
                *rv = (S::ONE - mom) * *rv + mom * unbiased;
                (mean, var)
            } else {
                (self.running_mean.value.data()[c], self.running_var.value.data()[c])
            };
            let is = S::ONE / (var + eps).sqrt();
            inv_std[c] = is;
            let g = self.gamma.value.data()[c];
            let b = self.beta.value.data()[c];
            for i in 0..m {
                let h = (xs[i] - mean) * is;
                xhat[c * m + i] = h;
                out[c * m + i] = g * h + b;
            }
        }
        self.cache = Some(BnCache { xhat, inv_std, shape: x.shape().to_vec(), train });
        Tensor::new(x.shape().to_vec(), out)
    }

    pub fn backward(&mut self, dy: &Tensor<S>) -> Result<Tensor<S>> {
        let cache = self.cache.as_ref().ok_or(NnError::NoForwardCache("batchnorm"))?;
        dy.expect_shape("batchnorm backward", &cache.shape)?;
        let m = cache.shape[1] * cache.shape[2];
        let mf = S::from_f64(m as f64);
        let mut dx = vec![S::ZERO; dy.len()];
        for c in 0..self.channels {
            let dys = &dy.data()[c * m..(c + 1) * m];
            let xh = &cache.xhat[c * m..(c + 1) * m];
            let sum_dy: S = dys.iter().copied().sum();
            let sum_dy_xh: S = dys.iter().zip(xh).map(|(&d, &h)| d * h).sum();
            self.gamma.grad[c] += sum_dy_xh;
            self.beta.grad[c] += sum_dy;
            let g = self.gamma.value.data()[c];
            let is = cache.inv_std[c];
            let dxs = &mut dx[c * m..(c + 1) * m];
            if cache.train {
                for i in 0..m {
                    dxs[i] = g * is / mf * (mf * dys[i] - sum_dy - xh[i] * sum_dy_xh);
                }
            } else {
                for i in 0..m {
                    dxs[i] = g * is * dys[i];
                }
            }
        }
        Tensor::new(cache.shape.clone(), dx)
    }
}

impl<S: Scalar> Module<S> for BatchNorm<S> {
    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param<S>>) {
        out.push(&mut self.gamma);
        out.push(&mut self.beta);
    }
    fn buffers_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Buffer<S>>) {
        out.push(&mut self.running_mean);
        out.push(&mut self.running_var);
    }
}

/// Exact (erf-based) GELU.
#[derive(Debug, Clone, Default)]
pub struct Gelu<S> {
    input: Option<Tensor<S>>,
}

impl<S: Scalar> Gelu<S> {
    pub fn new() -> Self {
        Self { input: None }
    }

    pub fn apply(v: S) -> S {
        let half = S::from_f64(0.5);
        half * v * (S::ONE + (v * S::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf())
    }

    fn derivative(v: S) -> S {
        let half = S::from_f64(0.5);
        let cdf = half * (S::ONE + (v * S::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf());
        let pdf = (-(v * v) * half).exp() * S::from_f64(1.0 / (2.0 * std::f64::consts::PI).sqrt());
        cdf + v * pdf
    }

    pub fn forward(&mut self, x: Tensor<S>) -> Result<Tensor<S>> {
        let out: Vec<S> = x.data().iter().map(|&v| Self::apply(v)).collect();
        let shape = x.shape().to_vec();
        self.input = Some(x);
        Tensor::new(shape, out)
    }

    pub fn backward(&mut self, dy: &Tensor<S>) -> Result<Tensor<S>> {
        let x = self.input.as_ref().ok_or(NnError::NoForwardCache("gelu"))?;
        dy.expect_shape("gelu backward", x.shape())?;
        let dx = x.data().iter().zip(dy.data()).map(|(&v, &d)| d * Self::derivative(v)).collect();
        Tensor::new(x.shape().to_vec(), dx)
    }
}

/// Fully connected layer on `[N, in]`.
#[derive(Debug, Clone)]
pub struct Linear<S> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Param<S>,
    pub bias: Option<Param<S>>,
    input: Option<Tensor<S>>,
}

impl<S: Scalar> Linear<S> {
    pub fn new<R: Rng>(name: &str, in_dim: usize, out_dim: usize, bias: bool, rng: &mut R) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(NnError::Config(format!("linear {name}: {in_dim} -> {out_dim}")));
        }
        let w = kaiming_uniform(rng, in_dim * out_dim, in_dim);
        Ok(Self {
            in_dim,
            out_dim,
            weight: Param::new(format!("{name}.weight"), Tensor::new(vec![out_dim, in_dim], w)?),
            bias: bias.then(|| Param::new(format!("{name}.bias"), Tensor::zeros(&[out_dim]))),
            input: None,
        })
    }

    pub fn forward(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        if x.shape().len() != 2 || x.shape()[1] != self.in_dim {
            return Err(NnError::Shape { context: "linear", expected: vec![0, self.in_dim], got: x.shape().to_vec() });
        }
        let n = x.shape()[0];
        let mut out = vec![S::ZERO; n * self.out_dim];
        gemm(
            S::ONE,
            MatRef::rm(x.data(), n, self.in_dim),
            MatRef::rm_t(self.weight.value.data(), self.out_dim, self.in_dim),
            S::ZERO,
            &mut out,
        );
        if let Some(b) = &self.bias {
            for row in out.chunks_mut(self.out_dim) {
                row.iter_mut().zip(b.value.data()).for_each(|(v, &bb)| *v += bb);
            }
        }
        self.input = Some(x.clone());
        Tensor::new(vec![n, self.out_dim], out)
    }

    pub fn backward(&mut self, dy: &Tensor<S>) -> Result<Tensor<S>> {
        let x = self.input.as_ref().ok_or(NnError::NoForwardCache("linear"))?;
        let n = x.shape()[0];
        dy.expect_shape("linear backward", &[n, self.out_dim])?;
        gemm(
            S::ONE,
            MatRef::rm_t(dy.data(), n, self.out_dim),
            MatRef::rm(x.data(), n, self.in_dim),
            S::ONE,
            &mut self.weight.grad,
        );
        if let Some(b) = &mut self.bias {
            for row in dy.data().chunks(self.out_dim) {
                b.grad.iter_mut().zip(row).for_each(|(g, &d)| *g += d);
            }
        }
        let mut dx = vec![S::ZERO; n * self.in_dim];
        gemm(
            S::ONE,
            MatRef::rm(dy.data(), n, self.out_dim),
            MatRef::rm(self.weight.value.data(), self.out_dim, self.in_dim),
            S::ZERO,
            &mut dx,
        );
        Tensor::new(vec![n, self.in_dim], dx)
    }
}

impl<S: Scalar> Module<S> for Linear<S> {
    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param<S>>) {
        out.push(&mut self.weight);
        if let Some(b) = &mut self.bias {
            out.push(b);
        }
    }
}

/// Mean over the length axis: `[C, N, L]` to `[N, C]`.
pub fn global_avg_pool<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let &[c, n, l] = x.shape() else {
        return Err(NnError::Shape { context: "global_avg_pool", expected: vec![0, 0, 0], got: x.shape().to_vec() });
    };
    let inv = S::ONE / S::from_f64(l as f64);
    let mut out = vec![S::ZERO; n * c];
    for ci in 0..c {
        for b in 0..n {
            let s: S = x.data()[(ci * n + b) * l..(ci * n + b + 1) * l].iter().copied().sum();
            out[b * c + ci] = s * inv;
        }
    }
    Tensor::new(vec![n, c], out)
}

pub fn global_avg_pool_backward<S: Scalar>(dy: &Tensor<S>, len: usize) -> Result<Tensor<S>> {
    let &[n, c] = dy.shape() else {
        return Err(NnError::Shape {
            context: "global_avg_pool backward",
            expected: vec![0, 0],
            got: dy.shape().to_vec(),
        });
    };
    let inv = S::ONE / S::from_f64(len as f64);
    let mut dx = vec![S::ZERO; c * n * len];
    for ci in 0..c {
        for b in 0..n {
            let g = dy.data()[b * c + ci] * inv;
            dx[(ci * n + b) * len..(ci * n + b + 1) * len].iter_mut().for_each(|v| *v = g);
        }
    }
    Tensor::new(vec![c, n, len], dx)
}

/// Row-wise L2 normalization with a guard on the norm.
///
/// Returns the normalized rows and whether any row hit the guard.
#[derive(Debug, Clone, Default)]
pub struct L2Normalize<S> {
    cache: Option<(Tensor<S>, Vec<S>)>,
}

pub const NORM_EPS: f64 = 1e-12;

impl<S: Scalar> L2Normalize<S> {
    pub fn new() -> Self {
        Self { cache: None }
    }

    pub fn forward(&mut self, x: &Tensor<S>) -> Result<(Tensor<S>, bool)> {
        let &[n, d] = x.shape() else {
            return Err(NnError::Shape { context: "l2_normalize", expected: vec![0, 0], got: x.shape().to_vec() });
        };
        let mut out = x.data().to_vec();
        let mut norms = Vec::with_capacity(n);
        let mut guarded = false;
        for row in out.chunks_mut(d) {
            let raw = row.iter().map(|&v| v * v).sum::<S>().sqrt();
            let norm = if raw.to_f64() < NORM_EPS {
                guarded = true;
                S::from_f64(NORM_EPS)
            } else {
                raw
            };
            row.iter_mut().for_each(|v| *v /= norm);
            norms.push(norm);
        }
        let z = Tensor::new(vec![n, d], out)?;
        self.cache = Some((z.clone(), norms));
        Ok((z, guarded))
    }

    pub fn backward(&mut self, dz: &Tensor<S>) -> Result<Tensor<S>> {
        let (z, norms) = self.cache.as_ref().ok_or(NnError::NoForwardCache("l2_normalize"))?;
        dz.expect_shape("l2_normalize backward", z.shape())?;
        let d = z.shape()[1];
        let mut dx = vec![S::ZERO; z.len()];
        for (i, ((zr, gr), out)) in z.data().chunks(d).zip(dz.data().chunks(d)).zip(dx.chunks_mut(d)).enumerate() {
            let dot: S = zr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
            for j in 0..d {
                out[j] = (gr[j] - zr[j] * dot) / norms[i];
            }
        }
        Tensor::new(z.shape().to_vec(), dx)
    }
}
