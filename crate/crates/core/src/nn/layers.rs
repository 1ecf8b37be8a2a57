//! Layers with explicit forward and backward passes.
//!
//! Feature maps are channel-last matrices `[rows, channels]`; sequence layers
//! take `[batch, length, channels]`. Every backward pass accumulates parameter
//! gradients into a [`Grads`] buffer and returns the input gradient.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, ArrayD, ArrayView2, ArrayView3, Axis, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::params::{Grads, ParamId, ParamStore};
use crate::real::Real;

const NORM_EPS: f64 = 1e-5;

/// Deterministic parameter initializer.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(rng: ChaCha8Rng) -> Self {
        Self { rng }
    }

    /// Zero-mean normal tensor with standard deviation `std`.
    pub fn normal(&mut self, shape: &[usize], std: f64) -> ArrayD<f64> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n)
            .map(|_| std * self.rng.sample::<f64, _>(StandardNormal))
            .collect();
        ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape")
    }

    pub fn constant(shape: &[usize], value: f64) -> ArrayD<f64> {
        ArrayD::from_elem(IxDyn(shape), value)
    }
}

/// Channel-mixing linear map with optional block-diagonal grouping.
///
/// Weights are stored as `[groups, in / groups, out / groups]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
    pub groups: usize,
}

impl Linear {
    pub fn new(
        ps: &mut ParamStore<f64>,
        init: &mut Init,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        groups: usize,
        gain: f64,
    ) -> Self {
        Self::build(ps, init, name, in_dim, out_dim, groups, gain, true)
    }

    /// Same as [`new`](Self::new) without a bias term.
    pub fn without_bias(
        ps: &mut ParamStore<f64>,
        init: &mut Init,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        groups: usize,
        gain: f64,
    ) -> Self {
        Self::build(ps, init, name, in_dim, out_dim, groups, gain, false)
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        ps: &mut ParamStore<f64>,
        init: &mut Init,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        groups: usize,
        gain: f64,
        bias: bool,
    ) -> Self {
        assert!(in_dim % groups == 0 && out_dim % groups == 0);
        let in_g = in_dim / groups;
        let w = ps.register(
            format!("{name}.weight"),
            init.normal(
                &[groups, in_g, out_dim / groups],
                gain / (in_g as f64).sqrt(),
            ),
        );
        let b = bias.then(|| ps.register(format!("{name}.bias"), Init::constant(&[out_dim], 0.0)));
        Self {
            w,
            b,
            in_dim,
            out_dim,
            groups,
        }
    }

    pub fn forward<A: Real>(&self, ps: &ParamStore<A>, x: ArrayView2<A>) -> Array2<A> {
        assert_eq!(x.ncols(), self.in_dim, "linear input width");
        let w = ps.tensor3(self.w);
        let (in_g, out_g) = (self.in_dim / self.groups, self.out_dim / self.groups);
        let mut y = Array2::zeros((x.nrows(), self.out_dim));
        for g in 0..self.groups {
            let xs = x.slice(s![.., g * in_g..(g + 1) * in_g]);
            let mut ys = y.slice_mut(s![.., g * out_g..(g + 1) * out_g]);
            general_mat_mul(A::one(), &xs, &w.index_axis(Axis(0), g), A::zero(), &mut ys);
        }
        if let Some(b) = self.b {
            y += &ArrayView2::from_shape((1, self.out_dim), ps.vector(b)).expect("bias");
        }
        y
    }

    pub fn backward<A: Real>(
        &self,
        ps: &ParamStore<A>,
        x: ArrayView2<A>,
        gy: ArrayView2<A>,
        grads: &mut Grads<A>,
    ) -> Array2<A> {
        let w = ps.tensor3(self.w);
        let (in_g, out_g) = (self.in_dim / self.groups, self.out_dim / self.groups);
        let mut gx = Array2::zeros((x.nrows(), self.in_dim));
        {
            let mut gw = grads.tensor3_mut(self.w);
            for g in 0..self.groups {
                let xs = x.slice(s![.., g * in_g..(g + 1) * in_g]);
                let gys = gy.slice(s![.., g * out_g..(g + 1) * out_g]);
                let mut gwg = gw.index_axis_mut(Axis(0), g);
                general_mat_mul(A::one(), &xs.t(), &gys, A::one(), &mut gwg);
                let mut gxs = gx.slice_mut(s![.., g * in_g..(g + 1) * in_g]);
                general_mat_mul(
                    A::one(),
                    &gys,
                    &w.index_axis(Axis(0), g).t(),
                    A::zero(),
                    &mut gxs,
                );
            }
        }
        if let Some(b) = self.b {
            let gb = grads.vector_mut(b);
            for row in gy.outer_iter() {
                for (acc, v) in gb.iter_mut().zip(row.iter()) {
                    *acc += *v;
                }
            }
        }
        gx
    }
}

/// Grouped 1-D convolution along the length axis of `[batch, length, channels]`
/// with zero "same" padding. Weights are `[groups, kernel * in_g, out_g]`.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub groups: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamStore<f64>,
        init: &mut Init,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        groups: usize,
        gain: f64,
    ) -> Self {
        assert!(kernel % 2 == 1, "odd kernels only");
        assert!(in_ch % groups == 0 && out_ch % groups == 0);
        let fan_in = kernel * in_ch / groups;
        let w = ps.register(
            format!("{name}.weight"),
            init.normal(
                &[groups, fan_in, out_ch / groups],
                gain / (fan_in as f64).sqrt(),
            ),
        );
        let b = ps.register(format!("{name}.bias"), Init::constant(&[out_ch], 0.0));
        Self {
            w,
            b,
            in_ch,
            out_ch,
            kernel,
            groups,
        }
    }

    fn im2col<A: Real>(&self, x: &[A], batch: usize, len: usize, g: usize) -> Array2<A> {
        let cg = self.in_ch / self.groups;
        let k = self.kernel;
        let pad = (k / 2) as isize;
        let mut col = Array2::zeros((batch * len, k * cg));
        let cs = col.as_slice_mut().expect("contiguous");
        for b in 0..batch {
            for l in 0..len {
                let row = (b * len + l) * k * cg;
                for ki in 0..k {
                    let src = l as isize + ki as isize - pad;
                    if src < 0 || src >= len as isize {
                        continue;
                    }
                    let xo = (b * len + src as usize) * self.in_ch + g * cg;
                    cs[row + ki * cg..row + (ki + 1) * cg].copy_from_slice(&x[xo..xo + cg]);
                }
            }
        }
        col
    }

    pub fn forward<A: Real>(&self, ps: &ParamStore<A>, x: ArrayView3<A>) -> Array3<A> {
        let (batch, len, ch) = x.dim();
        assert_eq!(ch, self.in_ch, "conv input channels");
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("contiguous");
        let w = ps.tensor3(self.w);
        let out_g = self.out_ch / self.groups;
        let mut y = Array2::zeros((batch * len, self.out_ch));
        for g in 0..self.groups {
            let col = self.im2col(xs, batch, len, g);
            let mut ys = y.slice_mut(s![.., g * out_g..(g + 1) * out_g]);
            general_mat_mul(
                A::one(),
                &col,
                &w.index_axis(Axis(0), g),
                A::zero(),
                &mut ys,
            );
        }
        y += &ArrayView2::from_shape((1, self.out_ch), ps.vector(self.b)).expect("bias");
        y.into_shape_with_order((batch, len, self.out_ch))
            .expect("shape")
    }

    pub fn backward<A: Real>(
        &self,
        ps: &ParamStore<A>,
        x: ArrayView3<A>,
        gy: ArrayView3<A>,
        grads: &mut Grads<A>,
    ) -> Array3<A> {
        let (batch, len, _) = x.dim();
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("contiguous");
        let gy = gy.as_standard_layout();
        let gy2 = gy
            .view()
            .into_shape_with_order((batch * len, self.out_ch))
            .expect("shape");
        let w = ps.tensor3(self.w);
        let cg = self.in_ch / self.groups;
        let out_g = self.out_ch / self.groups;
        let k = self.kernel;
        let pad = (k / 2) as isize;
        let mut gx = Array3::<A>::zeros((batch, len, self.in_ch));
        let gxs = gx.as_slice_mut().expect("contiguous");
        for g in 0..self.groups {
            let col = self.im2col(xs, batch, len, g);
            let gys = gy2.slice(s![.., g * out_g..(g + 1) * out_g]);
            {
                let mut gw = grads.tensor3_mut(self.w);
                let mut gwg = gw.index_axis_mut(Axis(0), g);
                general_mat_mul(A::one(), &col.t(), &gys, A::one(), &mut gwg);
            }
            let mut gcol = Array2::zeros((batch * len, k * cg));
            general_mat_mul(
                A::one(),
                &gys,
                &w.index_axis(Axis(0), g).t(),
                A::zero(),
                &mut gcol,
            );
            let gc = gcol.as_slice().expect("contiguous");
            for b in 0..batch {
                for l in 0..len {
                    let row = (b * len + l) * k * cg;
                    for ki in 0..k {
                        let src = l as isize + ki as isize - pad;
                        if src < 0 || src >= len as isize {
                            continue;
                        }
                        let xo = (b * len + src as usize) * self.in_ch + g * cg;
                        for c in 0..cg {
                            gxs[xo + c] += gc[row + ki * cg + c];
                        }
                    }
                }
            }
        }
        let gb = grads.vector_mut(self.b);
        for row in gy2.outer_iter() {
            for (acc, v) in gb.iter_mut().zip(row.iter()) {
                *acc += *v;
            }
        }
        gx
    }
}

/// Layer normalization over the channel axis.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct NormCache<A> {
    xhat: Array2<A>,
    inv_std: Vec<A>,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore<f64>, name: &str, dim: usize) -> Self {
        Self {
            gamma: ps.register(format!("{name}.gamma"), Init::constant(&[dim], 1.0)),
            beta: ps.register(format!("{name}.beta"), Init::constant(&[dim], 0.0)),
            dim,
        }
    }

    pub fn forward<A: Real>(
        &self,
        ps: &ParamStore<A>,
        x: ArrayView2<A>,
    ) -> (Array2<A>, NormCache<A>) {
        let (n, c) = x.dim();
        assert_eq!(c, self.dim, "layer norm width");
        let gamma = ps.vector(self.gamma);
        let beta = ps.vector(self.beta);
        let eps = A::of(NORM_EPS);
        let inv_c = A::one() / A::of(c as f64);
        let mut xhat = Array2::zeros((n, c));
        let mut y = Array2::zeros((n, c));
        let mut inv_std = Vec::with_capacity(n);
        for ((row, mut xh), mut yr) in x
            .outer_iter()
            .zip(xhat.outer_iter_mut())
            .zip(y.outer_iter_mut())
        {
            let mean = row.iter().copied().sum::<A>() * inv_c;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<A>() * inv_c;
            let is = A::one() / (var + eps).sqrt();
            inv_std.push(is);
            for (((h, o), &v), (&g, &b)) in xh
                .iter_mut()
                .zip(yr.iter_mut())
                .zip(row.iter())
                .zip(gamma.iter().zip(beta))
            {
                *h = (v - mean) * is;
                *o = *h * g + b;
            }
        }
        (y, NormCache { xhat, inv_std })
    }

    pub fn backward<A: Real>(
        &self,
        ps: &ParamStore<A>,
        cache: &NormCache<A>,
        gy: ArrayView2<A>,
        grads: &mut Grads<A>,
    ) -> Array2<A> {
        let (n, c) = gy.dim();
        let gamma = ps.vector(self.gamma);
        let inv_c = A::one() / A::of(c as f64);
        let mut gx = Array2::zeros((n, c));
        let mut ggamma = vec![A::zero(); c];
        let mut gbeta = vec![A::zero(); c];
        for (((gr, xh), mut gxr), &is) in gy
            .outer_iter()
            .zip(cache.xhat.outer_iter())
            .zip(gx.outer_iter_mut())
            .zip(&cache.inv_std)
        {
            let mut sum_g = A::zero();
            let mut sum_gx = A::zero();
            for j in 0..c {
                let gh = gr[j] * gamma[j];
                sum_g += gh;
                sum_gx += gh * xh[j];
                ggamma[j] += gr[j] * xh[j];
                gbeta[j] += gr[j];
            }
            for j in 0..c {
                let gh = gr[j] * gamma[j];
                gxr[j] = is * (gh - (sum_g + xh[j] * sum_gx) * inv_c);
            }
        }
        for (a, v) in grads.vector_mut(self.gamma).iter_mut().zip(ggamma) {
            *a += v;
        }
        for (a, v) in grads.vector_mut(self.beta).iter_mut().zip(gbeta) {
            *a += v;
        }
        gx
    }
}

/// Group normalization of `[batch, length, channels]`: statistics per batch
/// item and channel group, over length and the group's channels.
#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub channels: usize,
    pub groups: usize,
}

#[derive(Debug, Clone)]
pub struct GroupNormCache<A> {
    xhat: Array3<A>,
    inv_std: Array2<A>,
}

impl GroupNorm {
    pub fn new(ps: &mut ParamStore<f64>, name: &str, channels: usize, groups: usize) -> Self {
        assert!(channels % groups == 0);
        Self {
            gamma: ps.register(format!("{name}.gamma"), Init::constant(&[channels], 1.0)),
            beta: ps.register(format!("{name}.beta"), Init::constant(&[channels], 0.0)),
            channels,
            groups,
        }
    }

    pub fn forward<A: Real>(
        &self,
        ps: &ParamStore<A>,
        x: ArrayView3<A>,
    ) -> (Array3<A>, GroupNormCache<A>) {
        let (batch, len, c) = x.dim();
        assert_eq!(c, self.channels, "group norm width");
        let cg = c / self.groups;
        let gamma = ps.vector(self.gamma);
        let beta = ps.vector(self.beta);
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("contiguous");
        let mut xhat = Array3::zeros((batch, len, c));
        let mut y = Array3::zeros((batch, len, c));
        let mut inv_std = Array2::zeros((batch, self.groups));
        let count = A::of((len * cg) as f64);
        let eps = A::of(NORM_EPS);
        {
            let hs = xhat.as_slice_mut().expect("contiguous");
            let ys = y.as_slice_mut().expect("contiguous");
            for b in 0..batch {
                for g in 0..self.groups {
                    let mut mean = A::zero();
                    for l in 0..len {
                        let o = (b * len + l) * c + g * cg;
                        mean += xs[o..o + cg].iter().copied().sum::<A>();
                    }
                    mean /= count;
                    let mut var = A::zero();
                    for l in 0..len {
                        let o = (b * len + l) * c + g * cg;
                        var += xs[o..o + cg]
                            .iter()
                            .map(|&v| (v - mean) * (v - mean))
                            .sum::<A>();
                    }
                    var /= count;
                    let is = A::one() / (var + eps).sqrt();
                    inv_std[[b, g]] = is;
                    for l in 0..len {
                        let o = (b * len + l) * c + g * cg;
                        for j in 0..cg {
                            let h = (xs[o + j] - mean) * is;
                            hs[o + j] = h;
                            ys[o + j] = h * gamma[g * cg + j] + beta[g * cg + j];
                        }
                    }
                }
            }
        }
        (y, GroupNormCache { xhat, inv_std })
    }

    pub fn backward<A: Real>(
        &self,
        ps: &ParamStore<A>,
        cache: &GroupNormCache<A>,
        gy: ArrayView3<A>,
        grads: &mut Grads<A>,
    ) -> Array3<A> {
        let (batch, len, c) = gy.dim();
        let cg = c / self.groups;
        let gamma = ps.vector(self.gamma);
        let gy = gy.as_standard_layout();
        let gys = gy.as_slice().expect("contiguous");
        let hs = cache.xhat.as_slice().expect("contiguous");
        let mut gx = Array3::zeros((batch, len, c));
        let mut ggamma = vec![A::zero(); c];
        let mut gbeta = vec![A::zero(); c];
        let inv_n = A::one() / A::of((len * cg) as f64);
        {
            let gxs = gx.as_slice_mut().expect("contiguous");
            for b in 0..batch {
                for g in 0..self.groups {
                    let mut sum_g = A::zero();
                    let mut sum_gx = A::zero();
                    for l in 0..len {
                        let o = (b * len + l) * c + g * cg;
                        for j in 0..cg {
                            let ch = g * cg + j;
                            let gh = gys[o + j] * gamma[ch];
                            sum_g += gh;
                            sum_gx += gh * hs[o + j];
                            ggamma[ch] += gys[o + j] * hs[o + j];
                            gbeta[ch] += gys[o + j];
                        }
                    }
                    let is = cache.inv_std[[b, g]];
                    for l in 0..len {
                        let o = (b * len + l) * c + g * cg;
                        for j in 0..cg {
                            let gh = gys[o + j] * gamma[g * cg + j];
                            gxs[o + j] = is * (gh - (sum_g + hs[o + j] * sum_gx) * inv_n);
                        }
                    }
                }
            }
        }
        for (a, v) in grads.vector_mut(self.gamma).iter_mut().zip(ggamma) {
            *a += v;
        }
        for (a, v) in grads.vector_mut(self.beta).iter_mut().zip(gbeta) {
            *a += v;
        }
        gx
    }
}

/// Parametric ReLU with one slope per channel.
#[derive(Debug, Clone)]
pub struct PRelu {
    pub slope: ParamId,
    pub dim: usize,
}

impl PRelu {
    pub fn new(ps: &mut ParamStore<f64>, name: &str, dim: usize) -> Self {
        Self {
            slope: ps.register(format!("{name}.slope"), Init::constant(&[dim], 0.25)),
            dim,
        }
    }

    pub fn forward<A: Real>(&self, ps: &ParamStore<A>, x: ArrayView2<A>) -> Array2<A> {
        let a = ps.vector(self.slope);
        let mut y = x.to_owned();
        for mut row in y.outer_iter_mut() {
            for (v, &s) in row.iter_mut().zip(a) {
                if *v < A::zero() {
                    *v *= s;
                }
            }
        }
        y
    }

    pub fn backward<A: Real>(
        &self,
        ps: &ParamStore<A>,
        x: ArrayView2<A>,
        gy: ArrayView2<A>,
        grads: &mut Grads<A>,
    ) -> Array2<A> {
        let a = ps.vector(self.slope);
        let mut gx = gy.to_owned();
        let mut ga = vec![A::zero(); self.dim];
        for (mut gr, xr) in gx.outer_iter_mut().zip(x.outer_iter()) {
            for j in 0..self.dim {
                if xr[j] < A::zero() {
                    ga[j] += gr[j] * xr[j];
                    gr[j] *= a[j];
                }
            }
        }
        for (acc, v) in grads.vector_mut(self.slope).iter_mut().zip(ga) {
            *acc += v;
        }
        gx
    }
}

pub fn sigmoid<A: Real>(x: A) -> A {
    A::one() / (A::one() + (-x).exp())
}

pub fn silu<A: Real>(x: ArrayView2<A>) -> Array2<A> {
    x.mapv(|v| v * sigmoid(v))
}

pub fn silu_backward<A: Real>(x: ArrayView2<A>, gy: ArrayView2<A>) -> Array2<A> {
    let mut gx = gy.to_owned();
    ndarray::Zip::from(&mut gx).and(&x).for_each(|g, &v| {
        let s = sigmoid(v);
        *g *= s * (A::one() + v * (A::one() - s));
    });
    gx
}

/// Row-broadcast multiply `x * v`.
pub fn scale_channels<A: Real>(x: ArrayView2<A>, v: &Array1<A>) -> Array2<A> {
    let mut y = x.to_owned();
    for mut row in y.outer_iter_mut() {
        row *= v;
    }
    y
}

/// Swaps the first two axes of a 3-D tensor and returns a contiguous copy.
pub fn swap01<A: Real>(x: ArrayView3<A>) -> Array3<A> {
    x.permuted_axes([1, 0, 2]).as_standard_layout().into_owned()
}

/// Reinterprets a contiguous matrix as `[d0, d1, channels]`.
pub fn as3<A: Real>(x: &Array2<A>, d0: usize, d1: usize) -> ArrayView3<'_, A> {
    x.view()
        .into_shape_with_order((d0, d1, x.ncols()))
        .expect("contiguous feature map")
}

pub fn flat<A: Real>(x: Array3<A>) -> Array2<A> {
    let (a, b, c) = x.dim();
    x.into_shape_with_order((a * b, c))
        .expect("contiguous feature map")
}
