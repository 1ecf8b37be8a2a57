//! Sub-modules of the extraction network.
//!
//! Crossband layers take `[frames, freqs, channels]`, narrowband layers take
//! `[freqs, frames, channels]`; both are residual and shape preserving.

use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array3, ArrayView2, ArrayView3, Axis};

use super::attention::{AttentionCache, SelfAttention};
use super::layers::{
    as3, flat, sigmoid, silu, silu_backward, Conv1d, GroupNorm, GroupNormCache, Init, LayerNorm,
    Linear, NormCache, PRelu,
};
use super::params::{Grads, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::real::Real;

/// Linear, layer norm and PReLU mapping a clue embedding to a channel gain.
#[derive(Debug, Clone)]
pub struct ClueEncoder {
    pub linear: Linear,
    pub norm: LayerNorm,
    pub act: PRelu,
}

#[derive(Debug, Clone)]
pub struct ClueCache<A> {
    e: Array2<A>,
    norm: NormCache<A>,
    normed: Array2<A>,
}

impl ClueEncoder {
    pub fn new(
        ps: &mut ParamStore<f64>,
        init: &mut Init,
        name: &str,
        dim: usize,
        channels: usize,
    ) -> Self {
        Self {
            linear: Linear::new(ps, init, &format!("{name}.linear"), dim, channels, 1, 1.0),
            norm: LayerNorm::new(ps, &format!("{name}.norm"), channels),
            act: PRelu::new(ps, &format!("{name}.act"), channels),
        }
    }

    pub fn forward<A: Real>(&self, ps: &ParamStore<A>, e: &[f64]) -> (Array1<A>, ClueCache<A>) {
        let e = Array2::from_shape_fn((1, e.len()), |(_, j)| A::of(e[j]));
        let lin = self.linear.forward(ps, e.view());
        let (normed, norm) = self.norm.forward(ps, lin.view());
        let z = self.act.forward(ps, normed.view());
        let z = z.index_axis(Axis(0), 0).to_owned();
        (z, ClueCache { e, norm, normed })
    }

    pub fn backward<A: Real>(
        &self,
        ps: &ParamStore<A>,
        cache: &ClueCache<A>,
        gz: &Array1<A>,
        grads: &mut Grads<A>,
    ) {
        let gz = gz.view().insert_axis(Axis(0));
        let g = self.act.backward(ps, cache.normed.view(), gz, grads);
        let g = self.norm.backward(ps, &cache.norm, g.view(), grads);
        self.linear.backward(ps, cache.e.view(), g.view(), grads);
    }
}

/// Replacement values for the BW mask, used to probe the module in tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskOverride {
    #[default]
    Learned,
    Zero,
    One,
}

/// Beamwidth-conditioned feature gate: `out = x + mask * x` with a
/// single-channel sigmoid mask computed from `x` modulated by the width code.
#[derive(Debug)]
pub struct BwModule {
    pub width: Linear,
    pub mask: Linear,
    evaluations: AtomicUsize,
}

impl Clone for BwModule {
    fn clone(&self) -> Self {
        Self {
            width: self.width.clone(),
            mask: self.mask.clone(),
            evaluations: AtomicUsize::new(self.evaluations.load(Ordering::Relaxed)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BwCache<A> {
    code: Array2<A>,
    e: Array1<A>,
    x: Array2<A>,
    u: Array2<A>,
    m: Array1<A>,
    learned: bool,
}

fn check_one_hot(code: &[f64; 3]) -> Result<()> {
    let ones = code.iter().filter(|&&v| v == 1.0).count();
    let zeros = code.iter().filter(|&&v| v == 0.0).count();
    if ones != 1 || zeros != 2 {
        return Err(Error::Input(format!("width code {code:?} is not one-hot")));
    }
    Ok(())
}

impl BwModule {
    pub fn new(ps: &mut ParamStore<f64>, init: &mut Init, name: &str, channels: usize) -> Self {
        Self {
            width: Linear::new(ps, init, &format!("{name}.width"), 3, channels, 1, 1.0),
            mask: Linear::new(ps, init, &format!("{name}.mask"), channels, 1, 1, 1.0),
            evaluations: AtomicUsize::new(0),
        }
    }

    /// Number of times the mask path has run since construction.
    pub fn evaluations(&self) -> usize {
        self.evaluations.load(Ordering::Relaxed)
    }

    pub fn forward<A: Real>(
        &self,
        ps: &ParamStore<A>,
        x: ArrayView2<A>,
        code: &[f64; 3],
        mode: MaskOverride,
    ) -> Result<(Array2<A>, BwCache<A>)> {
        check_one_hot(code)?;
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        let code = Array2::from_shape_fn((1, 3), |(_, j)| A::of(code[j]));
        let e = self
            .width
            .forward(ps, code.view())
            .index_axis(Axis(0), 0)
            .to_owned();
        let (u, m) = match mode {
            MaskOverride::Learned => {
                let u = &x * &e;
                let logits = self.mask.forward(ps, u.view());
                let m = logits.column(0).mapv(sigmoid);
                (u, m)
            }
            MaskOverride::Zero => (Array2::zeros((0, 0)), Array1::zeros(x.nrows())),
            MaskOverride::One => (Array2::zeros((0, 0)), Array1::ones(x.nrows())),
        };
        let mut y = x.to_owned();
        for (mut row, &mv) in y.outer_iter_mut().zip(m.iter()) {
            row *= A::one() + mv;
        }
        let cache = BwCache {
            code,
            e,
            x: x.to_owned(),
            u,
            m,
            learned: mode == MaskOverride::Learned,
        };
        Ok((y, cache))
    }

    pub fn backward<A: Real>(
        &self,
        ps: &ParamStore<A>,
        cache: &BwCache<A>,
        gy: ArrayView2<A>,
        grads: &mut Grads<A>,
    ) -> Array2<A> {
        let mut gx = gy.to_owned();
        for (mut row, &mv) in gx.outer_iter_mut().zip(cache.m.iter()) {
            row *= A::one() + mv;
        }
        if !cache.learned {
            return gx;
        }
        let n = gy.nrows();
        let mut glogit = Array2::zeros((n, 1));
        for r in 0..n {
            let gm: A = gy
                .row(r)
                .iter()
                .zip(cache.x.row(r))
                .map(|(&g, &h)| g * h)
                .sum();
            let m = cache.m[r];
            glogit[[r, 0]] = gm * m * (A::one() - m);
        }
        let gu = self.mask.backward(ps, cache.u.view(), glogit.view(), grads);
        gx += &(&gu * &cache.e);
        let ge = (&gu * &cache.x).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.width.backward(ps, cache.code.view(), ge.view(), grads);
        gx
    }
}

/// Per-channel full-band linear map over frequency, shared by every crossband
/// layer. Weights are `[channels, freqs_in, freqs_out]`.
#[derive(Debug, Clone)]
pub struct FreqLinear {
    pub w: ParamId,
    pub b: ParamId,
    pub channels: usize,
    pub freqs: usize,
}

impl FreqLinear {
    pub fn new(
        ps: &mut ParamStore<f64>,
        init: &mut Init,
        name: &str,
        channels: usize,
        freqs: usize,
    ) -> Self {
        let w = ps.register(
            format!("{name}.weight"),
            init.normal(&[channels, freqs, freqs], 1.0 / (freqs as f64).sqrt()),
        );
        let b = ps.register(
            format!("{name}.bias"),
            Init::constant(&[channels, freqs], 0.0),
        );
        Self {
            w,
            b,
            channels,
            freqs,
        }
    }

    fn column<A: Real>(x: ArrayView3<A>, j: usize) -> Array2<A> {
        x.index_axis(Axis(2), j).to_owned()
    }

    /// `x`: `[frames, freqs, channels]`.
    pub fn forward<A: Real>(&self, ps: &ParamStore<A>, x: ArrayView3<A>) -> Array3<A> {
        let (t, f, c) = x.dim();
        let w = ps.tensor3(self.w);
        let b = ps.mat(self.b);
        let mut y = Array3::zeros((t, f, c));
        let mut o = Array2::zeros((t, f));
        for j in 0..c {
            let xj = Self::column(x, j);
            general_mat_mul(A::one(), &xj, &w.index_axis(Axis(0), j), A::zero(), &mut o);
            o += &b.row(j);
            y.index_axis_mut(Axis(2), j).assign(&o);
        }
        y
    }

    pub fn backward<A: Real>(
        &self,
        ps: &ParamStore<A>,
        x: ArrayView3<A>,
        gy: ArrayView3<A>,
        grads: &mut Grads<A>,
    ) -> Array3<A> {
        let (t, f, c) = x.dim();
        let w = ps.tensor3(self.w);
        let mut gx = Array3::zeros((t, f, c));
        let mut gxj = Array2::zeros((t, f));
        for j in 0..c {
            let xj = Self::column(x, j);
            let gj = Self::column(gy, j);
            {
                let mut gw = grads.tensor3_mut(self.w);
                let mut gwj = gw.index_axis_mut(Axis(0), j);
                general_mat_mul(A::one(), &xj.t(), &gj, A::one(), &mut gwj);
            }
            {
                let mut gb = grads.mat_mut(self.b);
                let mut row = gb.row_mut(j);
                row += &gj.sum_axis(Axis(0));
            }
            general_mat_mul(
                A::one(),
                &gj,
                &w.index_axis(Axis(0), j).t(),
                A::zero(),
                &mut gxj,
            );
            gx.index_axis_mut(Axis(2), j).assign(&gxj);
        }
        gx
    }
}

/// Per-frame processing across frequency: a grouped frequency convolution,
/// the shared full-band linear bottleneck, and a second frequency convolution.
#[derive(Debug, Clone)]
pub struct Crossband {
    pub norm1: LayerNorm,
    pub fconv1: Conv1d,
    pub act1: PRelu,
    pub norm2: LayerNorm,
    pub squeeze: Linear,
    pub unsqueeze: Linear,
    pub norm3: LayerNorm,
    pub fconv2: Conv1d,
    pub act3: PRelu,
}

#[derive(Debug, Clone)]
pub struct CrossbandCache<A> {
    n1: NormCache<A>,
    a1: Array3<A>,
    b1: Array2<A>,
    n2: NormCache<A>,
    a2: Array2<A>,
    s1: Array2<A>,
    s2: Array3<A>,
    s3: Array2<A>,
    s4: Array2<A>,
    n3: NormCache<A>,
    a3: Array3<A>,
    b3: Array2<A>,
}

pub struct CrossbandDims {
    pub channels: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub groups: usize,
    pub out_gain: f64,
}

impl Crossband {
    pub fn new(ps: &mut ParamStore<f64>, init: &mut Init, name: &str, d: &CrossbandDims) -> Self {
        let c = d.channels;
        Self {
            norm1: LayerNorm::new(ps, &format!("{name}.norm1"), c),
            fconv1: Conv1d::new(
                ps,
                init,
                &format!("{name}.fconv1"),
                c,
                c,
                d.kernel,
                d.groups,
                d.out_gain,
            ),
            act1: PRelu::new(ps, &format!("{name}.act1"), c),
            norm2: LayerNorm::new(ps, &format!("{name}.norm2"), c),
            squeeze: Linear::new(ps, init, &format!("{name}.squeeze"), c, d.hidden, 1, 1.0),
            unsqueeze: Linear::new(
                ps,
                init,
                &format!("{name}.unsqueeze"),
                d.hidden,
                c,
                1,
                d.out_gain,
            ),
            norm3: LayerNorm::new(ps, &format!("{name}.norm3"), c),
            fconv2: Conv1d::new(
                ps,
                init,
                &format!("{name}.fconv2"),
                c,
                c,
                d.kernel,
                d.groups,
                d.out_gain,
            ),
            act3: PRelu::new(ps, &format!("{name}.act3"), c),
        }
    }

    /// `x`: `[frames, freqs, channels]`.
    pub fn forward<A: Real>(
        &self,
        ps: &ParamStore<A>,
        shared: &FreqLinear,
        x: ArrayView3<A>,
    ) -> Result<(Array3<A>, CrossbandCache<A>)> {
        let (t, f, c) = x.dim();
        if f != shared.freqs {
            return Err(Error::shape(
                "crossband",
                format!(
                    "{f} frequencies, shared full-band linear expects {}",
                    shared.freqs
                ),
            ));
        }
        if c != self.norm1.dim {
            return Err(Error::shape(
                "crossband",
                format!("{c} channels, expected {}", self.norm1.dim),
            ));
        }
        let h0 = x
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((t * f, c))
            .expect("contiguous");

        let (a1, n1) = self.norm1.forward(ps, h0.view());
        let a1 = a1.into_shape_with_order((t, f, c)).expect("contiguous");
        let b1 = flat(self.fconv1.forward(ps, a1.view()));
        let mut h1 = self.act1.forward(ps, b1.view());
        h1 += &h0;

        let (a2, n2) = self.norm2.forward(ps, h1.view());
        let s1 = self.squeeze.forward(ps, a2.view());
        let hidden = s1.ncols();
        let s2 = silu(s1.view())
            .into_shape_with_order((t, f, hidden))
            .expect("contiguous");
        let s3 = flat(shared.forward(ps, s2.view()));
        let s4 = silu(s3.view());
        let mut h2 = self.unsqueeze.forward(ps, s4.view());
        h2 += &h1;

        let (a3, n3) = self.norm3.forward(ps, h2.view());
        let a3 = a3.into_shape_with_order((t, f, c)).expect("contiguous");
        let b3 = flat(self.fconv2.forward(ps, a3.view()));
        let mut h3 = self.act3.forward(ps, b3.view());
        h3 += &h2;

        let cache = CrossbandCache {
            n1,
            a1,
            b1,
            n2,
            a2,
            s1,
            s2,
            s3,
            s4,
            n3,
            a3,
            b3,
        };
        Ok((
            h3.into_shape_with_order((t, f, c)).expect("contiguous"),
            cache,
        ))
    }

    pub fn backward<A: Real>(
        &self,
        ps: &ParamStore<A>,
        shared: &FreqLinear,
        cache: &CrossbandCache<A>,
        gy: ArrayView3<A>,
        grads: &mut Grads<A>,
    ) -> Array3<A> {
        let (t, f, c) = gy.dim();
        let g3 = gy
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((t * f, c))
            .expect("contiguous");

        let gb3 = self.act3.backward(ps, cache.b3.view(), g3.view(), grads);
        let ga3 = flat(
            self.fconv2
                .backward(ps, cache.a3.view(), as3(&gb3, t, f), grads),
        );
        let mut g2 = self.norm3.backward(ps, &cache.n3, ga3.view(), grads);
        g2 += &g3;

        let gs4 = self
            .unsqueeze
            .backward(ps, cache.s4.view(), g2.view(), grads);
        let gs3 = silu_backward(cache.s3.view(), gs4.view());
        let gs2 = shared.backward(ps, cache.s2.view(), as3(&gs3, t, f), grads);
        let gs1 = silu_backward(cache.s1.view(), flat(gs2).view());
        let ga2 = self
            .squeeze
            .backward(ps, cache.a2.view(), gs1.view(), grads);
        let mut g1 = self.norm2.backward(ps, &cache.n2, ga2.view(), grads);
        g1 += &g2;

        let gb1 = self.act1.backward(ps, cache.b1.view(), g1.view(), grads);
        let ga1 = flat(
            self.fconv1
                .backward(ps, cache.a1.view(), as3(&gb1, t, f), grads),
        );
        let mut g0 = self.norm1.backward(ps, &cache.n1, ga1.view(), grads);
        g0 += &g1;
        g0.into_shape_with_order((t, f, c)).expect("contiguous")
    }
}

/// Per-frequency processing along time: self-attention followed by a
/// convolutional feed-forward module.
#[derive(Debug, Clone)]
pub struct Narrowband {
    pub norm_att: LayerNorm,
    pub attention: SelfAttention,
    pub norm_ffn: LayerNorm,
    pub up: Linear,
    pub tconv: Conv1d,
    pub gnorm: GroupNorm,
    pub down: Linear,
}

#[derive(Debug, Clone)]
pub struct NarrowbandCache<A> {
    na: NormCache<A>,
    att: AttentionCache<A>,
    nf: NormCache<A>,
    a2: Array2<A>,
    u1: Array2<A>,
    u2: Array3<A>,
    gn: GroupNormCache<A>,
    u4: Array2<A>,
    u5: Array2<A>,
}

pub struct NarrowbandDims {
    pub channels: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub groups: usize,
    pub heads: usize,
    pub out_gain: f64,
}

impl Narrowband {
    pub fn new(ps: &mut ParamStore<f64>, init: &mut Init, name: &str, d: &NarrowbandDims) -> Self {
        let c = d.channels;
        Self {
            norm_att: LayerNorm::new(ps, &format!("{name}.norm_att"), c),
            attention: SelfAttention::new(
                ps,
                init,
                &format!("{name}.mhsa"),
                c,
                d.heads,
                d.out_gain,
            ),
            norm_ffn: LayerNorm::new(ps, &format!("{name}.norm_ffn"), c),
            up: Linear::new(ps, init, &format!("{name}.up"), c, d.hidden, 1, 1.0),
            tconv: Conv1d::new(
                ps,
                init,
                &format!("{name}.tconv"),
                d.hidden,
                d.hidden,
                d.kernel,
                d.groups,
                1.0,
            ),
            gnorm: GroupNorm::new(ps, &format!("{name}.gnorm"), d.hidden, d.groups),
            down: Linear::new(
                ps,
                init,
                &format!("{name}.down"),
                d.hidden,
                c,
                1,
                d.out_gain,
            ),
        }
    }

    /// `x`: `[freqs, frames, channels]`.
    pub fn forward<A: Real>(
        &self,
        ps: &ParamStore<A>,
        x: ArrayView3<A>,
    ) -> Result<(Array3<A>, NarrowbandCache<A>)> {
        let (f, t, c) = x.dim();
        if c != self.norm_att.dim {
            return Err(Error::shape(
                "narrowband",
                format!("{c} channels, expected {}", self.norm_att.dim),
            ));
        }
        let h0 = x
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((f * t, c))
            .expect("contiguous");

        let (a1, na) = self.norm_att.forward(ps, h0.view());
        let (att_out, att) = self.attention.forward(ps, as3(&a1, f, t));
        let mut h1 = flat(att_out);
        h1 += &h0;

        let (a2, nf) = self.norm_ffn.forward(ps, h1.view());
        let u1 = self.up.forward(ps, a2.view());
        let u2 = silu(u1.view());
        let u2 = u2
            .into_shape_with_order((f, t, self.up.out_dim))
            .expect("contiguous");
        let u3 = self.tconv.forward(ps, u2.view());
        let (u4, gn) = self.gnorm.forward(ps, u3.view());
        let u4 = flat(u4);
        let u5 = silu(u4.view());
        let mut h2 = self.down.forward(ps, u5.view());
        h2 += &h1;

        let cache = NarrowbandCache {
            na,
            att,
            nf,
            a2,
            u1,
            u2,
            gn,
            u4,
            u5,
        };
        Ok((
            h2.into_shape_with_order((f, t, c)).expect("contiguous"),
            cache,
        ))
    }

    pub fn backward<A: Real>(
        &self,
        ps: &ParamStore<A>,
        cache: &NarrowbandCache<A>,
        gy: ArrayView3<A>,
        grads: &mut Grads<A>,
    ) -> Array3<A> {
        let (f, t, c) = gy.dim();
        let g2 = gy
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((f * t, c))
            .expect("contiguous");

        let gu5 = self.down.backward(ps, cache.u5.view(), g2.view(), grads);
        let gu4 = silu_backward(cache.u4.view(), gu5.view());
        let gu3 = self.gnorm.backward(ps, &cache.gn, as3(&gu4, f, t), grads);
        let gu2 = flat(self.tconv.backward(ps, cache.u2.view(), gu3.view(), grads));
        let gu1 = silu_backward(cache.u1.view(), gu2.view());
        let ga2 = self.up.backward(ps, cache.a2.view(), gu1.view(), grads);
        let mut g1 = self.norm_ffn.backward(ps, &cache.nf, ga2.view(), grads);
        g1 += &g2;

        let ga1 = flat(
            self.attention
                .backward(ps, &cache.att, as3(&g1, f, t), grads),
        );
        let mut g0 = self.norm_att.backward(ps, &cache.na, ga1.view(), grads);
        g0 += &g1;
        g0.into_shape_with_order((f, t, c)).expect("contiguous")
    }
}
