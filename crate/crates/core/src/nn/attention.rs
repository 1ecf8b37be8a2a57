//! Multi-head self-attention along the length axis of `[batch, length, channels]`.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Array3, Array4, ArrayView3};

use super::layers::{Init, Linear};
use super::params::{Grads, ParamStore};
use crate::real::Real;

/// Scaled dot-product attention with per-head query, key, value and output
/// projections (block-diagonal over heads).
#[derive(Debug, Clone)]
pub struct SelfAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub dim: usize,
    pub heads: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<A> {
    x: Array2<A>,
    q: Array2<A>,
    k: Array2<A>,
    v: Array2<A>,
    /// Attention weights `[batch, heads, query, key]`.
    p: Array4<A>,
    ctx: Array2<A>,
}

impl SelfAttention {
    pub fn new(
        ps: &mut ParamStore<f64>,
        init: &mut Init,
        name: &str,
        dim: usize,
        heads: usize,
        out_gain: f64,
    ) -> Self {
        assert!(dim % heads == 0, "channels must divide into heads");
        Self {
            q: Linear::new(ps, init, &format!("{name}.q"), dim, dim, heads, 1.0),
            // A key bias shifts every score of a query equally and cancels in the softmax.
            k: Linear::without_bias(ps, init, &format!("{name}.k"), dim, dim, heads, 1.0),
            v: Linear::new(ps, init, &format!("{name}.v"), dim, dim, heads, 1.0),
            o: Linear::new(ps, init, &format!("{name}.o"), dim, dim, heads, out_gain),
            dim,
            heads,
        }
    }

    pub fn forward<A: Real>(
        &self,
        ps: &ParamStore<A>,
        x: ArrayView3<A>,
    ) -> (Array3<A>, AttentionCache<A>) {
        let (batch, len, c) = x.dim();
        assert_eq!(c, self.dim, "attention width");
        let x2 = x
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((batch * len, c))
            .expect("contiguous");
        let q = self.q.forward(ps, x2.view());
        let k = self.k.forward(ps, x2.view());
        let v = self.v.forward(ps, x2.view());
        let dh = c / self.heads;
        let scale = A::of(1.0 / (dh as f64).sqrt());
        let mut p = Array4::zeros((batch, self.heads, len, len));
        let mut ctx = Array2::zeros((batch * len, c));
        for b in 0..batch {
            let rows = b * len..(b + 1) * len;
            for h in 0..self.heads {
                let cols = h * dh..(h + 1) * dh;
                let qh = q.slice(s![rows.clone(), cols.clone()]);
                let kh = k.slice(s![rows.clone(), cols.clone()]);
                let vh = v.slice(s![rows.clone(), cols.clone()]);
                let mut ph = p.slice_mut(s![b, h, .., ..]);
                general_mat_mul(scale, &qh, &kh.t(), A::zero(), &mut ph);
                for mut row in ph.outer_iter_mut() {
                    let m = row.iter().copied().fold(A::neg_infinity(), A::max);
                    let mut sum = A::zero();
                    for e in row.iter_mut() {
                        *e = (*e - m).exp();
                        sum += *e;
                    }
                    row.mapv_inplace(|e| e / sum);
                }
                let mut ch = ctx.slice_mut(s![rows.clone(), cols]);
                general_mat_mul(A::one(), &ph, &vh, A::zero(), &mut ch);
            }
        }
        let y = self.o.forward(ps, ctx.view());
        let y3 = y
            .into_shape_with_order((batch, len, c))
            .expect("contiguous");
        (
            y3,
            AttentionCache {
                x: x2,
                q,
                k,
                v,
                p,
                ctx,
            },
        )
    }

    pub fn backward<A: Real>(
        &self,
        ps: &ParamStore<A>,
        cache: &AttentionCache<A>,
        gy: ArrayView3<A>,
        grads: &mut Grads<A>,
    ) -> Array3<A> {
        let (batch, len, c) = gy.dim();
        let gy2 = gy
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((batch * len, c))
            .expect("contiguous");
        let gctx = self.o.backward(ps, cache.ctx.view(), gy2.view(), grads);
        let dh = c / self.heads;
        let scale = A::of(1.0 / (dh as f64).sqrt());
        let mut gq = Array2::zeros((batch * len, c));
        let mut gk = Array2::zeros((batch * len, c));
        let mut gv = Array2::zeros((batch * len, c));
        let mut gp = Array2::zeros((len, len));
        for b in 0..batch {
            let rows = b * len..(b + 1) * len;
            for h in 0..self.heads {
                let cols = h * dh..(h + 1) * dh;
                let ph = cache.p.slice(s![b, h, .., ..]);
                let qh = cache.q.slice(s![rows.clone(), cols.clone()]);
                let kh = cache.k.slice(s![rows.clone(), cols.clone()]);
                let vh = cache.v.slice(s![rows.clone(), cols.clone()]);
                let gch = gctx.slice(s![rows.clone(), cols.clone()]);
                general_mat_mul(A::one(), &gch, &vh.t(), A::zero(), &mut gp);
                {
                    let mut gvh = gv.slice_mut(s![rows.clone(), cols.clone()]);
                    general_mat_mul(A::one(), &ph.t(), &gch, A::zero(), &mut gvh);
                }
                // Softmax backward, in place on gp.
                for (mut g, pr) in gp.outer_iter_mut().zip(ph.outer_iter()) {
                    let dot = g.iter().zip(pr.iter()).map(|(&a, &b)| a * b).sum::<A>();
                    for (gi, &pi) in g.iter_mut().zip(pr.iter()) {
                        *gi = pi * (*gi - dot);
                    }
                }
                {
                    let mut gqh = gq.slice_mut(s![rows.clone(), cols.clone()]);
                    general_mat_mul(scale, &gp, &kh, A::zero(), &mut gqh);
                }
                let mut gkh = gk.slice_mut(s![rows.clone(), cols]);
                general_mat_mul(scale, &gp.t(), &qh, A::zero(), &mut gkh);
            }
        }
        let x = cache.x.view();
        let mut gx = self.q.backward(ps, x, gq.view(), grads);
        gx += &self.k.backward(ps, x, gk.view(), grads);
        gx += &self.v.backward(ps, x, gv.view(), grads);
        gx.into_shape_with_order((batch, len, c))
            .expect("contiguous")
    }
}
