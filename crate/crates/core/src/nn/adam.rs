use ndarray::{ArrayD, Zip};

use super::params::{Grads, ParamStore};
use crate::real::Real;

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<A> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<ArrayD<A>>,
    v: Vec<ArrayD<A>>,
}

impl<A: Real> Adam<A> {
    pub fn new(ps: &ParamStore<A>, lr: f64) -> Self {
        let zeros = || {
            ps.values()
                .iter()
                .map(|p| ArrayD::zeros(p.raw_dim()))
                .collect()
        };
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, ps: &mut ParamStore<A>, grads: &Grads<A>) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (A::of(self.beta1), A::of(self.beta2));
        let (one_b1, one_b2) = (A::of(1.0 - self.beta1), A::of(1.0 - self.beta2));
        let step = A::of(self.lr / c1);
        let inv_c2 = A::of(1.0 / c2);
        let eps = A::of(self.eps);
        for (((p, g), m), v) in ps
            .values_mut()
            .iter_mut()
            .zip(grads.values())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                *p -= step * *m / ((*v * inv_c2).sqrt() + eps);
            });
        }
    }
}
