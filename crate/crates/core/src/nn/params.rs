use ndarray::{ArrayD, ArrayView2, ArrayView3, ArrayViewMut2, ArrayViewMut3, Ix2, Ix3};

use crate::real::Real;

/// Handle to a tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named learnable tensors in registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<A> {
    names: Vec<String>,
    values: Vec<ArrayD<A>>,
}

impl<A: Real> Default for ParamStore<A> {
    fn default() -> Self {
        Self::new()
    }
}

impl<A: Real> ParamStore<A> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Adds a tensor. Names must be unique.
    pub fn register(&mut self, name: impl Into<String>, value: ArrayD<A>) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "parameter {name} registered twice"
        );
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &ArrayD<A> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ArrayD<A> {
        &mut self.values[id.0]
    }

    pub fn mat(&self, id: ParamId) -> ArrayView2<'_, A> {
        self.values[id.0]
            .view()
            .into_dimensionality::<Ix2>()
            .expect("rank-2 parameter")
    }

    pub fn tensor3(&self, id: ParamId) -> ArrayView3<'_, A> {
        self.values[id.0]
            .view()
            .into_dimensionality::<Ix3>()
            .expect("rank-3 parameter")
    }

    pub fn vector(&self, id: ParamId) -> &[A] {
        self.values[id.0].as_slice().expect("contiguous parameter")
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[ArrayD<A>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [ArrayD<A>] {
        &mut self.values
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn zeros_like(&self) -> Grads<A> {
        Grads {
            values: self
                .values
                .iter()
                .map(|v| ArrayD::zeros(v.raw_dim()))
                .collect(),
        }
    }

    pub fn cast<B: Real>(&self) -> ParamStore<B> {
        ParamStore {
            names: self.names.clone(),
            values: self
                .values
                .iter()
                .map(|v| v.mapv(|x| B::of(x.f64())))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Gradient buffers matching a [`ParamStore`] one-to-one.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<A> {
    values: Vec<ArrayD<A>>,
}

impl<A: Real> Grads<A> {
    pub fn get(&self, id: ParamId) -> &ArrayD<A> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ArrayD<A> {
        &mut self.values[id.0]
    }

    pub fn mat_mut(&mut self, id: ParamId) -> ArrayViewMut2<'_, A> {
        self.values[id.0]
            .view_mut()
            .into_dimensionality::<Ix2>()
            .expect("rank-2 gradient")
    }

    pub fn tensor3_mut(&mut self, id: ParamId) -> ArrayViewMut3<'_, A> {
        self.values[id.0]
            .view_mut()
            .into_dimensionality::<Ix3>()
            .expect("rank-3 gradient")
    }

    pub fn vector_mut(&mut self, id: ParamId) -> &mut [A] {
        self.values[id.0]
            .as_slice_mut()
            .expect("contiguous gradient")
    }

    pub fn values(&self) -> &[ArrayD<A>] {
        &self.values
    }

    pub fn add(&mut self, other: &Grads<A>) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: A) {
        for v in &mut self.values {
            v.mapv_inplace(|x| x * s);
        }
    }

    pub fn zero(&mut self) {
        for v in &mut self.values {
            v.fill(A::zero());
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.values
            .iter()
            .flat_map(|v| v.iter())
            .map(|x| x.f64() * x.f64())
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }
}
