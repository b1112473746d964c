//! Uniform access to the named tensors of a parameter set.
//!
//! Gradients reuse the parameter type: a gradient for `P` is another `P`
//! with the same shapes.

use crate::tensor::Tensor;

pub trait ParamSet: Clone {
    /// Named tensors in a fixed order. The order is part of the checkpoint
    /// format and of the optimizer state layout.
    fn tensors(&self) -> Vec<(String, &Tensor)>;

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, t) in out.tensors_mut() {
            t.fill(0.0);
        }
        out
    }

    fn add_scaled(&mut self, other: &Self, s: f64) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_scaled(b, s);
        }
    }

    fn norm_sq(&self) -> f64 {
        self.tensors().iter().map(|(_, t)| t.norm_sq()).sum()
    }

    fn scale(&mut self, s: f64) {
        for (_, t) in self.tensors_mut() {
            t.scale(s);
        }
    }

    fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.data().iter().all(|x| x.is_finite()))
    }
}
