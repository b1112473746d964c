//! Gated recurrent unit with an explicit backward pass.
//!
//! Gate layout follows the common `[reset; update; candidate]` stacking:
//!
//! ```text
//! r  = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
//! u  = sigmoid(W_iu x + b_iu + W_hu h + b_hu)
//! n  = tanh(W_in x + b_in + r * (W_hn h + b_hn))
//! h' = (1 - u) * n + u * h
//! ```

use rand::Rng;

use crate::params::ParamSet;
use crate::tensor::{sigmoid, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct GruCell {
    /// `3H x input`
    pub w_ih: Tensor,
    /// `3H x H`
    pub w_hh: Tensor,
    pub b_ih: Tensor,
    pub b_hh: Tensor,
}

/// Everything the backward pass needs from one forward step.
#[derive(Clone, Debug)]
pub struct GruStep {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    reset: Vec<f64>,
    update: Vec<f64>,
    cand: Vec<f64>,
    /// `W_hn h + b_hn`
    hidden_cand: Vec<f64>,
    pub h: Vec<f64>,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let scale = 1.0 / (hidden as f64).sqrt();
        Self {
            w_ih: Tensor::uniform(3 * hidden, input, scale, rng),
            w_hh: Tensor::uniform(3 * hidden, hidden, scale, rng),
            b_ih: Tensor::uniform(3 * hidden, 1, scale, rng),
            b_hh: Tensor::uniform(3 * hidden, 1, scale, rng),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_ih: Tensor::zeros(3 * hidden, input),
            w_hh: Tensor::zeros(3 * hidden, hidden),
            b_ih: Tensor::vector(3 * hidden),
            b_hh: Tensor::vector(3 * hidden),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hh.cols()
    }

    pub fn input_size(&self) -> usize {
        self.w_ih.cols()
    }

    pub fn forward(&self, x: &[f64], h_prev: &[f64]) -> GruStep {
        let hs = self.hidden_size();
        let gi = self.w_ih.affine(&self.b_ih, x);
        let gh = self.w_hh.affine(&self.b_hh, h_prev);

        let mut reset = vec![0.0; hs];
        let mut update = vec![0.0; hs];
        let mut cand = vec![0.0; hs];
        let mut h = vec![0.0; hs];
        for k in 0..hs {
            reset[k] = sigmoid(gi[k] + gh[k]);
            update[k] = sigmoid(gi[hs + k] + gh[hs + k]);
            cand[k] = (gi[2 * hs + k] + reset[k] * gh[2 * hs + k]).tanh();
            h[k] = (1.0 - update[k]) * cand[k] + update[k] * h_prev[k];
        }
        GruStep {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            reset,
            update,
            cand,
            hidden_cand: gh[2 * hs..].to_vec(),
            h,
        }
    }

    /// Accumulates parameter gradients into `grad` and adds the input and
    /// previous-state gradients into `dx` and `dh_prev`.
    pub fn backward(
        &self,
        step: &GruStep,
        dh: &[f64],
        grad: &mut GruCell,
        dx: &mut [f64],
        dh_prev: &mut [f64],
    ) {
        let hs = self.hidden_size();
        let mut dgi = vec![0.0; 3 * hs];
        let mut dgh = vec![0.0; 3 * hs];
        for k in 0..hs {
            let (r, u, n) = (step.reset[k], step.update[k], step.cand[k]);
            let dn = dh[k] * (1.0 - u);
            let du = dh[k] * (step.h_prev[k] - n);
            dh_prev[k] += dh[k] * u;

            let dn_pre = dn * (1.0 - n * n);
            let dr = dn_pre * step.hidden_cand[k];
            let dr_pre = dr * r * (1.0 - r);
            let du_pre = du * u * (1.0 - u);

            dgi[k] = dr_pre;
            dgi[hs + k] = du_pre;
            dgi[2 * hs + k] = dn_pre;
            dgh[k] = dr_pre;
            dgh[hs + k] = du_pre;
            dgh[2 * hs + k] = dn_pre * r;
        }
        grad.w_ih.add_outer_block(0, &dgi, &step.x);
        grad.b_ih.add_vec(&dgi);
        grad.w_hh.add_outer_block(0, &dgh, &step.h_prev);
        grad.b_hh.add_vec(&dgh);
        self.w_ih.gemv_t_block(0, &dgi, dx);
        self.w_hh.gemv_t_block(0, &dgh, dh_prev);
    }
}

impl ParamSet for GruCell {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("w_ih".into(), &self.w_ih),
            ("w_hh".into(), &self.w_hh),
            ("b_ih".into(), &self.b_ih),
            ("b_hh".into(), &self.b_hh),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("w_ih".into(), &mut self.w_ih),
            ("w_hh".into(), &mut self.w_hh),
            ("b_ih".into(), &mut self.b_ih),
            ("b_hh".into(), &mut self.b_hh),
        ]
    }
}
