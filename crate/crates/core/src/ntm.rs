//! Neural topic model: a variational autoencoder over bag-of-words counts.
//!
//! The encoder maps counts to a diagonal Gaussian, a latent sample is pushed
//! through a Gaussian-softmax to obtain the topic mixture `theta`, and a
//! single affine layer followed by a softmax reconstructs the word
//! distribution. Columns of the reconstruction weight matrix are the topic
//! directions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::{all_finite, softmax, softmax_backward, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NtmConfig {
    /// Size of the bag-of-words vocabulary.
    pub bow_size: usize,
    /// Width of the encoder perceptron.
    pub hidden: usize,
    /// Number of topics.
    pub topics: usize,
}

impl NtmConfig {
    pub fn new(bow_size: usize, topics: usize) -> Self {
        Self {
            bow_size,
            hidden: 100,
            topics,
        }
    }
}

/// Sparse word counts over the BoW vocabulary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bow {
    pub dim: usize,
    /// `(word index, count)`, sorted by index, counts positive.
    pub entries: Vec<(usize, f64)>,
}

impl Bow {
    pub fn from_counts(dim: usize, mut entries: Vec<(usize, f64)>) -> Self {
        entries.sort_by_key(|e| e.0);
        Self { dim, entries }
    }

    pub fn from_dense(counts: &[f64]) -> Self {
        let entries = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0.0)
            .map(|(i, &c)| (i, c))
            .collect();
        Self {
            dim: counts.len(),
            entries,
        }
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(i, c) in &self.entries {
            out[i] += c;
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NtmParams {
    pub config: NtmConfig,
    pub enc_w: Tensor,
    pub enc_b: Tensor,
    pub mu_w: Tensor,
    pub mu_b: Tensor,
    pub sigma_w: Tensor,
    pub sigma_b: Tensor,
    pub theta_w: Tensor,
    pub theta_b: Tensor,
    /// `V_bow x K`; column `k` is topic `k`'s word direction.
    pub phi_w: Tensor,
    pub phi_b: Tensor,
}

/// Per-post topic variables.
#[derive(Clone, Debug, PartialEq)]
pub struct TopicState {
    pub mu: Vec<f64>,
    pub log_sigma: Vec<f64>,
    pub z: Vec<f64>,
    pub theta: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NtmLoss {
    pub kl: f64,
    pub nll: f64,
}

impl NtmLoss {
    pub fn total(&self) -> f64 {
        self.kl + self.nll
    }
}

/// Cached activations of one forward pass.
#[derive(Clone, Debug)]
pub struct NtmForward {
    enc_pre: Vec<f64>,
    enc_h: Vec<f64>,
    noise: Option<Vec<f64>>,
    theta_pre: Vec<f64>,
    pub state: TopicState,
    pub recon: Vec<f64>,
    pub loss: NtmLoss,
}

impl NtmParams {
    pub fn new<R: Rng + ?Sized>(config: NtmConfig, rng: &mut R) -> Self {
        let NtmConfig {
            bow_size: v,
            hidden: e,
            topics: k,
        } = config;
        let s = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
        Self {
            config,
            enc_w: Tensor::uniform(e, v, s(v), rng),
            enc_b: Tensor::vector(e),
            mu_w: Tensor::uniform(k, e, s(e), rng),
            mu_b: Tensor::vector(k),
            sigma_w: Tensor::uniform(k, e, s(e), rng),
            sigma_b: Tensor::vector(k),
            theta_w: Tensor::uniform(k, k, s(k), rng),
            theta_b: Tensor::vector(k),
            phi_w: Tensor::uniform(v, k, s(k), rng),
            phi_b: Tensor::vector(v),
        }
    }

    pub fn zeros(config: NtmConfig) -> Self {
        let NtmConfig {
            bow_size: v,
            hidden: e,
            topics: k,
        } = config;
        Self {
            config,
            enc_w: Tensor::zeros(e, v),
            enc_b: Tensor::vector(e),
            mu_w: Tensor::zeros(k, e),
            mu_b: Tensor::vector(k),
            sigma_w: Tensor::zeros(k, e),
            sigma_b: Tensor::vector(k),
            theta_w: Tensor::zeros(k, k),
            theta_b: Tensor::vector(k),
            phi_w: Tensor::zeros(v, k),
            phi_b: Tensor::vector(v),
        }
    }

    pub fn topics(&self) -> usize {
        self.config.topics
    }

    fn check_bow(&self, bow: &Bow) -> Result<()> {
        if bow.dim != self.config.bow_size {
            return Err(Error::ShapeMismatch {
                what: "bow",
                expected: self.config.bow_size,
                got: bow.dim,
            });
        }
        if let Some(&(i, _)) = bow.entries.iter().find(|e| e.0 >= bow.dim) {
            return Err(Error::ShapeMismatch {
                what: "bow index",
                expected: bow.dim,
                got: i,
            });
        }
        Ok(())
    }

    fn encoder_hidden(&self, bow: &Bow) -> (Vec<f64>, Vec<f64>) {
        let mut pre = self.enc_b.data().to_vec();
        let e = pre.len();
        for &(w, c) in &bow.entries {
            for (r, p) in pre.iter_mut().enumerate().take(e) {
                *p += c * self.enc_w.get(r, w);
            }
        }
        let h = pre.iter().map(|&x| x.max(0.0)).collect();
        (pre, h)
    }

    /// Gaussian parameters `(mu, log_sigma)` of the approximate posterior.
    pub fn bow_encode(&self, bow: &Bow) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_bow(bow)?;
        let (_, h) = self.encoder_hidden(bow);
        Ok((self.mu_w.affine(&self.mu_b, &h), self.sigma_w.affine(&self.sigma_b, &h)))
    }

    fn theta_logits(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let pre = self.theta_w.affine(&self.theta_b, z);
        let act = pre.iter().map(|&x| x.max(0.0)).collect();
        (pre, act)
    }

    /// Post-activation logits of the topic mixture, i.e. `f_theta(z)`.
    pub fn topic_logits(&self, z: &[f64]) -> Vec<f64> {
        self.theta_logits(z).1
    }

    pub fn topic_mixture(&self, z: &[f64]) -> Vec<f64> {
        softmax(&self.topic_logits(z))
    }

    pub fn bow_reconstruct(&self, theta: &[f64]) -> Vec<f64> {
        softmax(&self.phi_w.affine(&self.phi_b, theta))
    }

    /// Topic state with `z = mu` (deterministic) or a reparameterized sample.
    pub fn topic_state(&self, bow: &Bow, noise: Option<&[f64]>) -> Result<TopicState> {
        let (mu, log_sigma) = self.bow_encode(bow)?;
        let z = reparameterize(&mu, &log_sigma, noise);
        let theta = self.topic_mixture(&z);
        Ok(TopicState {
            mu,
            log_sigma,
            z,
            theta,
        })
    }

    pub fn forward(&self, bow: &Bow, noise: Option<&[f64]>) -> Result<NtmForward> {
        self.check_bow(bow)?;
        if let Some(n) = noise {
            if n.len() != self.topics() {
                return Err(Error::ShapeMismatch {
                    what: "noise",
                    expected: self.topics(),
                    got: n.len(),
                });
            }
        }
        let (enc_pre, enc_h) = self.encoder_hidden(bow);
        let mu = self.mu_w.affine(&self.mu_b, &enc_h);
        let log_sigma = self.sigma_w.affine(&self.sigma_b, &enc_h);
        let z = reparameterize(&mu, &log_sigma, noise);
        let (theta_pre, theta_act) = self.theta_logits(&z);
        let theta = softmax(&theta_act);
        let recon = self.bow_reconstruct(&theta);
        let loss = ntm_loss(bow, &mu, &log_sigma, &recon)?;
        Ok(NtmForward {
            enc_pre,
            enc_h,
            noise: noise.map(<[f64]>::to_vec),
            theta_pre,
            state: TopicState {
                mu,
                log_sigma,
                z,
                theta,
            },
            recon,
            loss,
        })
    }

    /// Backward pass for `loss_scale * (kl + nll) + dtheta_extra . theta`.
    ///
    /// `dtheta_extra` carries the gradient that reaches `theta` from
    /// downstream consumers (the generator); pass `None` for the topic model
    /// on its own.
    pub fn backward(
        &self,
        fwd: &NtmForward,
        bow: &Bow,
        loss_scale: f64,
        dtheta_extra: Option<&[f64]>,
        grad: &mut NtmParams,
    ) {
        let k = self.topics();
        let st = &fwd.state;

        // reconstruction: d nll / d logits = N * recon - x
        let total = bow.total();
        let mut dlogits: Vec<f64> = fwd.recon.iter().map(|&p| loss_scale * total * p).collect();
        for &(w, c) in &bow.entries {
            dlogits[w] -= loss_scale * c;
        }
        grad.phi_w.add_outer_block(0, &dlogits, &st.theta);
        grad.phi_b.add_vec(&dlogits);
        let mut dtheta = vec![0.0; k];
        self.phi_w.gemv_t_block(0, &dlogits, &mut dtheta);
        if let Some(extra) = dtheta_extra {
            for (d, e) in dtheta.iter_mut().zip(extra) {
                *d += e;
            }
        }

        // theta = softmax(relu(W z + b))
        let dact = softmax_backward(&st.theta, &dtheta);
        let dpre: Vec<f64> = dact
            .iter()
            .zip(&fwd.theta_pre)
            .map(|(d, &p)| if p > 0.0 { *d } else { 0.0 })
            .collect();
        grad.theta_w.add_outer_block(0, &dpre, &st.z);
        grad.theta_b.add_vec(&dpre);
        let mut dz = vec![0.0; k];
        self.theta_w.gemv_t_block(0, &dpre, &mut dz);

        // z = mu + exp(log_sigma) * eps, plus the closed-form KL terms
        let mut dmu = dz.clone();
        let mut dls = vec![0.0; k];
        if let Some(noise) = &fwd.noise {
            for i in 0..k {
                dls[i] += dz[i] * st.log_sigma[i].exp() * noise[i];
            }
        }
        for i in 0..k {
            dmu[i] += loss_scale * st.mu[i];
            dls[i] += loss_scale * ((2.0 * st.log_sigma[i]).exp() - 1.0);
        }
        grad.mu_w.add_outer_block(0, &dmu, &fwd.enc_h);
        grad.mu_b.add_vec(&dmu);
        grad.sigma_w.add_outer_block(0, &dls, &fwd.enc_h);
        grad.sigma_b.add_vec(&dls);

        let e = fwd.enc_h.len();
        let mut dh = vec![0.0; e];
        self.mu_w.gemv_t_block(0, &dmu, &mut dh);
        self.sigma_w.gemv_t_block(0, &dls, &mut dh);
        for (d, &p) in dh.iter_mut().zip(&fwd.enc_pre) {
            if p <= 0.0 {
                *d = 0.0;
            }
        }
        grad.enc_b.add_vec(&dh);
        for &(w, c) in &bow.entries {
            for (r, &d) in dh.iter().enumerate() {
                if d != 0.0 {
                    let cur = grad.enc_w.get(r, w);
                    grad.enc_w.set(r, w, cur + d * c);
                }
            }
        }
    }

    /// For each topic, the `n` BoW words with the largest weight in that
    /// topic's column, descending; ties broken lexicographically.
    pub fn top_topic_words(&self, words: &[String], n: usize) -> Vec<Vec<String>> {
        (0..self.topics())
            .map(|k| {
                let mut idx: Vec<usize> = (0..self.phi_w.rows()).collect();
                idx.sort_by(|&a, &b| {
                    self.phi_w
                        .get(b, k)
                        .total_cmp(&self.phi_w.get(a, k))
                        .then_with(|| words[a].cmp(&words[b]))
                });
                idx.into_iter().take(n).map(|i| words[i].clone()).collect()
            })
            .collect()
    }

    /// Per-topic word distributions `softmax(phi_w[:, k])`, for display only.
    pub fn topic_word_distributions(&self) -> Vec<Vec<f64>> {
        (0..self.topics())
            .map(|k| {
                let col: Vec<f64> = (0..self.phi_w.rows()).map(|w| self.phi_w.get(w, k)).collect();
                softmax(&col)
            })
            .collect()
    }
}

pub fn reparameterize(mu: &[f64], log_sigma: &[f64], noise: Option<&[f64]>) -> Vec<f64> {
    match noise {
        None => mu.to_vec(),
        Some(eps) => mu
            .iter()
            .zip(log_sigma)
            .zip(eps)
            .map(|((m, ls), e)| m + ls.exp() * e)
            .collect(),
    }
}

/// Closed-form `KL(N(mu, sigma^2) || N(0, I))` and the multinomial
/// reconstruction negative log-likelihood.
pub fn ntm_loss(bow: &Bow, mu: &[f64], log_sigma: &[f64], recon: &[f64]) -> Result<NtmLoss> {
    let kl = 0.5
        * mu
            .iter()
            .zip(log_sigma)
            .map(|(m, ls)| m * m + (2.0 * ls).exp() - 1.0 - 2.0 * ls)
            .sum::<f64>();
    let nll = -bow
        .entries
        .iter()
        .map(|&(w, c)| c * recon[w].ln())
        .sum::<f64>();
    if !kl.is_finite() || !nll.is_finite() {
        return Err(Error::NonFinite("ntm loss"));
    }
    Ok(NtmLoss { kl, nll })
}

impl ParamSet for NtmParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("enc_w".into(), &self.enc_w),
            ("enc_b".into(), &self.enc_b),
            ("mu_w".into(), &self.mu_w),
            ("mu_b".into(), &self.mu_b),
            ("sigma_w".into(), &self.sigma_w),
            ("sigma_b".into(), &self.sigma_b),
            ("theta_w".into(), &self.theta_w),
            ("theta_b".into(), &self.theta_b),
            ("phi_w".into(), &self.phi_w),
            ("phi_b".into(), &self.phi_b),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("enc_w".into(), &mut self.enc_w),
            ("enc_b".into(), &mut self.enc_b),
            ("mu_w".into(), &mut self.mu_w),
            ("mu_b".into(), &mut self.mu_b),
            ("sigma_w".into(), &mut self.sigma_w),
            ("sigma_b".into(), &mut self.sigma_b),
            ("theta_w".into(), &mut self.theta_w),
            ("theta_b".into(), &mut self.theta_b),
            ("phi_w".into(), &mut self.phi_w),
            ("phi_b".into(), &mut self.phi_b),
        ]
    }
}

/// Sanity check used by training to surface exploding parameters.
pub fn check_state(state: &TopicState) -> Result<()> {
    if all_finite(&state.mu) && all_finite(&state.log_sigma) && all_finite(&state.theta) {
        Ok(())
    } else {
        Err(Error::NonFinite("topic state"))
    }
}
