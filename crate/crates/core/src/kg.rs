//! Topic-aware sequence-to-sequence keyphrase generator with a copy switch.
//!
//! Source tokens are embedded and run through stacked bidirectional GRUs to
//! form the memory bank. A unidirectional GRU decoder consumes
//! `[u_j; theta]`, attends over the bank with a topic-calibrated additive
//! score, and mixes a vocabulary softmax with the attention distribution
//! scattered onto source token ids:
//!
//! ```text
//! p_j = lambda_j * p_gen + (1 - lambda_j) * scatter(alpha_j)
//! ```
//!
//! Out-of-vocabulary source tokens live at extended ids `seq_size..`, so
//! they can only receive copy mass.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gru::{GruCell, GruStep};
use crate::params::ParamSet;
use crate::tensor::{all_finite, concat, dot, sigmoid, softmax, softmax_backward, Tensor};
use crate::vocab::UNK;

/// Floor applied inside `log` so a vanishing target probability cannot
/// produce an infinite loss.
pub const PROB_FLOOR: f64 = 1e-12;

/// Which inputs receive the topic mixture.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TopicFlags {
    /// `theta` concatenated to the decoder GRU input.
    pub topic_state: bool,
    /// `theta` inside the attention score.
    pub topic_attn: bool,
    /// `theta` inside the copy switch.
    pub topic_switch: bool,
}

impl TopicFlags {
    pub const FULL: Self = Self {
        topic_state: true,
        topic_attn: true,
        topic_switch: true,
    };

    pub const NONE: Self = Self {
        topic_state: false,
        topic_attn: false,
        topic_switch: false,
    };

    pub fn without_topic_attn(self) -> Self {
        Self {
            topic_attn: false,
            ..self
        }
    }

    /// Drops `theta` from the decoder state and, tied to it, the switch.
    pub fn without_topic_state(self) -> Self {
        Self {
            topic_state: false,
            topic_switch: false,
            ..self
        }
    }

    pub fn uses_topics(&self) -> bool {
        self.topic_state || self.topic_attn || self.topic_switch
    }
}

impl Default for TopicFlags {
    fn default() -> Self {
        Self::FULL
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KgConfig {
    pub seq_size: usize,
    pub embed: usize,
    /// Decoder hidden size; each encoder direction uses half of it.
    pub hidden: usize,
    pub enc_layers: usize,
    /// Rows of the attention projection.
    pub attn: usize,
    pub topics: usize,
    pub flags: TopicFlags,
}

impl KgConfig {
    pub fn new(seq_size: usize, topics: usize) -> Self {
        Self {
            seq_size,
            embed: 150,
            hidden: 300,
            enc_layers: 2,
            attn: 300,
            topics,
            flags: TopicFlags::FULL,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || !self.hidden.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "hidden size must be a positive even number, got {}",
                self.hidden
            )));
        }
        if self.seq_size < 4 || self.embed == 0 || self.attn == 0 || self.enc_layers == 0 {
            return Err(Error::InvalidConfig("degenerate generator dimensions".into()));
        }
        if self.flags.uses_topics() && self.topics == 0 {
            return Err(Error::InvalidConfig("topic flags set but no topics".into()));
        }
        Ok(())
    }

    fn width(&self, on: bool) -> usize {
        if on {
            self.topics
        } else {
            0
        }
    }

    pub fn decoder_input(&self) -> usize {
        self.embed + self.width(self.flags.topic_state)
    }

    pub fn attn_input(&self) -> usize {
        2 * self.hidden + self.width(self.flags.topic_attn)
    }

    pub fn switch_input(&self) -> usize {
        self.embed + 2 * self.hidden + self.width(self.flags.topic_switch)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiGru {
    pub fwd: GruCell,
    pub bwd: GruCell,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KgParams {
    pub config: KgConfig,
    /// Shared between encoder and decoder.
    pub embedding: Tensor,
    pub encoder: Vec<BiGru>,
    pub bridge_w: Tensor,
    pub bridge_b: Tensor,
    pub decoder: GruCell,
    /// Columns are `[h_i; s_j; theta]`.
    pub attn_w: Tensor,
    pub attn_b: Tensor,
    pub attn_v: Tensor,
    /// Columns are `[s_j; c_j]`.
    pub gen_w: Tensor,
    pub gen_b: Tensor,
    /// Columns are `[u_j; s_j; c_j; theta]`.
    pub switch_w: Tensor,
    pub switch_b: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank {
    pub states: Vec<Vec<f64>>,
}

impl MemoryBank {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Encoder result plus the activations its backward pass needs.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub bank: MemoryBank,
    pub s0: Vec<f64>,
    /// `W_alpha[:, h-block] h_i`, reused at every decoding step.
    keys: Vec<Vec<f64>>,
    layers: Vec<(Vec<GruStep>, Vec<GruStep>)>,
    bridge_in: Vec<f64>,
    embed_rows: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderStepOutput {
    pub s: Vec<f64>,
    pub alpha: Vec<f64>,
    pub context: Vec<f64>,
    pub p_gen: Vec<f64>,
    pub lambda: f64,
    /// Mixture over `seq_size + n_oov` ids.
    pub p: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct StepCache {
    pub out: DecoderStepOutput,
    embed_row: usize,
    gru: GruStep,
    attn_act: Vec<Vec<f64>>,
    switch_in: Vec<f64>,
}

/// Teacher-forced pass over one training instance.
#[derive(Clone, Debug)]
pub struct InstanceForward {
    pub encoded: Encoded,
    pub steps: Vec<StepCache>,
    pub targets: Vec<usize>,
    /// `-sum_j log max(p_j[y_j], floor)`
    pub loss: f64,
}

impl InstanceForward {
    pub fn tokens(&self) -> usize {
        self.targets.len()
    }
}

/// Embedding row for a possibly extended id.
pub fn embed_row(id: usize, seq_size: usize) -> usize {
    if id < seq_size {
        id
    } else {
        UNK
    }
}

/// Attention mass accumulated per (extended) vocabulary id.
pub fn copy_scatter(alpha: &[f64], source_ids: &[usize], seq_size: usize, n_oov: usize) -> Vec<f64> {
    let mut out = vec![0.0; seq_size + n_oov];
    for (&a, &id) in alpha.iter().zip(source_ids) {
        out[id] += a;
    }
    out
}

impl KgParams {
    pub fn new<R: Rng + ?Sized>(config: KgConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let KgConfig {
            seq_size: vs,
            embed: d,
            hidden: h,
            attn: a,
            ..
        } = config;
        let half = h / 2;
        let s = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
        let embedding = Tensor::uniform(vs, d, 0.1, rng);
        let encoder = (0..config.enc_layers)
            .map(|l| {
                let input = if l == 0 { d } else { h };
                BiGru {
                    fwd: GruCell::new(input, half, rng),
                    bwd: GruCell::new(input, half, rng),
                }
            })
            .collect();
        Ok(Self {
            config,
            embedding,
            encoder,
            bridge_w: Tensor::uniform(h, h, s(h), rng),
            bridge_b: Tensor::vector(h),
            decoder: GruCell::new(config.decoder_input(), h, rng),
            attn_w: Tensor::uniform(a, config.attn_input(), s(config.attn_input()), rng),
            attn_b: Tensor::vector(a),
            attn_v: Tensor::uniform(a, 1, s(a), rng),
            gen_w: Tensor::uniform(vs, 2 * h, s(2 * h), rng),
            gen_b: Tensor::vector(vs),
            switch_w: Tensor::uniform(1, config.switch_input(), s(config.switch_input()), rng),
            switch_b: Tensor::vector(1),
        })
    }

    pub fn zeros(config: KgConfig) -> Result<Self> {
        config.validate()?;
        let KgConfig {
            seq_size: vs,
            embed: d,
            hidden: h,
            attn: a,
            ..
        } = config;
        let encoder = (0..config.enc_layers)
            .map(|l| {
                let input = if l == 0 { d } else { h };
                BiGru {
                    fwd: GruCell::zeros(input, h / 2),
                    bwd: GruCell::zeros(input, h / 2),
                }
            })
            .collect();
        Ok(Self {
            config,
            embedding: Tensor::zeros(vs, d),
            encoder,
            bridge_w: Tensor::zeros(h, h),
            bridge_b: Tensor::vector(h),
            decoder: GruCell::zeros(config.decoder_input(), h),
            attn_w: Tensor::zeros(a, config.attn_input()),
            attn_b: Tensor::vector(a),
            attn_v: Tensor::vector(a),
            gen_w: Tensor::zeros(vs, 2 * h),
            gen_b: Tensor::vector(vs),
            switch_w: Tensor::zeros(1, config.switch_input()),
            switch_b: Tensor::vector(1),
        })
    }

    fn hidden(&self) -> usize {
        self.config.hidden
    }

    fn theta_for<'a>(&self, on: bool, theta: Option<&'a [f64]>) -> Result<Option<&'a [f64]>> {
        if !on {
            return Ok(None);
        }
        match theta {
            Some(t) if t.len() == self.config.topics => Ok(Some(t)),
            Some(t) => Err(Error::ShapeMismatch {
                what: "theta",
                expected: self.config.topics,
                got: t.len(),
            }),
            None => Err(Error::InvalidConfig(
                "generator uses topics but no theta was supplied".into(),
            )),
        }
    }

    /// Runs the stacked bidirectional encoder and the decoder bridge.
    pub fn encode(&self, source_ids: &[usize], n_oov: usize) -> Result<Encoded> {
        if source_ids.is_empty() {
            return Err(Error::ShapeMismatch {
                what: "source length",
                expected: 1,
                got: 0,
            });
        }
        let limit = self.config.seq_size + n_oov;
        if let Some(&bad) = source_ids.iter().find(|&&id| id >= limit) {
            return Err(Error::ShapeMismatch {
                what: "source id",
                expected: limit,
                got: bad,
            });
        }
        let n = source_ids.len();
        let half = self.hidden() / 2;
        let embed_rows: Vec<usize> = source_ids
            .iter()
            .map(|&id| embed_row(id, self.config.seq_size))
            .collect();
        let mut inputs: Vec<Vec<f64>> = embed_rows
            .iter()
            .map(|&r| self.embedding.row(r).to_vec())
            .collect();

        let mut layers = Vec::with_capacity(self.encoder.len());
        for layer in &self.encoder {
            let mut fwd = Vec::with_capacity(n);
            let mut h = vec![0.0; half];
            for x in &inputs {
                let step = layer.fwd.forward(x, &h);
                h.clone_from(&step.h);
                fwd.push(step);
            }
            let mut bwd = Vec::with_capacity(n);
            let mut h = vec![0.0; half];
            for x in inputs.iter().rev() {
                let step = layer.bwd.forward(x, &h);
                h.clone_from(&step.h);
                bwd.push(step);
            }
            bwd.reverse();
            inputs = fwd
                .iter()
                .zip(&bwd)
                .map(|(f, b)| concat(&[&f.h, &b.h]))
                .collect();
            layers.push((fwd, bwd));
        }

        let (top_fwd, top_bwd) = layers.last().expect("at least one encoder layer");
        let bridge_in = concat(&[&top_fwd[n - 1].h, &top_bwd[0].h]);
        let s0: Vec<f64> = self
            .bridge_w
            .affine(&self.bridge_b, &bridge_in)
            .into_iter()
            .map(f64::tanh)
            .collect();

        let a = self.config.attn;
        let keys = inputs
            .iter()
            .map(|h| {
                let mut k = vec![0.0; a];
                self.attn_w.gemv_block(0, h, &mut k);
                k
            })
            .collect();

        Ok(Encoded {
            bank: MemoryBank { states: inputs },
            s0,
            keys,
            layers,
            bridge_in,
            embed_rows,
        })
    }

    /// Unnormalized attention score `v . tanh(W [h; s; theta] + b)`.
    pub fn attention_score(&self, h: &[f64], s: &[f64], theta: Option<&[f64]>) -> Result<f64> {
        let theta = self.theta_for(self.config.flags.topic_attn, theta)?;
        let input = match theta {
            Some(t) => concat(&[h, s, t]),
            None => concat(&[h, s]),
        };
        let act: Vec<f64> = self
            .attn_w
            .affine(&self.attn_b, &input)
            .into_iter()
            .map(f64::tanh)
            .collect();
        Ok(dot(self.attn_v.data(), &act))
    }

    /// One decoding step from the previous state `s_prev` given the
    /// (possibly extended) id of the previous token.
    pub fn decoder_step(
        &self,
        enc: &Encoded,
        source_ids: &[usize],
        n_oov: usize,
        input_id: usize,
        theta: Option<&[f64]>,
        s_prev: &[f64],
    ) -> Result<StepCache> {
        let cfg = &self.config;
        let h = self.hidden();
        let theta_state = self.theta_for(cfg.flags.topic_state, theta)?;
        let theta_attn = self.theta_for(cfg.flags.topic_attn, theta)?;
        let theta_switch = self.theta_for(cfg.flags.topic_switch, theta)?;

        let embed_row = embed_row(input_id, cfg.seq_size);
        let u = self.embedding.row(embed_row).to_vec();
        let x = match theta_state {
            Some(t) => concat(&[&u, t]),
            None => u.clone(),
        };
        let gru = self.decoder.forward(&x, s_prev);
        let s = gru.h.clone();

        let mut query = self.attn_b.data().to_vec();
        self.attn_w.gemv_block(h, &s, &mut query);
        if let Some(t) = theta_attn {
            self.attn_w.gemv_block(2 * h, t, &mut query);
        }
        let mut scores = Vec::with_capacity(enc.keys.len());
        let mut attn_act = Vec::with_capacity(enc.keys.len());
        for key in &enc.keys {
            let act: Vec<f64> = key.iter().zip(&query).map(|(k, q)| (k + q).tanh()).collect();
            scores.push(dot(self.attn_v.data(), &act));
            attn_act.push(act);
        }
        let alpha = softmax(&scores);
        let mut context = vec![0.0; h];
        for (a, hi) in alpha.iter().zip(&enc.bank.states) {
            for (c, v) in context.iter_mut().zip(hi) {
                *c += a * v;
            }
        }

        let sc = concat(&[&s, &context]);
        let p_gen = softmax(&self.gen_w.affine(&self.gen_b, &sc));

        let switch_in = match theta_switch {
            Some(t) => concat(&[&u, &s, &context, t]),
            None => concat(&[&u, &s, &context]),
        };
        let lambda = sigmoid(dot(self.switch_w.data(), &switch_in) + self.switch_b.get(0, 0));

        let mut p = copy_scatter(&alpha, source_ids, cfg.seq_size, n_oov);
        for v in p.iter_mut() {
            *v *= 1.0 - lambda;
        }
        for (pv, g) in p.iter_mut().zip(&p_gen) {
            *pv += lambda * g;
        }

        if !all_finite(&p) || !all_finite(&s) {
            return Err(Error::NonFinite("decoder step"));
        }
        Ok(StepCache {
            out: DecoderStepOutput {
                s,
                alpha,
                context,
                p_gen,
                lambda,
                p,
            },
            embed_row,
            gru,
            attn_act,
            switch_in,
        })
    }

    /// Teacher-forced forward pass. `target_ids` is `BOS ... EOS`; step `j`
    /// reads `target_ids[j]` and predicts `target_ids[j + 1]`.
    pub fn forward_instance(
        &self,
        source_ids: &[usize],
        n_oov: usize,
        target_ids: &[usize],
        theta: Option<&[f64]>,
    ) -> Result<InstanceForward> {
        if target_ids.len() < 2 {
            return Err(Error::ShapeMismatch {
                what: "target length",
                expected: 2,
                got: target_ids.len(),
            });
        }
        let limit = self.config.seq_size + n_oov;
        if let Some(&bad) = target_ids.iter().find(|&&id| id >= limit) {
            return Err(Error::ShapeMismatch {
                what: "target id",
                expected: limit,
                got: bad,
            });
        }
        let encoded = self.encode(source_ids, n_oov)?;
        let mut s = encoded.s0.clone();
        let mut steps = Vec::with_capacity(target_ids.len() - 1);
        let mut loss = 0.0;
        for w in target_ids.windows(2) {
            let step = self.decoder_step(&encoded, source_ids, n_oov, w[0], theta, &s)?;
            loss -= step.out.p[w[1]].max(PROB_FLOOR).ln();
            s.clone_from(&step.out.s);
            steps.push(step);
        }
        Ok(InstanceForward {
            encoded,
            steps,
            targets: target_ids[1..].to_vec(),
            loss,
        })
    }

    /// Negative log-likelihood of one instance under teacher forcing.
    pub fn kg_loss(
        &self,
        source_ids: &[usize],
        n_oov: usize,
        target_ids: &[usize],
        theta: Option<&[f64]>,
    ) -> Result<f64> {
        Ok(self.forward_instance(source_ids, n_oov, target_ids, theta)?.loss)
    }

    /// Backpropagates `scale * fwd.loss` into `grad`. Returns the gradient
    /// with respect to `theta` (all zeros when no block consumes it).
    pub fn backward_instance(
        &self,
        fwd: &InstanceForward,
        source_ids: &[usize],
        theta: Option<&[f64]>,
        scale: f64,
        grad: &mut KgParams,
    ) -> Vec<f64> {
        let cfg = &self.config;
        let h = self.hidden();
        let d = cfg.embed;
        let k = cfg.topics;
        let n = source_ids.len();
        let enc = &fwd.encoded;
        let mut dtheta = vec![0.0; k];
        let mut dbank = vec![vec![0.0; h]; n];
        let mut dkeys = vec![vec![0.0; cfg.attn]; n];
        let mut ds_next = vec![0.0; h];

        for (step, &target) in fwd.steps.iter().zip(&fwd.targets).rev() {
            let out = &step.out;
            let mut ds = std::mem::take(&mut ds_next);
            let mut dc = vec![0.0; h];
            let mut du = vec![0.0; d];
            let mut dalpha = vec![0.0; n];

            let prob = out.p[target];
            if prob >= PROB_FLOOR {
                let g = -scale / prob;
                let lambda = out.lambda;
                let gen_t = if target < cfg.seq_size { out.p_gen[target] } else { 0.0 };
                let copy_t: f64 = out
                    .alpha
                    .iter()
                    .zip(source_ids)
                    .filter(|(_, &id)| id == target)
                    .map(|(a, _)| a)
                    .sum();

                if target < cfg.seq_size {
                    let coef = g * lambda * gen_t;
                    let mut dlogits: Vec<f64> = out.p_gen.iter().map(|&q| -coef * q).collect();
                    dlogits[target] += coef;
                    let sc = concat(&[&out.s, &out.context]);
                    grad.gen_w.add_outer_block(0, &dlogits, &sc);
                    grad.gen_b.add_vec(&dlogits);
                    self.gen_w.gemv_t_block(0, &dlogits, &mut ds);
                    self.gen_w.gemv_t_block(h, &dlogits, &mut dc);
                }

                let dz = g * (gen_t - copy_t) * lambda * (1.0 - lambda);
                grad.switch_w.add_outer_block(0, &[dz], &step.switch_in);
                grad.switch_b.data_mut()[0] += dz;
                let w = self.switch_w.data();
                for i in 0..d {
                    du[i] += dz * w[i];
                }
                for i in 0..h {
                    ds[i] += dz * w[d + i];
                    dc[i] += dz * w[d + h + i];
                }
                if cfg.flags.topic_switch {
                    for i in 0..k {
                        dtheta[i] += dz * w[d + 2 * h + i];
                    }
                }

                for (i, &id) in source_ids.iter().enumerate() {
                    if id == target {
                        dalpha[i] += g * (1.0 - lambda);
                    }
                }
            }

            // context = sum_i alpha_i h_i
            for i in 0..n {
                dalpha[i] += dot(&dc, &enc.bank.states[i]);
                let a = out.alpha[i];
                for (db, c) in dbank[i].iter_mut().zip(&dc) {
                    *db += a * c;
                }
            }

            let dscores = softmax_backward(&out.alpha, &dalpha);
            let mut dquery = vec![0.0; cfg.attn];
            {
                let v = self.attn_v.data();
                let dv = grad.attn_v.data_mut();
                for i in 0..n {
                    let act = &step.attn_act[i];
                    for r in 0..cfg.attn {
                        dv[r] += dscores[i] * act[r];
                        let dpre = dscores[i] * v[r] * (1.0 - act[r] * act[r]);
                        dkeys[i][r] += dpre;
                        dquery[r] += dpre;
                    }
                }
            }
            grad.attn_b.add_vec(&dquery);
            grad.attn_w.add_outer_block(h, &dquery, &out.s);
            self.attn_w.gemv_t_block(h, &dquery, &mut ds);
            if cfg.flags.topic_attn {
                if let Some(t) = theta {
                    grad.attn_w.add_outer_block(2 * h, &dquery, t);
                    self.attn_w.gemv_t_block(2 * h, &dquery, &mut dtheta);
                }
            }

            let mut dx = vec![0.0; cfg.decoder_input()];
            let mut ds_prev = vec![0.0; h];
            self.decoder
                .backward(&step.gru, &ds, &mut grad.decoder, &mut dx, &mut ds_prev);
            for i in 0..d {
                du[i] += dx[i];
            }
            if cfg.flags.topic_state {
                for i in 0..k {
                    dtheta[i] += dx[d + i];
                }
            }
            for (e, g) in grad.embedding.row_mut(step.embed_row).iter_mut().zip(&du) {
                *e += g;
            }
            ds_next = ds_prev;
        }

        // keys_i = W_alpha[:, h-block] h_i
        for i in 0..n {
            grad.attn_w.add_outer_block(0, &dkeys[i], &enc.bank.states[i]);
            self.attn_w.gemv_t_block(0, &dkeys[i], &mut dbank[i]);
        }

        // s0 = tanh(W_bridge [fwd_last; bwd_first] + b)
        let dpre: Vec<f64> = ds_next
            .iter()
            .zip(&enc.s0)
            .map(|(g, s)| g * (1.0 - s * s))
            .collect();
        grad.bridge_w.add_outer_block(0, &dpre, &enc.bridge_in);
        grad.bridge_b.add_vec(&dpre);
        let mut dbridge = vec![0.0; h];
        self.bridge_w.gemv_t_block(0, &dpre, &mut dbridge);
        let half = h / 2;
        for i in 0..half {
            dbank[n - 1][i] += dbridge[i];
            dbank[0][half + i] += dbridge[half + i];
        }

        let mut dout = dbank;
        for (l, layer) in self.encoder.iter().enumerate().rev() {
            let (fwd_steps, bwd_steps) = &enc.layers[l];
            let input = fwd_steps[0].x.len();
            let mut dinput = vec![vec![0.0; input]; n];
            let lg = &mut grad.encoder[l];

            let mut carry = vec![0.0; half];
            for i in (0..n).rev() {
                let dh: Vec<f64> = dout[i][..half].iter().zip(&carry).map(|(a, b)| a + b).collect();
                let mut dprev = vec![0.0; half];
                layer
                    .fwd
                    .backward(&fwd_steps[i], &dh, &mut lg.fwd, &mut dinput[i], &mut dprev);
                carry = dprev;
            }
            let mut carry = vec![0.0; half];
            for i in 0..n {
                let dh: Vec<f64> = dout[i][half..].iter().zip(&carry).map(|(a, b)| a + b).collect();
                let mut dprev = vec![0.0; half];
                layer
                    .bwd
                    .backward(&bwd_steps[i], &dh, &mut lg.bwd, &mut dinput[i], &mut dprev);
                carry = dprev;
            }
            dout = dinput;
        }
        for (i, &row) in enc.embed_rows.iter().enumerate() {
            for (e, g) in grad.embedding.row_mut(row).iter_mut().zip(&dout[i]) {
                *e += g;
            }
        }
        dtheta
    }
}

impl ParamSet for KgParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![("embedding".into(), &self.embedding)];
        for (l, layer) in self.encoder.iter().enumerate() {
            for (dir, cell) in [("fwd", &layer.fwd), ("bwd", &layer.bwd)] {
                for (name, t) in cell.tensors() {
                    out.push((format!("encoder.{l}.{dir}.{name}"), t));
                }
            }
        }
        out.push(("bridge_w".into(), &self.bridge_w));
        out.push(("bridge_b".into(), &self.bridge_b));
        for (name, t) in self.decoder.tensors() {
            out.push((format!("decoder.{name}"), t));
        }
        out.extend([
            ("attn_w".to_string(), &self.attn_w),
            ("attn_b".to_string(), &self.attn_b),
            ("attn_v".to_string(), &self.attn_v),
            ("gen_w".to_string(), &self.gen_w),
            ("gen_b".to_string(), &self.gen_b),
            ("switch_w".to_string(), &self.switch_w),
            ("switch_b".to_string(), &self.switch_b),
        ]);
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![("embedding".into(), &mut self.embedding)];
        for (l, layer) in self.encoder.iter_mut().enumerate() {
            for (name, t) in layer.fwd.tensors_mut() {
                out.push((format!("encoder.{l}.fwd.{name}"), t));
            }
            for (name, t) in layer.bwd.tensors_mut() {
                out.push((format!("encoder.{l}.bwd.{name}"), t));
            }
        }
        out.push(("bridge_w".into(), &mut self.bridge_w));
        out.push(("bridge_b".into(), &mut self.bridge_b));
        for (name, t) in self.decoder.tensors_mut() {
            out.push((format!("decoder.{name}"), t));
        }
        out.extend([
            ("attn_w".to_string(), &mut self.attn_w),
            ("attn_b".to_string(), &mut self.attn_b),
            ("attn_v".to_string(), &mut self.attn_v),
            ("gen_w".to_string(), &mut self.gen_w),
            ("gen_b".to_string(), &mut self.gen_b),
            ("switch_w".to_string(), &mut self.switch_w),
            ("switch_b".to_string(), &mut self.switch_b),
        ]);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(flags: TopicFlags) -> KgConfig {
        KgConfig {
            seq_size: 10,
            embed: 5,
            hidden: 6,
            enc_layers: 2,
            attn: 4,
            topics: 3,
            flags,
        }
    }

    fn random(flags: TopicFlags, seed: u64) -> KgParams {
        KgParams::new(tiny(flags), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    const THETA: [f64; 3] = [0.2, 0.5, 0.3];

    #[test]
    fn single_token_source_has_unit_attention() {
        let p = random(TopicFlags::FULL, 1);
        let enc = p.encode(&[7], 0).unwrap();
        assert_eq!(enc.bank.len(), 1);
        let step = p.decoder_step(&enc, &[7], 0, 2, Some(&THETA), &enc.s0).unwrap();
        assert_eq!(step.out.alpha, vec![1.0]);
    }

    #[test]
    fn zero_encoder_gives_zero_bank() {
        let p = KgParams::zeros(tiny(TopicFlags::FULL)).unwrap();
        let enc = p.encode(&[4, 5, 6], 0).unwrap();
        assert!(enc.bank.states.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_attention_vector_is_uniform() {
        let mut p = random(TopicFlags::FULL, 2);
        p.attn_v.fill(0.0);
        let src = [4, 5, 6, 8];
        let enc = p.encode(&src, 0).unwrap();
        let step = p.decoder_step(&enc, &src, 0, 2, Some(&THETA), &enc.s0).unwrap();
        for a in &step.out.alpha {
            assert!((a - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_switch_weights_give_half() {
        let mut p = random(TopicFlags::FULL, 3);
        p.switch_w.fill(0.0);
        p.switch_b.fill(0.0);
        let enc = p.encode(&[4, 5], 0).unwrap();
        let step = p.decoder_step(&enc, &[4, 5], 0, 2, Some(&THETA), &enc.s0).unwrap();
        assert_eq!(step.out.lambda, 0.5);
    }

    #[test]
    fn saturated_switch_reduces_to_generation() {
        let mut p = random(TopicFlags::FULL, 4);
        p.switch_w.fill(0.0);
        p.switch_b.fill(1e3);
        let src = [10, 5];
        let enc = p.encode(&src, 1).unwrap();
        let step = p.decoder_step(&enc, &src, 1, 2, Some(&THETA), &enc.s0).unwrap();
        assert_eq!(step.out.lambda, 1.0);
        assert_eq!(&step.out.p[..10], &step.out.p_gen[..]);
        assert_eq!(step.out.p[10], 0.0);
    }

    #[test]
    fn attention_score_matches_precomputed_path() {
        let p = random(TopicFlags::FULL, 5);
        let src = [4, 6, 9];
        let enc = p.encode(&src, 0).unwrap();
        let step = p.decoder_step(&enc, &src, 0, 2, Some(&THETA), &enc.s0).unwrap();
        let scores: Vec<f64> = enc
            .bank
            .states
            .iter()
            .map(|h| p.attention_score(h, &step.out.s, Some(&THETA)).unwrap())
            .collect();
        let alpha = softmax(&scores);
        for (a, b) in alpha.iter().zip(&step.out.alpha) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn copy_scatter_accumulates_duplicates() {
        assert_eq!(copy_scatter(&[0.6, 0.4], &[5, 5], 8, 0)[5], 1.0);
        let out = copy_scatter(&[0.3, 0.7], &[8, 9], 8, 2);
        assert_eq!(&out[..8], &[0.0; 8]);
        assert_eq!(&out[8..], &[0.3, 0.7]);
    }

    #[test]
    fn missing_theta_is_an_error() {
        let p = random(TopicFlags::FULL, 6);
        let enc = p.encode(&[4], 0).unwrap();
        assert!(p.decoder_step(&enc, &[4], 0, 2, None, &enc.s0).is_err());
    }

    #[test]
    fn bad_ids_are_rejected() {
        let p = random(TopicFlags::FULL, 7);
        assert!(matches!(p.encode(&[], 0), Err(Error::ShapeMismatch { .. })));
        assert!(matches!(p.encode(&[10], 0), Err(Error::ShapeMismatch { .. })));
        assert!(p.encode(&[10], 1).is_ok());
    }

    #[test]
    fn uniform_steps_give_log_loss() {
        // all-zero parameters: p_gen and alpha uniform, lambda = 1/2
        let p = KgParams::zeros(tiny(TopicFlags::NONE)).unwrap();
        let src = [4, 5];
        let loss = p.kg_loss(&src, 0, &[2, 7, 3], None).unwrap();
        // neither 7 nor EOS is in the source, so each step has p = 0.5 * 0.1
        assert!((loss - 2.0 * (1.0f64 / 0.05).ln()).abs() < 1e-12);
    }
}
