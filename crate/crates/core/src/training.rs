//! Pretraining, joint optimization and early stopping.
//!
//! All randomness (batch order, latent noise) is derived from the root seed
//! so a run is reproducible bit for bit, independent of thread count:
//! per-batch gradients are computed over fixed chunks in parallel and summed
//! in chunk order.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::TrainingInstance;
use crate::error::{Error, Result};
use crate::kg::KgParams;
use crate::model::{Ablation, InstanceLoss, LossWeights, Objective, TopicKgModel};
use crate::ntm::NtmParams;
use crate::optim::{clip_global_norm, Adam, AdamConfig};
use crate::params::ParamSet;

const CHUNK: usize = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointMode {
    /// One step on the summed loss per batch.
    #[default]
    Combined,
    /// Each epoch is a topic-model pass, a generator pass, then a combined
    /// pass.
    #[serde(alias = "alternating")]
    AlternatingEpoch,
    /// The same three updates, cycled on every batch.
    AlternatingBatch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub clip_norm: f64,
    /// Weight of the generator loss in the joint objective.
    pub gamma: f64,
    pub ntm_pretrain_epochs: usize,
    pub kg_pretrain_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub seed: u64,
    pub joint_mode: JointMode,
    pub ablation: Ablation,
    pub max_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            clip_norm: 1.0,
            gamma: 1.0,
            ntm_pretrain_epochs: 100,
            kg_pretrain_epochs: 1,
            batch_size: 64,
            patience: 3,
            seed: 0,
            joint_mode: JointMode::Combined,
            ablation: Ablation::default(),
            max_epochs: 30,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
            return bad("clip_norm must be positive");
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be non-negative");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    NtmPretrain,
    KgPretrain,
    Joint,
}

impl Phase {
    fn tag(self) -> u64 {
        match self {
            Phase::NtmPretrain => 1,
            Phase::KgPretrain => 2,
            Phase::Joint => 3,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Phase::NtmPretrain => "ntm_pretrain",
            Phase::KgPretrain => "kg_pretrain",
            Phase::Joint => "joint",
        }
    }
}

/// Losses of one epoch: topic loss averaged per instance, generator loss
/// averaged per target token.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: Phase,
    /// 1-based within its phase.
    pub epoch: usize,
    pub ntm_loss: f64,
    pub kg_loss: f64,
    pub combined_loss: f64,
    pub dev_loss: Option<f64>,
    pub wall_time: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStopping,
    MaxEpochs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub stop_reason: StopReason,
    /// Joint epoch whose parameters were restored; `None` if no joint epoch
    /// ran.
    pub best_epoch: Option<usize>,
    pub best_dev_loss: Option<f64>,
}

impl TrainReport {
    pub fn joint_epochs(&self) -> impl Iterator<Item = &EpochRecord> {
        self.epochs.iter().filter(|e| e.phase == Phase::Joint)
    }
}

/// Totals over a set of instances.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossSums {
    pub ntm: f64,
    pub kg: f64,
    pub instances: usize,
    pub tokens: usize,
}

impl LossSums {
    fn add(&mut self, l: &InstanceLoss) {
        self.ntm += l.ntm;
        self.kg += l.kg;
        self.instances += 1;
        self.tokens += l.tokens;
    }

    fn merge(&mut self, o: &LossSums) {
        self.ntm += o.ntm;
        self.kg += o.kg;
        self.instances += o.instances;
        self.tokens += o.tokens;
    }

    pub fn ntm_mean(&self) -> f64 {
        self.ntm / self.instances.max(1) as f64
    }

    pub fn kg_mean(&self) -> f64 {
        self.kg / self.tokens.max(1) as f64
    }

    /// `ntm_mean + gamma * kg_mean` restricted to the terms `objective`
    /// evaluates.
    pub fn combined(&self, objective: Objective, gamma: f64) -> f64 {
        match objective {
            Objective::Ntm => self.ntm_mean(),
            Objective::Kg => self.kg_mean(),
            Objective::Joint => self.ntm_mean() + gamma * self.kg_mean(),
        }
    }
}

/// SplitMix64 finalizer.
fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives an independent stream seed from a root seed and a path of keys.
pub fn derive_seed(root: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(mix(root), |acc, &k| mix(acc ^ mix(k)))
}

/// The standard-normal draw used for instance `id` in a given pass.
pub fn instance_noise(seed: u64, phase: Phase, stream: usize, id: usize, topics: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[phase.tag(), stream as u64, id as u64]));
    (0..topics).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn topics_of(model: &TopicKgModel) -> usize {
    model.config.ntm.map_or(0, |c| c.topics)
}

/// Loss sums of `data` with deterministic topic mixtures.
pub fn evaluate_loss(model: &TopicKgModel, data: &[TrainingInstance], objective: Objective) -> Result<LossSums> {
    let losses: Vec<InstanceLoss> = data
        .par_iter()
        .map(|inst| model.instance_loss(inst, objective, None))
        .collect::<Result<_>>()?;
    let mut sums = LossSums::default();
    for l in &losses {
        sums.add(l);
    }
    Ok(sums)
}

/// Gradient of the weighted losses summed over `batch` (pairs of instance
/// id and instance).
pub fn batch_gradient(
    model: &TopicKgModel,
    batch: &[(usize, &TrainingInstance)],
    objective: Objective,
    weights: LossWeights,
    noise: &(dyn Fn(usize) -> Option<Vec<f64>> + Sync),
) -> Result<(TopicKgModel, LossSums)> {
    let parts: Vec<(TopicKgModel, LossSums)> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grad = model.zeros_like();
            let mut sums = LossSums::default();
            for &(id, inst) in chunk {
                let eps = noise(id);
                let l = model.accumulate_grad(inst, objective, eps.as_deref(), weights, &mut grad)?;
                sums.add(&l);
            }
            Ok((grad, sums))
        })
        .collect::<Result<_>>()?;
    let mut iter = parts.into_iter();
    let (mut grad, mut sums) = iter.next().expect("non-empty batch");
    for (g, s) in iter {
        grad.add_scaled(&g, 1.0);
        sums.merge(&s);
    }
    Ok((grad, sums))
}

/// One Adam state per component so that frozen parts never move.
#[derive(Clone, Debug)]
struct Optimizers {
    ntm: Option<Adam<NtmParams>>,
    kg: Adam<KgParams>,
}

impl Optimizers {
    fn new(model: &TopicKgModel, lr: f64) -> Self {
        let cfg = AdamConfig::with_lr(lr);
        Self {
            ntm: model.ntm.as_ref().map(|n| Adam::new(n, cfg)),
            kg: Adam::new(&model.kg, cfg),
        }
    }

    fn step(&mut self, model: &mut TopicKgModel, grad: &TopicKgModel, objective: Objective) {
        if matches!(objective, Objective::Ntm | Objective::Joint) {
            if let (Some(opt), Some(p), Some(g)) = (&mut self.ntm, &mut model.ntm, &grad.ntm) {
                opt.step(p, g);
            }
        }
        if matches!(objective, Objective::Kg | Objective::Joint) {
            self.kg.step(&mut model.kg, &grad.kg);
        }
    }
}

#[derive(Clone, Copy)]
struct EpochContext<'a> {
    cfg: &'a TrainConfig,
    phase: Phase,
    epoch: usize,
    /// Index of the pass within an epoch (alternating mode runs several).
    pass: usize,
}

impl EpochContext<'_> {
    /// Key for the random streams of this pass.
    fn stream(&self) -> usize {
        self.epoch * 4 + self.pass
    }
}

fn weights_for(objective: Objective, gamma: f64, instances: usize, tokens: usize) -> LossWeights {
    let per_inst = 1.0 / instances as f64;
    let per_tok = 1.0 / tokens.max(1) as f64;
    match objective {
        Objective::Ntm => LossWeights { ntm: per_inst, kg: 0.0 },
        Objective::Kg => LossWeights { ntm: 0.0, kg: per_tok },
        Objective::Joint => LossWeights {
            ntm: per_inst,
            kg: gamma * per_tok,
        },
    }
}

fn train_step(
    model: &mut TopicKgModel,
    opt: &mut Optimizers,
    batch: &[(usize, &TrainingInstance)],
    objective: Objective,
    ctx: &EpochContext,
) -> Result<LossSums> {
    let tokens: usize = batch.iter().map(|(_, i)| i.target_tokens()).sum();
    let weights = weights_for(objective, ctx.cfg.gamma, batch.len(), tokens);
    let topics = topics_of(model);
    let sampled = objective != Objective::Kg;
    let (seed, phase, stream) = (ctx.cfg.seed, ctx.phase, ctx.stream());
    let noise = move |id: usize| sampled.then(|| instance_noise(seed, phase, stream, id, topics));
    let diverged = || Error::Divergence {
        phase: ctx.phase.name().into(),
        epoch: ctx.epoch,
    };
    let (mut grad, sums) = batch_gradient(model, batch, objective, weights, &noise).map_err(|e| match e {
        Error::NonFinite(_) => diverged(),
        other => other,
    })?;
    if !grad.is_finite() || !sums.ntm.is_finite() || !sums.kg.is_finite() {
        return Err(diverged());
    }
    clip_global_norm(&mut grad, ctx.cfg.clip_norm);
    opt.step(model, &grad, objective);
    Ok(sums)
}

fn shuffled_order(n: usize, cfg: &TrainConfig, phase: Phase, stream: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[phase.tag(), stream as u64, u64::MAX]));
    order.shuffle(&mut rng);
    order
}

/// One pass over `data`; every batch runs each objective of `cycle` in
/// order. Returns the sums of the last objective.
fn run_epoch(
    model: &mut TopicKgModel,
    opt: &mut Optimizers,
    data: &[TrainingInstance],
    cycle: &[Objective],
    ctx: &EpochContext,
) -> Result<LossSums> {
    let order = shuffled_order(data.len(), ctx.cfg, ctx.phase, ctx.stream());
    let mut sums = LossSums::default();
    for ids in order.chunks(ctx.cfg.batch_size) {
        let batch: Vec<(usize, &TrainingInstance)> = ids.iter().map(|&i| (i, &data[i])).collect();
        for (n, &objective) in cycle.iter().enumerate() {
            let s = train_step(model, opt, &batch, objective, ctx)?;
            if n + 1 == cycle.len() {
                sums.merge(&s);
            }
        }
    }
    Ok(sums)
}

fn record(phase: Phase, epoch: usize, sums: &LossSums, objective: Objective, gamma: f64, start: Instant) -> EpochRecord {
    let (ntm_loss, kg_loss) = match objective {
        Objective::Ntm => (sums.ntm_mean(), 0.0),
        Objective::Kg => (0.0, sums.kg_mean()),
        Objective::Joint => (sums.ntm_mean(), sums.kg_mean()),
    };
    EpochRecord {
        phase,
        epoch,
        ntm_loss,
        kg_loss,
        combined_loss: sums.combined(objective, gamma),
        dev_loss: None,
        wall_time: start.elapsed().as_secs_f64(),
    }
}

fn check_data(train: &[TrainingInstance]) -> Result<()> {
    if train.is_empty() {
        return Err(Error::InvalidConfig("no training instances".into()));
    }
    Ok(())
}

/// Topic model alone for `ntm_pretrain_epochs`, then the generator alone
/// for `kg_pretrain_epochs` with deterministic mixtures from the frozen
/// topic model.
pub fn pretrain(
    mut model: TopicKgModel,
    train: &[TrainingInstance],
    cfg: &TrainConfig,
) -> Result<(TopicKgModel, Vec<EpochRecord>)> {
    cfg.validate()?;
    let mut records = Vec::new();
    if cfg.ntm_pretrain_epochs == 0 && cfg.kg_pretrain_epochs == 0 {
        return Ok((model, records));
    }
    check_data(train)?;
    let mut opt = Optimizers::new(&model, cfg.lr);
    if model.ntm.is_some() {
        for epoch in 1..=cfg.ntm_pretrain_epochs {
            let start = Instant::now();
            let ctx = EpochContext {
                cfg,
                phase: Phase::NtmPretrain,
                epoch,
                pass: 0,
            };
            let sums = run_epoch(&mut model, &mut opt, train, &[Objective::Ntm], &ctx)?;
            records.push(record(Phase::NtmPretrain, epoch, &sums, Objective::Ntm, cfg.gamma, start));
        }
    }
    for epoch in 1..=cfg.kg_pretrain_epochs {
        let start = Instant::now();
        let ctx = EpochContext {
            cfg,
            phase: Phase::KgPretrain,
            epoch,
            pass: 0,
        };
        let sums = run_epoch(&mut model, &mut opt, train, &[Objective::Kg], &ctx)?;
        records.push(record(Phase::KgPretrain, epoch, &sums, Objective::Kg, cfg.gamma, start));
    }
    Ok((model, records))
}

/// Called after every joint epoch with the epoch record, the current
/// parameters and whether they are the best so far on dev.
pub type EpochHook<'a> = dyn FnMut(&EpochRecord, &TopicKgModel, bool) -> Result<()> + 'a;

/// Joint optimization with early stopping on the dev combined loss. The
/// best-dev parameters are restored before returning.
pub fn joint_train(
    model: TopicKgModel,
    train: &[TrainingInstance],
    dev: &[TrainingInstance],
    cfg: &TrainConfig,
) -> Result<(TopicKgModel, TrainReport)> {
    joint_train_with(model, train, dev, cfg, &mut |_, _, _| Ok(()))
}

pub fn joint_train_with(
    mut model: TopicKgModel,
    train: &[TrainingInstance],
    dev: &[TrainingInstance],
    cfg: &TrainConfig,
    on_epoch: &mut EpochHook,
) -> Result<(TopicKgModel, TrainReport)> {
    cfg.validate()?;
    let mut report = TrainReport {
        epochs: Vec::new(),
        stop_reason: StopReason::MaxEpochs,
        best_epoch: None,
        best_dev_loss: None,
    };
    if cfg.max_epochs == 0 {
        return Ok((model, report));
    }
    check_data(train)?;
    let ntm_trainable = model.ntm.is_some() && !cfg.ablation.separate_train;
    let main = if ntm_trainable { Objective::Joint } else { Objective::Kg };
    let dev_objective = if model.ntm.is_some() { Objective::Joint } else { Objective::Kg };
    let (epoch_passes, batch_cycle): (Vec<Objective>, Vec<Objective>) = match (cfg.joint_mode, ntm_trainable) {
        (JointMode::AlternatingEpoch, true) => (vec![Objective::Ntm, Objective::Kg, Objective::Joint], vec![]),
        (JointMode::AlternatingBatch, true) => (
            vec![Objective::Joint],
            vec![Objective::Ntm, Objective::Kg, Objective::Joint],
        ),
        _ => (vec![main], vec![main]),
    };

    let mut opt = Optimizers::new(&model, cfg.lr);
    let mut best: Option<(f64, usize, TopicKgModel)> = None;
    let mut bad_epochs = 0;
    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        let ctx = EpochContext {
            cfg,
            phase: Phase::Joint,
            epoch,
            pass: 0,
        };
        let mut sums = LossSums::default();
        for (p, &pass) in epoch_passes.iter().enumerate() {
            let pass_ctx = EpochContext { pass: p, ..ctx };
            let cycle: &[Objective] = if batch_cycle.is_empty() { &[pass] } else { &batch_cycle };
            sums = run_epoch(&mut model, &mut opt, train, cycle, &pass_ctx)?;
        }
        let last = *epoch_passes.last().expect("at least one pass");
        let mut rec = record(Phase::Joint, epoch, &sums, last, cfg.gamma, start);
        let dev_sums = if dev.is_empty() {
            evaluate_loss(&model, train, dev_objective)?
        } else {
            evaluate_loss(&model, dev, dev_objective)?
        };
        let dev_loss = dev_sums.combined(dev_objective, cfg.gamma);
        if !dev_loss.is_finite() {
            return Err(Error::Divergence {
                phase: Phase::Joint.name().into(),
                epoch,
            });
        }
        rec.dev_loss = Some(dev_loss);
        rec.wall_time = start.elapsed().as_secs_f64();
        let improved = best.as_ref().is_none_or(|(b, _, _)| dev_loss < *b);
        if improved {
            best = Some((dev_loss, epoch, model.clone()));
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
        }
        on_epoch(&rec, &model, improved)?;
        log::info!(
            "epoch {epoch}: train {:.4} dev {:.4}{}",
            rec.combined_loss,
            dev_loss,
            if improved { " *" } else { "" }
        );
        report.epochs.push(rec);
        if bad_epochs >= cfg.patience {
            report.stop_reason = StopReason::EarlyStopping;
            break;
        }
    }
    let (loss, epoch, params) = best.expect("at least one joint epoch");
    report.best_epoch = Some(epoch);
    report.best_dev_loss = Some(loss);
    Ok((params, report))
}

/// Pretraining followed by joint training, with all records in one report.
pub fn train(
    model: TopicKgModel,
    train: &[TrainingInstance],
    dev: &[TrainingInstance],
    cfg: &TrainConfig,
    on_epoch: &mut EpochHook,
) -> Result<(TopicKgModel, TrainReport)> {
    let (model, mut pre) = pretrain(model, train, cfg)?;
    let (model, mut report) = joint_train_with(model, train, dev, cfg, on_epoch)?;
    pre.append(&mut report.epochs);
    report.epochs = pre;
    Ok((model, report))
}
