//! The joint model: an optional topic model feeding its mixture into the
//! keyphrase generator.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::TrainingInstance;
use crate::error::{Error, Result};
use crate::kg::{KgConfig, KgParams, TopicFlags};
use crate::ntm::{NtmConfig, NtmParams};
use crate::params::ParamSet;
use crate::tensor::Tensor;

/// Architecture sizes shared by every run of an experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelDims {
    pub topics: usize,
    pub ntm_hidden: usize,
    pub embed: usize,
    pub hidden: usize,
    pub enc_layers: usize,
    /// Rows of the attention projection; `0` means "same as hidden".
    pub attn: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            topics: 50,
            ntm_hidden: 100,
            embed: 150,
            hidden: 300,
            enc_layers: 2,
            attn: 0,
        }
    }
}

/// Model variants used for ablations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub no_topic_attn: bool,
    pub no_topic_state: bool,
    /// Freeze the topic model once pretraining ends.
    pub separate_train: bool,
    /// No topic model at all: a plain copy-enabled seq2seq generator.
    pub no_topics: bool,
    /// Explicit setting for `theta` in the copy switch. `None` ties it to
    /// the topic state.
    pub topic_switch: Option<bool>,
}

impl Ablation {
    pub fn flags(&self) -> TopicFlags {
        if self.no_topics {
            return TopicFlags::NONE;
        }
        let mut f = TopicFlags::FULL;
        if self.no_topic_attn {
            f = f.without_topic_attn();
        }
        if self.no_topic_state {
            f = f.without_topic_state();
        }
        if let Some(on) = self.topic_switch {
            f.topic_switch = on;
        }
        f
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub ntm: Option<NtmConfig>,
    pub kg: KgConfig,
}

impl ModelConfig {
    pub fn new(seq_size: usize, bow_size: usize, dims: &ModelDims, ablation: &Ablation) -> Result<Self> {
        let ntm = (!ablation.no_topics).then_some(NtmConfig {
            bow_size,
            hidden: dims.ntm_hidden,
            topics: dims.topics,
        });
        let kg = KgConfig {
            seq_size,
            embed: dims.embed,
            hidden: dims.hidden,
            enc_layers: dims.enc_layers,
            attn: if dims.attn == 0 { dims.hidden } else { dims.attn },
            topics: if ablation.no_topics { 0 } else { dims.topics },
            flags: ablation.flags(),
        };
        let cfg = Self { ntm, kg };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.kg.validate()?;
        match &self.ntm {
            Some(n) => {
                if n.topics == 0 || n.hidden == 0 || n.bow_size == 0 {
                    return Err(Error::InvalidConfig("degenerate topic model dimensions".into()));
                }
                if n.topics != self.kg.topics {
                    return Err(Error::InvalidConfig(format!(
                        "topic count mismatch: topic model {} vs generator {}",
                        n.topics, self.kg.topics
                    )));
                }
            }
            None if self.kg.flags.uses_topics() => {
                return Err(Error::InvalidConfig("generator consumes topics but there is no topic model".into()));
            }
            None => {}
        }
        Ok(())
    }
}

/// Which loss a gradient step optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Variational loss of the topic model alone.
    Ntm,
    /// Generator loss with a frozen topic model supplying deterministic
    /// mixtures.
    Kg,
    /// Both losses, with the topic mixture shared and differentiated.
    Joint,
}

/// Multipliers applied to each loss before differentiation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub ntm: f64,
    pub kg: f64,
}

/// Unweighted losses of one instance.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct InstanceLoss {
    /// Topic model loss (KL plus reconstruction); zero if not evaluated.
    pub ntm: f64,
    /// Generator negative log-likelihood summed over target tokens; zero if
    /// not evaluated.
    pub kg: f64,
    pub tokens: usize,
}

impl InstanceLoss {
    pub fn weighted(&self, w: LossWeights) -> f64 {
        w.ntm * self.ntm + w.kg * self.kg
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopicKgModel {
    pub config: ModelConfig,
    pub ntm: Option<NtmParams>,
    pub kg: KgParams,
}

impl TopicKgModel {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let ntm = config.ntm.map(|c| NtmParams::new(c, rng));
        let kg = KgParams::new(config.kg, rng)?;
        Ok(Self { config, ntm, kg })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            ntm: config.ntm.map(NtmParams::zeros),
            kg: KgParams::zeros(config.kg)?,
        })
    }

    pub fn uses_topics(&self) -> bool {
        self.config.kg.flags.uses_topics()
    }

    /// Deterministic topic mixture for a post, if the generator needs one.
    pub fn inference_theta(&self, bow: &crate::ntm::Bow) -> Result<Option<Vec<f64>>> {
        match &self.ntm {
            Some(ntm) if self.uses_topics() => Ok(Some(ntm.topic_state(bow, None)?.theta)),
            _ => Ok(None),
        }
    }

    fn require_ntm(&self) -> Result<&NtmParams> {
        self.ntm
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("model has no topic model".into()))
    }

    /// Losses of one instance under `objective`. `noise` selects a sampled
    /// latent (`Some`) or `z = mu` (`None`); it is ignored for
    /// [`Objective::Kg`], which always uses the deterministic mixture.
    pub fn instance_loss(
        &self,
        inst: &TrainingInstance,
        objective: Objective,
        noise: Option<&[f64]>,
    ) -> Result<InstanceLoss> {
        let tokens = inst.target_tokens();
        match objective {
            Objective::Ntm => {
                let fwd = self.require_ntm()?.forward(&inst.bow, noise)?;
                Ok(InstanceLoss {
                    ntm: fwd.loss.total(),
                    kg: 0.0,
                    tokens,
                })
            }
            Objective::Kg => {
                let theta = self.inference_theta(&inst.bow)?;
                let kg = self
                    .kg
                    .kg_loss(&inst.source_ids, inst.n_oov(), &inst.target_ids, theta.as_deref())?;
                Ok(InstanceLoss { ntm: 0.0, kg, tokens })
            }
            Objective::Joint => {
                let (ntm, theta) = match &self.ntm {
                    Some(n) => {
                        let fwd = n.forward(&inst.bow, noise)?;
                        (fwd.loss.total(), Some(fwd.state.theta))
                    }
                    None => (0.0, None),
                };
                let theta = theta.filter(|_| self.uses_topics());
                let kg = self
                    .kg
                    .kg_loss(&inst.source_ids, inst.n_oov(), &inst.target_ids, theta.as_deref())?;
                Ok(InstanceLoss { ntm, kg, tokens })
            }
        }
    }

    /// Accumulates the gradient of `weights`-scaled losses into `grad` and
    /// returns the unweighted losses.
    pub fn accumulate_grad(
        &self,
        inst: &TrainingInstance,
        objective: Objective,
        noise: Option<&[f64]>,
        weights: LossWeights,
        grad: &mut TopicKgModel,
    ) -> Result<InstanceLoss> {
        let tokens = inst.target_tokens();
        let n_oov = inst.n_oov();
        match objective {
            Objective::Ntm => {
                let ntm = self.require_ntm()?;
                let fwd = ntm.forward(&inst.bow, noise)?;
                let g = grad.ntm.as_mut().expect("gradient mirrors model");
                ntm.backward(&fwd, &inst.bow, weights.ntm, None, g);
                Ok(InstanceLoss {
                    ntm: fwd.loss.total(),
                    kg: 0.0,
                    tokens,
                })
            }
            Objective::Kg => {
                let theta = self.inference_theta(&inst.bow)?;
                let fwd = self
                    .kg
                    .forward_instance(&inst.source_ids, n_oov, &inst.target_ids, theta.as_deref())?;
                if weights.kg != 0.0 {
                    self.kg
                        .backward_instance(&fwd, &inst.source_ids, theta.as_deref(), weights.kg, &mut grad.kg);
                }
                Ok(InstanceLoss {
                    ntm: 0.0,
                    kg: fwd.loss,
                    tokens,
                })
            }
            Objective::Joint => {
                let ntm_fwd = match &self.ntm {
                    Some(n) => Some(n.forward(&inst.bow, noise)?),
                    None => None,
                };
                let theta = ntm_fwd
                    .as_ref()
                    .filter(|_| self.uses_topics())
                    .map(|f| f.state.theta.as_slice());
                let fwd = self
                    .kg
                    .forward_instance(&inst.source_ids, n_oov, &inst.target_ids, theta)?;
                let dtheta = if weights.kg != 0.0 {
                    Some(
                        self.kg
                            .backward_instance(&fwd, &inst.source_ids, theta, weights.kg, &mut grad.kg),
                    )
                } else {
                    None
                };
                let mut ntm_loss = 0.0;
                if let (Some(ntm), Some(nf)) = (&self.ntm, &ntm_fwd) {
                    let g = grad.ntm.as_mut().expect("gradient mirrors model");
                    let extra = dtheta.as_deref().filter(|_| self.uses_topics());
                    ntm.backward(nf, &inst.bow, weights.ntm, extra, g);
                    ntm_loss = nf.loss.total();
                }
                Ok(InstanceLoss {
                    ntm: ntm_loss,
                    kg: fwd.loss,
                    tokens,
                })
            }
        }
    }
}

impl ParamSet for TopicKgModel {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        if let Some(n) = &self.ntm {
            out.extend(n.tensors().into_iter().map(|(k, t)| (format!("ntm.{k}"), t)));
        }
        out.extend(self.kg.tensors().into_iter().map(|(k, t)| (format!("kg.{k}"), t)));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        if let Some(n) = &mut self.ntm {
            out.extend(n.tensors_mut().into_iter().map(|(k, t)| (format!("ntm.{k}"), t)));
        }
        out.extend(self.kg.tensors_mut().into_iter().map(|(k, t)| (format!("kg.{k}"), t)));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims() -> ModelDims {
        ModelDims {
            topics: 3,
            ntm_hidden: 4,
            embed: 5,
            hidden: 6,
            enc_layers: 2,
            attn: 0,
        }
    }

    #[test]
    fn ablation_flags() {
        let a = Ablation {
            no_topic_attn: true,
            ..Default::default()
        };
        assert!(!a.flags().topic_attn && a.flags().topic_state);
        let a = Ablation {
            no_topic_state: true,
            ..Default::default()
        };
        assert!(!a.flags().topic_state && !a.flags().topic_switch && a.flags().topic_attn);
        let a = Ablation {
            no_topic_state: true,
            topic_switch: Some(true),
            ..Default::default()
        };
        assert!(!a.flags().topic_state && a.flags().topic_switch);
        let a = Ablation {
            no_topics: true,
            no_topic_attn: true,
            ..Default::default()
        };
        assert_eq!(a.flags(), TopicFlags::NONE);
    }

    #[test]
    fn no_topics_has_no_topic_model() {
        let cfg = ModelConfig::new(
            20,
            7,
            &dims(),
            &Ablation {
                no_topics: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(cfg.ntm.is_none());
        let m = TopicKgModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(m.tensors().iter().all(|(n, _)| n.starts_with("kg.")));
    }

    #[test]
    fn inconsistent_config_is_rejected() {
        let mut cfg = ModelConfig::new(20, 7, &dims(), &Ablation::default()).unwrap();
        cfg.ntm = None;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn param_names_are_unique() {
        let cfg = ModelConfig::new(20, 7, &dims(), &Ablation::default()).unwrap();
        let m = TopicKgModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let names: std::collections::HashSet<String> = m.tensors().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.len(), m.tensors().len());
    }
}
