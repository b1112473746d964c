//! Analytic gradients against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topic_kg::corpus::TrainingInstance;
use topic_kg::model::{Ablation, LossWeights, ModelConfig, ModelDims, Objective, TopicKgModel};
use topic_kg::ntm::Bow;
use topic_kg::params::ParamSet;
use topic_kg::vocab::{BOS, EOS};

use crate::Outcome;

const EPS: f64 = 1e-5;
const MAX_REL_ERR: f64 = 1e-4;
/// Gradient norms below this are compared in absolute terms.
const NORM_FLOOR: f64 = 1e-5;
const SEQ_SIZE: usize = 10;
const BOW_SIZE: usize = 7;

fn dims(enc_layers: usize) -> ModelDims {
    ModelDims {
        topics: 3,
        ntm_hidden: 4,
        embed: 5,
        hidden: 6,
        enc_layers,
        attn: 0,
    }
}

pub fn random_instance(rng: &mut impl Rng, seq_size: usize, bow_size: usize) -> TrainingInstance {
    let n_oov = rng.random_range(0..=2);
    let len = rng.random_range(n_oov.max(1)..=4);
    let mut source_ids: Vec<usize> = (0..len).map(|_| rng.random_range(1..seq_size)).collect();
    for j in 0..n_oov {
        source_ids[j] = seq_size + j;
    }
    let target_len = rng.random_range(1..=3);
    let mut target_ids = vec![BOS];
    target_ids.extend((0..target_len).map(|_| rng.random_range(4..seq_size + n_oov)));
    target_ids.push(EOS);
    let mut entries = Vec::new();
    for w in 0..bow_size {
        if rng.random_bool(0.5) {
            entries.push((w, rng.random_range(1..=3) as f64));
        }
    }
    if entries.is_empty() {
        entries.push((0, 1.0));
    }
    TrainingInstance {
        post_id: "g".into(),
        source_ids,
        source_oov: (0..n_oov).map(|j| format!("oov{j}")).collect(),
        target_ids,
        bow: Bow::from_counts(bow_size, entries),
    }
}

fn loss(model: &TopicKgModel, inst: &TrainingInstance, obj: Objective, noise: &[f64], w: LossWeights) -> f64 {
    model
        .instance_loss(inst, obj, Some(noise))
        .expect("finite loss")
        .weighted(w)
}

/// Worst per-tensor relative error, with the tensor name.
fn check(model: &TopicKgModel, inst: &TrainingInstance, obj: Objective, noise: &[f64], w: LossWeights, only_kg: bool) -> (f64, String) {
    let mut grad = model.zeros_like();
    model
        .accumulate_grad(inst, obj, Some(noise), w, &mut grad)
        .expect("gradient");
    let analytic: Vec<(String, Vec<f64>)> = grad
        .tensors()
        .into_iter()
        .map(|(n, t)| (n, t.data().to_vec()))
        .collect();
    let mut probe = model.clone();
    let mut worst = (0.0, String::new());
    for (ti, (name, a)) in analytic.iter().enumerate() {
        if only_kg && !name.starts_with("kg.") {
            continue;
        }
        let mut numeric = vec![0.0; a.len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = probe.tensors_mut()[ti].1.data()[i];
            probe.tensors_mut()[ti].1.data_mut()[i] = orig + EPS;
            let up = loss(&probe, inst, obj, noise, w);
            probe.tensors_mut()[ti].1.data_mut()[i] = orig - EPS;
            let down = loss(&probe, inst, obj, noise, w);
            probe.tensors_mut()[ti].1.data_mut()[i] = orig;
            *slot = (up - down) / (2.0 * EPS);
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = a.iter().zip(&numeric).map(|(x, y)| x - y).collect();
        let rel = norm(&diff) / norm(a).max(norm(&numeric)).max(NORM_FLOOR);
        if rel > worst.0 {
            worst = (rel, name.clone());
        }
    }
    worst
}

pub fn gradient_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let ablations = [
        ("full", Ablation::default()),
        ("no-topic-attn", Ablation { no_topic_attn: true, ..Default::default() }),
        ("no-topic-state", Ablation { no_topic_state: true, ..Default::default() }),
        ("no-topics", Ablation { no_topics: true, ..Default::default() }),
    ];
    let mut worst = (0.0, String::new());
    let mut checks = 0;
    for trial in 0..6 {
        for (label, ablation) in &ablations {
            let cfg = ModelConfig::new(SEQ_SIZE, BOW_SIZE, &dims(1 + trial % 2), ablation).unwrap();
            let model = TopicKgModel::new(cfg, &mut rng).unwrap();
            let inst = random_instance(&mut rng, SEQ_SIZE, BOW_SIZE);
            let noise: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
            let gamma = rng.random_range(0.3..2.0);
            let mut cases = vec![
                ("L_KG", Objective::Joint, LossWeights { ntm: 0.0, kg: 1.0 }, false),
                ("L", Objective::Joint, LossWeights { ntm: 1.0, kg: gamma }, false),
                ("L_KG frozen-topics", Objective::Kg, LossWeights { ntm: 0.0, kg: 1.0 }, true),
            ];
            if model.ntm.is_some() {
                cases.push(("L_NTM", Objective::Ntm, LossWeights { ntm: 1.0, kg: 0.0 }, false));
            }
            for (loss_name, obj, w, only_kg) in cases {
                let (err, tensor) = check(&model, &inst, obj, &noise, w, only_kg);
                checks += 1;
                if err > worst.0 {
                    worst = (err, format!("{tensor} [{label}, {loss_name}, trial {trial}]"));
                }
            }
        }
    }
    Outcome::new(
        "gradient fidelity",
        worst.0 < MAX_REL_ERR,
        format!("{checks} checks, worst relative error {:.2e} at {}", worst.0, worst.1),
    )
}
