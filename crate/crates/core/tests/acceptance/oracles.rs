//! Closed-form and brute-force oracles for distributions, the KL term, the
//! copy mixture, metrics and parameter counts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use topic_kg::corpus::{KeyphraseLabel, Post, Split};
use topic_kg::eval::evaluate;
use topic_kg::inference::{DecodeStatus, Prediction, RankedKeyphrase};
use topic_kg::kg::embed_row;
use topic_kg::model::{Ablation, ModelConfig, ModelDims, TopicKgModel};
use topic_kg::ntm::{ntm_loss, Bow};
use topic_kg::params::ParamSet;

use crate::gradients::random_instance;
use crate::Outcome;

const SUM_TOL: f64 = 1e-6;
const ORACLE_TOL: f64 = 1e-10;
const METRIC_TOL: f64 = 1e-9;

fn small_dims(rng: &mut impl Rng) -> ModelDims {
    ModelDims {
        topics: rng.random_range(2..=5),
        ntm_hidden: rng.random_range(2..=6),
        embed: rng.random_range(2..=6),
        hidden: 2 * rng.random_range(1..=4),
        enc_layers: rng.random_range(1..=2),
        attn: rng.random_range(0..=5),
    }
}

/// Multiplies every parameter by a random factor so that some trials reach
/// saturated activations.
fn rescale(model: &mut TopicKgModel, rng: &mut impl Rng) {
    let s = rng.random_range(0.5..6.0);
    for (_, t) in model.tensors_mut() {
        t.scale(s);
    }
}

fn is_distribution(p: &[f64]) -> bool {
    p.iter().all(|&x| x >= 0.0 && x.is_finite()) && (p.iter().sum::<f64>() - 1.0).abs() <= SUM_TOL
}

pub fn distribution_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let ablations = [Ablation::default(), Ablation { no_topics: true, ..Default::default() }];
    let mut violations = Vec::new();
    let trials = 1000;
    for trial in 0..trials {
        let ablation = ablations[trial % 2];
        let seq_size = rng.random_range(6..=12);
        let bow_size = rng.random_range(3..=8);
        let cfg = ModelConfig::new(seq_size, bow_size, &small_dims(&mut rng), &ablation).unwrap();
        let mut model = TopicKgModel::new(cfg, &mut rng).unwrap();
        rescale(&mut model, &mut rng);
        let mut inst = random_instance(&mut rng, seq_size, bow_size);
        let n_oov = (trial / 2) % 4;
        inst.source_ids.retain(|&id| id < seq_size);
        inst.source_ids.push(rng.random_range(1..seq_size));
        inst.source_ids.extend((0..n_oov).map(|j| seq_size + j));
        let theta = match &model.ntm {
            Some(ntm) => {
                let noise: Vec<f64> = (0..ntm.topics()).map(|_| rng.random_range(-2.0..2.0)).collect();
                let st = ntm.topic_state(&inst.bow, Some(&noise)).unwrap();
                if !is_distribution(&st.theta) {
                    violations.push(format!("trial {trial}: theta"));
                }
                if !is_distribution(&ntm.bow_reconstruct(&st.theta)) {
                    violations.push(format!("trial {trial}: bow_reconstruct"));
                }
                Some(st.theta)
            }
            None => None,
        };
        let enc = model.kg.encode(&inst.source_ids, n_oov).unwrap();
        let mut s = enc.s0.clone();
        let mut input = topic_kg::vocab::BOS;
        for _ in 0..3 {
            let step = model
                .kg
                .decoder_step(&enc, &inst.source_ids, n_oov, input, theta.as_deref(), &s)
                .unwrap();
            for (what, p) in [("p_gen", &step.out.p_gen), ("alpha", &step.out.alpha), ("p_j", &step.out.p)] {
                if !is_distribution(p) {
                    violations.push(format!("trial {trial}: {what}"));
                }
            }
            input = rng.random_range(4..seq_size + n_oov);
            s = step.out.s;
        }
    }
    Outcome::new(
        "distribution invariants",
        violations.is_empty(),
        format!(
            "{trials} trials, {} violations{}",
            violations.len(),
            violations.first().map(|v| format!(", first {v}")).unwrap_or_default()
        ),
    )
}

fn kl_oracle(mu: &[f64], log_sigma: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&m, &ls) in mu.iter().zip(log_sigma) {
        let var = ls.exp() * ls.exp();
        total += m * m + var - 1.0 - var.ln();
    }
    0.5 * total
}

pub fn kl_oracle_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let bow = Bow::from_counts(3, vec![(0, 1.0)]);
    let recon = [0.5, 0.25, 0.25];
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let k = rng.random_range(1..=8);
        let mu: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
        let ls: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
        let got = ntm_loss(&bow, &mu, &ls, &recon).unwrap().kl;
        let want = kl_oracle(&mu, &ls);
        worst = worst.max((got - want).abs() / want.abs().max(1.0));
    }
    let zero = ntm_loss(&bow, &[0.0; 5], &[0.0; 5], &recon).unwrap().kl;
    Outcome::new(
        "closed-form KL",
        worst <= ORACLE_TOL && zero == 0.0,
        format!("100 pairs, worst scaled error {worst:.2e}, KL(0,0) = {zero}"),
    )
}

fn softmax_ref(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

pub fn copy_mixture() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let ablation = if trial % 3 == 0 {
            Ablation { no_topics: true, ..Default::default() }
        } else {
            Ablation::default()
        };
        let seq_size = rng.random_range(6..=10);
        let cfg = ModelConfig::new(seq_size, 5, &small_dims(&mut rng), &ablation).unwrap();
        let model = TopicKgModel::new(cfg, &mut rng).unwrap();
        let inst = random_instance(&mut rng, seq_size, 5);
        let n_oov = inst.n_oov();
        let theta = model.inference_theta(&inst.bow).unwrap();
        let kg = &model.kg;
        let enc = kg.encode(&inst.source_ids, n_oov).unwrap();
        let input = inst.target_ids[1];
        let step = kg
            .decoder_step(&enc, &inst.source_ids, n_oov, input, theta.as_deref(), &enc.s0)
            .unwrap();
        let s = &step.out.s;
        let h = kg.config.hidden;

        let scores: Vec<f64> = enc
            .bank
            .states
            .iter()
            .map(|hi| kg.attention_score(hi, s, theta.as_deref()).unwrap())
            .collect();
        let alpha = softmax_ref(&scores);
        let mut context = vec![0.0; h];
        for (a, hi) in alpha.iter().zip(&enc.bank.states) {
            for (c, v) in context.iter_mut().zip(hi) {
                *c += a * v;
            }
        }
        let sc: Vec<f64> = s.iter().chain(&context).copied().collect();
        let logits: Vec<f64> = (0..seq_size)
            .map(|r| kg.gen_b.get(r, 0) + (0..2 * h).map(|c| kg.gen_w.get(r, c) * sc[c]).sum::<f64>())
            .collect();
        let p_gen = softmax_ref(&logits);
        let u = kg.embedding.row(embed_row(input, seq_size));
        let mut switch_in: Vec<f64> = u.iter().chain(s).chain(&context).copied().collect();
        if kg.config.flags.topic_switch {
            switch_in.extend(theta.as_deref().unwrap());
        }
        let pre = kg.switch_b.get(0, 0) + switch_in.iter().enumerate().map(|(c, x)| kg.switch_w.get(0, c) * x).sum::<f64>();
        let lambda = 1.0 / (1.0 + (-pre).exp());

        for w in 0..seq_size + n_oov {
            let mut want = if w < seq_size { lambda * p_gen[w] } else { 0.0 };
            for (i, &id) in inst.source_ids.iter().enumerate() {
                if id == w {
                    want += (1.0 - lambda) * alpha[i];
                }
            }
            worst = worst.max((step.out.p[w] - want).abs());
        }
    }
    Outcome::new(
        "copy-mixture oracle",
        worst <= ORACLE_TOL,
        format!("100 instances, worst absolute error {worst:.2e}"),
    )
}

#[derive(Deserialize)]
struct FixtureGold {
    tokens: Vec<String>,
    present: bool,
}

#[derive(Deserialize)]
struct FixturePost {
    id: String,
    golds: Vec<FixtureGold>,
    preds: Vec<Vec<String>>,
}

pub fn metric_fixture() -> Outcome {
    let fixture: Vec<FixturePost> = serde_json::from_str(include_str!("../fixtures/metrics_10.json")).unwrap();
    let posts: Vec<Post> = fixture
        .iter()
        .map(|f| Post {
            id: f.id.clone(),
            tokens: vec![],
            keyphrases: f
                .golds
                .iter()
                .map(|g| KeyphraseLabel {
                    tokens: g.tokens.clone(),
                    is_present: g.present,
                })
                .collect(),
            split: Split::Test,
        })
        .collect();
    let preds: Vec<Prediction> = fixture
        .iter()
        .map(|f| Prediction {
            id: f.id.clone(),
            keyphrases: f
                .preds
                .iter()
                .map(|t| RankedKeyphrase {
                    tokens: t.clone(),
                    score: 0.0,
                    attention: None,
                })
                .collect(),
            status: DecodeStatus::Finished,
            source: None,
        })
        .collect();
    let report = evaluate(&preds, &posts, &[1, 3]).unwrap();
    let per_post = report.per_post.as_ref().unwrap();

    // Hand-scored per post, in fixture order.
    let f1_1 = [1.0, 2.0 / 3.0, 0.0, 2.0 / 3.0, 1.0, 0.0, 2.0 / 3.0, 0.0, 0.5, 0.0];
    let f1_3 = [2.0 / 3.0, 0.4, 0.5, 0.8, 1.0, 0.0, 0.8, 2.0 / 3.0, 1.0 / 3.0, 0.0];
    let ap_5 = [1.0, 0.5, 0.5, 5.0 / 6.0, 1.0, 0.0, 5.0 / 6.0, 0.5, 1.0 / 3.0, 0.0];
    let expected = [
        ("F1@1", report.f1_at[&1], 0.45),
        ("F1@3", report.f1_at[&3], 31.0 / 60.0),
        ("MAP@5", report.map_at_5, 0.55),
        ("present F1@1", report.present_f1_at_1.score.unwrap(), 8.0 / 21.0),
        ("absent R@5", report.absent_recall_at_5.score.unwrap(), 0.7),
    ];
    let mut errors = Vec::new();
    for (i, p) in per_post.iter().enumerate() {
        for (what, got, want) in [("F1@1", p.f1_at[&1], f1_1[i]), ("F1@3", p.f1_at[&3], f1_3[i]), ("AP@5", p.ap_at_5, ap_5[i])] {
            if (got - want).abs() > METRIC_TOL {
                errors.push(format!("{} {what} {got} != {want}", p.id));
            }
        }
    }
    for (what, got, want) in expected {
        if (got - want).abs() > METRIC_TOL {
            errors.push(format!("{what} {got} != {want}"));
        }
    }
    let counts_ok = report.present_f1_at_1.n == 7 && report.absent_recall_at_5.n == 5;
    if !counts_ok {
        errors.push("side counts".into());
    }
    Outcome::new(
        "metric oracle",
        errors.is_empty(),
        if errors.is_empty() {
            format!(
                "F1@1 {:.4}, F1@3 {:.4}, MAP@5 {:.4}, present F1@1 {:.4}, absent R@5 {:.4}",
                report.f1_at[&1],
                report.f1_at[&3],
                report.map_at_5,
                report.present_f1_at_1.score.unwrap(),
                report.absent_recall_at_5.score.unwrap()
            )
        } else {
            errors.join("; ")
        },
    )
}

/// Parameter count of a plain copy-enabled seq2seq generator, from sizes
/// alone.
fn seq2seq_copy_count(v: usize, d: usize, h: usize, a: usize, layers: usize) -> usize {
    let gru = |input: usize, hidden: usize| 3 * hidden * input + 3 * hidden * hidden + 6 * hidden;
    let encoder: usize = (0..layers)
        .map(|l| 2 * gru(if l == 0 { d } else { h }, h / 2))
        .sum();
    v * d + encoder + (h * h + h) + gru(d, h) + (a * 2 * h + a + a) + (v * 2 * h + v) + (d + 2 * h + 1)
}

pub fn ablation_structure() -> Outcome {
    let dims = ModelDims {
        topics: 7,
        ntm_hidden: 9,
        embed: 11,
        hidden: 12,
        enc_layers: 2,
        attn: 5,
    };
    let (v, bow) = (40, 25);
    let count = |a: Ablation| {
        let cfg = ModelConfig::new(v, bow, &dims, &a).unwrap();
        TopicKgModel::zeros(cfg).unwrap().num_params()
    };
    let k = dims.topics;
    let full = count(Ablation::default());
    let no_attn = count(Ablation { no_topic_attn: true, ..Default::default() });
    let no_state_only = count(Ablation {
        no_topic_state: true,
        topic_switch: Some(true),
        ..Default::default()
    });
    let no_state_tied = count(Ablation { no_topic_state: true, ..Default::default() });
    let kg_only = |a: Ablation| {
        let cfg = ModelConfig::new(v, bow, &dims, &a).unwrap();
        TopicKgModel::zeros(cfg).unwrap().kg.num_params()
    };
    let no_topics_kg = kg_only(Ablation { no_topics: true, ..Default::default() });
    let no_topics = count(Ablation { no_topics: true, ..Default::default() });
    let reference = seq2seq_copy_count(v, dims.embed, dims.hidden, dims.attn, dims.enc_layers);

    let attn_block = k * dims.attn;
    let state_block = k * 3 * dims.hidden;
    let switch_block = k;
    let checks = [
        full - no_attn == attn_block,
        full - no_state_only == state_block,
        full - no_state_tied == state_block + switch_block,
        no_topics == reference && no_topics_kg == reference,
        kg_only(Ablation::default()) - reference == attn_block + state_block + switch_block,
    ];
    Outcome::new(
        "ablation structure",
        checks.iter().all(|&c| c),
        format!(
            "full {full}; no-topic-attn -{} (K*attn = {attn_block}); no-topic-state -{} (K*3H = {state_block}), \
             with the tied switch -{} (+K = {}); no-topics {no_topics} vs seq2seq-copy {reference}",
            full - no_attn,
            full - no_state_only,
            full - no_state_tied,
            state_block + switch_block
        ),
    )
}
