//! Training experiments on synthetic corpora and end-to-end
//! reproducibility.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use topic_kg::checkpoint;
use topic_kg::corpus::{pair_instances, preprocess, LangProfile, Post, PreprocessConfig, Split, TrainingInstance};
use topic_kg::eval::evaluate;
use topic_kg::inference::{predict_all, BeamConfig};
use topic_kg::model::{Ablation, ModelConfig, ModelDims, TopicKgModel};
use topic_kg::synthetic::{cue_corpus, planted_topics, to_raw, topic_cue_corpus, vocabulary_for, TopicCueSpec};
use topic_kg::training::{pretrain, train, TrainConfig};
use topic_kg::vocab::Vocabulary;

use crate::Outcome;

const OVERFIT_MAX_EPOCHS: usize = 500;
const OVERFIT_EVAL_EVERY: usize = 10;
const PLANTED_SEEDS: u64 = 5;
const PLANTED_REQUIRED: usize = 4;
const PLANTED_MIN_OVERLAP: usize = 3;
const DIRECTION_SEEDS: u64 = 5;

fn instances(posts: &[Post], vocab: &Vocabulary, split: Option<Split>) -> Vec<TrainingInstance> {
    posts
        .iter()
        .filter(|p| split.is_none_or(|s| p.split == s))
        .flat_map(|p| pair_instances(p, vocab))
        .collect()
}

fn f1_at_1(model: &TopicKgModel, vocab: &Vocabulary, posts: &[Post]) -> f64 {
    let preds = predict_all(model, vocab, posts, &BeamConfig::default()).unwrap();
    evaluate(&preds, posts, &[1]).unwrap().f1_at[&1]
}

/// First evaluated epoch at which training-set F1@1 reaches 1.
fn overfit_epoch(ablation: Ablation) -> Option<usize> {
    let posts = cue_corpus(50, 10, 0);
    let vocab = vocabulary_for(&posts).unwrap();
    let train_set = instances(&posts, &vocab, None);
    let dims = ModelDims {
        topics: 4,
        ntm_hidden: 16,
        embed: 32,
        hidden: 32,
        enc_layers: 1,
        attn: 0,
    };
    let cfg = ModelConfig::new(vocab.seq_size(), vocab.bow_size(), &dims, &ablation).unwrap();
    let model = TopicKgModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let tc = TrainConfig {
        ntm_pretrain_epochs: 20,
        batch_size: 10,
        patience: OVERFIT_MAX_EPOCHS,
        max_epochs: OVERFIT_MAX_EPOCHS,
        ablation,
        ..Default::default()
    };
    let mut reached = None;
    train(model, &train_set, &[], &tc, &mut |rec, m, _| {
        if reached.is_none() && rec.epoch % OVERFIT_EVAL_EVERY == 0 && f1_at_1(m, &vocab, &posts) >= 1.0 {
            reached = Some(rec.epoch);
        }
        Ok(())
    })
    .unwrap();
    reached
}

pub fn overfit() -> Outcome {
    let full = overfit_epoch(Ablation::default());
    let plain = overfit_epoch(Ablation {
        no_topics: true,
        ..Default::default()
    });
    let show = |e: Option<usize>| e.map_or("never".to_string(), |e| format!("epoch {e}"));
    Outcome::new(
        "overfit check",
        full.is_some() && plain.is_some(),
        format!(
            "50 posts, training F1@1 = 1 at {} (full) and {} (no-topics), limit {OVERFIT_MAX_EPOCHS}",
            show(full),
            show(plain)
        ),
    )
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for at in 0..=p.len() {
            let mut q = p.clone();
            q.insert(at, n - 1);
            out.push(q);
        }
    }
    out
}

fn planted_overlap(seed: u64) -> usize {
    let corpus = planted_topics(300, 3, 10, 8, 100 + seed);
    let vocab = vocabulary_for(&corpus.posts).unwrap();
    let train_set = instances(&corpus.posts, &vocab, None);
    let dims = ModelDims {
        topics: 3,
        ntm_hidden: 20,
        embed: 8,
        hidden: 8,
        enc_layers: 1,
        attn: 0,
    };
    let cfg = ModelConfig::new(vocab.seq_size(), vocab.bow_size(), &dims, &Ablation::default()).unwrap();
    let model = TopicKgModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let tc = TrainConfig {
        ntm_pretrain_epochs: 100,
        kg_pretrain_epochs: 0,
        batch_size: 2,
        seed,
        ..Default::default()
    };
    let (model, _) = pretrain(model, &train_set, &tc).unwrap();
    let learned = model.ntm.as_ref().unwrap().top_topic_words(vocab.bow_tokens(), 5);
    permutations(3)
        .into_iter()
        .map(|perm| {
            learned
                .iter()
                .zip(&perm)
                .map(|(top, &planted)| top.iter().filter(|w| corpus.topics[planted].contains(w)).count())
                .min()
                .unwrap()
        })
        .max()
        .unwrap()
}

pub fn planted_recovery() -> Outcome {
    let overlaps: Vec<usize> = (0..PLANTED_SEEDS).map(planted_overlap).collect();
    let ok = overlaps.iter().filter(|&&o| o >= PLANTED_MIN_OVERLAP).count();
    Outcome::new(
        "planted-topic recovery",
        ok >= PLANTED_REQUIRED,
        format!("worst-topic top-5 overlap per seed {overlaps:?}, {ok} of {PLANTED_SEEDS} seeds at >= {PLANTED_MIN_OVERLAP}"),
    )
}

fn held_out_f1(seed: u64, ablation: Ablation) -> f64 {
    let posts = topic_cue_corpus(&TopicCueSpec::default(), seed);
    let vocab = vocabulary_for(&posts).unwrap();
    let test: Vec<Post> = posts.iter().filter(|p| p.split == Split::Test).cloned().collect();
    let dims = ModelDims {
        topics: 4,
        ntm_hidden: 20,
        embed: 16,
        hidden: 16,
        enc_layers: 1,
        attn: 0,
    };
    let cfg = ModelConfig::new(vocab.seq_size(), vocab.bow_size(), &dims, &ablation).unwrap();
    let model = TopicKgModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let tc = TrainConfig {
        batch_size: 2,
        seed,
        ablation,
        ..Default::default()
    };
    let (model, _) = train(
        model,
        &instances(&posts, &vocab, Some(Split::Train)),
        &instances(&posts, &vocab, Some(Split::Dev)),
        &tc,
        &mut |_, _, _| Ok(()),
    )
    .unwrap();
    f1_at_1(&model, &vocab, &test)
}

pub fn topic_benefit() -> Outcome {
    let mean = |ablation: Ablation| {
        let scores: Vec<f64> = (0..DIRECTION_SEEDS).map(|s| held_out_f1(s, ablation)).collect();
        scores.iter().sum::<f64>() / scores.len() as f64
    };
    let full = mean(Ablation::default());
    let plain = mean(Ablation {
        no_topics: true,
        ..Default::default()
    });
    Outcome::new(
        "directional topic benefit",
        full > plain,
        format!("held-out mean F1@1 over {DIRECTION_SEEDS} seeds: full {full:.4}, no-topics {plain:.4}"),
    )
}

/// Raw posts to checkpoint and serialized predictions under `dir`.
fn end_to_end(dir: &Path) -> Vec<u8> {
    let raws = to_raw(&cue_corpus(80, 6, 4));
    let data = preprocess(&raws, &PreprocessConfig::new(LangProfile::English, 9)).unwrap();
    let dims = ModelDims {
        topics: 3,
        ntm_hidden: 8,
        embed: 8,
        hidden: 8,
        enc_layers: 2,
        attn: 0,
    };
    let vocab = &data.vocab;
    let cfg = ModelConfig::new(vocab.seq_size(), vocab.bow_size(), &dims, &Ablation::default()).unwrap();
    let model = TopicKgModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let tc = TrainConfig {
        ntm_pretrain_epochs: 3,
        batch_size: 8,
        max_epochs: 4,
        seed: 5,
        ..Default::default()
    };
    let (model, _) = train(
        model,
        &instances(&data.posts, vocab, Some(Split::Train)),
        &instances(&data.posts, vocab, Some(Split::Dev)),
        &tc,
        &mut |_, _, _| Ok(()),
    )
    .unwrap();
    checkpoint::save(dir, &model, vocab).unwrap();
    let (model, vocab) = checkpoint::load(dir).unwrap();
    let beam = BeamConfig {
        trace: true,
        ..Default::default()
    };
    let preds = predict_all(&model, &vocab, &data.posts, &beam).unwrap();
    serde_json::to_vec(&preds).unwrap()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

pub fn reproducibility() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let preds_a = end_to_end(a.path());
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let preds_b = pool.install(|| end_to_end(b.path()));
    let ckpt_a = dir_bytes(a.path());
    let same_ckpt = ckpt_a == dir_bytes(b.path());
    let same_preds = preds_a == preds_b;
    Outcome::new(
        "reproducibility",
        same_ckpt && same_preds,
        format!(
            "two runs (1 and 3 worker threads): checkpoint files {} ({} files), predictions {} ({} bytes)",
            if same_ckpt { "identical" } else { "differ" },
            ckpt_a.len(),
            if same_preds { "identical" } else { "differ" },
            preds_a.len()
        ),
    )
}
