//! Beam-search decoding into a ranked, stem-deduplicated keyphrase list.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{self, Post};
use crate::error::{Error, Result};
use crate::kg::PROB_FLOOR;
use crate::model::TopicKgModel;
use crate::ntm::Bow;
use crate::stem::stem_all;
use crate::vocab::{Vocabulary, BOS, EOS, PAD, UNK};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub width: usize,
    /// Maximum decoding steps, the end-of-sequence step included.
    pub max_len: usize,
    /// Keep per-step attention weights for every returned keyphrase.
    pub trace: bool,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            width: 10,
            max_len: 6,
            trace: false,
        }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.max_len == 0 {
            return Err(Error::InvalidConfig("beam width and max length must be positive".into()));
        }
        Ok(())
    }
}

/// A post ready for decoding.
#[derive(Clone, Debug, PartialEq)]
pub struct SourcePost {
    pub id: String,
    pub tokens: Vec<String>,
    pub source_ids: Vec<usize>,
    pub source_oov: Vec<String>,
    pub bow: Bow,
}

impl SourcePost {
    pub fn new(post: &Post, vocab: &Vocabulary) -> Self {
        let (source_ids, source_oov) = corpus::source_ids(&post.tokens, vocab);
        Self {
            id: post.id.clone(),
            tokens: post.tokens.clone(),
            source_ids,
            source_oov,
            bow: post.bow(vocab),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedKeyphrase {
    pub tokens: Vec<String>,
    /// Total log-probability divided by the number of decoded tokens.
    pub score: f64,
    /// Rows are decoding steps, columns source positions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeStatus {
    #[default]
    Finished,
    /// No hypothesis reached the end token within the step budget; the
    /// best unfinished ones are returned instead.
    Unfinished,
}

impl DecodeStatus {
    fn is_finished(&self) -> bool {
        *self == DecodeStatus::Finished
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub keyphrases: Vec<RankedKeyphrase>,
    #[serde(default, skip_serializing_if = "DecodeStatus::is_finished")]
    pub status: DecodeStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<Vec<String>>,
}

impl Prediction {
    pub fn ranked_tokens(&self) -> Vec<Vec<String>> {
        self.keyphrases.iter().map(|k| k.tokens.clone()).collect()
    }
}

#[derive(Clone, Debug)]
struct Hypothesis {
    ids: Vec<usize>,
    logp: f64,
    state: Vec<f64>,
    attention: Vec<Vec<f64>>,
}

impl Hypothesis {
    fn last(&self) -> usize {
        self.ids.last().copied().unwrap_or(BOS)
    }

    /// Length-normalized score.
    fn score(&self) -> f64 {
        self.logp / self.ids.len().max(1) as f64
    }
}

fn allowed(id: usize, first_step: bool) -> bool {
    !(id == PAD || id == UNK || id == BOS || (first_step && id == EOS))
}

/// The `n` most probable allowed ids, by probability then id.
fn top_ids(p: &[f64], n: usize, first_step: bool) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..p.len()).filter(|&i| allowed(i, first_step)).collect();
    let cmp = |a: &usize, b: &usize| p[*b].total_cmp(&p[*a]).then(a.cmp(b));
    if ids.len() > n {
        ids.select_nth_unstable_by(n - 1, cmp);
        ids.truncate(n);
    }
    ids.sort_by(cmp);
    ids
}

fn realize(ids: &[usize], vocab: &Vocabulary, oov: &[String]) -> Vec<String> {
    corpus::detokenize(ids, vocab, oov)
}

/// Decodes one post with a deterministic topic mixture.
pub fn beam_search(model: &TopicKgModel, vocab: &Vocabulary, post: &SourcePost, cfg: &BeamConfig) -> Result<Prediction> {
    cfg.validate()?;
    let kg = &model.kg;
    if vocab.seq_size() != kg.config.seq_size {
        return Err(Error::ShapeMismatch {
            what: "vocabulary size",
            expected: kg.config.seq_size,
            got: vocab.seq_size(),
        });
    }
    let n_oov = post.source_oov.len();
    let theta = model.inference_theta(&post.bow)?;
    let enc = kg.encode(&post.source_ids, n_oov)?;

    let mut live = vec![Hypothesis {
        ids: Vec::new(),
        logp: 0.0,
        state: enc.s0.clone(),
        attention: Vec::new(),
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for step in 0..cfg.max_len {
        let first = step == 0;
        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        let mut outputs = Vec::with_capacity(live.len());
        for (h, hyp) in live.iter().enumerate() {
            let out = kg
                .decoder_step(&enc, &post.source_ids, n_oov, hyp.last(), theta.as_deref(), &hyp.state)?
                .out;
            for id in top_ids(&out.p, cfg.width, first) {
                candidates.push((hyp.logp + out.p[id].max(PROB_FLOOR).ln(), h, id));
            }
            outputs.push(out);
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut next = Vec::with_capacity(cfg.width);
        for &(logp, h, id) in candidates.iter().take(cfg.width) {
            let parent = &live[h];
            let mut ids = parent.ids.clone();
            ids.push(id);
            let mut attention = Vec::new();
            if cfg.trace {
                attention.clone_from(&parent.attention);
                attention.push(outputs[h].alpha.clone());
            }
            let hyp = Hypothesis {
                ids,
                logp,
                state: outputs[h].s.clone(),
                attention,
            };
            if id == EOS {
                finished.push(hyp);
            } else {
                next.push(hyp);
            }
        }
        live = next;
        if live.is_empty() {
            break;
        }
    }

    let (status, mut pool) = if finished.is_empty() {
        (DecodeStatus::Unfinished, live)
    } else {
        (DecodeStatus::Finished, finished)
    };
    pool.sort_by(|a, b| b.score().total_cmp(&a.score()));

    let ranked = pool
        .into_iter()
        .map(|hyp| {
            let content: Vec<usize> = hyp.ids.iter().copied().filter(|&i| i != EOS).collect();
            RankedKeyphrase {
                score: hyp.score(),
                tokens: realize(&content, vocab, &post.source_oov),
                attention: cfg.trace.then_some(hyp.attention),
            }
        })
        .collect();
    let keyphrases = dedup_by_stem(ranked);
    Ok(Prediction {
        id: post.id.clone(),
        keyphrases,
        status,
        source: cfg.trace.then(|| post.tokens.clone()),
    })
}

/// Keeps the first entry of each stemmed form and drops empty ones.
pub fn dedup_by_stem(ranked: Vec<RankedKeyphrase>) -> Vec<RankedKeyphrase> {
    let mut seen = HashSet::new();
    ranked
        .into_iter()
        .filter(|k| !k.tokens.is_empty() && seen.insert(stem_all(&k.tokens)))
        .collect()
}

/// Decodes every post in parallel; output order follows input order.
pub fn predict_all(model: &TopicKgModel, vocab: &Vocabulary, posts: &[Post], cfg: &BeamConfig) -> Result<Vec<Prediction>> {
    posts
        .par_iter()
        .map(|p| beam_search(model, vocab, &SourcePost::new(p, vocab), cfg))
        .collect()
}

/// Attention matrix of the top-ranked keyphrase: rows are decoding steps,
/// columns are source tokens.
pub fn export_attention(prediction: &Prediction) -> Result<serde_json::Value> {
    let top = prediction.keyphrases.first().ok_or(Error::TraceMissing)?;
    let rows = top.attention.as_ref().ok_or(Error::TraceMissing)?;
    let source = prediction.source.as_ref().ok_or(Error::TraceMissing)?;
    Ok(serde_json::json!({
        "id": prediction.id,
        "source": source,
        "keyphrase": top.tokens,
        "attention": rows,
    }))
}
