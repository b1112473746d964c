//! Ranking metrics over stemmed keyphrases, and an NPMI topic-coherence
//! proxy.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::Post;
use crate::error::{Error, Result};
use crate::inference::Prediction;
use crate::stem::stem_all;

/// True iff the stemmed sequences are equal elementwise.
pub fn is_match<S: AsRef<str>, T: AsRef<str>>(pred: &[S], gold: &[T]) -> bool {
    pred.len() == gold.len() && stem_all(pred) == stem_all(gold)
}

/// For each of the top `k` predictions, whether it claims a not yet matched
/// gold. Each gold is matched at most once.
fn match_flags(preds: &[Vec<String>], golds: &[Vec<String>], k: usize) -> Vec<bool> {
    let golds: Vec<Vec<String>> = golds.iter().map(|g| stem_all(g)).collect();
    let mut used = vec![false; golds.len()];
    preds
        .iter()
        .take(k)
        .map(|p| {
            let p = stem_all(p);
            match golds.iter().enumerate().position(|(i, g)| !used[i] && *g == p) {
                Some(i) => {
                    used[i] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

fn require_golds(golds: &[Vec<String>]) -> Result<()> {
    if golds.is_empty() {
        Err(Error::NoGolds)
    } else {
        Ok(())
    }
}

/// Per-post F1 over the top `k` predictions. Precision divides by
/// `min(k, |preds|)`.
pub fn f1_at_k(preds: &[Vec<String>], golds: &[Vec<String>], k: usize) -> Result<f64> {
    require_golds(golds)?;
    let hits = match_flags(preds, golds, k).iter().filter(|&&m| m).count() as f64;
    let shown = k.min(preds.len());
    if shown == 0 || hits == 0.0 {
        return Ok(0.0);
    }
    let p = hits / shown as f64;
    let r = hits / golds.len() as f64;
    Ok(2.0 * p * r / (p + r))
}

/// Per-post average precision over the top `k`, normalized by `|golds|`.
pub fn map_at_k(preds: &[Vec<String>], golds: &[Vec<String>], k: usize) -> Result<f64> {
    require_golds(golds)?;
    let mut hits = 0.0;
    let mut sum = 0.0;
    for (r, m) in match_flags(preds, golds, k).into_iter().enumerate() {
        if m {
            hits += 1.0;
            sum += hits / (r + 1) as f64;
        }
    }
    Ok(sum / golds.len() as f64)
}

/// Fraction of golds matched within the top `k`.
pub fn recall_at_k(preds: &[Vec<String>], golds: &[Vec<String>], k: usize) -> Result<f64> {
    require_golds(golds)?;
    let hits = match_flags(preds, golds, k).iter().filter(|&&m| m).count();
    Ok(hits as f64 / golds.len() as f64)
}

/// A macro average that may cover no posts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SideScore {
    pub score: Option<f64>,
    pub n: usize,
}

impl SideScore {
    fn from_values(values: &[f64]) -> Self {
        Self {
            score: (!values.is_empty()).then(|| mean(values)),
            n: values.len(),
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PostScores {
    pub id: String,
    pub f1_at: BTreeMap<usize, f64>,
    pub ap_at_5: f64,
    pub present_f1_at_1: Option<f64>,
    pub absent_recall_at_5: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub f1_at: BTreeMap<usize, f64>,
    pub map_at_5: f64,
    pub present_f1_at_1: SideScore,
    pub absent_recall_at_5: SideScore,
    pub n_posts: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_post: Option<Vec<PostScores>>,
}

fn split_golds(post: &Post) -> (Vec<Vec<String>>, Vec<Vec<String>>, Vec<Vec<String>>) {
    let all = post.keyphrases.iter().map(|k| k.tokens.clone()).collect();
    let (present, absent): (Vec<_>, Vec<_>) = post.keyphrases.iter().partition(|k| k.is_present);
    (
        all,
        present.into_iter().map(|k| k.tokens.clone()).collect(),
        absent.into_iter().map(|k| k.tokens.clone()).collect(),
    )
}

fn score_post(post: &Post, preds: &[Vec<String>], ks: &[usize]) -> Result<PostScores> {
    let (all, present, absent) = split_golds(post);
    let f1_at = ks
        .iter()
        .map(|&k| Ok((k, f1_at_k(preds, &all, k)?)))
        .collect::<Result<_>>()?;
    Ok(PostScores {
        id: post.id.clone(),
        f1_at,
        ap_at_5: map_at_k(preds, &all, 5)?,
        present_f1_at_1: (!present.is_empty())
            .then(|| f1_at_k(preds, &present, 1))
            .transpose()?,
        absent_recall_at_5: (!absent.is_empty())
            .then(|| recall_at_k(preds, &absent, 5))
            .transpose()?,
    })
}

fn prediction_index(predictions: &[Prediction]) -> HashMap<&str, Vec<Vec<String>>> {
    predictions
        .iter()
        .map(|p| (p.id.as_str(), p.ranked_tokens()))
        .collect()
}

/// Scores every gold post; a post without a prediction counts as an empty
/// ranked list.
pub fn evaluate(predictions: &[Prediction], posts: &[Post], ks: &[usize]) -> Result<EvalReport> {
    let index = prediction_index(predictions);
    let empty = Vec::new();
    let per_post: Vec<PostScores> = posts
        .iter()
        .map(|post| score_post(post, index.get(post.id.as_str()).unwrap_or(&empty), ks))
        .collect::<Result<_>>()?;
    let f1_at = ks
        .iter()
        .map(|k| {
            let v: Vec<f64> = per_post.iter().map(|p| p.f1_at[k]).collect();
            (*k, mean(&v))
        })
        .collect();
    let ap: Vec<f64> = per_post.iter().map(|p| p.ap_at_5).collect();
    let present: Vec<f64> = per_post.iter().filter_map(|p| p.present_f1_at_1).collect();
    let absent: Vec<f64> = per_post.iter().filter_map(|p| p.absent_recall_at_5).collect();
    Ok(EvalReport {
        f1_at,
        map_at_5: mean(&ap),
        present_f1_at_1: SideScore::from_values(&present),
        absent_recall_at_5: SideScore::from_values(&absent),
        n_posts: per_post.len(),
        per_post: Some(per_post),
    })
}

/// Present-keyphrase F1@1 and absent-keyphrase recall@5.
pub fn present_absent_eval(predictions: &[Prediction], posts: &[Post]) -> Result<(SideScore, SideScore)> {
    let r = evaluate(predictions, posts, &[1])?;
    Ok((r.present_f1_at_1, r.absent_recall_at_5))
}

impl EvalReport {
    /// Plain-text result table, scores in percent.
    pub fn to_table(&self, label: &str) -> String {
        let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{:.2}", 100.0 * v));
        let mut header = format!("{:<16}", "Model");
        let mut row = format!("{label:<16}");
        for (k, v) in &self.f1_at {
            let _ = write!(header, "{:>9}", format!("F1@{k}"));
            let _ = write!(row, "{:>9}", fmt(Some(*v)));
        }
        let _ = write!(header, "{:>9}{:>14}{:>12}", "MAP@5", "Present F1@1", "Absent R@5");
        let _ = write!(
            row,
            "{:>9}{:>14}{:>12}",
            fmt(Some(self.map_at_5)),
            fmt(self.present_f1_at_1.score),
            fmt(self.absent_recall_at_5.score)
        );
        format!("{header}\n{row}\n(posts: {}, present n={}, absent n={})\n", self.n_posts, self.present_f1_at_1.n, self.absent_recall_at_5.n)
    }
}

/// Mean pairwise NPMI of each topic's words, with document co-occurrence
/// probabilities from `docs`. Pairs that never co-occur score -1.
pub fn npmi_coherence(topics: &[Vec<String>], docs: &[Vec<String>]) -> Vec<f64> {
    let n = docs.len() as f64;
    let sets: Vec<HashSet<&str>> = docs
        .iter()
        .map(|d| d.iter().map(String::as_str).collect())
        .collect();
    let df = |ws: &[&str]| sets.iter().filter(|s| ws.iter().all(|w| s.contains(w))).count() as f64;
    topics
        .iter()
        .map(|words| {
            let mut scores = Vec::new();
            for i in 0..words.len() {
                for j in i + 1..words.len() {
                    let (a, b) = (words[i].as_str(), words[j].as_str());
                    let pij = df(&[a, b]) / n;
                    let score = if pij == 0.0 {
                        -1.0
                    } else if pij == 1.0 {
                        1.0
                    } else {
                        let pi = df(&[a]) / n;
                        let pj = df(&[b]) / n;
                        (pij / (pi * pj)).ln() / -pij.ln()
                    };
                    scores.push(score);
                }
            }
            mean(&scores)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{KeyphraseLabel, Split};

    fn kp(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn kps(xs: &[&str]) -> Vec<Vec<String>> {
        xs.iter().map(|s| kp(s)).collect()
    }

    #[test]
    fn matching() {
        assert!(is_match(&kp("super bowl"), &kp("super bowls")));
        assert!(!is_match(&kp("a b"), &kp("b a")));
        assert!(is_match(&kp("x y"), &kp("x y")));
        assert!(!is_match(&kp("x"), &kp("x y")));
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1_at_k(&kps(&["g1", "x"]), &kps(&["g1"]), 1).unwrap(), 1.0);
        let f = f1_at_k(&kps(&["g1", "x", "y"]), &kps(&["g1", "g2"]), 3).unwrap();
        assert!((f - 0.4).abs() < 1e-12);
        assert_eq!(f1_at_k(&kps(&["x"]), &kps(&["g"]), 1).unwrap(), 0.0);
        assert_eq!(f1_at_k(&[], &kps(&["g"]), 1).unwrap(), 0.0);
        assert!(matches!(f1_at_k(&kps(&["g"]), &[], 1), Err(Error::NoGolds)));
    }

    #[test]
    fn short_lists_use_their_length() {
        let f = f1_at_k(&kps(&["g1"]), &kps(&["g1"]), 5).unwrap();
        assert_eq!(f, 1.0);
    }

    #[test]
    fn duplicate_predictions_match_once() {
        let f = f1_at_k(&kps(&["runs", "running"]), &kps(&["run"]), 2).unwrap();
        assert!((f - 2.0 * 0.5 / 1.5).abs() < 1e-12);
    }

    #[test]
    fn map_examples() {
        assert_eq!(map_at_k(&kps(&["g"]), &kps(&["g"]), 5).unwrap(), 1.0);
        assert_eq!(map_at_k(&kps(&["x", "g", "y", "z", "w"]), &kps(&["g"]), 5).unwrap(), 0.5);
        let ap = map_at_k(&kps(&["g1", "x", "g2"]), &kps(&["g1", "g2"]), 5).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    fn post(id: &str, golds: &[(&str, bool)]) -> Post {
        Post {
            id: id.into(),
            tokens: kp("w"),
            keyphrases: golds
                .iter()
                .map(|(t, p)| KeyphraseLabel {
                    tokens: kp(t),
                    is_present: *p,
                })
                .collect(),
            split: Split::Test,
        }
    }

    fn pred(id: &str, ranked: &[&str]) -> Prediction {
        Prediction {
            id: id.into(),
            keyphrases: ranked
                .iter()
                .enumerate()
                .map(|(i, t)| crate::inference::RankedKeyphrase {
                    tokens: kp(t),
                    score: -(i as f64),
                    attention: None,
                })
                .collect(),
            status: Default::default(),
            source: None,
        }
    }

    #[test]
    fn present_and_absent_sides() {
        let posts = [post("a", &[("g", true)])];
        let (p, a) = present_absent_eval(&[pred("a", &["g"])], &posts).unwrap();
        assert_eq!(p.score, Some(1.0));
        assert_eq!(a, SideScore { score: None, n: 0 });

        let posts = [post("b", &[("g", false)])];
        let (_, a) = present_absent_eval(&[pred("b", &["x", "y", "z", "w", "g"])], &posts).unwrap();
        assert_eq!(a.score, Some(1.0));

        let posts = [post("c", &[("g1", false), ("g2", false)])];
        let (_, a) = present_absent_eval(&[pred("c", &["g2", "x"])], &posts).unwrap();
        assert_eq!(a.score, Some(0.5));
    }

    #[test]
    fn missing_prediction_scores_zero() {
        let posts = [post("a", &[("g", true)]), post("b", &[("h", true)])];
        let r = evaluate(&[pred("a", &["g"])], &posts, &[1]).unwrap();
        assert_eq!(r.f1_at[&1], 0.5);
    }

    #[test]
    fn table_lists_every_k() {
        let posts = [post("a", &[("g", true)])];
        let r = evaluate(&[pred("a", &["g"])], &posts, &[1, 3]).unwrap();
        let t = r.to_table("full");
        assert!(t.contains("F1@1") && t.contains("F1@3") && t.contains("100.00"));
    }

    #[test]
    fn npmi_bounds() {
        let docs: Vec<Vec<String>> = vec![kp("a b"), kp("a b"), kp("c d"), kp("c e")];
        let s = npmi_coherence(&[kp("a b"), kp("a c")], &docs);
        assert!((s[0] - 1.0).abs() < 1e-12);
        assert_eq!(s[1], -1.0);
    }
}
