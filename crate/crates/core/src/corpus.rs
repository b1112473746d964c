//! Post ingestion: tokenization, hashtag-derived keyphrases, presence
//! labels, dataset splits and training-instance pairing.

use std::collections::{HashMap, HashSet};
use std::sync::LazyLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ntm::Bow;
use crate::stem::stem_all;
use crate::vocab::{Vocabulary, BOS, EOS, UNK};

const STOPWORDS_EN: &str = include_str!("../data/stopwords_en.txt");

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LangProfile {
    #[default]
    #[serde(rename = "english")]
    English,
    /// Whitespace-separated, already word-segmented Chinese.
    #[serde(rename = "chinese-presegmented", alias = "chinese")]
    ChinesePresegmented,
}

impl LangProfile {
    pub fn stopwords(&self) -> HashSet<String> {
        match self {
            LangProfile::English => english_stopwords(),
            LangProfile::ChinesePresegmented => HashSet::new(),
        }
    }
}

pub fn english_stopwords() -> HashSet<String> {
    parse_stopwords(STOPWORDS_EN)
}

/// One token per line; blank lines and surrounding whitespace ignored.
pub fn parse_stopwords(text: &str) -> HashSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawPost {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing)]
    pub lang_profile: LangProfile,
}

#[derive(Clone, Debug)]
pub struct PreprocessRules {
    pub profile: LangProfile,
    pub lowercase: bool,
    /// Standalone tokens removed as retweet markers.
    pub retweet_markers: Vec<String>,
}

impl PreprocessRules {
    pub fn new(profile: LangProfile) -> Self {
        Self {
            profile,
            lowercase: true,
            retweet_markers: vec!["rt".into()],
        }
    }
}

impl Default for PreprocessRules {
    fn default() -> Self {
        Self::new(LangProfile::English)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyphraseLabel {
    pub tokens: Vec<String>,
    #[serde(rename = "present")]
    pub is_present: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Post {
    pub id: String,
    pub tokens: Vec<String>,
    pub keyphrases: Vec<KeyphraseLabel>,
    pub split: Split,
}

impl Post {
    /// Counts over the BoW vocabulary; tokens outside it are skipped.
    pub fn bow(&self, vocab: &Vocabulary) -> Bow {
        bow_of(&self.tokens, vocab)
    }
}

pub fn bow_of(tokens: &[String], vocab: &Vocabulary) -> Bow {
    let mut counts: HashMap<usize, f64> = HashMap::new();
    for t in tokens {
        if let Some(i) = vocab.bow_id(t) {
            *counts.entry(i).or_default() += 1.0;
        }
    }
    Bow::from_counts(vocab.bow_size(), counts.into_iter().collect())
}

/// One `(post, gold keyphrase)` pair.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingInstance {
    pub post_id: String,
    pub source_ids: Vec<usize>,
    /// Out-of-vocabulary source tokens; entry `i` has id `seq_size + i`.
    pub source_oov: Vec<String>,
    /// `BOS ... EOS`
    pub target_ids: Vec<usize>,
    pub bow: Bow,
}

impl TrainingInstance {
    pub fn n_oov(&self) -> usize {
        self.source_oov.len()
    }

    pub fn target_tokens(&self) -> usize {
        self.target_ids.len() - 1
    }
}

/// Maps (possibly extended) ids back to surface tokens.
pub fn detokenize(ids: &[usize], vocab: &Vocabulary, oov: &[String]) -> Vec<String> {
    ids.iter()
        .map(|&id| match vocab.seq_token(id) {
            Some(t) => t.to_string(),
            None => oov
                .get(id - vocab.seq_size())
                .cloned()
                .unwrap_or_else(|| vocab.seq_token(UNK).unwrap().to_string()),
        })
        .collect()
}

static ENGLISH_TOKEN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?x)
        (?P<url>(?i:https?://|www\.)\S+)
        | (?P<ment>@\w+)
        | (?P<tag>\#\w+)
        | (?P<digit>\d+)
        | (?P<word>\p{L}+(?:['’]\p{L}+)*)
        | (?P<punct>[^\s\p{L}\p{N}])
        ",
    )
    .expect("valid token regex")
});

fn tokenize_english(text: &str, lowercase: bool) -> Vec<String> {
    let mut out = Vec::new();
    for cap in ENGLISH_TOKEN.captures_iter(text) {
        if cap.name("url").is_some() {
            out.push("URL".to_string());
        } else if cap.name("ment").is_some() {
            out.push("MENT".to_string());
        } else if cap.name("digit").is_some() {
            out.push("DIGIT".to_string());
        } else {
            let m = cap.get(0).unwrap().as_str();
            out.push(if lowercase { m.to_lowercase() } else { m.to_string() });
        }
    }
    out
}

fn tokenize_presegmented(text: &str, lowercase: bool) -> Vec<String> {
    text.split_whitespace()
        .map(|tok| {
            let lower = tok.to_lowercase();
            if lower.starts_with("http://") || lower.starts_with("https://") || lower.starts_with("www.") {
                "URL".to_string()
            } else if tok.starts_with('@') && tok.len() > 1 {
                "MENT".to_string()
            } else if tok.chars().all(|c| c.is_ascii_digit()) {
                "DIGIT".to_string()
            } else if tok.starts_with('#') && tok.len() > 1 {
                // Weibo wraps topics as #topic#
                let body = tok.trim_matches('#');
                format!("#{}", if lowercase { body.to_lowercase() } else { body.to_string() })
            } else if lowercase {
                lower
            } else {
                tok.to_string()
            }
        })
        .collect()
}

fn split_tokens(text: &str, rules: &PreprocessRules) -> Vec<String> {
    match rules.profile {
        LangProfile::English => tokenize_english(text, rules.lowercase),
        LangProfile::ChinesePresegmented => tokenize_presegmented(text, rules.lowercase),
    }
}

/// Tokenizes a raw post; hashtags are kept as `#body` tokens.
pub fn tokenize(raw: &RawPost, rules: &PreprocessRules) -> Result<Vec<String>> {
    let tokens: Vec<String> = split_tokens(&raw.text, rules)
        .into_iter()
        .filter(|t| !rules.retweet_markers.iter().any(|m| m.eq_ignore_ascii_case(t)))
        .collect();
    if tokens.is_empty() {
        Err(Error::EmptyAfterTokenize)
    } else {
        Ok(tokens)
    }
}

fn is_hashtag(tok: &str) -> bool {
    tok.len() > 1 && tok.starts_with('#')
}

fn is_punct(tok: &str) -> bool {
    crate::vocab::is_punctuation(tok)
}

/// Splits hashtags off into keyphrases. Interior hashtags keep their body
/// tokens in place; hashtags before the first or after the last content
/// token are removed from the stream.
pub fn extract_keyphrases(
    tokens: &[String],
    rules: &PreprocessRules,
) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let content = |t: &String| !is_hashtag(t) && !is_punct(t);
    let first = tokens.iter().position(content);
    let last = tokens.iter().rposition(content);

    let mut cleaned = Vec::with_capacity(tokens.len());
    let mut keyphrases: Vec<Vec<String>> = Vec::new();
    for (i, tok) in tokens.iter().enumerate() {
        if !is_hashtag(tok) {
            cleaned.push(tok.clone());
            continue;
        }
        let body: Vec<String> = split_tokens(&tok[1..], rules)
            .into_iter()
            .filter(|t| !is_punct(t))
            .collect();
        let interior = matches!((first, last), (Some(f), Some(l)) if i > f && i < l);
        if interior {
            cleaned.extend(body.iter().cloned());
        }
        if body.concat().chars().count() > 1 {
            keyphrases.push(body);
        }
    }

    let mut seen = HashSet::new();
    keyphrases.retain(|kp| seen.insert(stem_all(kp)));
    if keyphrases.is_empty() {
        Err(Error::NoKeyphrase)
    } else {
        Ok((cleaned, keyphrases))
    }
}

/// True iff the stemmed keyphrase occurs contiguously in the stemmed post.
pub fn classify_presence<S: AsRef<str>, T: AsRef<str>>(post_tokens: &[S], keyphrase: &[T]) -> bool {
    if keyphrase.is_empty() {
        return false;
    }
    let post = stem_all(post_tokens);
    let kp = stem_all(keyphrase);
    post.windows(kp.len()).any(|w| w == kp.as_slice())
}

/// Assigns train/dev/test tags from a seeded shuffle. Dev and test get
/// `floor(ratio * n)` posts; train absorbs the remainder.
pub fn split_dataset(n: usize, ratios: (f64, f64, f64), seed: u64) -> Result<Vec<Split>> {
    let (train, dev, test) = ratios;
    if (train + dev + test - 1.0).abs() > 1e-9 || train < 0.0 || dev < 0.0 || test < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "split ratios must be non-negative and sum to 1, got {ratios:?}"
        )));
    }
    let count = |r: f64| (r * n as f64 + 1e-9).floor() as usize;
    let n_dev = count(dev);
    let n_test = count(test);
    let n_train = n.saturating_sub(n_dev + n_test);
    if n_dev == 0 || n_test == 0 || n_train == 0 {
        return Err(Error::TooFewPosts(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Split::Train; n];
    for &i in &order[..n_dev] {
        out[i] = Split::Dev;
    }
    for &i in &order[n_dev..n_dev + n_test] {
        out[i] = Split::Test;
    }
    Ok(out)
}

/// Source token ids over the extended vocabulary, plus the OOV tokens in
/// first-occurrence order (entry `i` has id `seq_size + i`).
pub fn source_ids(tokens: &[String], vocab: &Vocabulary) -> (Vec<usize>, Vec<String>) {
    let seq_size = vocab.seq_size();
    let mut oov: Vec<String> = Vec::new();
    let ids = tokens
        .iter()
        .map(|t| match vocab.seq_id(t) {
            Some(id) => id,
            None => match oov.iter().position(|o| o == t) {
                Some(i) => seq_size + i,
                None => {
                    oov.push(t.clone());
                    seq_size + oov.len() - 1
                }
            },
        })
        .collect();
    (ids, oov)
}

/// One instance per gold keyphrase. Source OOVs get extended ids in
/// first-occurrence order; target tokens fall back to the source's extended
/// id and then to UNK.
pub fn pair_instances(post: &Post, vocab: &Vocabulary) -> Vec<TrainingInstance> {
    let seq_size = vocab.seq_size();
    let (source_ids, source_oov) = source_ids(&post.tokens, vocab);
    let bow = post.bow(vocab);
    post.keyphrases
        .iter()
        .map(|kp| {
            let mut target_ids = vec![BOS];
            target_ids.extend(kp.tokens.iter().map(|t| {
                vocab.seq_id(t).unwrap_or_else(|| {
                    source_oov
                        .iter()
                        .position(|o| o == t)
                        .map_or(UNK, |i| seq_size + i)
                })
            }));
            target_ids.push(EOS);
            TrainingInstance {
                post_id: post.id.clone(),
                source_ids: source_ids.clone(),
                source_oov: source_oov.clone(),
                target_ids,
                bow: bow.clone(),
            }
        })
        .collect()
}

/// Why a raw post did not make it into the dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    EmptyAfterTokenize,
    NoKeyphrase,
    EmptyAfterHashtagRemoval,
    NonAlphabetic,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedPost {
    pub id: String,
    pub reason: DropReason,
}

/// A tokenized post with its keyphrases, before split assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct CleanPost {
    pub id: String,
    pub tokens: Vec<String>,
    pub keyphrases: Vec<Vec<String>>,
}

pub fn clean_post(raw: &RawPost, rules: &PreprocessRules) -> std::result::Result<CleanPost, DropReason> {
    let tokens = tokenize(raw, rules).map_err(|_| DropReason::EmptyAfterTokenize)?;
    let (tokens, keyphrases) = extract_keyphrases(&tokens, rules).map_err(|_| DropReason::NoKeyphrase)?;
    if tokens.is_empty() {
        return Err(DropReason::EmptyAfterHashtagRemoval);
    }
    if rules.profile == LangProfile::English
        && !tokens
            .iter()
            .any(|t| !crate::vocab::PLACEHOLDERS.contains(&t.as_str()) && t.chars().any(char::is_alphabetic))
    {
        return Err(DropReason::NonAlphabetic);
    }
    Ok(CleanPost {
        id: raw.id.clone(),
        tokens,
        keyphrases,
    })
}

#[derive(Clone, Debug)]
pub struct PreprocessConfig {
    pub rules: PreprocessRules,
    pub seq_size: usize,
    pub ratios: (f64, f64, f64),
    pub seed: u64,
    pub stopwords: HashSet<String>,
}

impl PreprocessConfig {
    pub fn new(profile: LangProfile, seed: u64) -> Self {
        let seq_size = match profile {
            LangProfile::English => 30_000,
            LangProfile::ChinesePresegmented => 50_000,
        };
        Self {
            rules: PreprocessRules::new(profile),
            seq_size,
            ratios: (0.8, 0.1, 0.1),
            seed,
            stopwords: profile.stopwords(),
        }
    }
}

/// Corpus statistics in the layout of a data-statistics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub posts: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub avg_len: f64,
    pub kp_per_post: f64,
    pub source_vocab: usize,
    pub distinct_kp: usize,
    pub avg_kp_len: f64,
    pub pct_absent_kp: f64,
    pub target_vocab: usize,
    pub dropped: usize,
}

impl CorpusStats {
    pub fn compute(posts: &[Post], dropped: usize) -> Self {
        let n = posts.len().max(1) as f64;
        let count = |s: Split| posts.iter().filter(|p| p.split == s).count();
        let kps: Vec<&KeyphraseLabel> = posts.iter().flat_map(|p| &p.keyphrases).collect();
        let n_kp = kps.len().max(1) as f64;
        let source_vocab: HashSet<&str> = posts.iter().flat_map(|p| &p.tokens).map(String::as_str).collect();
        let distinct_kp: HashSet<Vec<&str>> = kps
            .iter()
            .map(|k| k.tokens.iter().map(String::as_str).collect())
            .collect();
        let target_vocab: HashSet<&str> = kps.iter().flat_map(|k| &k.tokens).map(String::as_str).collect();
        Self {
            posts: posts.len(),
            train: count(Split::Train),
            dev: count(Split::Dev),
            test: count(Split::Test),
            avg_len: posts.iter().map(|p| p.tokens.len()).sum::<usize>() as f64 / n,
            kp_per_post: kps.len() as f64 / n,
            source_vocab: source_vocab.len(),
            distinct_kp: distinct_kp.len(),
            avg_kp_len: kps.iter().map(|k| k.tokens.len()).sum::<usize>() as f64 / n_kp,
            pct_absent_kp: 100.0 * kps.iter().filter(|k| !k.is_present).count() as f64 / n_kp,
            target_vocab: target_vocab.len(),
            dropped,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Preprocessed {
    pub posts: Vec<Post>,
    pub vocab: Vocabulary,
    pub dropped: Vec<DroppedPost>,
    pub stats: CorpusStats,
}

/// Full pipeline: clean, drop with reasons, split, build the vocabulary on
/// the training split (source and keyphrase tokens), label presence.
pub fn preprocess(raws: &[RawPost], cfg: &PreprocessConfig) -> Result<Preprocessed> {
    let cleaned: Vec<_> = raws.par_iter().map(|r| clean_post(r, &cfg.rules)).collect();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (raw, res) in raws.iter().zip(cleaned) {
        match res {
            Ok(p) => kept.push(p),
            Err(reason) => {
                log::info!("dropping post {}: {:?}", raw.id, reason);
                dropped.push(DroppedPost {
                    id: raw.id.clone(),
                    reason,
                });
            }
        }
    }
    let splits = split_dataset(kept.len(), cfg.ratios, cfg.seed)?;
    let vocab = Vocabulary::build(
        kept.iter()
            .zip(&splits)
            .filter(|(_, &s)| s == Split::Train)
            .flat_map(|(p, _)| std::iter::once(p.tokens.as_slice()).chain(p.keyphrases.iter().map(Vec::as_slice))),
        cfg.seq_size,
        &cfg.stopwords,
    )?;
    let posts: Vec<Post> = kept
        .into_par_iter()
        .zip(splits)
        .map(|(p, split)| {
            let keyphrases = p
                .keyphrases
                .into_iter()
                .map(|kp| KeyphraseLabel {
                    is_present: classify_presence(&p.tokens, &kp),
                    tokens: kp,
                })
                .collect();
            Post {
                id: p.id,
                tokens: p.tokens,
                keyphrases,
                split,
            }
        })
        .collect();
    let stats = CorpusStats::compute(&posts, dropped.len());
    Ok(Preprocessed {
        posts,
        vocab,
        dropped,
        stats,
    })
}
