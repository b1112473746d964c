//! Seeded synthetic corpora for smoke tests and directional experiments.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{classify_presence, english_stopwords, KeyphraseLabel, LangProfile, Post, RawPost, Split};
use crate::error::Result;
use crate::vocab::Vocabulary;

/// Alphabetic index (`a`, `b`, ..., `z`, `ba`, ...) so generated words
/// survive tokenization as plain words.
fn letters(mut i: usize) -> String {
    let mut out = Vec::new();
    loop {
        out.push(b'a' + (i % 26) as u8);
        i /= 26;
        if i == 0 {
            break;
        }
    }
    out.reverse();
    String::from_utf8(out).expect("ascii")
}

fn words(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{}", letters(i))).collect()
}

fn labeled(id: String, tokens: Vec<String>, keyphrase: Vec<String>, split: Split) -> Post {
    let is_present = classify_presence(&tokens, &keyphrase);
    Post {
        id,
        tokens,
        keyphrases: vec![KeyphraseLabel {
            tokens: keyphrase,
            is_present,
        }],
        split,
    }
}

/// Vocabulary over every token of `posts` and their keyphrases, with
/// English stopwords kept out of the bag of words.
pub fn vocabulary_for(posts: &[Post]) -> Result<Vocabulary> {
    let seqs: Vec<&[String]> = posts
        .iter()
        .flat_map(|p| std::iter::once(p.tokens.as_slice()).chain(p.keyphrases.iter().map(|k| k.tokens.as_slice())))
        .collect();
    Vocabulary::build(seqs, usize::MAX / 2, &english_stopwords())
}

/// Posts drawn from disjoint planted topics.
#[derive(Clone, Debug)]
pub struct PlantedCorpus {
    pub posts: Vec<Post>,
    /// Word list of each planted topic.
    pub topics: Vec<Vec<String>>,
    /// Planted topic of each post.
    pub assignment: Vec<usize>,
}

/// Each post picks one topic uniformly and draws `post_len` words from it
/// with replacement. The keyphrase names the topic.
pub fn planted_topics(n_posts: usize, n_topics: usize, words_per_topic: usize, post_len: usize, seed: u64) -> PlantedCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topics: Vec<Vec<String>> = (0..n_topics)
        .map(|t| words(&format!("t{}w", letters(t)), words_per_topic))
        .collect();
    let mut posts = Vec::with_capacity(n_posts);
    let mut assignment = Vec::with_capacity(n_posts);
    for i in 0..n_posts {
        let t = rng.random_range(0..n_topics);
        let tokens = (0..post_len)
            .map(|_| topics[t].choose(&mut rng).expect("non-empty topic").clone())
            .collect();
        posts.push(labeled(format!("planted{i}"), tokens, vec![format!("topic{}", letters(t))], Split::Train));
        assignment.push(t);
    }
    PlantedCorpus {
        posts,
        topics,
        assignment,
    }
}

/// A small labeled corpus whose keyphrase is fixed by a cue word in each
/// post. Half of the labels are the cue itself (present, copyable); the
/// others are two-token phrases absent from the post.
pub fn cue_corpus(n_posts: usize, n_labels: usize, seed: u64) -> Vec<Post> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = words("filler", 20);
    (0..n_posts)
        .map(|i| {
            let label = i % n_labels;
            let cue = format!("cue{}", letters(label));
            let len = rng.random_range(3..=6);
            let mut tokens: Vec<String> = (0..len).map(|_| noise.choose(&mut rng).unwrap().clone()).collect();
            let at = rng.random_range(0..=tokens.len());
            tokens.insert(at, cue.clone());
            let keyphrase = if label.is_multiple_of(2) {
                vec![format!("label{}", letters(label)), "tag".to_string()]
            } else {
                vec![cue]
            };
            labeled(format!("cue{i}"), tokens, keyphrase, Split::Train)
        })
        .collect()
}

/// Settings of [`topic_cue_corpus`].
#[derive(Clone, Copy, Debug)]
pub struct TopicCueSpec {
    pub topics: usize,
    /// Topic-correlated words per topic.
    pub topic_words: usize,
    /// Topic words per post.
    pub per_post: usize,
    /// Probability that a topic word comes from the post's own topic rather
    /// than a uniformly chosen one.
    pub purity: f64,
    /// Shared noise vocabulary size, drawn from English stopwords.
    pub noise_words: usize,
    /// Noise words per post.
    pub noise_per_post: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl Default for TopicCueSpec {
    fn default() -> Self {
        Self {
            topics: 4,
            topic_words: 10,
            per_post: 8,
            purity: 0.6,
            noise_words: 40,
            noise_per_post: 4,
            train: 240,
            dev: 40,
            test: 120,
        }
    }
}

/// Posts whose absent keyphrase is determined only by the topic their
/// topic-correlated words come from, mixed with shared function words.
pub fn topic_cue_corpus(spec: &TopicCueSpec, seed: u64) -> Vec<Post> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topics: Vec<Vec<String>> = (0..spec.topics)
        .map(|t| words(&format!("k{}w", letters(t)), spec.topic_words))
        .collect();
    let names = ["super bowl", "world cup", "grammy awards", "black friday", "election night", "oscar night"];
    let mut noise: Vec<String> = english_stopwords()
        .into_iter()
        .filter(|w| w.chars().all(|c| c.is_ascii_alphabetic()))
        .collect();
    noise.sort();
    noise.truncate(spec.noise_words);
    let total = spec.train + spec.dev + spec.test;
    (0..total)
        .map(|i| {
            let split = if i < spec.train {
                Split::Train
            } else if i < spec.train + spec.dev {
                Split::Dev
            } else {
                Split::Test
            };
            let t = rng.random_range(0..spec.topics);
            let mut tokens = Vec::with_capacity(spec.per_post + spec.noise_per_post);
            for _ in 0..spec.per_post {
                let from = if rng.random_bool(spec.purity) {
                    t
                } else {
                    rng.random_range(0..spec.topics)
                };
                tokens.push(topics[from].choose(&mut rng).unwrap().clone());
            }
            for _ in 0..spec.noise_per_post {
                tokens.push(noise.choose(&mut rng).unwrap().clone());
            }
            tokens.shuffle(&mut rng);
            let keyphrase = names[t % names.len()]
                .split(' ')
                .map(|w| if t < names.len() { w.to_string() } else { format!("{w}{}", letters(t)) })
                .collect();
            labeled(format!("tc{i}"), tokens, keyphrase, split)
        })
        .collect()
}

/// Renders posts as raw text with each keyphrase appended as a trailing
/// hashtag (multi-word keyphrases are joined), so the preprocessing
/// pipeline recovers the same labels.
pub fn to_raw(posts: &[Post]) -> Vec<RawPost> {
    posts
        .iter()
        .map(|p| {
            let tags: Vec<String> = p.keyphrases.iter().map(|k| format!("#{}", k.tokens.concat())).collect();
            RawPost {
                id: p.id.clone(),
                text: format!("{} {}", p.tokens.join(" "), tags.join(" ")),
                lang_profile: LangProfile::English,
            }
        })
        .collect()
}
