//! Sequence and bag-of-words vocabularies.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

/// Generic tags substituted for links, mentions and digit runs.
pub const PLACEHOLDERS: [&str; 3] = ["URL", "MENT", "DIGIT"];

/// True for tokens with no letters or digits.
pub fn is_punctuation(token: &str) -> bool {
    !token.chars().any(char::is_alphanumeric)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabFile", into = "VocabFile")]
pub struct Vocabulary {
    seq: Vec<String>,
    bow: Vec<String>,
    seq_index: HashMap<String, usize>,
    bow_index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    seq: Vec<String>,
    bow: Vec<String>,
}

impl From<VocabFile> for Vocabulary {
    fn from(f: VocabFile) -> Self {
        Self::from_lists(f.seq, f.bow)
    }
}

impl From<Vocabulary> for VocabFile {
    fn from(v: Vocabulary) -> Self {
        Self { seq: v.seq, bow: v.bow }
    }
}

impl Vocabulary {
    fn from_lists(seq: Vec<String>, bow: Vec<String>) -> Self {
        let seq_index = seq.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let bow_index = bow.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self {
            seq,
            bow,
            seq_index,
            bow_index,
        }
    }

    /// Specials followed by the `seq_size - 4` most frequent tokens
    /// (ties broken lexicographically). The BoW vocabulary keeps the same
    /// order minus stopwords, punctuation and generic tags.
    pub fn build<'a, I>(token_seqs: I, seq_size: usize, stopwords: &HashSet<String>) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        if seq_size < SPECIALS.len() {
            return Err(Error::InvalidConfig(format!(
                "sequence vocabulary needs at least {} entries",
                SPECIALS.len()
            )));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for seq in token_seqs {
            for tok in seq {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, _)| !SPECIALS.contains(t))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut seq: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        seq.extend(
            ranked
                .iter()
                .take(seq_size - SPECIALS.len())
                .map(|(t, _)| t.to_string()),
        );
        let bow = seq[SPECIALS.len()..]
            .iter()
            .filter(|t| {
                !stopwords.contains(t.as_str())
                    && !is_punctuation(t)
                    && !PLACEHOLDERS.contains(&t.as_str())
            })
            .cloned()
            .collect();
        Ok(Self::from_lists(seq, bow))
    }

    pub fn seq_size(&self) -> usize {
        self.seq.len()
    }

    pub fn bow_size(&self) -> usize {
        self.bow.len()
    }

    pub fn seq_tokens(&self) -> &[String] {
        &self.seq
    }

    pub fn bow_tokens(&self) -> &[String] {
        &self.bow
    }

    pub fn seq_id(&self, token: &str) -> Option<usize> {
        self.seq_index.get(token).copied()
    }

    pub fn seq_id_or_unk(&self, token: &str) -> usize {
        self.seq_id(token).unwrap_or(UNK)
    }

    pub fn bow_id(&self, token: &str) -> Option<usize> {
        self.bow_index.get(token).copied()
    }

    pub fn seq_token(&self, id: usize) -> Option<&str> {
        self.seq.get(id).map(String::as_str)
    }

    /// SHA-256 over the serialized vocabulary, hex encoded.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("vocabulary serializes");
        hex_digest(&json)
    }
}

/// Lowercase hex SHA-256.
pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
