use std::collections::HashMap;

use crate::error::{Error, Result};

/// Word → index table with exact counts. Indices are dense and ordered by
/// descending count, ties broken lexicographically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    index: HashMap<String, usize>,
    words: Vec<String>,
    counts: Vec<u64>,
    min_count: u64,
    total_tokens: u64,
}

impl Vocabulary {
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>, min_count: u64) -> Result<Self> {
        let mut raw: HashMap<&str, u64> = HashMap::new();
        for tok in tokens {
            *raw.entry(tok).or_insert(0) += 1;
        }
        let mut kept: Vec<(&str, u64)> = raw.into_iter().filter(|&(_, c)| c >= min_count).collect();
        if kept.is_empty() {
            return Err(Error::config(format!("no token reaches min_count {min_count}")));
        }
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let words: Vec<String> = kept.iter().map(|(w, _)| (*w).to_owned()).collect();
        let counts: Vec<u64> = kept.iter().map(|&(_, c)| c).collect();
        Ok(Self::from_parts(words, counts, min_count))
    }

    pub(crate) fn from_parts(words: Vec<String>, counts: Vec<u64>, min_count: u64) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        let total_tokens = counts.iter().sum();
        Vocabulary { index, words, counts, min_count, total_tokens }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, idx: usize) -> &str {
        &self.words[idx]
    }

    pub fn count(&self, idx: usize) -> u64 {
        self.counts[idx]
    }

    pub fn count_of(&self, word: &str) -> Option<u64> {
        self.get(word).map(|i| self.counts[i])
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    /// Sum of counts of retained words.
    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }
}
