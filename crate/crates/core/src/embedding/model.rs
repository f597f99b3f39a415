use serde::{Deserialize, Serialize};

use super::subword::{char_ngrams, hash_ngram, SubwordConfig};
use super::vocab::Vocabulary;
use crate::corpus::Modality;

/// Which token streams a model was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingScope {
    Unified,
    TextOnly,
    CodeOnly,
}

impl EmbeddingScope {
    pub fn includes(self, modality: Modality) -> bool {
        matches!(
            (self, modality),
            (EmbeddingScope::Unified, _)
                | (EmbeddingScope::TextOnly, Modality::Text)
                | (EmbeddingScope::CodeOnly, Modality::Code)
        )
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            EmbeddingScope::Unified => 0,
            EmbeddingScope::TextOnly => 1,
            EmbeddingScope::CodeOnly => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(EmbeddingScope::Unified),
            1 => Some(EmbeddingScope::TextOnly),
            2 => Some(EmbeddingScope::CodeOnly),
            _ => None,
        }
    }
}

/// A trained word-embedding model.
///
/// `input` holds one row per vocabulary word followed by one row per n-gram
/// bucket (no bucket rows when subwords are disabled); `output` holds the
/// negative-sampling output vectors, one per vocabulary word. Rows are
/// row-major with `dim` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    pub vocab: Vocabulary,
    pub input: Vec<f32>,
    pub output: Vec<f32>,
    pub dim: usize,
    pub subword: SubwordConfig,
    pub scope: EmbeddingScope,
    pub seed: u64,
    pub config_hash: u64,
}

impl EmbeddingModel {
    pub fn bucket_rows(&self) -> usize {
        if self.subword.enabled {
            self.subword.bucket_count
        } else {
            0
        }
    }

    pub fn input_row(&self, row: usize) -> &[f32] {
        &self.input[row * self.dim..(row + 1) * self.dim]
    }

    pub fn output_row(&self, row: usize) -> &[f32] {
        &self.output[row * self.dim..(row + 1) * self.dim]
    }

    /// Rows of `input` that compose `word`: its own row when in vocabulary,
    /// then one row per character n-gram when subwords are enabled.
    pub fn input_rows(&self, word: &str) -> Vec<usize> {
        let mut rows = Vec::new();
        if let Some(idx) = self.vocab.get(word) {
            rows.push(idx);
        }
        if self.subword.enabled {
            let base = self.vocab.len();
            rows.extend(
                char_ngrams(word, &self.subword).iter().map(|g| base + hash_ngram(g, self.subword.bucket_count)),
            );
        }
        rows
    }

    /// Mean of the composing rows, or `None` when the word has none.
    pub fn try_word_vector(&self, word: &str) -> Option<Vec<f64>> {
        let rows = self.input_rows(word);
        if rows.is_empty() {
            return None;
        }
        let mut acc = vec![0.0f64; self.dim];
        for &row in &rows {
            for (a, &x) in acc.iter_mut().zip(self.input_row(row)) {
                *a += f64::from(x);
            }
        }
        let n = rows.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Some(acc)
    }

    /// Vector for any token; the zero vector when it cannot be composed.
    pub fn word_vector(&self, word: &str) -> Vec<f64> {
        self.try_word_vector(word).unwrap_or_else(|| vec![0.0; self.dim])
    }

    /// Per-token vectors, dropping tokens that compose to nothing (only
    /// possible when subwords are disabled).
    pub fn embed_sequence<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<Vec<f64>> {
        tokens.iter().filter_map(|t| self.try_word_vector(t.as_ref())).collect()
    }
}

/// The embedding models used to feed the two encoders.
#[derive(Debug, Clone, PartialEq)]
pub enum Embeddings {
    Unified(EmbeddingModel),
    Separate { text: EmbeddingModel, code: EmbeddingModel },
}

impl Embeddings {
    pub fn model(&self, modality: Modality) -> &EmbeddingModel {
        match (self, modality) {
            (Embeddings::Unified(m), _) => m,
            (Embeddings::Separate { text, .. }, Modality::Text) => text,
            (Embeddings::Separate { code, .. }, Modality::Code) => code,
        }
    }

    pub fn dim(&self) -> usize {
        self.model(Modality::Text).dim
    }

    pub fn embed<S: AsRef<str>>(&self, modality: Modality, tokens: &[S]) -> Vec<Vec<f64>> {
        self.model(modality).embed_sequence(tokens)
    }

    /// Provenance string combining each model's config hash and seed.
    pub fn provenance(&self) -> String {
        match self {
            Embeddings::Unified(m) => format!("emb:unified:{:016x}:{}", m.config_hash, m.seed),
            Embeddings::Separate { text, code } => {
                format!("emb:separate:{:016x}:{}+{:016x}:{}", text.config_hash, text.seed, code.config_hash, code.seed)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two-word vocabulary, dim 2, 16 buckets; row r holds (r, -r).
    fn toy(enabled: bool) -> EmbeddingModel {
        let vocab = Vocabulary::from_parts(vec!["ab".into(), "cd".into()], vec![2, 1], 1);
        let subword = SubwordConfig { min_n: 2, max_n: 3, bucket_count: 16, enabled };
        let rows = 2 + if enabled { 16 } else { 0 };
        let input = (0..rows).flat_map(|r| [r as f32, -(r as f32)]).collect();
        EmbeddingModel {
            vocab,
            input,
            output: vec![0.0; 4],
            dim: 2,
            subword,
            scope: EmbeddingScope::Unified,
            seed: 0,
            config_hash: 0,
        }
    }

    #[test]
    fn in_vocab_word_averages_word_and_ngrams() {
        let m = toy(true);
        // "<ab>" → 2-grams "<a","ab","b>", 3-grams "<ab","ab>"
        let grams = ["<a", "ab", "b>", "<ab", "ab>"];
        let mut expect = 0.0; // word row 0
        for g in grams {
            expect += (2 + hash_ngram(g, 16)) as f64;
        }
        expect /= 6.0;
        let v = m.word_vector("ab");
        assert!((v[0] - expect).abs() < 1e-12);
        assert!((v[1] + expect).abs() < 1e-12);
    }

    #[test]
    fn oov_word_uses_ngrams_only() {
        let m = toy(true);
        let rows = m.input_rows("zz");
        assert!(!rows.contains(&0) && !rows.contains(&1));
        let mean = rows.iter().map(|&r| r as f64).sum::<f64>() / rows.len() as f64;
        assert!((m.word_vector("zz")[0] - mean).abs() < 1e-12);
    }

    #[test]
    fn subword_disabled() {
        let m = toy(false);
        assert_eq!(m.word_vector("zz"), vec![0.0, 0.0]);
        assert_eq!(m.word_vector("cd"), vec![1.0, -1.0]);
        let seq = m.embed_sequence(&["ab", "zz", "cd"]);
        assert_eq!(seq, vec![vec![0.0, -0.0], vec![1.0, -1.0]]);
    }

    #[test]
    fn embed_sequence_basics() {
        let m = toy(true);
        assert!(m.embed_sequence::<&str>(&[]).is_empty());
        let seq = m.embed_sequence(&["a", "a"]);
        assert_eq!(seq.len(), 2);
        assert_eq!(seq[0], seq[1]);
    }
}
