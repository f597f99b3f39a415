use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{EmbeddingModel, EmbeddingScope};
use super::subword::SubwordConfig;
use super::vocab::Vocabulary;
use crate::corpus::{Modality, TokenizedPair};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CbowTrainConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    /// Starting learning rate; decays linearly to zero over training.
    pub initial_lr: f64,
    pub subsample_threshold: f64,
    pub min_count: u64,
    pub seed: u64,
}

impl Default for CbowTrainConfig {
    fn default() -> Self {
        CbowTrainConfig {
            dim: 300,
            window: 5,
            negatives: 5,
            epochs: 5,
            initial_lr: 0.05,
            subsample_threshold: 1e-4,
            min_count: 1,
            seed: 0,
        }
    }
}

impl CbowTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.window == 0 || self.epochs == 0 || self.min_count == 0 {
            return Err(Error::config("dim, window, epochs and min_count must be positive"));
        }
        if !(self.initial_lr > 0.0) || !(self.subsample_threshold > 0.0) {
            return Err(Error::config("initial_lr and subsample_threshold must be positive"));
        }
        Ok(())
    }
}

/// Each artifact side is its own sentence; windows never cross sentences.
fn sentences(pairs: &[TokenizedPair], scope: EmbeddingScope) -> Vec<&[String]> {
    let mut out = Vec::new();
    for pair in pairs {
        for modality in [Modality::Text, Modality::Code] {
            if scope.includes(modality) && !pair.tokens(modality).is_empty() {
                out.push(pair.tokens(modality));
            }
        }
    }
    out
}

fn scope_seed(seed: u64, scope: EmbeddingScope) -> u64 {
    seed ^ (u64::from(scope.tag()) + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Trains a CBOW model with negative sampling over the chosen modalities.
///
/// The context vector of a position is the mean of all input rows (word rows
/// plus n-gram bucket rows) of the words inside a randomly shrunk window.
/// Training is sequential, so a fixed seed gives a bit-identical model.
pub fn train_cbow(
    pairs: &[TokenizedPair],
    scope: EmbeddingScope,
    cfg: &CbowTrainConfig,
    sub: &SubwordConfig,
) -> Result<EmbeddingModel> {
    cfg.validate()?;
    sub.validate()?;
    let sents = sentences(pairs, scope);
    if sents.is_empty() {
        return Err(Error::config(format!("no tokens to train a {scope:?} embedding model on")));
    }
    let vocab = Vocabulary::build(sents.iter().flat_map(|s| s.iter().map(String::as_str)), cfg.min_count)?;
    let seed = scope_seed(cfg.seed, scope);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let dim = cfg.dim;
    let bucket_rows = if sub.enabled { sub.bucket_count } else { 0 };
    let rows = vocab.len() + bucket_rows;
    let bound = 1.0 / dim as f32;
    let mut model = EmbeddingModel {
        input: (0..rows * dim).map(|_| rng.gen_range(-bound..bound)).collect(),
        output: vec![0.0; vocab.len() * dim],
        dim,
        subword: *sub,
        scope,
        seed: cfg.seed,
        config_hash: 0,
        vocab,
    };

    let encoded: Vec<Vec<usize>> =
        sents.iter().map(|s| s.iter().filter_map(|t| model.vocab.get(t)).collect()).collect();
    let word_rows: Vec<Vec<usize>> = model.vocab.words().iter().map(|w| model.input_rows(w)).collect();

    let total = model.vocab.total_tokens() as f64;
    let keep_prob: Vec<f64> = model
        .vocab
        .counts()
        .iter()
        .map(|&c| {
            let ratio = cfg.subsample_threshold / (c as f64 / total);
            (ratio.sqrt() + ratio).min(1.0)
        })
        .collect();
    let noise = WeightedIndex::new(model.vocab.counts().iter().map(|&c| (c as f64).powf(0.75)))
        .map_err(|e| Error::config(format!("negative sampling table: {e}")))?;

    let vocab_len = model.vocab.len();
    let schedule_len = cfg.epochs as f64 * total;
    let mut processed = 0u64;
    let mut hidden = vec![0.0f64; dim];
    let mut grad = vec![0.0f64; dim];
    let mut kept = Vec::new();
    let mut context_rows = Vec::new();

    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        let mut examples = 0u64;
        for sentence in &encoded {
            let lr = cfg.initial_lr * (1.0 - processed as f64 / schedule_len).max(0.0);
            processed += sentence.len() as u64;

            kept.clear();
            kept.extend(sentence.iter().copied().filter(|&w| rng.gen::<f64>() < keep_prob[w]));

            for pos in 0..kept.len() {
                let reach = rng.gen_range(1..=cfg.window);
                context_rows.clear();
                let lo = pos.saturating_sub(reach);
                let hi = (pos + reach).min(kept.len() - 1);
                for (j, &w) in kept.iter().enumerate().take(hi + 1).skip(lo) {
                    if j != pos {
                        context_rows.extend_from_slice(&word_rows[w]);
                    }
                }
                if context_rows.is_empty() {
                    continue;
                }

                hidden.iter_mut().for_each(|h| *h = 0.0);
                for &row in &context_rows {
                    for (h, &x) in hidden.iter_mut().zip(model.input_row(row)) {
                        *h += f64::from(x);
                    }
                }
                let inv = 1.0 / context_rows.len() as f64;
                hidden.iter_mut().for_each(|h| *h *= inv);
                grad.iter_mut().for_each(|g| *g = 0.0);

                let target = kept[pos];
                epoch_loss += update_output(&mut model.output, dim, target, true, &hidden, &mut grad, lr);
                if vocab_len > 1 {
                    for _ in 0..cfg.negatives {
                        let neg = loop {
                            let n = noise.sample(&mut rng);
                            if n != target {
                                break n;
                            }
                        };
                        epoch_loss += update_output(&mut model.output, dim, neg, false, &hidden, &mut grad, lr);
                    }
                }
                for &row in &context_rows {
                    for (x, &g) in model.input[row * dim..(row + 1) * dim].iter_mut().zip(&grad) {
                        *x += g as f32;
                    }
                }
                examples += 1;
            }
        }
        log::debug!(
            "cbow epoch {epoch}: mean loss {:.4} over {examples} examples",
            if examples > 0 { epoch_loss / examples as f64 } else { 0.0 }
        );
    }

    if model.input.iter().chain(&model.output).any(|x| !x.is_finite()) {
        return Err(Error::Numerical("embedding training produced non-finite vectors".into()));
    }
    Ok(model)
}

/// One logistic step against an output row; accumulates the input gradient.
fn update_output(
    output: &mut [f32],
    dim: usize,
    row: usize,
    label: bool,
    hidden: &[f64],
    grad: &mut [f64],
    lr: f64,
) -> f64 {
    let out = &mut output[row * dim..(row + 1) * dim];
    let score: f64 = out.iter().zip(hidden).map(|(&o, &h)| f64::from(o) * h).sum();
    let p = sigmoid(score);
    let (g, loss) = if label { (lr * (1.0 - p), -p.max(1e-12).ln()) } else { (-lr * p, -(1.0 - p).max(1e-12).ln()) };
    for ((o, gr), &h) in out.iter_mut().zip(grad.iter_mut()).zip(hidden) {
        *gr += g * f64::from(*o);
        *o += (g * h) as f32;
    }
    loss
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;

    fn pair(text: &[&str], code: &[&str]) -> TokenizedPair {
        TokenizedPair {
            id: String::new(),
            split: Split::Train,
            text_tokens: text.iter().map(|s| s.to_string()).collect(),
            code_tokens: code.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn small_cfg(seed: u64) -> CbowTrainConfig {
        CbowTrainConfig { dim: 16, epochs: 2, seed, ..CbowTrainConfig::default() }
    }

    #[test]
    fn shapes_and_scopes() {
        let pairs = vec![pair(&["alpha", "beta"], &["def", "gamma"])];
        let sub = SubwordConfig { bucket_count: 50, ..SubwordConfig::default() };
        let m = train_cbow(&pairs, EmbeddingScope::Unified, &small_cfg(1), &sub).unwrap();
        assert_eq!(m.vocab.len(), 4);
        assert_eq!(m.input.len(), (4 + 50) * 16);
        assert_eq!(m.word_vector("alpha").len(), 16);

        let t = train_cbow(&pairs, EmbeddingScope::TextOnly, &small_cfg(1), &sub).unwrap();
        assert_eq!(t.vocab.len(), 2);
        let c = train_cbow(&pairs, EmbeddingScope::CodeOnly, &small_cfg(1), &sub).unwrap();
        assert_eq!(c.vocab.get("alpha"), None);
    }

    #[test]
    fn default_dim_is_300() {
        let pairs = vec![pair(&["a", "b", "c"], &["d"])];
        let sub = SubwordConfig { bucket_count: 10, ..SubwordConfig::default() };
        let m = train_cbow(&pairs, EmbeddingScope::Unified, &CbowTrainConfig::default(), &sub).unwrap();
        assert!(m.vocab.words().iter().all(|w| m.word_vector(w).len() == 300));
    }

    #[test]
    fn empty_corpus_is_fatal() {
        let pairs = vec![pair(&[], &[])];
        assert!(train_cbow(&pairs, EmbeddingScope::Unified, &small_cfg(1), &SubwordConfig::default()).is_err());
        let pairs = vec![pair(&["a"], &[])];
        assert!(train_cbow(&pairs, EmbeddingScope::CodeOnly, &small_cfg(1), &SubwordConfig::default()).is_err());
    }

    #[test]
    fn seeded_training_is_bit_identical() {
        let pairs = vec![pair(&["x", "y", "z", "x"], &["def", "x", "y"]), pair(&["y", "w"], &["w", "q"])];
        let sub = SubwordConfig { bucket_count: 64, ..SubwordConfig::default() };
        let a = train_cbow(&pairs, EmbeddingScope::Unified, &small_cfg(5), &sub).unwrap();
        let b = train_cbow(&pairs, EmbeddingScope::Unified, &small_cfg(5), &sub).unwrap();
        assert_eq!(a, b);
        let c = train_cbow(&pairs, EmbeddingScope::Unified, &small_cfg(6), &sub).unwrap();
        assert_ne!(a.input, c.input);
    }

    #[test]
    fn unified_vocab_is_union_of_modalities() {
        let pairs = vec![pair(&["a", "b"], &["b", "c"]), pair(&["d"], &["e", "a"])];
        let sub = SubwordConfig::disabled();
        let u = train_cbow(&pairs, EmbeddingScope::Unified, &small_cfg(1), &sub).unwrap();
        let t = train_cbow(&pairs, EmbeddingScope::TextOnly, &small_cfg(1), &sub).unwrap();
        let c = train_cbow(&pairs, EmbeddingScope::CodeOnly, &small_cfg(1), &sub).unwrap();
        let mut union: Vec<&String> = t.vocab.words().iter().chain(c.vocab.words()).collect();
        union.sort();
        union.dedup();
        let mut unified: Vec<&String> = u.vocab.words().iter().collect();
        unified.sort();
        assert_eq!(unified, union);
    }
}
