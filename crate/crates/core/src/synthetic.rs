//! Seeded toy corpus with a controlled text/code vocabulary overlap.
//!
//! Every linked pair shares a few distinct tokens drawn from a topic
//! vocabulary, so a token recurs across pairs and non-linked pairs sometimes
//! overlap too; the rest of each side is drawn from small per-modality filler
//! vocabularies. Distractor pairs use their own text and code vocabularies and
//! share nothing between their two sides. Distractors are placed in the
//! training split.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetSplits, RawPair, Split};
use crate::embedding::CbowTrainConfig;
use crate::error::{Error, Result};

const TEXT_FILLER: &[&str] = &[
    "returns", "the", "given", "value", "list", "of", "for", "a", "compute", "check", "create", "new", "object",
    "from", "input", "string", "number", "file", "data", "get",
];

const CODE_FILLER: &[&str] = &[
    "self", "return", "if", "else", "for", "in", "None", "True", "len", "range", "append", "result", "value", "raise",
    "try", "except",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub train_pairs: usize,
    pub valid_pairs: usize,
    pub test_pairs: usize,
    pub distractor_pairs: usize,
    /// Distinct topic tokens shared by the two sides of a linked pair.
    pub shared_tokens: usize,
    pub topic_vocab: usize,
    pub distractor_vocab: usize,
    pub text_filler: usize,
    pub code_filler: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            train_pairs: 800,
            valid_pairs: 100,
            test_pairs: 200,
            distractor_pairs: 50,
            shared_tokens: 3,
            topic_vocab: 500,
            distractor_vocab: 100,
            text_filler: 3,
            code_filler: 4,
            seed: 0,
        }
    }
}

struct Generator {
    rng: ChaCha8Rng,
    used: HashSet<String>,
    topics: Vec<String>,
    distractor_text: Vec<String>,
    distractor_code: Vec<String>,
}

impl Generator {
    fn fresh_token(&mut self) -> String {
        loop {
            let len = self.rng.gen_range(5..=8);
            let word: String = (0..len).map(|_| char::from(b'a' + self.rng.gen_range(0..26u8))).collect();
            let reserved = TEXT_FILLER.contains(&word.as_str()) || CODE_FILLER.contains(&word.as_str());
            if !reserved && self.used.insert(word.clone()) {
                return word;
            }
        }
    }

    fn vocabulary(&mut self, n: usize) -> Vec<String> {
        (0..n).map(|_| self.fresh_token()).collect()
    }

    fn filler(&mut self, pool: &[&str], n: usize) -> Vec<String> {
        (0..n).map(|_| pool.choose(&mut self.rng).unwrap().to_string()).collect()
    }

    fn linked(&mut self, cfg: &SyntheticConfig, id: String, split: Split) -> RawPair {
        let shared: Vec<String> = self.topics.choose_multiple(&mut self.rng, cfg.shared_tokens).cloned().collect();
        let mut text = shared.clone();
        text.extend(self.filler(TEXT_FILLER, cfg.text_filler));
        text.shuffle(&mut self.rng);
        let mut code = shared;
        code.extend(self.filler(CODE_FILLER, cfg.code_filler));
        code.shuffle(&mut self.rng);
        RawPair { id, text: text.join(" "), code: render_code(&code), split }
    }

    fn distractor(&mut self, cfg: &SyntheticConfig, id: String) -> RawPair {
        let text = draw(&mut self.rng, &self.distractor_text, cfg.shared_tokens + cfg.text_filler);
        let code = draw(&mut self.rng, &self.distractor_code, cfg.shared_tokens + cfg.code_filler);
        RawPair { id, text: text.join(" "), code: render_code(&code), split: Split::Train }
    }
}

fn draw(rng: &mut ChaCha8Rng, pool: &[String], n: usize) -> Vec<String> {
    (0..n).map(|_| pool.choose(rng).unwrap().clone()).collect()
}

fn render_code(tokens: &[String]) -> String {
    let (head, body) = tokens.split_at(1.min(tokens.len()));
    let mut out = format!("def {}():\n", head.join(""));
    for line in body.chunks(2) {
        out.push_str("    ");
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_pairs == 0 || self.valid_pairs == 0 || self.test_pairs == 0 {
            return Err(Error::config("every split needs at least one linked pair"));
        }
        if self.shared_tokens == 0 || self.shared_tokens > self.topic_vocab {
            return Err(Error::config("linked pairs need between one and topic_vocab shared tokens"));
        }
        if self.distractor_pairs > 0 && self.distractor_vocab == 0 {
            return Err(Error::config("distractor pairs need a distractor vocabulary"));
        }
        Ok(())
    }

    /// Raw pairs for all splits: train (linked then distractors), valid, test.
    pub fn generate(&self) -> Result<Vec<RawPair>> {
        self.validate()?;
        let mut g = Generator {
            rng: ChaCha8Rng::seed_from_u64(self.seed),
            used: HashSet::new(),
            topics: Vec::new(),
            distractor_text: Vec::new(),
            distractor_code: Vec::new(),
        };
        g.topics = g.vocabulary(self.topic_vocab);
        g.distractor_text = g.vocabulary(self.distractor_vocab);
        g.distractor_code = g.vocabulary(self.distractor_vocab);
        let mut pairs = Vec::new();
        for (split, n) in
            [(Split::Train, self.train_pairs), (Split::Valid, self.valid_pairs), (Split::Test, self.test_pairs)]
        {
            for i in 0..n {
                pairs.push(g.linked(self, format!("{split}-{i}"), split));
            }
            if split == Split::Train {
                for i in 0..self.distractor_pairs {
                    pairs.push(g.distractor(self, format!("distractor-{i}")));
                }
            }
        }
        Ok(pairs)
    }

    /// Embedding settings for a corpus this small: the default schedule leaves
    /// topic vectors at their initial scale.
    pub fn cbow_config(&self, seed: u64) -> CbowTrainConfig {
        CbowTrainConfig { epochs: 50, subsample_threshold: 1e-3, seed, ..CbowTrainConfig::default() }
    }

    pub fn splits(&self) -> Result<DatasetSplits> {
        let raw = self.generate()?;
        let (tokenized, _) = crate::corpus::preprocess_pairs(&raw, Default::default());
        Ok(DatasetSplits::from_pairs(tokenized))
    }
}
