use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubwordConfig {
    pub min_n: usize,
    pub max_n: usize,
    pub bucket_count: usize,
    pub enabled: bool,
}

impl Default for SubwordConfig {
    fn default() -> Self {
        SubwordConfig { min_n: 3, max_n: 6, bucket_count: 100_000, enabled: true }
    }
}

impl SubwordConfig {
    pub fn disabled() -> Self {
        SubwordConfig { enabled: false, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_n < 1 || self.min_n > self.max_n {
            return Err(Error::config(format!("invalid n-gram range {}..={}", self.min_n, self.max_n)));
        }
        if self.bucket_count < 1 {
            return Err(Error::config("bucket_count must be at least 1"));
        }
        Ok(())
    }
}

/// Character n-grams of `<word>`, shortest first, excluding `<word>` itself.
pub fn char_ngrams(word: &str, cfg: &SubwordConfig) -> Vec<String> {
    let wrapped: Vec<char> = std::iter::once('<').chain(word.chars()).chain(std::iter::once('>')).collect();
    let len = wrapped.len();
    let mut grams = Vec::new();
    for n in cfg.min_n..=cfg.max_n {
        if n > len {
            break;
        }
        for start in 0..=len - n {
            if n == len {
                continue;
            }
            grams.push(wrapped[start..start + n].iter().collect());
        }
    }
    grams
}

/// 32-bit FNV-1a of the n-gram bytes, reduced modulo `bucket_count`.
pub fn hash_ngram(ngram: &str, bucket_count: usize) -> usize {
    const OFFSET: u32 = 0x811c_9dc5;
    const PRIME: u32 = 0x0100_0193;
    let h = ngram.bytes().fold(OFFSET, |h, b| (h ^ u32::from(b)).wrapping_mul(PRIME));
    (h as u64 % bucket_count as u64) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(min_n: usize, max_n: usize) -> SubwordConfig {
        SubwordConfig { min_n, max_n, ..SubwordConfig::default() }
    }

    #[test]
    fn ngram_examples() {
        assert_eq!(char_ngrams("cat", &cfg(3, 6)), vec!["<ca", "cat", "at>", "<cat", "cat>"]);
        assert_eq!(char_ngrams("to", &cfg(3, 3)), vec!["<to", "to>"]);
        assert!(char_ngrams("a", &cfg(3, 3)).is_empty());
    }

    /// Textbook FNV-1a written out independently of the fold above.
    fn fnv1a_reference(s: &str) -> u32 {
        let mut hash: u64 = 2_166_136_261;
        for byte in s.as_bytes() {
            hash ^= *byte as u64;
            hash = (hash * 16_777_619) % (1u64 << 32);
        }
        hash as u32
    }

    #[test]
    fn hash_matches_reference() {
        assert_eq!(fnv1a_reference(""), 0x811c_9dc5);
        assert_eq!(fnv1a_reference("a"), 0xe40c_292c);
        for g in ["<ca", "cat", "at>", "<cat", "foobar"] {
            for buckets in [1usize, 7, 100_000, 2_000_000] {
                assert_eq!(hash_ngram(g, buckets), (fnv1a_reference(g) as usize) % buckets);
            }
        }
        assert_eq!(hash_ngram("anything", 1), 0);
        assert_eq!(hash_ngram("<ca", 100_000), hash_ngram("<ca", 100_000));
    }

    #[test]
    fn validates_ranges() {
        assert!(cfg(3, 6).validate().is_ok());
        assert!(cfg(0, 6).validate().is_err());
        assert!(cfg(4, 3).validate().is_err());
        assert!(SubwordConfig { bucket_count: 0, ..SubwordConfig::default() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn ngram_count_formula(word in "[a-zA-Z0-9]{1,12}", min_n in 1usize..5, extra in 0usize..4) {
            let max_n = min_n + extra;
            let wrapped = word.len() + 2;
            let mut expected: usize = (min_n..=max_n).map(|n| (wrapped + 1).saturating_sub(n)).sum();
            if (min_n..=max_n).contains(&wrapped) {
                expected -= 1;
            }
            prop_assert_eq!(char_ngrams(&word, &cfg(min_n, max_n)).len(), expected);
        }

        #[test]
        fn hash_in_range(g in "\\PC{1,10}", buckets in 1usize..1_000_000) {
            prop_assert!(hash_ngram(&g, buckets) < buckets);
        }
    }
}
