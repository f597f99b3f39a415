use std::fs;
use std::path::{Path, PathBuf};

use dualsearch::corpus::{DgmsOptions, FieldMap, PreprocessOptions};
use dualsearch::embedding::{CbowTrainConfig, SubwordConfig};
use dualsearch::evaluation::{Protocol, LIMITED_CHUNK};
use dualsearch::experiment::{AblationAxes, LanguageModel};
use dualsearch::training::HyperParams;
use dualsearch::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Files whose lines carry their own split field.
    pub inputs: Vec<PathBuf>,
    pub fields: FieldMap,
    pub preprocess: PreprocessOptions,
    /// Rebuild the splits as the docstring-query variant.
    pub dgms: Option<DgmsOptions>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train: None,
            valid: None,
            test: None,
            inputs: Vec::new(),
            fields: FieldMap::default(),
            preprocess: PreprocessOptions::default(),
            dgms: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub language_model: LanguageModel,
    pub cbow: CbowTrainConfig,
    pub subword: SubwordConfig,
    /// Also write a plain-text vector dump next to each binary model.
    pub text_dump: bool,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            language_model: LanguageModel::Unified,
            cbow: CbowTrainConfig::default(),
            subword: SubwordConfig::default(),
            text_dump: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub protocols: Vec<Protocol>,
    pub chunk_size: usize,
    pub sweep_sizes: Vec<usize>,
    pub repeats: usize,
    /// Non-linked draws for the similarity statistics; `None` picks the default.
    pub similarity_samples: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            protocols: vec![Protocol::Full, Protocol::Limited],
            chunk_size: LIMITED_CHUNK,
            sweep_sizes: vec![50, 100, 200, 500, 1000],
            repeats: 10,
            similarity_samples: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub embedding: EmbeddingConfig,
    pub training: HyperParams,
    pub eval: EvalConfig,
    pub ablation: AblationAxes,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataConfig::default(),
            embedding: EmbeddingConfig::default(),
            training: HyperParams::default(),
            eval: EvalConfig::default(),
            ablation: AblationAxes::default(),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    /// One seed drives every stage.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.embedding.cbow.seed = seed;
        self.training.seed = seed;
    }

    /// First 8 bytes of SHA-256 over the canonical JSON of the config.
    pub fn hash(&self) -> u64 {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    pub fn hash_hex(&self) -> String {
        format!("{:016x}", self.hash())
    }
}

/// Fixed file names under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: PathBuf) -> Self {
        Layout { root }
    }

    pub fn raw_dir(&self) -> PathBuf {
        self.root.join("raw")
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn split_file(&self, split: dualsearch::corpus::Split) -> PathBuf {
        self.data_dir().join(format!("{split}.jsonl"))
    }

    pub fn embedding_dir(&self) -> PathBuf {
        self.root.join("embeddings")
    }

    pub fn model_dir(&self) -> PathBuf {
        self.root.join("model")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.model_dir().join("encoder.dsen")
    }

    pub fn train_log(&self) -> PathBuf {
        self.model_dir().join("train_log.jsonl")
    }

    pub fn state_dir(&self) -> PathBuf {
        self.model_dir().join("state")
    }

    pub fn index(&self) -> PathBuf {
        self.root.join("index").join("test.dsix")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn ablation_dir(&self) -> PathBuf {
        self.root.join("ablation")
    }
}

pub fn parse_list<T: std::str::FromStr<Err = Error>>(items: &[String]) -> Result<Vec<T>> {
    items.iter().map(|s| s.parse()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_config_fills_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"training": {"output_size": 64}, "seed": 4}"#).unwrap();
        assert_eq!(cfg.training.output_size, 64);
        assert_eq!(cfg.training.max_epochs, 300);
        assert_eq!(cfg.eval.chunk_size, 1000);
        assert_eq!(cfg.seed, 4);
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.set_seed(1);
        assert_ne!(a.hash(), b.hash());
        assert_eq!(b.training.seed, 1);
        assert_eq!(b.embedding.cbow.seed, 1);
    }

    #[test]
    fn unknown_field_values_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        fs::write(&path, r#"{"training": {"loss": "hinge"}}"#).unwrap();
        assert!(matches!(RunConfig::load(Some(&path)), Err(Error::Config(_))));
        assert!(matches!(RunConfig::load(Some(&dir.path().join("missing.json"))), Err(Error::Config(_))));
    }
}
