//! End-to-end runs: embeddings, pooling, training and evaluation, plus the
//! ablation grid over language model, loss, output size and pass count.

use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetSplits, TokenizedPair};
use crate::embedding::{train_cbow, CbowTrainConfig, EmbeddingScope, Embeddings, SubwordConfig};
use crate::encoder::{DualEncoder, LossKind, PooledPairs};
use crate::error::{Error, Result};
use crate::evaluation::{
    default_non_linked_samples, evaluate_full, similarity_stats, size_sweep, EvalReport, EvalSet, SimilarityStats,
    SweepPoint,
};
use crate::training::{fit, FitOutcome, HyperParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LanguageModel {
    /// One subword CBOW model over text and code tokens together.
    Unified,
    /// A text-only model and a code-only model.
    Separate,
    /// One model over both modalities without character n-grams.
    SubwordOff,
}

impl LanguageModel {
    pub const ALL: [LanguageModel; 3] = [LanguageModel::Unified, LanguageModel::Separate, LanguageModel::SubwordOff];
}

impl std::str::FromStr for LanguageModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unified" => Ok(LanguageModel::Unified),
            "separate" => Ok(LanguageModel::Separate),
            "subword-off" | "no-subword" => Ok(LanguageModel::SubwordOff),
            other => Err(Error::config(format!(
                "unknown language model {other:?} (expected unified, separate or subword-off)"
            ))),
        }
    }
}

impl std::fmt::Display for LanguageModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LanguageModel::Unified => "unified",
            LanguageModel::Separate => "separate",
            LanguageModel::SubwordOff => "subword-off",
        })
    }
}

pub fn train_embeddings(
    lm: LanguageModel,
    pairs: &[TokenizedPair],
    cbow: &CbowTrainConfig,
    subword: &SubwordConfig,
) -> Result<Embeddings> {
    Ok(match lm {
        LanguageModel::Unified => Embeddings::Unified(train_cbow(pairs, EmbeddingScope::Unified, cbow, subword)?),
        LanguageModel::SubwordOff => {
            let off = SubwordConfig { enabled: false, ..subword.clone() };
            Embeddings::Unified(train_cbow(pairs, EmbeddingScope::Unified, cbow, &off)?)
        }
        LanguageModel::Separate => Embeddings::Separate {
            text: train_cbow(pairs, EmbeddingScope::TextOnly, cbow, subword)?,
            code: train_cbow(pairs, EmbeddingScope::CodeOnly, cbow, subword)?,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub language_model: LanguageModel,
    pub loss: LossKind,
    pub output_size: usize,
    pub passes: usize,
    pub untrained: EvalReport,
    pub trained: EvalReport,
    pub untrained_similarity: SimilarityStats,
    pub trained_similarity: SimilarityStats,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub initial_val_loss: f64,
    pub best_val_loss: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<SweepPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    pub sizes: Vec<usize>,
    pub repeats: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec { sizes: Vec::new(), repeats: 10 }
    }
}

/// Trains a dual encoder on the train/valid splits of `splits` over already
/// trained embeddings and evaluates it (and its untrained initialization) on
/// the test split with the full protocol.
pub fn run_with_embeddings(
    emb: &Embeddings,
    lm: LanguageModel,
    splits: &DatasetSplits,
    hp: &HyperParams,
    sweep: &SweepSpec,
) -> Result<(RunSummary, FitOutcome)> {
    if splits.test.is_empty() {
        return Err(Error::data("the test split is empty"));
    }
    let train = PooledPairs::build(emb, &splits.train);
    let valid = PooledPairs::build(emb, &splits.valid);
    let outcome = fit(&train, &valid, hp)?;
    let untrained = DualEncoder::new(hp.encoder_config(emb.dim()), hp.seed)?;

    let test_untrained = EvalSet::encode(&untrained, emb, &splits.test);
    let test_trained = EvalSet::encode(&outcome.best, emb, &splits.test);
    let samples = default_non_linked_samples(splits.test.len());
    let sweep_points = if sweep.sizes.is_empty() {
        Vec::new()
    } else {
        size_sweep(&test_trained, &sweep.sizes, hp.seed, sweep.repeats)?
    };
    let summary = RunSummary {
        language_model: lm,
        loss: hp.loss,
        output_size: hp.output_size,
        passes: hp.passes,
        untrained: evaluate_full(&test_untrained)?,
        trained: evaluate_full(&test_trained)?,
        untrained_similarity: similarity_stats(&test_untrained, samples, hp.seed, false)?,
        trained_similarity: similarity_stats(&test_trained, samples, hp.seed, true)?,
        best_epoch: outcome.best_epoch,
        epochs_run: outcome.log.len(),
        initial_val_loss: outcome.initial_val_loss,
        best_val_loss: outcome.best_val_loss,
        sweep: sweep_points,
    };
    Ok((summary, outcome))
}

/// Embeddings are trained on the text and code of every split; no pairing
/// information enters the language model.
pub fn run(
    lm: LanguageModel,
    splits: &DatasetSplits,
    cbow: &CbowTrainConfig,
    subword: &SubwordConfig,
    hp: &HyperParams,
    sweep: &SweepSpec,
) -> Result<RunSummary> {
    let emb = train_embeddings(lm, &all_pairs(splits), cbow, subword)?;
    Ok(run_with_embeddings(&emb, lm, splits, hp, sweep)?.0)
}

fn all_pairs(splits: &DatasetSplits) -> Vec<TokenizedPair> {
    splits.iter().cloned().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationAxes {
    pub language_models: Vec<LanguageModel>,
    pub losses: Vec<LossKind>,
    pub output_sizes: Vec<usize>,
    pub passes: Vec<usize>,
}

impl Default for AblationAxes {
    fn default() -> Self {
        AblationAxes {
            language_models: LanguageModel::ALL.to_vec(),
            losses: vec![LossKind::CosineBce, LossKind::Softmax, LossKind::Contrastive],
            output_sizes: vec![500, 2000, 8000],
            passes: vec![1, 2, 3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationSetting {
    pub language_model: LanguageModel,
    pub loss: LossKind,
    pub output_size: usize,
    pub passes: usize,
}

impl AblationSetting {
    pub fn label(&self) -> String {
        format!("{}/{}/h{}/p{}", self.language_model, self.loss, self.output_size, self.passes)
    }

    pub fn apply(&self, base: &HyperParams) -> HyperParams {
        HyperParams { loss: self.loss, output_size: self.output_size, passes: self.passes, ..base.clone() }
    }
}

impl AblationAxes {
    /// Only the values of `hp`: a single-row grid.
    pub fn single(lm: LanguageModel, hp: &HyperParams) -> Self {
        AblationAxes {
            language_models: vec![lm],
            losses: vec![hp.loss],
            output_sizes: vec![hp.output_size],
            passes: vec![hp.passes],
        }
    }

    /// Cross product, language model outermost.
    pub fn settings(&self) -> Vec<AblationSetting> {
        let mut out = Vec::new();
        for &language_model in &self.language_models {
            for &loss in &self.losses {
                for &output_size in &self.output_sizes {
                    for &passes in &self.passes {
                        out.push(AblationSetting { language_model, loss, output_size, passes });
                    }
                }
            }
        }
        out
    }
}

/// Runs every setting of `axes`; embeddings are trained once per language
/// model and shared by all rows using it.
pub fn ablate<F>(
    splits: &DatasetSplits,
    cbow: &CbowTrainConfig,
    subword: &SubwordConfig,
    base: &HyperParams,
    axes: &AblationAxes,
    mut on_row: F,
) -> Result<Vec<(AblationSetting, RunSummary)>>
where
    F: FnMut(&AblationSetting, &RunSummary),
{
    let corpus = all_pairs(splits);
    let mut rows = Vec::new();
    for &lm in &axes.language_models {
        let emb = train_embeddings(lm, &corpus, cbow, subword)?;
        for setting in axes.settings().into_iter().filter(|s| s.language_model == lm) {
            let (summary, _) = run_with_embeddings(&emb, lm, splits, &setting.apply(base), &SweepSpec::default())?;
            on_row(&setting, &summary);
            rows.push((setting, summary));
        }
    }
    Ok(rows)
}
