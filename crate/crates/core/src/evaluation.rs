//! Ranking metrics and the evaluation protocols.
//!
//! * Full: every query ranks the whole test pool.
//! * Limited: the test set is split at random into disjoint pools of (by
//!   default) 1000 pairs; each query ranks only its own pool and the
//!   reciprocal ranks of all pools are pooled together.
//! * Sweep: mean MRR over random pools of several sizes.

use std::collections::HashMap;
use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Modality, TokenizedPair};
use crate::embedding::Embeddings;
use crate::encoder::{DualEncoder, PooledPairs};
use crate::error::{Error, Result};
use crate::retrieval::{best_rank, rank_order, RetrievalIndex};

pub const LIMITED_CHUNK: usize = 1000;

/// Mean reciprocal rank.
pub fn mrr(ranks: &[usize]) -> f64 {
    assert!(!ranks.is_empty(), "mrr of an empty rank list");
    ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64
}

/// `(MAP@1, MAA@1)` from per-query `(exact top-1 hit, duplicate-equivalent
/// top-1 hit)` flags.
pub fn top1_metrics(results: &[(bool, bool)]) -> (f64, f64) {
    assert!(!results.is_empty(), "top-1 metrics of an empty result list");
    let n = results.len() as f64;
    let exact = results.iter().filter(|r| r.0).count() as f64;
    let equivalent = results.iter().filter(|r| r.1).count() as f64;
    (exact / n, equivalent / n)
}

/// Per-query ranking outcomes over one pool.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryOutcomes {
    pub ranks: Vec<usize>,
    pub top1: Vec<(bool, bool)>,
}

impl QueryOutcomes {
    fn extend(&mut self, other: QueryOutcomes) {
        self.ranks.extend(other.ranks);
        self.top1.extend(other.top1);
    }
}

/// Ranks each query (row of `scores`) against all candidates (columns).
///
/// `correct[q]` lists the positions linked to query `q`; `classes[c]` labels
/// candidates with identical token sequences so a top-1 duplicate of a linked
/// artifact counts for MAA@1.
pub fn evaluate_score_matrix(
    scores: ArrayView2<f64>,
    correct: &[Vec<usize>],
    classes: &[usize],
) -> Result<QueryOutcomes> {
    if correct.len() != scores.nrows() || classes.len() != scores.ncols() {
        return Err(Error::data("score matrix does not match ground truth"));
    }
    let mut out = QueryOutcomes::default();
    for (row, truth) in scores.axis_iter(Axis(0)).zip(correct) {
        if truth.is_empty() || truth.iter().any(|&c| c >= classes.len()) {
            return Err(Error::data("query without a valid linked artifact"));
        }
        let rank = best_rank(row, truth).expect("non-empty");
        let top = rank_order(row)[0];
        let exact = truth.contains(&top);
        let equivalent = truth.iter().any(|&c| classes[c] == classes[top]);
        out.ranks.push(rank);
        out.top1.push((exact, equivalent));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Full,
    Limited,
    Sweep,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PoolSize {
    Fixed(usize),
    Variable(String),
}

impl std::fmt::Display for PoolSize {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PoolSize::Fixed(n) => write!(f, "{n}"),
            PoolSize::Variable(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub mrr: f64,
    pub map_at_1: f64,
    pub maa_at_1: f64,
    /// Duplicate-equivalent top-1 accuracy (the same value as MAA@1).
    pub accuracy: f64,
    pub query_count: usize,
    pub pool_size: PoolSize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chunk_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl EvalReport {
    fn from_outcomes(out: &QueryOutcomes, protocol: Protocol, pool_size: PoolSize) -> Self {
        let (map_at_1, maa_at_1) = top1_metrics(&out.top1);
        EvalReport {
            protocol,
            mrr: mrr(&out.ranks),
            map_at_1,
            maa_at_1,
            accuracy: maa_at_1,
            query_count: out.ranks.len(),
            pool_size,
            chunk_size: None,
            seed: None,
        }
    }
}

/// Encoded test pairs: text encodings are the queries, code encodings the
/// candidates, and pair `i` links query `i` to candidate `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    pub ids: Vec<String>,
    pub text: Array2<f64>,
    pub code: Array2<f64>,
    /// Equal values mark code artifacts with identical token sequences.
    pub code_class: Vec<usize>,
}

fn duplicate_classes(pairs: &[TokenizedPair]) -> Vec<usize> {
    let mut seen: HashMap<&[String], usize> = HashMap::new();
    pairs
        .iter()
        .map(|p| {
            let next = seen.len();
            *seen.entry(p.code_tokens.as_slice()).or_insert(next)
        })
        .collect()
}

impl EvalSet {
    pub fn encode(dual: &DualEncoder, emb: &Embeddings, pairs: &[TokenizedPair]) -> Self {
        let pooled = PooledPairs::build(emb, pairs);
        Self::from_pooled(dual, &pooled, duplicate_classes(pairs))
    }

    pub fn from_pooled(dual: &DualEncoder, pooled: &PooledPairs, code_class: Vec<usize>) -> Self {
        EvalSet {
            ids: pooled.ids.clone(),
            text: dual.encode_pooled(Modality::Text, pooled.text.view()),
            code: dual.encode_pooled(Modality::Code, pooled.code.view()),
            code_class,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Rows `idx`, in the given order.
    pub fn subset(&self, idx: &[usize]) -> EvalSet {
        EvalSet {
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            text: self.text.select(Axis(0), idx),
            code: self.code.select(Axis(0), idx),
            code_class: idx.iter().map(|&i| self.code_class[i]).collect(),
        }
    }

    pub fn index(&self, provenance: &str) -> Result<RetrievalIndex> {
        RetrievalIndex::from_encodings(self.ids.clone(), self.code.clone(), provenance)
    }

    fn outcomes(&self) -> Result<QueryOutcomes> {
        if self.is_empty() {
            return Err(Error::data("evaluation needs a non-empty test set"));
        }
        let index = self.index("eval")?;
        let scores = index.score_matrix(self.text.view());
        let correct: Vec<Vec<usize>> = (0..self.len()).map(|i| vec![i]).collect();
        evaluate_score_matrix(scores.view(), &correct, &self.code_class)
    }
}

/// Every query ranks the entire pool.
pub fn evaluate_full(set: &EvalSet) -> Result<EvalReport> {
    let out = set.outcomes()?;
    Ok(EvalReport::from_outcomes(&out, Protocol::Full, PoolSize::Fixed(set.len())))
}

/// Full-protocol report over a precomputed query × candidate score matrix.
pub fn evaluate_scores(scores: ArrayView2<f64>, correct: &[Vec<usize>], classes: &[usize]) -> Result<EvalReport> {
    if scores.nrows() == 0 || scores.ncols() == 0 {
        return Err(Error::data("evaluation needs at least one query and one candidate"));
    }
    let out = evaluate_score_matrix(scores, correct, classes)?;
    Ok(EvalReport::from_outcomes(&out, Protocol::Full, PoolSize::Fixed(scores.ncols())))
}

/// Seeded partition of `0..n` into pools of `chunk` members. Members of a
/// pool are listed in ascending order; a single leftover pair joins the
/// previous pool.
pub fn limited_chunks(n: usize, chunk: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut chunks: Vec<Vec<usize>> = order.chunks(chunk.max(1)).map(<[usize]>::to_vec).collect();
    if chunks.len() > 1 && chunks.last().is_some_and(|c| c.len() < 2) {
        let tail = chunks.pop().unwrap();
        chunks.last_mut().unwrap().extend(tail);
    }
    for c in &mut chunks {
        c.sort_unstable();
    }
    chunks
}

/// Disjoint pools of `chunk` pairs covering the test set.
pub fn evaluate_limited(set: &EvalSet, chunk: usize, seed: u64) -> Result<EvalReport> {
    if set.len() < 2 {
        return Err(Error::data("the limited protocol needs at least two test pairs"));
    }
    let chunks = limited_chunks(set.len(), chunk, seed);
    let mut all = QueryOutcomes::default();
    for members in &chunks {
        all.extend(set.subset(members).outcomes()?);
    }
    let pool_size = if chunks.len() == 1 { PoolSize::Fixed(set.len()) } else { PoolSize::Variable("variable".into()) };
    let mut report = EvalReport::from_outcomes(&all, Protocol::Limited, pool_size);
    report.chunk_size = Some(chunk);
    report.seed = Some(seed);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub size: usize,
    pub mean_mrr: f64,
    pub repeats: usize,
}

/// Mean MRR over `repeats` random pools for each requested pool size.
pub fn size_sweep(set: &EvalSet, sizes: &[usize], seed: u64, repeats: usize) -> Result<Vec<SweepPoint>> {
    if repeats == 0 {
        return Err(Error::config("sweep needs at least one repeat"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(sizes.len());
    for &size in sizes {
        if size < 1 || size > set.len() {
            return Err(Error::config(format!("pool size {size} outside 1..={}", set.len())));
        }
        let mut total = 0.0;
        for _ in 0..repeats {
            let mut members = sample(&mut rng, set.len(), size).into_vec();
            members.sort_unstable();
            total += evaluate_full(&set.subset(&members))?.mrr;
        }
        points.push(SweepPoint { size, mean_mrr: total / repeats as f64, repeats });
    }
    Ok(points)
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("size,mean_mrr,repeats\n");
    for p in points {
        let _ = writeln!(out, "{},{:.6},{}", p.size, p.mean_mrr, p.repeats);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityStats {
    pub mean_linked: f64,
    pub mean_non_linked: f64,
    pub sample_size: usize,
    pub trained: bool,
}

pub fn default_non_linked_samples(pairs: usize) -> usize {
    (10 * pairs).min(100_000)
}

/// Mean similarity over linked pairs and over a seeded sample of non-linked
/// `(text_i, code_j)`, `i ≠ j`.
pub fn similarity_stats(set: &EvalSet, samples: usize, seed: u64, trained: bool) -> Result<SimilarityStats> {
    if set.is_empty() {
        return Err(Error::data("similarity statistics need at least one pair"));
    }
    let n = set.len();
    let mean_linked = (0..n).map(|i| set.text.row(i).dot(&set.code.row(i))).sum::<f64>() / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut total, mut drawn) = (0.0, 0);
    if n > 1 {
        for _ in 0..samples {
            let i = rng.gen_range(0..n);
            let mut j = rng.gen_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            total += set.text.row(i).dot(&set.code.row(j));
            drawn += 1;
        }
    }
    Ok(SimilarityStats {
        mean_linked,
        mean_non_linked: if drawn > 0 { total / drawn as f64 } else { 0.0 },
        sample_size: drawn,
        trained,
    })
}

/// Aligned plain-text table of labelled reports.
pub fn format_reports(rows: &[(String, EvalReport)]) -> String {
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(6);
    let mut out = format!(
        "{:<width$}  {:>8}  {:>8}  {:>8}  {:>8}  {:>7}  {:>8}\n",
        "run", "Accuracy", "MAP@1", "MAA@1", "MRR", "queries", "pool"
    );
    for (label, r) in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>8.4}  {:>8.4}  {:>8.4}  {:>8.4}  {:>7}  {:>8}",
            label, r.accuracy, r.map_at_1, r.maa_at_1, r.mrr, r.query_count, r.pool_size
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn mrr_cases() {
        assert_eq!(mrr(&[1, 1, 1]), 1.0);
        assert!((mrr(&[1, 2, 4]) - 0.583_333).abs() < 1e-6);
    }

    #[test]
    fn top1_cases() {
        assert_eq!(top1_metrics(&[(true, true); 3]), (1.0, 1.0));
        let r = [(true, true), (false, true), (false, false), (false, false)];
        assert_eq!(top1_metrics(&r), (0.25, 0.5));
    }

    #[test]
    fn duplicate_candidate_counts_for_maa_only() {
        // query 1's top hit is candidate 0, an exact duplicate of candidate 1
        let scores = array![[0.9, 0.1, 0.0], [0.8, 0.7, 0.1], [0.1, 0.2, 0.3]];
        let correct = vec![vec![0], vec![1], vec![2]];
        let out = evaluate_score_matrix(scores.view(), &correct, &[0, 0, 1]).unwrap();
        assert_eq!(out.ranks, vec![1, 2, 1]);
        assert_eq!(out.top1, vec![(true, true), (false, true), (true, true)]);
    }

    fn perfect_set(n: usize) -> EvalSet {
        let eye = Array2::from_diag(&ndarray::Array1::from_elem(n, 1.0));
        EvalSet {
            ids: (0..n).map(|i| i.to_string()).collect(),
            text: eye.clone(),
            code: eye,
            code_class: (0..n).collect(),
        }
    }

    #[test]
    fn perfect_model_scores_one() {
        let set = perfect_set(6);
        let r = evaluate_full(&set).unwrap();
        assert_eq!((r.mrr, r.map_at_1, r.maa_at_1), (1.0, 1.0, 1.0));
        let sweep = size_sweep(&set, &[2, 6], 1, 3).unwrap();
        assert_eq!(sweep[0].mean_mrr, 1.0);
        assert!(sweep_csv(&sweep).starts_with("size,mean_mrr,repeats\n2,1.000000,3\n"));
    }

    #[test]
    fn limited_chunk_layout() {
        let sizes: Vec<usize> = limited_chunks(2500, 1000, 4).iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![1000, 1000, 500]);
        let sizes: Vec<usize> = limited_chunks(2001, 1000, 4).iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![1000, 1001]);
        let mut all = limited_chunks(57, 10, 2).concat();
        all.sort();
        assert_eq!(all, (0..57).collect::<Vec<_>>());
    }

    #[test]
    fn similarity_stats_on_identity() {
        let s = similarity_stats(&perfect_set(4), 50, 0, true).unwrap();
        assert_eq!(s.mean_linked, 1.0);
        assert_eq!(s.mean_non_linked, 0.0);
        assert_eq!(s.sample_size, 50);
        assert_eq!(default_non_linked_samples(20_000), 100_000);
    }

    #[test]
    fn table_has_a_row_per_report() {
        let r = evaluate_full(&perfect_set(3)).unwrap();
        let t = format_reports(&[("a".into(), r.clone()), ("b".into(), r)]);
        assert_eq!(t.lines().count(), 3);
    }
}
