//! Exact dot-product retrieval over encoded code artifacts.
//!
//! Candidates are ranked by score, descending; equal scores keep index order,
//! so rankings (and the metrics built on them) are reproducible.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::Serialize;

use crate::corpus::Modality;
use crate::embedding::Embeddings;
use crate::encoder::{pooled_tokens, DualEncoder};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    pub ids: Vec<String>,
    /// One encoding per row, in artifact order.
    pub encodings: Array2<f64>,
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hit {
    pub id: String,
    pub position: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryResult {
    pub hits: Vec<Hit>,
}

/// Candidate positions ordered by descending score, ties by position.
pub fn rank_order(scores: ArrayView1<f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// 1-based rank of candidate `pos` under the descending/position tie rule.
pub fn rank_in_scores(scores: ArrayView1<f64>, pos: usize) -> usize {
    let s = scores[pos];
    let ahead = scores.iter().enumerate().filter(|&(j, &x)| x > s || (x == s && j < pos)).count();
    ahead + 1
}

/// Best (smallest) rank among the correct positions.
pub fn best_rank(scores: ArrayView1<f64>, correct: &[usize]) -> Option<usize> {
    correct.iter().map(|&c| rank_in_scores(scores, c)).min()
}

impl RetrievalIndex {
    pub fn from_encodings(ids: Vec<String>, encodings: Array2<f64>, provenance: impl Into<String>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::data("cannot build an index over zero artifacts"));
        }
        if ids.len() != encodings.nrows() {
            return Err(Error::data(format!("{} ids for {} encodings", ids.len(), encodings.nrows())));
        }
        let provenance = provenance.into();
        if provenance.is_empty() {
            return Err(Error::data("index provenance must not be empty"));
        }
        Ok(RetrievalIndex { ids, encodings, provenance })
    }

    /// Encodes every code artifact in eval mode, preserving order.
    pub fn build<S: AsRef<str>>(
        dual: &DualEncoder,
        emb: &Embeddings,
        artifacts: &[(String, Vec<S>)],
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if artifacts.is_empty() {
            return Err(Error::data("cannot build an index over zero artifacts"));
        }
        let d = emb.dim();
        let mut pooled = Array2::zeros((artifacts.len(), d));
        for (i, (_, tokens)) in artifacts.iter().enumerate() {
            pooled.row_mut(i).assign(&pooled_tokens(emb, Modality::Code, tokens));
        }
        let encodings = dual.encode_pooled(Modality::Code, pooled.view());
        let ids = artifacts.iter().map(|(id, _)| id.clone()).collect();
        Self::from_encodings(ids, encodings, provenance)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.encodings.ncols()
    }

    pub fn scores(&self, query: ArrayView1<f64>) -> Array1<f64> {
        self.encodings.dot(&query)
    }

    /// Scores for a batch of query encodings, one row per query.
    pub fn score_matrix(&self, queries: ArrayView2<f64>) -> Array2<f64> {
        queries.dot(&self.encodings.t())
    }

    pub fn encode_query<S: AsRef<str>>(&self, dual: &DualEncoder, emb: &Embeddings, tokens: &[S]) -> Array1<f64> {
        dual.encode_tokens(emb, Modality::Text, tokens).0
    }

    pub fn query_encoding(&self, query: ArrayView1<f64>, k: usize) -> QueryResult {
        let scores = self.scores(query);
        let hits = rank_order(scores.view())
            .into_iter()
            .take(k)
            .map(|pos| Hit { id: self.ids[pos].clone(), position: pos, score: scores[pos] })
            .collect();
        QueryResult { hits }
    }

    pub fn query<S: AsRef<str>>(&self, dual: &DualEncoder, emb: &Embeddings, tokens: &[S], k: usize) -> QueryResult {
        let q = self.encode_query(dual, emb, tokens);
        self.query_encoding(q.view(), k.max(1))
    }

    pub fn positions_of(&self, ids: &[String]) -> Result<Vec<usize>> {
        let lookup: HashMap<&str, usize> = self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        ids.iter()
            .map(|id| {
                lookup
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::data(format!("ground-truth id {id:?} is not in the index")))
            })
            .collect()
    }

    pub fn rank_of_encoding(&self, query: ArrayView1<f64>, correct: &[usize]) -> Result<usize> {
        if correct.is_empty() {
            return Err(Error::data("no correct artifact given"));
        }
        if let Some(&bad) = correct.iter().find(|&&c| c >= self.len()) {
            return Err(Error::data(format!("correct position {bad} outside index of {}", self.len())));
        }
        let scores = self.scores(query);
        Ok(best_rank(scores.view(), correct).expect("non-empty"))
    }

    /// Rank of the best-placed correct artifact for a text query.
    pub fn rank_of<S: AsRef<str>>(
        &self,
        dual: &DualEncoder,
        emb: &Embeddings,
        tokens: &[S],
        correct_ids: &[String],
    ) -> Result<usize> {
        let correct = self.positions_of(correct_ids)?;
        let q = self.encode_query(dual, emb, tokens);
        self.rank_of_encoding(q.view(), &correct)
    }
}

// ---------------------------------------------------------------------------
// Persistence
//
// magic "DSIX" | version u32 | rows u64 | dim u32 | provenance (len u32 + utf-8)
// rows × id (len u32 + utf-8) | f32 × rows × dim, little-endian

const MAGIC: &[u8; 4] = b"DSIX";
const VERSION: u32 = 1;

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_u32::<LE>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = r.read_u32::<LE>()? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::format("string is not valid UTF-8"))
}

pub fn write_index(path: &Path, index: &RetrievalIndex) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LE>(VERSION)?;
    w.write_u64::<LE>(index.len() as u64)?;
    w.write_u32::<LE>(index.dim() as u32)?;
    write_str(&mut w, &index.provenance)?;
    for id in &index.ids {
        write_str(&mut w, id)?;
    }
    for &x in &index.encodings {
        w.write_f32::<LE>(x as f32)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_index(path: &Path) -> Result<RetrievalIndex> {
    let file =
        File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::format(format!("{} is not a retrieval index", path.display())));
    }
    let version = r.read_u32::<LE>()?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported index version {version}")));
    }
    let rows = r.read_u64::<LE>()? as usize;
    let dim = r.read_u32::<LE>()? as usize;
    let provenance = read_str(&mut r)?;
    let ids = (0..rows).map(|_| read_str(&mut r)).collect::<Result<Vec<_>>>()?;
    let mut flat = vec![0f32; rows * dim];
    r.read_f32_into::<LE>(&mut flat)?;
    let encodings = Array2::from_shape_vec((rows, dim), flat.into_iter().map(f64::from).collect())
        .map_err(|e| Error::format(e.to_string()))?;
    RetrievalIndex::from_encodings(ids, encodings, provenance)
}
