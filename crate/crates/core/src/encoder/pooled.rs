use ndarray::{Array2, Axis};

use super::network::pool;
use crate::corpus::{Modality, TokenizedPair};
use crate::embedding::Embeddings;

/// Mean-pooled embeddings of both sides of a list of pairs.
///
/// Embeddings are frozen while the encoders train, so pooling is done once.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledPairs {
    pub ids: Vec<String>,
    pub text: Array2<f64>,
    pub code: Array2<f64>,
}

impl PooledPairs {
    pub fn build(emb: &Embeddings, pairs: &[TokenizedPair]) -> Self {
        let d = emb.dim();
        let mut text = Array2::zeros((pairs.len(), d));
        let mut code = Array2::zeros((pairs.len(), d));
        for (i, pair) in pairs.iter().enumerate() {
            text.row_mut(i).assign(&pool(&emb.embed(Modality::Text, &pair.text_tokens), d));
            code.row_mut(i).assign(&pool(&emb.embed(Modality::Code, &pair.code_tokens), d));
        }
        PooledPairs { ids: pairs.iter().map(|p| p.id.clone()).collect(), text, code }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn d_emb(&self) -> usize {
        self.text.ncols()
    }

    pub fn side(&self, modality: Modality) -> &Array2<f64> {
        match modality {
            Modality::Text => &self.text,
            Modality::Code => &self.code,
        }
    }

    /// Rows `idx` of both sides, in the given order.
    pub fn gather(&self, idx: &[usize]) -> (Array2<f64>, Array2<f64>) {
        (self.text.select(Axis(0), idx), self.code.select(Axis(0), idx))
    }

    pub fn subset(&self, idx: &[usize]) -> PooledPairs {
        let (text, code) = self.gather(idx);
        PooledPairs { ids: idx.iter().map(|&i| self.ids[i].clone()).collect(), text, code }
    }
}
