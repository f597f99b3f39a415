//! Batch losses over a text/code encoding batch and their gradients.
//!
//! Row `i` of the text batch `T` and row `i` of the code batch `C` are a
//! linked pair; every other `(i, j)` cell is a non-linked pair.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::network::Encoding;

/// Clamp applied to similarities inside the cross-entropy logarithms.
pub const CLAMP_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    CosineBce,
    Softmax,
    Contrastive,
}

impl std::str::FromStr for LossKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "cosine-bce" | "cosine" => Ok(LossKind::CosineBce),
            "softmax" => Ok(LossKind::Softmax),
            "contrastive" => Ok(LossKind::Contrastive),
            other => Err(crate::Error::config(format!(
                "unknown loss {other:?} (expected cosine-bce, softmax or contrastive)"
            ))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::CosineBce => "cosine-bce",
            LossKind::Softmax => "softmax",
            LossKind::Contrastive => "contrastive",
        })
    }
}

pub fn similarity(t: &Encoding, c: &Encoding) -> f64 {
    t.values().dot(c.values())
}

/// `P[i][j] = T_i · C_j`.
pub fn similarity_matrix(t: ArrayView2<f64>, c: ArrayView2<f64>) -> Array2<f64> {
    t.dot(&c.t())
}

/// Soft targets `S[i][j] = (C_i·C_j + T_i·T_j) / 2`. Treated as constants.
pub fn target_matrix(t: ArrayView2<f64>, c: ArrayView2<f64>) -> Array2<f64> {
    (c.dot(&c.t()) + t.dot(&t.t())) * 0.5
}

/// Mean binary cross-entropy between similarities and soft targets.
pub fn cosine_bce_loss(p: ArrayView2<f64>, s: ArrayView2<f64>) -> f64 {
    cosine_bce_with_grad(p, s).0
}

fn cosine_bce_with_grad(p: ArrayView2<f64>, s: ArrayView2<f64>) -> (f64, Array2<f64>) {
    assert_eq!(p.dim(), s.dim(), "similarity and target shapes differ");
    let cells = p.len() as f64;
    let mut grad = Array2::zeros(p.dim());
    let mut total = 0.0;
    for ((g, &pv), &sv) in grad.iter_mut().zip(p.iter()).zip(s.iter()) {
        let pc = pv.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS);
        total += -sv * pc.ln() - (1.0 - sv) * (1.0 - pc).ln();
        if pv > CLAMP_EPS && pv < 1.0 - CLAMP_EPS {
            *g = (-sv / pc + (1.0 - sv) / (1.0 - pc)) / cells;
        }
    }
    (total / cells, grad)
}

/// Mean over rows of the softmax cross-entropy with the diagonal as label.
pub fn softmax_loss(p: ArrayView2<f64>) -> f64 {
    softmax_with_grad(p).0
}

fn softmax_with_grad(p: ArrayView2<f64>) -> (f64, Array2<f64>) {
    assert_eq!(p.nrows(), p.ncols(), "softmax loss needs a square matrix");
    let b = p.nrows() as f64;
    let mut grad = Array2::zeros(p.dim());
    let mut total = 0.0;
    for (i, (row, mut g)) in p.rows().into_iter().zip(grad.rows_mut()).enumerate() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let exps = row.mapv(|x| (x - max).exp());
        let z = exps.sum();
        total += max + z.ln() - row[i];
        g.assign(&(exps / z / b));
        g[i] -= 1.0 / b;
    }
    (total / b, grad)
}

/// Mean over all cells of `d²` for linked pairs and `max(0, margin − d)²`
/// otherwise, with `d` the Euclidean distance between `T_i` and `C_j`.
pub fn contrastive_loss(t: ArrayView2<f64>, c: ArrayView2<f64>, margin: f64) -> f64 {
    contrastive_with_grad(t, c, margin).0
}

fn contrastive_with_grad(t: ArrayView2<f64>, c: ArrayView2<f64>, margin: f64) -> (f64, Array2<f64>, Array2<f64>) {
    assert_eq!(t.dim(), c.dim(), "text and code batches differ in shape");
    let b = t.nrows();
    let cells = (b * b) as f64;
    let mut dt = Array2::zeros(t.dim());
    let mut dc = Array2::zeros(c.dim());
    let mut total = 0.0;
    for i in 0..b {
        for j in 0..b {
            let diff = &t.row(i) - &c.row(j);
            let d = diff.dot(&diff).sqrt();
            let coeff = if i == j {
                total += d * d;
                2.0
            } else if d < margin {
                total += (margin - d) * (margin - d);
                if d > 0.0 {
                    -2.0 * (margin - d) / d
                } else {
                    0.0
                }
            } else {
                0.0
            };
            if coeff != 0.0 {
                let g = diff * (coeff / cells);
                dt.row_mut(i).scaled_add(1.0, &g);
                dc.row_mut(j).scaled_add(-1.0, &g);
            }
        }
    }
    (total / cells, dt, dc)
}

/// Loss of a batch and its gradients with respect to both encoding batches.
///
/// `targets` is only read for [`LossKind::CosineBce`]; it is not
/// differentiated through.
pub fn loss_and_grad(
    kind: LossKind,
    t: ArrayView2<f64>,
    c: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    margin: f64,
) -> (f64, Array2<f64>, Array2<f64>) {
    let from_similarity = |loss: f64, dp: Array2<f64>| {
        // P = T Cᵀ
        let dt = dp.dot(&c);
        let dc = dp.t().dot(&t);
        (loss, dt, dc)
    };
    match kind {
        LossKind::CosineBce => {
            let p = similarity_matrix(t, c);
            let (loss, dp) = cosine_bce_with_grad(p.view(), targets);
            from_similarity(loss, dp)
        }
        LossKind::Softmax => {
            let p = similarity_matrix(t, c);
            let (loss, dp) = softmax_with_grad(p.view());
            from_similarity(loss, dp)
        }
        LossKind::Contrastive => contrastive_with_grad(t, c, margin),
    }
}

/// Mean of the diagonal of `P`, the average linked-pair similarity.
pub fn mean_linked_similarity(p: ArrayView2<f64>) -> f64 {
    p.diag().mean().unwrap_or(0.0)
}

/// Mean of the off-diagonal entries of `P`.
pub fn off_diagonal_mean(p: ArrayView2<f64>) -> f64 {
    let b = p.nrows();
    if b < 2 {
        return 0.0;
    }
    (p.sum() - p.diag().sum()) / (b * (b - 1)) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};

    fn enc(v: &[f64]) -> Encoding {
        Encoding(Array1::from(v.to_vec()))
    }

    #[test]
    fn similarity_cases() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((similarity(&enc(&[0.6, 0.8]), &enc(&[0.6, 0.8])) - 1.0).abs() < 1e-15);
        assert_eq!(similarity(&enc(&[1.0, 0.0]), &enc(&[0.0, 1.0])), 0.0);
        assert!((similarity(&enc(&[1.0, 0.0]), &enc(&[h, h])) - 0.707_106_781).abs() < 1e-9);
    }

    #[test]
    fn target_matrix_cases() {
        let t = array![[1.0, 0.0], [0.0, 1.0]];
        let c = array![[0.0, 1.0], [1.0, 0.0]];
        let s = target_matrix(t.view(), c.view());
        assert_eq!(s, array![[1.0, 0.0], [0.0, 1.0]]);

        // C_0·C_1 = 0.6, T_0·T_1 = 0.2
        let t = array![[1.0, 0.0], [0.2, (1.0f64 - 0.04).sqrt()]];
        let c = array![[1.0, 0.0], [0.6, 0.8]];
        let s = target_matrix(t.view(), c.view());
        assert!((s[[0, 1]] - 0.4).abs() < 1e-12);
        assert!((s[[1, 0]] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn cosine_bce_cases() {
        let one = array![[1.0]];
        let v = cosine_bce_loss(one.view(), one.view());
        assert!((v - 1e-7).abs() < 1e-9);

        let half = array![[0.5]];
        assert!((cosine_bce_loss(half.view(), one.view()) - 0.693_147).abs() < 1e-6);
        assert!((cosine_bce_loss(half.view(), half.view()) - 0.693_147).abs() < 1e-6);
    }

    #[test]
    fn softmax_cases() {
        assert_eq!(softmax_loss(array![[0.37]].view()), 0.0);
        let flat = Array2::from_elem((4, 4), 0.25);
        assert!((softmax_loss(flat.view()) - 4f64.ln()).abs() < 1e-12);
        let mut sharp = Array2::zeros((3, 3));
        sharp.diag_mut().fill(200.0);
        assert!(softmax_loss(sharp.view()) < 1e-12);
    }

    #[test]
    fn contrastive_cases() {
        let t = array![[0.6, 0.8]];
        assert_eq!(contrastive_loss(t.view(), t.view(), 1.0), 0.0);

        // linked pairs coincide; the cross pairs sit at distance sqrt(2) ≥ margin
        let t = array![[1.0, 0.0], [0.0, 1.0]];
        assert_eq!(contrastive_loss(t.view(), t.view(), 1.0), 0.0);

        // cross distance 0.5 with margin 1 contributes 0.25 to each of the
        // two off-diagonal cells; mean over 4 cells
        let t = array![[0.0, 0.0], [0.5, 0.0]];
        let l = contrastive_loss(t.view(), t.view(), 1.0);
        assert!((l - 0.5 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn stationary_point_has_zero_gradient() {
        // T = C per pair, orthogonal across pairs → P = S = I
        let t = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let s = target_matrix(t.view(), t.view());
        let (_, dt, dc) = loss_and_grad(LossKind::CosineBce, t.view(), t.view(), s.view(), 1.0);
        assert!(dt.iter().chain(dc.iter()).all(|&g| g.abs() < 1e-9));
    }

    #[test]
    fn helpers() {
        let p = array![[1.0, 0.2], [0.4, 0.8]];
        assert!((mean_linked_similarity(p.view()) - 0.9).abs() < 1e-12);
        assert!((off_diagonal_mean(p.view()) - 0.3).abs() < 1e-12);
    }
}
