use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Modality;
use crate::embedding::Embeddings;
use crate::error::{Error, Result};

/// Guard for the L2 normalization of an all-zero ReLU output.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub d_emb: usize,
    pub output_size: usize,
    pub passes: usize,
    pub dropout_rate: f64,
    /// One dense layer reused by every pass (default) or one per pass.
    pub share_pass_weights: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { d_emb: 300, output_size: 2000, passes: 2, dropout_rate: 0.3, share_pass_weights: true }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_emb == 0 || self.output_size == 0 || self.passes == 0 {
            return Err(Error::config("d_emb, output_size and passes must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }

    pub fn pass_layers(&self) -> usize {
        if self.share_pass_weights {
            1
        } else {
            self.passes
        }
    }
}

/// Weights of one encoder. Also used to hold gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub w_in: Array2<f64>,
    pub b_in: Array1<f64>,
    pub pass_w: Vec<Array2<f64>>,
    pub pass_b: Vec<Array1<f64>>,
}

fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-bound..=bound))
}

impl EncoderParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng>(cfg: &EncoderConfig, rng: &mut R) -> Self {
        let h = cfg.output_size;
        let w_in = glorot(h, cfg.d_emb, rng);
        let pass_w = (0..cfg.pass_layers()).map(|_| glorot(h, h, rng)).collect();
        EncoderParams { w_in, b_in: Array1::zeros(h), pass_w, pass_b: vec![Array1::zeros(h); cfg.pass_layers()] }
    }

    pub fn zeros(cfg: &EncoderConfig) -> Self {
        let h = cfg.output_size;
        EncoderParams {
            w_in: Array2::zeros((h, cfg.d_emb)),
            b_in: Array1::zeros(h),
            pass_w: vec![Array2::zeros((h, h)); cfg.pass_layers()],
            pass_b: vec![Array1::zeros(h); cfg.pass_layers()],
        }
    }

    pub fn zeros_like(&self) -> Self {
        EncoderParams {
            w_in: Array2::zeros(self.w_in.dim()),
            b_in: Array1::zeros(self.b_in.len()),
            pass_w: self.pass_w.iter().map(|w| Array2::zeros(w.dim())).collect(),
            pass_b: self.pass_b.iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }

    fn pass(&self, k: usize) -> (&Array2<f64>, &Array1<f64>) {
        let idx = k.min(self.pass_w.len() - 1);
        (&self.pass_w[idx], &self.pass_b[idx])
    }

    /// Flat views of every tensor in a fixed order: `w_in`, `b_in`, then
    /// each pass weight followed by each pass bias.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = vec![self.w_in.as_slice().unwrap(), self.b_in.as_slice().unwrap()];
        out.extend(self.pass_w.iter().map(|w| w.as_slice().unwrap()));
        out.extend(self.pass_b.iter().map(|b| b.as_slice().unwrap()));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![self.w_in.as_slice_mut().unwrap(), self.b_in.as_slice_mut().unwrap()];
        out.extend(self.pass_w.iter_mut().map(|w| w.as_slice_mut().unwrap()));
        out.extend(self.pass_b.iter_mut().map(|b| b.as_slice_mut().unwrap()));
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn matches_config(&self, cfg: &EncoderConfig) -> bool {
        let h = cfg.output_size;
        self.w_in.dim() == (h, cfg.d_emb)
            && self.b_in.len() == h
            && self.pass_w.len() == cfg.pass_layers()
            && self.pass_w.iter().all(|w| w.dim() == (h, h))
            && self.pass_b.iter().all(|b| b.len() == h)
    }
}

/// Text and code encoders sharing one architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct DualEncoder {
    pub text: EncoderParams,
    pub code: EncoderParams,
    pub config: EncoderConfig,
}

impl DualEncoder {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let text = EncoderParams::init(&config, &mut rng);
        let code = EncoderParams::init(&config, &mut rng);
        Ok(DualEncoder { text, code, config })
    }

    pub fn params(&self, modality: Modality) -> &EncoderParams {
        match modality {
            Modality::Text => &self.text,
            Modality::Code => &self.code,
        }
    }

    pub fn params_mut(&mut self, modality: Modality) -> &mut EncoderParams {
        match modality {
            Modality::Text => &mut self.text,
            Modality::Code => &mut self.code,
        }
    }

    pub fn zeros_like(&self) -> Self {
        DualEncoder { text: self.text.zeros_like(), code: self.code.zeros_like(), config: self.config.clone() }
    }

    /// Eval-mode encodings of pooled inputs, one row per input row.
    pub fn encode_pooled(&self, modality: Modality, pooled: ArrayView2<f64>) -> Array2<f64> {
        encode_batch(self.params(modality), &self.config, pooled)
    }

    /// Embeds, pools and encodes one token sequence.
    pub fn encode_tokens<S: AsRef<str>>(&self, emb: &Embeddings, modality: Modality, tokens: &[S]) -> Encoding {
        let pooled = pooled_tokens(emb, modality, tokens);
        encode(self.params(modality), &self.config, pooled.view())
    }
}

/// A non-negative vector of unit norm (or the guarded zero vector).
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding(pub Array1<f64>);

impl Encoding {
    pub fn values(&self) -> &Array1<f64> {
        &self.0
    }
}

/// Mean of the token vectors; zero vector for an empty sequence.
pub fn pool(embedded: &[Vec<f64>], d_emb: usize) -> Array1<f64> {
    let mut acc = Array1::zeros(d_emb);
    if embedded.is_empty() {
        return acc;
    }
    for v in embedded {
        assert_eq!(v.len(), d_emb, "token vector has wrong dimension");
        acc += &ArrayView1::from(v.as_slice());
    }
    acc / embedded.len() as f64
}

pub fn pooled_tokens<S: AsRef<str>>(emb: &Embeddings, modality: Modality, tokens: &[S]) -> Array1<f64> {
    pool(&emb.embed(modality, tokens), emb.dim())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Intermediates of a batched forward pass, kept for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: Array2<f64>,
    /// `z[0]` is the input projection, `z[k]` the state after pass `k`.
    pub z: Vec<Array2<f64>>,
    pub masks: Vec<Option<Array2<f64>>>,
    pub norms: Array1<f64>,
    pub output: Array2<f64>,
}

/// Batched forward pass; row `i` of `input` is one pooled sequence.
pub fn forward_batch<R: Rng>(
    params: &EncoderParams,
    cfg: &EncoderConfig,
    input: ArrayView2<f64>,
    mode: Mode,
    rng: &mut R,
) -> ForwardCache {
    assert_eq!(input.ncols(), cfg.d_emb, "pooled input has wrong dimension");
    assert!(params.matches_config(cfg), "encoder parameters do not match the config");

    let z0 = input.dot(&params.w_in.t()) + &params.b_in;
    let mut z = vec![z0];
    let mut masks = Vec::with_capacity(cfg.passes);
    let keep_scale = 1.0 / (1.0 - cfg.dropout_rate);
    for k in 0..cfg.passes {
        let (w, b) = params.pass(k);
        let mut a = z[k].dot(&w.t()) + b;
        let mask = if mode == Mode::Train && cfg.dropout_rate > 0.0 {
            let m = Array2::from_shape_simple_fn(a.dim(), || {
                if rng.gen::<f64>() < cfg.dropout_rate {
                    0.0
                } else {
                    keep_scale
                }
            });
            a *= &m;
            Some(m)
        } else {
            None
        };
        a += &z[k];
        z.push(a);
        masks.push(mask);
    }

    let mut output = z[cfg.passes].mapv(|x| x.max(0.0));
    let norms: Array1<f64> = output.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    for (mut row, &n) in output.rows_mut().into_iter().zip(&norms) {
        row /= n.max(NORM_EPS);
    }
    ForwardCache { input: input.to_owned(), z, masks, norms, output }
}

/// Eval-mode encodings for a batch of pooled inputs.
pub fn encode_batch(params: &EncoderParams, cfg: &EncoderConfig, input: ArrayView2<f64>) -> Array2<f64> {
    // eval mode never draws from the rng
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    forward_batch(params, cfg, input, Mode::Eval, &mut rng).output
}

pub fn encode(params: &EncoderParams, cfg: &EncoderConfig, pooled: ArrayView1<f64>) -> Encoding {
    let batch = pooled.insert_axis(Axis(0));
    Encoding(encode_batch(params, cfg, batch).row(0).to_owned())
}

/// Single-input forward pass returning the encoding and its cache.
pub fn encoder_forward<R: Rng>(
    params: &EncoderParams,
    cfg: &EncoderConfig,
    pooled: ArrayView1<f64>,
    mode: Mode,
    rng: &mut R,
) -> (Encoding, ForwardCache) {
    let cache = forward_batch(params, cfg, pooled.insert_axis(Axis(0)), mode, rng);
    (Encoding(cache.output.row(0).to_owned()), cache)
}

/// Gradients of a scalar loss with respect to every parameter, given the
/// loss gradient `d_out` with respect to the batch's output encodings.
pub fn backward(
    params: &EncoderParams,
    cfg: &EncoderConfig,
    cache: &ForwardCache,
    d_out: ArrayView2<f64>,
) -> EncoderParams {
    assert_eq!(d_out.dim(), cache.output.dim(), "gradient does not match the cached batch");
    assert!(params.matches_config(cfg), "encoder parameters do not match the config");
    let mut grads = params.zeros_like();

    // y = r / max(|r|, eps): for |r| > eps the Jacobian is (I - y yᵀ) / |r|
    let mut dz = Array2::<f64>::zeros(d_out.dim());
    for (i, (mut dz_row, g)) in dz.rows_mut().into_iter().zip(d_out.rows()).enumerate() {
        let n = cache.norms[i];
        let y = cache.output.row(i);
        if n > NORM_EPS {
            let proj = y.dot(&g);
            Zip::from(&mut dz_row).and(&g).and(&y).for_each(|d, &g, &y| *d = (g - y * proj) / n);
        } else {
            Zip::from(&mut dz_row).and(&g).for_each(|d, &g| *d = g / NORM_EPS);
        }
    }
    Zip::from(&mut dz).and(&cache.z[cfg.passes]).for_each(|d, &z| {
        if z <= 0.0 {
            *d = 0.0;
        }
    });

    for k in (0..cfg.passes).rev() {
        let idx = k.min(params.pass_w.len() - 1);
        let mut da = dz.clone();
        if let Some(m) = &cache.masks[k] {
            da *= m;
        }
        grads.pass_w[idx] += &da.t().dot(&cache.z[k]);
        grads.pass_b[idx] += &da.sum_axis(Axis(0));
        dz += &da.dot(&params.pass_w[idx]);
    }

    grads.w_in = dz.t().dot(&cache.input);
    grads.b_in = dz.sum_axis(Axis(0));
    grads
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn cfg(d: usize, h: usize, passes: usize) -> EncoderConfig {
        EncoderConfig { d_emb: d, output_size: h, passes, dropout_rate: 0.0, share_pass_weights: true }
    }

    #[test]
    fn pool_cases() {
        let v = vec![1.0, -2.0];
        assert_eq!(pool(&[v.clone()], 2), array![1.0, -2.0]);
        assert_eq!(pool(&[v.clone(), vec![-1.0, 2.0]], 2), array![0.0, 0.0]);
        let m = pool(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]], 2);
        assert!((m[0] - 2.0 / 3.0).abs() < 1e-15 && (m[1] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(pool(&[], 3), Array1::<f64>::zeros(3));
    }

    #[test]
    fn constant_bias_gives_uniform_output() {
        let c = cfg(4, 9, 2);
        let mut p = EncoderParams::zeros(&c);
        p.b_in.fill(0.7);
        let e = encode(&p, &c, array![1.0, 2.0, 3.0, 4.0].view());
        for &x in e.values() {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn all_negative_state_gives_zero_encoding() {
        let c = cfg(2, 3, 1);
        let mut p = EncoderParams::zeros(&c);
        p.b_in.fill(-1.0);
        let e = encode(&p, &c, array![0.5, 0.5].view());
        assert_eq!(e.values(), &Array1::<f64>::zeros(3));
    }

    /// dense → add → dense → add → ReLU → normalize, unrolled by hand on a
    /// 2-dim instance with shared pass weights.
    #[test]
    fn two_pass_matches_hand_unrolled() {
        let c = cfg(2, 2, 2);
        let p = EncoderParams {
            w_in: array![[1.0, 0.0], [0.0, 2.0]],
            b_in: array![0.0, -1.0],
            pass_w: vec![array![[0.5, 0.0], [1.0, 0.0]]],
            pass_b: vec![array![0.0, 1.0]],
        };
        // x = (1, 1): z0 = (1, 1)
        // pass 1: a = (0.5, 1 + 1) = (0.5, 2); z1 = (1.5, 3)
        // pass 2: a = (0.75, 1.5 + 1) = (0.75, 2.5); z2 = (2.25, 5.5)
        // relu keeps both; norm = sqrt(2.25² + 5.5²)
        let n = (2.25f64 * 2.25 + 5.5 * 5.5).sqrt();
        let e = encode(&p, &c, array![1.0, 1.0].view());
        assert!((e.values()[0] - 2.25 / n).abs() < 1e-14);
        assert!((e.values()[1] - 5.5 / n).abs() < 1e-14);
    }

    #[test]
    fn eval_is_deterministic_and_train_uses_dropout() {
        let mut c = cfg(5, 16, 2);
        c.dropout_rate = 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = EncoderParams::init(&c, &mut rng);
        let x = array![0.3, -0.1, 0.8, 0.0, 0.2];
        assert_eq!(encode(&p, &c, x.view()), encode(&p, &c, x.view()));

        let (_, cache) = encoder_forward(&p, &c, x.view(), Mode::Train, &mut rng);
        let mask = cache.masks[0].as_ref().unwrap();
        assert!(mask.iter().all(|&m| m == 0.0 || m == 2.0));
        assert!(mask.iter().any(|&m| m == 0.0));
    }

    #[test]
    fn unshared_passes_have_their_own_layers() {
        let mut c = cfg(3, 4, 3);
        c.share_pass_weights = false;
        let d = DualEncoder::new(c, 1).unwrap();
        assert_eq!(d.text.pass_w.len(), 3);
        assert_ne!(d.text, d.code);
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(DualEncoder::new(EncoderConfig { passes: 0, ..EncoderConfig::default() }, 0).is_err());
        assert!(DualEncoder::new(EncoderConfig { dropout_rate: 1.0, ..EncoderConfig::default() }, 0).is_err());
    }
}
