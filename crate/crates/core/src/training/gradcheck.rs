use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Modality;
use crate::encoder::{backward, forward_batch, loss_and_grad, target_matrix, DualEncoder, LossKind, Mode};

/// Above this output size only a random subset of coordinates is checked.
const FULL_CHECK_MAX_H: usize = 16;
const SAMPLED_COORDS: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// (encoder, tensor index, element index) of the worst coordinate.
    pub worst: Option<(Modality, usize, usize)>,
}

fn eval_loss(
    dual: &DualEncoder,
    text: ArrayView2<f64>,
    code: ArrayView2<f64>,
    targets: &Array2<f64>,
    kind: LossKind,
    margin: f64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let t = forward_batch(&dual.text, &dual.config, text, Mode::Eval, &mut rng).output;
    let c = forward_batch(&dual.code, &dual.config, code, Mode::Eval, &mut rng).output;
    loss_and_grad(kind, t.view(), c.view(), targets.view(), margin).0
}

/// Compares analytic gradients against central finite differences.
///
/// Runs in eval mode (no dropout). The soft targets are computed once at the
/// unperturbed point and held fixed, matching how training treats them.
/// Relative error per coordinate is `|g_a − g_n| / max(|g_a|, |g_n|, 1e-8)`.
pub fn grad_check(
    dual: &DualEncoder,
    text: ArrayView2<f64>,
    code: ArrayView2<f64>,
    kind: LossKind,
    margin: f64,
    step: f64,
    seed: u64,
) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = &dual.config;
    let t_cache = forward_batch(&dual.text, cfg, text, Mode::Eval, &mut rng);
    let c_cache = forward_batch(&dual.code, cfg, code, Mode::Eval, &mut rng);
    let targets = target_matrix(t_cache.output.view(), c_cache.output.view());
    let (_, dt, dc) = loss_and_grad(kind, t_cache.output.view(), c_cache.output.view(), targets.view(), margin);
    let text_grad = backward(&dual.text, cfg, &t_cache, dt.view());
    let code_grad = backward(&dual.code, cfg, &c_cache, dc.view());

    let mut coords = Vec::new();
    for (modality, grads) in [(Modality::Text, &text_grad), (Modality::Code, &code_grad)] {
        for (ti, tensor) in grads.tensors().iter().enumerate() {
            for ei in 0..tensor.len() {
                coords.push((modality, ti, ei, tensor[ei]));
            }
        }
    }
    if cfg.output_size > FULL_CHECK_MAX_H && coords.len() > SAMPLED_COORDS {
        let mut pick = ChaCha8Rng::seed_from_u64(seed);
        let mut chosen = sample(&mut pick, coords.len(), SAMPLED_COORDS).into_vec();
        chosen.sort_unstable();
        coords = chosen.into_iter().map(|i| coords[i]).collect();
    }

    let mut probe = dual.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, coords_checked: coords.len(), worst: None };
    for (modality, ti, ei, analytic) in coords {
        let original = probe.params(modality).tensors()[ti][ei];
        probe.params_mut(modality).tensors_mut()[ti][ei] = original + step;
        let plus = eval_loss(&probe, text, code, &targets, kind, margin);
        probe.params_mut(modality).tensors_mut()[ti][ei] = original - step;
        let minus = eval_loss(&probe, text, code, &targets, kind, margin);
        probe.params_mut(modality).tensors_mut()[ti][ei] = original;

        let numeric = (plus - minus) / (2.0 * step);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some((modality, ti, ei));
        }
    }
    report
}
