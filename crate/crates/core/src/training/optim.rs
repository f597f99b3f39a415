use crate::encoder::{DualEncoder, EncoderParams};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Bias-corrected Adam moments shaped like a [`DualEncoder`].
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: DualEncoder,
    pub v: DualEncoder,
    pub step: u64,
}

impl Adam {
    pub fn new(like: &DualEncoder) -> Self {
        Adam { m: like.zeros_like(), v: like.zeros_like(), step: 0 }
    }

    /// Applies one update with the given gradients at learning rate `lr`.
    pub fn update(&mut self, params: &mut DualEncoder, text_grad: &EncoderParams, code_grad: &EncoderParams, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        apply(&mut params.text, &mut self.m.text, &mut self.v.text, text_grad, lr, c1, c2);
        apply(&mut params.code, &mut self.m.code, &mut self.v.code, code_grad, lr, c1, c2);
    }

    pub fn is_finite(&self) -> bool {
        [&self.m.text, &self.m.code, &self.v.text, &self.v.code].iter().all(|p| p.is_finite())
    }
}

fn apply(
    params: &mut EncoderParams,
    m: &mut EncoderParams,
    v: &mut EncoderParams,
    grad: &EncoderParams,
    lr: f64,
    c1: f64,
    c2: f64,
) {
    let tensors = params.tensors_mut().into_iter().zip(m.tensors_mut()).zip(v.tensors_mut()).zip(grad.tensors());
    for (((p, m), v), g) in tensors {
        for (((p, m), v), &g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;

    #[test]
    fn first_step_moves_each_weight_by_lr() {
        let cfg = EncoderConfig { d_emb: 2, output_size: 3, passes: 1, dropout_rate: 0.0, share_pass_weights: true };
        let mut dual = DualEncoder::new(cfg, 0).unwrap();
        let before = dual.clone();
        let mut grad = dual.text.zeros_like();
        grad.w_in.fill(0.5);
        grad.b_in.fill(-2.0);
        let zero = dual.code.zeros_like();
        let mut adam = Adam::new(&dual);
        adam.update(&mut dual, &grad, &zero, 0.001);
        // with bias correction the first step is lr · sign(g) (up to eps)
        for (a, b) in dual.text.w_in.iter().zip(before.text.w_in.iter()) {
            assert!((b - a - 0.001).abs() < 1e-9);
        }
        for (a, b) in dual.text.b_in.iter().zip(before.text.b_in.iter()) {
            assert!((a - b - 0.001).abs() < 1e-9);
        }
        assert_eq!(dual.code, before.code);
        assert_eq!(adam.step, 1);
    }
}
