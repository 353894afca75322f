//! AdamW, the warmup + cosine schedule, and global-norm clipping.

use crate::net::{ModelParams, ParamGroup};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Learning rate at `step` of `total_steps`: linear from 0 to `base_lr` over
/// the first `ceil(warmup_fraction * total_steps)` steps, then half-cosine
/// down to exactly 0 at the final step.
pub fn lr_at(step: usize, total_steps: usize, warmup_fraction: f64, base_lr: f64) -> f64 {
    let warmup = warmup_steps(total_steps, warmup_fraction);
    if step < warmup {
        return base_lr * step as f64 / warmup as f64;
    }
    let span = total_steps.saturating_sub(1).saturating_sub(warmup);
    if span == 0 {
        return base_lr;
    }
    let progress = ((step - warmup) as f64 / span as f64).min(1.0);
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

pub fn warmup_steps(total_steps: usize, warmup_fraction: f64) -> usize {
    (warmup_fraction * total_steps as f64).ceil() as usize
}

/// Scales `grads` in place so their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut ModelParams, max_norm: f64) -> f64 {
    let norm = grads.squared_norm().sqrt();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// One decoupled-weight-decay Adam update of a single tensor.
///
/// `step` is the 1-based update count used for bias correction. The decay
/// `theta -= lr * wd * theta` is applied before the Adam delta.
#[allow(clippy::too_many_arguments)]
pub fn adamw_update(params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], step: u64, lr: f64, weight_decay: f64) {
    let c1 = 1.0 - ADAM_BETA1.powi(step as i32);
    let c2 = 1.0 - ADAM_BETA2.powi(step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
        params[i] -= lr * weight_decay * params[i];
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

/// Per-group learning rate and weight decay for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupRates {
    pub projection_lr: f64,
    pub projection_wd: f64,
    pub temporal_lr: f64,
    pub temporal_wd: f64,
}

/// First and second moments, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first_moment: ModelParams,
    pub second_moment: ModelParams,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        OptimizerState {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step: 0,
        }
    }

    /// Applies one AdamW update to every tensor with its group's rates.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, rates: &GroupRates) {
        self.step += 1;
        let step = self.step;
        let moments = self.first_moment.tensors_mut().into_iter().zip(self.second_moment.tensors_mut());
        for (((name, theta), (_, g)), ((_, m), (_, v))) in params.tensors_mut().into_iter().zip(grads.tensors()).zip(moments) {
            let (lr, wd) = match ModelParams::group_of(name) {
                ParamGroup::Projection => (rates.projection_lr, rates.projection_wd),
                ParamGroup::Temporal => (rates.temporal_lr, rates.temporal_wd),
            };
            adamw_update(theta, g, m, v, step, lr, wd);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::ModelDims;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn schedule_examples() {
        let total = 200;
        let base = 1e-3;
        assert_eq!(lr_at(0, total, 0.05, base), 0.0);
        assert_eq!(warmup_steps(total, 0.05), 10);
        assert_eq!(lr_at(10, total, 0.05, base), base);
        assert!((lr_at(5, total, 0.05, base) - base / 2.0).abs() < 1e-18);
        let last = lr_at(total - 1, total, 0.05, base);
        let bound = base * 0.5 * (1.0 + (std::f64::consts::PI * (total as f64 - 1.0) / total as f64).cos());
        assert!(last <= bound && last.abs() < 1e-18);
        // warmup rounds up
        assert_eq!(warmup_steps(21, 0.05), 2);
    }

    #[test]
    fn schedule_is_monotone_after_warmup() {
        let total = 97;
        let w = warmup_steps(total, 0.05);
        for s in 1..w {
            assert!(lr_at(s, total, 0.05, 1.0) > lr_at(s - 1, total, 0.05, 1.0));
        }
        for s in w + 1..total {
            assert!(lr_at(s, total, 0.05, 1.0) < lr_at(s - 1, total, 0.05, 1.0));
        }
    }

    #[test]
    fn clipping_examples() {
        let dims = ModelDims::new(1, 1, 1).unwrap();
        let mut g = ModelParams::zeros(dims);
        assert_eq!(clip_grad_norm(&mut g, 1.0), 0.0);
        assert_eq!(g, ModelParams::zeros(dims));
        g.dir_bias = vec![3.0, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g.dir_bias[0] - 0.6).abs() < 1e-15 && (g.dir_bias[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn clipped_norm_is_min_of_norm_and_bound() {
        let dims = ModelDims::new(4, 5, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let mut g = ModelParams::zeros(dims);
            let scale = rng.random_range(0.001..0.5);
            for (_, t) in g.tensors_mut() {
                t.iter_mut().for_each(|v| *v = scale * rng.random_range(-1.0..1.0));
            }
            let before = clip_grad_norm(&mut g, 1.0);
            let after = g.squared_norm().sqrt();
            assert!((after - before.min(1.0)).abs() <= 1e-9);
        }
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = vec![0.5, -2.0];
        let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
        adamw_update(&mut p, &[0.0, 0.0], &mut m, &mut v, 1, 0.1, 0.0);
        assert_eq!(p, vec![0.5, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = vec![1.0, 1.0, 1.0];
        let (mut m, mut v) = (vec![0.0; 3], vec![0.0; 3]);
        adamw_update(&mut p, &[3.0, -0.02, 250.0], &mut m, &mut v, 1, 0.01, 0.0);
        assert!((p[0] - 0.99).abs() < 1e-8);
        assert!((p[1] - 1.01).abs() < 1e-8);
        assert!((p[2] - 0.99).abs() < 1e-8);
    }

    #[test]
    fn decay_is_decoupled() {
        let mut p = vec![2.0];
        let (mut m, mut v) = (vec![0.0], vec![0.0]);
        adamw_update(&mut p, &[0.0], &mut m, &mut v, 1, 0.1, 0.5);
        assert!((p[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let curv = [1.0, 4.0, 0.25, 2.0];
        let mut x = vec![1.5, -1.0, 2.0, 0.7];
        let loss = |x: &[f64]| x.iter().zip(&curv).map(|(v, a)| 0.5 * a * v * v).sum::<f64>();
        let (mut m, mut v) = (vec![0.0; 4], vec![0.0; 4]);
        let initial = loss(&x);
        let mut trace = vec![initial];
        for step in 1..=100 {
            let g: Vec<f64> = x.iter().zip(&curv).map(|(v, a)| a * v).collect();
            adamw_update(&mut x, &g, &mut m, &mut v, step, 0.05, 0.0);
            trace.push(loss(&x));
        }
        assert!(*trace.last().unwrap() < 0.01 * initial, "{:?}", trace.last());
        // monotone over the approach phase
        for w in trace[1..20].windows(2) {
            assert!(w[1] < w[0]);
        }
    }
}
