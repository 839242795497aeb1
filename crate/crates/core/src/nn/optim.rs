use std::f64::consts::PI;

use super::{ParamSet, Real};

/// AdamW with bias-corrected moments and decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn first_moments(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moments(&self) -> &[f64] {
        &self.v
    }

    /// One update of `params` (in visiting order) from `grads` at learning rate `lr`.
    pub fn step<F: Real, P: ParamSet<F>>(&mut self, params: &mut P, grads: &P, lr: f64) {
        let n = params.param_count();
        if self.m.len() != n {
            self.m = vec![0.0; n];
            self.v = vec![0.0; n];
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let mut i = 0;
        for ((_, mut p), (_, g)) in params.params_mut().into_iter().zip(grads.params()) {
            for (pv, gv) in p.iter_mut().zip(g.iter()) {
                let g = gv.as_f64();
                let m = &mut self.m[i];
                let v = &mut self.v[i];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let mut x = pv.as_f64();
                x -= lr * self.weight_decay * x;
                x -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
                *pv = F::of(x);
                i += 1;
            }
        }
    }

    /// Step at the optimizer's own base learning rate.
    pub fn step_default<F: Real, P: ParamSet<F>>(&mut self, params: &mut P, grads: &P) {
        let lr = self.lr;
        self.step(params, grads, lr);
    }
}

/// Linear warm-up from 0 to `base_lr` over the first `warmup_frac` of
/// training, then cosine decay to 0 at `total_steps`.
pub fn cosine_warmup_lr(step: usize, total_steps: usize, base_lr: f64, warmup_frac: f64) -> f64 {
    if total_steps == 0 {
        return base_lr;
    }
    let step = step.min(total_steps) as f64;
    let total = total_steps as f64;
    let warmup = warmup_frac * total;
    if step < warmup {
        return base_lr * step / warmup;
    }
    let span = (total - warmup).max(f64::MIN_POSITIVE);
    let progress = ((step - warmup) / span).clamp(0.0, 1.0);
    0.5 * base_lr * (1.0 + (PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{ArrayD, ArrayViewD, ArrayViewMutD, IxDyn};

    #[derive(Clone)]
    struct One(ArrayD<f64>);

    impl ParamSet<f64> for One {
        fn params(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
            vec![("p".into(), self.0.view())]
        }
        fn params_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
            vec![("p".into(), self.0.view_mut())]
        }
        fn zeros_like(&self) -> Self {
            One(ArrayD::zeros(self.0.raw_dim()))
        }
    }

    fn scalar(v: f64) -> One {
        One(ArrayD::from_elem(IxDyn(&[1]), v))
    }

    #[test]
    fn pure_decay_step() {
        let mut p = scalar(1.0);
        let mut opt = AdamW::new(1e-4, 1e-5);
        opt.step_default(&mut p, &scalar(0.0));
        assert!((p.0[[0]] - (1.0 - 1e-9)).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut p = scalar(0.37);
        let mut opt = AdamW::new(0.0, 1e-5);
        for _ in 0..10 {
            opt.step_default(&mut p, &scalar(1.3));
        }
        assert_eq!(p.0[[0]], 0.37);
    }

    #[test]
    fn constant_gradient_update_tends_to_lr() {
        // With a constant gradient both bias-corrected moments equal g and g²
        // exactly, so every step moves by lr * |g| / (|g| + eps).
        let lr = 1e-3;
        let g = 0.5;
        let mut p = scalar(0.0);
        let mut opt = AdamW::new(lr, 0.0);
        let mut prev = 0.0;
        for k in 0..2000 {
            opt.step_default(&mut p, &scalar(g));
            let delta = prev - p.0[[0]];
            prev = p.0[[0]];
            if k > 1000 {
                assert!((delta - lr * g / (g + 1e-8)).abs() < 1e-12, "{delta}");
            }
        }
    }

    #[test]
    fn schedule_landmarks() {
        let total = 1000;
        assert_eq!(cosine_warmup_lr(0, total, 1e-4, 0.1), 0.0);
        assert!((cosine_warmup_lr(100, total, 1e-4, 0.1) - 1e-4).abs() < 1e-18);
        assert!(cosine_warmup_lr(total, total, 1e-4, 0.1).abs() < 1e-18);
        assert!((cosine_warmup_lr(550, total, 1e-4, 0.1) - 5e-5).abs() < 1e-9);
        assert!((cosine_warmup_lr(50, total, 1e-4, 0.1) - 5e-5).abs() < 1e-18);
    }
}
