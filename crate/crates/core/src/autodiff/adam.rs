/// Adam hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> Self {
        AdamParams {
            lr,
            ..AdamParams::default()
        }
    }
}

/// First/second moment state for one parameter set. One `step` call must
/// cover the full set, in canonical parameter order.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        AdamState {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
        }
    }

    pub fn step<'a>(
        &mut self,
        cfg: &AdamParams,
        params: impl Iterator<Item = &'a mut f64>,
        grads: impl Iterator<Item = f64>,
    ) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        let mut idx = 0;
        for (p, g) in params.zip(grads) {
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *p -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            idx += 1;
        }
        debug_assert_eq!(idx, self.m.len(), "Adam step must cover all parameters");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        // With bias correction, the first update is exactly lr * g/(|g| + eps').
        let mut p = [1.0_f64, -2.0];
        let g = [0.5, -3.0];
        let mut state = AdamState::new(2);
        let cfg = AdamParams::with_lr(1e-2);
        state.step(&cfg, p.iter_mut(), g.iter().copied());
        assert!((p[0] - (1.0 - 1e-2)).abs() < 1e-6);
        assert!((p[1] - (-2.0 + 1e-2)).abs() < 1e-6);
    }

    #[test]
    fn converges_on_quadratic_bowl() {
        let mut p = [5.0_f64, -4.0];
        let mut state = AdamState::new(2);
        let cfg = AdamParams::with_lr(0.05);
        for _ in 0..2000 {
            let g = [2.0 * p[0], 2.0 * p[1]];
            state.step(&cfg, p.iter_mut(), g.iter().copied());
        }
        assert!(p[0].abs() < 1e-3 && p[1].abs() < 1e-3, "got {p:?}");
    }
}
