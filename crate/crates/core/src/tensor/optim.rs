use super::{ParamStore, Real};

#[derive(Clone, Debug, PartialEq)]
pub struct AmsgradConfig {
    pub lr: f64,
    /// Inverse-time decay: the step size at step `t` is `lr / (1 + decay * t)`.
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 coefficient added to the gradient of decay-enabled parameters.
    pub weight_decay: f64,
}

impl Default for AmsgradConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Moment estimates of one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotState<R> {
    pub m: Vec<R>,
    pub v: Vec<R>,
    pub v_max: Vec<R>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState<R> {
    /// Number of completed updates.
    pub step: u64,
    /// Indexed like the parameter store; created lazily.
    pub slots: Vec<Option<SlotState<R>>>,
}

/// AMSGrad with bias-corrected step size and inverse-time learning rate
/// decay.
#[derive(Clone, Debug)]
pub struct Amsgrad<R> {
    pub config: AmsgradConfig,
    pub state: OptimizerState<R>,
}

impl<R: Real> Amsgrad<R> {
    pub fn new(config: AmsgradConfig) -> Self {
        Self {
            config,
            state: OptimizerState {
                step: 0,
                slots: Vec::new(),
            },
        }
    }

    /// Learning rate after `t` completed steps.
    pub fn lr_at(&self, t: u64) -> f64 {
        self.config.lr / (1.0 + self.config.decay * t as f64)
    }

    /// Learning rate the next call to [`step`](Self::step) will use.
    pub fn current_lr(&self) -> f64 {
        self.lr_at(self.state.step)
    }

    /// Apply one update to every parameter that holds a gradient.
    ///
    /// Returns `false` (and leaves everything untouched) when no parameter
    /// has a gradient.
    pub fn step(&mut self, params: &mut ParamStore<R>) -> bool {
        if params.iter().all(|(_, p)| p.grad.is_none()) {
            log::warn!("optimizer step requested before any backward pass; skipped");
            return false;
        }
        let c = &self.config;
        let t = self.state.step + 1;
        let lr_t = self.lr_at(self.state.step) * (1.0 - c.beta2.powi(t as i32)).sqrt()
            / (1.0 - c.beta1.powi(t as i32));
        let (lr_t, b1, b2, eps, wd) = (R::lit(lr_t), R::lit(c.beta1), R::lit(c.beta2), R::lit(c.eps), R::lit(c.weight_decay));
        if self.state.slots.len() < params.len() {
            self.state.slots.resize(params.len(), None);
        }
        for (slot, p) in self.state.slots.iter_mut().zip(params.iter_mut()) {
            let Some(grad) = p.grad.as_ref() else { continue };
            let n = p.value.numel();
            let s = slot.get_or_insert_with(|| SlotState {
                m: vec![R::zero(); n],
                v: vec![R::zero(); n],
                v_max: vec![R::zero(); n],
            });
            let decay = p.weight_decay && c.weight_decay != 0.0;
            let values = p.value.data_mut();
            for i in 0..n {
                let mut g = grad.data()[i];
                if decay {
                    g += wd * values[i];
                }
                s.m[i] = b1 * s.m[i] + (R::one() - b1) * g;
                s.v[i] = b2 * s.v[i] + (R::one() - b2) * g * g;
                if s.v[i] > s.v_max[i] {
                    s.v_max[i] = s.v[i];
                }
                values[i] -= lr_t * s.m[i] / (s.v_max[i].sqrt() + eps);
            }
        }
        self.state.step = t;
        true
    }
}
