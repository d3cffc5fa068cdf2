//! AdamW with decoupled weight decay and linear learning-rate warmup.
//!
//! The update at (1-indexed) step `t` with warmed-up rate
//! `lr_t = lr · min(1, t/warmup)` is
//!
//! ```text
//! m ← β₁·m + (1−β₁)·g          m̂ = m / (1 − β₁ᵗ)
//! v ← β₂·v + (1−β₂)·g²         v̂ = v / (1 − β₂ᵗ)
//! θ ← θ·(1 − lr_t·λ) − lr_t · m̂ / (√v̂ + ε)
//! ```
//!
//! Decay multiplies the parameter directly (decoupled) rather than being
//! folded into the gradient, so `λ` is independent of the gradient scale.

use super::model::ParamSet;
use super::GrokError;

/// Adam denominator offset.
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    /// Steps over which the rate ramps linearly from lr/warmup to lr;
    /// 0 disables warmup.
    pub warmup_steps: u64,
}

impl AdamW {
    pub fn validate(&self) -> Result<(), GrokError> {
        let bad = |detail: String| Err(GrokError::InvalidConfig { detail });
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("learning rate must be positive and finite, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!(
                "betas must lie in [0, 1), got ({}, {})",
                self.beta1, self.beta2
            ));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("weight decay must be non-negative, got {}", self.weight_decay));
        }
        Ok(())
    }

    /// Learning rate at 1-indexed step `t`.
    pub fn lr_at(&self, t: u64) -> f64 {
        if self.warmup_steps == 0 || t >= self.warmup_steps {
            self.lr
        } else {
            self.lr * t as f64 / self.warmup_steps as f64
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: ParamSet,
    pub v: ParamSet,
    pub t: u64,
}

impl AdamState {
    pub fn new(template: &ParamSet) -> AdamState {
        let mut zero = template.clone();
        zero.scale(0.0);
        AdamState { m: zero.clone(), v: zero, t: 0 }
    }

    /// One optimizer step: applies `grads` to `params` in place.
    pub fn step(&mut self, opt: &AdamW, params: &mut ParamSet, grads: &ParamSet) {
        self.t += 1;
        let t = self.t;
        let lr_t = opt.lr_at(t);
        let bc1 = 1.0 - opt.beta1.powi(t as i32);
        let bc2 = 1.0 - opt.beta2.powi(t as i32);
        let decay = 1.0 - lr_t * opt.weight_decay;

        let gs = grads.tensors();
        let mut ms = self.m.tensors_mut();
        let mut vs = self.v.tensors_mut();
        for (((_, p), (_, g)), ((_, m), (_, v))) in params
            .tensors_mut()
            .into_iter()
            .zip(gs)
            .zip(ms.iter_mut().zip(vs.iter_mut()))
        {
            debug_assert_eq!(p.len(), g.len(), "gradient/parameter tensors must align");
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * gi;
                v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] = p[i] * decay - lr_t * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::model::{Arch, ParamSet};
    use super::*;

    fn arch() -> Arch {
        Arch { vocab: 3, embed: 4, ff: 8, heads: 2, layers: 1 }
    }

    fn unit_gradient_on_tok(arch: &Arch) -> ParamSet {
        let mut g = ParamSet::zeros(arch);
        g.tok.data_mut()[0] = 1.0;
        g
    }

    #[test]
    fn first_step_moves_by_almost_exactly_the_learning_rate() {
        // With m̂ = v̂ = g on step one, the update is lr·g/(|g| + ε) ≈ lr.
        let arch = arch();
        let mut params = ParamSet::zeros(&arch);
        let opt =
            AdamW { lr: 1e-3, beta1: 0.9, beta2: 0.98, weight_decay: 0.0, warmup_steps: 0 };
        let mut state = AdamState::new(&params);
        state.step(&opt, &mut params, &unit_gradient_on_tok(&arch));

        let moved = params.tok.data()[0];
        assert!(
            (moved + 1e-3).abs() < 1e-10,
            "unit gradient must move the weight by ≈ −lr, got {moved}"
        );
        assert!(
            params.tok.data()[1..].iter().all(|&v| v == 0.0),
            "untouched coordinates must not move"
        );
        assert!(params.pos.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_gradient_keeps_the_unit_step_size() {
        // m̂ = v̂ = g at every step for a constant gradient, so each step
        // stays ≈ lr regardless of the moment history.
        let arch = arch();
        let mut params = ParamSet::zeros(&arch);
        let opt =
            AdamW { lr: 1e-3, beta1: 0.9, beta2: 0.98, weight_decay: 0.0, warmup_steps: 0 };
        let mut state = AdamState::new(&params);
        let g = unit_gradient_on_tok(&arch);
        state.step(&opt, &mut params, &g);
        let after_one = params.tok.data()[0];
        state.step(&opt, &mut params, &g);
        let after_two = params.tok.data()[0];
        assert!(
            ((after_two - after_one) + 1e-3).abs() < 1e-10,
            "second step with the same gradient must also move ≈ −lr"
        );
    }

    #[test]
    fn decay_is_decoupled_from_the_gradient() {
        // Zero gradient, weight 1: the only effect is θ ← θ(1 − lr·λ).
        let arch = arch();
        let mut params = ParamSet::zeros(&arch);
        params.tok.data_mut()[0] = 1.0;
        let opt =
            AdamW { lr: 1e-3, beta1: 0.9, beta2: 0.98, weight_decay: 1.0, warmup_steps: 0 };
        let mut state = AdamState::new(&params);
        state.step(&opt, &mut params, &ParamSet::zeros(&arch));
        assert_eq!(
            params.tok.data()[0],
            1.0 - 1e-3,
            "decoupled decay is exactly θ·(1 − lr·λ) when the gradient is zero"
        );
    }

    #[test]
    fn warmup_ramps_linearly_then_holds() {
        let opt =
            AdamW { lr: 2e-3, beta1: 0.9, beta2: 0.98, weight_decay: 0.0, warmup_steps: 10 };
        assert_eq!(opt.lr_at(5), 1e-3, "halfway through warmup is half the rate");
        assert_eq!(opt.lr_at(1), 2e-4);
        assert_eq!(opt.lr_at(10), 2e-3, "warmup completes at t = warmup");
        assert_eq!(opt.lr_at(25), 2e-3, "rate holds after warmup");
        let none = AdamW { warmup_steps: 0, ..opt };
        assert_eq!(none.lr_at(1), 2e-3, "warmup 0 means full rate from the start");
    }

    #[test]
    fn validation_rejects_nonsense() {
        let good =
            AdamW { lr: 1e-3, beta1: 0.9, beta2: 0.98, weight_decay: 1.0, warmup_steps: 10 };
        assert!(good.validate().is_ok());
        assert!(AdamW { lr: 0.0, ..good }.validate().is_err());
        assert!(AdamW { lr: f64::NAN, ..good }.validate().is_err());
        assert!(AdamW { beta1: 1.0, ..good }.validate().is_err());
        assert!(AdamW { beta2: -0.1, ..good }.validate().is_err());
        assert!(AdamW { weight_decay: -1.0, ..good }.validate().is_err());
    }
}
