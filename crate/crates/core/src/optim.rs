//! Adam with a pluggable regularization step: the two common forms of
//! decoupled weight decay, weight norm control, and plain SGD with coupled
//! decay for comparison.
//!
//! One step is
//!
//! ```text
//! t ← t + 1
//! m̂, v̂  ← bias-corrected first/second moments of g
//! η_t   ← schedule multiplier
//! θ     ← θ − η_t α m̂ / (√v̂ + ε)                  (every group)
//! θ     ← θ − η_t α λ θ                            DecayCoupledLR
//!       | θ − η_t λ θ                              DecayDecoupled
//!       | θ − k_t (1 − r_t ‖θ₀‖ / ‖θ‖) θ           NormControl
//! ```
//!
//! Regularization only touches controlled groups and always runs after the
//! loss-based update, so the norm seen by norm control is the post-update one.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::param_store::ParamStore;
use crate::schedules::{ScheduleSpec, TargetNormMode};

/// Below this the controlled norm is treated as zero and norm control is a
/// no-op (scaling the zero vector leaves it unchanged).
pub const ZERO_NORM_THRESHOLD: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variant {
    /// θ ← θ − η_t·α·λ·θ, the usual library AdamW.
    DecayCoupledLR,
    /// θ ← θ − η_t·λ·θ, decay decoupled from the base learning rate.
    DecayDecoupled,
    /// θ ← θ − k_t(1 − target/‖θ‖)θ (AdamWN).
    NormControl,
    /// SGD with the decay folded into the gradient step; no Adam moments.
    CoupledSGD,
    /// Bare Adam.
    #[default]
    None,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::DecayCoupledLR,
        Variant::DecayDecoupled,
        Variant::NormControl,
        Variant::CoupledSGD,
        Variant::None,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::DecayCoupledLR => "decay_coupled_lr",
            Variant::DecayDecoupled => "decay_decoupled",
            Variant::NormControl => "norm_control",
            Variant::CoupledSGD => "coupled_sgd",
            Variant::None => "none",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "decay_coupled_lr" | "adamw" => Variant::DecayCoupledLR,
            "decay_decoupled" | "adamw_decoupled" => Variant::DecayDecoupled,
            "norm_control" | "adamwn" => Variant::NormControl,
            "coupled_sgd" | "sgd" => Variant::CoupledSGD,
            "none" | "adam" => Variant::None,
            other => {
                return Err(format!(
                    "unknown variant `{other}` (expected one of decay_coupled_lr, \
                     decay_decoupled, norm_control, coupled_sgd, none)"
                ))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub lambda: f64,
    pub variant: Variant,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            lambda: 0.0,
            variant: Variant::None,
        }
    }
}

impl OptimizerConfig {
    pub fn with_variant(variant: Variant, lambda: f64) -> Self {
        Self {
            variant,
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            (
                "alpha",
                self.alpha > 0.0 && self.alpha.is_finite(),
                "must be > 0",
            ),
            (
                "beta1",
                (0.0..1.0).contains(&self.beta1),
                "must be in [0, 1)",
            ),
            (
                "beta2",
                (0.0..1.0).contains(&self.beta2),
                "must be in [0, 1)",
            ),
            (
                "epsilon",
                self.epsilon > 0.0 && self.epsilon.is_finite(),
                "must be > 0",
            ),
            (
                "lambda",
                self.lambda >= 0.0 && self.lambda.is_finite(),
                "must be >= 0",
            ),
        ];
        for (field, ok, msg) in checks {
            if !ok {
                return Err(Error::validation(field, msg));
            }
        }
        Ok(())
    }
}

/// Step counter and bias-corrected moment estimates.
///
/// The moments are kept already divided by (1 − βᵗ) and advanced with
/// m̂ ← (1 − w)·m̂ + w·g, w = (1 − β)/(1 − βᵗ), which is the same recurrence
/// as the raw-moment form but gives m̂ = g and v̂ = g² exactly at t = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    t: u64,
    m_hat: Vec<f64>,
    v_hat: Vec<f64>,
    beta1_pow: f64,
    beta2_pow: f64,
}

impl OptimizerState {
    pub fn new(n: usize) -> Self {
        Self {
            t: 0,
            m_hat: vec![0.0; n],
            v_hat: vec![0.0; n],
            beta1_pow: 1.0,
            beta2_pow: 1.0,
        }
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn len(&self) -> usize {
        self.m_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m_hat.is_empty()
    }

    /// Moves to the next step index. Must precede [`adam_moment_update`].
    pub fn advance(&mut self) {
        self.t += 1;
    }

    pub fn m_hat(&self) -> &[f64] {
        &self.m_hat
    }

    pub fn v_hat(&self) -> &[f64] {
        &self.v_hat
    }

    /// Raw first moment m_t = m̂_t (1 − β₁ᵗ).
    pub fn first_moment(&self) -> Vec<f64> {
        let c = 1.0 - self.beta1_pow;
        self.m_hat.iter().map(|m| m * c).collect()
    }

    /// Raw second moment v_t = v̂_t (1 − β₂ᵗ).
    pub fn second_moment(&self) -> Vec<f64> {
        let c = 1.0 - self.beta2_pow;
        self.v_hat.iter().map(|v| v * c).collect()
    }
}

fn check_shape(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::ShapeMismatch { expected, got });
    }
    Ok(())
}

/// Folds `g` into the moment estimates for the current step and returns the
/// bias-corrected pair (m̂, v̂).
pub fn adam_moment_update<'a>(
    state: &'a mut OptimizerState,
    g: &[f64],
    cfg: &OptimizerConfig,
) -> Result<(&'a [f64], &'a [f64])> {
    check_shape(state.len(), g.len())?;
    if state.t == 0 {
        return Err(Error::validation(
            "t",
            "advance the state before updating moments",
        ));
    }
    let t = i32::try_from(state.t).map_err(|_| Error::validation("t", "step index too large"))?;
    state.beta1_pow = cfg.beta1.powi(t);
    state.beta2_pow = cfg.beta2.powi(t);
    let w1 = (1.0 - cfg.beta1) / (1.0 - state.beta1_pow);
    let w2 = (1.0 - cfg.beta2) / (1.0 - state.beta2_pow);
    let (k1, k2) = (1.0 - w1, 1.0 - w2);
    for ((m, v), &gi) in state.m_hat.iter_mut().zip(state.v_hat.iter_mut()).zip(g) {
        *m = k1 * *m + w1 * gi;
        *v = k2 * *v + w2 * (gi * gi);
    }
    Ok((&state.m_hat, &state.v_hat))
}

/// θ ← θ − η_t·α·m̂/(√v̂ + ε) on every element, controlled or not.
pub fn adam_param_update(
    store: &mut ParamStore,
    m_hat: &[f64],
    v_hat: &[f64],
    eta_t: f64,
    cfg: &OptimizerConfig,
) -> Result<()> {
    check_shape(store.len(), m_hat.len())?;
    check_shape(store.len(), v_hat.len())?;
    let lr = eta_t * cfg.alpha;
    for ((x, &m), &v) in store.theta_mut().iter_mut().zip(m_hat).zip(v_hat) {
        *x -= lr * m / (v.sqrt() + cfg.epsilon);
    }
    Ok(())
}

/// θ ← (1 − rate)·θ on controlled groups.
pub fn regularize_decay(store: &mut ParamStore, rate: f64) {
    store.scale_controlled(1.0 - rate);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormControlOutcome {
    /// r_t = 0: plain decay by k_t.
    Decayed,
    /// Controlled groups multiplied by `factor`.
    Scaled { factor: f64 },
    /// Norm below [`ZERO_NORM_THRESHOLD`]; nothing to scale.
    ZeroNorm,
}

/// Moves the controlled norm a fraction `k_t` of the way toward its target.
///
/// The applied factor is (1 − k_t) + k_t·target/‖θ‖, which equals
/// 1 − k_t(1 − target/‖θ‖) and yields a post-update norm of
/// (1 − k_t)‖θ‖ + k_t·target. With k_t = 1 the factor is target/‖θ‖ exactly.
pub fn regularize_norm_control(
    store: &mut ParamStore,
    r_t: f64,
    k_t: f64,
    mode: TargetNormMode,
) -> NormControlOutcome {
    if r_t == 0.0 {
        regularize_decay(store, k_t);
        return NormControlOutcome::Decayed;
    }
    let n = store.controlled_norm();
    if n < ZERO_NORM_THRESHOLD {
        return NormControlOutcome::ZeroNorm;
    }
    let target = mode.target(r_t, store.initial_norm());
    let factor = (1.0 - k_t) + k_t * (target / n);
    store.scale_controlled(factor);
    NormControlOutcome::Scaled { factor }
}

/// θ ← (1 − λ)·θ − α·g on controlled groups, θ ← θ − α·g elsewhere.
pub fn sgd_step_coupled_decay(
    store: &mut ParamStore,
    g: &[f64],
    alpha: f64,
    lambda: f64,
) -> Result<()> {
    check_shape(store.len(), g.len())?;
    let keep = 1.0 - lambda;
    let mask = store.controlled_mask();
    for ((x, &gi), &controlled) in store.theta_mut().iter_mut().zip(g).zip(&mask) {
        *x = if controlled {
            keep * *x - alpha * gi
        } else {
            *x - alpha * gi
        };
    }
    Ok(())
}

/// Explicit regularization for one Adam step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularization {
    None,
    Decay {
        rate: f64,
    },
    NormControl {
        r_t: f64,
        k_t: f64,
        mode: TargetNormMode,
    },
}

impl Regularization {
    /// What `variant` applies at step `t` with multiplier `eta`.
    pub fn resolve(
        variant: Variant,
        cfg: &OptimizerConfig,
        schedule: &ScheduleSpec,
        t: u64,
        eta: f64,
    ) -> Self {
        match variant {
            Variant::DecayCoupledLR => Regularization::Decay {
                rate: eta * cfg.alpha * cfg.lambda,
            },
            Variant::DecayDecoupled => Regularization::Decay {
                rate: eta * cfg.lambda,
            },
            Variant::NormControl => Regularization::NormControl {
                r_t: schedule.rt(t),
                k_t: schedule.kt(t),
                mode: schedule.target_mode,
            },
            Variant::CoupledSGD | Variant::None => Regularization::None,
        }
    }
}

/// What happened during one step. `r_t`/`k_t` are the equivalent
/// norm-control parameters: decay variants report r_t = 0 and their rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub t: u64,
    pub eta: f64,
    pub r_t: f64,
    pub k_t: f64,
    pub target_norm: f64,
    /// Controlled norm after the loss update, before regularization.
    pub pre_norm: f64,
    pub post_norm: f64,
    pub zero_norm: bool,
}

/// One Adam step with an explicit regularization.
pub fn adam_step(
    store: &mut ParamStore,
    state: &mut OptimizerState,
    g: &[f64],
    eta: f64,
    reg: Regularization,
    cfg: &OptimizerConfig,
) -> Result<StepReport> {
    check_shape(store.len(), g.len())?;
    check_shape(store.len(), state.len())?;
    state.advance();
    let (m_hat, v_hat) = adam_moment_update(state, g, cfg)?;
    adam_param_update(store, m_hat, v_hat, eta, cfg)?;
    let pre_norm = store.controlled_norm();
    let (r_t, k_t, target_norm, zero_norm) = match reg {
        Regularization::None => (0.0, 0.0, 0.0, false),
        Regularization::Decay { rate } => {
            regularize_decay(store, rate);
            (0.0, rate, 0.0, false)
        }
        Regularization::NormControl { r_t, k_t, mode } => {
            let outcome = regularize_norm_control(store, r_t, k_t, mode);
            let target = mode.target(r_t, store.initial_norm());
            (r_t, k_t, target, outcome == NormControlOutcome::ZeroNorm)
        }
    };
    Ok(StepReport {
        t: state.t,
        eta,
        r_t,
        k_t,
        target_norm,
        pre_norm,
        post_norm: store.controlled_norm(),
        zero_norm,
    })
}

/// One full step as configured by `cfg.variant` and `schedule`.
pub fn step(
    store: &mut ParamStore,
    state: &mut OptimizerState,
    g: &[f64],
    schedule: &ScheduleSpec,
    cfg: &OptimizerConfig,
) -> Result<StepReport> {
    check_shape(store.len(), g.len())?;
    if let Some(index) = g.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            what: "gradient",
            index,
        });
    }
    let t = state.t + 1;
    let eta = schedule.eta(t)?;
    if cfg.variant == Variant::CoupledSGD {
        state.advance();
        sgd_step_coupled_decay(store, g, eta * cfg.alpha, cfg.lambda)?;
        let norm = store.controlled_norm();
        return Ok(StepReport {
            t,
            eta,
            r_t: 0.0,
            k_t: cfg.lambda,
            target_norm: 0.0,
            pre_norm: norm,
            post_norm: norm,
            zero_norm: false,
        });
    }
    let reg = Regularization::resolve(cfg.variant, cfg, schedule, t, eta);
    adam_step(store, state, g, eta, reg, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cfg() -> OptimizerConfig {
        OptimizerConfig::default()
    }

    #[test]
    fn bias_correction_cancels_at_first_step() {
        let mut s = OptimizerState::new(1);
        s.advance();
        let (m, v) = adam_moment_update(&mut s, &[1.0], &cfg()).unwrap();
        assert_eq!(m, &[1.0]);
        assert_eq!(v, &[1.0]);
        assert_relative_eq!(s.first_moment()[0], 0.1, max_relative = 1e-15);

        let mut s = OptimizerState::new(1);
        s.advance();
        let (_, v) = adam_moment_update(&mut s, &[2.0], &cfg()).unwrap();
        assert_eq!(v, &[4.0]);
        assert_relative_eq!(s.second_moment()[0], 0.004, max_relative = 1e-13);
    }

    #[test]
    fn two_steps_unrolled() {
        // m1 = 0.1, m2 = 0.9*0.1 + 0.1 = 0.19, m̂2 = 0.19 / (1 - 0.81) = 1
        let mut s = OptimizerState::new(1);
        for _ in 0..2 {
            s.advance();
            adam_moment_update(&mut s, &[1.0], &cfg()).unwrap();
        }
        assert_relative_eq!(s.first_moment()[0], 0.19, max_relative = 1e-15);
        assert_relative_eq!(s.m_hat()[0], 1.0, max_relative = 1e-15);
    }

    #[test]
    fn moment_update_requires_advance_and_shape() {
        let mut s = OptimizerState::new(2);
        assert!(adam_moment_update(&mut s, &[1.0, 1.0], &cfg()).is_err());
        s.advance();
        assert!(matches!(
            adam_moment_update(&mut s, &[1.0], &cfg()),
            Err(Error::ShapeMismatch {
                expected: 2,
                got: 1
            })
        ));
    }

    #[test]
    fn param_update_examples() {
        let mut p = ParamStore::single(vec![0.0]);
        adam_param_update(&mut p, &[1.0], &[1.0], 1.0, &cfg()).unwrap();
        assert_eq!(p.theta()[0], -0.001 / (1.0 + 1e-8));

        let mut p = ParamStore::single(vec![0.5]);
        adam_param_update(&mut p, &[0.0], &[3.0], 1.0, &cfg()).unwrap();
        assert_eq!(p.theta()[0], 0.5);

        let mut p = ParamStore::single(vec![1.0]);
        adam_param_update(&mut p, &[4.0], &[4.0], 0.5, &cfg()).unwrap();
        // 1 - 0.5 * 0.001 * 4 / (2 + 1e-8) = 0.999000000005
        assert_relative_eq!(p.theta()[0], 0.999_000_000_005, max_relative = 1e-14);
    }

    #[test]
    fn loss_update_ignores_controlled_flag() {
        let mut p =
            ParamStore::from_layout(vec![0.0, 0.0], &[("w", 1, true), ("ln", 1, false)]).unwrap();
        adam_param_update(&mut p, &[1.0, 1.0], &[1.0, 1.0], 1.0, &cfg()).unwrap();
        assert_eq!(p.theta()[0], p.theta()[1]);
        assert!(p.theta()[1] < 0.0);
    }

    #[test]
    fn decay_examples() {
        let mut p = ParamStore::single(vec![2.0, -2.0]);
        regularize_decay(&mut p, 0.1);
        assert_relative_eq!(p.theta()[0], 1.8, max_relative = 1e-15);
        assert_relative_eq!(p.theta()[1], -1.8, max_relative = 1e-15);

        let mut p = ParamStore::single(vec![2.0, -2.0]);
        regularize_decay(&mut p, 0.0);
        assert_eq!(p.theta(), &[2.0, -2.0]);

        let mut p = ParamStore::single(vec![1.0]);
        regularize_decay(&mut p, 1.0);
        assert_eq!(p.theta(), &[0.0]);
    }

    #[test]
    fn norm_control_full_projection() {
        let mut p = ParamStore::single(vec![1.2, 1.6]); // ‖θ₀‖ = 2
        p.theta_mut().copy_from_slice(&[3.0, 4.0]);
        regularize_norm_control(&mut p, 1.0, 1.0, TargetNormMode::RelativeToInit);
        assert_relative_eq!(p.theta()[0], 1.2, max_relative = 1e-15);
        assert_relative_eq!(p.theta()[1], 1.6, max_relative = 1e-15);
        assert_relative_eq!(p.controlled_norm(), 2.0, max_relative = 1e-15);
    }

    #[test]
    fn norm_control_with_zero_target_is_decay() {
        let mut p = ParamStore::single(vec![3.0, 4.0]);
        let out = regularize_norm_control(&mut p, 0.0, 0.1, TargetNormMode::RelativeToInit);
        assert_eq!(out, NormControlOutcome::Decayed);
        assert_relative_eq!(p.theta()[0], 2.7, max_relative = 1e-15);
        assert_relative_eq!(p.theta()[1], 3.6, max_relative = 1e-15);
    }

    #[test]
    fn norm_control_half_step_toward_double() {
        // n = 5, target = 2 * 5 = 10, factor = 1 - 0.5 (1 - 2) = 1.5
        let mut p = ParamStore::single(vec![3.0, 4.0]);
        let out = regularize_norm_control(&mut p, 2.0, 0.5, TargetNormMode::RelativeToInit);
        assert_eq!(out, NormControlOutcome::Scaled { factor: 1.5 });
        assert_eq!(p.theta(), &[4.5, 6.0]);
        assert_eq!(p.controlled_norm(), 0.5 * 5.0 + 0.5 * 10.0);
    }

    #[test]
    fn norm_control_absolute_target() {
        let mut p = ParamStore::single(vec![3.0, 4.0]);
        regularize_norm_control(&mut p, 1.0, 1.0, TargetNormMode::Absolute);
        assert_relative_eq!(p.controlled_norm(), 1.0, max_relative = 1e-15);
    }

    #[test]
    fn norm_control_zero_vector_is_fixed_point() {
        let mut p = ParamStore::from_layout(vec![1.0, 0.0, 0.0], &[("w", 1, true), ("x", 2, true)])
            .unwrap();
        p.theta_mut()[0] = 0.0;
        let out = regularize_norm_control(&mut p, 2.0, 0.5, TargetNormMode::RelativeToInit);
        assert_eq!(out, NormControlOutcome::ZeroNorm);
        assert!(p.theta().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn norm_control_leaves_uncontrolled_alone() {
        let mut p =
            ParamStore::from_layout(vec![3.0, 4.0, 9.0], &[("w", 2, true), ("ln", 1, false)])
                .unwrap();
        regularize_norm_control(&mut p, 3.0, 1.0, TargetNormMode::RelativeToInit);
        assert_eq!(p.theta()[2], 9.0);
        regularize_norm_control(&mut p, 0.0, 0.5, TargetNormMode::RelativeToInit);
        regularize_decay(&mut p, 0.5);
        assert_eq!(p.theta()[2], 9.0);
    }

    #[test]
    fn coupled_sgd_examples() {
        let mut p = ParamStore::single(vec![1.0]);
        sgd_step_coupled_decay(&mut p, &[0.0], 0.01, 0.1).unwrap();
        assert_eq!(p.theta(), &[0.9]);

        let mut p = ParamStore::single(vec![0.0]);
        sgd_step_coupled_decay(&mut p, &[1.0], 0.01, 0.1).unwrap();
        assert_eq!(p.theta(), &[-0.01]);

        let mut p = ParamStore::single(vec![2.0]);
        sgd_step_coupled_decay(&mut p, &[1.0], 0.1, 0.5).unwrap();
        assert_relative_eq!(p.theta()[0], 0.9, max_relative = 1e-15);

        let mut p =
            ParamStore::from_layout(vec![1.0, 1.0], &[("w", 1, true), ("b", 1, false)]).unwrap();
        sgd_step_coupled_decay(&mut p, &[0.0, 0.0], 0.1, 0.5).unwrap();
        assert_eq!(p.theta(), &[0.5, 1.0]);
    }

    #[test]
    fn notes_special_cases_match_bitwise() {
        let schedule = ScheduleSpec::with_horizon(50);
        let grads: Vec<Vec<f64>> = (0..50)
            .map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 1.3).cos() - 0.2, 0.05])
            .collect();
        for variant in [Variant::DecayCoupledLR, Variant::DecayDecoupled] {
            let c = OptimizerConfig::with_variant(variant, 0.1);
            let mut a = ParamStore::single(vec![0.5, -1.0, 2.0]);
            let mut b = a.clone();
            let (mut sa, mut sb) = (OptimizerState::new(3), OptimizerState::new(3));
            for g in &grads {
                step(&mut a, &mut sa, g, &schedule, &c).unwrap();
                let t = sb.t() + 1;
                let eta = schedule.eta(t).unwrap();
                let k_t = match variant {
                    Variant::DecayCoupledLR => eta * c.alpha * c.lambda,
                    _ => eta * c.lambda,
                };
                let reg = Regularization::NormControl {
                    r_t: 0.0,
                    k_t,
                    mode: TargetNormMode::RelativeToInit,
                };
                adam_step(&mut b, &mut sb, g, eta, reg, &c).unwrap();
            }
            assert_eq!(a.theta(), b.theta(), "{variant}");
        }
    }

    #[test]
    fn none_variant_is_bare_adam() {
        let mut schedule = ScheduleSpec::with_horizon(10);
        schedule.eta = crate::schedules::CosineSpec::constant(1.0);
        let c = OptimizerConfig::default();
        let mut a = ParamStore::single(vec![1.0, 2.0]);
        let mut sa = OptimizerState::new(2);
        let r = step(&mut a, &mut sa, &[0.5, -0.5], &schedule, &c).unwrap();
        assert_eq!((r.t, r.r_t, r.k_t), (1, 0.0, 0.0));
        let lr = 1.0 * 1e-3;
        assert_eq!(a.theta()[0], 1.0 - lr * 0.5 / (0.5 + 1e-8));
        assert_eq!(a.theta()[1], 2.0 - lr * -0.5 / (0.5 + 1e-8));
    }

    #[test]
    fn step_rejects_non_finite_gradient_and_exhausted_schedule() {
        let schedule = ScheduleSpec::with_horizon(1);
        let c = OptimizerConfig::default();
        let mut p = ParamStore::single(vec![1.0]);
        let mut s = OptimizerState::new(1);
        assert!(matches!(
            step(&mut p, &mut s, &[f64::NAN], &schedule, &c),
            Err(Error::NonFinite { .. })
        ));
        step(&mut p, &mut s, &[1.0], &schedule, &c).unwrap();
        assert!(matches!(
            step(&mut p, &mut s, &[1.0], &schedule, &c),
            Err(Error::ScheduleExhausted { t: 2, horizon: 1 })
        ));
    }

    #[test]
    fn config_validation() {
        assert!(OptimizerConfig::default().validate().is_ok());
        for bad in [
            OptimizerConfig {
                beta1: 1.0,
                ..Default::default()
            },
            OptimizerConfig {
                beta2: -0.1,
                ..Default::default()
            },
            OptimizerConfig {
                epsilon: 0.0,
                ..Default::default()
            },
            OptimizerConfig {
                alpha: 0.0,
                ..Default::default()
            },
            OptimizerConfig {
                lambda: -1.0,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert_eq!("adamwn".parse::<Variant>().unwrap(), Variant::NormControl);
        assert!("lamb".parse::<Variant>().is_err());
    }
}
