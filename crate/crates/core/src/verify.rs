//! Reference oracle and randomized property checks.
//!
//! The oracle re-transcribes one optimizer step with plain per-element loops,
//! raw (uncorrected) moments, running β powers and a two-pass scaled norm.
//! It shares no arithmetic with [`crate::optim`] or [`crate::param_store`],
//! so agreement between the two is evidence rather than tautology.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::RunConfig;
use crate::optim::{
    self, OptimizerConfig, OptimizerState, Regularization, Variant, ZERO_NORM_THRESHOLD,
};
use crate::par;
use crate::param_store::{ParamGroup, ParamStore};
use crate::schedules::{CosineSpec, PiecewiseLinear, ScheduleSpec, TargetNormMode};
use crate::tasks::Task;

const EPS: f64 = f64::EPSILON;

/// Tolerance for oracle/production agreement, relative to the vector's
/// largest element, with an absolute floor.
pub const ORACLE_REL_TOL: f64 = 1e-13;
pub const ORACLE_ABS_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleState {
    pub theta: Vec<f64>,
    pub controlled: Vec<bool>,
    pub theta0_norm: f64,
    /// Raw first and second moments.
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    beta1_t: f64,
    beta2_t: f64,
}

impl OracleState {
    pub fn new(theta: Vec<f64>, controlled: Vec<bool>) -> Result<Self> {
        if theta.len() != controlled.len() {
            return Err(Error::ShapeMismatch {
                expected: theta.len(),
                got: controlled.len(),
            });
        }
        let n = theta.len();
        let theta0_norm = two_pass_norm(&theta, &controlled);
        Ok(Self {
            theta,
            controlled,
            theta0_norm,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1_t: 1.0,
            beta2_t: 1.0,
        })
    }

    pub fn from_store(store: &ParamStore) -> Self {
        let controlled = store
            .groups()
            .iter()
            .flat_map(|g| std::iter::repeat_n(g.controlled, g.length))
            .collect();
        Self::new(store.theta().to_vec(), controlled).expect("mask built from the store")
    }

    pub fn norm(&self) -> f64 {
        two_pass_norm(&self.theta, &self.controlled)
    }
}

/// L2 norm of the masked elements: find the largest magnitude, then sum the
/// squares of the elements divided by it.
#[allow(clippy::needless_range_loop)]
pub fn two_pass_norm(x: &[f64], mask: &[bool]) -> f64 {
    let mut scale = 0.0f64;
    for i in 0..x.len() {
        if mask[i] && x[i].abs() > scale {
            scale = x[i].abs();
        }
    }
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    let mut s = 0.0;
    for i in 0..x.len() {
        if mask[i] {
            let y = x[i] / scale;
            s += y * y;
        }
    }
    scale * s.sqrt()
}

/// One full step: moments, bias correction, parameter update, then the
/// regularization selected by `cfg.variant`. `r_t`/`k_t` are only read by
/// norm control; the decay variants derive their rate from η, α and λ.
#[allow(clippy::needless_range_loop, clippy::assign_op_pattern)]
pub fn oracle_step(
    o: &mut OracleState,
    g: &[f64],
    eta: f64,
    r_t: f64,
    k_t: f64,
    mode: TargetNormMode,
    cfg: &OptimizerConfig,
) {
    let n = o.theta.len();
    assert_eq!(g.len(), n, "gradient length");
    o.t += 1;

    if cfg.variant == Variant::CoupledSGD {
        let lr = eta * cfg.alpha;
        for i in 0..n {
            if o.controlled[i] {
                o.theta[i] = (1.0 - cfg.lambda) * o.theta[i] - lr * g[i];
            } else {
                o.theta[i] = o.theta[i] - lr * g[i];
            }
        }
        return;
    }

    o.beta1_t *= cfg.beta1;
    o.beta2_t *= cfg.beta2;
    for i in 0..n {
        o.m[i] = cfg.beta1 * o.m[i] + (1.0 - cfg.beta1) * g[i];
        o.v[i] = cfg.beta2 * o.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let m_hat = o.m[i] / (1.0 - o.beta1_t);
        let v_hat = o.v[i] / (1.0 - o.beta2_t);
        o.theta[i] = o.theta[i] - eta * cfg.alpha * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }

    let decay = match cfg.variant {
        Variant::DecayCoupledLR => Some(eta * cfg.alpha * cfg.lambda),
        Variant::DecayDecoupled => Some(eta * cfg.lambda),
        Variant::NormControl if r_t == 0.0 => Some(k_t),
        _ => None,
    };
    if let Some(rate) = decay {
        for i in 0..n {
            if o.controlled[i] {
                o.theta[i] = o.theta[i] - rate * o.theta[i];
            }
        }
        return;
    }
    if cfg.variant == Variant::NormControl {
        let norm = o.norm();
        if norm < ZERO_NORM_THRESHOLD {
            return;
        }
        let target = match mode {
            TargetNormMode::RelativeToInit => r_t * o.theta0_norm,
            TargetNormMode::Absolute => r_t,
        };
        let c = k_t * (1.0 - target / norm);
        for i in 0..n {
            if o.controlled[i] {
                o.theta[i] = o.theta[i] - c * o.theta[i];
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleRow {
    pub t: u64,
    pub r_t: f64,
    pub norm_ratio: f64,
}

/// Replays `config` with oracle updates in place of the optimizer. Batches
/// and gradients come from the same task and sampler as [`crate::harness::run`].
pub fn oracle_run(config: &RunConfig) -> Result<Vec<OracleRow>> {
    config.validate()?;
    let task = Task::build(&config.task, config.seed)?;
    let mask: Vec<bool> = task
        .layout()
        .iter()
        .flat_map(|g| std::iter::repeat_n(g.controlled, g.length))
        .collect();
    let mut o = OracleState::new(task.init_theta(config.seed), mask)?;
    if o.theta0_norm == 0.0 {
        return Err(Error::DegenerateInit);
    }
    let mut sampler = task.sampler(config.seed, config.batch_size);
    let s = &config.schedule;
    let mut rows = Vec::with_capacity(config.steps() as usize);
    for t in 1..=config.steps() {
        let batch = sampler.next_batch(task.train_pool());
        let (_, g) = task.loss_and_grad(&o.theta, &batch)?;
        let eta = s.eta(t)?;
        let (r_t, k_t) = (s.rt(t), s.kt(t));
        oracle_step(&mut o, &g, eta, r_t, k_t, s.target_mode, &config.optimizer);
        rows.push(OracleRow {
            t,
            r_t,
            norm_ratio: o.norm() / o.theta0_norm,
        });
    }
    Ok(rows)
}

/// Largest |a − b| over the vectors, divided by the largest |b| (floored).
pub fn normwise_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = a
        .iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if diff <= ORACLE_ABS_FLOOR {
        return 0.0;
    }
    diff / scale.max(ORACLE_ABS_FLOOR)
}

/// Largest element-wise relative difference, each element against its own
/// magnitude, with the absolute floor.
pub fn elementwise_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| {
        let d = (x - y).abs();
        if d <= ORACLE_ABS_FLOOR {
            m
        } else {
            m.max(d / x.abs().max(y.abs()))
        }
    })
}

// ---------------------------------------------------------------------------
// Property suite

#[derive(Debug, Clone, PartialEq)]
enum Verdict {
    Pass,
    Fail(String),
    NonFinite(String),
}

type Property = fn(&mut ChaCha8Rng) -> Verdict;

const PROPERTIES: &[(&str, Property)] = &[
    ("store.scale_homogeneity", scale_homogeneity),
    ("store.ratio_at_init", ratio_at_init),
    ("store.uncontrolled_mutation", uncontrolled_mutation),
    ("schedule.eta_monotone", eta_monotone),
    ("schedule.rt_exact_at_nodes", rt_exact_at_nodes),
    ("schedule.purity", schedule_purity),
    ("schedule.text_round_trip", text_round_trip),
    ("optim.convex_combination", convex_combination),
    ("optim.projection_exactness", projection_exactness),
    ("optim.fixed_point", fixed_point),
    ("optim.direction_preservation", direction_preservation),
    ("optim.bias_correction_identity", bias_correction_identity),
    ("optim.uncontrolled_invariance", uncontrolled_invariance),
    (
        "optim.special_case_decay_coupled_lr",
        special_case_coupled_lr,
    ),
    ("optim.special_case_decay_decoupled", special_case_decoupled),
    ("oracle.decay_coupled_lr", oracle_coupled_lr),
    ("oracle.decay_decoupled", oracle_decoupled),
    ("oracle.norm_control", oracle_norm_control),
    ("oracle.coupled_sgd", oracle_coupled_sgd),
    ("oracle.none", oracle_none),
    ("sweep.near_zero_theta", near_zero_theta),
    ("sweep.extreme_ranges", extreme_ranges),
];

pub fn property_names() -> impl Iterator<Item = &'static str> {
    PROPERTIES.iter().map(|(n, _)| *n)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyOutcome {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    pub non_finite: usize,
    pub first_counterexample: Option<String>,
}

impl PropertyOutcome {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.non_finite == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyReport {
    pub seed: u64,
    pub outcomes: Vec<PropertyOutcome>,
}

impl PropertyReport {
    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(PropertyOutcome::passed)
    }

    pub fn failures(&self) -> usize {
        self.outcomes.iter().map(|o| o.failures).sum()
    }

    pub fn non_finite(&self) -> usize {
        self.outcomes.iter().map(|o| o.non_finite).sum()
    }

    pub fn get(&self, name: &str) -> Option<&PropertyOutcome> {
        self.outcomes.iter().find(|o| o.name == name)
    }
}

impl fmt::Display for PropertyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for o in &self.outcomes {
            let status = if o.passed() { "ok" } else { "FAILED" };
            write!(
                f,
                "{:<40} {:>6} cases  {:>4} failed  {:>4} non-finite  {status}",
                o.name, o.cases, o.failures, o.non_finite
            )?;
            if let Some(c) = &o.first_counterexample {
                write!(f, "\n    first counterexample: {c}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Runs every property on `cases` random inputs. Case `i` of property `p`
/// draws from its own stream, so the report does not depend on scheduling.
pub fn property_suite(seed: u64, cases: usize) -> PropertyReport {
    let verdicts = par::map_range(PROPERTIES.len() * cases, |j| {
        let (p, i) = (j / cases, j % cases);
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(((p as u64) << 32) | i as u64);
        (PROPERTIES[p].1)(&mut r)
    });
    let outcomes = PROPERTIES
        .iter()
        .enumerate()
        .map(|(p, &(name, _))| {
            let mut o = PropertyOutcome {
                name,
                cases,
                failures: 0,
                non_finite: 0,
                first_counterexample: None,
            };
            for v in &verdicts[p * cases..(p + 1) * cases] {
                let msg = match v {
                    Verdict::Pass => continue,
                    Verdict::Fail(m) => {
                        o.failures += 1;
                        m
                    }
                    Verdict::NonFinite(m) => {
                        o.non_finite += 1;
                        m
                    }
                };
                o.first_counterexample.get_or_insert_with(|| msg.clone());
            }
            o
        })
        .collect();
    PropertyReport { seed, outcomes }
}

// ---- generators

fn log_uniform(r: &mut ChaCha8Rng, lo_exp: f64, hi_exp: f64) -> f64 {
    10f64.powf(r.random_range(lo_exp..=hi_exp))
}

fn gaussian(r: &mut ChaCha8Rng) -> f64 {
    r.sample(StandardNormal)
}

/// Random layout of 1–4 groups over `dim` elements. At least one group is
/// controlled; with `need_uncontrolled` at least one is not (dim ≥ 2).
fn random_groups(r: &mut ChaCha8Rng, dim: usize, need_uncontrolled: bool) -> Vec<ParamGroup> {
    let max_groups = dim.min(4);
    let min_groups = if need_uncontrolled { 2 } else { 1 };
    let k = r.random_range(min_groups..=max_groups.max(min_groups));
    let mut cuts: Vec<usize> = (1..dim).collect();
    for i in 0..k - 1 {
        let j = r.random_range(i..cuts.len());
        cuts.swap(i, j);
    }
    cuts.truncate(k - 1);
    cuts.sort_unstable();
    let mut bounds = vec![0];
    bounds.extend(cuts);
    bounds.push(dim);
    let mut flags: Vec<bool> = (0..k).map(|_| r.random_bool(0.6)).collect();
    let first = r.random_range(0..k);
    flags[first] = true;
    if need_uncontrolled {
        let other = (first + 1 + r.random_range(0..k - 1)) % k;
        flags[other] = false;
    }
    (0..k)
        .map(|i| ParamGroup {
            name: format!("g{i}"),
            offset: bounds[i],
            length: bounds[i + 1] - bounds[i],
            controlled: flags[i],
        })
        .collect()
}

fn random_store(
    r: &mut ChaCha8Rng,
    max_dim: usize,
    scale: f64,
    need_uncontrolled: bool,
) -> ParamStore {
    let min_dim = if need_uncontrolled { 2 } else { 1 };
    let dim = r.random_range(min_dim..=max_dim.max(min_dim));
    let theta: Vec<f64> = (0..dim).map(|_| scale * gaussian(r)).collect();
    let groups = random_groups(r, dim, need_uncontrolled);
    ParamStore::new(theta, groups).expect("generated layout tiles the vector")
}

/// Multiplies every element by its own factor in [lo, hi], so the current
/// norm moves away from the initial one.
fn perturb(r: &mut ChaCha8Rng, store: &mut ParamStore, lo: f64, hi: f64) {
    for x in store.theta_mut() {
        *x *= r.random_range(lo..=hi);
    }
}

fn random_r(r: &mut ChaCha8Rng) -> f64 {
    // (0, 3]
    3.0 * (1.0 - r.random::<f64>())
}

fn random_mode(r: &mut ChaCha8Rng) -> TargetNormMode {
    if r.random_bool(0.5) {
        TargetNormMode::RelativeToInit
    } else {
        TargetNormMode::Absolute
    }
}

fn random_piecewise(r: &mut ChaCha8Rng, lo: f64, hi: f64, horizon: u64) -> PiecewiseLinear {
    let n = r.random_range(1..=5usize).min(horizon as usize + 1);
    let mut ts: Vec<u64> = (0..n - 1).map(|_| r.random_range(1..=horizon)).collect();
    ts.sort_unstable();
    ts.dedup();
    let mut points = vec![(0, r.random_range(lo..=hi))];
    points.extend(ts.into_iter().map(|t| (t, r.random_range(lo..=hi))));
    PiecewiseLinear::new(points).expect("increasing breakpoints from t = 0")
}

fn random_cosine(r: &mut ChaCha8Rng, horizon: u64) -> CosineSpec {
    let eta_max = r.random_range(0.05..=1.0);
    let eta_min = eta_max * r.random_range(0.01..=1.0);
    let warmup_steps = if r.random_bool(0.3) {
        r.random_range(0..horizon)
    } else {
        0
    };
    CosineSpec {
        eta_max,
        eta_min,
        warmup_steps,
    }
}

/// Valid schedule with r_t in `rt_range` (or identically zero with
/// probability `rt_zero`) and k_t in [0, 1].
fn random_schedule(
    r: &mut ChaCha8Rng,
    horizon: u64,
    rt_range: (f64, f64),
    rt_zero: f64,
) -> ScheduleSpec {
    let rt = if r.random_bool(rt_zero) {
        PiecewiseLinear::constant(0.0)
    } else {
        random_piecewise(r, rt_range.0, rt_range.1, horizon)
    };
    let spec = ScheduleSpec {
        horizon,
        eta: random_cosine(r, horizon),
        rt,
        kt: random_piecewise(r, 0.0, 1.0, horizon),
        target_mode: random_mode(r),
    };
    spec.validate().expect("generated schedule is valid");
    spec
}

fn random_cfg(r: &mut ChaCha8Rng, variant: Variant) -> OptimizerConfig {
    OptimizerConfig {
        alpha: log_uniform(r, -4.0, -2.0),
        beta1: r.random_range(0.0..0.99),
        beta2: r.random_range(0.9..0.9999),
        epsilon: 1e-8,
        lambda: r.random_range(0.0..=1.0),
        variant,
    }
}

fn all_finite(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

fn non_finite(what: &str) -> Verdict {
    Verdict::NonFinite(format!("{what} produced NaN or Inf"))
}

// ---- param-store

fn scale_homogeneity(r: &mut ChaCha8Rng) -> Verdict {
    let scale = log_uniform(r, -3.0, 3.0);
    let mut s = random_store(r, 1000, scale, false);
    let c = if r.random_bool(0.1) {
        0.0
    } else {
        log_uniform(r, -3.0, 3.0)
    };
    let before = s.controlled_norm();
    s.scale_controlled(c);
    let after = s.controlled_norm();
    if !after.is_finite() {
        return non_finite("controlled_norm");
    }
    let expect = c * before;
    if (after - expect).abs() <= 4.0 * EPS * expect {
        Verdict::Pass
    } else {
        Verdict::Fail(format!(
            "dim {}, c = {c:e}: norm {after:e}, expected {expect:e}",
            s.len()
        ))
    }
}

fn ratio_at_init(r: &mut ChaCha8Rng) -> Verdict {
    let scale = log_uniform(r, -100.0, 100.0);
    let s = random_store(r, 1000, scale, false);
    match s.norm_ratio() {
        Ok(1.0) => Verdict::Pass,
        Ok(x) => Verdict::Fail(format!("dim {}, scale {scale:e}: ratio {x:?}", s.len())),
        Err(e) => Verdict::Fail(format!("dim {}, scale {scale:e}: {e}", s.len())),
    }
}

fn uncontrolled_mutation(r: &mut ChaCha8Rng) -> Verdict {
    let mut s = {
        let scale = log_uniform(r, -3.0, 3.0);
        random_store(r, 1000, scale, true)
    };
    let before = s.controlled_norm();
    let mask = s.controlled_mask();
    let big = log_uniform(r, -10.0, 10.0);
    for (x, c) in s.theta_mut().iter_mut().zip(mask) {
        if !c {
            *x = big * gaussian(r);
        }
    }
    let after = s.controlled_norm();
    if after.to_bits() == before.to_bits() {
        Verdict::Pass
    } else {
        Verdict::Fail(format!("dim {}: {before:?} became {after:?}", s.len()))
    }
}

// ---- schedules

fn eta_monotone(r: &mut ChaCha8Rng) -> Verdict {
    let horizon = r.random_range(1..=20_000u64);
    let spec = random_cosine(r, horizon);
    let mut ts: Vec<u64> = (0..64)
        .map(|_| r.random_range(spec.warmup_steps..=horizon))
        .collect();
    ts.extend([spec.warmup_steps, horizon]);
    ts.sort_unstable();
    let mut prev = f64::INFINITY;
    for t in ts {
        let eta = match spec.eval(t, horizon) {
            Ok(e) => e,
            Err(e) => return Verdict::Fail(format!("{spec:?}, t = {t}: {e}")),
        };
        if !eta.is_finite() {
            return non_finite("eta");
        }
        if eta > prev || eta <= 0.0 || eta > 1.0 {
            return Verdict::Fail(format!(
                "{spec:?}, T = {horizon}: η({t}) = {eta:?} after {prev:?}"
            ));
        }
        prev = eta;
    }
    Verdict::Pass
}

fn rt_exact_at_nodes(r: &mut ChaCha8Rng) -> Verdict {
    let horizon = r.random_range(1..=100_000u64);
    let p = random_piecewise(r, 0.0, 5.0, horizon);
    for &(t, v) in p.points() {
        if p.eval(t).to_bits() != v.to_bits() {
            return Verdict::Fail(format!("{p}: value at t = {t} is {:?}", p.eval(t)));
        }
    }
    let past = p.points().last().expect("non-empty").0 + r.random_range(1..=1_000_000);
    if p.eval(past).to_bits() != p.last_value().to_bits() {
        return Verdict::Fail(format!("{p}: not held constant at t = {past}"));
    }
    Verdict::Pass
}

fn schedule_purity(r: &mut ChaCha8Rng) -> Verdict {
    let horizon = r.random_range(1..=10_000u64);
    let s = random_schedule(r, horizon, (0.0, 3.0), 0.2);
    let t = r.random_range(0..=horizon);
    let once = (s.eta(t), s.rt(t), s.kt(t));
    let twice = (s.eta(t), s.rt(t), s.kt(t));
    let (Ok(e1), Ok(e2)) = (&once.0, &twice.0) else {
        return Verdict::Fail(format!("η({t}) failed within the horizon"));
    };
    let same = e1.to_bits() == e2.to_bits()
        && once.1.to_bits() == twice.1.to_bits()
        && once.2.to_bits() == twice.2.to_bits();
    if !all_finite(&[*e1, once.1, once.2]) {
        non_finite("schedule evaluation")
    } else if same {
        Verdict::Pass
    } else {
        Verdict::Fail(format!("t = {t}: {once:?} vs {twice:?}"))
    }
}

fn text_round_trip(r: &mut ChaCha8Rng) -> Verdict {
    let horizon = r.random_range(1..=100_000u64);
    let s = random_schedule(r, horizon, (0.0, 3.0), 0.2);
    let text = s.to_string();
    match ScheduleSpec::parse(&text) {
        Ok(back) if back == s => Verdict::Pass,
        Ok(back) => Verdict::Fail(format!("{text:?} parsed as {back:?}")),
        Err(e) => Verdict::Fail(format!("{text:?}: {e}")),
    }
}

// ---- optim: norm control

/// Store whose current controlled norm differs from its initial one.
fn drifted_store(r: &mut ChaCha8Rng, need_uncontrolled: bool) -> ParamStore {
    let scale = log_uniform(r, -3.0, 2.0);
    let mut s = random_store(r, 1000, scale, need_uncontrolled);
    perturb(r, &mut s, 0.1, 5.0);
    s
}

fn convex_combination(r: &mut ChaCha8Rng) -> Verdict {
    let mut s = drifted_store(r, false);
    let (k, rt, mode) = (r.random_range(0.0..=1.0), random_r(r), random_mode(r));
    let n = s.controlled_norm();
    let target = mode.target(rt, s.initial_norm());
    optim::regularize_norm_control(&mut s, rt, k, mode);
    let post = s.controlled_norm();
    if !post.is_finite() || !all_finite(s.theta()) {
        return non_finite("regularize_norm_control");
    }
    let expect = (1.0 - k) * n + k * target;
    if (post - expect).abs() <= 1e-10 * target.max(1.0) {
        Verdict::Pass
    } else {
        Verdict::Fail(format!(
            "dim {}, n = {n:e}, target = {target:e}, k = {k:?}: {post:e} vs {expect:e}",
            s.len()
        ))
    }
}

fn projection_exactness(r: &mut ChaCha8Rng) -> Verdict {
    let mut s = drifted_store(r, false);
    let (rt, mode) = (random_r(r), random_mode(r));
    let target = mode.target(rt, s.initial_norm());
    optim::regularize_norm_control(&mut s, rt, 1.0, mode);
    let post = s.controlled_norm();
    if !post.is_finite() {
        return non_finite("regularize_norm_control");
    }
    if (post - target).abs() <= 8.0 * EPS * target {
        Verdict::Pass
    } else {
        Verdict::Fail(format!(
            "dim {}, target {target:e}: norm {post:e}, off by {:.2} eps",
            s.len(),
            (post - target).abs() / (EPS * target)
        ))
    }
}

fn fixed_point(r: &mut ChaCha8Rng) -> Verdict {
    let scale = log_uniform(r, -3.0, 3.0);
    let mut s = random_store(r, 1000, scale, false);
    let k = r.random_range(0.0..=1.0);
    // Untouched since construction: the norm equals initial_norm exactly.
    let (rt, mode) = if r.random_bool(0.5) {
        (1.0, TargetNormMode::RelativeToInit)
    } else {
        (s.controlled_norm(), TargetNormMode::Absolute)
    };
    let before = s.theta().to_vec();
    optim::regularize_norm_control(&mut s, rt, k, mode);
    for (i, (&a, &b)) in before.iter().zip(s.theta()).enumerate() {
        if !b.is_finite() {
            return non_finite("regularize_norm_control");
        }
        if (a - b).abs() > 4.0 * EPS * a.abs() {
            return Verdict::Fail(format!("k = {k:?}: element {i} moved from {a:e} to {b:e}"));
        }
    }
    Verdict::Pass
}

fn direction_preservation(r: &mut ChaCha8Rng) -> Verdict {
    let mut s = drifted_store(r, false);
    let k = if r.random_bool(0.2) {
        1.0
    } else {
        r.random_range(0.0..1.0)
    };
    let (rt, mode) = (random_r(r), random_mode(r));
    let before = s.theta().to_vec();
    optim::regularize_norm_control(&mut s, rt, k, mode);
    for (i, (&a, &b)) in before.iter().zip(s.theta()).enumerate() {
        if !b.is_finite() {
            return non_finite("regularize_norm_control");
        }
        let kept = if a == 0.0 {
            b == 0.0
        } else {
            b != 0.0 && a.signum() == b.signum()
        };
        if !kept {
            return Verdict::Fail(format!(
                "k = {k:?}, r = {rt:?}: element {i} went {a:e} → {b:e}"
            ));
        }
    }
    Verdict::Pass
}

fn bias_correction_identity(r: &mut ChaCha8Rng) -> Verdict {
    let dim = r.random_range(1..=100);
    let g: Vec<f64> = (0..dim)
        .map(|_| {
            if r.random_bool(0.05) {
                0.0
            } else {
                log_uniform(r, -100.0, 100.0) * gaussian(r).signum()
            }
        })
        .collect();
    let cfg = OptimizerConfig {
        beta1: r.random_range(0.0..0.999),
        beta2: r.random_range(0.0..0.9999),
        ..OptimizerConfig::default()
    };
    let mut state = OptimizerState::new(dim);
    state.advance();
    let (m, v) = optim::adam_moment_update(&mut state, &g, &cfg).expect("shapes agree");
    for i in 0..dim {
        if m[i].to_bits() != g[i].to_bits() || v[i].to_bits() != (g[i] * g[i]).to_bits() {
            return Verdict::Fail(format!(
                "β = ({:?}, {:?}), g = {:e}: m̂ = {:e}, v̂ = {:e}",
                cfg.beta1, cfg.beta2, g[i], m[i], v[i]
            ));
        }
    }
    Verdict::Pass
}

fn uncontrolled_invariance(r: &mut ChaCha8Rng) -> Verdict {
    let mut s = drifted_store(r, true);
    let mask = s.controlled_mask();
    let before = s.theta().to_vec();
    match r.random_range(0..3) {
        0 => optim::regularize_decay(&mut s, r.random_range(0.0..=1.0)),
        1 => {
            let (rt, k, mode) = (random_r(r), r.random_range(0.0..=1.0), random_mode(r));
            optim::regularize_norm_control(&mut s, rt, k, mode);
        }
        _ => {
            let zeros = vec![0.0; s.len()];
            let (alpha, lambda) = (r.random_range(0.0..1.0), r.random_range(0.0..=1.0));
            optim::sgd_step_coupled_decay(&mut s, &zeros, alpha, lambda).expect("shapes agree");
        }
    }
    for (i, ((&a, &b), c)) in before.iter().zip(s.theta()).zip(mask).enumerate() {
        if !c && a.to_bits() != b.to_bits() {
            return Verdict::Fail(format!("uncontrolled element {i} changed {a:e} → {b:e}"));
        }
    }
    Verdict::Pass
}

// ---- optim: special cases and oracle equivalence

fn gradients(r: &mut ChaCha8Rng, steps: usize, dim: usize) -> Vec<Vec<f64>> {
    let scale = log_uniform(r, -3.0, 1.0);
    (0..steps)
        .map(|_| (0..dim).map(|_| scale * gaussian(r)).collect())
        .collect()
}

/// Trajectory of `variant` against norm control driven with the equivalent r_t = 0
/// and k_t = `rate(η)` through the explicit-regularization entry point.
fn special_case(
    r: &mut ChaCha8Rng,
    variant: Variant,
    rate: fn(f64, &OptimizerConfig) -> f64,
) -> Verdict {
    let mut a = {
        let scale = log_uniform(r, -2.0, 2.0);
        random_store(r, 64, scale, false)
    };
    let mut b = a.clone();
    let cfg = random_cfg(r, variant);
    let steps = r.random_range(1..=20usize);
    let schedule = random_schedule(r, steps as u64, (0.0, 3.0), 0.0);
    let (mut sa, mut sb) = (OptimizerState::new(a.len()), OptimizerState::new(a.len()));
    for (t, g) in gradients(r, steps, a.len()).iter().enumerate() {
        let ra = optim::step(&mut a, &mut sa, g, &schedule, &cfg).expect("valid step");
        let reg = Regularization::NormControl {
            r_t: 0.0,
            k_t: rate(ra.eta, &cfg),
            mode: schedule.target_mode,
        };
        optim::adam_step(&mut b, &mut sb, g, ra.eta, reg, &cfg).expect("valid step");
        if !all_finite(a.theta()) || !all_finite(b.theta()) {
            return non_finite("step");
        }
        let d = elementwise_rel_diff(a.theta(), b.theta());
        if d > 1e-12 {
            return Verdict::Fail(format!(
                "λ = {:?}, step {}: rel diff {d:e}",
                cfg.lambda,
                t + 1
            ));
        }
    }
    Verdict::Pass
}

fn special_case_coupled_lr(r: &mut ChaCha8Rng) -> Verdict {
    special_case(r, Variant::DecayCoupledLR, |eta, c| {
        eta * c.alpha * c.lambda
    })
}

fn special_case_decoupled(r: &mut ChaCha8Rng) -> Verdict {
    special_case(r, Variant::DecayDecoupled, |eta, c| eta * c.lambda)
}

/// Production `step` against `oracle_step` for a few steps, dim ≤ 16.
///
/// Parameter scales stay within a few decades of the step size, and r_t
/// stays ≥ 0.1, so k_t·(1 − target/n) never approaches 1 — there the literal
/// form θ − cθ cancels and loses digits the production form keeps.
fn oracle_case(r: &mut ChaCha8Rng, variant: Variant) -> Verdict {
    let mut store = {
        let scale = log_uniform(r, -1.0, 2.0);
        random_store(r, 16, scale, false)
    };
    let mut o = OracleState::from_store(&store);
    let mut cfg = random_cfg(r, variant);
    if variant == Variant::CoupledSGD {
        cfg.lambda *= 0.5;
    }
    let steps = r.random_range(1..=8usize);
    let schedule = random_schedule(r, steps as u64, (0.1, 3.0), 0.2);
    let mut state = OptimizerState::new(store.len());
    for g in gradients(r, steps, store.len()) {
        let rep = match optim::step(&mut store, &mut state, &g, &schedule, &cfg) {
            Ok(rep) => rep,
            Err(e) => return Verdict::Fail(format!("production step failed: {e}")),
        };
        let t = o.t + 1;
        oracle_step(
            &mut o,
            &g,
            rep.eta,
            schedule.rt(t),
            schedule.kt(t),
            schedule.target_mode,
            &cfg,
        );
        if !all_finite(store.theta()) || !all_finite(&o.theta) {
            return non_finite("step");
        }
        let d = normwise_rel_diff(store.theta(), &o.theta);
        if d > ORACLE_REL_TOL {
            return Verdict::Fail(format!(
                "{variant}, dim {}, step {t}, schedule [{}]: rel diff {d:e}",
                store.len(),
                schedule.to_string().replace('\n', "; ")
            ));
        }
    }
    Verdict::Pass
}

fn oracle_coupled_lr(r: &mut ChaCha8Rng) -> Verdict {
    oracle_case(r, Variant::DecayCoupledLR)
}

fn oracle_decoupled(r: &mut ChaCha8Rng) -> Verdict {
    oracle_case(r, Variant::DecayDecoupled)
}

fn oracle_norm_control(r: &mut ChaCha8Rng) -> Verdict {
    oracle_case(r, Variant::NormControl)
}

fn oracle_coupled_sgd(r: &mut ChaCha8Rng) -> Verdict {
    oracle_case(r, Variant::CoupledSGD)
}

fn oracle_none(r: &mut ChaCha8Rng) -> Verdict {
    oracle_case(r, Variant::None)
}

// ---- degenerate and extreme inputs

/// Runs every variant for a few steps from `store` and checks that
/// parameters, reports and the oracle all stay finite.
fn run_all_variants(r: &mut ChaCha8Rng, store: &ParamStore, g_scale: f64) -> Verdict {
    for variant in Variant::ALL {
        let mut s = store.clone();
        let mut o = OracleState::from_store(&s);
        let mut cfg = random_cfg(r, variant);
        if variant == Variant::CoupledSGD {
            cfg.lambda *= 0.5;
        }
        let steps = 3;
        let schedule = random_schedule(r, steps, (0.0, 3.0), 0.2);
        let mut state = OptimizerState::new(s.len());
        for g in gradients(r, steps as usize, s.len()) {
            let g: Vec<f64> = g.iter().map(|x| x * g_scale).collect();
            let rep = match optim::step(&mut s, &mut state, &g, &schedule, &cfg) {
                Ok(rep) => rep,
                Err(e) => return Verdict::Fail(format!("{variant}: {e}")),
            };
            let t = o.t + 1;
            oracle_step(
                &mut o,
                &g,
                rep.eta,
                schedule.rt(t),
                schedule.kt(t),
                schedule.target_mode,
                &cfg,
            );
            let report = [
                rep.eta,
                rep.r_t,
                rep.k_t,
                rep.target_norm,
                rep.pre_norm,
                rep.post_norm,
            ];
            if !all_finite(s.theta()) || !all_finite(&report) || !all_finite(&o.theta) {
                return Verdict::NonFinite(format!(
                    "{variant}, dim {}, g scale {g_scale:e}, step {t}",
                    s.len()
                ));
            }
        }
    }
    Verdict::Pass
}

fn near_zero_theta(r: &mut ChaCha8Rng) -> Verdict {
    let dim = r.random_range(1..=64);
    let theta: Vec<f64> = (0..dim)
        .map(|_| {
            if r.random_bool(0.1) {
                0.0
            } else {
                log_uniform(r, -320.0, -20.0) * gaussian(r).signum()
            }
        })
        .collect();
    let groups = random_groups(r, dim, false);
    let store = ParamStore::new(theta, groups).expect("valid layout");
    let mut s = store.clone();
    let (rt, k, mode) = (random_r(r), r.random_range(0.0..=1.0), random_mode(r));
    optim::regularize_norm_control(&mut s, rt, k, mode);
    if !all_finite(s.theta()) || !s.controlled_norm().is_finite() {
        return Verdict::NonFinite(format!(
            "norm control from near-zero θ, r = {rt:?}, k = {k:?}"
        ));
    }
    let g_scale = log_uniform(r, -20.0, 0.0);
    run_all_variants(r, &store, g_scale)
}

fn extreme_ranges(r: &mut ChaCha8Rng) -> Verdict {
    let scale = log_uniform(r, -140.0, 140.0);
    let store = random_store(r, 256, scale, false);
    if !store.initial_norm().is_finite() {
        return non_finite("initial norm");
    }
    let g_scale = log_uniform(r, -140.0, 140.0);
    run_all_variants(r, &store, g_scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::RunConfig;
    use crate::tasks::TaskKind;

    #[test]
    fn two_pass_norm_masks_and_scales() {
        assert_eq!(two_pass_norm(&[3.0, 4.0, 100.0], &[true, true, false]), 5.0);
        assert_eq!(two_pass_norm(&[0.0, 0.0], &[true, true]), 0.0);
        let tiny = two_pass_norm(&[3e-200, 4e-200], &[true, true]);
        assert!((tiny - 5e-200).abs() <= 2.0 * EPS * 5e-200);
    }

    #[test]
    fn oracle_matches_hand_step() {
        // θ = [0], g = [1], t = 1: m̂ = 1, v̂ = 1 → θ = −α/(1 + ε).
        let mut o = OracleState::new(vec![0.0], vec![true]).unwrap();
        let cfg = OptimizerConfig::default();
        oracle_step(
            &mut o,
            &[1.0],
            1.0,
            0.0,
            0.0,
            TargetNormMode::RelativeToInit,
            &cfg,
        );
        assert!((o.theta[0] + 1e-3 / (1.0 + 1e-8)).abs() < 1e-18);
    }

    #[test]
    fn oracle_norm_control_example() {
        // After a zero-gradient Adam step θ stays [3, 4]; r = 2, k = 0.5 with
        // ‖θ₀‖ = 5 scales by 1.5.
        let mut o = OracleState::new(vec![3.0, 4.0], vec![true, true]).unwrap();
        let cfg = OptimizerConfig::with_variant(Variant::NormControl, 0.0);
        oracle_step(
            &mut o,
            &[0.0, 0.0],
            1.0,
            2.0,
            0.5,
            TargetNormMode::RelativeToInit,
            &cfg,
        );
        assert_eq!(o.theta, vec![4.5, 6.0]);
    }

    #[test]
    fn suite_passes_small() {
        let report = property_suite(7, 60);
        assert!(report.passed(), "{report}");
        assert_eq!(report.outcomes.len(), PROPERTIES.len());
        assert!(report.get("oracle.norm_control").is_some());
    }

    #[test]
    fn suite_is_reproducible() {
        assert_eq!(property_suite(3, 10), property_suite(3, 10));
    }

    #[test]
    fn long_quadratic_norm_control_tracks_oracle() {
        let mut cfg = RunConfig::new(TaskKind::Quadratic, 1000);
        cfg.optimizer = OptimizerConfig::with_variant(Variant::NormControl, 0.0);
        cfg.schedule.rt = PiecewiseLinear::ramp(1.0, 1.5, 200);
        let task = Task::build(&cfg.task, cfg.seed).unwrap();
        let mut store = task.init_store(cfg.seed).unwrap();
        let mut state = OptimizerState::new(store.len());
        let mut o = OracleState::from_store(&store);
        let empty = task.train_pool().clone();
        let s = &cfg.schedule;
        for t in 1..=1000 {
            let (_, g) = task.loss_and_grad(store.theta(), &empty).unwrap();
            let (_, go) = task.loss_and_grad(&o.theta, &empty).unwrap();
            optim::step(&mut store, &mut state, &g, s, &cfg.optimizer).unwrap();
            oracle_step(
                &mut o,
                &go,
                s.eta(t).unwrap(),
                s.rt(t),
                s.kt(t),
                s.target_mode,
                &cfg.optimizer,
            );
        }
        let d = elementwise_rel_diff(store.theta(), &o.theta);
        assert!(d <= 1e-11, "drift {d:e}");
    }

    #[test]
    fn zero_gradient_decay_is_geometric() {
        let theta0 = vec![1.5, -2.0, 0.25, 7.0];
        let c = 0.03;
        let steps = 200;
        let mut spec = ScheduleSpec::with_horizon(steps);
        spec.rt = PiecewiseLinear::constant(0.0);
        spec.kt = PiecewiseLinear::constant(c);
        let cfg = OptimizerConfig::with_variant(Variant::NormControl, 0.0);
        let mut store = ParamStore::single(theta0.clone());
        let mut state = OptimizerState::new(4);
        let mut o = OracleState::from_store(&store);
        let zeros = [0.0; 4];
        for t in 1..=steps {
            optim::step(&mut store, &mut state, &zeros, &spec, &cfg).unwrap();
            oracle_step(
                &mut o,
                &zeros,
                spec.eta(t).unwrap(),
                0.0,
                c,
                spec.target_mode,
                &cfg,
            );
        }
        let closed: Vec<f64> = theta0
            .iter()
            .map(|x| (1.0 - c).powi(steps as i32) * x)
            .collect();
        assert!(elementwise_rel_diff(store.theta(), &closed) <= 1e-12);
        assert!(elementwise_rel_diff(&o.theta, &closed) <= 1e-12);
    }

    #[test]
    fn oracle_run_tracks_ramp() {
        let mut cfg = RunConfig::new(TaskKind::Logistic, 400);
        cfg.optimizer = OptimizerConfig::with_variant(Variant::NormControl, 0.0);
        cfg.schedule.rt = PiecewiseLinear::ramp(1.0, 1.5, 50);
        cfg.schedule.kt = PiecewiseLinear::constant(0.2);
        let rows = oracle_run(&cfg).unwrap();
        assert_eq!(rows.len(), 400);
        let last = rows.last().unwrap();
        assert!((last.norm_ratio - 1.5).abs() < 0.05 * 1.5, "{last:?}");
    }
}
