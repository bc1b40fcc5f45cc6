//! Step-indexed schedules: the learning-rate multiplier η_t, the target norm
//! ratio r_t and the norm update rate k_t.

use std::f64::consts::PI;
use std::fmt;

use crate::error::{Error, Result};
use crate::kvtext::{self, Entry};

/// How r_t is turned into a target norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TargetNormMode {
    /// target = r_t · ‖θ₀‖
    #[default]
    RelativeToInit,
    /// target = r_t, in raw parameter units
    Absolute,
}

impl TargetNormMode {
    pub fn target(self, r_t: f64, initial_norm: f64) -> f64 {
        match self {
            TargetNormMode::RelativeToInit => r_t * initial_norm,
            TargetNormMode::Absolute => r_t,
        }
    }
}

/// Half-cosine annealing with optional linear warmup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineSpec {
    pub eta_max: f64,
    pub eta_min: f64,
    pub warmup_steps: u64,
}

impl Default for CosineSpec {
    fn default() -> Self {
        Self {
            eta_max: 1.0,
            eta_min: 0.1,
            warmup_steps: 0,
        }
    }
}

impl CosineSpec {
    /// A flat multiplier, useful when η_t should play no role.
    pub fn constant(eta: f64) -> Self {
        Self {
            eta_max: eta,
            eta_min: eta,
            warmup_steps: 0,
        }
    }

    pub fn validate(&self, horizon: u64) -> Result<()> {
        if !(self.eta_min > 0.0 && self.eta_min <= self.eta_max && self.eta_max <= 1.0) {
            return Err(Error::validation(
                "eta",
                format!(
                    "need 0 < min <= max <= 1, got max={} min={}",
                    self.eta_max, self.eta_min
                ),
            ));
        }
        if self.warmup_steps >= horizon {
            return Err(Error::validation(
                "eta",
                format!(
                    "warmup {} must be shorter than the horizon {horizon}",
                    self.warmup_steps
                ),
            ));
        }
        Ok(())
    }

    pub fn eval(&self, t: u64, horizon: u64) -> Result<f64> {
        if t > horizon {
            return Err(Error::ScheduleExhausted { t, horizon });
        }
        let w = self.warmup_steps;
        if t < w {
            return Ok(self.eta_max * (t + 1) as f64 / w as f64);
        }
        if t == w {
            return Ok(self.eta_max);
        }
        let progress = (t - w) as f64 / (horizon - w) as f64;
        Ok(self.eta_min + 0.5 * (self.eta_max - self.eta_min) * (1.0 + (PI * progress).cos()))
    }
}

/// Piecewise-linear function of the step, held constant after the last
/// breakpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    points: Vec<(u64, f64)>,
}

impl PiecewiseLinear {
    /// Breakpoints must start at t = 0 and be strictly increasing in t.
    pub fn new(points: Vec<(u64, f64)>) -> Result<Self> {
        match points.first() {
            None => return Err(Error::validation("breakpoints", "at least one is required")),
            Some(&(t0, _)) if t0 != 0 => {
                return Err(Error::validation(
                    "breakpoints",
                    format!("first breakpoint must be at t=0, got t={t0}"),
                ))
            }
            _ => {}
        }
        if let Some(w) = points.windows(2).find(|w| w[0].0 >= w[1].0) {
            return Err(Error::validation(
                "breakpoints",
                format!("t must be strictly increasing ({} then {})", w[0].0, w[1].0),
            ));
        }
        if let Some(&(t, v)) = points.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::validation(
                "breakpoints",
                format!("value {v} at t={t}"),
            ));
        }
        Ok(Self { points })
    }

    pub fn constant(value: f64) -> Self {
        Self {
            points: vec![(0, value)],
        }
    }

    /// Linear ramp from `start` at t = 0 to `end` at `ramp_steps`, then flat.
    pub fn ramp(start: f64, end: f64, ramp_steps: u64) -> Self {
        if ramp_steps == 0 || start == end {
            Self::constant(end)
        } else {
            Self {
                points: vec![(0, start), (ramp_steps, end)],
            }
        }
    }

    pub fn points(&self) -> &[(u64, f64)] {
        &self.points
    }

    pub fn is_constant(&self) -> bool {
        self.points.len() == 1
    }

    pub fn last_value(&self) -> f64 {
        self.points[self.points.len() - 1].1
    }

    pub fn eval(&self, t: u64) -> f64 {
        let idx = self.points.partition_point(|&(ti, _)| ti <= t);
        // idx >= 1 because points[0].0 == 0 <= t
        let (t0, v0) = self.points[idx - 1];
        if t0 == t || idx == self.points.len() {
            return v0;
        }
        let (t1, v1) = self.points[idx];
        v0 + (v1 - v0) * ((t - t0) as f64 / (t1 - t0) as f64)
    }

    fn check_range(&self, field: &str, lo: f64, hi: f64, horizon: u64) -> Result<()> {
        for &(t, v) in &self.points {
            if !(v >= lo && v <= hi) {
                return Err(Error::validation(
                    field,
                    format!("value {v} at t={t} outside [{lo}, {hi}]"),
                ));
            }
        }
        let (t_last, _) = self.points[self.points.len() - 1];
        if t_last > horizon {
            return Err(Error::validation(
                field,
                format!("last breakpoint t={t_last} is past the horizon {horizon}"),
            ));
        }
        Ok(())
    }
}

impl fmt::Display for PiecewiseLinear {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_constant() {
            return write!(f, "const({:?})", self.points[0].1);
        }
        f.write_str("linear(")?;
        for (i, (t, v)) in self.points.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{t}:{v:?}")?;
        }
        f.write_str(")")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleSpec {
    pub horizon: u64,
    pub eta: CosineSpec,
    pub rt: PiecewiseLinear,
    pub kt: PiecewiseLinear,
    pub target_mode: TargetNormMode,
}

impl ScheduleSpec {
    /// Cosine 1.0 → 0.1, r_t = 1, k_t = 0.01, relative targets.
    pub fn with_horizon(horizon: u64) -> Self {
        Self {
            horizon,
            eta: CosineSpec::default(),
            rt: PiecewiseLinear::constant(1.0),
            kt: PiecewiseLinear::constant(DEFAULT_KT),
            target_mode: TargetNormMode::RelativeToInit,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::validation("T", "horizon must be positive"));
        }
        self.eta.validate(self.horizon)?;
        self.rt
            .check_range("rt", 0.0, f64::INFINITY, self.horizon)?;
        self.kt.check_range("kt", 0.0, 1.0, self.horizon)?;
        Ok(())
    }

    pub fn eta(&self, t: u64) -> Result<f64> {
        self.eta.eval(t, self.horizon)
    }

    pub fn rt(&self, t: u64) -> f64 {
        self.rt.eval(t)
    }

    pub fn kt(&self, t: u64) -> f64 {
        self.kt.eval(t)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut b = ScheduleBuilder::default();
        for e in kvtext::entries(text)? {
            if !b.apply(&e)? {
                return Err(Error::parse(e.line, format!("unknown key `{}`", e.key)));
            }
        }
        b.build()
    }
}

pub const DEFAULT_KT: f64 = 1e-2;

impl fmt::Display for ScheduleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "T = {}", self.horizon)?;
        write!(
            f,
            "eta = cosine({:?}, {:?}",
            self.eta.eta_max, self.eta.eta_min
        )?;
        if self.eta.warmup_steps > 0 {
            write!(f, ", warmup={}", self.eta.warmup_steps)?;
        }
        writeln!(f, ")")?;
        writeln!(f, "rt = {}", self.rt)?;
        writeln!(f, "kt = {}", self.kt)?;
        let mode = match self.target_mode {
            TargetNormMode::RelativeToInit => "relative",
            TargetNormMode::Absolute => "absolute",
        };
        writeln!(f, "target_mode = {mode}")
    }
}

/// Accumulates schedule keys; run configs feed it the lines they do not
/// recognise themselves.
#[derive(Debug, Clone, Default)]
pub struct ScheduleBuilder {
    pub horizon: Option<u64>,
    pub eta: Option<CosineSpec>,
    pub rt: Option<PiecewiseLinear>,
    pub kt: Option<PiecewiseLinear>,
    pub target_mode: Option<TargetNormMode>,
}

impl ScheduleBuilder {
    /// Returns `Ok(false)` when the key is not a schedule key.
    pub fn apply(&mut self, e: &Entry) -> Result<bool> {
        match e.key.as_str() {
            "T" => self.horizon = Some(kvtext::integer(e.line, &e.value)?),
            "eta" => self.eta = Some(parse_cosine(e.line, &e.value)?),
            "rt" => self.rt = Some(parse_piecewise(e.line, &e.value)?),
            "kt" => self.kt = Some(parse_piecewise(e.line, &e.value)?),
            "target_mode" => {
                self.target_mode = Some(match e.value.as_str() {
                    "relative" => TargetNormMode::RelativeToInit,
                    "absolute" => TargetNormMode::Absolute,
                    other => {
                        return Err(Error::parse(
                            e.line,
                            format!("target_mode must be relative|absolute, got `{other}`"),
                        ))
                    }
                })
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn build(self) -> Result<ScheduleSpec> {
        let horizon = self
            .horizon
            .ok_or_else(|| Error::validation("T", "missing horizon `T = <steps>`"))?;
        let mut spec = ScheduleSpec::with_horizon(horizon);
        if let Some(eta) = self.eta {
            spec.eta = eta;
        }
        if let Some(rt) = self.rt {
            spec.rt = rt;
        }
        if let Some(kt) = self.kt {
            spec.kt = kt;
        }
        if let Some(mode) = self.target_mode {
            spec.target_mode = mode;
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn parse_cosine(line: usize, value: &str) -> Result<CosineSpec> {
    let (name, args) = kvtext::call(line, value)?;
    if name != "cosine" {
        return Err(Error::parse(
            line,
            format!("eta supports only cosine(...), got `{name}`"),
        ));
    }
    let mut spec = CosineSpec::default();
    let mut positional = 0;
    for a in &args {
        if let Some(w) = a.strip_prefix("warmup") {
            let w = w
                .trim_start()
                .strip_prefix('=')
                .ok_or_else(|| Error::parse(line, format!("expected warmup=<int>, got `{a}`")))?;
            spec.warmup_steps = kvtext::integer(line, w)?;
            continue;
        }
        let v = kvtext::real(line, a)?;
        match positional {
            0 => spec.eta_max = v,
            1 => spec.eta_min = v,
            _ => {
                return Err(Error::parse(
                    line,
                    "cosine takes (max, min[, warmup=<int>])",
                ))
            }
        }
        positional += 1;
    }
    if positional != 2 {
        return Err(Error::parse(
            line,
            "cosine takes (max, min[, warmup=<int>])",
        ));
    }
    Ok(spec)
}

fn parse_piecewise(line: usize, value: &str) -> Result<PiecewiseLinear> {
    let (name, args) = kvtext::call(line, value)?;
    let points = match name.as_str() {
        "const" => {
            if args.len() != 1 {
                return Err(Error::parse(line, "const takes exactly one value"));
            }
            vec![(0, kvtext::real(line, &args[0])?)]
        }
        "linear" => args
            .iter()
            .map(|a| {
                let (t, v) = a
                    .split_once(':')
                    .ok_or_else(|| Error::parse(line, format!("expected t:value, got `{a}`")))?;
                Ok((kvtext::integer(line, t)?, kvtext::real(line, v)?))
            })
            .collect::<Result<Vec<_>>>()?,
        other => {
            return Err(Error::parse(
                line,
                format!("expected const(...) or linear(...), got `{other}`"),
            ))
        }
    };
    PiecewiseLinear::new(points).map_err(|e| Error::parse(line, e.to_string()))
}
