use std::fmt;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::kvtext::{self, Entry};
use crate::optim::{OptimizerConfig, Variant};
use crate::schedules::{ScheduleBuilder, ScheduleSpec};
use crate::tasks::{TaskKind, TaskSpec};

/// Everything that determines one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: TaskSpec,
    pub optimizer: OptimizerConfig,
    pub schedule: ScheduleSpec,
    pub batch_size: usize,
    pub seed: u64,
    pub eval_every: u64,
    /// Length of the r_t ramp built by calibration; defaults to 5% of T.
    pub ramp_steps: Option<u64>,
    /// Where `run` writes the trace, if anywhere.
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Defaults for `task` with `steps` iterations.
    pub fn new(task: TaskKind, steps: u64) -> Self {
        Self {
            task: TaskSpec::new(task),
            optimizer: OptimizerConfig::default(),
            schedule: ScheduleSpec::with_horizon(steps),
            batch_size: 32,
            seed: 0,
            eval_every: (steps / 100).max(1),
            ramp_steps: None,
            out: None,
        }
    }

    pub fn steps(&self) -> u64 {
        self.schedule.horizon
    }

    pub fn calibration_ramp(&self) -> u64 {
        self.ramp_steps
            .unwrap_or(self.steps() / 20)
            .min(self.steps())
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.optimizer.validate()?;
        self.schedule.validate()?;
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size", "must be positive"));
        }
        if self.eval_every == 0 {
            return Err(Error::validation("eval_every", "must be positive"));
        }
        if let Some(r) = self.ramp_steps {
            if r > self.steps() {
                return Err(Error::validation("ramp_steps", "must not exceed T"));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let entries = kvtext::entries(text)?;
        Self::from_entries(&entries)
    }

    pub(crate) fn from_entries(entries: &[Entry]) -> Result<Self> {
        let mut sched = ScheduleBuilder::default();
        let mut task: Option<TaskKind> = None;
        let mut rest = Vec::new();
        for e in entries {
            if sched.apply(e)? {
                continue;
            }
            if e.key == "task" {
                task = Some(
                    e.value
                        .parse()
                        .map_err(|m: String| Error::parse(e.line, m))?,
                );
            } else {
                rest.push(e);
            }
        }
        let task = task.ok_or_else(|| Error::validation("task", "missing `task = <name>`"))?;
        let schedule = sched.build()?;
        let mut cfg = RunConfig::new(task, schedule.horizon);
        cfg.schedule = schedule;
        for e in rest {
            cfg.apply(e)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, e: &Entry) -> Result<()> {
        let (l, v) = (e.line, e.value.as_str());
        let usize_of = |s: &str| -> Result<usize> {
            usize::try_from(kvtext::integer(l, s)?)
                .map_err(|_| Error::parse(l, format!("`{s}` is too large")))
        };
        match e.key.as_str() {
            "dim" => self.task.dim = usize_of(v)?,
            "hidden" => self.task.hidden = usize_of(v)?,
            "control_biases" => self.task.control_biases = kvtext::boolean(l, v)?,
            "pool_size" => self.task.pool_size = usize_of(v)?,
            "val_size" => self.task.val_size = usize_of(v)?,
            "noise" => self.task.noise = kvtext::real(l, v)?,
            "batch_size" => self.batch_size = usize_of(v)?,
            "seed" => self.seed = kvtext::integer(l, v)?,
            "eval_every" => self.eval_every = kvtext::integer(l, v)?,
            "ramp_steps" => self.ramp_steps = Some(kvtext::integer(l, v)?),
            "variant" => {
                self.optimizer.variant = v.parse().map_err(|m: String| Error::parse(l, m))?
            }
            "lambda" => self.optimizer.lambda = kvtext::real(l, v)?,
            "alpha" => self.optimizer.alpha = kvtext::real(l, v)?,
            "beta1" => self.optimizer.beta1 = kvtext::real(l, v)?,
            "beta2" => self.optimizer.beta2 = kvtext::real(l, v)?,
            "epsilon" => self.optimizer.epsilon = kvtext::real(l, v)?,
            other => return Err(Error::parse(l, format!("unknown key `{other}`"))),
        }
        Ok(())
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = &self.task;
        let o = &self.optimizer;
        writeln!(f, "task = {}", t.kind.name())?;
        writeln!(f, "dim = {}", t.dim)?;
        writeln!(f, "hidden = {}", t.hidden)?;
        writeln!(f, "control_biases = {}", t.control_biases)?;
        writeln!(f, "pool_size = {}", t.pool_size)?;
        writeln!(f, "val_size = {}", t.val_size)?;
        writeln!(f, "noise = {:?}", t.noise)?;
        writeln!(f, "batch_size = {}", self.batch_size)?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "eval_every = {}", self.eval_every)?;
        if let Some(r) = self.ramp_steps {
            writeln!(f, "ramp_steps = {r}")?;
        }
        writeln!(f, "variant = {}", o.variant)?;
        writeln!(f, "lambda = {:?}", o.lambda)?;
        writeln!(f, "alpha = {:?}", o.alpha)?;
        writeln!(f, "beta1 = {:?}", o.beta1)?;
        writeln!(f, "beta2 = {:?}", o.beta2)?;
        writeln!(f, "epsilon = {:?}", o.epsilon)?;
        write!(f, "{}", self.schedule)
    }
}

/// Overrides applied on top of a reference config to get the norm-control
/// side of a comparison. r_t must stay unset: calibration provides it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CompareTemplate {
    entries: Vec<Entry>,
}

impl CompareTemplate {
    pub fn parse(text: &str) -> Result<Self> {
        let entries = kvtext::entries(text)?;
        for e in &entries {
            match e.key.as_str() {
                "rt" => {
                    return Err(Error::parse(
                        e.line,
                        "the template must leave `rt` unset; it is calibrated from run A",
                    ))
                }
                "variant" => {
                    let v: Variant = e
                        .value
                        .parse()
                        .map_err(|m: String| Error::parse(e.line, m))?;
                    if v != Variant::NormControl {
                        return Err(Error::parse(
                            e.line,
                            "template variant must be norm_control",
                        ));
                    }
                }
                "T" | "task" | "dim" | "hidden" | "pool_size" | "val_size" | "noise" | "seed"
                | "batch_size" => {
                    return Err(Error::parse(
                        e.line,
                        format!("`{}` is shared with run A and cannot be overridden", e.key),
                    ))
                }
                _ => {}
            }
        }
        Ok(Self { entries })
    }

    /// Config for run B: A's task, data, seed and horizon, norm control with
    /// k_t = 0.01 unless overridden, and r_t still to be filled in.
    pub fn resolve(&self, a: &RunConfig) -> Result<RunConfig> {
        let base = kvtext::entries(&a.to_string())?;
        let mut merged: Vec<Entry> = base
            .into_iter()
            .filter(|e| !matches!(e.key.as_str(), "variant" | "lambda" | "rt" | "kt"))
            .filter(|e| !self.entries.iter().any(|t| t.key == e.key))
            .collect();
        merged.extend(self.entries.iter().cloned());
        let mut b = RunConfig::from_entries(&merged)?;
        b.optimizer.variant = Variant::NormControl;
        if !self.entries.iter().any(|e| e.key == "lambda") {
            b.optimizer.lambda = 0.0;
        }
        Ok(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedules::PiecewiseLinear;

    const SAMPLE: &str = "\
# reference AdamW run
task = mlp
dim = 6
hidden = 10
batch_size = 16
seed = 42
eval_every = 50
variant = decay_coupled_lr
lambda = 0.1
T = 1000
eta = cosine(1.0, 0.1)
control_biases = true
";

    #[test]
    fn parse_sample() {
        let c = RunConfig::parse(SAMPLE).unwrap();
        assert_eq!(c.task.kind, TaskKind::Mlp);
        assert_eq!((c.task.dim, c.task.hidden), (6, 10));
        assert!(c.task.control_biases);
        assert_eq!(c.optimizer.variant, Variant::DecayCoupledLR);
        assert_eq!(c.optimizer.lambda, 0.1);
        assert_eq!(c.optimizer.alpha, 1e-3);
        assert_eq!(c.steps(), 1000);
        assert_eq!(c.calibration_ramp(), 50);
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::parse(SAMPLE).unwrap();
        c.schedule.rt = PiecewiseLinear::new(vec![(0, 1.0), (100, 2.5)]).unwrap();
        c.ramp_steps = Some(77);
        let back = RunConfig::parse(&c.to_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn errors_have_codes() {
        let bad_key = RunConfig::parse("task = mlp\nT = 10\nwidth = 3").unwrap_err();
        assert!(matches!(bad_key, Error::Parse { line: 3, .. }));
        assert_eq!(bad_key.exit_code(), 2);
        let no_task = RunConfig::parse("T = 10").unwrap_err();
        assert_eq!(no_task.exit_code(), 2);
        let bad_variant = RunConfig::parse("task = mlp\nT = 10\nvariant = lion").unwrap_err();
        assert!(matches!(bad_variant, Error::Parse { line: 3, .. }));
        let bad_beta = RunConfig::parse("task = mlp\nT = 10\nbeta1 = 1.0").unwrap_err();
        assert!(matches!(bad_beta, Error::Validation { .. }));
    }

    #[test]
    fn template_resolution() {
        let a = RunConfig::parse(SAMPLE).unwrap();
        let t = CompareTemplate::parse("kt = const(0.02)\nramp_steps = 80\n").unwrap();
        let b = t.resolve(&a).unwrap();
        assert_eq!(b.optimizer.variant, Variant::NormControl);
        assert_eq!(b.optimizer.lambda, 0.0);
        assert_eq!(b.schedule.kt, PiecewiseLinear::constant(0.02));
        assert_eq!(b.calibration_ramp(), 80);
        assert_eq!(b.task, a.task);
        assert_eq!(b.seed, a.seed);

        let default_kt = CompareTemplate::default().resolve(&a).unwrap();
        assert_eq!(default_kt.schedule.kt, PiecewiseLinear::constant(0.01));
    }

    #[test]
    fn template_rejects_rt_and_shared_keys() {
        assert!(CompareTemplate::parse("rt = const(2.0)").is_err());
        assert!(CompareTemplate::parse("variant = decay_decoupled").is_err());
        assert!(CompareTemplate::parse("seed = 3").is_err());
        assert!(CompareTemplate::parse("variant = norm_control").is_ok());
    }
}
