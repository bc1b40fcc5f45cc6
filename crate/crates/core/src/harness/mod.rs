//! Training loop, calibration protocol and run comparison.

mod config;
mod trace;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

pub use config::{CompareTemplate, RunConfig};
pub use trace::{RunTrace, TraceRow, TRACE_HEADER};

use crate::error::{Error, Result};
use crate::optim::{self, OptimizerState};
use crate::par;
use crate::schedules::{PiecewiseLinear, ScheduleSpec};
use crate::tasks::Task;

fn at_step(t: u64) -> impl FnOnce(Error) -> Error {
    move |e| Error::AtStep {
        step: t,
        source: Box::new(e),
    }
}

/// Runs exactly T optimizer steps and logs every `eval_every` steps and at
/// t = T. Writes the trace CSV when `config.out` is set.
pub fn run(config: &RunConfig) -> Result<RunTrace> {
    config.validate()?;
    let task = Task::build(&config.task, config.seed)?;
    let mut store = task.init_store(config.seed)?;
    let initial_norm = store.initial_norm();
    if initial_norm == 0.0 {
        return Err(Error::DegenerateInit);
    }
    let mut state = OptimizerState::new(store.len());
    let mut sampler = task.sampler(config.seed, config.batch_size);
    let initial_val_loss = task.val_loss(store.theta())?;
    let horizon = config.steps();
    let mut rows = Vec::new();
    let mut warned = false;

    for t in 1..=horizon {
        let batch = sampler.next_batch(task.train_pool());
        let (train_loss, g) = task
            .loss_and_grad(store.theta(), &batch)
            .map_err(at_step(t))?;
        if !train_loss.is_finite() {
            return Err(at_step(t)(Error::NonFinite {
                what: "training loss",
                index: 0,
            }));
        }
        let report = optim::step(
            &mut store,
            &mut state,
            &g,
            &config.schedule,
            &config.optimizer,
        )
        .map_err(at_step(t))?;
        if !report.post_norm.is_finite() {
            return Err(at_step(t)(Error::NonFinite {
                what: "parameter norm",
                index: 0,
            }));
        }
        if report.zero_norm && !warned {
            log::warn!("step {t}: controlled norm is zero, norm control skipped");
            warned = true;
        }
        if t % config.eval_every == 0 || t == horizon {
            let val_loss = task.val_loss(store.theta()).map_err(at_step(t))?;
            let grad_norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            rows.push(TraceRow {
                t,
                train_loss,
                val_loss,
                eta_t: report.eta,
                r_t: report.r_t,
                k_t: report.k_t,
                target_norm: report.target_norm,
                actual_norm: report.post_norm,
                norm_ratio: report.post_norm / initial_norm,
                grad_norm,
            });
        }
    }
    let trace = RunTrace {
        initial_norm,
        initial_val_loss,
        rows,
    };
    if let Some(path) = &config.out {
        let mut w = BufWriter::new(File::create(path)?);
        trace.write_csv(&mut w)?;
        w.flush()?;
    }
    Ok(trace)
}

/// Independent runs, possibly concurrently. Each run owns its output file.
pub fn run_many(configs: &[RunConfig]) -> Vec<Result<RunTrace>> {
    par::map_range(configs.len(), |i| run(&configs[i]))
}

/// r_t schedule ramping linearly from 1.0 at t = 0 to the reference run's
/// final norm ratio at `ramp_steps`, flat afterwards.
pub fn calibrate_rt_from_run(reference: &RunTrace, ramp_steps: u64) -> Result<PiecewiseLinear> {
    let rho = reference
        .final_ratio()
        .ok_or_else(|| Error::validation("reference_trace", "trace has no rows"))?;
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::validation(
            "reference_trace",
            format!("final norm ratio must be positive, got {rho}"),
        ));
    }
    Ok(PiecewiseLinear::ramp(1.0, rho, ramp_steps))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossRatioPoint {
    pub t: u64,
    pub val_loss_a: f64,
    pub val_loss_b: f64,
    /// val_loss_b / val_loss_a
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonSummary {
    pub final_ratio_a: f64,
    pub final_ratio_b: f64,
    pub ratio_gap: f64,
    pub final_val_loss_a: f64,
    pub final_val_loss_b: f64,
    pub calibrated_rt: Vec<(u64, f64)>,
}

#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub config_a: RunConfig,
    pub config_b: RunConfig,
    pub trace_a: RunTrace,
    pub trace_b: RunTrace,
    pub summary: ComparisonSummary,
    pub loss_ratio: Vec<LossRatioPoint>,
}

impl ComparisonReport {
    fn build(
        config_a: RunConfig,
        config_b: RunConfig,
        trace_a: RunTrace,
        trace_b: RunTrace,
    ) -> Result<Self> {
        let (fa, fb) = match (trace_a.last(), trace_b.last()) {
            (Some(a), Some(b)) => (*a, *b),
            _ => {
                return Err(Error::validation(
                    "trace",
                    "comparison needs non-empty traces",
                ))
            }
        };
        let loss_ratio = trace_a
            .rows
            .iter()
            .zip(&trace_b.rows)
            .filter(|(a, b)| a.t == b.t)
            .map(|(a, b)| LossRatioPoint {
                t: a.t,
                val_loss_a: a.val_loss,
                val_loss_b: b.val_loss,
                ratio: b.val_loss / a.val_loss,
            })
            .collect();
        let summary = ComparisonSummary {
            final_ratio_a: fa.norm_ratio,
            final_ratio_b: fb.norm_ratio,
            ratio_gap: (fa.norm_ratio - fb.norm_ratio).abs(),
            final_val_loss_a: fa.val_loss,
            final_val_loss_b: fb.val_loss,
            calibrated_rt: config_b.schedule.rt.points().to_vec(),
        };
        Ok(Self {
            config_a,
            config_b,
            trace_a,
            trace_b,
            summary,
            loss_ratio,
        })
    }

    /// Writes `trace_a.csv`, `trace_b.csv`, `loss_ratio.csv`,
    /// `config_b.txt` and `report.json` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.trace_a
            .write_csv(BufWriter::new(File::create(dir.join("trace_a.csv"))?))?;
        self.trace_b
            .write_csv(BufWriter::new(File::create(dir.join("trace_b.csv"))?))?;
        let mut w = csv::Writer::from_path(dir.join("loss_ratio.csv"))?;
        w.write_record(["t", "val_loss_a", "val_loss_b", "ratio"])?;
        for p in &self.loss_ratio {
            w.write_record([
                p.t.to_string(),
                trace::fmt_real(p.val_loss_a),
                trace::fmt_real(p.val_loss_b),
                trace::fmt_real(p.ratio),
            ])?;
        }
        w.flush()?;
        fs::write(dir.join("config_b.txt"), self.config_b.to_string())?;
        let f = BufWriter::new(File::create(dir.join("report.json"))?);
        serde_json::to_writer_pretty(f, &self.summary)?;
        Ok(())
    }
}

/// Runs the decay reference A, calibrates r_t from its final norm ratio and
/// runs the norm-controlled B built from `template`.
pub fn compare(config_a: &RunConfig, template: &CompareTemplate) -> Result<ComparisonReport> {
    let trace_a = run(&no_output(config_a))?;
    let mut config_b = template.resolve(config_a)?;
    config_b.schedule.rt = calibrate_rt_from_run(&trace_a, config_b.calibration_ramp())?;
    config_b.validate()?;
    let trace_b = run(&no_output(&config_b))?;
    ComparisonReport::build(config_a.clone(), config_b, trace_a, trace_b)
}

/// Two explicit configs compared without calibration.
pub fn compare_fixed(config_a: &RunConfig, config_b: &RunConfig) -> Result<ComparisonReport> {
    let configs = [no_output(config_a), no_output(config_b)];
    let mut traces = run_many(&configs).into_iter();
    let trace_a = traces.next().expect("two runs")?;
    let trace_b = traces.next().expect("two runs")?;
    ComparisonReport::build(config_a.clone(), config_b.clone(), trace_a, trace_b)
}

fn no_output(c: &RunConfig) -> RunConfig {
    RunConfig {
        out: None,
        ..c.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleRow {
    pub t: u64,
    pub eta_t: f64,
    pub r_t: f64,
    pub k_t: f64,
}

/// All three schedules at t = 0, stride, 2·stride, … and always at t = T.
pub fn emit_schedule_table(spec: &ScheduleSpec, stride: u64) -> Result<Vec<ScheduleRow>> {
    if stride == 0 {
        return Err(Error::validation("stride", "must be >= 1"));
    }
    spec.validate()?;
    let mut ts: Vec<u64> = (0..=spec.horizon).step_by(stride as usize).collect();
    if ts.last() != Some(&spec.horizon) {
        ts.push(spec.horizon);
    }
    ts.into_iter()
        .map(|t| {
            Ok(ScheduleRow {
                t,
                eta_t: spec.eta(t)?,
                r_t: spec.rt(t),
                k_t: spec.kt(t),
            })
        })
        .collect()
}

pub fn write_schedule_csv<W: Write>(rows: &[ScheduleRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "eta_t", "r_t", "k_t"])?;
    for r in rows {
        out.write_record([
            r.t.to_string(),
            trace::fmt_real(r.eta_t),
            trace::fmt_real(r.r_t),
            trace::fmt_real(r.k_t),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::Variant;
    use crate::tasks::TaskKind;

    fn quick(kind: TaskKind, variant: Variant, steps: u64) -> RunConfig {
        let mut c = RunConfig::new(kind, steps);
        c.optimizer.variant = variant;
        c.optimizer.lambda = 0.1;
        c.eval_every = 10;
        c
    }

    #[test]
    fn calibration_examples() {
        let trace_with = |rho: f64| RunTrace {
            initial_norm: 1.0,
            initial_val_loss: 1.0,
            rows: vec![TraceRow {
                t: 1,
                train_loss: 0.0,
                val_loss: 0.0,
                eta_t: 1.0,
                r_t: 0.0,
                k_t: 0.0,
                target_norm: 0.0,
                actual_norm: rho,
                norm_ratio: rho,
                grad_norm: 0.0,
            }],
        };
        let rt = calibrate_rt_from_run(&trace_with(2.415), 2500).unwrap();
        assert_eq!(rt.points(), &[(0, 1.0), (2500, 2.415)]);
        let flat = calibrate_rt_from_run(&trace_with(1.0), 2500).unwrap();
        assert_eq!(flat, PiecewiseLinear::constant(1.0));
        let rt = calibrate_rt_from_run(&trace_with(2.0), 1250).unwrap();
        assert_eq!(rt.eval(625), 1.5);
        assert!(calibrate_rt_from_run(&trace_with(0.0), 10).is_err());
        assert!(calibrate_rt_from_run(&trace_with(-1.0), 10).is_err());
    }

    #[test]
    fn schedule_table_shapes() {
        let mut spec = ScheduleSpec::with_horizon(100);
        spec.rt = PiecewiseLinear::new(vec![(0, 1.0), (40, 2.0)]).unwrap();
        let rows = emit_schedule_table(&spec, 20).unwrap();
        let ts: Vec<u64> = rows.iter().map(|r| r.t).collect();
        assert_eq!(ts, vec![0, 20, 40, 60, 80, 100]);
        assert_eq!(rows[0].r_t, 1.0);
        assert_eq!(rows[2].r_t, 2.0);
        assert_eq!(rows[5].r_t, 2.0);
        assert_eq!(rows[1].r_t, 1.5);

        let two = emit_schedule_table(&spec, 100).unwrap();
        assert_eq!(two.len(), 2);
        let ragged = emit_schedule_table(&spec, 30).unwrap();
        assert_eq!(ragged.last().unwrap().t, 100);

        spec.rt = PiecewiseLinear::constant(0.0);
        assert!(emit_schedule_table(&spec, 7)
            .unwrap()
            .iter()
            .all(|r| r.r_t == 0.0));
        assert!(emit_schedule_table(&spec, 0).is_err());
    }

    #[test]
    fn adam_descends_on_quadratic() {
        let c = quick(TaskKind::Quadratic, Variant::None, 1000);
        let trace = run(&c).unwrap();
        assert!(trace.final_val_loss().unwrap() < trace.initial_val_loss);
        assert_eq!(trace.rows.len(), 100);
        assert!(trace.rows.windows(2).all(|w| w[0].t < w[1].t));
    }

    #[test]
    fn runs_are_byte_identical() {
        let c = quick(TaskKind::Mlp, Variant::NormControl, 200);
        let a = run(&c).unwrap().to_csv_string().unwrap();
        let b = run(&c).unwrap().to_csv_string().unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with(
            "t,train_loss,val_loss,eta_t,r_t,k_t,target_norm,actual_norm,norm_ratio,grad_norm\n"
        ));
    }

    #[test]
    fn trace_csv_round_trips() {
        let c = quick(TaskKind::Logistic, Variant::DecayDecoupled, 50);
        let trace = run(&c).unwrap();
        let text = trace.to_csv_string().unwrap();
        let back = RunTrace::read_csv(text.as_bytes()).unwrap();
        assert_eq!(back.rows, trace.rows);
    }

    #[test]
    fn full_projection_pins_norm_to_target() {
        let mut c = quick(TaskKind::Mlp, Variant::NormControl, 300);
        c.schedule.kt = PiecewiseLinear::constant(1.0);
        c.schedule.rt = PiecewiseLinear::new(vec![(0, 1.0), (100, 1.7)]).unwrap();
        let trace = run(&c).unwrap();
        for r in &trace.rows {
            let rel = (r.actual_norm - r.target_norm).abs() / r.target_norm;
            assert!(rel <= 8.0 * f64::EPSILON, "t={} rel={rel:e}", r.t);
            assert_eq!(r.target_norm, r.r_t * trace.initial_norm);
        }
    }

    #[test]
    fn trace_is_self_consistent() {
        for variant in Variant::ALL {
            let trace = run(&quick(TaskKind::Mlp, variant, 60)).unwrap();
            for r in &trace.rows {
                let back = r.norm_ratio * trace.initial_norm;
                assert!((back - r.actual_norm).abs() <= 1e-12 * r.actual_norm);
                assert_eq!(r.target_norm, r.r_t * trace.initial_norm);
            }
        }
    }

    #[test]
    fn run_writes_csv_when_asked() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = quick(TaskKind::Quadratic, Variant::None, 20);
        c.out = Some(dir.path().join("trace.csv"));
        let trace = run(&c).unwrap();
        let on_disk = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
        assert_eq!(on_disk, trace.to_csv_string().unwrap());
    }

    #[test]
    fn compare_with_decay_free_reference() {
        let mut a = quick(TaskKind::Mlp, Variant::None, 400);
        a.optimizer.lambda = 0.0;
        let report = compare(&a, &CompareTemplate::default()).unwrap();
        let rho = report.summary.final_ratio_a;
        assert_eq!(report.config_b.schedule.rt.last_value(), rho);
        assert_eq!(report.loss_ratio.len(), report.trace_a.rows.len());
        let first = report.loss_ratio[0].ratio;
        assert!((first - 1.0).abs() < 0.05, "first loss ratio {first}");
        let dir = tempfile::tempdir().unwrap();
        report.write_to_dir(dir.path()).unwrap();
        for f in [
            "trace_a.csv",
            "trace_b.csv",
            "loss_ratio.csv",
            "config_b.txt",
            "report.json",
        ] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        RunConfig::parse(&std::fs::read_to_string(dir.path().join("config_b.txt")).unwrap())
            .unwrap();
    }
}
