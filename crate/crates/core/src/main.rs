use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use adamwn::harness::{self, CompareTemplate, RunConfig};
use adamwn::tasks::{self, TaskKind};
use adamwn::{Error, Result, ScheduleSpec};

#[derive(Parser)]
#[command(name = "adamwn", version, about = "Adam with weight norm control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train once and write the per-step trace as CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a decay baseline, calibrate r_t to its final norm ratio, run the
    /// norm-controlled counterpart and write both traces plus a report.
    Compare {
        #[arg(long)]
        config_a: PathBuf,
        #[arg(long)]
        template_b: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Tabulate η_t, r_t and k_t every `stride` steps.
    Schedule {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        stride: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a task's analytic gradient with central differences.
    CheckGrad {
        #[arg(long)]
        task: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn read_config(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Validation {
        field: "config".into(),
        msg: format!("{}: {e}", path.display()),
    })
}

/// Accepts a bare schedule file or a full run config.
fn parse_schedule(text: &str) -> Result<ScheduleSpec> {
    ScheduleSpec::parse(text).or_else(|e| RunConfig::parse(text).map(|c| c.schedule).map_err(|_| e))
}

fn execute(command: Command) -> Result<ExitCode> {
    match command {
        Command::Run { config, out } => {
            let mut cfg = RunConfig::parse(&read_config(&config)?)?;
            cfg.out = Some(out.clone());
            let trace = harness::run(&cfg)?;
            if let Some(last) = trace.last() {
                println!(
                    "{} rows -> {}; final norm ratio {:.6}, final val loss {:.6e}",
                    trace.rows.len(),
                    out.display(),
                    last.norm_ratio,
                    last.val_loss
                );
            }
        }
        Command::Compare {
            config_a,
            template_b,
            out_dir,
        } => {
            let a = RunConfig::parse(&read_config(&config_a)?)?;
            let template = CompareTemplate::parse(&read_config(&template_b)?)?;
            let report = harness::compare(&a, &template)?;
            report.write_to_dir(&out_dir)?;
            let s = &report.summary;
            println!(
                "norm ratio A {:.6}, B {:.6} (gap {:.3e}); val loss A {:.6e}, B {:.6e}",
                s.final_ratio_a,
                s.final_ratio_b,
                s.ratio_gap,
                s.final_val_loss_a,
                s.final_val_loss_b
            );
        }
        Command::Schedule {
            config,
            stride,
            out,
        } => {
            let spec = parse_schedule(&read_config(&config)?)?;
            let rows = harness::emit_schedule_table(&spec, stride)?;
            harness::write_schedule_csv(&rows, BufWriter::new(File::create(&out)?))?;
        }
        Command::CheckGrad { task, seed } => {
            let kind: TaskKind = task.parse().map_err(|msg| Error::Validation {
                field: "task".into(),
                msg,
            })?;
            let c = tasks::check_gradient(kind, seed)?;
            let tol = kind.fd_tolerance();
            let ok = c.max_rel_error <= tol;
            println!(
                "{} seed {seed}: max relative error {:.3e} at coordinate {} over {} coordinates (tolerance {tol:e}) {}",
                kind.name(),
                c.max_rel_error,
                c.worst_index,
                c.coords_checked,
                if ok { "ok" } else { "FAILED" }
            );
            if !ok {
                return Ok(ExitCode::from(3));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
