use std::io::BufReader;

use adamwn::harness::{self, RunConfig};
use adamwn::optim::{self, OptimizerConfig, OptimizerState, Variant};
use adamwn::tasks::{Task, TaskKind};
use adamwn::{par, ParamStore, PiecewiseLinear};

fn small_mlp(steps: u64) -> RunConfig {
    let mut c = RunConfig::new(TaskKind::Mlp, steps);
    c.task.dim = 5;
    c.task.hidden = 7;
    c.eval_every = 20;
    c
}

#[test]
fn decay_and_equivalent_norm_control_give_identical_losses() {
    let steps = 600;
    let lambda = 0.1;
    let mut a = small_mlp(steps);
    a.optimizer = OptimizerConfig::with_variant(Variant::DecayCoupledLR, lambda);
    let mut b = a.clone();
    b.optimizer.variant = Variant::NormControl;
    b.schedule.rt = PiecewiseLinear::constant(0.0);
    let alpha = a.optimizer.alpha;
    let kt = (0..=steps)
        .map(|t| (t, a.schedule.eta(t).unwrap() * alpha * lambda))
        .collect();
    b.schedule.kt = PiecewiseLinear::new(kt).unwrap();

    let report = harness::compare_fixed(&a, &b).unwrap();
    assert_eq!(report.trace_a.rows.len(), report.trace_b.rows.len());
    for (x, y) in report.trace_a.rows.iter().zip(&report.trace_b.rows) {
        for (p, q) in [(x.train_loss, y.train_loss), (x.val_loss, y.val_loss)] {
            assert!(
                (p - q).abs() <= 1e-10 * p.abs().max(q.abs()),
                "t = {}: {p} vs {q}",
                x.t
            );
        }
    }
    assert!(report
        .loss_ratio
        .iter()
        .all(|p| (p.ratio - 1.0).abs() <= 1e-10));
}

#[test]
fn checkpoint_after_training_round_trips() {
    let cfg = small_mlp(50);
    let task = Task::build(&cfg.task, cfg.seed).unwrap();
    let mut store = task.init_store(cfg.seed).unwrap();
    let mut state = OptimizerState::new(store.len());
    let mut sampler = task.sampler(cfg.seed, cfg.batch_size);
    for _ in 0..cfg.steps() {
        let batch = sampler.next_batch(task.train_pool());
        let (_, g) = task.loss_and_grad(store.theta(), &batch).unwrap();
        optim::step(&mut store, &mut state, &g, &cfg.schedule, &cfg.optimizer).unwrap();
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("theta.ckpt");
    store
        .write_checkpoint(std::fs::File::create(&path).unwrap())
        .unwrap();
    let back =
        ParamStore::read_checkpoint(BufReader::new(std::fs::File::open(&path).unwrap())).unwrap();
    assert_eq!(back, store);
    assert_eq!(
        back.initial_norm().to_bits(),
        store.initial_norm().to_bits()
    );

    let bytes = std::fs::read(&path).unwrap();
    let header_end = bytes.iter().position(|&b| b == b'\n').unwrap() + 1;
    assert_eq!(bytes.len() - header_end, 8 * store.len());
}

#[test]
fn thread_count_does_not_change_traces() {
    let mut cfg = small_mlp(200);
    cfg.optimizer = OptimizerConfig::with_variant(Variant::NormControl, 0.0);
    cfg.schedule.rt = PiecewiseLinear::ramp(1.0, 1.8, 40);
    cfg.batch_size = 300;
    let one = par::with_threads(1, || harness::run(&cfg).unwrap());
    let many = par::with_threads(4, || harness::run(&cfg).unwrap());
    assert_eq!(one.to_csv_string().unwrap(), many.to_csv_string().unwrap());
}

#[test]
fn sweeps_run_independently() {
    let configs: Vec<RunConfig> = (0..4)
        .map(|seed| RunConfig {
            seed,
            ..small_mlp(100)
        })
        .collect();
    let together = harness::run_many(&configs);
    for (cfg, trace) in configs.iter().zip(together) {
        assert_eq!(trace.unwrap(), harness::run(cfg).unwrap());
    }
}
