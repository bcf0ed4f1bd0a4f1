//! The outer loop: steps, periodic evaluation, metrics rows and
//! checkpoints.

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use super::{EvalResult, RunState, Trainer, TrainConfig, WallClock};
use crate::cli::csv::{EvalWriter, MetricsWriter};
use crate::error::Result;
use crate::metrics::DiagnosticRow;

pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const EVALS_FILE: &str = "evals.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.rmm";

/// Monotone seconds since some fixed origin.
pub trait Clock {
    fn now_s(&mut self) -> f64;
}

pub struct SystemClock(Instant);

impl Default for SystemClock {
    fn default() -> Self {
        Self(Instant::now())
    }
}

impl Clock for SystemClock {
    fn now_s(&mut self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// Advances by a fixed amount on every reading.
pub struct FixedStepClock {
    pub step: f64,
    now: f64,
}

impl FixedStepClock {
    pub fn new(step: f64) -> Self {
        Self { step, now: 0.0 }
    }
}

impl Clock for FixedStepClock {
    fn now_s(&mut self) -> f64 {
        self.now += self.step;
        self.now
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Continue from the checkpoint in the run directory.
    pub resume: bool,
    /// Stop (with a checkpoint) once this many steps are complete; the
    /// schedule still assumes the configured total.
    pub stop_at: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub state: RunState,
    /// Most recent EMA evaluation, if any was due.
    pub last_eval: Option<EvalResult>,
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
}

/// Runs (or resumes) `config` inside `config.out_dir`.
pub fn train_loop(config: &TrainConfig, opts: RunOptions, clock: &mut dyn Clock) -> Result<RunOutcome> {
    let trainer = Trainer::from_config(config)?;
    let dir = config.out_dir.clone();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(CONFIG_FILE), config.to_kv_string())?;
    let metrics_path = dir.join(METRICS_FILE);
    let evals_path = dir.join(EVALS_FILE);
    let checkpoint_path = dir.join(CHECKPOINT_FILE);

    let template = trainer.init_state()?;
    let (mut state, mut metrics, mut evals) = if opts.resume {
        let state = RunState::load(&checkpoint_path, &template)?;
        let m = MetricsWriter::resume(&metrics_path, state.iteration)?;
        let e = EvalWriter::resume(&evals_path, state.iteration)?;
        (state, m, e)
    } else {
        (template, MetricsWriter::create(&metrics_path)?, EvalWriter::create(&evals_path)?)
    };

    let total = config.iterations;
    let end = opts.stop_at.map_or(total, |s| s.min(total));
    let mut stream = trainer.batch_stream()?;
    let mut last_eval = None;
    while state.iteration < end {
        let t = state.iteration;
        let (labeled, unlabeled) = stream.batch_at(t);
        let start = clock.now_s();
        let (report, step) = trainer.train_step(&mut state, &labeled, &unlabeled)?;
        if config.wall_clock == WallClock::Measured {
            state.wall_clock_s += clock.now_s() - start;
        }
        let k = state.iteration;
        let mut row = DiagnosticRow {
            iteration: k,
            l_s: report.l_s,
            l_u: report.l_u,
            l_m: report.l_m,
            l_cm: report.l_cm,
            total: report.total,
            purity: step.purity,
            reliability: step.reliability,
            top1: step.top1,
            top2: step.top2,
            test_error: None,
            threshold_global: step.threshold_global,
            size_h: report.high_count,
            size_hc: report.low_count,
            cam_matched: report.cam_matched,
            wall_clock_s: state.wall_clock_s,
        };
        let due = k % config.eval_interval == 0 || k == total;
        if due {
            let ema = trainer.evaluate(&state.ema.shadow)?;
            let live = trainer.evaluate(&state.params)?;
            row.test_error = Some(ema.error_rate);
            evals.write(k, &ema, &live)?;
            last_eval = Some(ema);
        }
        metrics.write_row(&row, config.wall_clock == WallClock::Measured)?;
        if due {
            metrics.flush()?;
            evals.flush()?;
            state.save(&checkpoint_path)?;
        }
    }
    metrics.flush()?;
    evals.flush()?;
    state.save(&checkpoint_path)?;
    Ok(RunOutcome { state, last_eval, metrics_path, checkpoint_path })
}
