//! Command line: configuration files, presets, orchestration of runs,
//! metrics files and plots.

pub mod csv;
pub mod svg;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::trainer::{
    train_loop, RunOptions, RunOutcome, RunState, SystemClock, TrainConfig, Trainer, CHECKPOINT_FILE, METRICS_FILE,
};
use csv::CsvTable;
use svg::Series;

/// Reads a `key=value` file over the defaults.
pub fn parse_config(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    TrainConfig::from_kv_str(&text)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExperimentPreset {
    pub name: &'static str,
    pub overrides: &'static [(&'static str, &'static str)],
}

pub const PRESETS: [ExperimentPreset; 8] = [
    ExperimentPreset { name: "full", overrides: &[] },
    ExperimentPreset { name: "no_mixed", overrides: &[("ablation", "no_mixed")] },
    ExperimentPreset { name: "no_clean", overrides: &[("ablation", "no_clean")] },
    ExperimentPreset { name: "no_cam", overrides: &[("ablation", "no_cam")] },
    ExperimentPreset { name: "cam_to_mixup", overrides: &[("ablation", "cam_to_mixup")] },
    ExperimentPreset { name: "fix", overrides: &[("threshold_mode", "fixed")] },
    ExperimentPreset { name: "mixup", overrides: &[("mix_strategy", "mixup")] },
    ExperimentPreset { name: "supervised_only", overrides: &[("ablation", "supervised_only")] },
];

/// The four ablation rows run by `ablate` unless told otherwise.
pub const ABLATION_GRID: [&str; 4] = ["no_mixed", "no_clean", "no_cam", "cam_to_mixup"];

pub fn preset(name: &str) -> Result<&'static ExperimentPreset> {
    PRESETS
        .iter()
        .find(|p| p.name == name)
        .ok_or_else(|| Error::Config(format!("unknown preset '{name}'")))
}

impl ExperimentPreset {
    pub fn apply(&self, base: &TrainConfig) -> Result<TrainConfig> {
        let mut cfg = base.clone();
        for (k, v) in self.overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Parser, Debug)]
#[command(name = "regmixmatch", about = "Semi-supervised training with mixed high- and low-confidence samples")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(clap::Args, Debug, Clone)]
pub struct ConfigArgs {
    /// key=value configuration file; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra key=value overrides applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => parse_config(p)?,
            None => TrainConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{kv}' is not key=value")))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Train one configuration.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Continue from the run directory's checkpoint.
        #[arg(long)]
        resume: bool,
        /// Stop after this many completed steps.
        #[arg(long)]
        stop_at: Option<u64>,
    },
    /// Score a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Defaults to the checkpoint in the run directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Score the live weights instead of the EMA weights.
        #[arg(long)]
        live: bool,
    },
    /// Run a list of presets over one base configuration.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma-separated preset names.
        #[arg(long, value_delimiter = ',', default_values_t = ABLATION_GRID.map(String::from))]
        presets: Vec<String>,
        /// Prefix of the collected metrics files; defaults to the run directory name.
        #[arg(long)]
        base: Option<String>,
    },
    /// Vary one key over a list of values.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// key=v1,v2,...
        #[arg(long)]
        vary: String,
        /// Run each value as a separate process.
        #[arg(long)]
        parallel: bool,
    },
    /// Render chosen columns of metrics files as an SVG line chart.
    Plot {
        /// Comma-separated column names.
        #[arg(long, value_delimiter = ',', required = true)]
        columns: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "")]
        title: String,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// List presets and their overrides.
    Presets,
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(Error::Config(e.to_string())),
    };
    match cli.command {
        Cmd::Train { cfg, resume, stop_at } => {
            let config = cfg.resolve()?;
            let out = train_loop(&config, RunOptions { resume, stop_at }, &mut SystemClock::default())?;
            report_run(&config, &out);
            Ok(())
        }
        Cmd::Eval { cfg, checkpoint, live } => {
            let config = cfg.resolve()?;
            let trainer = Trainer::from_config(&config)?;
            let path = checkpoint.unwrap_or_else(|| config.out_dir.join(CHECKPOINT_FILE));
            let state = RunState::load(&path, &trainer.init_state()?)?;
            let params = if live { &state.params } else { &state.ema.shadow };
            let res = trainer.evaluate(params)?;
            println!("iteration {} error {}", state.iteration, csv::format_sig6(res.error_rate));
            for (k, acc) in res.topk.iter().enumerate() {
                println!("top{} {}", k + 1, csv::format_sig6(*acc));
            }
            Ok(())
        }
        Cmd::Ablate { cfg, presets, base } => {
            let config = cfg.resolve()?;
            let base = base.unwrap_or_else(|| dir_stem(&config.out_dir));
            ablate(&config, &presets, &base).map(|_| ())
        }
        Cmd::Sweep { cfg, vary, parallel } => {
            let config = cfg.resolve()?;
            let (key, values) = parse_vary(&vary)?;
            sweep(&config, &key, &values, parallel).map(|_| ())
        }
        Cmd::Plot { columns, out, title, files } => plot(&files, &columns, &title, &out),
        Cmd::Presets => {
            for p in &PRESETS {
                let o: Vec<String> = p.overrides.iter().map(|(k, v)| format!("{k}={v}")).collect();
                println!("{}\t{}", p.name, o.join(" "));
            }
            Ok(())
        }
    }
}

fn dir_stem(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into())
}

fn report_run(config: &TrainConfig, out: &RunOutcome) {
    let err = out.last_eval.as_ref().map(|e| csv::format_sig6(e.error_rate)).unwrap_or_else(|| "-".into());
    println!(
        "{}: {} steps, test error {err}, metrics {}",
        config.out_dir.display(),
        out.state.iteration,
        out.metrics_path.display()
    );
}

fn final_error(out: &RunOutcome) -> String {
    out.last_eval.as_ref().map(|e| csv::format_sig6(e.error_rate)).unwrap_or_default()
}

/// Runs each preset in `<out_dir>/<preset>` and copies its metrics to
/// `<out_dir>/<base>_<preset>.csv`. Returns the collected file paths.
pub fn ablate(config: &TrainConfig, presets: &[String], base: &str) -> Result<Vec<PathBuf>> {
    let root = config.out_dir.clone();
    fs::create_dir_all(&root)?;
    let mut summary = String::from("preset,final_test_error\n");
    let mut files = Vec::new();
    for name in presets {
        let mut cfg = preset(name)?.apply(config)?;
        cfg.out_dir = root.join(name);
        let out = train_loop(&cfg, RunOptions::default(), &mut SystemClock::default())?;
        report_run(&cfg, &out);
        let dest = root.join(format!("{base}_{name}.csv"));
        fs::copy(&out.metrics_path, &dest)?;
        files.push(dest);
        let _ = writeln!(summary, "{name},{}", final_error(&out));
    }
    fs::write(root.join(format!("{base}_summary.csv")), summary)?;
    Ok(files)
}

/// Splits `key=v1,v2,...`.
pub fn parse_vary(spec: &str) -> Result<(String, Vec<String>)> {
    let (k, vs) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("sweep spec '{spec}' is not key=v1,v2,...")))?;
    let values: Vec<String> = vs.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return Err(Error::Config(format!("sweep spec '{spec}' lists no values")));
    }
    Ok((k.trim().to_string(), values))
}

/// One run per value in `<out_dir>/<key>_<value>`, then a summary table
/// `<out_dir>/sweep_<key>.csv` of final test errors.
pub fn sweep(config: &TrainConfig, key: &str, values: &[String], parallel: bool) -> Result<PathBuf> {
    let root = config.out_dir.clone();
    fs::create_dir_all(&root)?;
    let configs = values
        .iter()
        .map(|v| {
            let mut cfg = config.clone();
            cfg.set(key, v)?;
            cfg.out_dir = root.join(format!("{key}_{v}"));
            cfg.validate()?;
            Ok(cfg)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut errors = Vec::with_capacity(configs.len());
    if parallel {
        let exe = std::env::current_exe()?;
        let mut children = Vec::new();
        for cfg in &configs {
            fs::create_dir_all(&cfg.out_dir)?;
            let path = cfg.out_dir.join("sweep_config.txt");
            fs::write(&path, cfg.to_kv_string())?;
            children.push(Command::new(&exe).arg("train").arg("--config").arg(&path).spawn()?);
        }
        for (mut child, cfg) in children.into_iter().zip(&configs) {
            if !child.wait()?.success() {
                return Err(Error::Config(format!("run {} failed", cfg.out_dir.display())));
            }
            errors.push(last_test_error(&cfg.out_dir.join(METRICS_FILE))?);
        }
    } else {
        for cfg in &configs {
            let out = train_loop(cfg, RunOptions::default(), &mut SystemClock::default())?;
            report_run(cfg, &out);
            errors.push(final_error(&out));
        }
    }
    let mut table = format!("{key},final_test_error\n");
    for (v, e) in values.iter().zip(&errors) {
        let _ = writeln!(table, "{v},{e}");
    }
    let path = root.join(format!("sweep_{key}.csv"));
    fs::write(&path, &table)?;
    print!("{table}");
    Ok(path)
}

fn last_test_error(metrics: &Path) -> Result<String> {
    let col = CsvTable::read(metrics)?.column("test_error")?;
    Ok(col.iter().rev().flatten().next().map(|e| csv::format_sig6(*e)).unwrap_or_default())
}

/// Writes one SVG with a series per (file, column).
pub fn plot(files: &[PathBuf], columns: &[String], title: &str, out: &Path) -> Result<()> {
    let mut series = Vec::new();
    for f in files {
        let table = CsvTable::read(f)?;
        let xs = table.column("iteration")?;
        for c in columns {
            let ys = table.column(c)?;
            let points = xs
                .iter()
                .zip(&ys)
                .filter_map(|(x, y)| Some(((*x)?, (*y)?)))
                .collect();
            let label = if files.len() > 1 { format!("{} {c}", dir_stem(&f.with_extension(""))) } else { c.clone() };
            series.push(Series { label, points });
        }
    }
    fs::write(out, svg::line_chart(title, "iteration", &series))?;
    Ok(())
}
