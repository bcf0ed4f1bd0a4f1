//! The training step, evaluation and the outer loop.

mod config;
mod run;
mod state;

pub use config::{DatasetKind, LrSchedule, PseudoSource, TrainConfig, WallClock, CONFIG_KEYS};
pub use run::{train_loop, Clock, FixedStepClock, RunOptions, RunOutcome, SystemClock, CHECKPOINT_FILE, CONFIG_FILE, EVALS_FILE, METRICS_FILE};
pub use state::RunState;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::augment::{strong_augment, weak_augment, StrongConfig};
use crate::confidence::{partition, Partition, PredictionBatch, ThresholdMode, ThresholdState};
use crate::data::{
    load_cifar_binary, load_idx, make_synthetic_glyphs, split_labeled, ChannelStats, Dataset, Image, SplitSpec,
    UnlabeledSet,
};
use crate::diffcore::{ema_update, sgd_step, EmaState, Mode, OptimizerState, ParameterSet, SmallConvNet};
use crate::error::{Error, Result};
use crate::losses::{cam_mixes, srm_mixes, total_loss, CamDivisor, LossPlan, LossReport, MixedSample};
use crate::metrics::{purity, reliability, topk_accuracy};
use crate::rng;

const EVAL_CHUNK: usize = 256;

/// Unlabeled-batch diagnostics of one step; `None` when the step used no
/// unlabeled data.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepMetrics {
    pub purity: Option<f64>,
    pub reliability: Option<f64>,
    pub top1: Option<f64>,
    pub top2: Option<f64>,
    pub threshold_global: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub error_rate: f64,
    /// `topk[k - 1]` is the top-k accuracy, for k = 1..=min(5, C).
    pub topk: Vec<f64>,
}

/// Loads the configured dataset as (train, test).
pub fn load_dataset(cfg: &TrainConfig) -> Result<(Dataset, Dataset)> {
    let path = || -> Result<&PathBuf> { cfg.data_path.as_ref().ok_or_else(|| Error::Config("data_path is required".into())) };
    match cfg.dataset {
        DatasetKind::Glyphs => {
            let (n_train, n_test) = (cfg.glyph_train_per_class, cfg.glyph_test_per_class);
            let all = make_synthetic_glyphs(cfg.seed, 10, n_train + n_test, cfg.image_size)?;
            let cut = n_train * all.num_classes;
            let mut images = all.images;
            let mut labels = all.labels;
            let test_images = images.split_off(cut);
            let test_labels = labels.split_off(cut);
            Ok((
                Dataset::new("glyphs", all.num_classes, images, labels)?,
                Dataset::new("glyphs_test", all.num_classes, test_images, test_labels)?,
            ))
        }
        DatasetKind::Mnist => {
            let dir = path()?;
            let train = load_idx(&dir.join("train-images-idx3-ubyte"), &dir.join("train-labels-idx1-ubyte"))?;
            let test = load_idx(&dir.join("t10k-images-idx3-ubyte"), &dir.join("t10k-labels-idx1-ubyte"))?;
            Ok((train, test))
        }
        DatasetKind::Cifar10 => {
            let dir = path()?;
            let mut train = load_cifar_binary(&dir.join("data_batch_1.bin"))?;
            for k in 2..=5 {
                train = train.concat(load_cifar_binary(&dir.join(format!("data_batch_{k}.bin")))?)?;
            }
            let test = load_cifar_binary(&dir.join("test_batch.bin"))?;
            Ok((train, test))
        }
    }
}

/// Eval-mode class probabilities for a list of images.
pub fn predict(model: &SmallConvNet, params: &ParameterSet, stats: &ChannelStats, images: &[&Image]) -> Result<PredictionBatch> {
    let mut probs = Vec::with_capacity(images.len() * model.num_classes);
    for chunk in images.chunks(EVAL_CHUNK) {
        let x = stats.batch_tensor(chunk)?;
        probs.extend_from_slice(model.forward(params, &x, Mode::Eval)?.probs.data());
    }
    PredictionBatch::from_rows(model.num_classes, probs)
}

/// Error rate and top-k accuracies of `params` on `test`, without
/// augmentation.
pub fn evaluate(model: &SmallConvNet, params: &ParameterSet, stats: &ChannelStats, test: &Dataset) -> Result<EvalResult> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let refs: Vec<&Image> = test.images.iter().collect();
    let preds = predict(model, params, stats, &refs)?;
    let topk = (1..=model.num_classes.min(5))
        .map(|k| topk_accuracy(&preds, &test.labels, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalResult { error_rate: 1.0 - topk[0], topk })
}

/// A prepared run: data, model and the static parts of the step.
pub struct Trainer {
    pub config: TrainConfig,
    pub model: SmallConvNet,
    pub labeled: Dataset,
    pub unlabeled: UnlabeledSet,
    pub test: Dataset,
    pub stats: ChannelStats,
    pub strong: StrongConfig,
    /// Directory for non-finite diagnostics dumps.
    pub diagnostics_dir: Option<PathBuf>,
}

/// What a failed step leaves behind for inspection.
struct StepTrace<'a> {
    iteration: u64,
    labeled: &'a [usize],
    unlabeled: &'a [usize],
    partition: Option<Partition>,
    srm: Vec<MixedSample>,
    cam: Vec<MixedSample>,
    report: Option<LossReport>,
}

impl Trainer {
    pub fn from_config(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let (train, test) = load_dataset(config)?;
        let spec = SplitSpec {
            labels_per_class: config.labels_per_class,
            seed: config.seed,
            include_labeled_in_unlabeled: true,
        };
        let (labeled, unlabeled) = split_labeled(&train, &spec)?;
        Self::new(config.clone(), labeled, unlabeled, test)
    }

    /// Channel statistics come from the labeled and unlabeled training
    /// images.
    pub fn new(config: TrainConfig, labeled: Dataset, unlabeled: UnlabeledSet, test: Dataset) -> Result<Self> {
        config.validate()?;
        if labeled.is_empty() {
            return Err(Error::InvalidArgument("labeled set is empty".into()));
        }
        let channels = labeled.images[0].channels;
        let stats = ChannelStats::from_images(labeled.images.iter().chain(&unlabeled.images))?;
        let model = SmallConvNet::with_widths(channels, labeled.num_classes, config.model_widths);
        let strong = StrongConfig { cutout: config.strong_cutout, ..StrongConfig::default() };
        let diagnostics_dir = Some(config.out_dir.clone());
        Ok(Self { config, model, labeled, unlabeled, test, stats, strong, diagnostics_dir })
    }

    pub fn init_state(&self) -> Result<RunState> {
        let c = &self.config;
        let params = self.model.init(c.seed);
        let opt = OptimizerState::new(&params, c.lr as f32, c.momentum as f32, c.weight_decay as f32);
        let ema = EmaState::new(&params, c.param_ema as f32);
        let threshold = ThresholdState::new(c.threshold_mode, self.model.num_classes, c.tau_fixed, c.threshold_ema)?;
        Ok(RunState { iteration: 0, params, opt, ema, threshold, seed: c.seed, wall_clock_s: 0.0 })
    }

    pub fn evaluate(&self, params: &ParameterSet) -> Result<EvalResult> {
        evaluate(&self.model, params, &self.stats, &self.test)
    }

    /// One optimisation step on the given labeled and unlabeled indices.
    pub fn train_step(&self, state: &mut RunState, labeled_idx: &[usize], unlabeled_idx: &[usize]) -> Result<(LossReport, StepMetrics)> {
        let mut trace = StepTrace {
            iteration: state.iteration,
            labeled: labeled_idx,
            unlabeled: unlabeled_idx,
            partition: None,
            srm: Vec::new(),
            cam: Vec::new(),
            report: None,
        };
        match self.step_inner(state, &mut trace) {
            Err(Error::NonFinite(msg)) => {
                if let Some(dir) = &self.diagnostics_dir {
                    let path = dir.join(format!("diagnostics_{}.txt", trace.iteration));
                    let _ = std::fs::create_dir_all(dir);
                    if let Err(e) = std::fs::write(&path, render_trace(&trace, &msg)) {
                        return Err(Error::NonFinite(format!("{msg} (diagnostics not written: {e})")));
                    }
                    return Err(Error::NonFinite(format!("{msg} (diagnostics in {})", path.display())));
                }
                Err(Error::NonFinite(msg))
            }
            other => other,
        }
    }

    fn step_inner(&self, state: &mut RunState, trace: &mut StepTrace<'_>) -> Result<(LossReport, StepMetrics)> {
        let cfg = &self.config;
        let (t, seed) = (state.iteration, state.seed);
        let c = self.model.num_classes;
        let labeled_idx = trace.labeled;
        let unlabeled_idx = trace.unlabeled;
        if labeled_idx.is_empty() {
            return Err(Error::InvalidArgument("empty labeled batch".into()));
        }

        let mut rows: Vec<Image> = labeled_idx
            .iter()
            .enumerate()
            .map(|(k, &i)| {
                let img = &self.labeled.images[i];
                if cfg.label_weak_aug {
                    weak_augment(img, &mut rng::stream(seed, "weak_labeled", t, k as u64))
                } else {
                    img.clone()
                }
            })
            .collect();
        let mut plan = LossPlan {
            num_classes: c,
            labeled: labeled_idx.iter().enumerate().map(|(k, &i)| (k, self.labeled.labels[i])).collect(),
            ..LossPlan::default()
        };
        let mut metrics = StepMetrics { threshold_global: state.threshold.reported_global(), ..Default::default() };
        let mut report = LossReport::default();

        if cfg.ablation.uses_unlabeled() && !unlabeled_idx.is_empty() {
            let n_u = unlabeled_idx.len();
            let weak_views: Vec<Image> = unlabeled_idx
                .iter()
                .enumerate()
                .map(|(k, &i)| weak_augment(&self.unlabeled.images[i], &mut rng::stream(seed, "weak_unlabeled", t, k as u64)))
                .collect();
            let x = self.stats.batch_tensor(&weak_views.iter().collect::<Vec<_>>())?;
            let weak_fwd = match cfg.pseudo_source {
                PseudoSource::Live => self.model.forward(&state.params, &x, Mode::BatchStats)?,
                PseudoSource::Ema => self.model.forward(&state.ema.shadow, &x, Mode::Eval)?,
            };
            let weak = PredictionBatch::from_tensor(&weak_fwd.probs)?;
            drop(weak_fwd);

            let truth: Vec<usize> = {
                let all = self.unlabeled.diagnostic_labels();
                unlabeled_idx.iter().map(|&i| all[i]).collect()
            };
            metrics.purity = Some(purity(&weak, cfg.purity_threshold)?);
            metrics.reliability = reliability(&weak, &truth, cfg.purity_threshold);
            metrics.top1 = Some(topk_accuracy(&weak, &truth, 1)?);
            metrics.top2 = (c >= 2).then(|| topk_accuracy(&weak, &truth, 2)).transpose()?;

            if state.threshold.mode == ThresholdMode::Adaptive {
                state.threshold.update_adaptive_threshold(&weak)?;
            }
            metrics.threshold_global = state.threshold.reported_global();
            let part = partition(&weak, &state.threshold, cfg.tau_m, cfg.hc_exclusive);
            report.mask_count = part.consistency_mask.len();
            report.high_count = part.high.len();
            report.low_count = part.low.len();

            let strong_views: Vec<Image> = unlabeled_idx
                .iter()
                .enumerate()
                .map(|(k, &i)| {
                    strong_augment(&self.unlabeled.images[i], &mut rng::stream(seed, "strong_unlabeled", t, k as u64), &self.strong)
                })
                .collect();
            let mix_views: Vec<Image> = if cfg.independent_strong_views {
                unlabeled_idx
                    .iter()
                    .enumerate()
                    .map(|(k, &i)| {
                        strong_augment(&self.unlabeled.images[i], &mut rng::stream(seed, "strong_mix", t, k as u64), &self.strong)
                    })
                    .collect()
            } else {
                strong_views.clone()
            };

            if cfg.ablation.uses_clean() {
                let offset = rows.len();
                plan.clean = part.consistency_mask.iter().map(|&b| (offset + b, weak.argmax[b])).collect();
                plan.clean_divisor = n_u;
                rows.extend(strong_views);
            }
            if cfg.ablation.uses_mixed() && !part.high.is_empty() {
                trace.srm = srm_mixes(&part.high, &mix_views, &weak, cfg.mix_strategy, cfg.alpha_h, seed, t)?;
                let offset = rows.len();
                plan.mixed = trace.srm.iter().enumerate().map(|(k, m)| (offset + k, m.outcome.label.clone())).collect();
                plan.mixed_divisor = part.high.len();
                rows.extend(trace.srm.iter().map(|m| m.outcome.image.clone()));
            }
            if cfg.ablation.uses_cam() && !part.low.is_empty() {
                trace.cam = cam_mixes(
                    &part.low,
                    &part.high,
                    &mix_views,
                    &weak,
                    cfg.mix_strategy,
                    cfg.alpha_l,
                    cfg.ablation.random_cam_pairing(),
                    seed,
                    t,
                )?;
                report.cam_matched = trace.cam.len();
                let offset = rows.len();
                plan.cam = trace.cam.iter().enumerate().map(|(k, m)| (offset + k, m.outcome.label.clone())).collect();
                plan.cam_divisor = match cfg.cam_divisor {
                    CamDivisor::LowCount => part.low.len(),
                    CamDivisor::Matched => trace.cam.len(),
                };
                rows.extend(trace.cam.iter().map(|m| m.outcome.image.clone()));
            }
            trace.partition = Some(part);
        }

        let x = self.stats.batch_tensor(&rows.iter().collect::<Vec<_>>())?;
        drop(rows);
        let mut fwd = self.model.forward(&state.params, &x, Mode::Train)?;
        let vars = plan.build(&mut fwd.tape, fwd.logits)?;
        let parts = vars.parts;
        report.l_s = parts.l_s;
        report.l_u = parts.l_u;
        report.l_m = parts.l_m;
        report.l_cm = parts.l_cm;
        report.total = total_loss(&parts, cfg.ablation);
        trace.report = Some(report);
        if !report.is_finite() {
            return Err(Error::NonFinite(format!("loss at iteration {t}")));
        }
        let grads = fwd.tape.backward(vars.total)?;
        fwd.commit_running(&mut state.params)?;
        state.opt.lr = cfg.lr_at(t) as f32;
        sgd_step(&mut state.params, &grads, &mut state.opt)?;
        ema_update(&mut state.ema, &state.params)?;
        state.iteration += 1;
        Ok((report, metrics))
    }

    /// Index batches for step `t`, a pure function of the seed.
    pub fn batch_stream(&self) -> Result<crate::data::BatchStream> {
        crate::data::BatchStream::new(
            self.labeled.len(),
            self.unlabeled.len(),
            self.config.batch_size,
            self.config.mu,
            self.config.seed,
        )
    }

    pub fn out_dir(&self) -> &Path {
        &self.config.out_dir
    }
}

fn join<T: std::fmt::Display>(v: impl IntoIterator<Item = T>) -> String {
    v.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn render_trace(trace: &StepTrace<'_>, msg: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "error={msg}");
    let _ = writeln!(s, "iteration={}", trace.iteration);
    let _ = writeln!(s, "labeled_indices={}", join(trace.labeled));
    let _ = writeln!(s, "unlabeled_indices={}", join(trace.unlabeled));
    if let Some(p) = &trace.partition {
        let _ = writeln!(s, "high={}", join(&p.high));
        let _ = writeln!(s, "low={}", join(&p.low));
        let _ = writeln!(s, "consistency_mask={}", join(&p.consistency_mask));
    }
    for (name, mixes) in [("srm", &trace.srm), ("cam", &trace.cam)] {
        let _ = writeln!(s, "{name}_pairs={}", join(mixes.iter().map(|m| format!("{}:{}", m.first, m.second))));
        let _ = writeln!(s, "{name}_lambda={}", join(mixes.iter().map(|m| m.outcome.lambda_eff)));
    }
    if let Some(r) = &trace.report {
        let _ = writeln!(s, "l_s={}\nl_u={}\nl_m={}\nl_cm={}\ntotal={}", r.l_s, r.l_u, r.l_m, r.l_cm, r.total);
    }
    s
}
