//! The semi-supervised training loop, checkpoints, evaluation and ablations.
//!
//! Each iteration processes the unlabeled batch first (augment, predict,
//! disagreement, two-way KL, score, blends, pseudo-labels), then the labeled
//! batch pair by pair (copy-paste images, copy-paste labels, loss), then
//! takes one Adam step on the student and one EMA step on the teacher.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod eval;

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::Path;

use rand::Rng as _;
use serde::Serialize;

use crate::augment::{strong_augment, weak_augment, StrongConfig, WeakConfig};
use crate::bcp::{bcp_images, bcp_labels, pair_indices};
use crate::error::{Error, Result};
use crate::masking::HoleSpec;
use crate::mix::{adaptive_blend, disagreement_blend, masked_strong_view};
use crate::net::{adam_step, ema_update, forward, loss_and_grad, poly_lr, AdamConfig, OptimState, ParamVector};
use crate::phantom::{make_split_ids, BatchSampler, Dataset, DatasetSplit};
use crate::pseudo::{pseudo_schedule, EmaTargets, PseudoMode};
use crate::rng::{self, Role};
use crate::uncertainty::{high_uncertainty_score, kl_two_way, prediction_disagreement, DEFAULT_KL_EPS};
use crate::volume::{BinaryMask, Dims, LabelMap, Volume};

pub use checkpoint::Checkpoint;
pub use config::{ComponentFlags, Inference, TrainConfig, Which};

/// Crop streams for labeled samples use slots from here up.
const LABELED_SLOT: u32 = 0x100;

pub const LOG_HEADER: &str = "iter,epoch,lr,loss_l2u,loss_u2l,mu_mean,disagreement_fraction";

/// Everything that changes from one iteration to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub student: ParamVector,
    pub teacher: ParamVector,
    pub opt: OptimState,
    /// Completed iterations.
    pub iteration: u64,
    pub ema_targets: EmaTargets,
}

impl TrainState {
    /// Fresh student from the seed; the teacher starts as a copy.
    pub fn init(cfg: &TrainConfig) -> Result<Self> {
        let student = ParamVector::init(cfg.arch, &mut rng::stream(cfg.seed, 0, Role::Init, 0))?;
        Ok(Self {
            teacher: student.clone(),
            opt: OptimState::new(student.len()),
            student,
            iteration: 0,
            ema_targets: EmaTargets::new(cfg.ema_label_decay),
        })
    }
}

/// One step of the loop, in the order it happens.
#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    UnlabeledBatch { ids: Vec<String> },
    Augment { sample: usize },
    Predict { sample: usize },
    Disagreement { sample: usize, fraction: f64 },
    Uncertainty { sample: usize },
    Score { sample: usize, mu: f64 },
    AdaptiveAugment { sample: usize },
    PseudoLabel { sample: usize },
    LabeledBatch { ids: Vec<String> },
    CopyPasteImages { pair: usize },
    CopyPasteLabels { pair: usize },
    Loss { pair: usize, l2u: f64, u2l: f64 },
    SupervisedLoss { loss: f64 },
    StudentUpdate { lr: f64 },
    TeacherUpdate,
}

impl Event {
    /// Variant name, for comparing sequences without payloads.
    pub fn kind(&self) -> &'static str {
        match self {
            Event::UnlabeledBatch { .. } => "unlabeled_batch",
            Event::Augment { .. } => "augment",
            Event::Predict { .. } => "predict",
            Event::Disagreement { .. } => "disagreement",
            Event::Uncertainty { .. } => "uncertainty",
            Event::Score { .. } => "score",
            Event::AdaptiveAugment { .. } => "adaptive_augment",
            Event::PseudoLabel { .. } => "pseudo_label",
            Event::LabeledBatch { .. } => "labeled_batch",
            Event::CopyPasteImages { .. } => "copy_paste_images",
            Event::CopyPasteLabels { .. } => "copy_paste_labels",
            Event::Loss { .. } => "loss",
            Event::SupervisedLoss { .. } => "supervised_loss",
            Event::StudentUpdate { .. } => "student_update",
            Event::TeacherUpdate => "teacher_update",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogRow {
    pub iter: u64,
    pub epoch: u64,
    pub lr: f64,
    pub loss_l2u: f64,
    pub loss_u2l: f64,
    pub mu_mean: f64,
    pub disagreement_fraction: f64,
}

impl LogRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.iter, self.epoch, self.lr, self.loss_l2u, self.loss_u2l, self.mu_mean, self.disagreement_fraction
        )
    }
}

/// Replacement operations applied after the built-in ones, so a test can
/// check that a disabled component behaves like an identity substitute.
#[derive(Debug, Clone, Copy, Default)]
pub struct Hooks {
    pub mu: Option<fn(f64) -> f64>,
    pub disagreement: Option<fn(&BinaryMask) -> BinaryMask>,
}

/// Per-sample products of the unlabeled half of an iteration.
struct Unlabeled {
    adapted: Volume,
    pseudo: LabelMap,
    mu: f64,
    fraction: f64,
}

pub struct Trainer<'a> {
    cfg: TrainConfig,
    data: &'a Dataset,
    split: DatasetSplit,
    sampler: BatchSampler,
    patch: Dims,
    mask_spec: HoleSpec,
    paste_spec: HoleSpec,
    weak: WeakConfig,
    strong: StrongConfig,
    adam: AdamConfig,
    hooks: Hooks,
    state: TrainState,
}

/// The split a config trains on: the dataset's own, or the training pool
/// re-split at `labeled_ratio`.
pub fn effective_split(cfg: &TrainConfig, data: &Dataset) -> Result<DatasetSplit> {
    let Some(ratio) = cfg.labeled_ratio else {
        return Ok(data.split.clone());
    };
    let mut pool: Vec<String> = data.split.labeled.iter().chain(&data.split.unlabeled).cloned().collect();
    pool.sort();
    let mut split = make_split_ids(&pool, ratio, 0, 0, &mut rng::stream(cfg.seed, 0, Role::Split, 1))?;
    split.validation = data.split.validation.clone();
    split.test = data.split.test.clone();
    Ok(split)
}

fn nonfinite(what: &str) -> Error {
    Error::NumericFailure(format!("non-finite {what}"))
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: TrainConfig, data: &'a Dataset) -> Result<Self> {
        let state = TrainState::init(&cfg)?;
        Self::with_state(cfg, data, state)
    }

    pub fn with_state(cfg: TrainConfig, data: &'a Dataset, state: TrainState) -> Result<Self> {
        cfg.validate()?;
        if state.student.arch() != cfg.arch || state.teacher.arch() != cfg.arch {
            return Err(Error::InvalidConfig("checkpoint architecture differs from config".into()));
        }
        let split = effective_split(&cfg, data)?;
        let sampler = BatchSampler::new(&split, cfg.batch_size, cfg.seed)?;
        let first = split.labeled.first().ok_or_else(|| Error::MissingData("no labeled cases".into()))?;
        let volume_dims = data.image(first)?.dims();
        for id in split.labeled.iter().chain(&split.unlabeled) {
            let d = data.image(id)?.dims();
            let fits = d.as_array().iter().zip(cfg.patch.unwrap_or(volume_dims).as_array()).all(|(v, p)| *v >= p);
            if !fits || (cfg.patch.is_none() && d != volume_dims) {
                return Err(Error::InvalidDims(format!("case {id} of {d} does not fit the training patch")));
            }
        }
        let patch = cfg.patch.unwrap_or(volume_dims);
        cfg.arch.check_input(patch).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let mask_spec = cfg.mask_spec(patch);
        let paste_spec = cfg.paste_spec(patch);
        mask_spec.validate(patch)?;
        paste_spec.validate(patch)?;
        let (weak, strong) = if cfg.flags.wsa {
            (
                WeakConfig {
                    prob: cfg.weak_prob,
                    ..WeakConfig::default()
                },
                StrongConfig {
                    prob: cfg.strong_prob,
                    ..StrongConfig::default()
                },
            )
        } else {
            Default::default()
        };
        Ok(Self {
            cfg,
            data,
            split,
            sampler,
            patch,
            mask_spec,
            paste_spec,
            weak,
            strong,
            adam: AdamConfig::default(),
            hooks: Hooks::default(),
            state,
        })
    }

    pub fn with_hooks(mut self, hooks: Hooks) -> Self {
        self.hooks = hooks;
        self
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn split(&self) -> &DatasetSplit {
        &self.split
    }

    pub fn sampler(&self) -> &BatchSampler {
        &self.sampler
    }

    /// Last iteration this run will execute up to.
    pub fn target_iteration(&self) -> u64 {
        self.cfg.stop_after.unwrap_or(self.cfg.total_iters)
    }

    pub fn is_done(&self) -> bool {
        self.state.iteration >= self.target_iteration()
    }

    fn crop(&self, id: &str, iteration: u64, slot: u32, with_label: bool) -> Result<(Volume, Option<LabelMap>)> {
        let image = self.data.image(id)?;
        let dims = image.dims();
        let label = with_label.then(|| self.data.label(id)).transpose()?;
        if dims == self.patch {
            return Ok((image.clone(), label.cloned()));
        }
        let mut r = rng::stream(self.cfg.seed, iteration, Role::Crop, slot);
        let mut origin = [0; 3];
        for (o, (d, p)) in origin.iter_mut().zip(dims.as_array().into_iter().zip(self.patch.as_array())) {
            *o = r.random_range(0..=d - p);
        }
        Ok((
            image.crop(origin, self.patch)?,
            label.map(|l| l.crop(origin, self.patch)).transpose()?,
        ))
    }

    fn unlabeled_sample(
        &mut self,
        k: usize,
        id: &str,
        iteration: u64,
        epoch: u64,
        total_epochs: u64,
        emit: &mut dyn FnMut(&Event),
    ) -> Result<Unlabeled> {
        let seed = self.cfg.seed;
        let slot = k as u32;
        let (u, _) = self.crop(id, iteration, slot, false)?;
        let (weak_view, strong_view) = if self.cfg.flags.wsa {
            let (w, _, _) = weak_augment(&u, None, &self.weak, &mut rng::stream(seed, iteration, Role::WeakAugment, slot))?;
            let (s, _) = strong_augment(&w, &self.strong, &mut rng::stream(seed, iteration, Role::StrongAugment, slot));
            (w, s)
        } else {
            (u.clone(), u)
        };
        emit(&Event::Augment { sample: k });

        let mask = self
            .mask_spec
            .generate(self.patch, &mut rng::stream(seed, iteration, Role::StrongMask, slot))?;
        let masked = masked_strong_view(&weak_view, &strong_view, &mask)?;
        let p_t = forward(&self.state.teacher, &weak_view)?;
        let p_s = forward(&self.state.student, &masked)?;
        emit(&Event::Predict { sample: k });

        let mut dif = if self.cfg.flags.pdi {
            prediction_disagreement(&p_s, &p_t)?
        } else {
            BinaryMask::zeros(self.patch)
        };
        if let Some(h) = self.hooks.disagreement {
            dif = h(&dif);
        }
        let fraction = dif.count_ones() as f64 / dif.dims().len() as f64;
        emit(&Event::Disagreement { sample: k, fraction });

        let kl = kl_two_way(&p_s, &p_t, DEFAULT_KL_EPS)?;
        emit(&Event::Uncertainty { sample: k });

        let mut mu = if self.cfg.flags.tue {
            high_uncertainty_score(&p_s, &p_t, &kl, self.cfg.tau)?
        } else {
            0.0
        };
        if let Some(h) = self.hooks.mu {
            mu = h(mu);
        }
        emit(&Event::Score { sample: k, mu });

        let blended = adaptive_blend(&weak_view, &masked, mu)?;
        let adapted = disagreement_blend(&blended, &masked, &dif)?;
        emit(&Event::AdaptiveAugment { sample: k });

        let mode = if self.cfg.flags.ipt { self.cfg.pseudo_mode } else { PseudoMode::Vot };
        let pseudo = pseudo_schedule(
            &p_t,
            &p_s,
            epoch,
            total_epochs,
            mode,
            Some((&mut self.state.ema_targets, id)),
        )?;
        emit(&Event::PseudoLabel { sample: k });
        Ok(Unlabeled {
            adapted,
            pseudo,
            mu,
            fraction,
        })
    }

    fn paste_mask(&self, iteration: u64, sample: usize) -> Result<BinaryMask> {
        if !self.cfg.flags.bcp {
            return Ok(BinaryMask::ones(self.patch));
        }
        let slot = sample as u32;
        if self.cfg.share_masks {
            self.mask_spec
                .generate(self.patch, &mut rng::stream(self.cfg.seed, iteration, Role::StrongMask, slot))
        } else {
            self.paste_spec
                .generate(self.patch, &mut rng::stream(self.cfg.seed, iteration, Role::PasteMask, slot))
        }
    }

    /// Run one iteration and return its log row. State changes only when
    /// the whole iteration succeeds.
    pub fn step(&mut self, emit: &mut dyn FnMut(&Event)) -> Result<LogRow> {
        let it = self.state.iteration;
        let total = self.cfg.total_iters;
        if it >= total {
            return Err(Error::InvalidParameter(format!("iteration {it} beyond total {total}")));
        }
        let epoch = self.sampler.epoch_of(it);
        let total_epochs = self.sampler.total_epochs(total);
        let lr = poly_lr(self.cfg.base_lr, it, total, self.cfg.lr_power);
        let (labeled_ids, unlabeled_ids) = self.sampler.batches(it);
        let supervised = self.cfg.supervised_at(it);
        if !supervised && unlabeled_ids.is_empty() {
            return Err(Error::MissingData("semi-supervised training needs unlabeled cases".into()));
        }
        let saved_targets = self.state.ema_targets.clone();
        let result = if supervised {
            self.supervised_grad(it, &labeled_ids, emit)
        } else {
            self.ssl_grad(it, epoch, total_epochs, &labeled_ids, &unlabeled_ids, emit)
        };
        let (grad, mut row) = match result {
            Ok(r) => r,
            Err(e) => {
                self.state.ema_targets = saved_targets;
                return Err(match e {
                    Error::NonFinite(_) => nonfinite("gradient"),
                    other => other,
                });
            }
        };
        let mut student = self.state.student.values().to_vec();
        let mut opt = self.state.opt.clone();
        if let Err(e) = adam_step(&mut student, &grad, &mut opt, lr, self.adam) {
            self.state.ema_targets = saved_targets;
            return Err(match e {
                Error::NonFinite(_) => nonfinite("gradient"),
                other => other,
            });
        }
        if student.iter().any(|v| !v.is_finite()) {
            self.state.ema_targets = saved_targets;
            return Err(nonfinite("parameters after update"));
        }
        self.state.student.values_mut().copy_from_slice(&student);
        self.state.opt = opt;
        emit(&Event::StudentUpdate { lr });
        ema_update(self.state.teacher.values_mut(), self.state.student.values(), self.cfg.alpha)?;
        emit(&Event::TeacherUpdate);
        self.state.iteration += 1;
        row.iter = self.state.iteration;
        row.epoch = epoch;
        row.lr = lr;
        Ok(row)
    }

    fn supervised_grad(&self, it: u64, labeled_ids: &[String], emit: &mut dyn FnMut(&Event)) -> Result<(Vec<f64>, LogRow)> {
        emit(&Event::LabeledBatch { ids: labeled_ids.to_vec() });
        let samples = labeled_ids
            .iter()
            .enumerate()
            .map(|(k, id)| self.crop(id, it, LABELED_SLOT + k as u32, true))
            .collect::<Result<Vec<_>>>()?;
        let batch: Vec<(&Volume, &LabelMap)> = samples
            .iter()
            .map(|(v, l)| (v, l.as_ref().expect("labeled crop")))
            .collect();
        let (losses, grad) = loss_and_grad(&self.state.student, &batch, self.cfg.loss_mode)?;
        let loss = losses.iter().sum::<f64>() / losses.len() as f64;
        if !loss.is_finite() {
            return Err(nonfinite("loss"));
        }
        emit(&Event::SupervisedLoss { loss });
        Ok((
            grad,
            LogRow {
                iter: 0,
                epoch: 0,
                lr: 0.0,
                loss_l2u: loss,
                loss_u2l: 0.0,
                mu_mean: 0.0,
                disagreement_fraction: 0.0,
            },
        ))
    }

    fn ssl_grad(
        &mut self,
        it: u64,
        epoch: u64,
        total_epochs: u64,
        labeled_ids: &[String],
        unlabeled_ids: &[String],
        emit: &mut dyn FnMut(&Event),
    ) -> Result<(Vec<f64>, LogRow)> {
        emit(&Event::UnlabeledBatch { ids: unlabeled_ids.to_vec() });
        let mut unlabeled = Vec::with_capacity(unlabeled_ids.len());
        for (k, id) in unlabeled_ids.iter().enumerate() {
            unlabeled.push(self.unlabeled_sample(k, id, it, epoch, total_epochs, emit)?);
        }

        emit(&Event::LabeledBatch { ids: labeled_ids.to_vec() });
        let labeled = labeled_ids
            .iter()
            .enumerate()
            .map(|(k, id)| {
                let (v, l) = self.crop(id, it, LABELED_SLOT + k as u32, true)?;
                Ok((v, l.expect("labeled crop")))
            })
            .collect::<Result<Vec<_>>>()?;

        let pairs = pair_indices(self.cfg.batch_size)?;
        let mut grad = vec![0.0; self.state.student.len()];
        let (mut sum_l2u, mut sum_u2l) = (0.0, 0.0);
        // Loss is the mean over pairs of (l2u + u2l); each pair's call
        // returns the gradient of the mean of its two terms.
        let scale = 2.0 / pairs.len() as f64;
        for (p, &(i, j)) in pairs.iter().enumerate() {
            let m_i = self.paste_mask(it, i)?;
            let m_j = self.paste_mask(it, j)?;
            let (x_lu, x_ul) = bcp_images(
                &labeled[i].0,
                &unlabeled[i].adapted,
                &labeled[j].0,
                &unlabeled[j].adapted,
                &m_i,
                &m_j,
            )?;
            emit(&Event::CopyPasteImages { pair: p });
            let (y_lu, y_ul) = bcp_labels(
                &labeled[i].1,
                &unlabeled[i].pseudo,
                &labeled[j].1,
                &unlabeled[j].pseudo,
                &m_i,
                &m_j,
            )?;
            emit(&Event::CopyPasteLabels { pair: p });
            let (losses, g) = loss_and_grad(&self.state.student, &[(&x_lu, &y_lu), (&x_ul, &y_ul)], self.cfg.loss_mode)?;
            let (l2u, u2l) = (losses[0], losses[1]);
            if !(l2u.is_finite() && u2l.is_finite()) {
                return Err(nonfinite("loss"));
            }
            for (acc, gv) in grad.iter_mut().zip(&g) {
                *acc += scale * gv;
            }
            sum_l2u += l2u;
            sum_u2l += u2l;
            emit(&Event::Loss { pair: p, l2u, u2l });
        }
        let n = unlabeled.len() as f64;
        Ok((
            grad,
            LogRow {
                iter: 0,
                epoch: 0,
                lr: 0.0,
                loss_l2u: sum_l2u / pairs.len() as f64,
                loss_u2l: sum_u2l / pairs.len() as f64,
                mu_mean: unlabeled.iter().map(|u| u.mu).sum::<f64>() / n,
                disagreement_fraction: unlabeled.iter().map(|u| u.fraction).sum::<f64>() / n,
            },
        ))
    }

    /// Step until the target iteration, collecting log rows.
    pub fn run(&mut self, emit: &mut dyn FnMut(&Event)) -> Result<Vec<LogRow>> {
        let mut rows = Vec::new();
        while !self.is_done() {
            rows.push(self.step(emit)?);
        }
        Ok(rows)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(&self.cfg, self.state.clone())
    }
}

/// Summary of a finished [`train`] call.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub rows: Vec<LogRow>,
}

fn append_rows(path: &Path, rows: &[LogRow], fresh: bool) -> Result<()> {
    if fresh {
        fs::write(path, format!("{LOG_HEADER}\n"))?;
    }
    let mut f = OpenOptions::new().append(true).open(path)?;
    for r in rows {
        writeln!(f, "{}", r.csv())?;
    }
    Ok(())
}

/// Train from `cfg`, writing the log and checkpoint under `cfg.out`.
/// Resumes from `cfg.resume` when set. A numeric failure leaves a snapshot
/// of the last good state in `cfg.out/abort` before returning the error.
pub fn train(cfg: &TrainConfig, data: &Dataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out)?;
    let (state, fresh) = match &cfg.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            ck.check_config(cfg)?;
            (ck.state, false)
        }
        None => (TrainState::init(cfg)?, true),
    };
    let log = cfg.log_path();
    if fresh {
        append_rows(&log, &[], true)?;
    } else if !log.exists() {
        return Err(Error::MissingData(format!("{} not found for resume", log.display())));
    }
    let mut trainer = Trainer::with_state(cfg.clone(), data, state)?;
    let mut rows = Vec::new();
    while !trainer.is_done() {
        match trainer.step(&mut |_| {}) {
            Ok(row) => {
                append_rows(&log, &[row], false)?;
                rows.push(row);
            }
            Err(e @ Error::NumericFailure(_)) => {
                let dir = cfg.out.join("abort");
                trainer.checkpoint().save(&dir.join("snapshot.vol"))?;
                let diag = serde_json::json!({
                    "iteration": trainer.state().iteration,
                    "error": e.to_string(),
                    "last_row": rows.last(),
                });
                fs::write(dir.join("diagnostic.json"), serde_json::to_string_pretty(&diag)?)?;
                return Err(e);
            }
            Err(e) => return Err(e),
        }
    }
    trainer.checkpoint().save(&cfg.checkpoint_path())?;
    Ok(TrainOutcome {
        state: trainer.into_state(),
        rows,
    })
}

/// Train entirely in memory.
pub fn train_in_memory(cfg: &TrainConfig, data: &Dataset) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg.clone(), data)?;
    let rows = trainer.run(&mut |_| {})?;
    Ok(TrainOutcome {
        state: trainer.into_state(),
        rows,
    })
}
