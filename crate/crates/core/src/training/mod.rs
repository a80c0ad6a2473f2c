//! Task losses, the training loop and checkpoint persistence.

mod checkpoint;
mod example;
mod loss;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augmentation::{apply_truncation, sample_truncation};
use crate::error::{Error, Result};
use crate::model::{HeadOutput, Model, ModelConfig};
use crate::numerics::{
    adamw_step, clip_global_norm, cosine_restart_lr, onecycle_lr, AdamWConfig, AdamWState, CosineRestartConfig,
    OneCycleConfig, Real, Tape,
};
use crate::play::{Sequence, Task};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, TrainState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use example::{build_example, build_examples, fnv1a, is_validation, Example, Skipped, Targets, UNKNOWN_TEAM};
pub use loss::{loss_coverage, loss_matchup, loss_matchup_index, loss_target};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scheduler {
    /// One-cycle over every optimizer step of the run.
    OneCycle {
        max_lr: f64,
        pct_start: f64,
        div_factor: f64,
        final_div_factor: f64,
    },
    /// Warm restarts evaluated at fractional epochs.
    CosineRestart(CosineRestartConfig),
    Constant { lr: f64 },
}

impl Scheduler {
    pub fn onecycle_default() -> Self {
        let c = OneCycleConfig::new(3);
        Scheduler::OneCycle {
            max_lr: c.max_lr,
            pct_start: c.pct_start,
            div_factor: c.div_factor,
            final_div_factor: c.final_div_factor,
        }
    }

    pub fn onecycle_config(&self, total_steps: u64) -> Option<OneCycleConfig> {
        match *self {
            Scheduler::OneCycle {
                max_lr,
                pct_start,
                div_factor,
                final_div_factor,
            } => Some(OneCycleConfig {
                max_lr,
                total_steps,
                pct_start,
                div_factor,
                final_div_factor,
            }),
            _ => None,
        }
    }

    /// Rate for optimizer step `step` (from 0) of `steps_per_epoch * epochs`.
    pub fn lr(&self, step: u64, steps_per_epoch: u64, epochs: u64) -> Result<f64> {
        match self {
            Scheduler::OneCycle { .. } => onecycle_lr(step, &self.onecycle_config(steps_per_epoch * epochs).unwrap()),
            Scheduler::CosineRestart(c) => Ok(cosine_restart_lr(step as f64 / steps_per_epoch as f64, c)),
            Scheduler::Constant { lr } => Ok(*lr),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: AdamWConfig,
    pub scheduler: Scheduler,
    pub seed: u64,
    pub augmentation: bool,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub val_fraction: f64,
}

impl TrainConfig {
    /// Defaults per task: batch 16; epochs 100/200/150 and one-cycle,
    /// one-cycle, warm-restart scheduling for target/matchup/coverage.
    pub fn for_task(task: Task) -> Self {
        let (epochs, scheduler) = match task {
            Task::Target => (100, Scheduler::onecycle_default()),
            Task::Matchup => (200, Scheduler::onecycle_default()),
            Task::Coverage => (150, Scheduler::CosineRestart(CosineRestartConfig::default())),
        };
        Self {
            model: ModelConfig::for_task(task),
            batch_size: 16,
            epochs,
            optimizer: AdamWConfig::default(),
            scheduler,
            seed: 0,
            augmentation: true,
            clip_norm: Some(1.0),
            val_fraction: 0.1,
        }
    }

    /// Small-CPU preset: one encoder layer over every third frame, a handful
    /// of epochs and a tenfold higher peak rate. Heads, dropout, batch size,
    /// optimizer and scheduler family stay at the per-task defaults.
    pub fn desk(task: Task) -> Self {
        let mut c = Self::for_task(task);
        c.model.n_layers = 1;
        c.model.frame_stride = 3;
        let (epochs, scheduler) = match task {
            Task::Target => (6, Scheduler::OneCycle {
                max_lr: 2e-3,
                pct_start: 0.1,
                div_factor: 10.0,
                final_div_factor: 100.0,
            }),
            Task::Matchup => (6, Scheduler::OneCycle {
                max_lr: 2e-3,
                pct_start: 0.1,
                div_factor: 10.0,
                final_div_factor: 100.0,
            }),
            Task::Coverage => (5, Scheduler::CosineRestart(CosineRestartConfig {
                init_lr: 2e-3,
                t0: 5,
                t_mult: 1,
                eta_min: 2e-5,
            })),
        };
        c.epochs = epochs;
        c.scheduler = scheduler;
        c
    }

    pub fn task(&self) -> Task {
        self.model.task
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be at least 1".into()));
        }
        // the rate comes from the scheduler
        AdamWConfig { lr: 1.0, ..self.optimizer }.validate()?;
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("val_fraction must be in [0, 1), got {}", self.val_fraction)));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip_norm must be > 0, got {c}")));
            }
        }
        match self.scheduler {
            Scheduler::Constant { lr } if !(lr >= 0.0 && lr.is_finite()) => {
                Err(Error::Config(format!("constant lr must be >= 0, got {lr}")))
            }
            Scheduler::CosineRestart(c) if !(c.init_lr >= c.eta_min && c.eta_min >= 0.0 && c.t0 >= 1) => {
                Err(Error::Config("cosine restart needs init_lr >= eta_min >= 0 and t0 >= 1".into()))
            }
            Scheduler::OneCycle { .. } => self.scheduler.onecycle_config(3).unwrap().validate(),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: u64,
    /// Rate of the epoch's last step.
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

pub const METRICS_HEADER: &str = "epoch,step,lr,train_loss,val_loss,val_accuracy";

pub fn write_metrics_csv<W: Write>(mut out: W, rows: &[EpochMetrics]) -> std::io::Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.epoch,
            r.step,
            r.lr,
            r.train_loss,
            opt(r.val_loss),
            opt(r.val_accuracy)
        )?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<R> {
    pub model: Model<R>,
    pub metrics: Vec<EpochMetrics>,
    /// Rate used at every optimizer step.
    pub lr_trace: Vec<f64>,
    pub state: TrainState,
    pub n_train: usize,
    pub n_val: usize,
}

/// Forward pass and loss for one window; accumulates `scale * dL/dθ` into
/// `grads` when given.
pub fn example_step<R: Real>(
    model: &Model<R>,
    seq: &Sequence,
    ex: &Example,
    rng: Option<&mut ChaCha8Rng>,
    grads: Option<(&mut [Vec<R>], R)>,
) -> Result<(f64, HeadOutput)> {
    let mut tape = Tape::new();
    let b = model.bind(&mut tape, grads.is_some());
    let (lat, out) = match rng {
        Some(r) => {
            let lat = model.encode(&mut tape, &b, seq, &ex.ctx, Some(&mut *r))?;
            (lat, model.head(&mut tape, &b, lat, &ex.ctx, Some(r))?)
        }
        None => {
            let lat = model.encode::<ChaCha8Rng>(&mut tape, &b, seq, &ex.ctx, None)?;
            (lat, model.head::<ChaCha8Rng>(&mut tape, &b, lat, &ex.ctx, None)?)
        }
    };
    let _ = lat;
    let rows = ex.targets.rows();
    if tape.shape(out)[0] != rows.len() {
        return Err(Error::Shape(format!(
            "{} output rows for {} labels in {}",
            tape.shape(out)[0],
            rows.len(),
            ex.play_id
        )));
    }
    let loss = tape.cross_entropy(out, &rows);
    let lv = tape.value(loss).data()[0].as_f64();
    if !lv.is_finite() {
        return Err(Error::NonFinite {
            what: format!("loss on play {}", ex.play_id),
            detail: format!("{lv}"),
        });
    }
    let head = HeadOutput::new(model.task(), tape.value(out).to_f64())?;
    if let Some((acc, scale)) = grads {
        tape.backward(loss);
        for (g, &v) in acc.iter_mut().zip(&b.vars) {
            if let Some(d) = tape.grad(v) {
                for (a, &x) in g.iter_mut().zip(d) {
                    *a = *a + scale * x;
                }
            }
        }
    }
    Ok((lv, head))
}

/// Mean loss and row accuracy on full windows with dropout off.
pub fn evaluate_examples<R: Real>(model: &Model<R>, examples: &[&Example]) -> Result<(f64, f64)> {
    let (mut loss, mut hits, mut total) = (0.0, 0, 0);
    for ex in examples {
        let (l, out) = example_step(model, &ex.seq, ex, None, None)?;
        let (h, t) = ex.targets.hits(&out);
        loss += l;
        hits += h;
        total += t;
    }
    let n = examples.len().max(1) as f64;
    Ok((loss / n, hits as f64 / total.max(1) as f64))
}

/// Trains a fresh model on `examples`.
///
/// Each batch accumulates per-play gradients of the batch-mean loss, clips,
/// and takes one AdamW step at the scheduled rate. Plays whose id hashes into
/// the validation fraction are held out and scored after every epoch.
pub fn train<R: Real>(examples: &[Example], cfg: &TrainConfig) -> Result<TrainOutcome<R>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = Model::<R>::new(cfg.model.clone(), &mut rng)?;
    train_from(model, examples, cfg, rng)
}

/// Continues from an existing model and RNG state.
pub fn train_from<R: Real>(
    mut model: Model<R>,
    examples: &[Example],
    cfg: &TrainConfig,
    mut rng: ChaCha8Rng,
) -> Result<TrainOutcome<R>> {
    cfg.validate()?;
    if model.config != cfg.model {
        return Err(Error::Config("model config differs from the training config".into()));
    }
    if let Some(ex) = examples.iter().find(|e| task_of(&e.targets) != cfg.task()) {
        return Err(Error::Data(format!("example {} is not a {} example", ex.play_id, cfg.task())));
    }
    let (val, train_set): (Vec<&Example>, Vec<&Example>) =
        examples.iter().partition(|e| is_validation(&e.play_id, cfg.val_fraction));
    if train_set.is_empty() {
        return Err(Error::Data("no training examples after the validation split".into()));
    }
    let steps_per_epoch = train_set.len().div_ceil(cfg.batch_size) as u64;
    let epochs = cfg.epochs as u64;
    if matches!(cfg.scheduler, Scheduler::OneCycle { .. }) && steps_per_epoch * epochs < 3 {
        return Err(Error::Config(format!(
            "one-cycle needs at least 3 steps, run has {}",
            steps_per_epoch * epochs
        )));
    }
    let mut opt = AdamWState::new(&model.params);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut lr_trace = Vec::with_capacity((steps_per_epoch * epochs) as usize);
    let mut step: u64 = 0;
    let use_dropout = cfg.model.dropout > 0.0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut lr = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads: Vec<Vec<R>> = model.params.tensors().iter().map(|t| vec![R::zero(); t.len()]).collect();
            let scale = R::from_f64_lossy(1.0 / batch.len() as f64);
            for &i in batch {
                let ex = train_set[i];
                let seq = if cfg.augmentation {
                    let s = sample_truncation(&mut rng, &ex.seq.events);
                    apply_truncation(&ex.seq, &s)?
                } else {
                    ex.seq.clone()
                };
                let r = if use_dropout { Some(&mut rng) } else { None };
                let (l, _) = example_step(&model, &seq, ex, r, Some((&mut grads, scale))).map_err(|e| abort(e, epoch, step))?;
                epoch_loss += l;
            }
            if let Some(c) = cfg.clip_norm {
                let n = clip_global_norm(&mut grads, c);
                if !n.is_finite() {
                    return Err(Error::Aborted(format!("gradient norm {n} at epoch {epoch}, step {step}")));
                }
            }
            lr = cfg.scheduler.lr(step, steps_per_epoch, epochs)?;
            let oc = AdamWConfig { lr, ..cfg.optimizer };
            adamw_step(&mut model.params, &grads, &mut opt, &oc, step + 1).map_err(|e| abort(e, epoch, step))?;
            lr_trace.push(lr);
            step += 1;
        }
        let (val_loss, val_accuracy) = if val.is_empty() {
            (None, None)
        } else {
            let (l, a) = evaluate_examples(&model, &val).map_err(|e| abort(e, epoch, step))?;
            (Some(l), Some(a))
        };
        metrics.push(EpochMetrics {
            epoch: epoch + 1,
            step,
            lr,
            train_loss: epoch_loss / train_set.len() as f64,
            val_loss,
            val_accuracy,
        });
    }
    Ok(TrainOutcome {
        model,
        metrics,
        lr_trace,
        state: TrainState {
            epoch: cfg.epochs,
            step,
            rng,
        },
        n_train: train_set.len(),
        n_val: val.len(),
    })
}

fn task_of(t: &Targets) -> Task {
    match t {
        Targets::Coverage(_) => Task::Coverage,
        Targets::Matchup(_) => Task::Matchup,
        Targets::Target(_) => Task::Target,
    }
}

fn abort(e: Error, epoch: usize, step: u64) -> Error {
    match e {
        Error::NonFinite { what, detail } => {
            Error::Aborted(format!("non-finite {what} ({detail}) at epoch {}, step {step}", epoch + 1))
        }
        other => other,
    }
}

/// Writes the per-epoch log as CSV.
pub fn save_metrics(path: impl AsRef<Path>, rows: &[EpochMetrics]) -> Result<()> {
    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, rows).map_err(|e| Error::io(path.as_ref(), e))?;
    crate::fsutil::write_atomic(path.as_ref(), &buf)
}
