//! Command-line front end: `gen | train | eval | predict | metrics`.

mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::analytics::{disguise_table, double_coverage_rates, GroupBy};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_strategies, evaluate_target, PostprocessConfig};
use crate::fsutil::write_atomic;
use crate::model::{predict_frames, HeadOutput, Model, ModelSet};
use crate::play::{parse_plays, LabelSet, ParseConfig, Play, Task};
use crate::synthgen::{gen_dataset, GenConfig, PLAYS_FILE};
use crate::training::{build_examples, load_checkpoint, save_checkpoint, save_metrics, train, Scheduler, TrainConfig};
use crate::vocab::CoverageClass;

pub use config::{inject_config, parse_config};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "covresp", version, about = "Coverage responsibility models for play tracking data")]
#[command(args_override_self = true)]
pub struct Cli {
    /// key=value file; plain keys apply to every subcommand that accepts
    /// them, `cmd.key` to one subcommand. Flags on the command line win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled synthetic dataset.
    Gen(GenArgs),
    /// Train one task model.
    Train(TrainArgs),
    /// Score a checkpoint over the 11 truncation strategies.
    Eval(EvalArgs),
    /// Frame-by-frame predictions for selected plays.
    Predict(PredictArgs),
    /// Disguise and double-coverage tables.
    Metrics(MetricsArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n_plays: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_defenders: Option<usize>,
    #[arg(long)]
    pub n_receivers: Option<usize>,
    #[arg(long)]
    pub p_disguise: Option<f64>,
    #[arg(long)]
    pub p_double_coverage: Option<f64>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSONL file or a directory holding plays.jsonl.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub task: Task,
    /// Output directory for `<task>.ckpt` and `<task>_metrics.csv`.
    #[arg(long)]
    pub out: PathBuf,
    /// Start from the small-CPU preset instead of the full defaults.
    #[arg(long)]
    pub desk: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Constant learning rate, replacing the scheduler.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Peak rate of a one-cycle run or initial rate of warm restarts.
    #[arg(long)]
    pub max_lr: Option<f64>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub frame_stride: Option<usize>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub no_augmentation: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Expected task; a checkpoint for another task is an error.
    #[arg(long)]
    pub task: Option<Task>,
    /// Matchup model for the target post-processing fallback.
    #[arg(long)]
    pub matchup_checkpoint: Option<PathBuf>,
    /// Treat every play as a protect-the-lead situation.
    #[arg(long)]
    pub assume_lead: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long = "play-id", required = true)]
    pub play_ids: Vec<String>,
    /// Output JSONL file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub coverage_checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub matchup_checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub target_checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MetricKind {
    Disguise,
    DoubleCoverage,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GroupArg {
    Receiver,
    DefenseTeam,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long, value_enum)]
    pub kind: MetricKind,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub coverage_checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub matchup_checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "receiver")]
    pub group_by: GroupArg,
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => EXIT_USAGE,
        Error::NonFinite { .. } | Error::Aborted(_) => EXIT_NUMERIC,
        Error::Shape(_) | Error::Io { .. } | Error::Json(_) | Error::Checkpoint { .. } | Error::Data(_) => EXIT_DATA,
    }
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code. Messages go to stdout and stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match inject_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Metrics(a) => cmd_metrics(a),
    }
}

fn plays_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(PLAYS_FILE)
    } else {
        p.to_path_buf()
    }
}

fn load_plays(p: &Path) -> Result<Vec<(Play, LabelSet)>> {
    let path = plays_path(p);
    let rep = parse_plays(&path, &ParseConfig::default())?;
    if !rep.errors.is_empty() {
        eprintln!("{}: skipped {} malformed lines", path.display(), rep.errors.len());
        for e in rep.errors.iter().take(5) {
            eprintln!("  line {}: {}", e.line, e.reason);
        }
    }
    if rep.plays.is_empty() {
        return Err(Error::Data(format!("{}: no valid plays", path.display())));
    }
    Ok(rep.plays)
}

fn to_json_bytes<T: serde::Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(v)?;
    b.push(b'\n');
    Ok(b)
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut b = Vec::new();
    f(&mut b).expect("writing to memory");
    b
}

pub fn cmd_gen(a: GenArgs) -> Result<()> {
    let mut cfg = GenConfig::default();
    if let Some(v) = a.n_plays {
        cfg.n_plays = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.n_defenders {
        cfg.n_defenders = v;
    }
    if let Some(v) = a.n_receivers {
        cfg.n_receivers = v;
    }
    if let Some(v) = a.p_disguise {
        cfg.p_disguise = v;
    }
    if let Some(v) = a.p_double_coverage {
        cfg.p_double_coverage = v;
    }
    if let Some(v) = a.noise_sigma {
        cfg.noise_sigma = v;
    }
    let m = gen_dataset(&cfg, &a.out)?;
    println!(
        "wrote {} plays (seed {}, schema {}) to {}",
        m.n_plays,
        m.seed,
        m.schema_version,
        a.out.display()
    );
    Ok(())
}

/// Training configuration after presets and overrides.
pub fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut c = if a.desk {
        TrainConfig::desk(a.task)
    } else {
        TrainConfig::for_task(a.task)
    };
    if let Some(v) = a.epochs {
        c.epochs = v;
    }
    if let Some(v) = a.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(v) = a.d_model {
        c.model.d_model = v;
    }
    if let Some(v) = a.heads {
        c.model.n_heads = v;
    }
    if let Some(v) = a.layers {
        c.model.n_layers = v;
    }
    if let Some(v) = a.dropout {
        c.model.dropout = v;
    }
    if let Some(v) = a.frame_stride {
        c.model.frame_stride = v;
    }
    if let Some(v) = a.val_fraction {
        c.val_fraction = v;
    }
    if a.no_augmentation {
        c.augmentation = false;
    }
    if let Some(v) = a.max_lr {
        match &mut c.scheduler {
            Scheduler::OneCycle { max_lr, .. } => *max_lr = v,
            Scheduler::CosineRestart(cr) => cr.init_lr = v,
            Scheduler::Constant { lr } => *lr = v,
        }
    }
    if let Some(v) = a.lr {
        c.scheduler = Scheduler::Constant { lr: v };
    }
    c.validate()?;
    Ok(c)
}

pub fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = train_config(&a)?;
    let plays = load_plays(&a.data)?;
    let (ex, skipped) = build_examples(&plays, a.task);
    if !skipped.is_empty() {
        eprintln!("{} of {} plays filtered out for {}", skipped.len(), plays.len(), a.task);
    }
    if ex.is_empty() {
        return Err(Error::Data(format!("no plays carry {} labels", a.task)));
    }
    let out = train::<f32>(&ex, &cfg)?;
    let ck = a.out.join(format!("{}.ckpt", a.task));
    save_checkpoint(&out.model, Some(&out.state), &ck)?;
    save_metrics(a.out.join(format!("{}_metrics.csv", a.task)), &out.metrics)?;
    let last = out.metrics.last().expect("at least one epoch");
    println!(
        "{}: {} train / {} validation plays, {} epochs, final train loss {:.4}{}; checkpoint {}",
        a.task,
        out.n_train,
        out.n_val,
        last.epoch,
        last.train_loss,
        last.val_accuracy.map(|v| format!(", validation accuracy {v:.4}")).unwrap_or_default(),
        ck.display()
    );
    Ok(())
}

fn load_model(p: &Path) -> Result<Model<f32>> {
    load_checkpoint::<f32>(p).map(|(m, _)| m)
}

pub fn cmd_eval(a: EvalArgs) -> Result<()> {
    let model = load_model(&a.checkpoint)?;
    let task = model.task();
    if let Some(t) = a.task {
        if t != task {
            return Err(Error::Data(format!("checkpoint holds a {task} model, not {t}")));
        }
    }
    let plays = load_plays(&a.data)?;
    let (ex, _) = build_examples(&plays, task);
    let rep = evaluate_strategies(&model, &ex)?;
    write_atomic(a.out.join(format!("eval_{task}.csv")), &csv_bytes(|b| rep.write_csv(b)))?;
    write_atomic(a.out.join(format!("eval_{task}.json")), &to_json_bytes(&rep)?)?;
    for r in &rep.rows {
        let s = r.headline(task);
        println!("{:>22}  accuracy {:.4}  f1 {:.4}  n {}", r.strategy, s.accuracy, s.macro_f1, s.total);
    }
    if task == Task::Target {
        let matchup = a.matchup_checkpoint.as_deref().map(load_model).transpose()?;
        let cfg = PostprocessConfig {
            assume_lead: a.assume_lead,
            ..PostprocessConfig::default()
        };
        let t = evaluate_target(&model, matchup.as_ref(), &plays, &cfg)?;
        write_atomic(a.out.join("target_methods.csv"), &csv_bytes(|b| t.write_csv(b)))?;
        write_atomic(a.out.join("target_methods.json"), &to_json_bytes(&t)?)?;
        println!(
            "nearest defender {:.4}; transformer {:.4}; post-processed {:.4} ({} plays)",
            t.baseline_accuracy, t.raw_accuracy, t.postprocessed_accuracy, t.n_plays
        );
    }
    Ok(())
}

fn head_json(play: &Play, out: &HeadOutput, targeted: Option<&str>) -> Result<serde_json::Value> {
    let probs = out.probs()?;
    let cols = probs.shape()[1];
    let rows: Vec<&[f64]> = probs.data().chunks(cols).collect();
    let ids = |idx: Vec<usize>| -> Vec<String> { idx.into_iter().map(|i| play.agents[i].agent_id.clone()).collect() };
    Ok(match out.task {
        Task::Coverage => json!({
            "defenders": ids(play.defenders()),
            "classes": CoverageClass::all().map(|c| c.name()).collect::<Vec<_>>(),
            "probs": rows,
        }),
        Task::Matchup => {
            let mut cands = vec!["NONE".to_string()];
            cands.extend(ids(play.receivers()));
            json!({ "defenders": ids(play.defenders()), "candidates": cands, "probs": rows })
        }
        Task::Target => {
            let mut slots = ids(play.defenders());
            slots.push(targeted.unwrap_or_default().to_string());
            json!({ "slots": slots, "probs": rows[0] })
        }
    })
}

pub fn cmd_predict(a: PredictArgs) -> Result<()> {
    let models = ModelSet {
        coverage: a.coverage_checkpoint.as_deref().map(load_model).transpose()?,
        matchup: a.matchup_checkpoint.as_deref().map(load_model).transpose()?,
        target: a.target_checkpoint.as_deref().map(load_model).transpose()?,
    };
    for (m, t) in [(&models.coverage, Task::Coverage), (&models.matchup, Task::Matchup), (&models.target, Task::Target)] {
        if let Some(m) = m {
            if m.task() != t {
                return Err(Error::Data(format!("{t} checkpoint holds a {} model", m.task())));
            }
        }
    }
    if models.is_empty() {
        return Err(Error::InvalidArgument("give at least one checkpoint".into()));
    }
    let plays = load_plays(&a.data)?;
    let mut buf = Vec::new();
    for id in &a.play_ids {
        let Some((play, labels)) = plays.iter().find(|(p, _)| &p.play_id == id) else {
            let avail: Vec<&str> = plays.iter().take(20).map(|(p, _)| p.play_id.as_str()).collect();
            return Err(Error::Data(format!(
                "play {id} not found; available ({} total): {}{}",
                plays.len(),
                avail.join(", "),
                if plays.len() > 20 { ", ..." } else { "" }
            )));
        };
        let tr = labels.targeted_receiver.as_deref();
        for fp in predict_frames(play, &models, tr, a.stride)? {
            let mut row = json!({ "play_id": id, "end_offset": fp.end_offset });
            for (k, h) in [("coverage", &fp.coverage), ("matchup", &fp.matchup), ("target", &fp.target)] {
                if let Some(h) = h {
                    row[k] = head_json(play, h, tr)?;
                }
            }
            serde_json::to_writer(&mut buf, &row)?;
            buf.push(b'\n');
        }
    }
    write_atomic(&a.out, &buf)?;
    println!("wrote predictions for {} plays to {}", a.play_ids.len(), a.out.display());
    Ok(())
}

pub fn cmd_metrics(a: MetricsArgs) -> Result<()> {
    let need = |p: &Option<PathBuf>, what: &str| {
        p.as_deref()
            .ok_or_else(|| Error::InvalidArgument(format!("--{what}-checkpoint is required for this metric")))
            .and_then(load_model)
    };
    let plays = load_plays(&a.data)?;
    match a.kind {
        MetricKind::Disguise => {
            let cov = need(&a.coverage_checkpoint, "coverage")?;
            let (ex, _) = build_examples(&plays, Task::Coverage);
            let t = disguise_table(&cov, &ex)?;
            for note in &t.excluded {
                eprintln!("excluded {note}");
            }
            write_atomic(a.out.join("disguise.csv"), &csv_bytes(|b| t.write_csv(b)))?;
            write_atomic(a.out.join("disguise.json"), &to_json_bytes(&t)?)?;
            println!("{} teams written to {}", t.rows.len(), a.out.join("disguise.csv").display());
        }
        MetricKind::DoubleCoverage => {
            let cov = need(&a.coverage_checkpoint, "coverage")?;
            let mat = need(&a.matchup_checkpoint, "matchup")?;
            let g = match a.group_by {
                GroupArg::Receiver => GroupBy::Receiver,
                GroupArg::DefenseTeam => GroupBy::DefenseTeam,
            };
            let t = double_coverage_rates(&cov, &mat, &plays, g)?;
            let stem = match g {
                GroupBy::Receiver => "double_coverage_receiver",
                GroupBy::DefenseTeam => "double_coverage_defense_team",
            };
            write_atomic(a.out.join(format!("{stem}.csv")), &csv_bytes(|b| t.write_csv(b)))?;
            write_atomic(a.out.join(format!("{stem}.json")), &to_json_bytes(&t)?)?;
            println!(
                "global rate {:.4} (ground truth {:.4}) over {} plays",
                t.global_rate, t.gt_global_rate, t.n_plays
            );
        }
    }
    Ok(())
}
