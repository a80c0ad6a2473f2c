//! Python module `covresp`: dataset generation, training, evaluation and
//! per-frame prediction. Results come back as plain dicts and lists.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use covresp::evaluation::{evaluate_strategies, evaluate_target, PostprocessConfig};
use covresp::model::{predict_frames, Model, ModelSet};
use covresp::play::{parse_plays, LabelSet, ParseConfig, Play, Task};
use covresp::synthgen::{gen_dataset, GenConfig, PLAYS_FILE};
use covresp::training::{build_examples, load_checkpoint, save_checkpoint, save_metrics, train, Scheduler, TrainConfig};
use covresp::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::NonFinite { .. } | Error::Aborted(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<T: serde::Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let s = serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (s,))?.unbind())
}

fn load_plays(data: &PathBuf) -> Result<Vec<(Play, LabelSet)>, Error> {
    let path = if data.is_dir() { data.join(PLAYS_FILE) } else { data.clone() };
    let rep = parse_plays(&path, &ParseConfig::default())?;
    if rep.plays.is_empty() {
        return Err(Error::Data(format!("{}: no valid plays", path.display())));
    }
    Ok(rep.plays)
}

fn load_model(p: &PathBuf) -> Result<Model<f32>, Error> {
    load_checkpoint::<f32>(p).map(|(m, _)| m)
}

fn parse_task(task: &str) -> PyResult<Task> {
    task.parse().map_err(py_err)
}

/// Writes `plays.jsonl` and `manifest.json` to `out_dir`; returns the manifest.
#[pyfunction]
#[pyo3(signature = (out_dir, n_plays=1000, seed=0, p_disguise=None, p_double_coverage=None, n_defenders=None))]
fn generate(
    py: Python<'_>,
    out_dir: PathBuf,
    n_plays: usize,
    seed: u64,
    p_disguise: Option<f64>,
    p_double_coverage: Option<f64>,
    n_defenders: Option<usize>,
) -> PyResult<Py<PyAny>> {
    let mut cfg = GenConfig {
        n_plays,
        seed,
        ..GenConfig::default()
    };
    if let Some(v) = p_disguise {
        cfg.p_disguise = v;
    }
    if let Some(v) = p_double_coverage {
        cfg.p_double_coverage = v;
    }
    if let Some(v) = n_defenders {
        cfg.n_defenders = v;
    }
    let m = py.detach(|| gen_dataset(&cfg, &out_dir)).map_err(py_err)?;
    to_py(py, &m)
}

/// Trains one task model and writes `<task>.ckpt` and `<task>_metrics.csv`
/// into `out_dir`. Returns the per-epoch metrics.
#[pyfunction]
#[pyo3(signature = (data, task, out_dir, desk=true, epochs=None, seed=0, d_model=None, heads=None, layers=None, lr=None, augmentation=true))]
#[allow(clippy::too_many_arguments)]
fn train_model(
    py: Python<'_>,
    data: PathBuf,
    task: &str,
    out_dir: PathBuf,
    desk: bool,
    epochs: Option<usize>,
    seed: u64,
    d_model: Option<usize>,
    heads: Option<usize>,
    layers: Option<usize>,
    lr: Option<f64>,
    augmentation: bool,
) -> PyResult<Py<PyAny>> {
    let task = parse_task(task)?;
    let mut cfg = if desk { TrainConfig::desk(task) } else { TrainConfig::for_task(task) };
    cfg.seed = seed;
    cfg.augmentation = augmentation;
    if let Some(v) = epochs {
        cfg.epochs = v;
    }
    if let Some(v) = d_model {
        cfg.model.d_model = v;
    }
    if let Some(v) = heads {
        cfg.model.n_heads = v;
    }
    if let Some(v) = layers {
        cfg.model.n_layers = v;
    }
    if let Some(v) = lr {
        cfg.scheduler = Scheduler::Constant { lr: v };
    }
    let metrics = py
        .detach(|| -> Result<_, Error> {
            let plays = load_plays(&data)?;
            let (ex, _) = build_examples(&plays, task);
            let out = train::<f32>(&ex, &cfg)?;
            save_checkpoint(&out.model, Some(&out.state), out_dir.join(format!("{task}.ckpt")))?;
            save_metrics(out_dir.join(format!("{task}_metrics.csv")), &out.metrics)?;
            Ok(out.metrics)
        })
        .map_err(py_err)?;
    to_py(py, &metrics)
}

/// Scores a checkpoint on every truncation strategy. For a target model the
/// play-level comparison of the three methods is added under `"target"`.
#[pyfunction]
#[pyo3(signature = (checkpoint, data, matchup_checkpoint=None, assume_lead=false))]
fn evaluate(
    py: Python<'_>,
    checkpoint: PathBuf,
    data: PathBuf,
    matchup_checkpoint: Option<PathBuf>,
    assume_lead: bool,
) -> PyResult<Py<PyAny>> {
    let out = py
        .detach(|| -> Result<_, Error> {
            let model = load_model(&checkpoint)?;
            let plays = load_plays(&data)?;
            let (ex, _) = build_examples(&plays, model.task());
            let rep = evaluate_strategies(&model, &ex)?;
            let mut v = serde_json::to_value(&rep)?;
            if model.task() == Task::Target {
                let mu = matchup_checkpoint.as_ref().map(load_model).transpose()?;
                let cfg = PostprocessConfig {
                    assume_lead,
                    ..PostprocessConfig::default()
                };
                v["target"] = serde_json::to_value(evaluate_target(&model, mu.as_ref(), &plays, &cfg)?)?;
            }
            Ok(v)
        })
        .map_err(py_err)?;
    to_py(py, &out)
}

/// Per-frame class probabilities for one play from whichever checkpoints are
/// given. Each entry has `end_offset` plus one probability matrix per task.
#[pyfunction]
#[pyo3(signature = (data, play_id, coverage=None, matchup=None, target=None, stride=1))]
fn predict(
    py: Python<'_>,
    data: PathBuf,
    play_id: &str,
    coverage: Option<PathBuf>,
    matchup: Option<PathBuf>,
    target: Option<PathBuf>,
    stride: usize,
) -> PyResult<Py<PyAny>> {
    let rows = py
        .detach(|| -> Result<_, Error> {
            let models = ModelSet {
                coverage: coverage.as_ref().map(load_model).transpose()?,
                matchup: matchup.as_ref().map(load_model).transpose()?,
                target: target.as_ref().map(load_model).transpose()?,
            };
            if models.is_empty() {
                return Err(Error::InvalidArgument("give at least one checkpoint".into()));
            }
            let plays = load_plays(&data)?;
            let (play, labels) = plays
                .iter()
                .find(|(p, _)| p.play_id == play_id)
                .ok_or_else(|| Error::Data(format!("play {play_id} not found")))?;
            let mut rows = Vec::new();
            for fp in predict_frames(play, &models, labels.targeted_receiver.as_deref(), stride)? {
                let mut r = serde_json::json!({ "end_offset": fp.end_offset });
                for (k, h) in [("coverage", &fp.coverage), ("matchup", &fp.matchup), ("target", &fp.target)] {
                    if let Some(h) = h {
                        let p = h.probs()?;
                        let cols = p.shape()[1];
                        r[k] = serde_json::to_value(p.data().chunks(cols).collect::<Vec<_>>())?;
                    }
                }
                rows.push(r);
            }
            Ok(rows)
        })
        .map_err(py_err)?;
    to_py(py, &rows)
}

/// Runs the command-line interface with `args` (without the program name)
/// and returns its exit code.
#[pyfunction]
fn main(py: Python<'_>, args: Vec<String>) -> i32 {
    let argv: Vec<String> = std::iter::once("covresp".to_string()).chain(args).collect();
    py.detach(|| covresp::cli::run(argv))
}

#[pymodule]
#[pyo3(name = "covresp")]
fn covresp_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(train_model, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    m.add_function(wrap_pyfunction!(main, m)?)?;
    Ok(())
}
