//! Truncation-strategy sweeps, per-defender accuracy and macro-F1, and the
//! play-level target-defender evaluation.

mod target;

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::augmentation::{apply_truncation, fixed_strategies, full_window, TruncationStrategy, WindowEnd};
use crate::error::{Error, Result};
use crate::model::{HeadOutput, Model};
use crate::numerics::Real;
use crate::play::{EndEvent, Play, Sequence, Task};
use crate::training::{Example, Targets};
use crate::vocab::CoverageClass;

pub use target::{
    catch_behind_los, evaluate_target, nearest_defender_baseline, preventative_alignment, target_accuracy,
    target_postprocess, PostprocessConfig, TargetPlayRow, TargetReport,
};

/// Anything that maps a play window to task logits.
pub trait WindowPredictor {
    fn task(&self) -> Task;
    fn predict_window(&self, seq: &Sequence, ex: &Example) -> Result<HeadOutput>;
}

impl<R: Real> WindowPredictor for Model<R> {
    fn task(&self) -> Task {
        Model::task(self)
    }

    fn predict_window(&self, seq: &Sequence, ex: &Example) -> Result<HeadOutput> {
        self.predict(seq, &ex.ctx)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub hits: u64,
    pub total: u64,
    pub accuracy: f64,
    /// Unweighted mean of per-class F1 over classes seen in truth or prediction.
    pub macro_f1: f64,
}

/// Scores `(prediction, truth)` class pairs.
pub fn score(pairs: &[(usize, usize)]) -> Score {
    let total = pairs.len() as u64;
    let hits = pairs.iter().filter(|(p, t)| p == t).count() as u64;
    // class -> (tp, fp, fn)
    let mut per: BTreeMap<usize, (u64, u64, u64)> = BTreeMap::new();
    for &(p, t) in pairs {
        if p == t {
            per.entry(t).or_default().0 += 1;
        } else {
            per.entry(p).or_default().1 += 1;
            per.entry(t).or_default().2 += 1;
        }
    }
    let macro_f1 = if per.is_empty() {
        0.0
    } else {
        per.values()
            .map(|&(tp, fp, fnn)| 2.0 * tp as f64 / (2 * tp + fp + fnn) as f64)
            .sum::<f64>()
            / per.len() as f64
    };
    Score {
        hits,
        total,
        accuracy: if total == 0 { 0.0 } else { hits as f64 / total as f64 },
        macro_f1,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub strategy: String,
    pub start: i32,
    pub end: String,
    pub pre_snap: bool,
    /// Every output row.
    pub all: Score,
    /// Coverage and matchup: rows whose truth is not the "no assignment" /
    /// "no matchup" class. Target: same as `all`.
    pub assigned: Score,
}

impl StrategyRow {
    /// Coverage is reported on coverage defenders, the other tasks on all rows.
    pub fn headline(&self, task: Task) -> &Score {
        match task {
            Task::Coverage => &self.assigned,
            _ => &self.all,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeamRow {
    pub team: String,
    pub strategy: String,
    pub all: Score,
    pub assigned: Score,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlayRow {
    pub play_id: String,
    pub team: String,
    pub hits: u64,
    pub total: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionEntry {
    pub strategy: String,
    pub truth: usize,
    pub pred: usize,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub n_examples: usize,
    /// One row per fixed strategy.
    pub rows: Vec<StrategyRow>,
    pub per_team: Vec<TeamRow>,
    /// Full-window results per play.
    pub per_play: Vec<PlayRow>,
    pub confusion: Vec<ConfusionEntry>,
}

impl EvalReport {
    pub fn row(&self, strategy: &TruncationStrategy) -> Option<&StrategyRow> {
        let label = strategy.label();
        self.rows.iter().find(|r| r.strategy == label)
    }

    pub fn team_row(&self, team: &str, strategy: &TruncationStrategy) -> Option<&TeamRow> {
        let label = strategy.label();
        self.per_team.iter().find(|r| r.team == team && r.strategy == label)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "strategy,start,end,pre_snap,accuracy,f1,n,accuracy_assigned,f1_assigned,n_assigned"
        )?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.strategy,
                r.start,
                r.end,
                r.pre_snap,
                r.all.accuracy,
                r.all.macro_f1,
                r.all.total,
                r.assigned.accuracy,
                r.assigned.macro_f1,
                r.assigned.total
            )?;
        }
        Ok(())
    }
}

fn end_label(s: &TruncationStrategy) -> String {
    match s.end {
        WindowEnd::Event(e) => e.label().to_string(),
        WindowEnd::Frame(f) => f.to_string(),
    }
}

/// Runs `predictor` on every example under each fixed truncation strategy.
pub fn evaluate_strategies<P: WindowPredictor + ?Sized>(predictor: &P, examples: &[Example]) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(Error::Data("no examples to evaluate".into()));
    }
    let task = predictor.task();
    let mut rows = Vec::new();
    let mut per_team = Vec::new();
    let mut per_play = Vec::new();
    let mut confusion = Vec::new();
    let full = full_window();
    for s in fixed_strategies() {
        let label = s.label();
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        let mut team_pairs: BTreeMap<&str, Vec<(usize, usize)>> = BTreeMap::new();
        for ex in examples {
            if targets_task(&ex.targets) != task {
                return Err(Error::Data(format!("example {} is not a {task} example", ex.play_id)));
            }
            let seq = apply_truncation(&ex.seq, &s)?;
            let out = predictor.predict_window(&seq, ex)?;
            let truth = ex.targets.rows();
            let pred = out.argmax();
            if pred.len() != truth.len() {
                return Err(Error::Shape(format!(
                    "{} predictions for {} labels in {}",
                    pred.len(),
                    truth.len(),
                    ex.play_id
                )));
            }
            let p: Vec<(usize, usize)> = pred.into_iter().zip(truth).collect();
            if s == full {
                per_play.push(PlayRow {
                    play_id: ex.play_id.clone(),
                    team: ex.defense_team.clone(),
                    hits: p.iter().filter(|(a, b)| a == b).count() as u64,
                    total: p.len() as u64,
                });
            }
            team_pairs.entry(&ex.defense_team).or_default().extend_from_slice(&p);
            pairs.extend(p);
        }
        let assigned_of = |v: &[(usize, usize)]| -> Score {
            if task == Task::Target {
                score(v)
            } else {
                let a: Vec<(usize, usize)> = v.iter().copied().filter(|&(_, t)| t != 0).collect();
                score(&a)
            }
        };
        for (team, v) in &team_pairs {
            per_team.push(TeamRow {
                team: team.to_string(),
                strategy: label.clone(),
                all: score(v),
                assigned: assigned_of(v),
            });
        }
        let mut counts: BTreeMap<(usize, usize), u64> = BTreeMap::new();
        for &(p, t) in &pairs {
            *counts.entry((t, p)).or_default() += 1;
        }
        confusion.extend(counts.into_iter().map(|((truth, pred), count)| ConfusionEntry {
            strategy: label.clone(),
            truth,
            pred,
            count,
        }));
        rows.push(StrategyRow {
            strategy: label.clone(),
            start: s.start,
            end: end_label(&s),
            pre_snap: s.end == WindowEnd::Event(EndEvent::Snap),
            all: score(&pairs),
            assigned: assigned_of(&pairs),
        });
    }
    Ok(EvalReport {
        task,
        n_examples: examples.len(),
        rows,
        per_team,
        per_play,
        confusion,
    })
}

fn targets_task(t: &Targets) -> Task {
    match t {
        Targets::Coverage(_) => Task::Coverage,
        Targets::Matchup(_) => Task::Matchup,
        Targets::Target(_) => Task::Target,
    }
}

/// Predicted coverage class per defender id.
pub fn coverage_assignments(play: &Play, out: &HeadOutput) -> Result<BTreeMap<String, CoverageClass>> {
    let defs = play.defenders();
    let pred = out.argmax();
    if out.task != Task::Coverage || pred.len() != defs.len() {
        return Err(Error::Shape(format!(
            "{} coverage output rows for {} defenders",
            pred.len(),
            defs.len()
        )));
    }
    Ok(defs
        .iter()
        .zip(pred)
        .map(|(&d, c)| (play.agents[d].agent_id.clone(), CoverageClass(c)))
        .collect())
}

/// Predicted matched receiver (or none) per defender id.
pub fn matchup_assignments(play: &Play, out: &HeadOutput) -> Result<BTreeMap<String, Option<String>>> {
    let defs = play.defenders();
    let recs = play.receivers();
    let pred = out.argmax();
    if out.task != Task::Matchup || pred.len() != defs.len() || out.logits.shape()[1] != recs.len() + 1 {
        return Err(Error::Shape(format!(
            "matchup output {:?} for {} defenders and {} receivers",
            out.logits.shape(),
            defs.len(),
            recs.len()
        )));
    }
    Ok(defs
        .iter()
        .zip(pred)
        .map(|(&d, c)| {
            let r = (c > 0).then(|| play.agents[recs[c - 1]].agent_id.clone());
            (play.agents[d].agent_id.clone(), r)
        })
        .collect())
}

#[cfg(test)]
mod tests;
