//! Play-level target-defender evaluation: nearest-defender baseline, raw
//! model, and rule-based post-processing.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::matchup_assignments;
use crate::augmentation::MIN_START;
use crate::error::{Error, Result};
use crate::model::{Model, PlayContext};
use crate::numerics::Real;
use crate::play::{extract_sequence, filter_play, AgentFrame, EndEvent, LabelSet, Play, PlayDirection, Task, FIELD_LENGTH};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PostprocessConfig {
    /// Below this max probability the rules take over.
    pub threshold: f64,
    /// Depth beyond the line counted as "deep" at the snap.
    pub deep_yards: f64,
    pub min_deep: usize,
    /// Clock at or under which the late-game condition holds.
    pub late_clock_s: f64,
    /// Treat every play as a protect-the-lead situation.
    pub assume_lead: bool,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            deep_yards: 15.0,
            min_deep: 4,
            late_clock_s: 120.0,
            assume_lead: false,
        }
    }
}

/// x on the left-to-right field.
fn norm_x(play: &Play, f: &AgentFrame) -> f64 {
    match play.play_direction {
        PlayDirection::Right => f.x,
        PlayDirection::Left => FIELD_LENGTH - f.x,
    }
}

fn arrival_frame(play: &Play) -> Result<&[AgentFrame]> {
    let pa = play
        .events
        .pass_arrival
        .ok_or_else(|| Error::Data(format!("{} has no pass_arrival", play.play_id)))?;
    play.frames
        .get(pa)
        .map(|v| v.as_slice())
        .ok_or_else(|| Error::Data(format!("{} pass_arrival frame {pa} not recorded", play.play_id)))
}

fn receiver_index(play: &Play, id: &str) -> Result<usize> {
    play.agent_index(id)
        .ok_or_else(|| Error::Data(format!("{} has no agent {id}", play.play_id)))
}

/// Deep shell at the snap in a late-game situation.
pub fn preventative_alignment(play: &Play, cfg: &PostprocessConfig) -> bool {
    let Some(snap) = play.frames.get(play.events.snap) else {
        return false;
    };
    let los = play.situation.los_x();
    let deep = play
        .defenders()
        .into_iter()
        .filter(|&d| norm_x(play, &snap[d]) - los > cfg.deep_yards)
        .count();
    deep >= cfg.min_deep && (play.situation.game_clock_s <= cfg.late_clock_s || cfg.assume_lead)
}

/// Whether the targeted receiver is behind the line of scrimmage at arrival.
pub fn catch_behind_los(play: &Play, targeted_receiver: &str) -> Result<bool> {
    let r = receiver_index(play, targeted_receiver)?;
    let f = arrival_frame(play)?;
    Ok(norm_x(play, &f[r]) < play.situation.los_x())
}

/// Defender closest to the targeted receiver at pass arrival; ties go to the
/// smallest agent id.
pub fn nearest_defender_baseline(play: &Play, targeted_receiver: &str) -> Result<String> {
    let r = receiver_index(play, targeted_receiver)?;
    let f = arrival_frame(play)?;
    let (rx, ry) = (f[r].x, f[r].y);
    play.defenders()
        .into_iter()
        .map(|d| {
            let dist = (f[d].x - rx).hypot(f[d].y - ry);
            (dist, play.agents[d].agent_id.as_str())
        })
        .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)))
        .map(|(_, id)| id.to_string())
        .ok_or_else(|| Error::Data(format!("{} has no defenders", play.play_id)))
}

/// Final target label from masked target probabilities over
/// `[defenders..., targeted receiver]`.
///
/// A confident model is trusted. Otherwise a preventative alignment or a catch
/// behind the line means no target defender; failing that, the defender the
/// matchup model puts on the targeted receiver wins (highest target
/// probability among several), then the model's argmax.
pub fn target_postprocess(
    target_probs: &[f64],
    play: &Play,
    targeted_receiver: &str,
    matchup: Option<&BTreeMap<String, Option<String>>>,
    cfg: &PostprocessConfig,
) -> Result<Option<String>> {
    let defs = play.defenders();
    if target_probs.len() != defs.len() + 1 {
        return Err(Error::Shape(format!(
            "{} target probabilities for {} defenders",
            target_probs.len(),
            defs.len()
        )));
    }
    let def_probs = &target_probs[..defs.len()];
    let (best, pmax) = def_probs
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
    let argmax = Some(play.agents[defs[best]].agent_id.clone());
    if pmax >= cfg.threshold {
        return Ok(argmax);
    }
    if preventative_alignment(play, cfg) || catch_behind_los(play, targeted_receiver)? {
        return Ok(None);
    }
    if let Some(m) = matchup {
        let matched = defs
            .iter()
            .enumerate()
            .filter(|(_, &d)| m.get(&play.agents[d].agent_id).and_then(|r| r.as_deref()) == Some(targeted_receiver))
            .max_by(|a, b| def_probs[a.0].total_cmp(&def_probs[b.0]).then_with(|| b.0.cmp(&a.0)));
        if let Some((_, &d)) = matched {
            return Ok(Some(play.agents[d].agent_id.clone()));
        }
    }
    Ok(argmax)
}

/// Fraction of plays whose label (a defender or none) matches exactly.
pub fn target_accuracy(predictions: &[Option<String>], labels: &[Option<String>]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::InvalidArgument("no predictions".into()));
    }
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / predictions.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetPlayRow {
    pub play_id: String,
    pub truth: Option<String>,
    pub baseline: String,
    pub raw: String,
    pub postprocessed: Option<String>,
    pub max_prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetReport {
    pub n_plays: usize,
    pub baseline_accuracy: f64,
    pub raw_accuracy: f64,
    pub postprocessed_accuracy: f64,
    /// Plays whose label the rules changed.
    pub n_changed: usize,
    pub plays: Vec<TargetPlayRow>,
}

impl TargetReport {
    /// Three rows: baseline, model, model with rules.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "method,accuracy,n_plays")?;
        for (m, a) in [
            ("nearest_defender", self.baseline_accuracy),
            ("transformer", self.raw_accuracy),
            ("transformer_postprocessed", self.postprocessed_accuracy),
        ] {
            writeln!(out, "{m},{a},{}", self.n_plays)?;
        }
        Ok(())
    }
}

/// Scores the baseline, the raw target model and the post-processed labels on
/// every play that passes the target filter, "no target defender" included.
/// Full windows throughout.
pub fn evaluate_target<R: Real>(
    target: &Model<R>,
    matchup: Option<&Model<R>>,
    plays: &[(Play, LabelSet)],
    cfg: &PostprocessConfig,
) -> Result<TargetReport> {
    if target.task() != Task::Target {
        return Err(Error::InvalidArgument(format!("expected a target model, got {}", target.task())));
    }
    if let Some(m) = matchup {
        if m.task() != Task::Matchup {
            return Err(Error::InvalidArgument(format!("expected a matchup model, got {}", m.task())));
        }
    }
    let mut rows = Vec::new();
    for (play, labels) in plays {
        if !filter_play(play, labels, Task::Target).is_keep() {
            continue;
        }
        let tr = labels.targeted_receiver.as_deref().expect("filtered");
        let truth = labels.target_defender.clone().expect("filtered");
        let seq = extract_sequence(play, MIN_START, EndEvent::PassArrival)?;
        let ctx = PlayContext::from_play(play, Some(tr))?;
        let probs = target.predict(&seq, &ctx)?.probs()?;
        let p = probs.data();
        let defs = play.defenders();
        let (best, max_prob) = p[..defs.len()]
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
        let m = match matchup {
            Some(mm) => {
                let mctx = PlayContext::from_play(play, None)?;
                Some(matchup_assignments(play, &mm.predict(&seq, &mctx)?)?)
            }
            None => None,
        };
        rows.push(TargetPlayRow {
            play_id: play.play_id.clone(),
            truth,
            baseline: nearest_defender_baseline(play, tr)?,
            raw: play.agents[defs[best]].agent_id.clone(),
            postprocessed: target_postprocess(p, play, tr, m.as_ref(), cfg)?,
            max_prob,
        });
    }
    if rows.is_empty() {
        return Err(Error::Data("no plays with target labels".into()));
    }
    let truth: Vec<Option<String>> = rows.iter().map(|r| r.truth.clone()).collect();
    let base: Vec<Option<String>> = rows.iter().map(|r| Some(r.baseline.clone())).collect();
    let raw: Vec<Option<String>> = rows.iter().map(|r| Some(r.raw.clone())).collect();
    let post: Vec<Option<String>> = rows.iter().map(|r| r.postprocessed.clone()).collect();
    Ok(TargetReport {
        n_plays: rows.len(),
        baseline_accuracy: target_accuracy(&base, &truth)?,
        raw_accuracy: target_accuracy(&raw, &truth)?,
        postprocessed_accuracy: target_accuracy(&post, &truth)?,
        n_changed: rows.iter().filter(|r| r.postprocessed.as_deref() != Some(r.raw.as_str())).count(),
        plays: rows,
    })
}
