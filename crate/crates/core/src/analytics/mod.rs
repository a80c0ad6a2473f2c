//! Disguise rates from pre-snap coverage accuracy, and double-coverage
//! detection from coverage plus matchup assignments.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::augmentation::{apply_truncation, full_window, TruncationStrategy, MIN_START};
use crate::error::{Error, Result};
use crate::evaluation::{coverage_assignments, matchup_assignments, EvalReport, WindowPredictor};
use crate::model::{Model, PlayContext};
use crate::numerics::Real;
use crate::play::{extract_sequence, filter_play, EndEvent, LabelSet, Play, Task};
use crate::training::{Example, UNKNOWN_TEAM};
use crate::vocab::CoverageClass;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisguiseRow {
    pub team_id: String,
    pub n_plays: usize,
    /// Per-defender coverage accuracy on `(-30, snap)` windows.
    pub presnap_accuracy: f64,
    /// Same on `(-30, pass_arrival)` windows.
    pub full_accuracy: f64,
    pub gap: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DisguiseTable {
    /// Ascending by pre-snap accuracy: most deceptive first.
    pub rows: Vec<DisguiseRow>,
    /// Teams left out, with the reason.
    pub excluded: Vec<String>,
}

impl DisguiseTable {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "team_id,n_plays,presnap_accuracy,full_accuracy,gap")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.team_id, r.n_plays, r.presnap_accuracy, r.full_accuracy, r.gap
            )?;
        }
        Ok(())
    }
}

fn presnap_window() -> TruncationStrategy {
    TruncationStrategy::fixed(MIN_START, EndEvent::Snap)
}

fn build_table(per_team: BTreeMap<String, (usize, [(u64, u64); 2])>) -> DisguiseTable {
    let mut t = DisguiseTable::default();
    for (team, (n, [(ph, pt), (fh, ft)])) in per_team {
        if n == 0 || pt == 0 || ft == 0 {
            t.excluded.push(format!("{team}: no coverage defenders to score"));
            continue;
        }
        let pre = ph as f64 / pt as f64;
        let full = fh as f64 / ft as f64;
        t.rows.push(DisguiseRow {
            team_id: team,
            n_plays: n,
            presnap_accuracy: pre,
            full_accuracy: full,
            gap: full - pre,
        });
    }
    t.rows.sort_by(|a, b| {
        a.presnap_accuracy
            .total_cmp(&b.presnap_accuracy)
            .then_with(|| a.team_id.cmp(&b.team_id))
    });
    t
}

/// Per-team pre-snap and full-window accuracy on coverage defenders.
pub fn disguise_table<P: WindowPredictor + ?Sized>(model: &P, examples: &[Example]) -> Result<DisguiseTable> {
    if model.task() != Task::Coverage {
        return Err(Error::InvalidArgument(format!("disguise needs a coverage model, got {}", model.task())));
    }
    let windows = [presnap_window(), full_window()];
    let mut per_team: BTreeMap<String, (usize, [(u64, u64); 2])> = BTreeMap::new();
    for ex in examples {
        let e = per_team.entry(ex.defense_team.clone()).or_default();
        e.0 += 1;
        let truth = ex.targets.rows();
        for (k, w) in windows.iter().enumerate() {
            let out = model.predict_window(&apply_truncation(&ex.seq, w)?, ex)?;
            for (p, &t) in out.argmax().into_iter().zip(&truth) {
                if t != CoverageClass::NO_ASSIGNMENT.0 {
                    e.1[k].1 += 1;
                    e.1[k].0 += (p == t) as u64;
                }
            }
        }
    }
    Ok(build_table(per_team))
}

/// The same table read off a coverage strategy sweep.
pub fn disguise_table_from_report(report: &EvalReport) -> Result<DisguiseTable> {
    if report.task != Task::Coverage {
        return Err(Error::InvalidArgument(format!("disguise needs a coverage report, got {}", report.task)));
    }
    let mut plays: BTreeMap<&str, usize> = BTreeMap::new();
    for p in &report.per_play {
        *plays.entry(&p.team).or_default() += 1;
    }
    let mut per_team: BTreeMap<String, (usize, [(u64, u64); 2])> = BTreeMap::new();
    for (team, n) in plays {
        let mut counts = [(0, 0); 2];
        for (k, w) in [presnap_window(), full_window()].iter().enumerate() {
            let r = report
                .team_row(team, w)
                .ok_or_else(|| Error::Data(format!("report has no {} row for {team}", w.label())))?;
            counts[k] = (r.assigned.hits, r.assigned.total);
        }
        per_team.insert(team.to_string(), (n, counts));
    }
    Ok(build_table(per_team))
}

/// One receiver matched by two or more man-class defenders.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Detection {
    pub receiver: String,
    /// Sorted defender ids.
    pub defenders: Vec<String>,
}

/// Receivers that at least two man-class defenders are matched to.
pub fn detect_double_coverage(
    coverage: &BTreeMap<String, CoverageClass>,
    matchup: &BTreeMap<String, Option<String>>,
) -> Vec<Detection> {
    let mut by_rec: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for (d, r) in matchup {
        if let (Some(r), Some(c)) = (r, coverage.get(d)) {
            if c.is_man() {
                by_rec.entry(r).or_default().insert(d);
            }
        }
    }
    by_rec
        .into_iter()
        .filter(|(_, ds)| ds.len() >= 2)
        .map(|(r, ds)| Detection {
            receiver: r.to_string(),
            defenders: ds.into_iter().map(str::to_string).collect(),
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    Receiver,
    DefenseTeam,
}

impl std::str::FromStr for GroupBy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "receiver" => Ok(GroupBy::Receiver),
            "defense_team" | "defense-team" | "team" => Ok(GroupBy::DefenseTeam),
            _ => Err(Error::InvalidArgument(format!(
                "unknown group {s:?} (expected receiver or defense_team)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoubleCoverageRow {
    pub entity_id: String,
    pub plays_eligible: u64,
    pub double_covered_plays: u64,
    pub rate: f64,
    pub gt_double_covered_plays: u64,
    pub gt_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoubleCoverageTable {
    pub group_by: GroupBy,
    pub n_plays: usize,
    /// Plays with at least one detection.
    pub plays_detected: u64,
    pub gt_plays_detected: u64,
    pub global_rate: f64,
    pub gt_global_rate: f64,
    /// Descending by rate, then by id.
    pub rows: Vec<DoubleCoverageRow>,
}

impl DoubleCoverageTable {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "entity_id,plays_eligible,double_covered_plays,rate,gt_double_covered_plays,gt_rate"
        )?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.entity_id, r.plays_eligible, r.double_covered_plays, r.rate, r.gt_double_covered_plays, r.gt_rate
            )?;
        }
        Ok(())
    }
}

fn eligible(play: &Play, labels: &LabelSet) -> bool {
    filter_play(play, labels, Task::Coverage).is_keep() && filter_play(play, labels, Task::Matchup).is_keep()
}

/// Aggregates detections per entity. `predicted[i]` are the detections for
/// the i-th eligible play; when absent, the ground-truth detections stand in.
pub fn double_coverage_table(
    plays: &[(Play, LabelSet)],
    predicted: Option<&[Vec<Detection>]>,
    group_by: GroupBy,
) -> Result<DoubleCoverageTable> {
    let elig: Vec<&(Play, LabelSet)> = plays.iter().filter(|(p, l)| eligible(p, l)).collect();
    if let Some(pred) = predicted {
        if pred.len() != elig.len() {
            return Err(Error::Shape(format!(
                "{} prediction sets for {} eligible plays",
                pred.len(),
                elig.len()
            )));
        }
    }
    // entity -> (eligible, model, truth)
    let mut acc: BTreeMap<String, (u64, u64, u64)> = BTreeMap::new();
    let (mut det, mut gt_det) = (0u64, 0u64);
    for (i, (play, labels)) in elig.iter().enumerate() {
        let gt = detect_double_coverage(labels.coverage.as_ref().unwrap(), labels.matchup.as_ref().unwrap());
        let md = predicted.map(|p| p[i].as_slice()).unwrap_or(&gt);
        det += (!md.is_empty()) as u64;
        gt_det += (!gt.is_empty()) as u64;
        match group_by {
            GroupBy::Receiver => {
                for r in play.receivers() {
                    let id = &play.agents[r].agent_id;
                    let e = acc.entry(id.clone()).or_default();
                    e.0 += 1;
                    e.1 += md.iter().any(|d| &d.receiver == id) as u64;
                    e.2 += gt.iter().any(|d| &d.receiver == id) as u64;
                }
            }
            GroupBy::DefenseTeam => {
                let team = play.defense_team.clone().unwrap_or_else(|| UNKNOWN_TEAM.to_string());
                let e = acc.entry(team).or_default();
                e.0 += 1;
                e.1 += (!md.is_empty()) as u64;
                e.2 += (!gt.is_empty()) as u64;
            }
        }
    }
    let n = elig.len();
    let mut rows: Vec<DoubleCoverageRow> = acc
        .into_iter()
        .filter(|(_, (e, _, _))| *e > 0)
        .map(|(id, (e, m, g))| DoubleCoverageRow {
            entity_id: id,
            plays_eligible: e,
            double_covered_plays: m,
            rate: m as f64 / e as f64,
            gt_double_covered_plays: g,
            gt_rate: g as f64 / e as f64,
        })
        .collect();
    rows.sort_by(|a, b| b.rate.total_cmp(&a.rate).then_with(|| a.entity_id.cmp(&b.entity_id)));
    let rate = |k: u64| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    Ok(DoubleCoverageTable {
        group_by,
        n_plays: n,
        plays_detected: det,
        gt_plays_detected: gt_det,
        global_rate: rate(det),
        gt_global_rate: rate(gt_det),
        rows,
    })
}

/// Full-window detections from the two models for every eligible play.
pub fn predict_detections<R: Real>(
    coverage: &Model<R>,
    matchup: &Model<R>,
    plays: &[(Play, LabelSet)],
) -> Result<Vec<Vec<Detection>>> {
    if coverage.task() != Task::Coverage || matchup.task() != Task::Matchup {
        return Err(Error::InvalidArgument("need a coverage model and a matchup model".into()));
    }
    plays
        .iter()
        .filter(|(p, l)| eligible(p, l))
        .map(|(play, _)| {
            let seq = extract_sequence(play, MIN_START, EndEvent::PassArrival)?;
            let ctx = PlayContext::from_play(play, None)?;
            let c = coverage_assignments(play, &coverage.predict(&seq, &ctx)?)?;
            let m = matchup_assignments(play, &matchup.predict(&seq, &ctx)?)?;
            Ok(detect_double_coverage(&c, &m))
        })
        .collect()
}

/// Model-based table with the ground-truth columns alongside.
pub fn double_coverage_rates<R: Real>(
    coverage: &Model<R>,
    matchup: &Model<R>,
    plays: &[(Play, LabelSet)],
    group_by: GroupBy,
) -> Result<DoubleCoverageTable> {
    let pred = predict_detections(coverage, matchup, plays)?;
    double_coverage_table(plays, Some(&pred), group_by)
}
