//! Task-specific training examples built from labeled plays.

use crate::augmentation::MIN_START;
use crate::error::{Error, Result};
use crate::model::{HeadOutput, PlayContext};
use crate::play::{extract_sequence, filter_play, EndEvent, LabelSet, Play, Sequence, Task};

/// Team name used when a play does not record its defense.
pub const UNKNOWN_TEAM: &str = "UNKNOWN";

/// Class indices in head-output order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Targets {
    /// Coverage class per defender.
    Coverage(Vec<usize>),
    /// Per defender: 0 = no matchup, `1 + k` = k-th receiver.
    Matchup(Vec<usize>),
    /// Index of the target defender among the defenders.
    Target(usize),
}

impl Targets {
    /// Class index per output row.
    pub fn rows(&self) -> Vec<usize> {
        match self {
            Targets::Coverage(v) | Targets::Matchup(v) => v.clone(),
            Targets::Target(d) => vec![*d],
        }
    }

    /// Correct argmax rows and total rows.
    pub fn hits(&self, out: &HeadOutput) -> (usize, usize) {
        let rows = self.rows();
        let pred = out.argmax();
        let hits = pred.iter().zip(&rows).filter(|(p, t)| p == t).count();
        (hits, rows.len())
    }
}

/// One play prepared for a task: the full `(-30, pass_arrival)` window.
#[derive(Clone, Debug)]
pub struct Example {
    pub play_id: String,
    pub defense_team: String,
    pub seq: Sequence,
    pub ctx: PlayContext,
    pub targets: Targets,
}

/// Why a play was left out of a task's examples.
#[derive(Clone, Debug, PartialEq)]
pub struct Skipped {
    pub play_id: String,
    pub reason: String,
}

/// Builds examples for `task`. Plays failing the task filter are skipped, as
/// are target plays whose label is "no defender".
pub fn build_examples(plays: &[(Play, LabelSet)], task: Task) -> (Vec<Example>, Vec<Skipped>) {
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    for (play, labels) in plays {
        match build_example(play, labels, task) {
            Ok(Some(ex)) => out.push(ex),
            Ok(None) => skipped.push(Skipped {
                play_id: play.play_id.clone(),
                reason: "no target defender".into(),
            }),
            Err(e) => skipped.push(Skipped {
                play_id: play.play_id.clone(),
                reason: e.to_string(),
            }),
        }
    }
    (out, skipped)
}

pub fn build_example(play: &Play, labels: &LabelSet, task: Task) -> Result<Option<Example>> {
    if let crate::play::FilterDecision::Reject(r) = filter_play(play, labels, task) {
        return Err(Error::Data(r));
    }
    let tr = if task == Task::Target {
        labels.targeted_receiver.as_deref()
    } else {
        None
    };
    let ctx = PlayContext::from_play(play, tr)?;
    let id_of = |i: usize| play.agents[i].agent_id.as_str();
    let targets = match task {
        Task::Coverage => {
            let cov = labels.coverage.as_ref().expect("filtered");
            let v = ctx
                .defenders
                .iter()
                .map(|&d| {
                    cov.get(id_of(d))
                        .map(|c| c.0)
                        .ok_or_else(|| Error::Data(format!("no coverage label for {}", id_of(d))))
                })
                .collect::<Result<Vec<_>>>()?;
            Targets::Coverage(v)
        }
        Task::Matchup => {
            let m = labels.matchup.as_ref().expect("filtered");
            let v = ctx
                .defenders
                .iter()
                .map(|&d| match m.get(id_of(d)) {
                    None => Err(Error::Data(format!("no matchup label for {}", id_of(d)))),
                    Some(None) => Ok(0),
                    Some(Some(r)) => ctx
                        .receivers
                        .iter()
                        .position(|&i| id_of(i) == r)
                        .map(|k| k + 1)
                        .ok_or_else(|| Error::Data(format!("matchup receiver {r} is not a receiver"))),
                })
                .collect::<Result<Vec<_>>>()?;
            Targets::Matchup(v)
        }
        Task::Target => match labels.target_defender.as_ref().expect("filtered") {
            None => return Ok(None),
            Some(id) => {
                let k = ctx
                    .defenders
                    .iter()
                    .position(|&i| id_of(i) == id)
                    .ok_or_else(|| Error::Data(format!("target defender {id} is not a defender")))?;
                Targets::Target(k)
            }
        },
    };
    let seq = extract_sequence(play, MIN_START, EndEvent::PassArrival)?;
    Ok(Some(Example {
        play_id: play.play_id.clone(),
        defense_team: play.defense_team.clone().unwrap_or_else(|| UNKNOWN_TEAM.to_string()),
        seq,
        ctx,
        targets,
    }))
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Hash-based split: a play goes to validation when its id hash falls in the
/// lowest `fraction` of the range.
pub fn is_validation(play_id: &str, fraction: f64) -> bool {
    (fnv1a(play_id.as_bytes()) % 10_000) < (fraction * 10_000.0).round() as u64
}
