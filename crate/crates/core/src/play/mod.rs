//! Plays, agents, labels and the JSONL play format.

mod features;
mod filter;
mod io;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Deserializer, Serialize};

pub use features::{
    extract_sequence, normalize_direction, EndEvent, Sequence, SequenceEvents, FEATURE_NAMES,
    N_FEATURES,
};
pub use filter::{filter_play, FilterDecision, Task};
pub use io::{parse_plays, parse_plays_str, parse_line, write_plays, LineError, ParseConfig, ParseReport, PlayRecord};

use crate::vocab::{CoverageClass, Scheme};

pub const FIELD_LENGTH: f64 = 120.0;
pub const FIELD_WIDTH: f64 = 53.3;
/// Frames of pre-snap context every play must carry.
pub const PRE_SNAP_FRAMES: usize = 30;
/// Tracking sample rate.
pub const FRAME_HZ: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TeamSide {
    Offense,
    Defense,
}

impl TeamSide {
    pub fn index(self) -> usize {
        match self {
            TeamSide::Offense => 0,
            TeamSide::Defense => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub agent_id: String,
    pub team_side: TeamSide,
    pub position: String,
    pub eligible_receiver: bool,
}

impl Agent {
    pub fn is_defense(&self) -> bool {
        self.team_side == TeamSide::Defense
    }
}

/// One agent's state in one frame. Angles in degrees, 0 = +x.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentFrame {
    pub x: f64,
    pub y: f64,
    pub o: f64,
    pub dir: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlayDirection {
    Left,
    Right,
}

/// Raw frame indices of the anchoring events.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlayEvents {
    pub snap: usize,
    #[serde(default)]
    pub pass_forward: Option<usize>,
    #[serde(default)]
    pub pass_arrival: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Situation {
    pub down: u8,
    pub distance: f64,
    /// Yards from the offense's own goal line.
    pub yard_line: f64,
    pub game_clock_s: f64,
    pub team_scheme: Scheme,
}

impl Situation {
    /// Line of scrimmage on the normalized (left-to-right) field.
    pub fn los_x(&self) -> f64 {
        10.0 + self.yard_line
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Play {
    pub play_id: String,
    pub play_direction: PlayDirection,
    pub situation: Situation,
    pub events: PlayEvents,
    pub agents: Vec<Agent>,
    /// `frames[t][agent]` at 10 Hz.
    pub frames: Vec<Vec<AgentFrame>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defense_team: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offense_team: Option<String>,
}

fn present<'de, D, T>(d: D) -> std::result::Result<Option<Option<T>>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    Option::<T>::deserialize(d).map(Some)
}

/// Ground truth for the three tasks. A missing field means the annotation is
/// absent; `target_defender: Some(None)` is an explicit "no target defender".
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelSet {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<BTreeMap<String, CoverageClass>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matchup: Option<BTreeMap<String, Option<String>>>,
    #[serde(default, deserialize_with = "present", skip_serializing_if = "Option::is_none")]
    pub target_defender: Option<Option<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targeted_receiver: Option<String>,
}

impl Play {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn agent_index(&self, id: &str) -> Option<usize> {
        self.agents.iter().position(|a| a.agent_id == id)
    }

    /// Indices of defenders, in roster order.
    pub fn defenders(&self) -> Vec<usize> {
        (0..self.agents.len())
            .filter(|&i| self.agents[i].is_defense())
            .collect()
    }

    /// Indices of eligible receivers, in roster order.
    pub fn receivers(&self) -> Vec<usize> {
        (0..self.agents.len())
            .filter(|&i| self.agents[i].eligible_receiver)
            .collect()
    }

    pub fn qb(&self) -> Option<usize> {
        self.agents.iter().position(|a| a.position == "QB")
    }

    pub fn snap_frame(&self) -> &[AgentFrame] {
        &self.frames[self.events.snap]
    }

    /// Checks the structural invariants; `required_defenders` pins the defensive
    /// roster size.
    pub fn validate(&self, required_defenders: Option<usize>) -> std::result::Result<(), String> {
        if self.play_id.is_empty() {
            return Err("empty play_id".into());
        }
        let mut seen = HashSet::new();
        for a in &self.agents {
            if !seen.insert(a.agent_id.as_str()) {
                return Err(format!("duplicate agent_id {}", a.agent_id));
            }
            if a.eligible_receiver && a.team_side != TeamSide::Offense {
                return Err(format!("eligible receiver {} is not on offense", a.agent_id));
            }
        }
        let qbs = self.agents.iter().filter(|a| a.position == "QB").count();
        if qbs != 1 {
            return Err(format!("expected exactly one QB, found {qbs}"));
        }
        if let Some(q) = self.qb() {
            if self.agents[q].team_side != TeamSide::Offense {
                return Err("QB is not on offense".into());
            }
        }
        let n_def = self.defenders().len();
        if let Some(req) = required_defenders {
            if n_def != req {
                return Err(format!("expected {req} defenders, found {n_def}"));
            }
        }
        if n_def == 0 {
            return Err("no defenders".into());
        }
        if self.receivers().is_empty() {
            return Err("no eligible receivers".into());
        }
        if !(1..=4).contains(&self.situation.down) {
            return Err(format!("down {} outside 1-4", self.situation.down));
        }
        let s = &self.situation;
        if !(s.distance.is_finite() && s.yard_line.is_finite() && s.game_clock_s.is_finite()) {
            return Err("non-finite situation field".into());
        }
        if !(0.0..=100.0).contains(&s.yard_line) {
            return Err(format!("yard_line {} outside 0-100", s.yard_line));
        }
        let n = self.agents.len();
        for (t, f) in self.frames.iter().enumerate() {
            if f.len() != n {
                return Err(format!("frame {t} has {} agents, roster has {n}", f.len()));
            }
            for (i, a) in f.iter().enumerate() {
                let finite = a.x.is_finite() && a.y.is_finite() && a.o.is_finite() && a.dir.is_finite();
                if !finite || a.s.is_some_and(|s| !s.is_finite() || s < 0.0) {
                    return Err(format!("frame {t} agent {i}: non-finite value"));
                }
                if !(0.0..=FIELD_LENGTH).contains(&a.x) || !(0.0..=FIELD_WIDTH).contains(&a.y) {
                    return Err(format!("frame {t} agent {i}: position ({}, {}) off the field", a.x, a.y));
                }
                if !(0.0..360.0).contains(&a.o) || !(0.0..360.0).contains(&a.dir) {
                    return Err(format!("frame {t} agent {i}: angle outside [0, 360)"));
                }
            }
        }
        let ev = &self.events;
        let (Some(pf), Some(pa)) = (ev.pass_forward, ev.pass_arrival) else {
            return Err("missing event".into());
        };
        if !(ev.snap < pf && pf <= pa) {
            return Err(format!(
                "events out of order: snap {}, pass_forward {pf}, pass_arrival {pa}",
                ev.snap
            ));
        }
        if pa >= self.frames.len() {
            return Err(format!(
                "pass_arrival frame {pa} beyond {} recorded frames",
                self.frames.len()
            ));
        }
        if ev.snap < PRE_SNAP_FRAMES {
            return Err(format!(
                "snap at frame {} leaves fewer than {PRE_SNAP_FRAMES} pre-snap frames",
                ev.snap
            ));
        }
        Ok(())
    }
}

impl LabelSet {
    /// Consistency of labels against the play's roster.
    pub fn validate(&self, play: &Play) -> std::result::Result<(), String> {
        let is_def = |id: &str| play.agent_index(id).is_some_and(|i| play.agents[i].is_defense());
        let is_rec = |id: &str| play.agent_index(id).is_some_and(|i| play.agents[i].eligible_receiver);
        if let Some(cov) = &self.coverage {
            for id in cov.keys() {
                if !is_def(id) {
                    return Err(format!("coverage label for non-defender {id}"));
                }
            }
        }
        if let Some(m) = &self.matchup {
            for (d, r) in m {
                if !is_def(d) {
                    return Err(format!("matchup label for non-defender {d}"));
                }
                if let Some(r) = r {
                    if !is_rec(r) {
                        return Err(format!("matchup receiver {r} is not an eligible receiver"));
                    }
                }
            }
        }
        if let Some(Some(t)) = &self.target_defender {
            if !is_def(t) {
                return Err(format!("target defender {t} is not a defender"));
            }
        }
        if let Some(r) = &self.targeted_receiver {
            if !is_rec(r) {
                return Err(format!("targeted receiver {r} is not an eligible receiver"));
            }
        }
        Ok(())
    }
}
