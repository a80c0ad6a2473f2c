use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{LabelSet, Play};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Coverage,
    Matchup,
    Target,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Coverage, Task::Matchup, Task::Target];

    pub fn name(self) -> &'static str {
        match self {
            Task::Coverage => "coverage",
            Task::Matchup => "matchup",
            Task::Target => "target",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown task {s:?} (coverage|matchup|target)")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FilterDecision {
    Keep,
    Reject(String),
}

impl FilterDecision {
    pub fn is_keep(&self) -> bool {
        matches!(self, FilterDecision::Keep)
    }
}

/// Keeps passing plays with valid events, intact invariants and annotations for
/// `task`.
pub fn filter_play(play: &Play, labels: &LabelSet, task: Task) -> FilterDecision {
    if play.events.pass_forward.is_none() {
        return FilterDecision::Reject("no pass forward".into());
    }
    if let Err(e) = play.validate(None) {
        return FilterDecision::Reject(format!("invalid play: {e}"));
    }
    if let Err(e) = labels.validate(play) {
        return FilterDecision::Reject(format!("invalid labels: {e}"));
    }
    let defenders: Vec<&str> = play
        .defenders()
        .into_iter()
        .map(|i| play.agents[i].agent_id.as_str())
        .collect();
    let complete = match task {
        Task::Coverage => labels
            .coverage
            .as_ref()
            .is_some_and(|c| defenders.iter().all(|d| c.contains_key(*d))),
        Task::Matchup => labels
            .matchup
            .as_ref()
            .is_some_and(|m| defenders.iter().all(|d| m.contains_key(*d))),
        Task::Target => labels.target_defender.is_some() && labels.targeted_receiver.is_some(),
    };
    if complete {
        FilterDecision::Keep
    } else {
        FilterDecision::Reject("missing annotation".into())
    }
}
