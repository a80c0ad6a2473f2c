use serde::{Deserialize, Serialize};

use super::{Play, PlayDirection, FIELD_LENGTH, FIELD_WIDTH, FRAME_HZ, PRE_SNAP_FRAMES};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const FEATURE_NAMES: [&str; 9] = [
    "x_norm",
    "y_norm",
    "sin_orientation",
    "cos_orientation",
    "sin_direction",
    "cos_direction",
    "speed_scaled",
    "post_snap",
    "depth_from_los",
];
pub const N_FEATURES: usize = FEATURE_NAMES.len();

const SPEED_SCALE: f64 = 10.0;
const DEPTH_SCALE: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndEvent {
    Snap,
    PassForward,
    PassArrival,
}

impl EndEvent {
    pub fn label(self) -> &'static str {
        match self {
            EndEvent::Snap => "snap",
            EndEvent::PassForward => "pass forward",
            EndEvent::PassArrival => "pass arrival",
        }
    }
}

/// Event positions as frame offsets from the snap.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceEvents {
    pub pass_forward: i32,
    pub pass_arrival: i32,
}

impl SequenceEvents {
    pub fn offset(&self, e: EndEvent) -> i32 {
        match e {
            EndEvent::Snap => 0,
            EndEvent::PassForward => self.pass_forward,
            EndEvent::PassArrival => self.pass_arrival,
        }
    }
}

/// Per-agent, per-frame features over an inclusive window; frame `t` sits at
/// offset `start + t` from the snap.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    /// `[agents, frames, N_FEATURES]`.
    pub features: Tensor<f64>,
    pub start: i32,
    pub events: SequenceEvents,
}

impl Sequence {
    pub fn n_agents(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn n_frames(&self) -> usize {
        self.features.shape()[1]
    }

    /// Offset from the snap of the last frame.
    pub fn end(&self) -> i32 {
        self.start + self.n_frames() as i32 - 1
    }

    pub fn frame_offsets(&self) -> Vec<i32> {
        (self.start..=self.end()).collect()
    }

    /// Contiguous sub-window `[start, end]` (offsets from the snap, inclusive).
    pub fn slice(&self, start: i32, end: i32) -> Result<Sequence> {
        if start > end {
            return Err(Error::InvalidArgument(format!("empty window [{start}, {end}]")));
        }
        if start < self.start || end > self.end() {
            return Err(Error::InvalidArgument(format!(
                "window [{start}, {end}] outside available [{}, {}]",
                self.start,
                self.end()
            )));
        }
        let (a, t, f) = (self.n_agents(), self.n_frames(), N_FEATURES);
        let lo = (start - self.start) as usize;
        let len = (end - start + 1) as usize;
        let src = self.features.data();
        let mut out = Vec::with_capacity(a * len * f);
        for ag in 0..a {
            let base = (ag * t + lo) * f;
            out.extend_from_slice(&src[base..base + len * f]);
        }
        Ok(Sequence {
            features: Tensor::new(vec![a, len, f], out)?,
            start,
            events: self.events,
        })
    }
}

fn rotate(deg: f64) -> f64 {
    (deg + 180.0).rem_euclid(360.0)
}

/// Maps a play onto the left-to-right frame: a left play is reflected through
/// the field centre and its angles turned by 180 degrees.
pub fn normalize_direction(play: &Play) -> Play {
    let mut out = play.clone();
    if play.play_direction == PlayDirection::Left {
        for frame in &mut out.frames {
            for a in frame {
                a.x = FIELD_LENGTH - a.x;
                a.y = FIELD_WIDTH - a.y;
                a.o = rotate(a.o);
                a.dir = rotate(a.dir);
            }
        }
        out.play_direction = PlayDirection::Right;
    }
    out
}

/// Builds the `[A, T, F]` feature tensor for frames `snap + start_offset`
/// through `end_event`, inclusive. Left plays are normalized first.
pub fn extract_sequence(play: &Play, start_offset: i32, end_event: EndEvent) -> Result<Sequence> {
    if !(-(PRE_SNAP_FRAMES as i32)..=0).contains(&start_offset) {
        return Err(Error::InvalidArgument(format!(
            "start offset {start_offset} outside [-{PRE_SNAP_FRAMES}, 0]"
        )));
    }
    let snap = play.events.snap as i64;
    let pf = play
        .events
        .pass_forward
        .ok_or_else(|| Error::Data("play has no pass_forward event".into()))? as i64;
    let pa = play
        .events
        .pass_arrival
        .ok_or_else(|| Error::Data("play has no pass_arrival event".into()))? as i64;
    let events = SequenceEvents {
        pass_forward: (pf - snap) as i32,
        pass_arrival: (pa - snap) as i32,
    };
    let first = snap + start_offset as i64;
    let last = snap + events.offset(end_event) as i64;
    if first < 0 || last >= play.frames.len() as i64 {
        return Err(Error::Data(format!(
            "window frames [{first}, {last}] exceed the {} recorded frames",
            play.frames.len()
        )));
    }
    let norm;
    let play = if play.play_direction == PlayDirection::Left {
        norm = normalize_direction(play);
        &norm
    } else {
        play
    };
    let los = play.situation.los_x();
    let n_agents = play.agents.len();
    let len = (last - first + 1) as usize;
    let mut data = Vec::with_capacity(n_agents * len * N_FEATURES);
    for ag in 0..n_agents {
        for raw in first..=last {
            let t = raw as usize;
            let f = &play.frames[t][ag];
            let speed = f.s.unwrap_or_else(|| displacement_speed(play, ag, t));
            let (so, co) = f.o.to_radians().sin_cos();
            let (sd, cd) = f.dir.to_radians().sin_cos();
            data.extend_from_slice(&[
                f.x / FIELD_LENGTH,
                f.y / FIELD_WIDTH,
                so,
                co,
                sd,
                cd,
                speed / SPEED_SCALE,
                if raw >= snap { 1.0 } else { 0.0 },
                (f.x - los) / DEPTH_SCALE,
            ]);
        }
    }
    Ok(Sequence {
        features: Tensor::new(vec![n_agents, len, N_FEATURES], data)?,
        start: start_offset,
        events,
    })
}

fn displacement_speed(play: &Play, agent: usize, t: usize) -> f64 {
    let (a, b) = if t > 0 {
        (t - 1, t)
    } else if play.frames.len() > 1 {
        (0, 1)
    } else {
        return 0.0;
    };
    let p = &play.frames[a][agent];
    let q = &play.frames[b][agent];
    ((q.x - p.x).powi(2) + (q.y - p.y).powi(2)).sqrt() * FRAME_HZ
}
