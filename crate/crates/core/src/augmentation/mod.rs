//! Trajectory truncation: the 11 fixed windows plus fully random windows.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::play::{EndEvent, Sequence, SequenceEvents, PRE_SNAP_FRAMES};

/// Probability that a training draw uses one of the fixed strategies.
pub const P_FIXED: f64 = 0.6;
/// Earliest start offset relative to the snap.
pub const MIN_START: i32 = -(PRE_SNAP_FRAMES as i32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowEnd {
    Event(EndEvent),
    /// Offset from the snap.
    Frame(i32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TruncationStrategy {
    /// Offset from the snap.
    pub start: i32,
    pub end: WindowEnd,
}

impl TruncationStrategy {
    pub const fn fixed(start: i32, end: EndEvent) -> Self {
        Self {
            start,
            end: WindowEnd::Event(end),
        }
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self.end, WindowEnd::Event(_))
    }

    pub fn end_offset(&self, events: &SequenceEvents) -> i32 {
        match self.end {
            WindowEnd::Event(e) => events.offset(e),
            WindowEnd::Frame(f) => f,
        }
    }

    /// Inclusive `(start, end)` offsets from the snap.
    pub fn resolve(&self, events: &SequenceEvents) -> (i32, i32) {
        (self.start, self.end_offset(events))
    }

    /// True when the window ends at or before the snap.
    pub fn is_pre_snap(&self, events: &SequenceEvents) -> bool {
        self.end_offset(events) <= 0
    }

    /// Stable short name, e.g. `-30_pass_arrival`.
    pub fn label(&self) -> String {
        match self.end {
            WindowEnd::Event(EndEvent::Snap) => format!("{}_snap", self.start),
            WindowEnd::Event(EndEvent::PassForward) => format!("{}_pass_forward", self.start),
            WindowEnd::Event(EndEvent::PassArrival) => format!("{}_pass_arrival", self.start),
            WindowEnd::Frame(f) => format!("{}_frame{}", self.start, f),
        }
    }
}

impl fmt::Display for TruncationStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.end {
            WindowEnd::Event(e) => write!(f, "({}, {})", self.start, e.label()),
            WindowEnd::Frame(e) => write!(f, "({}, {})", self.start, e),
        }
    }
}

const FIXED: [TruncationStrategy; 11] = [
    TruncationStrategy::fixed(-30, EndEvent::Snap),
    TruncationStrategy::fixed(-30, EndEvent::PassForward),
    TruncationStrategy::fixed(-30, EndEvent::PassArrival),
    TruncationStrategy::fixed(-20, EndEvent::Snap),
    TruncationStrategy::fixed(-20, EndEvent::PassForward),
    TruncationStrategy::fixed(-20, EndEvent::PassArrival),
    TruncationStrategy::fixed(-10, EndEvent::Snap),
    TruncationStrategy::fixed(-10, EndEvent::PassForward),
    TruncationStrategy::fixed(-10, EndEvent::PassArrival),
    TruncationStrategy::fixed(0, EndEvent::PassForward),
    TruncationStrategy::fixed(0, EndEvent::PassArrival),
];

pub fn fixed_strategies() -> Vec<TruncationStrategy> {
    FIXED.to_vec()
}

/// The full-context window used for headline numbers.
pub fn full_window() -> TruncationStrategy {
    TruncationStrategy::fixed(MIN_START, EndEvent::PassArrival)
}

/// Training draw: a uniform fixed strategy with probability 0.6, otherwise a
/// random window `MIN_START <= start < end <= pass_arrival`.
pub fn sample_truncation<R: Rng + ?Sized>(rng: &mut R, events: &SequenceEvents) -> TruncationStrategy {
    if rng.gen_bool(P_FIXED) {
        FIXED[rng.gen_range(0..FIXED.len())]
    } else {
        sample_random_window(rng, events.pass_arrival)
    }
}

pub fn sample_random_window<R: Rng + ?Sized>(rng: &mut R, pass_arrival: i32) -> TruncationStrategy {
    let hi = pass_arrival.max(MIN_START + 1);
    let a = rng.gen_range(MIN_START..=hi);
    let mut b = rng.gen_range(MIN_START..hi);
    if b >= a {
        b += 1;
    }
    TruncationStrategy {
        start: a.min(b),
        end: WindowEnd::Frame(a.max(b)),
    }
}

/// Contiguous slice of `seq` covering the strategy's window.
pub fn apply_truncation(seq: &Sequence, strategy: &TruncationStrategy) -> Result<Sequence> {
    let (start, end) = strategy.resolve(&seq.events);
    if start > end {
        return Err(Error::InvalidArgument(format!(
            "strategy {strategy} resolves to the empty window [{start}, {end}]"
        )));
    }
    seq.slice(start, end)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq(pass_forward: i32, pass_arrival: i32) -> Sequence {
        let t = (pass_arrival + 31) as usize;
        let data: Vec<f64> = (0..2 * t * 9).map(|v| v as f64).collect();
        Sequence {
            features: Tensor::new(vec![2, t, 9], data).unwrap(),
            start: -30,
            events: SequenceEvents {
                pass_forward,
                pass_arrival,
            },
        }
    }

    #[test]
    fn eleven_fixed_without_zero_snap() {
        let f = fixed_strategies();
        assert_eq!(f.len(), 11);
        assert!(f.contains(&TruncationStrategy::fixed(0, EndEvent::PassForward)));
        assert!(f.contains(&TruncationStrategy::fixed(0, EndEvent::PassArrival)));
        assert!(f.contains(&TruncationStrategy::fixed(-20, EndEvent::Snap)));
        assert!(!f.contains(&TruncationStrategy::fixed(0, EndEvent::Snap)));
    }

    #[test]
    fn window_lengths() {
        let s = seq(20, 25);
        let out = apply_truncation(&s, &TruncationStrategy::fixed(-10, EndEvent::Snap)).unwrap();
        assert_eq!(out.n_frames(), 11);
        let full = apply_truncation(&s, &full_window()).unwrap();
        assert_eq!(full, s);
        let two = TruncationStrategy {
            start: 4,
            end: WindowEnd::Frame(5),
        };
        assert_eq!(apply_truncation(&s, &two).unwrap().n_frames(), 2);
    }

    #[test]
    fn truncation_composes() {
        let s = seq(20, 25);
        let a = apply_truncation(&s, &TruncationStrategy::fixed(-30, EndEvent::PassForward)).unwrap();
        let b = apply_truncation(&a, &TruncationStrategy::fixed(-10, EndEvent::Snap)).unwrap();
        let c = apply_truncation(&s, &TruncationStrategy::fixed(-10, EndEvent::Snap)).unwrap();
        assert_eq!(b, c);
    }

    #[test]
    fn random_windows_in_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5000 {
            let s = sample_random_window(&mut rng, 12);
            let WindowEnd::Frame(e) = s.end else { panic!() };
            assert!(MIN_START <= s.start && s.start < e && e <= 12);
        }
    }

    #[test]
    fn empty_window_rejected() {
        let s = seq(20, 25);
        let bad = TruncationStrategy {
            start: 3,
            end: WindowEnd::Frame(1),
        };
        assert!(apply_truncation(&s, &bad).is_err());
    }
}
