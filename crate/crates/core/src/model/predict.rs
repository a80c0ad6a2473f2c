use super::{HeadOutput, Model, PlayContext};
use crate::augmentation::MIN_START;
use crate::error::{Error, Result};
use crate::numerics::Real;
use crate::play::{extract_sequence, EndEvent, Play};

/// Up to one trained model per task.
#[derive(Clone, Debug, Default)]
pub struct ModelSet<R> {
    pub coverage: Option<Model<R>>,
    pub matchup: Option<Model<R>>,
    pub target: Option<Model<R>>,
}

impl<R: Real> ModelSet<R> {
    pub fn is_empty(&self) -> bool {
        self.coverage.is_none() && self.matchup.is_none() && self.target.is_none()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FramePrediction {
    /// Window end as an offset from the snap; the window starts at -30.
    pub end_offset: i32,
    pub coverage: Option<HeadOutput>,
    pub matchup: Option<HeadOutput>,
    pub target: Option<HeadOutput>,
}

/// Runs every available model on windows `(-30, e)` for end frames `e` taken
/// every `stride` frames back from pass arrival, in ascending order. The
/// target head runs only when `targeted_receiver` is given.
pub fn predict_frames<R: Real>(
    play: &Play,
    models: &ModelSet<R>,
    targeted_receiver: Option<&str>,
    stride: usize,
) -> Result<Vec<FramePrediction>> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be at least 1".into()));
    }
    if models.is_empty() {
        return Err(Error::InvalidArgument("no models given".into()));
    }
    let full = extract_sequence(play, MIN_START, EndEvent::PassArrival)?;
    let ctx = PlayContext::from_play(play, targeted_receiver)?;
    let mut ends: Vec<i32> = (MIN_START..=full.events.pass_arrival)
        .rev()
        .step_by(stride)
        .collect();
    ends.reverse();
    let run = |m: &Option<Model<R>>, seq: &crate::play::Sequence| -> Result<Option<HeadOutput>> {
        match m {
            Some(m) => m.predict(seq, &ctx).map(Some),
            None => Ok(None),
        }
    };
    ends.into_iter()
        .map(|e| {
            let seq = full.slice(MIN_START, e)?;
            Ok(FramePrediction {
                end_offset: e,
                coverage: run(&models.coverage, &seq)?,
                matchup: run(&models.matchup, &seq)?,
                target: if ctx.targeted_receiver.is_some() {
                    run(&models.target, &seq)?
                } else {
                    None
                },
            })
        })
        .collect()
}
