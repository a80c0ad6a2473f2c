use rand::Rng;

use super::{Bound, Model, PlayContext};
use crate::error::{Error, Result};
use crate::numerics::{softmax, Real, Tape, Tensor, Var, MASK_VALUE};
use crate::play::Task;

/// Logits from one task head.
///
/// Coverage: `[D, 20]`. Matchup: `[D, R + 1]` with column 0 = no matchup.
/// Target: `[1, D + 1]` with the last slot (the targeted receiver) masked.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutput {
    pub task: Task,
    pub logits: Tensor<f64>,
}

impl HeadOutput {
    pub fn new(task: Task, logits: Tensor<f64>) -> Result<Self> {
        if logits.rank() != 2 {
            return Err(Error::Shape(format!("head logits must be 2-d, got {:?}", logits.shape())));
        }
        Ok(Self { task, logits })
    }

    pub fn probs(&self) -> Result<Tensor<f64>> {
        softmax(&self.logits, 1)
    }

    /// Row-wise argmax (lowest index on ties).
    pub fn argmax(&self) -> Vec<usize> {
        self.logits
            .rows()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                    .0
            })
            .collect()
    }
}

impl<R: Real> Model<R> {
    fn head_ffn<G: Rng>(&self, tape: &mut Tape<R>, b: &Bound, x: Var, rng: Option<&mut G>) -> Var {
        let h = tape.linear(x, self.var(b, "head.1.w"), self.var(b, "head.1.b"));
        let h = tape.gelu(h);
        let h = match rng {
            Some(r) => tape.dropout(h, self.config.dropout, r),
            None => h,
        };
        tape.linear(h, self.var(b, "head.2.w"), self.var(b, "head.2.b"))
    }

    /// Applies this model's task head to latents `[A, 3d]`.
    pub fn head<G: Rng>(
        &self,
        tape: &mut Tape<R>,
        b: &Bound,
        latents: Var,
        ctx: &PlayContext,
        rng: Option<&mut G>,
    ) -> Result<Var> {
        let nd = ctx.defenders.len();
        if nd == 0 {
            return Err(Error::Data("play has no defenders".into()));
        }
        let lat_d = tape.gather(latents, &ctx.defenders);
        match self.config.task {
            Task::Coverage => {
                let num = ctx.situation.iter().map(|&v| R::from_f64_lossy(v)).collect();
                let num = tape.constant(Tensor::new(vec![1, ctx.situation.len()], num)?);
                let s = tape.linear(num, self.var(b, "situation.w"), self.var(b, "situation.b"));
                let se = tape.gather(self.var(b, "emb.scheme"), &[ctx.scheme.index()]);
                let s = tape.add(s, se);
                let s = tape.gather(s, &vec![0; nd]);
                let x = tape.concat(&[lat_d, s]);
                Ok(self.head_ffn(tape, b, x, rng))
            }
            Task::Matchup => {
                let nr = ctx.receivers.len();
                if nr == 0 {
                    return Err(Error::Data("matchup head needs at least one receiver".into()));
                }
                let lat_r = tape.gather(latents, &ctx.receivers);
                let cand = tape.concat_rows(&[self.var(b, "null_receiver"), lat_r]);
                let left_rows: Vec<usize> = (0..nd).flat_map(|d| std::iter::repeat(d).take(nr + 1)).collect();
                let right_rows: Vec<usize> = (0..nd).flat_map(|_| 0..nr + 1).collect();
                let left = tape.gather(lat_d, &left_rows);
                let right = tape.gather(cand, &right_rows);
                let x = tape.concat(&[left, right]);
                let s = self.head_ffn(tape, b, x, rng);
                Ok(tape.reshape(s, &[nd, nr + 1]))
            }
            Task::Target => {
                let tr = ctx
                    .targeted_receiver
                    .ok_or_else(|| Error::Data("target head needs the targeted receiver".into()))?;
                let mut slots = ctx.defenders.clone();
                slots.push(tr);
                let lat_j = tape.gather(latents, &slots);
                let lat_t = tape.gather(latents, &vec![tr; nd + 1]);
                let x = tape.concat(&[lat_j, lat_t]);
                let s = self.head_ffn(tape, b, x, rng);
                let s = tape.reshape(s, &[1, nd + 1]);
                Ok(tape.fill_last(s, &[nd], R::from_f64_lossy(MASK_VALUE)))
            }
        }
    }
}
