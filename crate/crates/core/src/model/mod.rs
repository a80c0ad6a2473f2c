//! Factorized temporal/agent attention encoder with the three task heads.

mod heads;
mod predict;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{scaled_dot_attention, ParamSet, Real, Tape, Tensor, Var};
use crate::play::{Play, Sequence, Task, N_FEATURES};
use crate::vocab::{n_position_codes, position_index, Scheme, N_COVERAGE_CLASSES};

pub use heads::HeadOutput;
pub use predict::{predict_frames, FramePrediction, ModelSet};

/// Numeric situation features: one-hot down (4), distance, yard line, clock.
pub const N_SITUATION: usize = 7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub task: Task,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub dropout: f64,
    /// FFN hidden width as a multiple of `d_model`.
    pub ffn_mult: usize,
    /// Hidden width of the task head FFN.
    pub head_hidden: usize,
    pub n_features: usize,
    pub n_coverage_classes: usize,
    /// Keep every `frame_stride`-th frame counting back from the window end.
    pub frame_stride: usize,
}

impl ModelConfig {
    /// Defaults per task: heads 4/4/8, layers 3/3/6, dropout 0.1/0.2/0.1 for
    /// target/matchup/coverage, `d_model` 64.
    pub fn for_task(task: Task) -> Self {
        let (n_heads, n_layers, dropout) = match task {
            Task::Target => (4, 3, 0.1),
            Task::Matchup => (4, 3, 0.2),
            Task::Coverage => (8, 6, 0.1),
        };
        Self {
            task,
            d_model: 64,
            n_heads,
            n_layers,
            dropout,
            ffn_mult: 4,
            head_hidden: 128,
            n_features: N_FEATURES,
            n_coverage_classes: N_COVERAGE_CLASSES,
            frame_stride: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.n_coverage_classes != N_COVERAGE_CLASSES {
            return bad(format!("n_coverage_classes must be {N_COVERAGE_CLASSES}"));
        }
        if self.n_features != N_FEATURES {
            return bad(format!("n_features must be {N_FEATURES}"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.frame_stride == 0 || self.ffn_mult == 0 || self.head_hidden == 0 {
            return bad("frame_stride, ffn_mult and head_hidden must be positive".into());
        }
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        3 * self.d_model
    }
}

/// Per-play model inputs other than the trajectory tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct PlayContext {
    pub positions: Vec<usize>,
    /// 0 offense, 1 defense.
    pub teams: Vec<usize>,
    pub defenders: Vec<usize>,
    pub receivers: Vec<usize>,
    pub targeted_receiver: Option<usize>,
    pub situation: [f64; N_SITUATION],
    pub scheme: Scheme,
}

impl PlayContext {
    pub fn from_play(play: &Play, targeted_receiver: Option<&str>) -> Result<Self> {
        let s = &play.situation;
        let mut situation = [0.0; N_SITUATION];
        situation[(s.down.clamp(1, 4) - 1) as usize] = 1.0;
        situation[4] = s.distance / 10.0;
        situation[5] = s.yard_line / 100.0;
        situation[6] = s.game_clock_s / 3600.0;
        let targeted_receiver = match targeted_receiver {
            Some(id) => Some(play.agent_index(id).filter(|&i| play.agents[i].eligible_receiver).ok_or_else(
                || Error::Data(format!("targeted receiver {id} is not an eligible receiver of {}", play.play_id)),
            )?),
            None => None,
        };
        Ok(Self {
            positions: play.agents.iter().map(|a| position_index(&a.position)).collect(),
            teams: play.agents.iter().map(|a| a.team_side.index()).collect(),
            defenders: play.defenders(),
            receivers: play.receivers(),
            targeted_receiver,
            situation,
            scheme: s.team_scheme,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.positions.len()
    }

    /// Reorders agents: new agent `i` is old agent `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut inv = vec![0; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let mut defenders: Vec<usize> = self.defenders.iter().map(|&d| inv[d]).collect();
        let mut receivers: Vec<usize> = self.receivers.iter().map(|&r| inv[r]).collect();
        defenders.sort_unstable();
        receivers.sort_unstable();
        Self {
            positions: perm.iter().map(|&p| self.positions[p]).collect(),
            teams: perm.iter().map(|&p| self.teams[p]).collect(),
            defenders,
            receivers,
            targeted_receiver: self.targeted_receiver.map(|t| inv[t]),
            situation: self.situation,
            scheme: self.scheme,
        }
    }
}

fn xavier<R: Real, G: Rng>(rng: &mut G, fan_in: usize, fan_out: usize) -> Tensor<R> {
    let lim = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| R::from_f64_lossy(rng.gen_range(-lim..lim)))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).unwrap()
}

fn gaussian<R: Real, G: Rng>(rng: &mut G, shape: &[usize], std: f64) -> Tensor<R> {
    let n = Normal::new(0.0, std).unwrap();
    let len = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..len).map(|_| R::from_f64_lossy(n.sample(rng))).collect()).unwrap()
}

fn push_linear<R: Real, G: Rng>(ps: &mut ParamSet<R>, rng: &mut G, name: &str, i: usize, o: usize) {
    ps.push(format!("{name}.w"), xavier(rng, i, o));
    ps.push(format!("{name}.b"), Tensor::zeros(&[o]));
}

fn push_ln<R: Real>(ps: &mut ParamSet<R>, name: &str, d: usize) {
    ps.push(format!("{name}.g"), Tensor::full(&[d], R::one()));
    ps.push(format!("{name}.b"), Tensor::zeros(&[d]));
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<R> {
    pub config: ModelConfig,
    pub params: ParamSet<R>,
}

pub(crate) const ATTN_PROJ: [&str; 4] = ["q", "k", "v", "o"];

impl<R: Real> Model<R> {
    pub fn new<G: Rng>(config: ModelConfig, rng: &mut G) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let lat = config.latent_dim();
        let mut ps = ParamSet::new();
        push_linear(&mut ps, rng, "input", config.n_features, d);
        ps.push("emb.position", gaussian(rng, &[n_position_codes(), d], 0.1));
        ps.push("emb.team", gaussian(rng, &[2, d], 0.1));
        for l in 0..config.n_layers {
            for axis in ["temporal", "agent"] {
                push_ln(&mut ps, &format!("layer{l}.{axis}.ln"), d);
                for p in ATTN_PROJ {
                    push_linear(&mut ps, rng, &format!("layer{l}.{axis}.{p}"), d, d);
                }
            }
            push_ln(&mut ps, &format!("layer{l}.ffn.ln"), d);
            push_linear(&mut ps, rng, &format!("layer{l}.ffn.1"), d, config.ffn_mult * d);
            push_linear(&mut ps, rng, &format!("layer{l}.ffn.2"), config.ffn_mult * d, d);
        }
        push_ln(&mut ps, "final_ln", d);
        let h = config.head_hidden;
        match config.task {
            Task::Coverage => {
                push_linear(&mut ps, rng, "situation", N_SITUATION, d);
                ps.push("emb.scheme", gaussian(rng, &[Scheme::ALL.len(), d], 0.1));
                push_linear(&mut ps, rng, "head.1", lat + d, h);
                push_linear(&mut ps, rng, "head.2", h, config.n_coverage_classes);
            }
            Task::Matchup => {
                ps.push("null_receiver", gaussian(rng, &[1, lat], 0.1));
                push_linear(&mut ps, rng, "head.1", 2 * lat, h);
                push_linear(&mut ps, rng, "head.2", h, 1);
            }
            Task::Target => {
                push_linear(&mut ps, rng, "head.1", 2 * lat, h);
                push_linear(&mut ps, rng, "head.2", h, 1);
            }
        }
        Ok(Self { config, params: ps })
    }

    pub fn task(&self) -> Task {
        self.config.task
    }

    /// Places every parameter on the tape, trainable or not.
    pub fn bind(&self, tape: &mut Tape<R>, trainable: bool) -> Bound {
        let vars = self
            .params
            .tensors()
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    pub(crate) fn var(&self, b: &Bound, name: &str) -> Var {
        let id = self
            .params
            .id(name)
            .unwrap_or_else(|| panic!("model has no parameter {name}"));
        b.vars[id.0]
    }

    /// Window frames fed to the encoder after striding: offsets from the snap
    /// and their row indices into `seq`.
    pub fn frame_selection(&self, seq: &Sequence) -> Vec<usize> {
        let t = seq.n_frames();
        let mut idx: Vec<usize> = (0..t).rev().step_by(self.config.frame_stride).collect();
        idx.reverse();
        idx
    }

    /// Encodes a play window into per-agent latents `[A, 3 * d_model]`.
    pub fn encode<G: Rng>(
        &self,
        tape: &mut Tape<R>,
        b: &Bound,
        seq: &Sequence,
        ctx: &PlayContext,
        mut dropout_rng: Option<&mut G>,
    ) -> Result<Var> {
        let cfg = &self.config;
        let (a, t_all, f) = (seq.n_agents(), seq.n_frames(), seq.features.shape()[2]);
        if t_all == 0 {
            return Err(Error::InvalidArgument("empty frame window".into()));
        }
        if a != ctx.n_agents() {
            return Err(Error::Shape(format!(
                "sequence has {a} agents, context has {}",
                ctx.n_agents()
            )));
        }
        if f != cfg.n_features {
            return Err(Error::Shape(format!("expected {} features, got {f}", cfg.n_features)));
        }
        let d = cfg.d_model;
        let frames = self.frame_selection(seq);
        let t = frames.len();
        let src = seq.features.data();
        let mut x = Vec::with_capacity(a * t * f);
        for ag in 0..a {
            for &fr in &frames {
                let base = (ag * t_all + fr) * f;
                x.extend(src[base..base + f].iter().map(|&v| R::from_f64_lossy(v)));
            }
        }
        let offsets: Vec<i32> = frames.iter().map(|&fr| seq.start + fr as i32).collect();
        let x = tape.constant(Tensor::new(vec![a, t, f], x)?);
        let mut h = tape.linear(x, self.var(b, "input.w"), self.var(b, "input.b"));
        let pe = tape.constant(positional_encoding(&offsets, d));
        h = tape.add_broadcast(h, pe);
        let pos_e = tape.gather(self.var(b, "emb.position"), &ctx.positions);
        let team_e = tape.gather(self.var(b, "emb.team"), &ctx.teams);
        let stat = tape.add(pos_e, team_e);
        let stat3 = tape.reshape(stat, &[a, 1, d]);
        h = tape.add_broadcast(h, stat3);
        let p = cfg.dropout;
        let mut drop = |tape: &mut Tape<R>, v: Var| match dropout_rng.as_deref_mut() {
            Some(r) => tape.dropout(v, p, r),
            None => v,
        };
        h = drop(tape, h);
        for l in 0..cfg.n_layers {
            // temporal attention within each agent: batch A over T
            let n = self.sublayer_norm(tape, b, h, &format!("layer{l}.temporal.ln"));
            let att = self.mha(tape, b, n, &format!("layer{l}.temporal"))?;
            let att = drop(tape, att);
            h = tape.add(h, att);
            // agent attention within each frame: batch T over A
            let ht = tape.permute(h, &[1, 0, 2]);
            let n = self.sublayer_norm(tape, b, ht, &format!("layer{l}.agent.ln"));
            let att = self.mha(tape, b, n, &format!("layer{l}.agent"))?;
            let att = drop(tape, att);
            let ht = tape.add(ht, att);
            h = tape.permute(ht, &[1, 0, 2]);
            let n = self.sublayer_norm(tape, b, h, &format!("layer{l}.ffn.ln"));
            let u = tape.linear(n, self.var(b, &format!("layer{l}.ffn.1.w")), self.var(b, &format!("layer{l}.ffn.1.b")));
            let u = tape.gelu(u);
            let u = tape.linear(u, self.var(b, &format!("layer{l}.ffn.2.w")), self.var(b, &format!("layer{l}.ffn.2.b")));
            let u = drop(tape, u);
            h = tape.add(h, u);
        }
        let h = self.sublayer_norm(tape, b, h, "final_ln");
        let pooled = tape.mean_axis(h, 1);
        Ok(tape.concat(&[pooled, pos_e, team_e]))
    }

    fn sublayer_norm(&self, tape: &mut Tape<R>, b: &Bound, x: Var, name: &str) -> Var {
        tape.layer_norm(x, self.var(b, &format!("{name}.g")), self.var(b, &format!("{name}.b")))
    }

    /// Multi-head self-attention over axis 1 of `x [B, L, d]`.
    fn mha(&self, tape: &mut Tape<R>, b: &Bound, x: Var, name: &str) -> Result<Var> {
        let sh = tape.shape(x).to_vec();
        let (bs, l, d) = (sh[0], sh[1], sh[2]);
        let nh = self.config.n_heads;
        let dh = d / nh;
        let split = |tape: &mut Tape<R>, p: &str| {
            let y = tape.linear(x, self.var(b, &format!("{name}.{p}.w")), self.var(b, &format!("{name}.{p}.b")));
            if nh == 1 {
                return y;
            }
            let y = tape.reshape(y, &[bs, l, nh, dh]);
            let y = tape.permute(y, &[0, 2, 1, 3]);
            tape.reshape(y, &[bs * nh, l, dh])
        };
        let q = split(tape, "q");
        let k = split(tape, "k");
        let v = split(tape, "v");
        let o = scaled_dot_attention(tape, q, k, v, None)?;
        let o = if nh == 1 {
            o
        } else {
            let o = tape.reshape(o, &[bs, nh, l, dh]);
            let o = tape.permute(o, &[0, 2, 1, 3]);
            tape.reshape(o, &[bs, l, d])
        };
        Ok(tape.linear(o, self.var(b, &format!("{name}.o.w")), self.var(b, &format!("{name}.o.b"))))
    }

    /// Inference on one window with dropout off.
    pub fn predict(&self, seq: &Sequence, ctx: &PlayContext) -> Result<HeadOutput> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let lat = self.encode::<rand_chacha::ChaCha8Rng>(&mut tape, &b, seq, ctx, None)?;
        let out = self.head::<rand_chacha::ChaCha8Rng>(&mut tape, &b, lat, ctx, None)?;
        let logits = tape.value(out).to_f64();
        HeadOutput::new(self.config.task, logits)
    }
}

/// Tape handles for a model's parameters, in `ParamSet` order.
pub struct Bound {
    pub vars: Vec<Var>,
}

/// Sinusoidal encoding of frame offsets relative to the snap: `[1, T, d]`.
pub fn positional_encoding<R: Real>(offsets: &[i32], d: usize) -> Tensor<R> {
    let freqs: Vec<f64> = (0..d / 2 + d % 2)
        .map(|i| 1.0 / 10000f64.powf((2 * i) as f64 / d as f64))
        .collect();
    let mut out = Vec::with_capacity(offsets.len() * d);
    for &o in offsets {
        let pos = o as f64;
        for i in 0..d {
            let (s, c) = (pos * freqs[i / 2]).sin_cos();
            out.push(R::from_f64_lossy(if i % 2 == 0 { s } else { c }));
        }
    }
    Tensor::new(vec![1, offsets.len(), d], out).unwrap()
}
