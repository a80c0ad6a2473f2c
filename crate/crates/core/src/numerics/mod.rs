//! Dense tensors, reverse-mode differentiation, attention, AdamW and the
//! learning-rate schedules.

mod attention;
pub mod gradcheck;
mod optim;
mod params;
mod real;
mod schedule;
mod tape;
mod tensor;

pub use attention::{attention, scaled_dot_attention, AttentionMask};
pub use gradcheck::{grad_check, relative_error};
pub use optim::{adamw_step, clip_global_norm, AdamWConfig, AdamWState};
pub use params::{ParamId, ParamSet};
pub use real::{dtype_width, Real};
pub use schedule::{cosine_restart_lr, onecycle_lr, CosineRestartConfig, OneCycleConfig};
pub use tape::{Tape, Var};
pub use tensor::{softmax, Tensor, MASK_VALUE};
