//! Minimal differentiable numerical core: a per-example reverse-mode tape,
//! named parameters, AdamW, gradient checking, and checkpoints.
//!
//! Everything runs in double precision; models here are small enough that
//! exact gradient verification matters more than speed.

pub mod adamw;
pub mod checkpoint;
pub mod gradcheck;
pub mod ops;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adamw::{AdamWConfig, OptState};
pub use gradcheck::{grad_check, GradCheckReport, ParamCheck, GRAD_CHECK_H};
pub use ops::{linear, self_attention, AttentionParams};
pub use params::{Init, Param, ParamId, ParamStore};
pub use tape::{softmax, NodeId, Tape, LAYER_NORM_EPS};
pub use tensor::{relative_error, Tensor};
