//! Audio–video joint diffusion at desk scale.
//!
//! A matched pair of flow-matching transformers — one video-only, one joint
//! audio+video — built over a small reverse-mode autodiff core, trained on a
//! deterministic synthetic world where sounds are physically caused by visible
//! events. Everything is exact, seeded, and checkable on a CPU.

pub mod blocks;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod flow;
pub mod gradcheck;
pub mod graph;
pub mod harness;
pub mod joint;
pub mod model;
pub mod optim;
pub mod par;
pub mod rope;
pub mod tensor;
pub mod verify;
pub mod world;

pub use error::{Error, Result};
pub use tensor::Tensor;
