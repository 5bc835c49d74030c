//! Desk-scale multimodal stream-processing engine with a plan super-optimizer.
//!
//! The engine runs continuous queries over synthetic annotated video streams
//! under a simulated clock, with model inference simulated by a configurable
//! catalog. The optimizer turns naive plans into semantically, logically, and
//! physically optimized ones and validates every rewrite empirically.

pub mod bench;
pub mod datagen;
pub mod exec;
pub mod model;
pub mod opt;
pub mod pixel;
pub mod plan;
