//! Deterministic, desk-scale few-shot class-incremental learning.
//!
//! The pipeline: a small encoder is pretrained on an abundant base session,
//! then frozen. Each later session contributes a handful of labelled images
//! per novel class, from which a classifier head is built (class-mean "data
//! init", optionally refined by a few gradient steps). A graph-attention
//! adapter, trained once on pseudo-incremental episodes synthesized from base
//! data by rotating images into "new" classes, rewrites the accumulated bank
//! of classifier heads so that old and new classes stay mutually calibrated.
//!
//! Everything runs on a hand-rolled reverse-mode tape over `f64` tensors
//! ([`numerics`]), and every sampler is a pure function of its inputs and a
//! seed: two runs with the same config and seed produce byte-identical
//! outputs.

#![forbid(unsafe_code)]

pub mod adapter;
pub mod datasets;
pub mod encoder;
pub mod harness;
pub mod heads;
pub mod numerics;
pub mod pil;
pub mod seeding;
