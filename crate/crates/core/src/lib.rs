// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assembly;
pub mod dataset;
pub mod fusion;
pub mod geometry;
pub mod mesh;
pub mod metrics;
pub mod pipeline;
pub mod pnp;
pub mod refine;
pub mod simulator;
