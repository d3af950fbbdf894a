// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cloud;
pub mod descriptors;
pub mod error;
pub mod io;
pub mod metrics;
pub mod multiscale;
pub mod pipeline;
pub mod signature;
pub mod spatial;
pub mod synth;
