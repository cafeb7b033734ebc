//! Power packet network simulator.
//!
//! Router agents negotiate packet transmissions with local messages only;
//! the resulting switch pattern drives a time-varying weighted Laplacian
//! whose consensus dynamics move the storage voltages.
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`graph`] | layered network, edge weights, weighted Laplacian blocks |
//! | [`dynamics`] | voltage integration, flows, discrete consensus reference |
//! | [`router`] | per-node automaton and message protocol |
//! | [`engine`] | fixed-step loop producing a [`engine::Trace`] |
//! | [`analysis`] | moving averages, end-point distributions, energy audit |
//! | [`plot`] | small SVG charts |
//! | [`scenario`] | scenario files and builtin experiments |
//! | [`trace_io`] | columnar trace files |
//! | [`verify`] | acceptance checks |
//! | [`cli`] | `run` / `analyze` / `verify` commands |

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod dynamics;
pub mod engine;
mod error;
pub mod graph;
pub mod plot;
pub mod router;
pub mod scenario;
pub mod trace_io;
pub mod verify;

pub use error::{Error, Result};
