//! Scheduling library and discrete-event simulator for data-triggered
//! dataflows over edge, fog and cloud resources.

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod calendar;
pub mod config;
pub mod dag;
pub mod fog;
pub mod engine;
pub mod harness;
pub mod master;
pub mod metrics;
pub mod model;
pub mod policy;
pub mod query;
