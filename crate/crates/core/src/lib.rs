//! Weekly inter-protocol credit-exposure graphs: construction from holdings
//! snapshots, systemic-risk measures, contagion stress tests and a
//! multi-task forecaster for measuring risk on predicted future graphs.

pub mod contagion;
pub mod error;
pub mod evaluation;
pub mod forecast;
pub mod graph;
pub mod mapper;
pub mod metrics;
pub mod pipeline;
pub mod risk;
pub mod service;
pub mod synth;
pub mod util;

pub use error::{Error, Result};
pub use graph::{ExposureGraph, GraphSequence, HoldingsSnapshot, Interval, ProtocolId, TokenId};
