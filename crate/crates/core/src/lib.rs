//! Highway VANET models and a cluster-based cooperative file transfer
//! protocol, with a seeded experiment engine.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cft;
pub mod channel;
pub mod config;
pub mod connection;
pub mod gamma;
pub mod mac;
pub mod mobility;
pub mod simulator;
