//! Deterministic federated-learning simulator.
//!
//! The crate pairs a FedAvg baseline with a score-only protocol in which
//! clients upload a 4-byte loss score and the server fetches full weights
//! from the best-scoring client only. Client models can be refined with a
//! black widow optimizer, and every byte exchanged is booked in a cost ledger
//! that is checked against the closed-form cost model.
//!
//! Model, optimizer and protocol code is generic over [`Scalar`] (`f32` or
//! `f64`); the aliases below fix the 32-bit configuration used by the CLI.
//! Communication costs are exact integers and rationals.

pub mod bwo;
pub mod config;
pub mod cost;
pub mod data;
pub mod error;
pub mod experiment;
pub mod model;
pub mod protocol;
pub mod report;
pub mod rng;
pub mod scalar;

pub use error::{Error, FormatError, LedgerMismatch, Result};
pub use scalar::Scalar;

pub type ParamVector = model::Params<f32>;
pub type ParamVector64 = model::Params<f64>;
pub type Dataset = data::Dataset<f32>;
pub type Dataset64 = data::Dataset<f64>;
pub type Candidate = bwo::Candidate<f32>;
pub type Population = bwo::Population<f32>;
