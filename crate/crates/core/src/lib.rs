//! Check-in driven point-of-interest recommendation.
//!
//! The pipeline builds a user-POI knowledge graph from check-in logs with
//! composed spatio-temporal(-category) relation paths, learns TransR
//! embeddings over it, extracts score- and distance-filtered candidate sets,
//! fits a combined matrix factorization on top of them, and answers top-k
//! POI queries with a full offline evaluation harness.
//!
//! All numeric code is generic over the [`num::Real`] scalar (`f32` or
//! `f64`); the `*64` aliases below fix the common `f64` case.

pub mod checkin;
pub mod config;
pub mod error;
pub mod eval;
pub mod extract;
pub mod geo;
pub mod graph;
pub mod mf;
pub mod num;
pub mod pipeline;
pub mod region;
pub mod synth;
pub mod transr;

pub use error::{Error, Result};
pub use num::Real;

/// `f64`-backed aliases for the main model types.
pub type CheckIn64 = checkin::CheckIn<f64>;
pub type SplitDataset64 = checkin::SplitDataset<f64>;
pub type HomeLocation64 = checkin::HomeLocation<f64>;
pub type RegionModel64 = region::RegionModel<f64>;
pub type TransRModel64 = transr::TransRModel<f64>;
pub type CandidateSet64 = extract::CandidateSet<f64>;
pub type FactorModel64 = mf::FactorModel<f64>;
pub type Recommender64 = eval::Recommender<f64>;
pub type Query64 = eval::Query<f64>;
