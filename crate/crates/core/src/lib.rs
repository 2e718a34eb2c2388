//! Socioeconomic status inference from GPS trajectories.
//!
//! The crate covers the whole path from raw location samples to a trained
//! classifier:
//!
//! - [`ingest`] reads trajectory / POI / house-price CSVs and cuts weeks,
//! - [`preprocess`] filters noise, extracts stay points, infers homes and
//!   derives price-class labels,
//! - [`activity`] tags stays with POI categories and hour-of-week bins,
//! - [`indicators`] computes radius of gyration and the two entropy
//!   indicators and tokenizes them,
//! - [`embed`] pretrains indicator-token vectors with skip-gram,
//! - [`nn`] and [`model`] hold the two-branch network (indicator embeddings
//!   plus a day/week hierarchical LSTM) and its training loop,
//! - [`eval`] provides classification and clustering metrics,
//! - [`synth`] generates labelled synthetic cities for end-to-end runs,
//! - [`pipeline`] and [`config`] wire the stages together for the CLI.

pub mod activity;
pub mod clock;
pub mod config;
pub mod embed;
pub mod eval;
pub mod geo;
pub mod indicators;
pub mod ingest;
pub mod model;
pub mod nn;
pub mod parallel;
pub mod pipeline;
pub mod preprocess;
pub mod synth;
