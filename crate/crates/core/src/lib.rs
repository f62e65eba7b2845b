//! Vibrotactile signal captioning.
//!
//! Triaxial acceleration recordings are collapsed to one channel, encoded by
//! a periodic (Fourier-feature) branch and an aperiodic (LSTM + attention)
//! branch, blended by a periodicity-driven gate and decoded into text by a
//! transformer decoder. The crate also ships the training objective, caption
//! metrics, a synthetic paired corpus and a caption retrieval index.

pub mod data;
pub mod decoder;
pub mod dsp;
pub mod encoder;
pub mod error;
pub mod exec;
pub mod gradgate;
pub mod metrics;
pub mod nn;
pub mod numerics;
pub mod retrieval;
pub mod training;

pub use error::{Error, ErrorClass, Result};
