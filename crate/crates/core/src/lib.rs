//! Multi-tag sticker recognition.
//!
//! The pipeline has four learned pieces: attribute descriptions generated by a
//! vision-language chat model ([`adg`]), local re-attention computed from
//! masked-patch reconstruction ([`lor`]), a classifier that reads a
//! `[CLS] S1..S4 h [SEP]` sequence built from description embeddings and the
//! patch-attentive image representation ([`model`]), and a training objective
//! that adds a confidence penalty between the re-attended and the plain image
//! paths ([`objective`]).
//!
//! Around those sit the dataset tooling ([`data`], [`tagset`]), evaluation
//! ([`metrics`]), the training loop ([`trainer`]) and a command-line front
//! end ([`cli`]).

pub mod adg;
pub mod cli;
pub mod data;
pub mod error;
pub mod lor;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod objective;
pub mod tagset;
pub mod trainer;

pub use error::{Error, Result};
