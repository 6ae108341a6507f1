//! Exact machine unlearning over a fixed encoder.
//!
//! A frozen encoder (represented here by precomputed embedding files) feeds
//! `n` small linear adapters. Each adapter owns a fixed key in encoding space;
//! a sample trains, and is later predicted by, the `k` adapters whose keys are
//! nearest to its encoding. Because every adapter is trained only on the ids
//! recorded against it, deleting a sample means retraining just those `k`
//! adapters, and the result is bit-identical to training from scratch on the
//! retained data.

pub mod adapter;
pub mod baselines;
pub mod bench;
pub mod cli;
pub mod data;
pub mod digest;
pub mod error;
pub mod keyspace;
pub mod lego_model;
pub mod persist;
pub mod rng;
pub mod unlearner;

mod parallel;

pub use error::{LegoError, Result};
