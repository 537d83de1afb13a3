//! Tamper-evident payment approval with attested fraud scoring.
//!
//! The [`ledger`] is the single source of truth: payment workflow
//! transitions, signed fraud assessments and their Shapley explanations are
//! committed together, in one quorum-signed block, so an audit can rebuild
//! and check the full decision trail long after the fact.

pub mod codec;
pub mod consensus;
pub mod costmodel;
pub mod crypto;
pub mod datagen;
pub mod detector;
pub mod explain;
pub mod harness;
pub mod ledger;
pub mod rng;
pub mod workflow;
