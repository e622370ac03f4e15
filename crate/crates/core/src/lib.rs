//! Density-based out-of-distribution detection for simulated mobility
//! trajectories.
//!
//! The pipeline: simulate discrete location trajectories with an
//! exploration/preferential-return agent model ([`epr`]), train a
//! spectrally-normalized next-location predictor and extract its penultimate
//! features ([`predictor`]), fit feature-space density estimators — surjective
//! and bijective normalizing flows ([`flows`]) and a truncated Dirichlet
//! process Gaussian mixture ([`dpgmm`]) — then flag datasets whose likelihood
//! distributions differ significantly from the training reference ([`stats`]).
//!
//! [`pipeline`] wires the stages together over on-disk artifacts; the
//! `oodflow` binary exposes them as subcommands.

pub mod checkpoint;
pub mod config;
pub mod dpgmm;
pub mod epr;
pub mod flows;
pub mod nn;
pub mod pipeline;
pub mod predictor;
pub mod stats;
pub mod tensor;

pub use tensor::Tensor;
