//! Randomised Markov bridges: Markov bridges whose terminal pin is a hidden
//! random variable X with known prior, together with the closed-form
//! Bayesian filter for X, exact and Euler path samplers, and numerical
//! verification of the filtering identities (Chapman-Kolmogorov, Zakai,
//! Kushner-Stratonovich, innovation martingale, terminal revelation).

pub mod bridge;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod filter;
pub mod kernels;
pub mod oracle;
pub mod quad;
pub mod report;
pub mod runner;
pub mod statespace;

pub use error::{Result, RmbError};
