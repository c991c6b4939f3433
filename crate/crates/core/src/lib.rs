//! Analogy-based freight consignment cost estimation and evaluation harness.
//!
//! The library estimates the cost of a consignment by comparing it with
//! similar past jobs (weighted k-nearest-neighbour retrieval over collection
//! point, delivery point, time, and load size), trains the attribute weights
//! against a held-out training segment (random search refined by Nelder-Mead),
//! and evaluates the result with a walk-forward backtest, a stepwise-regression
//! baseline, and a Monte Carlo bid-auction model of the labor cost at which a
//! firm is indifferent between manual and automated estimation.

pub mod backtest;
pub mod cli;
pub mod domain;
pub mod economics;
pub mod geo;
pub mod knn;
pub mod regression;
pub mod simplex;
pub mod stats;
pub mod synth;
pub mod training;

mod error;

pub use error::{Error, Result};
