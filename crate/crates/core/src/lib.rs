//! Budget-constrained coupon allocation over a discrete price ladder.
//!
//! The pipeline: raw conversion-rate predictions are calibrated to be
//! monotone in price ([`isotonic`]), a budget multiplier is fitted offline
//! on an estimated arrival population ([`dual`]), each arriving customer
//! gets the coupon level maximizing their reduced value at the current
//! multiplier ([`ladder`]), and a PID loop ([`pid`]) nudges the multiplier
//! so the realized average offered price tracks the budget floor.
//! [`synthpop`] and [`sim`] provide a synthetic marketplace for end-to-end
//! evaluation, and [`service`] serves allocation decisions over
//! newline-delimited JSON.

pub mod config;
pub mod cvr;
pub mod dual;
pub mod error;
pub mod isotonic;
pub mod ladder;
pub mod pid;
pub mod service;
pub mod sim;
pub mod synthpop;

pub use error::{Error, Result};
pub use ladder::{argmax_level, reduced_value, BudgetTarget, CvrVector, Level, PriceLadder, ValueVector};
