//! Discrete-event simulator and analytical toolkit for IEEE 802.15.4 DSME
//! with per-packet and group acknowledgments.

pub mod analytics;
pub mod codec;
pub mod experiments;
pub mod kernel;
pub mod mac;
pub mod scalar;
pub mod sim;
pub mod timing;
pub mod topology;

pub use num_rational::Ratio;

/// Exact arithmetic for the analytical model.
pub type Rational = Ratio<i64>;
/// Floating-point scalar used for reported metrics.
pub type Real = f64;
