//! Stochastic predator-prey systems with Beddington-DeAngelis functional
//! response: threshold classification, simulation and long-run diagnostics.

pub mod boundary;
pub mod model;
pub mod quadrature;
pub mod threshold;
pub mod noise;
pub mod sim;
pub mod ergodic;
pub mod geometry;
