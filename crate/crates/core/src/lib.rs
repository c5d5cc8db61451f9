//! Discrete-event simulator for a five-node star sensor network comparing
//! wake-up-radio polling (DoRa) against B-MAC low-power listening and
//! always-on IEEE 802.15.4 CSMA-CA.
//!
//! Layering, bottom up: [`kernel`] (time, events, random streams),
//! [`medium`] (propagation and collisions), [`radio`] (modes and energy
//! ledgers), [`net`] (glue), the three protocol worlds, and [`harness`]
//! (scenarios, metrics, sweeps and output files).

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bmac;
pub mod chart;
pub mod config;
pub mod csma;
pub mod dora;
pub mod frame;
pub mod harness;
pub mod kernel;
pub mod medium;
pub mod net;
pub mod radio;
pub mod sim;

pub use config::{ConfigError, ConfigFile, Protocol, ScenarioConfig, SweepSpec};
pub use harness::{run_scenario, run_sweep, HarnessError, RunMetrics};
