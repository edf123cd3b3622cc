//! Probe-based network intrusion detection for link-state networks.
//!
//! The pipeline: partition routers into Sensors, plan probes, simulate the
//! network with optional attacks, extract per-Sensor features, score them
//! with one-class models, combine the scores, and localize the attack.

pub mod attacks;
pub mod deploy;
pub mod ensemble;
pub mod eval;
pub mod experiment;
pub mod localize;
pub mod netsim;
pub mod oneclass;
pub mod sense;
pub mod topo;
