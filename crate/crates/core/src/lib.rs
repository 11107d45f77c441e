//! Zoned IoT security simulator.
//!
//! Each zone has one master device acting as certificate authority, a local
//! hash-chained ledger, and a behavior monitor that scores device traffic
//! with an autoencoder and publishes a trust level for the zone.

pub mod baselines;
pub mod codec;
pub mod crypto;
pub mod datagen;
pub mod fusion;
pub mod ledger;
pub mod monitor;
pub mod nn;
pub mod rng;
pub mod sim;
pub mod zone;
