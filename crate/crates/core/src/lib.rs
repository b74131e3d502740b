//! Anonymous pairing for BLE body-area sensors: hash/XOR primitives,
//! registration, the pairing state machines, an energy model and a seeded
//! star-topology simulator.

pub mod cli;
pub mod energy;
pub mod primitives;
pub mod protocol;
pub mod registration;
pub mod simnet;
