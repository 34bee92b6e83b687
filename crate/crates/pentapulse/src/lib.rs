//! Deterministic simulator for five-level atoms and one-dimensional media
//! driven by four laser pulses: dressed-state structure and adiabaticity
//! margins, population-transfer dynamics, self-consistent pulse propagation,
//! and write/read light storage including the double-storage protocol.

pub mod adiabatic;
pub mod dynamics;
pub mod eigen;
pub mod error;
pub mod medium;
pub mod config;
pub mod model;
pub mod output;
pub mod storage;

pub use error::Error;
