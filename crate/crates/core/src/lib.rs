//! Safe online gain scheduling for a snap-inverted quadrotor.

pub mod agent;
pub mod certification;
pub mod controller;
pub mod error;
pub mod harness;
pub mod plant;
pub mod reference;

pub use error::{Error, Result};
