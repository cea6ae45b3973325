// `!(x > 0.0)` checks also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod collision;
pub mod contact;
pub mod diff;
pub mod dynamics;
pub mod error;
pub mod export;
pub mod fd;
#[cfg(test)]
mod fixtures;
pub mod inverse;
pub mod model;
pub mod scene;
pub mod simulator;
pub mod spatial;

pub use error::{Result, SimError};
