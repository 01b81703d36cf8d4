//! Memory-constrained first-order optimization lab: hard instances, exact
//! oracles, an M-bit algorithm harness, the orthogonal vector game and the
//! geometry helpers behind them.

pub mod base;
pub mod experiment;
pub mod instance;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod ovg;
pub mod tape;
pub mod verify;
