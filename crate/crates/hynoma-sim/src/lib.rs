//! Experiment harness around `hynoma-core`: scenario and codebook IO, the
//! Monte Carlo driver with BER/AIR aggregation, and result emission.

pub mod emit;
pub mod harness;
pub mod io;
