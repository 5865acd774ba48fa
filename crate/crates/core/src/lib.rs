//! Function-level reentrancy analysis for EVM runtime bytecode.

pub mod cfg;
pub mod committee;
pub mod dataset;
pub mod ensemble;
pub mod disasm;
pub mod exploit;
pub mod features;
pub mod gnn;
pub mod metrics;
pub mod seed;
pub mod selftrain;
pub mod sim;
pub mod train;
