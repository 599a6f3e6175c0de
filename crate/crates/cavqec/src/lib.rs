//! Quantum-LDPC laboratory for cavity-assisted syndrome extraction.

pub mod gf2;
pub mod code;
pub mod schedule;
pub mod circuit;
pub mod sim;
pub mod decoder;
pub mod harness;
pub mod steane;
