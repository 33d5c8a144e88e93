//! Temporal link prediction over timestamped event sequences.

pub mod graph;
pub mod tp_matrix;
pub mod tppi;
pub mod trainer;
pub mod ingest;
pub mod eval;
pub mod cli;
