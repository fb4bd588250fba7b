//! Trace-driven simulator for systolic-array DNN accelerators.
//!
//! Given an [`ArchConfig`] and a list of [`LayerSpec`]s the simulator
//! generates cycle-accurate SRAM traces for output-, weight- or
//! input-stationary dataflows, derives DRAM traffic from a double-buffered
//! scratchpad model, and reduces everything to per-layer reports.

pub mod config;
pub mod engine;
pub mod error;
pub mod mapping;
pub mod memory;
pub mod metrics;
pub mod oracle;
pub mod run;
pub mod simulate;
pub mod sweep;
pub mod workloads;

pub use config::{lower_gemm, parse_config, parse_topology, ArchConfig, Dataflow, LayerSpec};
pub use error::{Result, SimError};
pub use mapping::{fold_schedule, mapping_efficiency, workload_counts, FoldPlan, WorkloadCounts};
pub use metrics::{EnergyCostTable, LayerReport, NetworkReport};
pub use simulate::{simulate_layer, simulate_network};
