//! Energy-centric CPU core selection for memory-bound LLM decoding.
//!
//! The crate searches for the core selection that minimizes decode energy
//! while staying within a tolerated slowdown of the fastest selection, and
//! ships a simulated heterogeneous SoC to run that search against.
//!
//! * [`topology`]: devices, clusters, selections and the full search space.
//! * [`heuristic`]: the analytic power estimate and blended objective.
//! * [`simdevice`]: governor, speed and power ground truth plus a noisy,
//!   counter-quantized measurement provider.
//! * [`aecs`]: stage-1 greedy search, candidate tree, stage-2 selection and
//!   the exhaustive oracle.
//! * [`experiments`]: Monte-Carlo optimality rates, ablation reports and
//!   the heuristic-robustness checks.
//! * [`cli`]: the `aecs` command-line front end.

pub mod aecs;
pub mod cli;
pub mod error;
pub mod experiments;
pub mod heuristic;
pub mod simdevice;
pub mod topology;

pub use aecs::{
    aecs_search, exhaustive_search, grow_candidate_tree, search_device, stage1_fastest,
    stage2_select, CandidateTree, MeasurementProvider, Profiler, Ranking, SearchConfig,
    SearchResult, SimulatedProvider, Transform,
};
pub use error::{Error, Result};
pub use experiments::{
    optimality_rate, run_ablation, true_optimum, verify_ordering_accuracy,
    verify_variance_reduction, AblationReport, AblationRow, RateEstimate, TheoremReport,
};
pub use heuristic::{
    assigned_frequency, heuristic_energy, power_heuristic, HeuristicParams, MeasurementSample,
};
pub use simdevice::{
    load_device, load_preset, stream_from, GovernorKind, NoiseModel, SimulatedDevice,
};
pub use topology::{
    capacity_factor, enumerate_selections, parse_device_descriptor, parse_sysfs_snapshot,
    CoreSelection, CoreType, CpuTopology, SelectionMode,
};
