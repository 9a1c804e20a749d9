//! Cost model and solvers for hierarchical federated learning over a
//! wireless uplink.
//!
//! - [`scenario`]: deployments, assignments, seeded generator
//! - [`cost`]: energy / latency evaluation
//! - [`sroa`]: bandwidth, CPU frequency and power allocation for a fixed assignment
//! - [`tsia`]: user-to-edge assignment search
//! - [`hfl_sim`]: synthetic hierarchical training loop
//! - [`io`]: versioned documents and CSV writers

// NaN must fail range checks, so `!(x > 0.0)` is deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cost;
pub mod error;
pub mod hfl_sim;
pub mod io;
pub mod scenario;
pub mod sroa;
pub mod tsia;

pub use cost::{
    comm_cost, edge_round_cost, local_cost, total_cost, tx_rate, Allocation, CostReport,
};
pub use error::{Error, Result};
pub use hfl_sim::{run_fedavg, run_hfl, HflConfig, HflRun, LossKind, SyntheticTask, WeightVector};
pub use scenario::{
    generate_scenario, geo_initial_assignment, Assignment, EdgeServer, GeneratorConfig, NoiseUnit,
    Scenario, SystemParams, User,
};
pub use sroa::{
    sroa, DeadlineSearch, Infeasible, InnerSolver, SolverConfig, SroaOutcome, SroaSolution,
};
pub use tsia::{tsia, TsiaConfig, TsiaResult, TsiaStep};
