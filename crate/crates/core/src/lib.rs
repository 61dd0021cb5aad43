//! Offline policy switching for finite MDPs.
//!
//! Net values charge a one-time switching cost against the value of a new
//! policy. The crate evaluates them exactly by dynamic programming, estimates
//! them offline from logged transitions with twin pessimistic critics, and
//! searches for a better policy with a tabular net actor-critic. Switching
//! costs include local and global counts and optimal-transport costs over a
//! partition of the action set.

pub mod cli;
pub mod cost;
pub mod error;
pub mod fixtures;
pub mod format;
pub mod mdp;
pub mod nac;
pub mod net_value;
pub mod offline;
pub mod ot;
pub mod policy;

pub use cost::{CostSpec, CustomCostTable, Partition, PolicyClass, SwitchCost};
pub use error::{Error, Result};
pub use mdp::{evaluate_exact, evaluate_infinite, simulate, FiniteMdp, NetQTable, QTable, Trajectory};
pub use nac::{run_nac, NacConfig, NacReport, StoppingConfig};
pub use net_value::{net_value_exact, switch_optimal_search, CandidateSet, SwitchProblem};
pub use offline::{evaluate_offline, generate_dataset, OpeConfig, TransitionDataset, TwinNetQ};
pub use ot::{DiscreteMeasure, GroundCost, PlanMode, TransportPlan};
pub use policy::TabularPolicy;
