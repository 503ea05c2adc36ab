//! Risk-averse unit commitment over scenario trees.
//!
//! The crate builds two-stage and multi-stage unit-commitment MILPs whose
//! objective is a composite mean-upper-semideviation risk measure, solves
//! them, evaluates rolling-horizon policies and computes the value of
//! multi-stage decisions together with analytical bounds on it.

pub mod analysis;
pub mod instance;
pub mod milp;
pub mod policy;
pub mod risk;
pub mod scenario_tree;
pub mod ucmodel;

pub use instance::{Generator, Instance, InstanceError, ScenarioSpec, ValidationReport};
pub use milp::{BackendKind, MilpError, SolveOptions, SolveStatus};
pub use risk::{RiskError, RiskKind, RiskSpec};
pub use scenario_tree::{build_tree, NodeId, ScenarioTree, TreeError};
