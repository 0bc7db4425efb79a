//! Exact dynamic programming on small instruction-augmented MDPs.
//!
//! Compares the naive Bellman operator on `S x C`, whose backups bootstrap
//! across instruction changes, with the corrected operator, which keeps
//! each backup inside the class that was in force.

pub mod error;
pub mod mdp;
pub mod operators;
pub mod oracle;
pub mod sweep;

pub use error::{Result, SolverError};
pub use mdp::{class_transition_matrix, from_chain, random_instance, RandomInstance, TabularAugmentedMDP};
pub use operators::{
    backup, backup_policy, evaluate_policy, greedy_policy, q_values, value_iteration, Operator, ValueTable, ViOptions,
    ViResult,
};
pub use oracle::{verify_decoupling, ClassDetail, DecouplingReport, VerificationReport};
pub use sweep::{contamination_sweep, write_csv, SweepOptions, SweepRow};
