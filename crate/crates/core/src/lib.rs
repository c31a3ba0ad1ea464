//! Interface-aware assistance for modal teleoperation.
//!
//! The crate infers which task-level action a user meant from the physical
//! interface action that was measured, and uses that inference to filter
//! or correct commands. A discrete path-navigation world and a sweep
//! harness evaluate the assistance modes against simulated users.

pub mod assistance;
pub mod env;
pub mod error;
pub mod experiment;
pub mod inference;
pub mod model;
pub mod user_model;

pub use assistance::{
    handle_command, AssistanceConfig, AssistanceMode, AssistanceOutcome, OutcomeReason,
};
pub use env::{
    apply, generate_task, optimal_policy, policy_prior, run_trial, EnvStep, Mode, PathTask,
    TrialResult, WorldState,
};
pub use error::{EnvError, ExperimentError, ModelError};
pub use inference::{
    infer_intended_command, posterior, ActionPrior, InferenceResult, UserModelTables,
};
pub use model::{
    default_mapping, entropy, map_inverse, ConditionalTable, ControlMapping, Distribution, Entropy,
    InterfaceAction, Symbol, TaskAction,
};
pub use user_model::{
    estimate_table, mixture_tables, noise_table, sample_user_step, CalibrationSample, NoiseLevel,
    Prompt, Response, SimulatedUser, TableKind,
};
