//! Posterior over intended task-level actions given one measured physical action.
//!
//! The measured action depends on the intended task action only through the
//! chain `a -> φ_i -> φ_m`, so the likelihood of `φ_m` under `a` is the
//! `(a, φ_m)` entry of the composed channel `p(φ_i | a) · p(φ_m | φ_i)`. The
//! posterior multiplies that likelihood into the action prior and
//! renormalizes. Inference is per step; nothing is carried across time.

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::model::{
    entropy, ConditionalTable, ControlMapping, Distribution, InterfaceAction, TaskAction,
};

/// The two user-specific tables: the internal model `p(φ_i | a)` and the
/// input distortion model `p(φ_m | φ_i)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserModelTables {
    pub internal_mapping: ConditionalTable<TaskAction, InterfaceAction>,
    pub distortion: ConditionalTable<InterfaceAction, InterfaceAction>,
}

impl UserModelTables {
    pub fn new(
        internal_mapping: ConditionalTable<TaskAction, InterfaceAction>,
        distortion: ConditionalTable<InterfaceAction, InterfaceAction>,
    ) -> Self {
        Self {
            internal_mapping,
            distortion,
        }
    }

    /// Noise-free tables: the user knows `f` and the interface never distorts.
    pub fn noise_free(f: &ControlMapping) -> Self {
        Self::new(
            ConditionalTable::deterministic(|a| f.forward(a)),
            ConditionalTable::deterministic(|phi| phi),
        )
    }

    /// `p(φ_m | a)`, the internal model chained through the distortion model.
    pub fn measurement_channel(&self) -> ConditionalTable<TaskAction, InterfaceAction> {
        self.internal_mapping.then(&self.distortion)
    }
}

/// Prior over the task action the user currently intends.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionPrior(pub Distribution<TaskAction>);

impl ActionPrior {
    pub fn uniform() -> Self {
        Self(Distribution::uniform())
    }

    pub fn delta(a: TaskAction) -> Self {
        Self(Distribution::delta(a))
    }

    pub fn dist(&self) -> &Distribution<TaskAction> {
        &self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub posterior: Distribution<TaskAction>,
    pub a_inferred: TaskAction,
    pub phi_inferred: InterfaceAction,
    pub entropy_normalized: f64,
    pub entropy_nats: f64,
}

/// `p(a | φ_m) ∝ p(a) Σ_{φ_i} p(φ_m | φ_i) p(φ_i | a)`.
///
/// When every action has zero joint mass with `φ_m` the prior is returned.
pub fn posterior(
    phi_m: InterfaceAction,
    prior: &ActionPrior,
    tables: &UserModelTables,
) -> Result<Distribution<TaskAction>, ModelError> {
    if !phi_m.is_physical() {
        return Err(ModelError::NullAction);
    }
    let channel = tables.measurement_channel();
    let mut scores = [0.0; 4];
    for (a, p_a) in prior.dist().iter() {
        scores[a as usize] = p_a * channel.prob(a, phi_m);
    }
    Ok(Distribution::from_weights(scores).unwrap_or(prior.0))
}

/// Posterior, its argmax, and the physical action that argmax maps to under `f`.
pub fn infer_intended_command(
    phi_m: InterfaceAction,
    prior: &ActionPrior,
    tables: &UserModelTables,
    f: &ControlMapping,
) -> Result<InferenceResult, ModelError> {
    let posterior = posterior(phi_m, prior, tables)?;
    let a_inferred = posterior.argmax();
    let h = entropy(&posterior);
    Ok(InferenceResult {
        posterior,
        a_inferred,
        phi_inferred: f.forward(a_inferred),
        entropy_normalized: h.normalized,
        entropy_nats: h.nats,
    })
}
