//! Entropy-gated handling of measured commands: pass them through, block
//! them, or replace them with the command for the inferred intent.

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::inference::{infer_intended_command, ActionPrior, InferenceResult, UserModelTables};
use crate::model::{ControlMapping, InterfaceAction};

pub const DEFAULT_EPSILON: f64 = 0.7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssistanceMode {
    NoAssistance,
    Filter,
    Corrective,
}

impl AssistanceMode {
    pub const ALL: [AssistanceMode; 3] = [
        AssistanceMode::NoAssistance,
        AssistanceMode::Filter,
        AssistanceMode::Corrective,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AssistanceMode::NoAssistance => "no_assistance",
            AssistanceMode::Filter => "filter",
            AssistanceMode::Corrective => "corrective",
        }
    }
}

impl std::fmt::Display for AssistanceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// How the autonomy treats each measured command.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAssistanceConfig")]
pub struct AssistanceConfig {
    pub mode: AssistanceMode,
    /// Threshold on normalized posterior entropy; intervene only strictly below it.
    pub epsilon: f64,
    /// Suboptimality the autonomy assumes of the user's policy when it
    /// builds the action prior (0 = delta at the optimal action).
    #[serde(default)]
    pub assumed_policy_noise: f64,
    /// Run inference under `NoAssistance` too, for logging only.
    #[serde(default)]
    pub shadow_inference: bool,
}

#[derive(Deserialize)]
struct RawAssistanceConfig {
    mode: AssistanceMode,
    #[serde(default = "default_epsilon")]
    epsilon: f64,
    #[serde(default)]
    assumed_policy_noise: f64,
    #[serde(default)]
    shadow_inference: bool,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

impl TryFrom<RawAssistanceConfig> for AssistanceConfig {
    type Error = ModelError;

    fn try_from(raw: RawAssistanceConfig) -> Result<Self, Self::Error> {
        let cfg = AssistanceConfig::new(raw.mode, raw.epsilon)?
            .with_assumed_policy_noise(raw.assumed_policy_noise)?;
        Ok(AssistanceConfig {
            shadow_inference: raw.shadow_inference,
            ..cfg
        })
    }
}

impl AssistanceConfig {
    pub fn new(mode: AssistanceMode, epsilon: f64) -> Result<Self, ModelError> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(ModelError::Range(format!(
                "epsilon {epsilon} outside [0, 1]"
            )));
        }
        Ok(Self {
            mode,
            epsilon,
            assumed_policy_noise: 0.0,
            shadow_inference: false,
        })
    }

    pub fn with_assumed_policy_noise(mut self, rho: f64) -> Result<Self, ModelError> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(ModelError::Range(format!(
                "policy noise {rho} outside [0, 1]"
            )));
        }
        self.assumed_policy_noise = rho;
        Ok(self)
    }
}

impl Default for AssistanceConfig {
    fn default() -> Self {
        Self::new(AssistanceMode::Corrective, DEFAULT_EPSILON).expect("default epsilon in range")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeReason {
    PassedConsistent,
    PassedUncertain,
    Filtered,
    Corrected,
    NoAssist,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssistanceOutcome {
    pub phi_out: InterfaceAction,
    pub intervened: bool,
    pub reason: OutcomeReason,
    #[serde(flatten, default, skip_serializing_if = "Option::is_none")]
    pub inference: Option<InferenceResult>,
}

pub fn handle_command(
    phi_m: InterfaceAction,
    cfg: &AssistanceConfig,
    prior: &ActionPrior,
    tables: &UserModelTables,
    f: &ControlMapping,
) -> Result<AssistanceOutcome, ModelError> {
    if !phi_m.is_physical() {
        return Err(ModelError::NullAction);
    }
    if cfg.mode == AssistanceMode::NoAssistance {
        let inference = if cfg.shadow_inference {
            Some(infer_intended_command(phi_m, prior, tables, f)?)
        } else {
            None
        };
        return Ok(AssistanceOutcome {
            phi_out: phi_m,
            intervened: false,
            reason: OutcomeReason::NoAssist,
            inference,
        });
    }

    let inference = infer_intended_command(phi_m, prior, tables, f)?;
    let (phi_out, reason) = if inference.phi_inferred == phi_m {
        (phi_m, OutcomeReason::PassedConsistent)
    } else if inference.entropy_normalized < cfg.epsilon {
        match cfg.mode {
            AssistanceMode::Filter => (InterfaceAction::Null, OutcomeReason::Filtered),
            AssistanceMode::Corrective => (inference.phi_inferred, OutcomeReason::Corrected),
            AssistanceMode::NoAssistance => unreachable!("handled above"),
        }
    } else {
        (phi_m, OutcomeReason::PassedUncertain)
    };
    Ok(AssistanceOutcome {
        phi_out,
        intervened: matches!(reason, OutcomeReason::Filtered | OutcomeReason::Corrected),
        reason,
        inference: Some(inference),
    })
}
