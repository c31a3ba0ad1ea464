//! Simulated users and personalized tables.
//!
//! A simulated user samples `φ_i ~ p(φ_i | a)` and then `φ_m ~ p(φ_m | φ_i)`.
//! Noise is a single scalar per table: `λ = 0` is a point mass on the
//! correct symbol and `λ = 1` is uniform, with a linear mixture in between.
//!
//! Personalized tables are estimated from calibration trials by Laplace
//! smoothed counting. Timed-out trials are kept in the log but carry no
//! response symbol and are not counted.

use std::fmt;
use std::io::{BufRead, Write};

use rand::Rng;
use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::inference::UserModelTables;
use crate::model::{
    ConditionalTable, ControlMapping, Distribution, InterfaceAction, Symbol, TaskAction,
};

pub const DEFAULT_SMOOTHING: f64 = 1.0;
/// Response accuracy a calibration block must reach to count as proficient.
pub const DEFAULT_PROFICIENCY_THRESHOLD: f64 = 0.8;
/// Response window for a calibration prompt, in seconds.
pub const CALIBRATION_TIME_LIMIT_S: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct NoiseLevel(f64);

impl NoiseLevel {
    pub fn new(lambda: f64) -> Result<Self, ModelError> {
        if (0.0..=1.0).contains(&lambda) {
            Ok(Self(lambda))
        } else {
            Err(ModelError::Range(format!(
                "noise level {lambda} outside [0, 1]"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for NoiseLevel {
    type Error = ModelError;

    fn try_from(v: f64) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<NoiseLevel> for f64 {
    fn from(n: NoiseLevel) -> f64 {
        n.0
    }
}

impl fmt::Display for NoiseLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Row `y` puts `(1 - λ) + λ/4` on `diag(y)` and `λ/4` elsewhere.
///
/// `diag` must be a bijection between the two alphabets.
pub fn noise_table<Y: Symbol, X: Symbol>(
    lambda: NoiseLevel,
    diag: impl Fn(Y) -> X,
) -> Result<ConditionalTable<Y, X>, ModelError> {
    let mut seen = [false; 4];
    for y in Y::ALL {
        let x = diag(y);
        if std::mem::replace(&mut seen[x.index()], true) {
            return Err(ModelError::InvalidMapping(format!(
                "{x} is the diagonal of two rows"
            )));
        }
    }
    Ok(ConditionalTable::from_rows(Y::ALL.map(|y| {
        Distribution::delta_uniform_mixture(diag(y), lambda.value())
    })))
}

/// Tables with internal-model noise `λ_i` around `f` and distortion noise `λ_m`.
pub fn mixture_tables(
    lambda_i: NoiseLevel,
    lambda_m: NoiseLevel,
    f: &ControlMapping,
) -> UserModelTables {
    UserModelTables::new(
        noise_table(lambda_i, |a: TaskAction| f.forward(a))
            .expect("control mapping is a bijection"),
        noise_table(lambda_m, |phi: InterfaceAction| phi).expect("identity is a bijection"),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulatedUser {
    pub tables: UserModelTables,
    /// Probability mass the user's own policy spreads uniformly instead of
    /// taking the optimal action.
    pub policy_noise: f64,
    pub rng_seed: u64,
}

impl SimulatedUser {
    pub fn new(
        tables: UserModelTables,
        policy_noise: f64,
        rng_seed: u64,
    ) -> Result<Self, ModelError> {
        if !(0.0..=1.0).contains(&policy_noise) {
            return Err(ModelError::Range(format!(
                "policy noise {policy_noise} outside [0, 1]"
            )));
        }
        Ok(Self {
            tables,
            policy_noise,
            rng_seed,
        })
    }
}

/// Draws the intended and then the measured physical action for intent `a`.
pub fn sample_user_step<R: Rng + ?Sized>(
    a: TaskAction,
    user: &SimulatedUser,
    rng: &mut R,
) -> (InterfaceAction, InterfaceAction) {
    let phi_i = user.tables.internal_mapping.row(a).sample(rng);
    let phi_m = user.tables.distortion.row(phi_i).sample(rng);
    (phi_i, phi_m)
}

/// What the user was asked to produce.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Prompt {
    /// Phase 1: a depicted task action; the user answers with the physical action they believe maps to it.
    Task(TaskAction),
    /// Phase 2: a named physical action to reproduce.
    Interface(InterfaceAction),
}

impl fmt::Display for Prompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prompt::Task(a) => a.fmt(f),
            Prompt::Interface(phi) => phi.fmt(f),
        }
    }
}

/// A physical response, or no response within the time limit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Response {
    Action(InterfaceAction),
    Timeout,
}

impl Response {
    pub fn action(self) -> Option<InterfaceAction> {
        match self {
            Response::Action(phi) => Some(phi),
            Response::Timeout => None,
        }
    }
}

impl Serialize for Response {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Response::Action(phi) => serializer.serialize_str(phi.name()),
            Response::Timeout => serializer.serialize_str("timeout"),
        }
    }
}

impl<'de> Deserialize<'de> for Response {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        if s == "timeout" {
            return Ok(Response::Timeout);
        }
        match s.parse::<InterfaceAction>() {
            Ok(phi) if phi.is_physical() => Ok(Response::Action(phi)),
            _ => Err(de::Error::custom(format!("invalid response `{s}`"))),
        }
    }
}

/// One prompted calibration trial, as stored one-per-line in JSON-lines logs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub phase: u8,
    pub prompt: Prompt,
    pub response: Response,
    pub latency_s: f64,
}

impl CalibrationSample {
    pub fn new(prompt: Prompt, response: Response, latency_s: f64) -> Result<Self, ModelError> {
        let sample = Self {
            phase: match prompt {
                Prompt::Task(_) => 1,
                Prompt::Interface(_) => 2,
            },
            prompt,
            response,
            latency_s,
        };
        sample.validate()?;
        Ok(sample)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.latency_s.is_nan() || self.latency_s < 0.0 {
            return Err(ModelError::InvalidSample(format!(
                "latency {}",
                self.latency_s
            )));
        }
        match (self.phase, self.prompt) {
            (1, Prompt::Task(_)) => {}
            (2, Prompt::Interface(phi)) if phi.is_physical() => {}
            (phase, prompt) => {
                return Err(ModelError::InvalidSample(format!(
                    "prompt `{prompt}` does not belong to phase {phase}"
                )))
            }
        }
        Ok(())
    }

    /// The response that counts as correct for this prompt.
    pub fn expected(&self, f: &ControlMapping) -> InterfaceAction {
        match self.prompt {
            Prompt::Task(a) => f.forward(a),
            Prompt::Interface(phi) => phi,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableKind {
    InternalMapping,
    Distortion,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EstimatedTable {
    InternalMapping(ConditionalTable<TaskAction, InterfaceAction>),
    Distortion(ConditionalTable<InterfaceAction, InterfaceAction>),
}

fn smoothed_rows<Y: Symbol>(
    observations: impl IntoIterator<Item = (Y, Response)>,
    alpha: f64,
) -> Result<ConditionalTable<Y, InterfaceAction>, ModelError> {
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(ModelError::Range(format!("smoothing {alpha} must be >= 0")));
    }
    let mut counts = [[0.0f64; 4]; 4];
    for (y, response) in observations {
        if let Response::Action(phi) = response {
            counts[y.index()][phi.index()] += 1.0;
        }
    }
    let mut rows = [Distribution::uniform(); 4];
    for y in Y::ALL {
        let row = counts[y.index()];
        let total: f64 = row.iter().sum();
        rows[y.index()] = if total == 0.0 {
            if alpha == 0.0 {
                return Err(ModelError::EmptyData(y.name().to_string()));
            }
            Distribution::uniform()
        } else {
            Distribution::from_weights(row.map(|c| c + alpha)).expect("positive counts")
        };
    }
    Ok(ConditionalTable::from_rows(rows))
}

/// `p(x | y) = (count(y -> x) + α) / (count(y -> ·) + 4α)`.
pub fn estimate_internal_mapping(
    samples: &[CalibrationSample],
    alpha: f64,
) -> Result<ConditionalTable<TaskAction, InterfaceAction>, ModelError> {
    let mut obs = Vec::with_capacity(samples.len());
    for s in samples {
        s.validate()?;
        match s.prompt {
            Prompt::Task(a) => obs.push((a, s.response)),
            Prompt::Interface(phi) => {
                return Err(ModelError::InvalidSample(format!(
                    "internal-mapping estimate given interface prompt `{phi}`"
                )))
            }
        }
    }
    smoothed_rows(obs, alpha)
}

pub fn estimate_distortion(
    samples: &[CalibrationSample],
    alpha: f64,
) -> Result<ConditionalTable<InterfaceAction, InterfaceAction>, ModelError> {
    let mut obs = Vec::with_capacity(samples.len());
    for s in samples {
        s.validate()?;
        match s.prompt {
            Prompt::Interface(phi) => obs.push((phi, s.response)),
            Prompt::Task(a) => {
                return Err(ModelError::InvalidSample(format!(
                    "distortion estimate given task prompt `{a}`"
                )))
            }
        }
    }
    smoothed_rows(obs, alpha)
}

pub fn estimate_table(
    samples: &[CalibrationSample],
    kind: TableKind,
    alpha: f64,
) -> Result<EstimatedTable, ModelError> {
    Ok(match kind {
        TableKind::InternalMapping => {
            EstimatedTable::InternalMapping(estimate_internal_mapping(samples, alpha)?)
        }
        TableKind::Distortion => EstimatedTable::Distortion(estimate_distortion(samples, alpha)?),
    })
}

/// Share of trials answered with the expected action. Timeouts count as wrong.
pub fn response_accuracy(samples: &[CalibrationSample], f: &ControlMapping) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let correct = samples
        .iter()
        .filter(|s| s.response.action() == Some(s.expected(f)))
        .count();
    correct as f64 / samples.len() as f64
}

pub fn read_calibration_jsonl<R: BufRead>(
    reader: R,
) -> Result<Vec<CalibrationSample>, CalibrationIoError> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: CalibrationSample = serde_json::from_str(&line)
            .map_err(|e| CalibrationIoError::Parse(lineno + 1, e.to_string()))?;
        sample
            .validate()
            .map_err(|e| CalibrationIoError::Parse(lineno + 1, e.to_string()))?;
        out.push(sample);
    }
    Ok(out)
}

pub fn write_calibration_jsonl<W: Write>(
    mut writer: W,
    samples: &[CalibrationSample],
) -> std::io::Result<()> {
    for s in samples {
        serde_json::to_writer(&mut writer, s)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum CalibrationIoError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {0}: {1}")]
    Parse(usize, String),
}
