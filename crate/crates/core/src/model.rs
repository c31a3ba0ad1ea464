//! Action alphabets, the interface control mapping, and discrete
//! probability tables over those alphabets.
//!
//! Both alphabets that carry probability mass have exactly four symbols:
//! the four task-level action primitives and the four physical sip-n-puff
//! actions. [`InterfaceAction::Null`] exists only as the output of a
//! blocked command and never appears inside a distribution.

use std::collections::BTreeMap;
use std::fmt;
use std::marker::PhantomData;
use std::str::FromStr;

use rand::Rng;
use serde::de::{self, Deserializer};
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Summation tolerance for a valid probability vector.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;
/// Inputs whose mass is within this distance of 1 are renormalized on construction.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-6;

/// A finite alphabet with exactly four probability-carrying symbols.
pub trait Symbol:
    Copy + Eq + Ord + fmt::Debug + fmt::Display + FromStr<Err = ModelError> + Send + Sync + 'static
{
    const ALL: [Self; 4];

    fn index(self) -> usize;

    fn name(self) -> &'static str;

    fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }
}

/// Interface-level physical action on a sip-n-puff, plus the blocked command.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterfaceAction {
    HardPuff,
    SoftPuff,
    HardSip,
    SoftSip,
    Null,
}

impl InterfaceAction {
    pub const PHYSICAL: [InterfaceAction; 4] = [
        InterfaceAction::HardPuff,
        InterfaceAction::SoftPuff,
        InterfaceAction::HardSip,
        InterfaceAction::SoftSip,
    ];

    pub fn is_physical(self) -> bool {
        self != InterfaceAction::Null
    }
}

impl Symbol for InterfaceAction {
    const ALL: [Self; 4] = Self::PHYSICAL;

    /// Position within [`InterfaceAction::PHYSICAL`].
    ///
    /// Panics on `Null`; callers screen it out first.
    fn index(self) -> usize {
        match self {
            InterfaceAction::HardPuff => 0,
            InterfaceAction::SoftPuff => 1,
            InterfaceAction::HardSip => 2,
            InterfaceAction::SoftSip => 3,
            InterfaceAction::Null => panic!("null action has no table index"),
        }
    }

    fn name(self) -> &'static str {
        match self {
            InterfaceAction::HardPuff => "hard_puff",
            InterfaceAction::SoftPuff => "soft_puff",
            InterfaceAction::HardSip => "hard_sip",
            InterfaceAction::SoftSip => "soft_sip",
            InterfaceAction::Null => "null",
        }
    }
}

impl fmt::Display for InterfaceAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InterfaceAction {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hard_puff" => Ok(InterfaceAction::HardPuff),
            "soft_puff" => Ok(InterfaceAction::SoftPuff),
            "hard_sip" => Ok(InterfaceAction::HardSip),
            "soft_sip" => Ok(InterfaceAction::SoftSip),
            "null" => Ok(InterfaceAction::Null),
            other => Err(ModelError::UnknownSymbol(other.to_string())),
        }
    }
}

/// Task-level action primitive. Declaration order is the argmax tie-break order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskAction {
    ModeSwitchCw,
    ModeSwitchCcw,
    MotionPositive,
    MotionNegative,
}

impl TaskAction {
    pub fn is_mode_switch(self) -> bool {
        matches!(self, TaskAction::ModeSwitchCw | TaskAction::ModeSwitchCcw)
    }
}

impl Symbol for TaskAction {
    const ALL: [Self; 4] = [
        TaskAction::ModeSwitchCw,
        TaskAction::ModeSwitchCcw,
        TaskAction::MotionPositive,
        TaskAction::MotionNegative,
    ];

    fn index(self) -> usize {
        self as usize
    }

    fn name(self) -> &'static str {
        match self {
            TaskAction::ModeSwitchCw => "mode_switch_cw",
            TaskAction::ModeSwitchCcw => "mode_switch_ccw",
            TaskAction::MotionPositive => "motion_positive",
            TaskAction::MotionNegative => "motion_negative",
        }
    }
}

impl fmt::Display for TaskAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskAction {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskAction::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| ModelError::UnknownSymbol(s.to_string()))
    }
}

/// The interface's true, deterministic map from task actions to physical actions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ControlMapping {
    forward: [InterfaceAction; 4],
    inverse: [TaskAction; 4],
}

impl ControlMapping {
    /// Builds a mapping from `forward[a.index()]`; it must be a bijection
    /// onto the physical actions.
    pub fn new(forward: [InterfaceAction; 4]) -> Result<Self, ModelError> {
        let mut inverse: [Option<TaskAction>; 4] = [None; 4];
        for (a, phi) in TaskAction::ALL.into_iter().zip(forward) {
            if !phi.is_physical() {
                return Err(ModelError::InvalidMapping(format!("{a} maps to null")));
            }
            let slot = &mut inverse[phi.index()];
            if let Some(prev) = slot {
                return Err(ModelError::InvalidMapping(format!(
                    "{prev} and {a} both map to {phi}"
                )));
            }
            *slot = Some(a);
        }
        Ok(Self {
            forward,
            inverse: inverse.map(|a| a.expect("four distinct images cover the alphabet")),
        })
    }

    pub fn forward(&self, a: TaskAction) -> InterfaceAction {
        self.forward[a.index()]
    }

    /// The task action whose image is `phi`.
    pub fn inverse(&self, phi: InterfaceAction) -> Result<TaskAction, ModelError> {
        if phi.is_physical() {
            Ok(self.inverse[phi.index()])
        } else {
            Err(ModelError::NullAction)
        }
    }
}

impl Default for ControlMapping {
    fn default() -> Self {
        default_mapping()
    }
}

/// Hard actions switch modes, soft actions move.
pub fn default_mapping() -> ControlMapping {
    ControlMapping::new([
        InterfaceAction::HardPuff,
        InterfaceAction::HardSip,
        InterfaceAction::SoftPuff,
        InterfaceAction::SoftSip,
    ])
    .expect("canonical mapping is a bijection")
}

pub fn map_inverse(m: &ControlMapping, phi: InterfaceAction) -> Result<TaskAction, ModelError> {
    m.inverse(phi)
}

impl Serialize for ControlMapping {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(4))?;
        for a in TaskAction::ALL {
            map.serialize_entry(a.name(), self.forward(a).name())?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for ControlMapping {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = BTreeMap::<String, InterfaceAction>::deserialize(deserializer)?;
        let forward = symbol_keyed::<TaskAction, InterfaceAction, D::Error>(raw)?;
        ControlMapping::new(forward).map_err(de::Error::custom)
    }
}

/// A probability vector over a four-symbol alphabet.
#[derive(Clone, Copy, PartialEq)]
pub struct Distribution<X: Symbol> {
    probs: [f64; 4],
    _alphabet: PhantomData<X>,
}

impl<X: Symbol> fmt::Debug for Distribution<X> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map()
            .entries(X::ALL.iter().map(|x| (x.name(), self.probs[x.index()])))
            .finish()
    }
}

impl<X: Symbol> Distribution<X> {
    /// Validates `probs` (indexed by [`Symbol::index`]), renormalizing when the
    /// total is within [`RENORMALIZE_TOLERANCE`] of one.
    pub fn new(probs: [f64; 4]) -> Result<Self, ModelError> {
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(ModelError::InvalidDistribution(format!(
                "entry {p} out of range"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > RENORMALIZE_TOLERANCE {
            return Err(ModelError::InvalidDistribution(format!(
                "mass {total} is not 1"
            )));
        }
        let probs = if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            probs.map(|p| p / total)
        } else {
            probs
        };
        Ok(Self::from_normalized(probs))
    }

    /// Normalizes arbitrary non-negative weights. Returns `None` when the
    /// total weight is zero.
    pub fn from_weights(weights: [f64; 4]) -> Option<Self> {
        let total: f64 = weights.iter().sum();
        if total > 0.0 && total.is_finite() {
            Some(Self::from_normalized(weights.map(|w| w / total)))
        } else {
            None
        }
    }

    pub(crate) fn from_normalized(probs: [f64; 4]) -> Self {
        Self {
            probs,
            _alphabet: PhantomData,
        }
    }

    pub fn uniform() -> Self {
        Self::from_normalized([0.25; 4])
    }

    pub fn delta(at: X) -> Self {
        let mut probs = [0.0; 4];
        probs[at.index()] = 1.0;
        Self::from_normalized(probs)
    }

    /// `(1 - weight)` on `at` plus `weight` spread uniformly over all symbols.
    pub fn delta_uniform_mixture(at: X, weight: f64) -> Self {
        let mut probs = [weight / 4.0; 4];
        probs[at.index()] += 1.0 - weight;
        Self::from_normalized(probs)
    }

    pub fn prob(&self, x: X) -> f64 {
        self.probs[x.index()]
    }

    pub fn probs(&self) -> &[f64; 4] {
        &self.probs
    }

    pub fn iter(&self) -> impl Iterator<Item = (X, f64)> + '_ {
        X::ALL.into_iter().map(move |x| (x, self.probs[x.index()]))
    }

    /// Most probable symbol; ties go to the earliest symbol in declaration order.
    pub fn argmax(&self) -> X {
        let mut best = 0;
        for i in 1..4 {
            if self.probs[i] > self.probs[best] {
                best = i;
            }
        }
        X::from_index(best)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> X {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for x in X::ALL {
            acc += self.probs[x.index()];
            if u < acc {
                return x;
            }
        }
        // u landed in the rounding slack above the cumulative sum
        X::ALL
            .into_iter()
            .rev()
            .find(|x| self.probs[x.index()] > 0.0)
            .expect("a distribution has positive mass somewhere")
    }
}

impl<X: Symbol> Serialize for Distribution<X> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(4))?;
        for (x, p) in self.iter() {
            map.serialize_entry(x.name(), &p)?;
        }
        map.end()
    }
}

impl<'de, X: Symbol> Deserialize<'de> for Distribution<X> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = BTreeMap::<String, f64>::deserialize(deserializer)?;
        let probs = symbol_keyed::<X, f64, D::Error>(raw)?;
        Distribution::new(probs).map_err(de::Error::custom)
    }
}

fn symbol_keyed<K: Symbol, V: Copy, E: de::Error>(raw: BTreeMap<String, V>) -> Result<[V; 4], E> {
    let mut out: [Option<V>; 4] = [None; 4];
    for (k, v) in raw {
        let key = K::ALL
            .into_iter()
            .find(|s| s.name() == k)
            .ok_or_else(|| E::custom(format!("unknown key `{k}`")))?;
        out[key.index()] = Some(v);
    }
    let mut values = Vec::with_capacity(4);
    for k in K::ALL {
        values
            .push(out[k.index()].ok_or_else(|| E::custom(format!("missing key `{}`", k.name())))?);
    }
    Ok([values[0], values[1], values[2], values[3]])
}

/// Row-stochastic table `p(x | y)`.
#[derive(Clone, Copy, PartialEq)]
pub struct ConditionalTable<Y: Symbol, X: Symbol> {
    rows: [Distribution<X>; 4],
    _given: PhantomData<Y>,
}

impl<Y: Symbol, X: Symbol> fmt::Debug for ConditionalTable<Y, X> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map()
            .entries(Y::ALL.iter().map(|y| (y.name(), &self.rows[y.index()])))
            .finish()
    }
}

impl<Y: Symbol, X: Symbol> ConditionalTable<Y, X> {
    pub fn from_rows(rows: [Distribution<X>; 4]) -> Self {
        Self {
            rows,
            _given: PhantomData,
        }
    }

    /// Builds a table from raw rows `matrix[y][x]`, validating each row.
    pub fn from_matrix(matrix: [[f64; 4]; 4]) -> Result<Self, ModelError> {
        let mut rows = [Distribution::uniform(); 4];
        for (row, probs) in rows.iter_mut().zip(matrix) {
            *row = Distribution::new(probs)?;
        }
        Ok(Self::from_rows(rows))
    }

    pub fn uniform() -> Self {
        Self::from_rows([Distribution::uniform(); 4])
    }

    /// Every row is a point mass on `image(y)`.
    pub fn deterministic(image: impl Fn(Y) -> X) -> Self {
        Self::from_rows(Y::ALL.map(|y| Distribution::delta(image(y))))
    }

    pub fn row(&self, y: Y) -> &Distribution<X> {
        &self.rows[y.index()]
    }

    pub fn prob(&self, y: Y, x: X) -> f64 {
        self.rows[y.index()].prob(x)
    }

    /// Chains `p(x | y)` with `p(z | x)` into `p(z | y) = Σ_x p(z | x) p(x | y)`.
    pub fn then<Z: Symbol>(&self, next: &ConditionalTable<X, Z>) -> ConditionalTable<Y, Z> {
        let rows = Y::ALL.map(|y| {
            let mut probs = [0.0; 4];
            for (x, p_x) in self.row(y).iter() {
                for (z, p_z) in next.row(x).iter() {
                    probs[z.index()] += p_z * p_x;
                }
            }
            Distribution::from_normalized(probs)
        });
        ConditionalTable::from_rows(rows)
    }

    /// Largest absolute entry-wise difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.rows
            .iter()
            .zip(other.rows.iter())
            .flat_map(|(a, b)| {
                a.probs
                    .iter()
                    .zip(b.probs.iter())
                    .map(|(p, q)| (p - q).abs())
            })
            .fold(0.0, f64::max)
    }
}

impl<Y: Symbol, X: Symbol> Serialize for ConditionalTable<Y, X> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(4))?;
        for y in Y::ALL {
            map.serialize_entry(y.name(), self.row(y))?;
        }
        map.end()
    }
}

impl<'de, Y: Symbol, X: Symbol> Deserialize<'de> for ConditionalTable<Y, X> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = BTreeMap::<String, Distribution<X>>::deserialize(deserializer)?;
        let rows = symbol_keyed::<Y, Distribution<X>, D::Error>(raw)?;
        Ok(Self::from_rows(rows))
    }
}

/// Shannon entropy in nats and normalized by `ln 4`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entropy {
    pub nats: f64,
    pub normalized: f64,
}

pub fn entropy<X: Symbol>(d: &Distribution<X>) -> Entropy {
    let nats: f64 = d
        .probs
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    let nats = nats.max(0.0);
    Entropy {
        nats,
        normalized: (nats / (X::ALL.len() as f64).ln()).clamp(0.0, 1.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_mapping() {
        let f = default_mapping();
        assert_eq!(
            f.forward(TaskAction::ModeSwitchCw),
            InterfaceAction::HardPuff
        );
        assert_eq!(
            f.forward(TaskAction::MotionNegative),
            InterfaceAction::SoftSip
        );
        assert_eq!(
            f.inverse(InterfaceAction::SoftPuff).unwrap(),
            TaskAction::MotionPositive
        );
        assert_eq!(
            map_inverse(&f, InterfaceAction::HardPuff).unwrap(),
            TaskAction::ModeSwitchCw
        );
        assert_eq!(
            map_inverse(&f, InterfaceAction::SoftSip).unwrap(),
            TaskAction::MotionNegative
        );
        assert_eq!(
            map_inverse(&f, InterfaceAction::Null),
            Err(ModelError::NullAction)
        );
    }

    #[test]
    fn mapping_round_trips() {
        let f = default_mapping();
        for a in TaskAction::ALL {
            assert_eq!(f.inverse(f.forward(a)).unwrap(), a);
        }
        for phi in InterfaceAction::PHYSICAL {
            assert_eq!(f.forward(f.inverse(phi).unwrap()), phi);
        }
    }

    #[test]
    fn mapping_rejects_non_bijection() {
        use InterfaceAction::*;
        assert!(ControlMapping::new([HardPuff, HardPuff, SoftPuff, SoftSip]).is_err());
        assert!(ControlMapping::new([HardPuff, Null, SoftPuff, SoftSip]).is_err());
    }

    #[test]
    fn mapping_json_uses_snake_case_names() {
        let json = serde_json::to_string(&default_mapping()).unwrap();
        assert_eq!(
            json,
            r#"{"mode_switch_cw":"hard_puff","mode_switch_ccw":"hard_sip","motion_positive":"soft_puff","motion_negative":"soft_sip"}"#
        );
        let back: ControlMapping = serde_json::from_str(&json).unwrap();
        assert_eq!(back, default_mapping());
        let swapped = r#"{"mode_switch_cw":"soft_puff","mode_switch_ccw":"soft_sip","motion_positive":"hard_puff","motion_negative":"hard_sip"}"#;
        let m: ControlMapping = serde_json::from_str(swapped).unwrap();
        assert_eq!(
            m.forward(TaskAction::MotionPositive),
            InterfaceAction::HardPuff
        );
        let dup = r#"{"mode_switch_cw":"soft_puff","mode_switch_ccw":"soft_puff","motion_positive":"hard_puff","motion_negative":"hard_sip"}"#;
        assert!(serde_json::from_str::<ControlMapping>(dup).is_err());
    }

    #[test]
    fn distribution_constructor_tolerances() {
        let d = Distribution::<TaskAction>::new([0.5, 0.5 + 5e-7, 0.0, 0.0]).unwrap();
        let total: f64 = d.probs().iter().sum();
        assert!((total - 1.0).abs() < NORMALIZATION_TOLERANCE);
        assert!(Distribution::<TaskAction>::new([0.5, 0.6, 0.0, 0.0]).is_err());
        assert!(Distribution::<TaskAction>::new([1.1, -0.1, 0.0, 0.0]).is_err());
        assert!(Distribution::<TaskAction>::new([f64::NAN, 1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn argmax_ties_follow_declaration_order() {
        let d = Distribution::<TaskAction>::uniform();
        assert_eq!(d.argmax(), TaskAction::ModeSwitchCw);
        let d = Distribution::<TaskAction>::new([0.1, 0.3, 0.3, 0.3]).unwrap();
        assert_eq!(d.argmax(), TaskAction::ModeSwitchCcw);
    }

    #[test]
    fn entropy_examples() {
        let delta = Distribution::delta(TaskAction::MotionPositive);
        assert_eq!(entropy(&delta).nats, 0.0);
        assert_eq!(entropy(&delta).normalized, 0.0);

        let uniform = Distribution::<InterfaceAction>::uniform();
        let h = entropy(&uniform);
        assert!((h.nats - 4f64.ln()).abs() < 1e-12);
        assert_eq!(h.normalized, 1.0);

        // frozen from a direct evaluation of -Σ p ln p
        let d = Distribution::<TaskAction>::new([0.73, 0.09, 0.09, 0.09]).unwrap();
        let h = entropy(&d);
        assert!((h.nats - 0.879_884_158_068_986_8).abs() < 1e-12);
        assert!((h.normalized - 0.634_702_255_701_444).abs() < 1e-12);
    }

    #[test]
    fn table_json_round_trip() {
        let t = ConditionalTable::<TaskAction, InterfaceAction>::deterministic(|a| {
            default_mapping().forward(a)
        });
        let json = serde_json::to_value(t).unwrap();
        assert_eq!(json["mode_switch_cw"]["hard_puff"], 1.0);
        assert_eq!(json["motion_negative"]["soft_puff"], 0.0);
        let back: ConditionalTable<TaskAction, InterfaceAction> =
            serde_json::from_value(json).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn table_json_rejects_bad_rows() {
        let bad = r#"{"hard_puff":{"hard_puff":0.9,"soft_puff":0.0,"hard_sip":0.0,"soft_sip":0.0},
            "soft_puff":{"hard_puff":0.25,"soft_puff":0.25,"hard_sip":0.25,"soft_sip":0.25},
            "hard_sip":{"hard_puff":0.25,"soft_puff":0.25,"hard_sip":0.25,"soft_sip":0.25},
            "soft_sip":{"hard_puff":0.25,"soft_puff":0.25,"hard_sip":0.25,"soft_sip":0.25}}"#;
        assert!(
            serde_json::from_str::<ConditionalTable<InterfaceAction, InterfaceAction>>(bad)
                .is_err()
        );
        let null_key =
            r#"{"null":{"hard_puff":1.0,"soft_puff":0.0,"hard_sip":0.0,"soft_sip":0.0}}"#;
        assert!(serde_json::from_str::<Distribution<InterfaceAction>>(
            r#"{"null":1.0,"soft_puff":0.0,"hard_sip":0.0,"soft_sip":0.0}"#
        )
        .is_err());
        assert!(
            serde_json::from_str::<ConditionalTable<InterfaceAction, InterfaceAction>>(null_key)
                .is_err()
        );
    }

    #[test]
    fn chaining_with_identity_is_identity() {
        let t = ConditionalTable::<TaskAction, InterfaceAction>::from_matrix([
            [0.7, 0.1, 0.1, 0.1],
            [0.0, 0.5, 0.5, 0.0],
            [0.25; 4],
            [0.0, 0.0, 0.0, 1.0],
        ])
        .unwrap();
        let id = ConditionalTable::<InterfaceAction, InterfaceAction>::deterministic(|x| x);
        assert!(t.then(&id).max_abs_diff(&t) < 1e-15);
    }
}
