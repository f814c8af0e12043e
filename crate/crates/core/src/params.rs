//! The 29-dimensional model parameter space and the hospital state graph.
//!
//! Parameters come in four roles: durations (days spent before an edge is
//! taken), transition probabilities, distribution properties of the duration
//! sampler, and risk coefficients. Every duration and probability parameter is
//! bound to exactly one edge of the [`StateGraph`]; the graph topology is fixed.
//!
//! Bounds and defaults shipped here are artifact defaults, not fitted values.
//! They are chosen so that every in-bounds vector is feasible: at every state
//! the upper bounds of the explicit outgoing probabilities sum to at most one.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Number of model parameters.
pub const PARAM_COUNT: usize = 29;

/// Tolerance used when checking that outgoing probabilities form a distribution.
pub const PROB_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    DurationDays,
    Probability,
    Distribution,
    Risk,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::DurationDays => "duration-days",
            Role::Probability => "probability",
            Role::Distribution => "distribution",
            Role::Risk => "risk",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamDef {
    /// 1-based, stable.
    pub index: usize,
    pub name: String,
    pub role: Role,
    pub lower: f64,
    pub upper: f64,
    pub default: f64,
}

impl ParamDef {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }
}

/// Hospital states. `Healthy` and `Death` are absorbing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum State {
    Infected,
    Hospital,
    Normal,
    Intensive,
    Ventilation,
    IntensiveAfter,
    Aftercare,
    Healthy,
    Death,
}

impl State {
    pub const ALL: [State; 9] = [
        State::Infected,
        State::Hospital,
        State::Normal,
        State::Intensive,
        State::Ventilation,
        State::IntensiveAfter,
        State::Aftercare,
        State::Healthy,
        State::Death,
    ];

    pub fn is_absorbing(self) -> bool {
        matches!(self, State::Healthy | State::Death)
    }

    /// Resource occupied while a patient sits in this state.
    pub fn resource(self) -> Option<Resource> {
        match self {
            State::Normal | State::Aftercare => Some(Resource::Bed),
            State::Intensive | State::IntensiveAfter => Some(Resource::Icu),
            State::Ventilation => Some(Resource::Vent),
            _ => None,
        }
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resource {
    Bed,
    Icu,
    Vent,
}

impl Resource {
    pub const ALL: [Resource; 3] = [Resource::Bed, Resource::Icu, Resource::Vent];

    pub fn slot(self) -> usize {
        match self {
            Resource::Bed => 0,
            Resource::Icu => 1,
            Resource::Vent => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProbBinding {
    /// 1-based parameter index.
    Param(usize),
    /// One minus the sum of the sibling edges.
    Complement,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DurationBinding {
    Param(usize),
    Instantaneous,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: State,
    pub to: State,
    pub prob: ProbBinding,
    pub duration: DurationBinding,
    pub risk_sensitive: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateGraph {
    edges: Vec<Edge>,
}

impl StateGraph {
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Outgoing edges of `state` in declaration order.
    pub fn outgoing(&self, state: State) -> impl Iterator<Item = (usize, &Edge)> {
        self.edges.iter().enumerate().filter(move |(_, e)| e.from == state)
    }

    /// Base outgoing distribution of `state` under `x`, in declaration order.
    /// The complement edge may come out negative for an infeasible vector.
    pub fn base_probs(&self, state: State, x: &[f64]) -> Vec<f64> {
        let mut explicit = 0.0;
        let mut out: Vec<f64> = self
            .outgoing(state)
            .map(|(_, e)| match e.prob {
                ProbBinding::Param(i) => {
                    explicit += x[i - 1];
                    x[i - 1]
                }
                ProbBinding::Complement => f64::NAN,
            })
            .collect();
        for p in out.iter_mut() {
            if p.is_nan() {
                *p = 1.0 - explicit;
            }
        }
        out
    }

    fn check(&self) -> Result<(), String> {
        for s in State::ALL {
            let out: Vec<_> = self.outgoing(s).map(|(_, e)| *e).collect();
            if s.is_absorbing() {
                if !out.is_empty() {
                    return Err(format!("absorbing state {s} has outgoing edges"));
                }
                continue;
            }
            let complements = out.iter().filter(|e| e.prob == ProbBinding::Complement).count();
            if complements != 1 {
                return Err(format!("state {s} has {complements} complement edges"));
            }
        }
        let mut seen = BTreeSet::new();
        for e in &self.edges {
            for idx in [
                match e.prob {
                    ProbBinding::Param(i) => Some(i),
                    _ => None,
                },
                match e.duration {
                    DurationBinding::Param(i) => Some(i),
                    _ => None,
                },
            ]
            .into_iter()
            .flatten()
            {
                if !seen.insert(idx) {
                    return Err(format!("parameter {idx} bound to more than one edge"));
                }
            }
        }
        Ok(())
    }
}

/// Canonical hospital graph.
pub fn canonical_graph() -> StateGraph {
    use DurationBinding::{Instantaneous as Now, Param as D};
    use ProbBinding::{Complement as Rest, Param as P};
    use State::*;

    let e = |from, to, prob, duration, risk_sensitive| Edge {
        from,
        to,
        prob,
        duration,
        risk_sensitive,
    };
    let edges = vec![
        e(Infected, Hospital, P(14), D(1), false),
        e(Infected, Healthy, Rest, D(24), false),
        e(Hospital, Intensive, P(15), Now, true),
        e(Hospital, Ventilation, P(16), Now, true),
        e(Hospital, Normal, Rest, Now, false),
        e(Normal, Intensive, P(17), D(3), true),
        e(Normal, Ventilation, P(18), D(4), true),
        e(Normal, Death, P(19), D(5), true),
        e(Normal, Healthy, Rest, D(2), false),
        e(Intensive, Ventilation, P(20), D(7), false),
        e(Intensive, Death, P(21), D(8), true),
        e(Intensive, Aftercare, Rest, D(6), false),
        e(Ventilation, IntensiveAfter, P(22), D(9), false),
        e(Ventilation, Death, Rest, D(10), false),
        e(IntensiveAfter, Death, P(23), D(12), true),
        e(IntensiveAfter, Healthy, Rest, D(11), false),
        e(Aftercare, Healthy, Rest, D(28), false),
    ];
    let graph = StateGraph { edges };
    debug_assert!(graph.check().is_ok());
    graph
}

// (index, name, role, lower, upper, default)
const CANONICAL: [(usize, &str, Role, f64, f64, f64); PARAM_COUNT] = [
    (1, "AmntDaysInfectedToHospital", Role::DurationDays, 2.0, 14.0, 6.0),
    (2, "AmntDaysNormalToHealthy", Role::DurationDays, 3.0, 20.0, 10.0),
    (3, "AmntDaysNormalToIntensive", Role::DurationDays, 1.5, 8.0, 3.0),
    (4, "AmntDaysNormalToVentilation", Role::DurationDays, 1.5, 8.0, 3.5),
    (5, "AmntDaysNormalToDeath", Role::DurationDays, 2.0, 16.0, 6.0),
    (6, "AmntDaysIntensiveToAftercare", Role::DurationDays, 2.0, 14.0, 6.0),
    (7, "AmntDaysIntensiveToVentilation", Role::DurationDays, 1.5, 8.0, 2.5),
    (8, "AmntDaysIntensiveToDeath", Role::DurationDays, 2.0, 16.0, 7.0),
    (
        9,
        "AmntDaysVentilationToIntensiveAfter",
        Role::DurationDays,
        4.0,
        25.0,
        12.0,
    ),
    (10, "AmntDaysVentilationToDeath", Role::DurationDays, 3.0, 25.0, 11.0),
    (
        11,
        "AmntDaysIntensiveAfterToHealthy",
        Role::DurationDays,
        2.0,
        14.0,
        5.0,
    ),
    (12, "AmntDaysIntensiveAfterToDeath", Role::DurationDays, 2.0, 14.0, 5.0),
    (13, "GammaShapeParameter", Role::Distribution, 0.5, 5.0, 1.5),
    (
        14,
        "FactorPatientsInfectedToHospital",
        Role::Probability,
        0.01,
        0.3,
        0.1,
    ),
    (
        15,
        "FactorPatientsHospitalToIntensive",
        Role::Probability,
        0.0,
        0.3,
        0.08,
    ),
    (
        16,
        "FactorPatientsHospitalToVentilation",
        Role::Probability,
        0.0,
        0.2,
        0.04,
    ),
    (17, "FactorPatientsNormalToIntensive", Role::Probability, 0.0, 0.3, 0.08),
    (
        18,
        "FactorPatientsNormalToVentilation",
        Role::Probability,
        0.0,
        0.2,
        0.03,
    ),
    (19, "FactorPatientsNormalToDeath", Role::Probability, 0.0, 0.3, 0.08),
    (
        20,
        "FactorPatientsIntensiveToVentilation",
        Role::Probability,
        0.0,
        0.5,
        0.25,
    ),
    (21, "FactorPatientsIntensiveToDeath", Role::Probability, 0.0, 0.4, 0.1),
    (
        22,
        "FactorPatientsVentilationToIntensiveAfter",
        Role::Probability,
        0.2,
        0.95,
        0.6,
    ),
    (
        23,
        "FactorPatientsIntensiveAfterToDeath",
        Role::Probability,
        0.0,
        0.4,
        0.1,
    ),
    (24, "AmntDaysInfectedToHealthy", Role::DurationDays, 5.0, 21.0, 12.0),
    (25, "RiskFactorA", Role::Risk, 0.005, 0.05, 0.02),
    (26, "RiskFactorB", Role::Risk, 0.0, 0.08, 0.03),
    (27, "RiskMale", Role::Risk, 1.0, 2.0, 1.5),
    (28, "AmntDaysAftercareToHealthy", Role::DurationDays, 2.0, 14.0, 5.0),
    (29, "GammaTranslation", Role::Distribution, 0.0, 1.0, 0.5),
];

/// Parameter index of the gamma shape (distribution role).
pub const IDX_GAMMA_SHAPE: usize = 13;
/// Parameter index of the gamma translation in days.
pub const IDX_GAMMA_TRANSLATION: usize = 29;
pub const IDX_RISK_A: usize = 25;
pub const IDX_RISK_B: usize = 26;
pub const IDX_RISK_MALE: usize = 27;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSpace {
    entries: Vec<ParamDef>,
}

/// One record per parameter, as stored in a parameter-space config file.
#[derive(Debug, Serialize, Deserialize)]
struct SpaceFile {
    param: Vec<ParamDef>,
}

impl ParamSpace {
    /// Builds a space, checking every structural invariant.
    pub fn new(mut entries: Vec<ParamDef>) -> Result<Self, Error> {
        entries.sort_by_key(|e| e.index);
        if entries.len() != PARAM_COUNT {
            return Err(Error::Config(format!(
                "parameter space must have {PARAM_COUNT} entries, got {}",
                entries.len()
            )));
        }
        let mut names = BTreeSet::new();
        for (pos, e) in entries.iter().enumerate() {
            let (idx, name, role, ..) = CANONICAL[pos];
            if e.index != idx {
                return Err(Error::Config(format!("missing parameter index {idx}")));
            }
            if e.role != role {
                return Err(Error::Config(format!(
                    "parameter {idx} ({name}) must have role {role}, got {}",
                    e.role
                )));
            }
            if !names.insert(e.name.clone()) {
                return Err(Error::Config(format!("duplicate parameter name {}", e.name)));
            }
            if !(e.lower < e.upper) || !e.lower.is_finite() || !e.upper.is_finite() {
                return Err(Error::Config(format!(
                    "parameter {idx} ({}) needs lower < upper",
                    e.name
                )));
            }
            let ok = match e.role {
                Role::Probability => e.lower >= 0.0 && e.upper <= 1.0,
                Role::DurationDays => e.lower > 0.0,
                Role::Distribution if e.index == IDX_GAMMA_SHAPE => e.lower > 0.0,
                Role::Distribution => e.lower >= 0.0,
                Role::Risk if e.index == IDX_RISK_B => true,
                Role::Risk => e.lower > 0.0,
            };
            if !ok {
                return Err(Error::Config(format!(
                    "parameter {idx} ({}) has bounds [{}, {}] invalid for role {}",
                    e.name, e.lower, e.upper, e.role
                )));
            }
            if !e.contains(e.default) {
                return Err(Error::Config(format!(
                    "parameter {idx} ({}) default {} outside [{}, {}]",
                    e.name, e.default, e.lower, e.upper
                )));
            }
        }
        let space = ParamSpace { entries };
        let shortest = space
            .entries
            .iter()
            .filter(|e| e.role == Role::DurationDays)
            .map(|e| e.lower)
            .fold(f64::INFINITY, f64::min);
        let translation = space.entry(IDX_GAMMA_TRANSLATION).upper;
        if translation >= shortest {
            return Err(Error::Config(format!(
                "gamma translation upper bound {translation} must stay below the shortest duration bound {shortest}"
            )));
        }
        Ok(space)
    }

    pub fn entries(&self) -> &[ParamDef] {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    /// Entry by 1-based index. Panics when out of range.
    pub fn entry(&self, index: usize) -> &ParamDef {
        &self.entries[index - 1]
    }

    pub fn get(&self, index: usize) -> Option<&ParamDef> {
        index.checked_sub(1).and_then(|i| self.entries.get(i))
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().find(|e| e.name == name).map(|e| e.index)
    }

    pub fn lower(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.lower).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.upper).collect()
    }

    pub fn defaults(&self) -> ParamVector {
        ParamVector(self.entries.iter().map(|e| e.default).collect())
    }

    /// Risk-sensitive edges of the canonical graph, as `(from, to)` pairs.
    pub fn risk_sensitive_edges(&self, graph: &StateGraph) -> BTreeSet<(State, State)> {
        graph
            .edges()
            .iter()
            .filter(|e| e.risk_sensitive)
            .map(|e| (e.from, e.to))
            .collect()
    }

    /// Risk of a 50-year-old woman under the default parameters; the anchor
    /// against which patient risks scale the risk-sensitive probabilities.
    pub fn reference_risk(&self) -> f64 {
        let a = self.entry(IDX_RISK_A).default;
        let b = self.entry(IDX_RISK_B).default;
        a * (b * 50.0).exp()
    }

    pub fn from_toml(text: &str) -> Result<Self, Error> {
        let file: SpaceFile = toml::from_str(text).map_err(|e| Error::Config(format!("parameter space: {e}")))?;
        ParamSpace::new(file.param)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&SpaceFile {
            param: self.entries.clone(),
        })
        .expect("parameter space serializes")
    }

    /// Checks bounds and per-state feasibility; collects every violation.
    pub fn validate_vector(&self, graph: &StateGraph, x: &ParamVector) -> Vec<Violation> {
        let mut out = Vec::new();
        if x.len() != self.dim() {
            out.push(Violation {
                index: None,
                reason: format!("expected {} components, got {}", self.dim(), x.len()),
            });
            return out;
        }
        for (e, &v) in self.entries.iter().zip(x.iter()) {
            if !v.is_finite() {
                out.push(Violation {
                    index: Some(e.index),
                    reason: format!("{} is not finite", e.name),
                });
            } else if !e.contains(v) {
                out.push(Violation {
                    index: Some(e.index),
                    reason: format!("out of bounds: {} = {v} not in [{}, {}]", e.name, e.lower, e.upper),
                });
            }
        }
        for s in State::ALL.into_iter().filter(|s| !s.is_absorbing()) {
            let probs = graph.base_probs(s, x);
            let complement = graph
                .outgoing(s)
                .zip(&probs)
                .find(|((_, e), _)| e.prob == ProbBinding::Complement)
                .map(|(_, p)| *p)
                .unwrap_or(0.0);
            if complement < -PROB_TOL {
                out.push(Violation {
                    index: None,
                    reason: format!("negative complement at {s}"),
                });
            }
        }
        out
    }

    /// Midpoints of the selected (1-based) indices.
    pub fn midpoint(&self, subset: &BTreeSet<usize>) -> Result<Vec<(usize, f64)>, Error> {
        subset
            .iter()
            .map(|&i| {
                self.get(i)
                    .map(|e| (i, e.midpoint()))
                    .ok_or_else(|| Error::Config(format!("unknown parameter index {i}")))
            })
            .collect()
    }

    /// Scales component `index` by `1 + factor`, clamped into its bounds.
    pub fn perturb(&self, x: &ParamVector, index: usize, factor: f64) -> Perturbed {
        let e = self.entry(index);
        perturb_bounded(x, index, factor, e.lower, e.upper)
    }
}

/// The canonical 29-entry space.
pub fn canonical_space() -> ParamSpace {
    let entries = CANONICAL
        .iter()
        .map(|&(index, name, role, lower, upper, default)| ParamDef {
            index,
            name: name.to_string(),
            role,
            lower,
            upper,
            default,
        })
        .collect();
    ParamSpace::new(entries).expect("canonical space is valid")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub index: Option<usize>,
    pub reason: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index {
            Some(i) => write!(f, "x{i}: {}", self.reason),
            None => f.write_str(&self.reason),
        }
    }
}

/// A full parameter vector ordered by index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    /// Component by 1-based index.
    pub fn at(&self, index: usize) -> f64 {
        self.0[index - 1]
    }

    pub fn set(&mut self, index: usize, v: f64) {
        self.0[index - 1] = v;
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Perturbed {
    pub vector: ParamVector,
    pub clamped: bool,
}

pub(crate) fn perturb_bounded(x: &ParamVector, index: usize, factor: f64, lower: f64, upper: f64) -> Perturbed {
    let mut vector = x.clone();
    let raw = x.at(index) * (1.0 + factor);
    let v = raw.clamp(lower, upper);
    vector.set(index, v);
    Perturbed {
        vector,
        clamped: v != raw,
    }
}
