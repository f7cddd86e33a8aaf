//! Latent state spaces and individual/time-specific transition matrices.
//!
//! Every permitted transition is a monomial in the four life-event
//! probabilities (survival `s`, emigration `e`, re-immigration `r`,
//! de-registration `λ`), e.g. `λ·s·e`. The product form keeps the zero pattern
//! structural and makes derivatives of each entry a one-liner.

use serde::{Deserialize, Serialize};

use crate::covariates::CovariateScheme;
use crate::error::{Error, Result};
use crate::scalar::{inv_logit, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifeEvent {
    Survival,
    Emigration,
    ReImmigration,
    DeRegistration,
}

impl LifeEvent {
    pub const ALL: [LifeEvent; 4] = [
        LifeEvent::Survival,
        LifeEvent::Emigration,
        LifeEvent::ReImmigration,
        LifeEvent::DeRegistration,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            LifeEvent::Survival => "survival",
            LifeEvent::Emigration => "emigration",
            LifeEvent::ReImmigration => "reimmigration",
            LifeEvent::DeRegistration => "deregistration",
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            LifeEvent::Survival => "s",
            LifeEvent::Emigration => "e",
            LifeEvent::ReImmigration => "r",
            LifeEvent::DeRegistration => "lambda",
        }
    }
}

/// Probabilities of the four life events for one individual-year, indexed by [`LifeEvent::index`].
pub type EventProbabilities<T> = [T; 4];

/// Logit-scale linear predictor: intercept plus one-hot covariate effects over all dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPredictor<T> {
    pub intercept: T,
    pub effects: Vec<T>,
}

pub type LifeEventCoefficients<T> = LinearPredictor<T>;

impl<T: Scalar> LinearPredictor<T> {
    pub fn intercept_only(intercept: T, scheme: &CovariateScheme) -> Self {
        Self {
            intercept,
            effects: vec![T::zero(); scheme.effect_count(&scheme.all_dims())],
        }
    }

    pub fn eta(&self, scheme: &CovariateScheme, profile: &[usize]) -> T {
        scheme
            .active_effects(&scheme.all_dims(), profile)
            .into_iter()
            .fold(self.intercept, |acc, i| acc + self.effects[i])
    }
}

/// Inverse-logit of intercept plus the matching effect coefficients.
pub fn life_event_probability<T: Scalar>(
    coeffs: &LifeEventCoefficients<T>,
    scheme: &CovariateScheme,
    profile: &[usize],
) -> T {
    inv_logit(coeffs.eta(scheme, profile))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StateRole {
    Present,
    PresentDeathRecorded,
    AbroadEmigrationRecorded,
    AbroadKnown,
    AbroadUnknown,
    AbroadDeathRecorded,
    ReturnedReRegistered,
    Dead,
}

impl StateRole {
    /// Roles counted in the population size by default.
    pub const DEFAULT_PRESENT: [StateRole; 3] = [
        StateRole::Present,
        StateRole::PresentDeathRecorded,
        StateRole::ReturnedReRegistered,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateDef {
    pub id: usize,
    pub label: String,
    pub role: StateRole,
}

/// One multiplicative factor of a transition monomial: `p` or `1 - p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Factor {
    Occurs(LifeEvent),
    NotOccurs(LifeEvent),
}

impl Factor {
    pub fn event(self) -> LifeEvent {
        match self {
            Factor::Occurs(e) | Factor::NotOccurs(e) => e,
        }
    }

    fn value<T: Scalar>(self, probs: &EventProbabilities<T>) -> T {
        match self {
            Factor::Occurs(e) => probs[e.index()],
            Factor::NotOccurs(e) => T::one() - probs[e.index()],
        }
    }

    fn sign<T: Scalar>(self) -> T {
        match self {
            Factor::Occurs(_) => T::one(),
            Factor::NotOccurs(_) => -T::one(),
        }
    }
}

impl std::fmt::Display for Factor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Factor::Occurs(e) => write!(f, "{}", e.symbol()),
            Factor::NotOccurs(e) => write!(f, "1-{}", e.symbol()),
        }
    }
}

impl std::str::FromStr for Factor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (neg, sym) = match s.strip_prefix("1-") {
            Some(rest) => (true, rest.trim()),
            None => (false, s),
        };
        let event = LifeEvent::ALL
            .into_iter()
            .find(|e| e.symbol() == sym || e.name() == sym)
            .ok_or_else(|| Error::Config(format!("unknown transition factor `{s}`")))?;
        Ok(if neg {
            Factor::NotOccurs(event)
        } else {
            Factor::Occurs(event)
        })
    }
}

impl Serialize for Factor {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Factor {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A permitted transition `from -> to` (state indices) with probability equal to
/// the product of its factors (empty product = 1).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionTerm {
    pub from: usize,
    pub to: usize,
    #[serde(default)]
    pub factors: Vec<Factor>,
}

impl TransitionTerm {
    pub fn new(from: usize, to: usize, factors: &[Factor]) -> Self {
        Self {
            from,
            to,
            factors: factors.to_vec(),
        }
    }

    pub fn value<T: Scalar>(&self, probs: &EventProbabilities<T>) -> T {
        self.factors
            .iter()
            .fold(T::one(), |acc, f| acc * f.value(probs))
    }

    /// Partial derivative of the monomial with respect to the probability of `event`.
    pub fn derivative<T: Scalar>(&self, probs: &EventProbabilities<T>, event: LifeEvent) -> T {
        let mut total = T::zero();
        for (i, f) in self.factors.iter().enumerate() {
            if f.event() != event {
                continue;
            }
            let rest = self
                .factors
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .fold(T::one(), |acc, (_, g)| acc * g.value(probs));
            total += f.sign::<T>() * rest;
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSpaceConfig {
    pub name: String,
    pub states: Vec<StateDef>,
    pub transitions: Vec<TransitionTerm>,
    pub absorbing_states: Vec<usize>,
    pub intermediate_states: Vec<usize>,
    /// Whether the dead state can emit false-positive register traces.
    #[serde(default)]
    pub dead_emits_false_positive: bool,
}

impl StateSpaceConfig {
    /// Present / abroad / dead.
    pub fn general3() -> Self {
        use Factor::{NotOccurs as Not, Occurs as Yes};
        use LifeEvent::{Emigration as E, ReImmigration as R, Survival as S};
        let states = vec![
            StateDef { id: 1, label: "present".into(), role: StateRole::Present },
            StateDef { id: 2, label: "abroad".into(), role: StateRole::AbroadUnknown },
            StateDef { id: 3, label: "dead".into(), role: StateRole::Dead },
        ];
        let t = TransitionTerm::new;
        let transitions = vec![
            t(0, 0, &[Yes(S), Not(E)]),
            t(0, 1, &[Yes(S), Yes(E)]),
            t(0, 2, &[Not(S)]),
            t(1, 0, &[Yes(S), Yes(R)]),
            t(1, 1, &[Yes(S), Not(R)]),
            t(1, 2, &[Not(S)]),
            t(2, 2, &[]),
        ];
        Self {
            name: "general3".into(),
            states,
            transitions,
            absorbing_states: vec![2],
            intermediate_states: vec![],
            dead_emits_false_positive: false,
        }
    }

    /// Eight states separating recorded and unrecorded emigration.
    pub fn sweden8() -> Self {
        use Factor::{NotOccurs as Not, Occurs as Yes};
        use LifeEvent::{DeRegistration as L, Emigration as E, ReImmigration as R, Survival as S};
        use StateRole::*;
        let roles = [
            ("present", Present),
            ("present, death recorded", PresentDeathRecorded),
            ("abroad, emigration recorded", AbroadEmigrationRecorded),
            ("abroad, known absence", AbroadKnown),
            ("abroad, unknown absence", AbroadUnknown),
            ("abroad, death recorded", AbroadDeathRecorded),
            ("returned, re-registered", ReturnedReRegistered),
            ("dead", Dead),
        ];
        let states = roles
            .iter()
            .enumerate()
            .map(|(i, (label, role))| StateDef { id: i + 1, label: label.to_string(), role: *role })
            .collect();
        let t = TransitionTerm::new;
        let present_row = |from: usize| {
            vec![
                t(from, 0, &[Yes(S), Not(E)]),
                t(from, 1, &[Not(S)]),
                t(from, 2, &[Yes(L), Yes(S), Yes(E)]),
                t(from, 4, &[Not(L), Yes(S), Yes(E)]),
            ]
        };
        let known_abroad_row = |from: usize| {
            vec![
                t(from, 3, &[Yes(S), Not(R)]),
                t(from, 5, &[Not(S)]),
                t(from, 6, &[Yes(S), Yes(R)]),
            ]
        };
        let mut transitions = present_row(0);
        transitions.push(t(1, 7, &[]));
        transitions.extend(known_abroad_row(2));
        transitions.extend(known_abroad_row(3));
        transitions.extend([
            t(4, 0, &[Yes(S), Yes(R)]),
            t(4, 4, &[Yes(S), Not(R)]),
            t(4, 5, &[Not(S)]),
            t(5, 7, &[]),
        ]);
        transitions.extend(present_row(6));
        transitions.push(t(7, 7, &[]));
        Self {
            name: "sweden8".into(),
            states,
            transitions,
            absorbing_states: vec![7],
            intermediate_states: vec![1, 2, 5, 6],
            dead_emits_false_positive: true,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "general3" => Ok(Self::general3()),
            "sweden8" => Ok(Self::sweden8()),
            other => Err(Error::Config(format!("unknown state-space preset `{other}`"))),
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn role(&self, state: usize) -> StateRole {
        self.states[state].role
    }

    pub fn present_state(&self) -> usize {
        self.states
            .iter()
            .position(|s| s.role == StateRole::Present)
            .expect("validated config has a present state")
    }

    /// Life events that appear in at least one transition factor, in canonical order.
    pub fn events_used(&self) -> Vec<LifeEvent> {
        LifeEvent::ALL
            .into_iter()
            .filter(|e| {
                self.transitions
                    .iter()
                    .any(|t| t.factors.iter().any(|f| f.event() == *e))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let count = |role| self.states.iter().filter(|s| s.role == role).count();
        if count(StateRole::Present) != 1 || count(StateRole::Dead) != 1 {
            return Err(Error::Config(format!(
                "state space `{}` needs exactly one present and one dead state",
                self.name
            )));
        }
        if self.states.windows(2).any(|w| w[0].id >= w[1].id) {
            return Err(Error::Config("state ids must be strictly increasing".into()));
        }
        for (i, t) in self.transitions.iter().enumerate() {
            if t.from >= n || t.to >= n {
                return Err(Error::Config(format!("transition {i} references an unknown state")));
            }
            if self.transitions[..i]
                .iter()
                .any(|o| o.from == t.from && o.to == t.to)
            {
                return Err(Error::Config(format!(
                    "duplicate transition {} -> {}",
                    self.states[t.from].id, self.states[t.to].id
                )));
            }
        }
        for &a in &self.absorbing_states {
            let row: Vec<_> = self.transitions.iter().filter(|t| t.from == a).collect();
            if a >= n || row.len() != 1 || row[0].to != a || !row[0].factors.is_empty() {
                return Err(Error::Config(format!(
                    "absorbing state index {a} must have a unit self-transition only"
                )));
            }
        }
        for &s in &self.intermediate_states {
            if s >= n || self.transitions.iter().any(|t| t.from == s && t.to == s) {
                return Err(Error::Config(format!(
                    "intermediate state index {s} must not have a self-transition"
                )));
            }
        }
        // rows must sum to one as polynomials; check on a grid of probability vectors
        let grid = [0.0, 0.13, 0.5, 0.77, 1.0];
        for (k, &a) in grid.iter().enumerate() {
            for &b in &grid {
                let probs = [a, b, grid[(k + 2) % 5], grid[(k + 3) % 5]];
                let m = self.matrix(&probs);
                for i in 0..n {
                    let sum: f64 = m.row(i).iter().sum();
                    if (sum - 1.0).abs() > 1e-12 {
                        return Err(Error::Config(format!(
                            "row of state {} does not sum to one (sum {sum} at {probs:?})",
                            self.states[i].id
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Entries of the permitted transitions, aligned with `self.transitions`.
    pub fn term_values<T: Scalar>(&self, probs: &EventProbabilities<T>) -> Vec<T> {
        self.transitions.iter().map(|t| t.value(probs)).collect()
    }

    pub fn matrix<T: Scalar>(&self, probs: &EventProbabilities<T>) -> TransitionMatrix<T> {
        let mut m = TransitionMatrix::zeros(self.len());
        for t in &self.transitions {
            m.set(t.from, t.to, t.value(probs));
        }
        m
    }

    pub fn is_permitted(&self, from: usize, to: usize) -> bool {
        self.transitions.iter().any(|t| t.from == from && t.to == to)
    }
}

/// Dense row-major S×S transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix<T> {
    n: usize,
    entries: Vec<T>,
}

impl<T: Scalar> TransitionMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self { n, entries: vec![T::zero(); n * n] }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let n = rows.len();
        let entries = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self { n, entries }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, from: usize, to: usize) -> T {
        self.entries[from * self.n + to]
    }

    pub fn set(&mut self, from: usize, to: usize, v: T) {
        self.entries[from * self.n + to] = v;
    }

    pub fn row(&self, from: usize) -> &[T] {
        &self.entries[from * self.n..(from + 1) * self.n]
    }

    pub fn max_row_sum_error(&self) -> T {
        (0..self.n)
            .map(|i| (self.row(i).iter().copied().sum::<T>() - T::one()).abs())
            .fold(T::zero(), T::max)
    }
}

fn check_prob<T: Scalar>(name: &str, p: T) -> Result<()> {
    if p >= T::zero() && p <= T::one() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} = {p} is not a probability")))
    }
}

/// Three-state matrix (present, abroad, dead), written out entry by entry.
pub fn build_transition_matrix_general<T: Scalar>(s: T, e: T, r: T) -> Result<TransitionMatrix<T>> {
    check_prob("s", s)?;
    check_prob("e", e)?;
    check_prob("r", r)?;
    let (o, z) = (T::one(), T::zero());
    Ok(TransitionMatrix::from_rows(&[
        vec![s * (o - e), s * e, o - s],
        vec![s * r, s * (o - r), o - s],
        vec![z, z, o],
    ]))
}

/// Eight-state matrix with recorded/unrecorded emigration, written out entry by entry.
pub fn build_transition_matrix_case<T: Scalar>(
    s: T,
    e: T,
    r: T,
    lambda: T,
) -> Result<TransitionMatrix<T>> {
    check_prob("s", s)?;
    check_prob("e", e)?;
    check_prob("r", r)?;
    check_prob("lambda", lambda)?;
    let (o, z) = (T::one(), T::zero());
    let present = vec![s * (o - e), o - s, lambda * s * e, z, (o - lambda) * s * e, z, z, z];
    let to_dead = vec![z, z, z, z, z, z, z, o];
    let known = vec![z, z, z, s * (o - r), z, o - s, s * r, z];
    let unknown = vec![s * r, z, z, z, s * (o - r), o - s, z, z];
    Ok(TransitionMatrix::from_rows(&[
        present.clone(),
        to_dead.clone(),
        known.clone(),
        known,
        unknown,
        to_dead.clone(),
        present,
        to_dead,
    ]))
}
