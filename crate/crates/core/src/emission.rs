//! Observation categories and state-conditional emission probabilities.
//!
//! A person-year outcome is a register pattern (bit `k` set when observed in
//! register `k`) plus an event flag. Present-type states emit patterns from a
//! baseline-category (softmax) logit over all `2^K` patterns, with the empty
//! pattern as the reference category. Absent states can only emit the empty
//! pattern or, with probability `q`, a false-positive pattern.

use serde::{Deserialize, Serialize};

use crate::covariates::CovariateScheme;
use crate::error::{Error, Result};
use crate::scalar::{inv_logit, Scalar};
use crate::state_space::{LinearPredictor, StateRole, StateSpaceConfig};

/// Upper bound on K; the softmax normalizer enumerates all `2^K` patterns.
pub const MAX_REGISTERS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventFlag {
    None = 0,
    Emigration = 1,
    Death = 2,
    ReImmigration = 3,
}

impl EventFlag {
    fn from_bits(bits: u32) -> Self {
        match bits & 0b11 {
            0 => EventFlag::None,
            1 => EventFlag::Emigration,
            2 => EventFlag::Death,
            _ => EventFlag::ReImmigration,
        }
    }
}

/// One of the `2·2^K + 2` mutually exclusive person-year outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ObservationCategory {
    pub pattern: u32,
    pub flag: EventFlag,
}

impl ObservationCategory {
    pub const NONE: Self = Self { pattern: 0, flag: EventFlag::None };
    pub const EMIGRATED: Self = Self { pattern: 0, flag: EventFlag::Emigration };
    pub const DEATH: Self = Self { pattern: 0, flag: EventFlag::Death };

    pub fn plain(pattern: u32) -> Self {
        Self { pattern, flag: EventFlag::None }
    }

    pub fn reimmigrated(pattern: u32) -> Self {
        Self { pattern, flag: EventFlag::ReImmigration }
    }

    /// Wire code: register bits in `0..K`, flag in bits `K..K+2`.
    pub fn encode(self, registers: usize) -> u32 {
        self.pattern | ((self.flag as u32) << registers)
    }

    pub fn decode(code: u32, registers: usize) -> Result<Self> {
        if code >> (registers + 2) != 0 {
            return Err(Error::Data(format!(
                "category code {code} out of range for {registers} registers"
            )));
        }
        let cat = Self {
            pattern: code & ((1u32 << registers) - 1),
            flag: EventFlag::from_bits(code >> registers),
        };
        if matches!(cat.flag, EventFlag::Emigration | EventFlag::Death) && cat.pattern != 0 {
            return Err(Error::Data(format!(
                "category code {code}: emigration/death records carry no register pattern"
            )));
        }
        Ok(cat)
    }

    pub fn category_count(registers: usize) -> usize {
        2 * (1usize << registers) + 2
    }

    /// Every valid category in code order.
    pub fn all(registers: usize) -> Vec<Self> {
        let j = 1u32 << registers;
        let mut out: Vec<Self> = (0..j).map(Self::plain).collect();
        out.push(Self::EMIGRATED);
        out.push(Self::DEATH);
        out.extend((0..j).map(Self::reimmigrated));
        out
    }
}

pub fn pair_count(registers: usize) -> usize {
    registers * registers.saturating_sub(1) / 2
}

/// Index of the unordered register pair `(k, l)`, `k < l`, in lexicographic order.
pub fn pair_index(k: usize, l: usize, registers: usize) -> usize {
    debug_assert!(k < l && l < registers);
    k * (2 * registers - k - 1) / 2 + (l - k - 1)
}

/// Structure of the multicategory-logit design.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmissionLayout {
    pub registers: Vec<String>,
    /// Covariate dimensions interacting with every register.
    pub interaction_dims: Vec<usize>,
    /// Include register × register two-way terms.
    pub pairs: bool,
    /// Registers whose main effect and covariate interactions differ by mixture group.
    pub group_specific: Vec<bool>,
    pub groups: usize,
}

impl EmissionLayout {
    pub fn new(registers: &[&str], interaction_dims: Vec<usize>, pairs: bool, groups: usize) -> Self {
        Self {
            registers: registers.iter().map(|r| r.to_string()).collect(),
            interaction_dims,
            pairs,
            group_specific: vec![false; registers.len()],
            groups,
        }
    }

    pub fn with_group_specific(mut self, register: usize) -> Self {
        self.group_specific[register] = true;
        self
    }

    pub fn k(&self) -> usize {
        self.registers.len()
    }

    pub fn pattern_count(&self) -> usize {
        1 << self.k()
    }

    pub fn validate(&self, scheme: &CovariateScheme) -> Result<()> {
        if self.registers.is_empty() {
            return Err(Error::Config("at least one register is required".into()));
        }
        if self.k() > MAX_REGISTERS {
            return Err(Error::Config(format!(
                "{} registers exceed the enumeration cap of {MAX_REGISTERS}",
                self.k()
            )));
        }
        if self.group_specific.len() != self.k() {
            return Err(Error::Config("group-specific flags must cover every register".into()));
        }
        if self.groups == 0 {
            return Err(Error::Config("mixture needs at least one group".into()));
        }
        if self.interaction_dims.iter().any(|&d| d >= scheme.len()) {
            return Err(Error::Config("interaction dimension out of range".into()));
        }
        Ok(())
    }

    pub fn register_index(&self, name: &str) -> Result<usize> {
        self.registers
            .iter()
            .position(|r| r == name)
            .ok_or_else(|| Error::Config(format!("unknown register `{name}`")))
    }

    pub fn first_group_specific(&self) -> Option<usize> {
        self.group_specific.iter().position(|&g| g)
    }
}

/// Emission coefficients, expanded per group. Shared registers hold identical copies.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionCoefficients<T> {
    /// `[group][register]`
    pub main: Vec<Vec<T>>,
    /// `[group][register][effect]` over the layout's interaction dimensions.
    pub register_effects: Vec<Vec<Vec<T>>>,
    /// Register pair terms, `pair_index` order. Empty when pairs are disabled.
    pub pairs: Vec<T>,
}

impl<T: Scalar> EmissionCoefficients<T> {
    pub fn zeros(layout: &EmissionLayout, scheme: &CovariateScheme) -> Self {
        let n_eff = scheme.effect_count(&layout.interaction_dims);
        let k = layout.k();
        Self {
            main: vec![vec![T::zero(); k]; layout.groups],
            register_effects: vec![vec![vec![T::zero(); n_eff]; k]; layout.groups],
            pairs: if layout.pairs { vec![T::zero(); pair_count(k)] } else { Vec::new() },
        }
    }

    /// Per-register logit contribution `a_k` for one group and covariate profile.
    pub fn register_logits(
        &self,
        layout: &EmissionLayout,
        scheme: &CovariateScheme,
        group: usize,
        profile: &[usize],
    ) -> Vec<T> {
        let active = scheme.active_effects(&layout.interaction_dims, profile);
        (0..layout.k())
            .map(|k| {
                active
                    .iter()
                    .fold(self.main[group][k], |acc, &i| acc + self.register_effects[group][k][i])
            })
            .collect()
    }

    /// Log-softmax over all `2^K` register patterns.
    pub fn pattern_log_probabilities(
        &self,
        layout: &EmissionLayout,
        scheme: &CovariateScheme,
        group: usize,
        profile: &[usize],
    ) -> Vec<T> {
        let logits = self.register_logits(layout, scheme, group, profile);
        pattern_log_softmax(&logits, &self.pairs, layout.k())
    }
}

/// Linear predictors of every pattern, then log-softmax with max subtraction.
pub fn pattern_log_softmax<T: Scalar>(register_logits: &[T], pairs: &[T], k: usize) -> Vec<T> {
    let j = 1usize << k;
    let mut eta = vec![T::zero(); j];
    for m in 1..j {
        let low = m.trailing_zeros() as usize;
        let rest = m & (m - 1);
        let mut v = eta[rest] + register_logits[low];
        if !pairs.is_empty() {
            let mut bits = rest;
            while bits != 0 {
                let l = bits.trailing_zeros() as usize;
                v += pairs[pair_index(low, l, k)];
                bits &= bits - 1;
            }
        }
        eta[m] = v;
    }
    let max = eta.iter().copied().fold(T::neg_infinity(), T::max);
    let norm = max + eta.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
    eta.iter().map(|&x| x - norm).collect()
}

/// Log-probability of a category's register pattern under one group's softmax.
pub fn category_log_probability<T: Scalar>(
    coeffs: &EmissionCoefficients<T>,
    layout: &EmissionLayout,
    scheme: &CovariateScheme,
    group: usize,
    profile: &[usize],
    category: ObservationCategory,
) -> Result<T> {
    if layout.k() > MAX_REGISTERS {
        return Err(Error::Config(format!(
            "{} registers exceed the enumeration cap of {MAX_REGISTERS}",
            layout.k()
        )));
    }
    if matches!(category.flag, EventFlag::Emigration | EventFlag::Death) {
        return Err(Error::Domain("event-only categories have no register pattern".into()));
    }
    let lp = coeffs.pattern_log_probabilities(layout, scheme, group, profile);
    Ok(lp[category.pattern as usize])
}

pub type FalsePositiveCoefficients<T> = LinearPredictor<T>;

pub fn false_positive_probability<T: Scalar>(
    fp: &FalsePositiveCoefficients<T>,
    scheme: &CovariateScheme,
    profile: &[usize],
) -> T {
    inv_logit(fp.eta(scheme, profile))
}

/// Fixed probabilities that an administrative event is recorded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EventRecording {
    /// Emigration recorded on entering the recorded-emigration state.
    pub psi_e: f64,
    /// Re-immigration recorded on re-registering.
    pub psi_r: f64,
    /// Death recorded when dying while present.
    pub phi_p: f64,
    /// Death recorded when dying while abroad.
    pub phi_a: f64,
}

impl Default for EventRecording {
    fn default() -> Self {
        Self { psi_e: 1.0, psi_r: 1.0, phi_p: 1.0, phi_a: 0.0 }
    }
}

impl EventRecording {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("psi_e", self.psi_e),
            ("psi_r", self.psi_r),
            ("phi_p", self.phi_p),
            ("phi_a", self.phi_a),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} is not a probability")));
            }
        }
        Ok(())
    }
}

/// Register patterns that absent individuals can emit as false positives.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FalsePositiveSpec {
    pub patterns: Vec<u32>,
}

impl FalsePositiveSpec {
    pub fn validate(&self, registers: usize) -> Result<()> {
        for (i, &p) in self.patterns.iter().enumerate() {
            if p == 0 || p >= (1 << registers) {
                return Err(Error::Config(format!("false-positive pattern {p} is invalid")));
            }
            if self.patterns[..i].contains(&p) {
                return Err(Error::Config(format!("duplicate false-positive pattern {p}")));
            }
        }
        Ok(())
    }

    pub fn is_enabled(&self) -> bool {
        !self.patterns.is_empty()
    }

    pub fn contains(&self, pattern: u32) -> bool {
        self.patterns.contains(&pattern)
    }
}

/// Shape of `Pr(category | state)` as a function of the free parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EmissionTerm {
    Zero,
    Fixed(f64),
    /// `c · p(pattern)` under the group's softmax.
    Pattern(f64),
    /// `c · q`
    FalsePositive(f64),
    /// `c · (1 - q)`
    NotFalsePositive(f64),
}

impl EmissionTerm {
    pub fn value<T: Scalar>(self, pattern_probability: T, q: T) -> T {
        match self {
            EmissionTerm::Zero => T::zero(),
            EmissionTerm::Fixed(c) => T::lit(c),
            EmissionTerm::Pattern(c) => T::lit(c) * pattern_probability,
            EmissionTerm::FalsePositive(c) => T::lit(c) * q,
            EmissionTerm::NotFalsePositive(c) => T::lit(c) * (T::one() - q),
        }
    }

    pub fn is_zero(self) -> bool {
        match self {
            EmissionTerm::Zero => true,
            EmissionTerm::Fixed(c)
            | EmissionTerm::Pattern(c)
            | EmissionTerm::FalsePositive(c)
            | EmissionTerm::NotFalsePositive(c) => c == 0.0,
        }
    }
}

fn absent_term(category: ObservationCategory, fp: &FalsePositiveSpec, scale: f64) -> EmissionTerm {
    if category.flag != EventFlag::None {
        return EmissionTerm::Zero;
    }
    if category.pattern == 0 {
        if fp.is_enabled() {
            EmissionTerm::NotFalsePositive(scale)
        } else {
            EmissionTerm::Fixed(scale)
        }
    } else if fp.contains(category.pattern) {
        EmissionTerm::FalsePositive(scale / fp.patterns.len() as f64)
    } else {
        EmissionTerm::Zero
    }
}

fn only_none(category: ObservationCategory, c: f64) -> EmissionTerm {
    if category == ObservationCategory::NONE {
        EmissionTerm::Fixed(c)
    } else {
        EmissionTerm::Zero
    }
}

/// Emission term of a state role for one category. Event-recording constants
/// thin the event category; the remaining mass goes to the state's plain emission.
pub fn emission_term(
    role: StateRole,
    category: ObservationCategory,
    recording: &EventRecording,
    fp: &FalsePositiveSpec,
    dead_emits_false_positive: bool,
) -> EmissionTerm {
    use EventFlag as F;
    use StateRole::*;
    match role {
        Present => match category.flag {
            F::None => EmissionTerm::Pattern(1.0),
            _ => EmissionTerm::Zero,
        },
        ReturnedReRegistered => match category.flag {
            F::None => EmissionTerm::Pattern(1.0 - recording.psi_r),
            F::ReImmigration => EmissionTerm::Pattern(recording.psi_r),
            _ => EmissionTerm::Zero,
        },
        PresentDeathRecorded => match category.flag {
            F::Death => EmissionTerm::Fixed(recording.phi_p),
            _ => only_none(category, 1.0 - recording.phi_p),
        },
        AbroadEmigrationRecorded => match category.flag {
            F::Emigration => EmissionTerm::Fixed(recording.psi_e),
            _ => only_none(category, 1.0 - recording.psi_e),
        },
        AbroadKnown => only_none(category, 1.0),
        AbroadUnknown => absent_term(category, fp, 1.0),
        AbroadDeathRecorded => match category.flag {
            F::Death => EmissionTerm::Fixed(recording.phi_a),
            _ => absent_term(category, fp, 1.0 - recording.phi_a),
        },
        Dead => {
            if dead_emits_false_positive {
                absent_term(category, fp, 1.0)
            } else {
                only_none(category, 1.0)
            }
        }
    }
    .normalized()
}

impl EmissionTerm {
    fn normalized(self) -> Self {
        if self.is_zero() {
            EmissionTerm::Zero
        } else {
            self
        }
    }
}

/// `Pr(observed | state)` for every state, given the softmax probability of the
/// observed pattern and the false-positive probability `q`.
pub fn emission_vector<T: Scalar>(
    states: &StateSpaceConfig,
    observed: ObservationCategory,
    pattern_probability: T,
    q: T,
    recording: &EventRecording,
    fp: &FalsePositiveSpec,
) -> Vec<T> {
    states
        .states
        .iter()
        .map(|s| {
            emission_term(s.role, observed, recording, fp, states.dead_emits_false_positive)
                .value(pattern_probability, q)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariates::CovariateDimension;
    use rand::{Rng, SeedableRng};

    fn softmax_probs(coeffs: &EmissionCoefficients<f64>, layout: &EmissionLayout, scheme: &CovariateScheme, g: usize, profile: &[usize]) -> Vec<f64> {
        coeffs
            .pattern_log_probabilities(layout, scheme, g, profile)
            .into_iter()
            .map(f64::exp)
            .collect()
    }

    #[test]
    fn category_codes_round_trip_and_count() {
        for k in 1..6 {
            let all = ObservationCategory::all(k);
            assert_eq!(all.len(), ObservationCategory::category_count(k));
            for c in all {
                assert_eq!(ObservationCategory::decode(c.encode(k), k).unwrap(), c);
            }
        }
        // emigration flag with a register bit set
        assert!(ObservationCategory::decode(0b01_01, 2).is_err());
        assert!(ObservationCategory::decode(1 << 4, 2).is_err());
    }

    #[test]
    fn uniform_softmax() {
        let scheme = CovariateScheme::empty();
        let layout = EmissionLayout::new(&["a", "b"], vec![], true, 1);
        let c = EmissionCoefficients::<f64>::zeros(&layout, &scheme);
        for p in softmax_probs(&c, &layout, &scheme, 0, &[]) {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn two_category_softmax() {
        let scheme = CovariateScheme::empty();
        let layout = EmissionLayout::new(&["a"], vec![], false, 1);
        let mut c = EmissionCoefficients::<f64>::zeros(&layout, &scheme);
        c.main[0][0] = 2.0_f64.ln();
        let lp = category_log_probability(&c, &layout, &scheme, 0, &[], ObservationCategory::plain(1)).unwrap();
        assert!((lp.exp() - 2.0 / 3.0).abs() < 1e-15);
        let lp0 = category_log_probability(&c, &layout, &scheme, 0, &[], ObservationCategory::NONE).unwrap();
        assert!((lp0.exp() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn pair_index_is_dense() {
        let k = 6;
        let mut seen = vec![false; pair_count(k)];
        for a in 0..k {
            for b in a + 1..k {
                let i = pair_index(a, b, k);
                assert!(!seen[i]);
                seen[i] = true;
            }
        }
        assert!(seen.into_iter().all(|x| x));
    }

    fn random_coeffs(rng: &mut impl Rng, layout: &EmissionLayout, scheme: &CovariateScheme) -> EmissionCoefficients<f64> {
        let mut c = EmissionCoefficients::zeros(layout, scheme);
        for g in 0..layout.groups {
            for k in 0..layout.k() {
                c.main[g][k] = rng.random_range(-3.0..3.0);
                for e in c.register_effects[g][k].iter_mut() {
                    *e = rng.random_range(-2.0..2.0);
                }
            }
        }
        for p in c.pairs.iter_mut() {
            *p = rng.random_range(-2.0..2.0);
        }
        c
    }

    #[test]
    fn softmax_normalizes_and_matches_direct_linear_predictor() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let scheme = CovariateScheme::new(vec![CovariateDimension::new_static("sex", &["m", "f"], 0)]).unwrap();
        let layout = EmissionLayout::new(&["a", "b", "c", "d"], vec![0], true, 2);
        for _ in 0..50 {
            let c = random_coeffs(&mut rng, &layout, &scheme);
            let profile = [rng.random_range(0..2)];
            let g = rng.random_range(0..2);
            let probs = softmax_probs(&c, &layout, &scheme, g, &profile);
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            // direct evaluation of x_m^T gamma for every pattern
            let a = c.register_logits(&layout, &scheme, g, &profile);
            let eta: Vec<f64> = (0..16u32)
                .map(|m| {
                    let mut v = 0.0;
                    for k in 0..4 {
                        if m >> k & 1 == 1 {
                            v += a[k];
                            for l in k + 1..4 {
                                if m >> l & 1 == 1 {
                                    v += c.pairs[pair_index(k, l, 4)];
                                }
                            }
                        }
                    }
                    v
                })
                .collect();
            let z: f64 = eta.iter().map(|e| e.exp()).sum();
            for m in 0..16 {
                assert!((probs[m] - eta[m].exp() / z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let scheme = CovariateScheme::empty();
        let layout = EmissionLayout::new(&["a", "b"], vec![], true, 1);
        let mut c = EmissionCoefficients::<f64>::zeros(&layout, &scheme);
        c.main[0] = vec![400.0, 400.0];
        c.pairs = vec![100.0];
        let lp = c.pattern_log_probabilities(&layout, &scheme, 0, &[]);
        assert!(lp.iter().all(|x| x.is_finite()));
        assert!((lp[3].exp() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn register_cap_enforced() {
        let scheme = CovariateScheme::empty();
        let names: Vec<String> = (0..21).map(|i| format!("r{i}")).collect();
        let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        let layout = EmissionLayout::new(&refs, vec![], false, 1);
        assert!(layout.validate(&scheme).is_err());
        let c = EmissionCoefficients::<f64> { main: vec![vec![0.0; 21]], register_effects: vec![vec![vec![]; 21]], pairs: vec![] };
        assert!(category_log_probability(&c, &layout, &scheme, 0, &[], ObservationCategory::NONE).is_err());
    }

    #[test]
    fn false_positive_probability_examples() {
        let scheme = CovariateScheme::new(vec![CovariateDimension::new_static("sex", &["m", "f"], 0)]).unwrap();
        let fp = FalsePositiveCoefficients { intercept: 0.0_f64, effects: vec![0.0] };
        assert_eq!(false_positive_probability(&fp, &scheme, &[0]), 0.5);
        let fp = FalsePositiveCoefficients { intercept: -2.0_f64, effects: vec![1.0] };
        let q = false_positive_probability(&fp, &scheme, &[1]);
        assert!((q - 0.268_941_421_369_995).abs() < 1e-12);
        let s8 = StateSpaceConfig::sweden8();
        let spec = FalsePositiveSpec { patterns: vec![0b100] };
        let rec = EventRecording::default();
        let a = emission_vector(&s8, ObservationCategory::plain(0b100), 0.1, q, &rec, &spec);
        let b = emission_vector(&s8, ObservationCategory::NONE, 0.1, q, &rec, &spec);
        assert!((a[4] + b[4] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sweden8_emission_vectors() {
        let s8 = StateSpaceConfig::sweden8();
        let fp = FalsePositiveSpec { patterns: vec![0b100] };
        let rec = EventRecording::default();
        let v = emission_vector(&s8, ObservationCategory::DEATH, 0.2, 0.3, &rec, &fp);
        assert_eq!(v, vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let v = emission_vector(&s8, ObservationCategory::EMIGRATED, 0.2, 0.3, &rec, &fp);
        assert_eq!(v, vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let p_fam = 0.12;
        let v = emission_vector(&s8, ObservationCategory::plain(0b100), p_fam, 0.3, &rec, &fp);
        assert_eq!(v, vec![p_fam, 0.0, 0.0, 0.0, 0.3, 0.3, 0.0, 0.3]);
        let p0 = 0.05;
        let v = emission_vector(&s8, ObservationCategory::NONE, p0, 0.3, &rec, &fp);
        assert_eq!(v, vec![p0, 0.0, 0.0, 1.0, 0.7, 0.7, 0.0, 0.7]);
        let v = emission_vector(&s8, ObservationCategory::reimmigrated(0b011), 0.2, 0.3, &rec, &fp);
        assert_eq!(v, vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.2, 0.0]);
    }

    #[test]
    fn every_state_emission_sums_to_one() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let scheme = CovariateScheme::empty();
        let k = 3;
        let layout = EmissionLayout::new(&["a", "b", "c"], vec![], true, 1);
        for config in [StateSpaceConfig::general3(), StateSpaceConfig::sweden8()] {
            for _ in 0..20 {
                let c = random_coeffs(&mut rng, &layout, &scheme);
                let probs = softmax_probs(&c, &layout, &scheme, 0, &[]);
                let q: f64 = rng.random();
                let rec = EventRecording {
                    psi_e: rng.random(),
                    psi_r: rng.random(),
                    phi_p: rng.random(),
                    phi_a: rng.random(),
                };
                let fp = FalsePositiveSpec { patterns: vec![0b100, 0b010] };
                let mut totals = vec![0.0; config.len()];
                for cat in ObservationCategory::all(k) {
                    let v = emission_vector(&config, cat, probs[cat.pattern as usize], q, &rec, &fp);
                    for (t, x) in totals.iter_mut().zip(v) {
                        assert!((0.0..=1.0).contains(&x));
                        *t += x;
                    }
                }
                for t in totals {
                    assert!((t - 1.0).abs() < 1e-10, "{t}");
                }
            }
        }
    }

    #[test]
    fn register_permutation_invariance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let scheme = CovariateScheme::new(vec![CovariateDimension::new_static("sex", &["m", "f"], 1)]).unwrap();
        let layout = EmissionLayout::new(&["a", "b", "c"], vec![0], true, 1);
        let perm = [2usize, 0, 1]; // new register i is old register perm[i]
        for _ in 0..20 {
            let c = random_coeffs(&mut rng, &layout, &scheme);
            let mut p = c.clone();
            for i in 0..3 {
                p.main[0][i] = c.main[0][perm[i]];
                p.register_effects[0][i] = c.register_effects[0][perm[i]].clone();
                for j in i + 1..3 {
                    let (a, b) = (perm[i].min(perm[j]), perm[i].max(perm[j]));
                    p.pairs[pair_index(i, j, 3)] = c.pairs[pair_index(a, b, 3)];
                }
            }
            for profile in [[0], [1]] {
                let old = softmax_probs(&c, &layout, &scheme, 0, &profile);
                let new = softmax_probs(&p, &layout, &scheme, 0, &profile);
                for m_new in 0..8usize {
                    let mut m_old = 0;
                    for i in 0..3 {
                        if m_new >> i & 1 == 1 {
                            m_old |= 1 << perm[i];
                        }
                    }
                    assert!((new[m_new] - old[m_old]).abs() < 1e-12);
                }
            }
        }
    }
}
