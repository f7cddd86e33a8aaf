//! Viterbi decoding and the derived demographic quantities.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariates::{CovariateScheme, Profile};
use crate::data::{Dataset, StudyWindow};
use crate::emission::{EmissionCoefficients, EmissionLayout, EventFlag};
use crate::error::{Error, Result};
use crate::likelihood::{chunk_size, Likelihood, Scratch};
use crate::model::{Model, ModelTables};
use crate::params::ModelParams;
use crate::scalar::Scalar;
use crate::state_space::StateRole;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodedTrajectory {
    pub index: usize,
    /// Study-year offset of the first decoded state.
    pub entry: usize,
    /// Zero-based state indices from entry to the last study year.
    pub states: Vec<usize>,
    /// Group with the largest posterior weight (lowest index on ties).
    pub group: usize,
}

/// Most probable path under mixture-weighted emissions `Σ_g ω_g P_g(y)`.
///
/// Ties go to the lowest state index: the final state and every back-pointer
/// take the first maximizer when scanning states in increasing order.
pub fn viterbi_path<T: Scalar>(
    lik: &Likelihood,
    tables: &ModelTables<T>,
    index: usize,
    omega: &[T],
) -> Result<Vec<usize>> {
    let ind = &lik.data.individuals[index];
    let s = lik.model.states.len();
    let mut sc = Scratch::new(s);
    let mut log_emit = vec![T::zero(); s];
    let emit_mixed = |t: usize, sc: &mut Scratch<T>, out: &mut Vec<T>| {
        out.iter_mut().for_each(|x| *x = T::zero());
        for (g, &w) in omega.iter().enumerate() {
            if w == T::zero() {
                continue;
            }
            lik.emit(tables, ind, t, g, sc);
            for j in 0..s {
                out[j] += w * sc.emit[j];
            }
        }
        out.iter_mut().for_each(|x| *x = x.ln());
    };
    let present = lik.model.states.present_state();
    let len = ind.len();
    let mut v = vec![T::neg_infinity(); s];
    let mut back = vec![0usize; len * s];
    for t in 0..len {
        emit_mixed(t, &mut sc, &mut log_emit);
        if t == 0 {
            v[present] = log_emit[present];
        } else {
            let gamma = &tables.profiles[ind.slots[t - 1] as usize].transition;
            let prev = v.clone();
            for j in 0..s {
                let mut best = T::neg_infinity();
                let mut arg = 0;
                for (i, &pv) in prev.iter().enumerate() {
                    let cand = pv + gamma.get(i, j).ln();
                    if cand > best {
                        best = cand;
                        arg = i;
                    }
                }
                v[j] = best + log_emit[j];
                back[t * s + j] = arg;
            }
        }
        if v.iter().all(|&x| x == T::neg_infinity()) {
            return Err(Error::Numeric(format!(
                "record {}: no state can produce the observation in {}",
                lik.data.ids[index],
                lik.data.window.year(ind.entry + t)
            )));
        }
    }
    let mut state = 0;
    let mut best = T::neg_infinity();
    for (j, &x) in v.iter().enumerate() {
        if x > best {
            best = x;
            state = j;
        }
    }
    let mut path = vec![0; len];
    path[len - 1] = state;
    for t in (1..len).rev() {
        state = back[t * s + state];
        path[t - 1] = state;
    }
    Ok(path)
}

/// Joint log-probability of a state path and the observations, with mixture-weighted emissions.
/// Terms are added in the same order as [`viterbi_path`].
pub fn path_log_probability<T: Scalar>(
    lik: &Likelihood,
    tables: &ModelTables<T>,
    index: usize,
    omega: &[T],
    path: &[usize],
) -> T {
    let ind = &lik.data.individuals[index];
    let s = lik.model.states.len();
    let mut sc = Scratch::new(s);
    let mut total = T::zero();
    for (t, &st) in path.iter().enumerate() {
        let mut e = T::zero();
        for (g, &w) in omega.iter().enumerate() {
            if w == T::zero() {
                continue;
            }
            lik.emit(tables, ind, t, g, &mut sc);
            e += w * sc.emit[st];
        }
        if t == 0 {
            let delta = if st == lik.model.states.present_state() { T::zero() } else { T::neg_infinity() };
            total = delta + e.ln();
        } else {
            let gamma = &tables.profiles[ind.slots[t - 1] as usize].transition;
            total = total + gamma.get(path[t - 1], st).ln() + e.ln();
        }
    }
    total
}

fn argmax_first<T: Scalar>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Decodes every record in parallel.
pub fn decode_all(lik: &Likelihood, params: &ModelParams<f64>) -> Result<Vec<DecodedTrajectory>> {
    let tables = lik.tables(params);
    (0..lik.data.len())
        .into_par_iter()
        .with_min_len(chunk_size(lik.data.len()))
        .map(|i| {
            let ind = &lik.data.individuals[i];
            let omega = lik.posterior_weights(&tables, ind).map_err(|e| {
                Error::Numeric(format!("record {}: {}", lik.data.ids[i], e.message()))
            })?;
            let states = viterbi_path(lik, &tables, i, &omega)?;
            Ok(DecodedTrajectory { index: i, entry: ind.entry, states, group: argmax_first(&omega) })
        })
        .collect()
}

/// Which roles count towards the population size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresenceRule {
    pub roles: Vec<StateRole>,
}

impl Default for PresenceRule {
    fn default() -> Self {
        Self { roles: StateRole::DEFAULT_PRESENT.to_vec() }
    }
}

impl PresenceRule {
    pub fn counts(&self, role: StateRole) -> bool {
        self.roles.contains(&role)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tally {
    Present,
    AbroadKnown,
    AbroadUnknown,
    Dead,
    Other,
}

pub fn tally(role: StateRole, rule: &PresenceRule) -> Tally {
    if rule.counts(role) {
        return Tally::Present;
    }
    match role {
        StateRole::AbroadEmigrationRecorded | StateRole::AbroadKnown => Tally::AbroadKnown,
        StateRole::AbroadUnknown | StateRole::AbroadDeathRecorded => Tally::AbroadUnknown,
        StateRole::Dead | StateRole::PresentDeathRecorded => Tally::Dead,
        StateRole::Present | StateRole::ReturnedReRegistered => Tally::Other,
    }
}

/// Per-year state tallies over all entered individuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSeries {
    pub years: Vec<i32>,
    pub entered: Vec<usize>,
    pub present: Vec<usize>,
    pub abroad_known: Vec<usize>,
    /// Abroad without a recorded emigration: the overcoverage.
    pub abroad_unknown: Vec<usize>,
    pub dead: Vec<usize>,
    /// Present-type roles excluded by the presence rule.
    pub other: Vec<usize>,
}

impl PopulationSeries {
    /// Tallies state paths given as `(entry offset, states)`.
    pub fn from_paths<'a, I>(model: &Model, window: StudyWindow, paths: I, rule: &PresenceRule) -> Self
    where
        I: IntoIterator<Item = (usize, &'a [usize])>,
    {
        let n = window.years();
        let mut s = Self {
            years: (0..n).map(|t| window.year(t)).collect(),
            entered: vec![0; n],
            present: vec![0; n],
            abroad_known: vec![0; n],
            abroad_unknown: vec![0; n],
            dead: vec![0; n],
            other: vec![0; n],
        };
        for (entry, states) in paths {
            for (k, &st) in states.iter().enumerate() {
                let t = entry + k;
                s.entered[t] += 1;
                let bucket = match tally(model.states.role(st), rule) {
                    Tally::Present => &mut s.present,
                    Tally::AbroadKnown => &mut s.abroad_known,
                    Tally::AbroadUnknown => &mut s.abroad_unknown,
                    Tally::Dead => &mut s.dead,
                    Tally::Other => &mut s.other,
                };
                bucket[t] += 1;
            }
        }
        s
    }

    pub fn from_trajectories(model: &Model, window: StudyWindow, traj: &[DecodedTrajectory], rule: &PresenceRule) -> Self {
        Self::from_paths(model, window, traj.iter().map(|t| (t.entry, t.states.as_slice())), rule)
    }
}

/// Number of trajectories counted as present in study-year offset `t`.
pub fn population_size(model: &Model, trajectories: &[DecodedTrajectory], t: usize, rule: &PresenceRule) -> usize {
    trajectories
        .iter()
        .filter(|tr| t >= tr.entry && rule.counts(model.states.role(tr.states[t - tr.entry])))
        .count()
}

/// `(1 - estimate / rtb) × 100`.
pub fn overcoverage(population_estimate: f64, rtb_size: f64) -> Result<f64> {
    if !(rtb_size > 0.0) {
        return Err(Error::Domain(format!("register size {rtb_size} must be positive")));
    }
    Ok((1.0 - population_estimate / rtb_size) * 100.0)
}

/// Registered population per year implied by the event records: individuals
/// count from entry until a recorded emigration or death, and again after a
/// recorded re-immigration.
pub fn register_counts(data: &Dataset) -> Vec<usize> {
    let mut counts = vec![0usize; data.window.years()];
    for ind in &data.individuals {
        let mut registered = true;
        for (k, c) in ind.obs.iter().enumerate() {
            match c.flag {
                EventFlag::Emigration | EventFlag::Death => registered = false,
                EventFlag::ReImmigration => registered = true,
                EventFlag::None => {}
            }
            if registered {
                counts[ind.entry + k] += 1;
            }
        }
    }
    counts
}

/// Probability of appearing in register `k`: sum over patterns containing `k`.
pub fn marginal_register_probability<T: Scalar>(
    coeffs: &EmissionCoefficients<T>,
    layout: &EmissionLayout,
    scheme: &CovariateScheme,
    group: usize,
    profile: &[usize],
    k: usize,
) -> T {
    let lp = coeffs.pattern_log_probabilities(layout, scheme, group, profile);
    lp.iter()
        .enumerate()
        .filter(|(m, _)| m >> k & 1 == 1)
        .map(|(_, &l)| l.exp())
        .sum()
}

/// Probability of appearing in no register.
pub fn unobserved_probability<T: Scalar>(
    coeffs: &EmissionCoefficients<T>,
    layout: &EmissionLayout,
    scheme: &CovariateScheme,
    group: usize,
    profile: &[usize],
) -> T {
    coeffs.pattern_log_probabilities(layout, scheme, group, profile)[0].exp()
}

/// Register probability normalised within the profiles whose dimension `dim`
/// takes category `category`: restricted sum over patterns containing `k`
/// divided by the restricted sum over all patterns. Profiles carry weights
/// (1 for the plain enumeration over combinations).
pub fn conditional_register_probability(
    coeffs: &EmissionCoefficients<f64>,
    layout: &EmissionLayout,
    scheme: &CovariateScheme,
    group: usize,
    profiles: &[(Profile, f64)],
    k: usize,
    condition: Option<(usize, usize)>,
) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (profile, w) in profiles {
        if let Some((d, c)) = condition {
            if profile[d] != c {
                continue;
            }
        }
        let lp = coeffs.pattern_log_probabilities(layout, scheme, group, profile);
        for (m, l) in lp.iter().enumerate() {
            let p = w * l.exp();
            den += p;
            if m >> k & 1 == 1 {
                num += p;
            }
        }
    }
    if !(den > 0.0) {
        return Err(Error::Domain("conditioning subset is empty".into()));
    }
    Ok(num / den)
}

/// Every profile of the scheme with unit weight.
pub fn all_profiles(scheme: &CovariateScheme) -> Vec<(Profile, f64)> {
    (0..scheme.profile_count()).map(|c| (scheme.profile_from_code(c), 1.0)).collect()
}

/// `Σ_g π_g m_g`.
pub fn mixture_marginal(pi: &[f64], marginals: &[f64]) -> f64 {
    pi.iter().zip(marginals).map(|(p, m)| p * m).sum()
}

/// Decoded status of person-years observed only in a false-positive pattern.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UncertainSightings {
    /// `(dimension, category) -> (present, absent)`
    pub by_category: BTreeMap<(String, String), (usize, usize)>,
    /// consecutive-year run length -> (present, absent)
    pub by_run_length: BTreeMap<usize, (usize, usize)>,
}

pub fn uncertain_sightings(
    model: &Model,
    data: &Dataset,
    trajectories: &[DecodedTrajectory],
    rule: &PresenceRule,
) -> UncertainSightings {
    let mut out = UncertainSightings::default();
    let fp = &model.false_positive;
    for tr in trajectories {
        let ind = &data.individuals[tr.index];
        let flags: Vec<bool> =
            ind.obs.iter().map(|c| c.flag == EventFlag::None && fp.contains(c.pattern)).collect();
        let mut t = 0;
        while t < flags.len() {
            if !flags[t] {
                t += 1;
                continue;
            }
            let start = t;
            while t < flags.len() && flags[t] {
                t += 1;
            }
            let run = t - start;
            for u in start..t {
                let present = rule.counts(model.states.role(tr.states[u]));
                let bump = |e: &mut (usize, usize)| if present { e.0 += 1 } else { e.1 += 1 };
                bump(out.by_run_length.entry(run).or_default());
                let profile = &data.profiles[ind.slots[u] as usize];
                for (d, dim) in model.scheme.dimensions.iter().enumerate() {
                    let key = (dim.name.clone(), dim.categories[profile[d]].clone());
                    bump(out.by_category.entry(key).or_default());
                }
            }
        }
    }
    out
}

/// Share of individuals whose modal group holds at least `threshold` of their assignments.
/// `assignments[i]` lists the groups assigned to individual `i` across resamples.
pub fn group_stability(assignments: &[Vec<usize>], threshold: f64) -> f64 {
    let considered: Vec<&Vec<usize>> = assignments.iter().filter(|a| !a.is_empty()).collect();
    if considered.is_empty() {
        return f64::NAN;
    }
    let stable = considered
        .iter()
        .filter(|a| {
            let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
            for &g in a.iter() {
                *counts.entry(g).or_default() += 1;
            }
            let top = counts.values().copied().max().unwrap_or(0);
            top as f64 >= threshold * a.len() as f64
        })
        .count();
    stable as f64 / considered.len() as f64
}
