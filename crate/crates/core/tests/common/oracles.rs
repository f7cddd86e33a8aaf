//! Independent reference computations: exhaustive path enumeration built only
//! from the per-profile transition matrices and emission vectors.

use crhmm::covariates::{CovariateDimension, CovariateScheme, Profile};
use crhmm::decoder::path_log_probability;
use crhmm::emission::{EmissionLayout, EventRecording, FalsePositiveSpec, ObservationCategory};
use crhmm::{
    simulate_population, Dataset, IndividualRecord, Likelihood, Model, ModelParams, SimulationConfig, StateSpaceConfig,
    StudyWindow,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Calls `f` on every state path of length `len` that starts in `first`.
pub fn for_each_path(states: usize, len: usize, first: usize, mut f: impl FnMut(&[usize])) {
    let mut path = vec![0usize; len];
    path[0] = first;
    loop {
        f(&path);
        let mut t = len;
        loop {
            if t == 1 {
                return;
            }
            t -= 1;
            path[t] += 1;
            if path[t] < states {
                break;
            }
            path[t] = 0;
        }
    }
}

pub struct Unrolled {
    pub profiles: Vec<Profile>,
    pub obs: Vec<ObservationCategory>,
}

pub fn unroll(model: &Model, rec: &IndividualRecord) -> Unrolled {
    let base = model
        .scheme
        .resolve_base(rec.covariates.iter().map(|(k, v)| (k.as_str(), v.as_str())), rec.birth_year)
        .unwrap();
    Unrolled {
        profiles: rec.observations.iter().map(|&(y, _)| model.scheme.profile_at(&base, rec.entry_year, y)).collect(),
        obs: rec
            .observations
            .iter()
            .map(|&(_, c)| ObservationCategory::decode(c, model.registers()).unwrap())
            .collect(),
    }
}

/// Per-group joint probabilities of every path, in enumeration order.
pub fn path_probabilities(model: &Model, params: &ModelParams<f64>, rec: &IndividualRecord, group: usize) -> Vec<(Vec<usize>, f64)> {
    let u = unroll(model, rec);
    let s = model.states.len();
    let gammas: Vec<_> = u.profiles.iter().map(|p| model.transition_matrix(params, p)).collect();
    let emits: Vec<Vec<f64>> =
        u.profiles.iter().zip(&u.obs).map(|(p, &o)| model.emission_vector(params, group, p, o)).collect();
    let mut out = Vec::new();
    for_each_path(s, u.obs.len(), model.states.present_state(), |path| {
        let mut prob = emits[0][path[0]];
        for t in 1..path.len() {
            prob *= gammas[t - 1].get(path[t - 1], path[t]) * emits[t][path[t]];
        }
        out.push((path.to_vec(), prob));
    });
    out
}

/// Log-likelihood of one record by summing over all paths and groups.
pub fn brute_force_loglik(model: &Model, params: &ModelParams<f64>, rec: &IndividualRecord) -> f64 {
    let pi = params.mixing_proportions();
    let total: f64 = (0..model.groups())
        .map(|g| pi[g] * path_probabilities(model, params, rec, g).iter().map(|(_, p)| p).sum::<f64>())
        .sum();
    total.ln()
}

/// Posterior group probabilities by enumeration.
pub fn brute_force_posterior(model: &Model, params: &ModelParams<f64>, rec: &IndividualRecord) -> Vec<f64> {
    let pi = params.mixing_proportions();
    let joint: Vec<f64> = (0..model.groups())
        .map(|g| pi[g] * path_probabilities(model, params, rec, g).iter().map(|(_, p)| p).sum::<f64>())
        .collect();
    let z: f64 = joint.iter().sum();
    joint.into_iter().map(|j| j / z).collect()
}

/// Best path under mixture-weighted emissions: highest score, ties broken
/// towards the smallest path compared from the last year backwards.
pub fn exhaustive_viterbi(lik: &Likelihood, params: &ModelParams<f64>, index: usize) -> (Vec<usize>, f64) {
    let tables = lik.tables(params);
    let ind = &lik.data.individuals[index];
    let omega = lik.posterior_weights(&tables, ind).unwrap();
    let mut best: Option<(Vec<usize>, f64)> = None;
    for_each_path(lik.model.states.len(), ind.len(), lik.model.states.present_state(), |path| {
        let score = path_log_probability(lik, &tables, index, &omega, path);
        let better = match &best {
            None => true,
            Some((bp, bs)) => score > *bs || (score == *bs && path.iter().rev().lt(bp.iter().rev())),
        };
        if better {
            best = Some((path.to_vec(), score));
        }
    });
    best.unwrap()
}

/// Mixture-weighted path score from the raw model functions.
pub fn independent_path_score(model: &Model, params: &ModelParams<f64>, rec: &IndividualRecord, omega: &[f64], path: &[usize]) -> f64 {
    let u = unroll(model, rec);
    let mut score = 0.0;
    for t in 0..path.len() {
        let e: f64 = (0..model.groups())
            .map(|g| omega[g] * model.emission_vector(params, g, &u.profiles[t], u.obs[t])[path[t]])
            .sum();
        score += e.ln();
        if t > 0 {
            score += model.transition_matrix(params, &u.profiles[t - 1]).get(path[t - 1], path[t]).ln();
        }
    }
    score
}

pub struct Instance {
    pub model: Model,
    pub params: ModelParams<f64>,
    pub records: Vec<IndividualRecord>,
    pub window: StudyWindow,
}

/// A random small model (either preset, 1–3 registers, 1–2 groups, optional
/// false positives) with simulated records over at most `max_years` years.
pub fn random_instance(rng: &mut ChaCha8Rng, max_years: usize, records: usize) -> Instance {
    let sweden = rng.random_bool(0.5);
    let mut states = if sweden { StateSpaceConfig::sweden8() } else { StateSpaceConfig::general3() };
    states.dead_emits_false_positive = rng.random_bool(0.5);
    let k = rng.random_range(1..=3usize);
    let groups = rng.random_range(1..=2usize);
    let names: Vec<String> = (0..k).map(|i| format!("r{i}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let scheme = CovariateScheme::new(vec![
        CovariateDimension::new_static("sex", &["m", "f"], 0),
        CovariateDimension::years_since_entry("tis", &["new", "old"], vec![2]),
    ])
    .unwrap();
    let mut layout = EmissionLayout::new(&refs, vec![0], k > 1 && rng.random_bool(0.5), groups);
    if groups > 1 {
        layout = layout.with_group_specific(0);
    }
    let recording = EventRecording {
        psi_e: rng.random_range(0.3..1.0),
        psi_r: rng.random_range(0.3..1.0),
        phi_p: rng.random_range(0.3..1.0),
        phi_a: rng.random_range(0.0..0.7),
    };
    let fp = if rng.random_bool(0.5) {
        FalsePositiveSpec { patterns: vec![rng.random_range(1..(1u32 << k))] }
    } else {
        FalsePositiveSpec::default()
    };
    let model = Model::new(states, scheme, layout, recording, fp).unwrap();
    let layout = model.layout();
    let mut x: Vec<f64> = (0..layout.len()).map(|_| rng.random_range(-1.5..1.5)).collect();
    x[0] += 2.0; // keep most people alive
    let params = layout.unpack(&model, &x).unwrap();
    let years = rng.random_range(2..=max_years);
    let window = StudyWindow::new(2000, 2000 + years as i32 - 1).unwrap();
    let mut entries = vec![0; years];
    entries[0] = records - records / 3;
    entries[years - 1 - rng.random_range(0..years - 1)] += records / 3;
    let cfg = SimulationConfig { window, entries, frequencies: Default::default(), age_at_entry: (20, 60), seed: rng.random() };
    let records = simulate_population(&model, &params, &cfg).unwrap().records;
    Instance { model, params, records, window }
}

impl Instance {
    pub fn dataset(&self) -> Dataset {
        Dataset::prepare(&self.model, self.window, &self.records).unwrap()
    }
}
