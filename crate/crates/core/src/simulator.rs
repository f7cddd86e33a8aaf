//! Synthetic register populations drawn from known parameters, with the true
//! latent histories kept alongside.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariates::{BaseCovariates, DimensionKind};
use crate::data::{IndividualRecord, StudyWindow};
use crate::decoder::{PopulationSeries, PresenceRule};
use crate::emission::ObservationCategory;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::ModelParams;
use crate::seeds::{rng_for, stream};

/// Simulation is only offered where the category table can be enumerated per state.
pub const MAX_SIMULATED_REGISTERS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub window: StudyWindow,
    /// New entrants in each study year.
    pub entries: Vec<usize>,
    /// Category probabilities of static dimensions, by dimension name; uniform when absent.
    #[serde(default)]
    pub frequencies: BTreeMap<String, Vec<f64>>,
    /// Inclusive range of age at entry, used when an age dimension is present.
    #[serde(default = "default_age_range")]
    pub age_at_entry: (i32, i32),
    #[serde(default)]
    pub seed: u64,
}

fn default_age_range() -> (i32, i32) {
    (18, 70)
}

impl SimulationConfig {
    pub fn validate(&self, model: &Model) -> Result<()> {
        if self.entries.len() != self.window.years() {
            return Err(Error::Config(format!(
                "entries list has {} years, study window has {}",
                self.entries.len(),
                self.window.years()
            )));
        }
        if self.entries.iter().sum::<usize>() == 0 {
            return Err(Error::Config("no entrants to simulate".into()));
        }
        if self.age_at_entry.0 > self.age_at_entry.1 {
            return Err(Error::Config("age_at_entry range is empty".into()));
        }
        for (name, f) in &self.frequencies {
            let d = model.scheme.dimension_index(name)?;
            let dim = &model.scheme.dimensions[d];
            if !matches!(dim.kind, DimensionKind::Static) {
                return Err(Error::Config(format!("dimension `{name}` is derived from years; it takes no frequencies")));
            }
            if f.len() != dim.categories.len() || f.iter().any(|p| !(*p >= 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("frequencies of `{name}` must be a probability vector over its categories")));
            }
        }
        if model.registers() > MAX_SIMULATED_REGISTERS {
            return Err(Error::Config(format!("simulation supports at most {MAX_SIMULATED_REGISTERS} registers")));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.entries.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrueHistory {
    pub id: String,
    pub entry_year: i32,
    pub group: usize,
    /// Zero-based states from entry to the last study year.
    pub states: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub individuals: Vec<TrueHistory>,
}

impl GroundTruth {
    /// Tally of the true states per year, with the decoder's counting rule.
    pub fn population_series(&self, model: &Model, window: StudyWindow, rule: &PresenceRule) -> PopulationSeries {
        PopulationSeries::from_paths(
            model,
            window,
            self.individuals.iter().map(|h| ((h.entry_year - window.start) as usize, h.states.as_slice())),
            rule,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub records: Vec<IndividualRecord>,
    pub truth: GroundTruth,
}

fn draw_index(rng: &mut ChaCha8Rng, cumulative: &[f64]) -> usize {
    let total = *cumulative.last().expect("non-empty distribution");
    let u = rng.random::<f64>() * total;
    cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1)
}

fn cumulate(p: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    p.into_iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect()
}

/// Draw tables for one covariate profile.
struct ProfileDraws {
    /// `[state]` cumulative transition row.
    rows: Vec<Vec<f64>>,
    /// `[group][state]` cumulative category distribution over `ObservationCategory::all(K)`.
    emissions: Vec<Vec<Vec<f64>>>,
}

struct Drawn {
    base: BaseCovariates,
    birth_year: Option<i32>,
    covariates: BTreeMap<String, String>,
    group: usize,
    entry_year: i32,
}

/// Draws covariates, mixture group and the latent path for every entrant,
/// emitting one observation category per year from each visited state.
pub fn simulate_population(model: &Model, params: &ModelParams<f64>, config: &SimulationConfig) -> Result<Simulation> {
    config.validate(model)?;
    let scheme = &model.scheme;
    let k = model.registers();
    let entries: Vec<i32> = config
        .entries
        .iter()
        .enumerate()
        .flat_map(|(t, &n)| std::iter::repeat_n(config.window.year(t), n))
        .collect();
    let pi = params.mixing_proportions();
    let pi_cum = cumulate(pi.iter().copied());
    let dims = &scheme.dimensions;
    let freq: Vec<Vec<f64>> = dims
        .iter()
        .map(|d| match config.frequencies.get(&d.name) {
            Some(f) => cumulate(f.iter().copied()),
            None => cumulate(std::iter::repeat_n(1.0, d.categories.len())),
        })
        .collect();

    let drawn: Vec<Drawn> = entries
        .par_iter()
        .enumerate()
        .map(|(i, &entry_year)| {
            let mut rng = rng_for(config.seed, &[stream::SIMULATE, i as u64, 0]);
            let mut categories = vec![0; dims.len()];
            let mut covariates = BTreeMap::new();
            for (d, dim) in dims.iter().enumerate() {
                if matches!(dim.kind, DimensionKind::Static) {
                    categories[d] = draw_index(&mut rng, &freq[d]);
                    covariates.insert(dim.name.clone(), dim.categories[categories[d]].clone());
                }
            }
            let birth_year = scheme
                .needs_birth_year()
                .then(|| entry_year - rng.random_range(config.age_at_entry.0..=config.age_at_entry.1));
            let group = draw_index(&mut rng, &pi_cum);
            Drawn { base: BaseCovariates { categories, birth_year }, birth_year, covariates, group, entry_year }
        })
        .collect();

    // draw tables for every profile that occurs
    let mut codes: Vec<usize> = drawn
        .iter()
        .flat_map(|d| {
            (d.entry_year..=config.window.end)
                .map(|y| scheme.profile_code(&scheme.profile_at(&d.base, d.entry_year, y)))
                .collect::<Vec<_>>()
        })
        .collect();
    codes.sort_unstable();
    codes.dedup();
    let cats = ObservationCategory::all(k);
    let tables: HashMap<usize, ProfileDraws> = codes
        .par_iter()
        .map(|&code| {
            let profile = scheme.profile_from_code(code);
            let gamma = model.transition_matrix(params, &profile);
            let rows = (0..gamma.size()).map(|s| cumulate(gamma.row(s).iter().copied())).collect();
            let q = params.false_positive_probability(scheme, &profile);
            let emissions = (0..model.groups())
                .map(|g| {
                    let lp = params.emission.pattern_log_probabilities(&model.emission, scheme, g, &profile);
                    let mut per_state = vec![Vec::with_capacity(cats.len()); model.states.len()];
                    for &c in &cats {
                        let p = lp[c.pattern as usize].exp();
                        for (s, term) in model.emission_terms(c).into_iter().enumerate() {
                            per_state[s].push(term.value(p, q));
                        }
                    }
                    per_state.into_iter().map(cumulate).collect()
                })
                .collect();
            (code, ProfileDraws { rows, emissions })
        })
        .collect();

    let present = model.states.present_state();
    let end = config.window.end;
    let results: Vec<(IndividualRecord, TrueHistory)> = drawn
        .into_par_iter()
        .enumerate()
        .map(|(i, d)| {
            let mut rng = rng_for(config.seed, &[stream::SIMULATE, i as u64, 1]);
            let mut state = present;
            let mut states = Vec::new();
            let mut observations = Vec::new();
            for y in d.entry_year..=end {
                let code = scheme.profile_code(&scheme.profile_at(&d.base, d.entry_year, y));
                if y > d.entry_year {
                    let prev = scheme.profile_code(&scheme.profile_at(&d.base, d.entry_year, y - 1));
                    state = draw_index(&mut rng, &tables[&prev].rows[state]);
                }
                let c = cats[draw_index(&mut rng, &tables[&code].emissions[d.group][state])];
                states.push(state);
                observations.push((y, c.encode(k)));
            }
            let id = format!("i{i:07}");
            (
                IndividualRecord {
                    id: id.clone(),
                    entry_year: d.entry_year,
                    birth_year: d.birth_year,
                    covariates: d.covariates,
                    observations,
                },
                TrueHistory { id, entry_year: d.entry_year, group: d.group, states },
            )
        })
        .collect();
    let (records, individuals) = results.into_iter().unzip();
    Ok(Simulation { records, truth: GroundTruth { individuals } })
}
