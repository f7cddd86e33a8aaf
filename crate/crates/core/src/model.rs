//! The assembled model: state space, covariates and emission structure, plus
//! per-profile probability tables evaluated at a parameter value.

use rayon::prelude::*;

use crate::covariates::{CovariateScheme, Profile};
use crate::emission::{
    emission_term, EmissionLayout, EmissionTerm, EventRecording, FalsePositiveSpec, ObservationCategory,
};
use crate::error::Result;
use crate::params::{ModelParams, ParameterLayout};
use crate::scalar::Scalar;
use crate::state_space::{EventProbabilities, StateSpaceConfig, TransitionMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub states: StateSpaceConfig,
    pub scheme: CovariateScheme,
    pub emission: EmissionLayout,
    pub recording: EventRecording,
    pub false_positive: FalsePositiveSpec,
}

impl Model {
    pub fn new(
        states: StateSpaceConfig,
        scheme: CovariateScheme,
        emission: EmissionLayout,
        recording: EventRecording,
        false_positive: FalsePositiveSpec,
    ) -> Result<Self> {
        let m = Self { states, scheme, emission, recording, false_positive };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.states.validate()?;
        self.scheme.validate()?;
        self.emission.validate(&self.scheme)?;
        self.recording.validate()?;
        self.false_positive.validate(self.emission.k())
    }

    pub fn layout(&self) -> ParameterLayout {
        ParameterLayout::new(self)
    }

    pub fn groups(&self) -> usize {
        self.emission.groups
    }

    pub fn registers(&self) -> usize {
        self.emission.k()
    }

    /// Emission terms of every state for one observed category.
    pub fn emission_terms(&self, observed: ObservationCategory) -> Vec<EmissionTerm> {
        self.states
            .states
            .iter()
            .map(|s| {
                emission_term(
                    s.role,
                    observed,
                    &self.recording,
                    &self.false_positive,
                    self.states.dead_emits_false_positive,
                )
            })
            .collect()
    }

    /// `Pr(observed | state)` for every state, for one group and covariate profile.
    pub fn emission_vector<T: Scalar>(
        &self,
        params: &ModelParams<T>,
        group: usize,
        profile: &[usize],
        observed: ObservationCategory,
    ) -> Vec<T> {
        let lp = params.emission.pattern_log_probabilities(&self.emission, &self.scheme, group, profile);
        let q = params.false_positive_probability(&self.scheme, profile);
        let p = lp[observed.pattern as usize].exp();
        self.emission_terms(observed).into_iter().map(|t| t.value(p, q)).collect()
    }

    pub fn transition_matrix<T: Scalar>(&self, params: &ModelParams<T>, profile: &[usize]) -> TransitionMatrix<T> {
        self.states.matrix(&params.event_probabilities(&self.scheme, profile))
    }
}

/// Probabilities for one covariate profile.
#[derive(Debug, Clone)]
pub struct ProfileTables<T> {
    pub events: EventProbabilities<T>,
    pub transition: TransitionMatrix<T>,
    pub q: T,
    /// Linear-scale pattern probabilities, `[group][pattern]`.
    pub patterns: Vec<Vec<T>>,
}

/// Everything the recursions need at one parameter value, indexed by dense profile slot.
#[derive(Debug, Clone)]
pub struct ModelTables<T> {
    pub profiles: Vec<ProfileTables<T>>,
    pub pi: Vec<T>,
    pub log_pi: Vec<T>,
}

impl<T: Scalar> ModelTables<T> {
    pub fn build(model: &Model, params: &ModelParams<T>, profiles: &[Profile]) -> Self {
        let tables = profiles
            .par_iter()
            .map(|profile| {
                let events = params.event_probabilities(&model.scheme, profile);
                ProfileTables {
                    transition: model.states.matrix(&events),
                    events,
                    q: params.false_positive_probability(&model.scheme, profile),
                    patterns: (0..model.groups())
                        .map(|g| {
                            params
                                .emission
                                .pattern_log_probabilities(&model.emission, &model.scheme, g, profile)
                                .into_iter()
                                .map(|x| x.exp())
                                .collect()
                        })
                        .collect(),
                }
            })
            .collect();
        let pi = params.mixing_proportions();
        let log_pi = pi.iter().map(|p| p.ln()).collect();
        Self { profiles: tables, pi, log_pi }
    }

    /// Writes the emission vector for one observation into `out`.
    pub fn emission_into(
        &self,
        terms: &[EmissionTerm],
        slot: usize,
        group: usize,
        observed: ObservationCategory,
        out: &mut [T],
    ) {
        let t = &self.profiles[slot];
        let p = t.patterns[group][observed.pattern as usize];
        for (o, term) in out.iter_mut().zip(terms) {
            *o = term.value(p, t.q);
        }
    }
}

/// Cache of emission terms keyed by category, so the recursions skip role dispatch.
#[derive(Debug, Clone)]
pub struct TermCache {
    registers: usize,
    terms: Vec<Vec<EmissionTerm>>,
}

impl TermCache {
    /// Eagerly tabulates all `2·2^K+2` categories when that is small, else evaluates on demand.
    pub fn new(model: &Model) -> Self {
        let k = model.registers();
        let terms = if k <= 12 {
            let n = 1usize << (k + 2);
            (0..n as u32)
                .map(|code| match ObservationCategory::decode(code, k) {
                    Ok(c) => model.emission_terms(c),
                    Err(_) => Vec::new(),
                })
                .collect()
        } else {
            Vec::new()
        };
        Self { registers: k, terms }
    }

    pub fn get<'a>(&'a self, model: &Model, observed: ObservationCategory, scratch: &'a mut Vec<EmissionTerm>) -> &'a [EmissionTerm] {
        if self.terms.is_empty() {
            *scratch = model.emission_terms(observed);
            scratch
        } else {
            &self.terms[observed.encode(self.registers) as usize]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emission::EmissionLayout;

    #[test]
    fn identical_groups_make_emissions_group_free() {
        let scheme = CovariateScheme::empty();
        let layout = EmissionLayout::new(&["a", "b", "c"], vec![], true, 2).with_group_specific(0);
        let m = Model::new(
            StateSpaceConfig::sweden8(),
            scheme,
            layout,
            EventRecording::default(),
            FalsePositiveSpec { patterns: vec![0b100] },
        )
        .unwrap();
        let mut p = ModelParams::<f64>::zeros(&m);
        p.emission.main = vec![vec![0.4, -1.0, 2.0]; 2];
        p.emission.pairs = vec![0.1, 0.2, -0.3];
        for cat in ObservationCategory::all(3) {
            assert_eq!(m.emission_vector(&p, 0, &[], cat), m.emission_vector(&p, 1, &[], cat));
        }
    }
}
