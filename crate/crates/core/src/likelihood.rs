//! Forward-algorithm likelihood with individual-level mixture marginalization.

use rayon::prelude::*;

use crate::data::{Dataset, Individual};
use crate::emission::EmissionTerm;
use crate::error::{Error, Result};
use crate::model::{Model, ModelTables, TermCache};
use crate::params::ModelParams;
use crate::scalar::{log_sum_exp, pairwise_sum, Scalar};

/// Records per work unit; depends only on `n` so reductions do not depend on the worker count.
pub fn chunk_size(n: usize) -> usize {
    256.max(n.div_ceil(64))
}

/// A model bound to a dataset.
pub struct Likelihood<'a> {
    pub model: &'a Model,
    pub data: &'a Dataset,
    pub(crate) terms: TermCache,
    /// Permitted predecessors of each state.
    pub(crate) incoming: Vec<Vec<usize>>,
    /// Permitted successors of each state.
    pub(crate) outgoing: Vec<Vec<usize>>,
}

/// Scratch space reused across steps of one recursion.
pub(crate) struct Scratch<T> {
    pub alpha: Vec<T>,
    pub next: Vec<T>,
    pub emit: Vec<T>,
    pub terms: Vec<EmissionTerm>,
}

impl<T: Scalar> Scratch<T> {
    pub fn new(s: usize) -> Self {
        Self { alpha: vec![T::zero(); s], next: vec![T::zero(); s], emit: vec![T::zero(); s], terms: Vec::new() }
    }
}

impl<'a> Likelihood<'a> {
    pub fn new(model: &'a Model, data: &'a Dataset) -> Self {
        let n = model.states.len();
        let incoming = (0..n).map(|j| (0..n).filter(|&i| model.states.is_permitted(i, j)).collect()).collect();
        let outgoing = (0..n).map(|i| (0..n).filter(|&j| model.states.is_permitted(i, j)).collect()).collect();
        Self { model, data, terms: TermCache::new(model), incoming, outgoing }
    }

    pub fn tables<T: Scalar>(&self, params: &ModelParams<T>) -> ModelTables<T> {
        ModelTables::build(self.model, params, &self.data.profiles)
    }

    /// Emission vector of individual step `t` into `scratch.emit`.
    pub(crate) fn emit<T: Scalar>(
        &self,
        tables: &ModelTables<T>,
        ind: &Individual,
        t: usize,
        group: usize,
        scratch: &mut Scratch<T>,
    ) {
        let obs = ind.obs[t];
        let mut local = std::mem::take(&mut scratch.terms);
        let terms = self.terms.get(self.model, obs, &mut local);
        tables.emission_into(terms, ind.slots[t] as usize, group, obs, &mut scratch.emit);
        scratch.terms = local;
    }

    /// Scaled forward recursion for one group; `-inf` when the history is impossible.
    pub fn forward_group<T: Scalar>(&self, tables: &ModelTables<T>, ind: &Individual, group: usize) -> T {
        let mut scratch = Scratch::new(self.model.states.len());
        self.forward_group_with(tables, ind, group, &mut scratch)
    }

    pub(crate) fn forward_group_with<T: Scalar>(
        &self,
        tables: &ModelTables<T>,
        ind: &Individual,
        group: usize,
        sc: &mut Scratch<T>,
    ) -> T {
        let s = self.model.states.len();
        let present = self.model.states.present_state();
        let mut ll = T::zero();
        for t in 0..ind.len() {
            self.emit(tables, ind, t, group, sc);
            if t == 0 {
                sc.next.iter_mut().for_each(|x| *x = T::zero());
                sc.next[present] = sc.emit[present];
            } else {
                let gamma = &tables.profiles[ind.slots[t - 1] as usize].transition;
                for j in 0..s {
                    let mut acc = T::zero();
                    for &i in &self.incoming[j] {
                        acc += sc.alpha[i] * gamma.get(i, j);
                    }
                    sc.next[j] = acc * sc.emit[j];
                }
            }
            let c: T = sc.next.iter().copied().sum();
            if !(c > T::zero()) {
                return T::neg_infinity();
            }
            for j in 0..s {
                sc.alpha[j] = sc.next[j] / c;
            }
            ll += c.ln();
        }
        ll
    }

    /// Per-group log-likelihoods of one individual.
    pub fn group_logliks<T: Scalar>(&self, tables: &ModelTables<T>, ind: &Individual) -> Vec<T> {
        let mut sc = Scratch::new(self.model.states.len());
        (0..self.model.groups()).map(|g| self.forward_group_with(tables, ind, g, &mut sc)).collect()
    }

    /// `log Σ_g π_g L_g`.
    pub fn mixture_loglik<T: Scalar>(&self, tables: &ModelTables<T>, ind: &Individual) -> T {
        mix(&tables.log_pi, &self.group_logliks(tables, ind))
    }

    /// Posterior group membership probabilities `ω_ig`.
    pub fn posterior_weights<T: Scalar>(&self, tables: &ModelTables<T>, ind: &Individual) -> Result<Vec<T>> {
        posterior_from_logliks(&tables.log_pi, &self.group_logliks(tables, ind))
    }

    /// Mixture log-likelihood of every individual, in dataset order.
    pub fn individual_logliks<T: Scalar>(&self, params: &ModelParams<T>) -> Vec<T> {
        let tables = self.tables(params);
        self.data
            .individuals
            .par_iter()
            .with_min_len(chunk_size(self.data.len()))
            .map(|ind| self.mixture_loglik(&tables, ind))
            .collect()
    }

    /// `Σ_i w_i ℓ_i` with deterministic pairwise summation. Zero-weight records are skipped.
    pub fn total<T: Scalar>(&self, params: &ModelParams<T>, weights: Option<&[f64]>) -> T {
        let ll = self.individual_logliks(params);
        weighted_sum(&ll, weights)
    }

    /// Indices of records impossible under `params`.
    pub fn impossible_records<T: Scalar>(&self, params: &ModelParams<T>) -> Vec<usize> {
        self.individual_logliks(params)
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == T::neg_infinity())
            .map(|(i, _)| i)
            .collect()
    }
}

pub fn weighted_sum<T: Scalar>(ll: &[T], weights: Option<&[f64]>) -> T {
    let terms: Vec<T> = match weights {
        None => ll.to_vec(),
        Some(w) => {
            assert_eq!(w.len(), ll.len(), "one weight per record");
            ll.iter()
                .zip(w)
                .filter(|(_, &w)| w != 0.0)
                .map(|(&l, &w)| T::lit(w) * l)
                .collect()
        }
    };
    pairwise_sum(&terms)
}

pub fn mix<T: Scalar>(log_pi: &[T], group_ll: &[T]) -> T {
    let v: Vec<T> = log_pi.iter().zip(group_ll).map(|(&a, &b)| a + b).collect();
    log_sum_exp(&v)
}

pub fn posterior_from_logliks<T: Scalar>(log_pi: &[T], group_ll: &[T]) -> Result<Vec<T>> {
    let v: Vec<T> = log_pi.iter().zip(group_ll).map(|(&a, &b)| a + b).collect();
    let total = log_sum_exp(&v);
    if total == T::neg_infinity() {
        return Err(Error::Numeric("history impossible under every mixture group".into()));
    }
    Ok(v.iter().map(|&x| (x - total).exp()).collect())
}

/// Linear-space forward recursion without rescaling; only for short histories.
pub fn forward_unscaled<T: Scalar>(lik: &Likelihood, tables: &ModelTables<T>, ind: &Individual, group: usize) -> T {
    let s = lik.model.states.len();
    let mut sc = Scratch::new(s);
    let mut alpha = vec![T::zero(); s];
    for t in 0..ind.len() {
        lik.emit(tables, ind, t, group, &mut sc);
        if t == 0 {
            let p = lik.model.states.present_state();
            alpha[p] = sc.emit[p];
        } else {
            let gamma = &tables.profiles[ind.slots[t - 1] as usize].transition;
            alpha = (0..s)
                .map(|j| (0..s).map(|i| alpha[i] * gamma.get(i, j)).sum::<T>() * sc.emit[j])
                .collect();
        }
    }
    alpha.into_iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariates::CovariateScheme;
    use crate::data::{IndividualRecord, StudyWindow};
    use crate::emission::{EmissionLayout, EventRecording, FalsePositiveSpec, ObservationCategory};
    use crate::state_space::StateSpaceConfig;

    fn single_register_model(states: StateSpaceConfig, groups: usize) -> Model {
        Model::new(
            states,
            CovariateScheme::empty(),
            EmissionLayout::new(&["a"], vec![], false, groups).with_group_specific(0),
            EventRecording::default(),
            FalsePositiveSpec::default(),
        )
        .unwrap()
    }

    fn data(model: &Model, start: i32, end: i32, obs: &[Vec<u32>]) -> Dataset {
        let recs: Vec<IndividualRecord> = obs
            .iter()
            .enumerate()
            .map(|(i, o)| {
                let entry = end - o.len() as i32 + 1;
                IndividualRecord {
                    id: format!("r{i}"),
                    entry_year: entry,
                    birth_year: None,
                    covariates: Default::default(),
                    observations: o.iter().enumerate().map(|(t, &c)| (entry + t as i32, c)).collect(),
                }
            })
            .collect();
        Dataset::prepare(model, StudyWindow::new(start, end).unwrap(), &recs).unwrap()
    }

    #[test]
    fn single_step_is_present_emission() {
        let m = single_register_model(StateSpaceConfig::general3(), 1);
        let d = data(&m, 2000, 2000, &[vec![1]]);
        let mut p = ModelParams::<f64>::zeros(&m);
        // Pr(pattern {a}) = 0.3
        p.emission.main[0][0] = (0.3f64 / 0.7).ln();
        let lik = Likelihood::new(&m, &d);
        let ll: f64 = lik.total(&p, None);
        assert!((ll - 0.3f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn recorded_death_factorizes() {
        // present in year 1 with pattern {a}, death recorded in year 2, nothing in year 3
        let m = single_register_model(StateSpaceConfig::sweden8(), 1);
        let death = ObservationCategory::DEATH.encode(1);
        let d = data(&m, 2000, 2002, &[vec![1, death, 0]]);
        let mut p = ModelParams::<f64>::zeros(&m);
        p.life[0].intercept = 2.0;
        p.emission.main[0][0] = 0.5;
        let lik = Likelihood::new(&m, &d);
        let ll: f64 = lik.total(&p, None);
        let s = 1.0 / (1.0 + (-2.0f64).exp());
        let pa = 1.0 / (1.0 + (-0.5f64).exp());
        // 1 -> 2 -> 8: Pr(pattern) · (1 - s) · φ^p · 1 · Pr(no observation | dead)
        assert!((ll - (pa * (1.0 - s)).ln()).abs() < 1e-13);
    }

    #[test]
    fn mixture_of_two_groups() {
        let log_pi = [0.5f64.ln(), 0.5f64.ln()];
        let v = mix(&log_pi, &[0.2f64.ln(), 0.4f64.ln()]);
        assert!((v - 0.3f64.ln()).abs() < 1e-15);
        let w = posterior_from_logliks(&[0.523f64.ln(), 0.477f64.ln()], &[2.0f64.ln(), 0.0]).unwrap();
        assert!((w[0] - 0.523 * 2.0 / (0.523 * 2.0 + 0.477)).abs() < 1e-15);
        assert!((w[0] - 0.686_802_4).abs() < 1e-7);
        let w = posterior_from_logliks(&[0.3f64.ln(), 0.7f64.ln()], &[-1.0, -1.0]).unwrap();
        assert!((w[0] - 0.3).abs() < 1e-15);
        assert!(posterior_from_logliks(&[0.0f64], &[f64::NEG_INFINITY]).is_err());
    }

    #[test]
    fn identical_groups_collapse_mixture() {
        let m = single_register_model(StateSpaceConfig::sweden8(), 2);
        let d = data(&m, 2000, 2003, &[vec![1, 0, 1, 1], vec![0, 0]]);
        let mut p = ModelParams::<f64>::zeros(&m);
        p.emission.main = vec![vec![0.7], vec![0.7]];
        p.life[1].intercept = -1.0;
        let lik = Likelihood::new(&m, &d);
        let t = lik.tables(&p);
        for rho in [-2.0, 0.0, 3.0] {
            p.mixing_logits = vec![rho];
            let t2 = lik.tables(&p);
            for ind in &d.individuals {
                let a = lik.forward_group(&t, ind, 0);
                let b = lik.mixture_loglik(&t2, ind);
                assert!((a - b).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn impossible_history_is_negative_infinity() {
        let m = single_register_model(StateSpaceConfig::general3(), 1);
        // emigration-recorded flag never emitted in general3
        let d = data(&m, 2000, 2001, &[vec![0, ObservationCategory::EMIGRATED.encode(1)]]);
        let p = ModelParams::<f64>::zeros(&m);
        let lik = Likelihood::new(&m, &d);
        assert_eq!(lik.total::<f64>(&p, None), f64::NEG_INFINITY);
        assert_eq!(lik.impossible_records(&p), vec![0]);
    }

    #[test]
    fn weights_match_duplication() {
        let m = single_register_model(StateSpaceConfig::sweden8(), 1);
        let d = data(&m, 2000, 2002, &[vec![1, 0, 1], vec![1, 0, 1]]);
        let p = ModelParams::<f64>::zeros(&m);
        let lik = Likelihood::new(&m, &d);
        let a: f64 = lik.total(&p, Some(&[2.0, 0.0]));
        let b: f64 = lik.total(&p, Some(&[1.0, 1.0]));
        assert_eq!(a, b);
        let c: f64 = lik.total(&p, None);
        assert_eq!(b, c);
    }

    #[test]
    fn f32_agrees_with_f64() {
        let m = single_register_model(StateSpaceConfig::sweden8(), 2);
        let d = data(&m, 2000, 2004, &[vec![1, 0, 1, 1, 0], vec![0, 1, 1]]);
        let mut p = ModelParams::<f64>::zeros(&m);
        p.emission.main = vec![vec![1.0], vec![-1.0]];
        p.life[0].intercept = 3.0;
        p.life[1].intercept = -2.0;
        let lik = Likelihood::new(&m, &d);
        let a: f64 = lik.total(&p, None);
        let b: f32 = lik.total(&p.map(|x| x as f32), None);
        assert!((a - b as f64).abs() < 1e-4);
    }
}
