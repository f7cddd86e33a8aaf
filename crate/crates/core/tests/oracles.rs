mod common;

use common::oracles::*;
use crhmm::decoder::{decode_all, viterbi_path};
use crhmm::emission::{EmissionLayout, EventRecording, FalsePositiveSpec, ObservationCategory};
use crhmm::likelihood::forward_unscaled;
use crhmm::state_space::{Factor, LifeEvent, StateDef, TransitionTerm};
use crhmm::{
    CovariateScheme, Dataset, IndividualRecord, Likelihood, Model, ModelParams, StateRole, StateSpaceConfig, StudyWindow,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn forward_matches_path_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..30 {
        let inst = random_instance(&mut rng, 5, 6);
        let data = inst.dataset();
        let lik = Likelihood::new(&inst.model, &data);
        let ll = lik.individual_logliks(&inst.params);
        for (rec, &l) in inst.records.iter().zip(&ll) {
            let b = brute_force_loglik(&inst.model, &inst.params, rec);
            assert!(((l - b) / b).abs() < 1e-10, "{} vs {}", l, b);
        }
    }
}

#[test]
fn scaled_and_unscaled_recursions_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for _ in 0..20 {
        let inst = random_instance(&mut rng, 5, 5);
        let data = inst.dataset();
        let lik = Likelihood::new(&inst.model, &data);
        let tables = lik.tables(&inst.params);
        for ind in &data.individuals {
            for g in 0..inst.model.groups() {
                let scaled = lik.forward_group(&tables, ind, g);
                let plain = forward_unscaled(&lik, &tables, ind, g).ln();
                assert!((scaled - plain).abs() <= 1e-12 * plain.abs().max(1.0));
            }
        }
    }
}

#[test]
fn posterior_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut checked = 0;
    while checked < 10 {
        let inst = random_instance(&mut rng, 4, 4);
        if inst.model.groups() == 1 {
            continue;
        }
        let data = inst.dataset();
        let lik = Likelihood::new(&inst.model, &data);
        let tables = lik.tables(&inst.params);
        for (rec, ind) in inst.records.iter().zip(&data.individuals) {
            let w = lik.posterior_weights(&tables, ind).unwrap();
            for (a, b) in w.iter().zip(brute_force_posterior(&inst.model, &inst.params, rec)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        checked += 1;
    }
}

#[test]
fn viterbi_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    for _ in 0..40 {
        let inst = random_instance(&mut rng, 5, 4);
        let data = inst.dataset();
        let lik = Likelihood::new(&inst.model, &data);
        let decoded = decode_all(&lik, &inst.params).unwrap();
        for (i, tr) in decoded.iter().enumerate() {
            let (path, score) = exhaustive_viterbi(&lik, &inst.params, i);
            assert_eq!(tr.states, path, "record {i}, best score {score}");
            let omega = brute_force_posterior(&inst.model, &inst.params, &inst.records[i]);
            let own = independent_path_score(&inst.model, &inst.params, &inst.records[i], &omega, &tr.states);
            assert!((own - score).abs() <= 1e-9 * score.abs().max(1.0));
        }
    }
}

/// Two interchangeable abroad states reached with probability ½ each.
fn twin_model() -> Model {
    use Factor::{NotOccurs as Not, Occurs as Yes};
    use LifeEvent::{Emigration as E, Survival as S};
    let states = StateSpaceConfig {
        name: "twins".into(),
        states: vec![
            StateDef { id: 1, label: "present".into(), role: StateRole::Present },
            StateDef { id: 2, label: "left_a".into(), role: StateRole::AbroadUnknown },
            StateDef { id: 3, label: "left_b".into(), role: StateRole::AbroadUnknown },
            StateDef { id: 4, label: "dead".into(), role: StateRole::Dead },
        ],
        transitions: vec![
            TransitionTerm::new(0, 1, &[Yes(S), Yes(E)]),
            TransitionTerm::new(0, 2, &[Yes(S), Not(E)]),
            TransitionTerm::new(0, 3, &[Not(S)]),
            TransitionTerm::new(1, 1, &[]),
            TransitionTerm::new(2, 2, &[]),
            TransitionTerm::new(3, 3, &[]),
        ],
        absorbing_states: vec![1, 2, 3],
        intermediate_states: vec![],
        dead_emits_false_positive: false,
    };
    Model::new(
        states,
        CovariateScheme::empty(),
        EmissionLayout::new(&["a"], vec![], false, 1),
        EventRecording::default(),
        FalsePositiveSpec::default(),
    )
    .unwrap()
}

#[test]
fn viterbi_ties_go_to_the_lowest_state() {
    let model = twin_model();
    let mut p = ModelParams::zeros(&model);
    p.life[0].intercept = 2.0; // survival well above ½, emigration exactly ½
    let rec = IndividualRecord {
        id: "t".into(),
        entry_year: 2000,
        birth_year: None,
        covariates: Default::default(),
        observations: vec![(2000, 1), (2001, 0), (2002, 0)],
    };
    let data = Dataset::prepare(&model, StudyWindow::new(2000, 2002).unwrap(), &[rec]).unwrap();
    let lik = Likelihood::new(&model, &data);
    let tables = lik.tables(&p);
    assert_eq!(tables.profiles[0].transition.get(0, 1), tables.profiles[0].transition.get(0, 2));
    let path = viterbi_path(&lik, &tables, 0, &[1.0]).unwrap();
    assert_eq!(path, vec![0, 1, 1]);
    assert_eq!(exhaustive_viterbi(&lik, &p, 0).0, path);
}

/// Every observation sequence of a two-year history, enumerated.
fn all_histories(k: usize) -> Vec<IndividualRecord> {
    let cats = ObservationCategory::all(k);
    let mut out = Vec::new();
    for (a, c0) in cats.iter().enumerate() {
        for (b, c1) in cats.iter().enumerate() {
            out.push(IndividualRecord {
                id: format!("{a}-{b}"),
                entry_year: 2000,
                birth_year: None,
                covariates: [("sex".to_string(), "f".to_string())].into(),
                observations: vec![(2000, c0.encode(k)), (2001, c1.encode(k))],
            });
        }
    }
    out
}

#[test]
fn observation_sequences_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let mut checked = 0;
    while checked < 12 {
        let inst = random_instance(&mut rng, 2, 1);
        if inst.model.registers() != 1 {
            continue;
        }
        checked += 1;
        let records = all_histories(1);
        let data = Dataset::prepare(&inst.model, StudyWindow::new(2000, 2001).unwrap(), &records).unwrap();
        let ll = Likelihood::new(&inst.model, &data).individual_logliks(&inst.params);
        let total: f64 = ll.iter().map(|l| l.exp()).sum();
        assert!((total - 1.0).abs() < 1e-8, "{total}");
    }
}

#[test]
fn total_is_invariant_to_record_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let inst = random_instance(&mut rng, 5, 400);
    let mut shuffled = inst.records.clone();
    shuffled.shuffle(&mut rng);
    let a = Likelihood::new(&inst.model, &inst.dataset()).total(&inst.params, None);
    let data = Dataset::prepare(&inst.model, inst.window, &shuffled).unwrap();
    let b = Likelihood::new(&inst.model, &data).total(&inst.params, None);
    assert!((a - b).abs() <= 1e-12 * a.abs());
}

fn check_transition_invariants(states: &StateSpaceConfig, probs: [f64; 4]) -> Result<(), TestCaseError> {
    let m = states.matrix(&probs);
    for i in 0..states.len() {
        let sum: f64 = m.row(i).iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
        for j in 0..states.len() {
            let v = m.get(i, j);
            prop_assert!((0.0..=1.0).contains(&v));
            if !states.is_permitted(i, j) {
                prop_assert_eq!(v, 0.0);
            }
        }
    }
    Ok(())
}

proptest! {
    #[test]
    fn transition_rows_are_stochastic(s in 0.0..=1.0f64, e in 0.0..=1.0f64, r in 0.0..=1.0f64, l in 0.0..=1.0f64) {
        check_transition_invariants(&StateSpaceConfig::general3(), [s, e, r, l])?;
        check_transition_invariants(&StateSpaceConfig::sweden8(), [s, e, r, l])?;
    }
}
