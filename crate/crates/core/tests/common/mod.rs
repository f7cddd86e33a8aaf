#![allow(dead_code)]

pub mod oracles;

use crhmm::covariates::{CovariateDimension, CovariateScheme};
use crhmm::emission::{pair_index, EmissionLayout, EventRecording, FalsePositiveSpec};
use crhmm::{Model, ModelParams, SimulationConfig, StateSpaceConfig, StudyWindow};

/// Eight-state model with three registers, two groups differing on the first.
pub fn recovery_model() -> Model {
    Model::new(
        StateSpaceConfig::sweden8(),
        CovariateScheme::new(vec![
            CovariateDimension::new_static("sex", &["male", "female"], 0),
            CovariateDimension::years_since_entry("tis", &["early", "later"], vec![3]),
        ])
        .unwrap(),
        EmissionLayout::new(&["job_income", "social", "family_income"], vec![0], true, 2).with_group_specific(0),
        EventRecording { psi_e: 0.8, psi_r: 0.9, phi_p: 1.0, phi_a: 0.3 },
        FalsePositiveSpec::default(),
    )
    .unwrap()
}

pub fn recovery_truth(model: &Model) -> ModelParams<f64> {
    let mut p = ModelParams::zeros(model);
    // survival, emigration, re-immigration, deregistration
    for (lp, (a, sex, tis)) in p.life.iter_mut().zip([(4.0, 0.5, 0.3), (-3.0, -0.3, -0.5), (-1.5, 0.2, 0.4), (-0.5, 0.3, -0.2)]) {
        lp.intercept = a;
        lp.effects = vec![sex, tis];
    }
    let e = &mut p.emission;
    for g in 0..2 {
        e.main[g] = vec![if g == 0 { 2.0 } else { -1.0 }, -1.0, 0.5];
        e.register_effects[g] = vec![vec![0.3], vec![0.4], vec![-0.2]];
    }
    e.pairs[pair_index(0, 1, 3)] = 0.5;
    e.pairs[pair_index(0, 2, 3)] = 0.8;
    e.pairs[pair_index(1, 2, 3)] = -0.4;
    p.set_mixing_proportions(&[0.6, 0.4]);
    p
}

/// `n` entrants spread evenly over a ten-year window.
pub fn recovery_config(n: usize, seed: u64) -> SimulationConfig {
    let years = 10;
    let entries = (0..years).map(|t| n / years + usize::from(t < n % years)).collect();
    SimulationConfig {
        window: StudyWindow::new(2001, 2010).unwrap(),
        entries,
        frequencies: [("sex".to_string(), vec![0.5, 0.5])].into(),
        age_at_entry: (18, 70),
        seed,
    }
}
