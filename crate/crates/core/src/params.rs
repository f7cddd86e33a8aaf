//! Structured model parameters and their flat, named packing for the optimizer.

use crate::covariates::CovariateScheme;
use crate::emission::{EmissionCoefficients, EmissionLayout};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::scalar::{inv_logit, Scalar};
use crate::state_space::{EventProbabilities, LifeEvent, LinearPredictor};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    /// Indexed by [`LifeEvent::index`]; events unused by the state space stay at zero.
    pub life: [LinearPredictor<T>; 4],
    pub emission: EmissionCoefficients<T>,
    /// `G - 1` free logits; the last group is the reference.
    pub mixing_logits: Vec<T>,
    pub false_positive: LinearPredictor<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn zeros(model: &Model) -> Self {
        let lp = || LinearPredictor::intercept_only(T::zero(), &model.scheme);
        Self {
            life: [lp(), lp(), lp(), lp()],
            emission: EmissionCoefficients::zeros(&model.emission, &model.scheme),
            mixing_logits: vec![T::zero(); model.emission.groups - 1],
            false_positive: lp(),
        }
    }

    pub fn groups(&self) -> usize {
        self.mixing_logits.len() + 1
    }

    pub fn mixing_proportions(&self) -> Vec<T> {
        mixing_from_logits(&self.mixing_logits)
    }

    /// Sets the logits so that the proportions equal `pi` (all entries must be positive).
    pub fn set_mixing_proportions(&mut self, pi: &[T]) {
        let last = pi[pi.len() - 1];
        self.mixing_logits = pi[..pi.len() - 1].iter().map(|&p| (p / last).ln()).collect();
    }

    pub fn event_probabilities(&self, scheme: &CovariateScheme, profile: &[usize]) -> EventProbabilities<T> {
        LifeEvent::ALL.map(|ev| inv_logit(self.life[ev.index()].eta(scheme, profile)))
    }

    pub fn false_positive_probability(&self, scheme: &CovariateScheme, profile: &[usize]) -> T {
        inv_logit(self.false_positive.eta(scheme, profile))
    }

    /// Reorders mixture groups: new group `i` is old group `order[i]`.
    pub fn permute_groups(&mut self, order: &[usize]) {
        let pi = self.mixing_proportions();
        let new_pi: Vec<T> = order.iter().map(|&g| pi[g]).collect();
        self.emission.main = order.iter().map(|&g| self.emission.main[g].clone()).collect();
        self.emission.register_effects =
            order.iter().map(|&g| self.emission.register_effects[g].clone()).collect();
        self.set_mixing_proportions(&new_pi);
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U + Copy) -> ModelParams<U> {
        let lp = |p: &LinearPredictor<T>| LinearPredictor {
            intercept: f(p.intercept),
            effects: p.effects.iter().map(|&x| f(x)).collect(),
        };
        ModelParams {
            life: [lp(&self.life[0]), lp(&self.life[1]), lp(&self.life[2]), lp(&self.life[3])],
            emission: EmissionCoefficients {
                main: self.emission.main.iter().map(|v| v.iter().map(|&x| f(x)).collect()).collect(),
                register_effects: self
                    .emission
                    .register_effects
                    .iter()
                    .map(|g| g.iter().map(|v| v.iter().map(|&x| f(x)).collect()).collect())
                    .collect(),
                pairs: self.emission.pairs.iter().map(|&x| f(x)).collect(),
            },
            mixing_logits: self.mixing_logits.iter().map(|&x| f(x)).collect(),
            false_positive: lp(&self.false_positive),
        }
    }
}

/// Softmax of `[logits..., 0]`.
pub fn mixing_from_logits<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::zero(), T::max);
    let mut out: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    out.push((-max).exp());
    let z: T = out.iter().copied().sum();
    out.iter_mut().for_each(|p| *p /= z);
    out
}

/// Position of one free parameter inside [`ModelParams`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamSlot {
    LifeIntercept(LifeEvent),
    LifeEffect(LifeEvent, usize),
    /// `group: None` marks a coefficient shared by every group.
    EmissionMain { register: usize, group: Option<usize> },
    EmissionEffect { register: usize, effect: usize, group: Option<usize> },
    EmissionPair(usize),
    MixingLogit(usize),
    FalsePositiveIntercept,
    FalsePositiveEffect(usize),
}

/// Ordered schema of the free parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterLayout {
    pub slots: Vec<ParamSlot>,
    pub names: Vec<String>,
}

impl ParameterLayout {
    pub fn new(model: &Model) -> Self {
        let scheme = &model.scheme;
        let em: &EmissionLayout = &model.emission;
        let life_labels = scheme.effect_labels(&scheme.all_dims());
        let em_labels = scheme.effect_labels(&em.interaction_dims);
        let mut slots = Vec::new();
        let mut names = Vec::new();
        let mut push = |slot, name: String| {
            slots.push(slot);
            names.push(name);
        };
        for ev in model.states.events_used() {
            push(ParamSlot::LifeIntercept(ev), format!("{}:(intercept)", ev.name()));
            for (i, l) in life_labels.iter().enumerate() {
                push(ParamSlot::LifeEffect(ev, i), format!("{}:{l}", ev.name()));
            }
        }
        for (k, reg) in em.registers.iter().enumerate() {
            let groups: Vec<Option<usize>> = if em.group_specific[k] && em.groups > 1 {
                (0..em.groups).map(Some).collect()
            } else {
                vec![None]
            };
            for group in groups {
                let tag = group.map(|g| format!("[g{}]", g + 1)).unwrap_or_default();
                push(ParamSlot::EmissionMain { register: k, group }, format!("emission:{reg}{tag}"));
                for (i, l) in em_labels.iter().enumerate() {
                    push(
                        ParamSlot::EmissionEffect { register: k, effect: i, group },
                        format!("emission:{reg}*{l}{tag}"),
                    );
                }
            }
        }
        if em.pairs {
            let k = em.k();
            for a in 0..k {
                for b in a + 1..k {
                    let idx = crate::emission::pair_index(a, b, k);
                    push(
                        ParamSlot::EmissionPair(idx),
                        format!("emission:{}*{}", em.registers[a], em.registers[b]),
                    );
                }
            }
        }
        for g in 0..em.groups.saturating_sub(1) {
            push(ParamSlot::MixingLogit(g), format!("mixture:logit[g{}]", g + 1));
        }
        if model.false_positive.is_enabled() {
            push(ParamSlot::FalsePositiveIntercept, "false_positive:(intercept)".into());
            for (i, l) in life_labels.iter().enumerate() {
                push(ParamSlot::FalsePositiveEffect(i), format!("false_positive:{l}"));
            }
        }
        Self { slots, names }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    fn get<T: Scalar>(p: &ModelParams<T>, slot: ParamSlot) -> T {
        match slot {
            ParamSlot::LifeIntercept(ev) => p.life[ev.index()].intercept,
            ParamSlot::LifeEffect(ev, i) => p.life[ev.index()].effects[i],
            ParamSlot::EmissionMain { register, group } => p.emission.main[group.unwrap_or(0)][register],
            ParamSlot::EmissionEffect { register, effect, group } => {
                p.emission.register_effects[group.unwrap_or(0)][register][effect]
            }
            ParamSlot::EmissionPair(i) => p.emission.pairs[i],
            ParamSlot::MixingLogit(g) => p.mixing_logits[g],
            ParamSlot::FalsePositiveIntercept => p.false_positive.intercept,
            ParamSlot::FalsePositiveEffect(i) => p.false_positive.effects[i],
        }
    }

    /// Flat vector in schema order. Shared emission coefficients are read from group 0.
    pub fn pack<T: Scalar>(&self, p: &ModelParams<T>) -> Vec<T> {
        self.slots.iter().map(|&s| Self::get(p, s)).collect()
    }

    /// Writes `x` into `base`; shared coefficients are copied into every group.
    pub fn unpack_into<T: Scalar>(&self, x: &[T], base: &mut ModelParams<T>) -> Result<()> {
        if x.len() != self.len() {
            return Err(Error::Config(format!(
                "parameter vector has {} entries, schema expects {}",
                x.len(),
                self.len()
            )));
        }
        let groups = base.groups();
        for (&slot, &v) in self.slots.iter().zip(x) {
            match slot {
                ParamSlot::LifeIntercept(ev) => base.life[ev.index()].intercept = v,
                ParamSlot::LifeEffect(ev, i) => base.life[ev.index()].effects[i] = v,
                ParamSlot::EmissionMain { register, group } => match group {
                    Some(g) => base.emission.main[g][register] = v,
                    None => (0..groups).for_each(|g| base.emission.main[g][register] = v),
                },
                ParamSlot::EmissionEffect { register, effect, group } => match group {
                    Some(g) => base.emission.register_effects[g][register][effect] = v,
                    None => (0..groups)
                        .for_each(|g| base.emission.register_effects[g][register][effect] = v),
                },
                ParamSlot::EmissionPair(i) => base.emission.pairs[i] = v,
                ParamSlot::MixingLogit(g) => base.mixing_logits[g] = v,
                ParamSlot::FalsePositiveIntercept => base.false_positive.intercept = v,
                ParamSlot::FalsePositiveEffect(i) => base.false_positive.effects[i] = v,
            }
        }
        Ok(())
    }

    pub fn unpack<T: Scalar>(&self, model: &Model, x: &[T]) -> Result<ModelParams<T>> {
        let mut p = ModelParams::zeros(model);
        self.unpack_into(x, &mut p)?;
        Ok(p)
    }

    /// Flattens a gradient held in [`ModelParams`] shape; shared slots sum over groups.
    pub fn pack_gradient(&self, g: &ModelParams<f64>) -> Vec<f64> {
        let groups = g.groups();
        self.slots
            .iter()
            .map(|&slot| match slot {
                ParamSlot::EmissionMain { register, group: None } => {
                    (0..groups).map(|h| g.emission.main[h][register]).sum()
                }
                ParamSlot::EmissionEffect { register, effect, group: None } => {
                    (0..groups).map(|h| g.emission.register_effects[h][register][effect]).sum()
                }
                s => Self::get(g, s),
            })
            .collect()
    }

    /// Parameters whose values do not depend on the mixture group (used by label canonicalization tests).
    pub fn group_of(&self, i: usize) -> Option<usize> {
        match self.slots[i] {
            ParamSlot::EmissionMain { group, .. } | ParamSlot::EmissionEffect { group, .. } => group,
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariates::CovariateDimension;
    use crate::emission::{EmissionLayout, FalsePositiveSpec};
    use crate::state_space::StateSpaceConfig;
    use proptest::prelude::*;

    fn model() -> Model {
        let scheme = CovariateScheme::new(vec![
            CovariateDimension::new_static("sex", &["male", "female"], 0),
            CovariateDimension::years_since_entry("tis", &["new", "settled"], vec![1]),
        ])
        .unwrap();
        let emission = EmissionLayout::new(&["job_income", "social", "family_income"], vec![0, 1], true, 2)
            .with_group_specific(0);
        Model::new(
            StateSpaceConfig::sweden8(),
            scheme,
            emission,
            Default::default(),
            FalsePositiveSpec { patterns: vec![0b100] },
        )
        .unwrap()
    }

    #[test]
    fn schema_counts_and_names() {
        let m = model();
        let l = ParameterLayout::new(&m);
        // life 4 x 3, emission (2 + 1 + 1) x 3 + 3 pairs, mixing 1, fp 3
        assert_eq!(l.len(), 12 + 12 + 3 + 1 + 3);
        assert!(l.index_of("survival:(intercept)").is_some());
        assert!(l.index_of("survival:sex=female").is_some());
        assert!(l.index_of("emission:job_income[g2]").is_some());
        assert!(l.index_of("emission:job_income*sex=female[g1]").is_some());
        assert!(l.index_of("emission:social*family_income").is_some());
        assert!(l.index_of("mixture:logit[g1]").is_some());
        assert!(l.index_of("false_positive:tis=settled").is_some());
        let mut sorted = l.names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), l.len());
    }

    #[test]
    fn general3_has_no_deregistration_block() {
        let mut m = model();
        m.states = StateSpaceConfig::general3();
        let l = ParameterLayout::new(&m);
        assert!(l.names.iter().all(|n| !n.starts_with("deregistration")));
    }

    proptest! {
        #[test]
        fn pack_unpack_round_trip(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let m = model();
            let l = ParameterLayout::new(&m);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..l.len()).map(|_| rng.random_range(-5.0..5.0)).collect();
            let p = l.unpack(&m, &x).unwrap();
            prop_assert_eq!(l.pack(&p), x);
            // shared coefficients identical across groups
            prop_assert_eq!(p.emission.main[0][1], p.emission.main[1][1]);
            prop_assert_eq!(&p.emission.register_effects[0][2], &p.emission.register_effects[1][2]);
        }

        #[test]
        fn mixing_proportions_are_inverse_logit(rho in -30.0f64..30.0) {
            let pi = mixing_from_logits(&[rho]);
            prop_assert!((pi[0] - inv_logit(rho)).abs() < 1e-15);
            prop_assert!(pi[0] > 0.0 && pi[0] < 1.0);
            prop_assert!((pi[0] + pi[1] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn permuting_groups_swaps_blocks_and_proportions() {
        let m = model();
        let mut p = ModelParams::<f64>::zeros(&m);
        p.emission.main[0][0] = 1.5;
        p.emission.main[1][0] = -0.5;
        p.set_mixing_proportions(&[0.3, 0.7]);
        p.permute_groups(&[1, 0]);
        assert_eq!(p.emission.main[0][0], -0.5);
        assert_eq!(p.emission.main[1][0], 1.5);
        let pi = p.mixing_proportions();
        assert!((pi[0] - 0.7).abs() < 1e-14);
    }

    #[test]
    fn gradient_packing_sums_shared_blocks() {
        let m = model();
        let l = ParameterLayout::new(&m);
        let mut g = ModelParams::<f64>::zeros(&m);
        g.emission.main[0][1] = 1.0;
        g.emission.main[1][1] = 2.0;
        g.emission.main[0][0] = 5.0;
        g.emission.main[1][0] = 7.0;
        let flat = l.pack_gradient(&g);
        assert_eq!(flat[l.index_of("emission:social").unwrap()], 3.0);
        assert_eq!(flat[l.index_of("emission:job_income[g1]").unwrap()], 5.0);
        assert_eq!(flat[l.index_of("emission:job_income[g2]").unwrap()], 7.0);
    }
}
