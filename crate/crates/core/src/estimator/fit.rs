//! Quasi-Newton maximum likelihood with multi-start and curvature standard errors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::decoder::marginal_register_probability;
use crate::emission::{EventFlag, ObservationCategory};
use crate::error::{Error, Result};
use crate::estimator::lbfgs::{minimize, LbfgsOptions, Termination};
use crate::estimator::numdiff::{hessian_from_gradient, numerical_gradient, standard_errors_from_hessian};
use crate::likelihood::Likelihood;
use crate::model::Model;
use crate::params::{ModelParams, ParamSlot, ParameterLayout};
use crate::scalar::logit;
use crate::seeds::{rng_for, stream};
use crate::state_space::LifeEvent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// Forward–backward.
    Analytic,
    /// Central differences of the log-likelihood.
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Max-norm tolerance on the gradient of the per-record mean log-likelihood.
    pub grad_tol: f64,
    pub rel_tol: f64,
    pub memory: usize,
    /// Starts when the model has more than one mixture group.
    pub starts: usize,
    /// Half-width of the uniform jitter added to group-specific coefficients on extra starts.
    pub jitter: f64,
    pub seed: u64,
    pub gradient: GradientMode,
    pub standard_errors: bool,
    /// Relative step of the Hessian differences.
    pub hessian_step: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_tol: 1e-5,
            rel_tol: 1e-9,
            memory: 10,
            starts: 3,
            jitter: 1.0,
            seed: 0,
            gradient: GradientMode::Analytic,
            standard_errors: true,
            hessian_step: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub estimate: Vec<f64>,
    pub loglik: f64,
    pub initial_loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub termination: String,
    pub gradient_max_norm: f64,
    /// Start that produced the estimate (0 is the supplied initial value).
    pub start: usize,
    pub standard_errors: Option<Vec<Option<f64>>>,
    /// Row-major inverse observed information, when positive definite.
    pub covariance: Option<Vec<Vec<f64>>>,
}

impl FitResult {
    pub fn params(&self, model: &Model) -> Result<ModelParams<f64>> {
        model.layout().unpack(model, &self.estimate)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.estimate[i])
    }

    pub fn standard_error(&self, name: &str) -> Option<f64> {
        let i = self.names.iter().position(|n| n == name)?;
        self.standard_errors.as_ref()?[i]
    }

    pub fn covariance_matrix(&self) -> Option<nalgebra::DMatrix<f64>> {
        let c = self.covariance.as_ref()?;
        let n = c.len();
        Some(nalgebra::DMatrix::from_fn(n, n, |i, j| c[i][j]))
    }
}

struct Objective<'a> {
    lik: Likelihood<'a>,
    layout: ParameterLayout,
    weights: Option<&'a [f64]>,
    total_weight: f64,
    mode: GradientMode,
}

impl Objective<'_> {
    fn params(&self, x: &[f64]) -> ModelParams<f64> {
        self.layout.unpack(self.lik.model, x).expect("schema length")
    }

    fn loglik(&self, x: &[f64]) -> f64 {
        self.lik.total(&self.params(x), self.weights)
    }

    /// Total log-likelihood and its gradient.
    fn loglik_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        match self.mode {
            GradientMode::Analytic => {
                let (ll, g) = self.lik.loglik_and_gradient(&self.params(x), self.weights);
                (ll, self.layout.pack_gradient(&g))
            }
            GradientMode::Numeric => {
                let ll = self.loglik(x);
                let g = numerical_gradient(|y| self.loglik(y), x, 1e-6)
                    .unwrap_or_else(|_| vec![f64::NAN; x.len()]);
                (ll, g)
            }
        }
    }

    /// Negative mean log-likelihood for the minimizer.
    fn minimand(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let (ll, g) = self.loglik_and_gradient(x);
        let w = self.total_weight;
        (-ll / w, g.into_iter().map(|v| -v / w).collect())
    }
}

/// Maximizes the (weighted) log-likelihood from `init`; with several mixture
/// groups, extra jittered starts are tried and the best is kept.
pub fn fit_mle(
    model: &Model,
    data: &Dataset,
    weights: Option<&[f64]>,
    init: &[f64],
    options: &FitOptions,
) -> Result<FitResult> {
    let layout = model.layout();
    if init.len() != layout.len() {
        return Err(Error::Config(format!(
            "initial vector has {} entries, schema expects {}",
            init.len(),
            layout.len()
        )));
    }
    if init.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("initial parameters must be finite".into()));
    }
    if let Some(w) = weights {
        if w.len() != data.len() || w.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Data("weights must be non-negative, one per record".into()));
        }
    }
    let total_weight = weights.map_or(data.len() as f64, |w| w.iter().sum());
    if !(total_weight > 0.0) {
        return Err(Error::Data("no records with positive weight".into()));
    }
    let obj = Objective { lik: Likelihood::new(model, data), layout, weights, total_weight, mode: options.gradient };
    let initial_loglik = obj.loglik(init);
    if !initial_loglik.is_finite() {
        let bad = obj.lik.impossible_records(&obj.params(init));
        let ids: Vec<&str> = bad.iter().take(20).map(|&i| data.ids[i].as_str()).collect();
        return Err(Error::Numeric(format!(
            "log-likelihood not finite at the initial values; {} impossible record(s): {}",
            bad.len(),
            ids.join(", ")
        )));
    }

    let lb = LbfgsOptions {
        max_iter: options.max_iter,
        grad_tol: options.grad_tol,
        rel_tol: options.rel_tol,
        memory: options.memory,
    };
    let starts = if model.groups() > 1 { options.starts.max(1) } else { 1 };
    let mut best: Option<(usize, crate::estimator::LbfgsResult)> = None;
    for start in 0..starts {
        let x0 = if start == 0 { init.to_vec() } else { jitter(&obj.layout, init, options, start) };
        let Some(r) = minimize(|x| obj.minimand(x), &x0, &lb) else {
            continue;
        };
        if best.as_ref().is_none_or(|(_, b)| r.f < b.f) {
            best = Some((start, r));
        }
    }
    let (start, r) = best.ok_or_else(|| Error::Numeric("no start produced a finite log-likelihood".into()))?;

    let canonical = canonicalize(model, &obj.params(&r.x));
    let estimate = obj.layout.pack(&canonical);
    let (loglik, grad) = obj.loglik_and_gradient(&estimate);
    let gradient_max_norm = grad.iter().fold(0.0f64, |m, v| m.max(v.abs())) / total_weight;
    let (standard_errors, covariance) = if options.standard_errors {
        let h = hessian_from_gradient(|x| obj.loglik_and_gradient(x).1, &estimate, options.hessian_step)?;
        let c = standard_errors_from_hessian(&h);
        let cov = c
            .covariance
            .map(|m| (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect());
        (Some(c.standard_errors), cov)
    } else {
        (None, None)
    };
    Ok(FitResult {
        names: obj.layout.names.clone(),
        estimate,
        loglik,
        initial_loglik,
        converged: r.converged(),
        iterations: r.iterations,
        termination: match r.termination {
            Termination::Gradient => "gradient",
            Termination::RelativeChange => "relative_change",
            Termination::MaxIterations => "max_iterations",
            Termination::LineSearchFailed => "line_search_failed",
        }
        .into(),
        gradient_max_norm,
        start,
        standard_errors,
        covariance,
    })
}

fn jitter(layout: &ParameterLayout, init: &[f64], options: &FitOptions, start: usize) -> Vec<f64> {
    let mut rng = rng_for(options.seed, &[stream::MULTISTART, start as u64]);
    init.iter()
        .enumerate()
        .map(|(i, &v)| {
            let grouped = layout.group_of(i).is_some() || matches!(layout.slots[i], ParamSlot::MixingLogit(_));
            if grouped {
                v + options.jitter * rng.random_range(-1.0..1.0)
            } else {
                v
            }
        })
        .collect()
}

/// Orders mixture groups by decreasing observation probability of the first
/// group-specific register at the baseline profile (by decreasing π if none).
pub fn canonicalize(model: &Model, params: &ModelParams<f64>) -> ModelParams<f64> {
    let g = model.groups();
    if g == 1 {
        return params.clone();
    }
    let baseline = model.scheme.baseline_profile();
    let pi = params.mixing_proportions();
    let key: Vec<f64> = match model.emission.first_group_specific() {
        Some(k) => (0..g)
            .map(|h| marginal_register_probability(&params.emission, &model.emission, &model.scheme, h, &baseline, k))
            .collect(),
        None => pi,
    };
    let mut order: Vec<usize> = (0..g).collect();
    order.sort_by(|&a, &b| key[b].total_cmp(&key[a]));
    let mut out = params.clone();
    out.permute_groups(&order);
    out
}

/// Starting values from crude event rates and register frequencies.
///
/// Group-specific registers start spread apart (highest in group 1): identical
/// groups are a stationary point of the mixture likelihood.
pub fn initial_parameters(model: &Model, data: &Dataset) -> Vec<f64> {
    let k = model.registers();
    let (mut years, mut deaths, mut emig, mut reimm, mut plain) = (0usize, 0usize, 0usize, 0usize, 0usize);
    let mut reg = vec![0usize; k];
    for ind in &data.individuals {
        years += ind.len() - 1;
        for c in &ind.obs {
            match c.flag {
                EventFlag::Death => deaths += 1,
                EventFlag::Emigration => emig += 1,
                EventFlag::ReImmigration | EventFlag::None => {
                    if c.flag == EventFlag::ReImmigration {
                        reimm += 1;
                    }
                    if *c != ObservationCategory::NONE || c.flag == EventFlag::ReImmigration {
                        plain += 1;
                        for (r, n) in reg.iter_mut().enumerate() {
                            *n += (c.pattern >> r & 1) as usize;
                        }
                    }
                }
            }
        }
    }
    let py = years.max(1) as f64;
    let uses_lambda = model.states.events_used().contains(&LifeEvent::DeRegistration);
    let s = (1.0 - deaths as f64 / py).clamp(0.5, 0.999);
    let lambda: f64 = 0.5;
    let e = if emig > 0 {
        let recorded = if uses_lambda { lambda } else { 1.0 };
        (emig as f64 / py / recorded).clamp(0.002, 0.5)
    } else {
        0.05
    };
    let r = if reimm > 0 { (reimm as f64 / emig.max(1) as f64).clamp(0.01, 0.9) } else { 0.1 };

    let mut p = ModelParams::<f64>::zeros(model);
    p.life[LifeEvent::Survival.index()].intercept = logit(s);
    p.life[LifeEvent::Emigration.index()].intercept = logit(e);
    p.life[LifeEvent::ReImmigration.index()].intercept = logit(r);
    p.life[LifeEvent::DeRegistration.index()].intercept = logit(lambda);
    let groups = model.groups();
    for kk in 0..k {
        let f = if plain > 0 { reg[kk] as f64 / plain as f64 } else { 0.5 };
        let a = logit(f.clamp(0.02, 0.98));
        for g in 0..groups {
            let spread = if model.emission.group_specific[kk] && groups > 1 {
                1.0 - 2.0 * g as f64 / (groups - 1) as f64
            } else {
                0.0
            };
            p.emission.main[g][kk] = a + spread;
        }
    }
    p.false_positive.intercept = logit(0.05);
    model.layout().pack(&p)
}
