//! TOML run configuration: one file drives simulate, fit, blb, decode and report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::blb::{BlbOptions, BlbPlan, DerivedQuantity, SubsetMode};
use crate::covariates::{CovariateDimension, CovariateScheme};
use crate::data::StudyWindow;
use crate::decoder::PresenceRule;
use crate::emission::{EmissionLayout, EventRecording, FalsePositiveSpec};
use crate::error::{Error, Result};
use crate::estimator::FitOptions;
use crate::model::Model;
use crate::params::ModelParams;
use crate::simulator::SimulationConfig;
use crate::state_space::{StateRole, StateSpaceConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// `general3` or `sweden8`; ignored when `states` is given inline.
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub states: Option<StateSpaceConfig>,
    #[serde(default)]
    pub dead_emits_false_positive: Option<bool>,
    pub registers: Vec<String>,
    #[serde(default = "one")]
    pub groups: usize,
    /// Registers whose coefficients differ between mixture groups.
    #[serde(default)]
    pub group_specific: Vec<String>,
    /// Covariates interacting with every register.
    #[serde(default)]
    pub interactions: Vec<String>,
    #[serde(default = "yes")]
    pub pairs: bool,
    #[serde(default)]
    pub recording: EventRecording,
    /// Patterns (as register-name lists) that abroad or dead individuals may emit.
    #[serde(default)]
    pub false_positive: Vec<Vec<String>>,
    /// Roles counted as present; defaults to present, returned and present-death-recorded.
    #[serde(default)]
    pub presence: Option<Vec<StateRole>>,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub entries: Vec<usize>,
    #[serde(default)]
    pub frequencies: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub age_at_entry: Option<(i32, i32)>,
    /// True parameter values by name; unnamed parameters are zero.
    #[serde(default)]
    pub truth: BTreeMap<String, f64>,
    /// Mixing proportions; overrides any `mixture:` logits in `truth`.
    #[serde(default)]
    pub mixing: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    /// Start from the simulation truth instead of data-driven values.
    #[serde(default)]
    pub from_truth: bool,
    #[serde(default)]
    pub values: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivedKind {
    Population,
    Overcoverage,
    RegisterMarginals,
    GroupStability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlbSpec {
    pub s: usize,
    pub r: usize,
    #[serde(default)]
    pub mode: SubsetMode,
    /// Subset size for without-replacement mode (or give `gamma`).
    #[serde(default)]
    pub b: Option<usize>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub cold_start: bool,
    #[serde(default = "default_derived")]
    pub derived: Vec<DerivedKind>,
}

fn default_derived() -> Vec<DerivedKind> {
    vec![DerivedKind::Population, DerivedKind::Overcoverage, DerivedKind::RegisterMarginals]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: default_out() }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub model: ModelSpec,
    #[serde(default)]
    pub covariates: Vec<CovariateDimension>,
    /// Study window; inferred from the data when absent (required to simulate).
    #[serde(default)]
    pub window: Option<StudyWindow>,
    #[serde(default)]
    pub simulation: Option<SimulationSpec>,
    #[serde(default)]
    pub fit: FitOptions,
    #[serde(default)]
    pub init: InitSpec,
    #[serde(default)]
    pub blb: Option<BlbSpec>,
    #[serde(default)]
    pub output: OutputSpec,
}

impl RunConfig {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("{source}: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        // relative output directories are anchored at the config file
        if cfg.output.dir.is_relative() {
            if let Some(parent) = path.parent() {
                cfg.output.dir = parent.join(&cfg.output.dir);
            }
        }
        Ok(cfg)
    }

    pub fn model(&self) -> Result<Model> {
        let m = &self.model;
        let mut states = match (&m.states, &m.preset) {
            (Some(s), _) => s.clone(),
            (None, Some(p)) => StateSpaceConfig::preset(p)?,
            (None, None) => return Err(Error::Config("[model] needs `preset` or inline `states`".into())),
        };
        if let Some(d) = m.dead_emits_false_positive {
            states.dead_emits_false_positive = d;
        }
        let scheme = CovariateScheme::new(self.covariates.clone())?;
        let names: Vec<&str> = m.registers.iter().map(String::as_str).collect();
        let dims = m
            .interactions
            .iter()
            .map(|d| scheme.dimension_index(d))
            .collect::<Result<Vec<_>>>()?;
        let mut layout = EmissionLayout::new(&names, dims, m.pairs, m.groups);
        for r in &m.group_specific {
            let k = layout.register_index(r)?;
            layout = layout.with_group_specific(k);
        }
        let patterns = m
            .false_positive
            .iter()
            .map(|regs| {
                regs.iter()
                    .try_fold(0u32, |mask, r| Ok::<_, Error>(mask | 1 << layout.register_index(r)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Model::new(states, scheme, layout, m.recording, FalsePositiveSpec { patterns })
    }

    pub fn presence(&self) -> PresenceRule {
        self.model.presence.clone().map(|roles| PresenceRule { roles }).unwrap_or_default()
    }

    fn simulation_spec(&self) -> Result<&SimulationSpec> {
        self.simulation
            .as_ref()
            .ok_or_else(|| Error::Config("config has no [simulation] section".into()))
    }

    pub fn simulation(&self) -> Result<SimulationConfig> {
        let spec = self.simulation_spec()?;
        let window = self.window.ok_or_else(|| Error::Config("simulation needs [window]".into()))?;
        Ok(SimulationConfig {
            window,
            entries: spec.entries.clone(),
            frequencies: spec.frequencies.clone(),
            age_at_entry: spec.age_at_entry.unwrap_or((18, 70)),
            seed: self.seed,
        })
    }

    pub fn truth(&self, model: &Model) -> Result<ModelParams<f64>> {
        let spec = self.simulation_spec()?;
        let mut p = named_values(model, &vec![0.0; model.layout().len()], &spec.truth, "simulation.truth")?;
        if let Some(pi) = &spec.mixing {
            if pi.len() != model.groups() || pi.iter().any(|v| !(*v > 0.0)) || (pi.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "simulation.mixing must be {} positive proportions summing to one",
                    model.groups()
                )));
            }
            p.set_mixing_proportions(pi);
        }
        Ok(p)
    }

    /// Starting vector: data-driven defaults, optionally the truth, then explicit overrides.
    pub fn initial_values(&self, model: &Model, defaults: Vec<f64>) -> Result<Vec<f64>> {
        let layout = model.layout();
        let base = if self.init.from_truth { layout.pack(&self.truth(model)?) } else { defaults };
        Ok(layout.pack(&named_values(model, &base, &self.init.values, "init.values")?))
    }

    pub fn blb_plan(&self, n: usize) -> Result<(BlbPlan, BlbOptions)> {
        let spec = self.blb.as_ref().ok_or_else(|| Error::Config("config has no [blb] section".into()))?;
        let plan = match (spec.mode, spec.gamma, spec.b) {
            (SubsetMode::DisjointPartition, None, None) => BlbPlan::partition(n, spec.s, spec.r, self.seed)?,
            (SubsetMode::DisjointPartition, _, _) => {
                return Err(Error::Config("disjoint-partition subsets take no `b` or `gamma`".into()))
            }
            (SubsetMode::WithoutReplacement, Some(g), None) => BlbPlan::with_gamma(n, spec.s, g, spec.r, self.seed)?,
            (SubsetMode::WithoutReplacement, None, Some(b)) => {
                let p = BlbPlan { n, s: spec.s, b, r: spec.r, gamma: None, mode: SubsetMode::WithoutReplacement, seed: self.seed };
                p.validate()?;
                p
            }
            (SubsetMode::WithoutReplacement, _, _) => {
                return Err(Error::Config("without-replacement subsets need exactly one of `b` or `gamma`".into()))
            }
        };
        Ok((plan, BlbOptions { cold_start: spec.cold_start, unit_weights: false }))
    }

    pub fn derived(&self, rtb: &[f64]) -> Vec<DerivedQuantity> {
        let rule = self.presence();
        self.blb
            .as_ref()
            .map(|b| {
                b.derived
                    .iter()
                    .map(|k| match k {
                        DerivedKind::Population => DerivedQuantity::Population { rule: rule.clone() },
                        DerivedKind::Overcoverage => DerivedQuantity::Overcoverage { rule: rule.clone(), rtb: rtb.to_vec() },
                        DerivedKind::RegisterMarginals => DerivedQuantity::RegisterMarginals,
                        DerivedKind::GroupStability => DerivedQuantity::GroupStability,
                    })
                    .collect()
            })
            .unwrap_or_default()
    }
}

/// `base` with the named entries replaced; unknown names are configuration errors.
fn named_values(model: &Model, base: &[f64], values: &BTreeMap<String, f64>, section: &str) -> Result<ModelParams<f64>> {
    let layout = model.layout();
    let mut x = base.to_vec();
    for (name, &v) in values {
        let i = layout
            .index_of(name)
            .ok_or_else(|| Error::Config(format!("{section}: unknown parameter `{name}`")))?;
        if !v.is_finite() {
            return Err(Error::Config(format!("{section}: `{name}` must be finite")));
        }
        x[i] = v;
    }
    layout.unpack(model, &x)
}
