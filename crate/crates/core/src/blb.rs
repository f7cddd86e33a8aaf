//! Bag of little bootstraps: small subsets, each refitted under multinomial
//! resample weights that sum to the full sample size.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::decoder::{self, mixture_marginal, DecodedTrajectory, PresenceRule};
use crate::error::{Error, Result};
use crate::estimator::{fit_mle, initial_parameters, FitOptions};
use crate::likelihood::Likelihood;
use crate::model::Model;
use crate::params::ModelParams;
use crate::seeds::{rng_for, stream};
use crate::SCHEMA_VERSION;

/// Share of failed resamples beyond which a subset aborts the run.
pub const MAX_FAILURE_SHARE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SubsetMode {
    #[default]
    DisjointPartition,
    WithoutReplacement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlbPlan {
    pub n: usize,
    pub s: usize,
    /// Nominal subset size; partition blocks differ from it by at most one.
    pub b: usize,
    pub r: usize,
    pub gamma: Option<f64>,
    pub mode: SubsetMode,
    pub seed: u64,
}

impl BlbPlan {
    /// `s` disjoint blocks of size ⌊n/s⌋ or ⌈n/s⌉.
    pub fn partition(n: usize, s: usize, r: usize, seed: u64) -> Result<Self> {
        if s == 0 {
            return Err(Error::Plan("subset count must be positive".into()));
        }
        let plan = Self { n, s, b: n / s, r, gamma: None, mode: SubsetMode::DisjointPartition, seed };
        plan.validate()?;
        Ok(plan)
    }

    /// `s` independent subsets of size ⌈n^γ⌉ drawn without replacement.
    pub fn with_gamma(n: usize, s: usize, gamma: f64, r: usize, seed: u64) -> Result<Self> {
        if !(0.5..=1.0).contains(&gamma) {
            return Err(Error::Plan(format!("gamma {gamma} outside [0.5, 1]")));
        }
        let b = ((n as f64).powf(gamma).ceil() as usize).min(n);
        let plan = Self { n, s, b, r, gamma: Some(gamma), mode: SubsetMode::WithoutReplacement, seed };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.s == 0 || self.r == 0 || self.b == 0 {
            return Err(Error::Plan(format!("s={}, b={}, r={} must all be positive", self.s, self.b, self.r)));
        }
        if self.b > self.n {
            return Err(Error::Plan(format!("subset size {} exceeds n={}", self.b, self.n)));
        }
        if self.mode == SubsetMode::DisjointPartition && self.s * self.b > self.n {
            return Err(Error::Plan(format!("{} disjoint subsets of size {} exceed n={}", self.s, self.b, self.n)));
        }
        if let Some(g) = self.gamma {
            if !(0.5..=1.0).contains(&g) {
                return Err(Error::Plan(format!("gamma {g} outside [0.5, 1]")));
            }
        }
        Ok(())
    }
}

/// Index lists of the `s` subsets.
pub fn make_subsets(plan: &BlbPlan) -> Result<Vec<Vec<usize>>> {
    plan.validate()?;
    match plan.mode {
        SubsetMode::DisjointPartition => {
            let mut idx: Vec<usize> = (0..plan.n).collect();
            idx.shuffle(&mut rng_for(plan.seed, &[stream::SUBSETS]));
            let (base, extra) = (plan.n / plan.s, plan.n % plan.s);
            let mut out = Vec::with_capacity(plan.s);
            let mut start = 0;
            for j in 0..plan.s {
                let len = base + usize::from(j < extra);
                let mut block = idx[start..start + len].to_vec();
                block.sort_unstable();
                out.push(block);
                start += len;
            }
            Ok(out)
        }
        SubsetMode::WithoutReplacement => Ok((0..plan.s)
            .map(|j| {
                let mut rng = rng_for(plan.seed, &[stream::SUBSETS, j as u64]);
                let mut v = rand::seq::index::sample(&mut rng, plan.n, plan.b).into_vec();
                v.sort_unstable();
                v
            })
            .collect()),
    }
}

/// One Multinomial(n; uniform over b cells) draw, by conditional binomials.
pub fn resample_weights<R: Rng + ?Sized>(b: usize, n: u64, rng: &mut R) -> Vec<u32> {
    let mut left = n;
    let mut out = Vec::with_capacity(b);
    for i in 0..b {
        let cells = (b - i) as f64;
        let w = if i + 1 == b || left == 0 {
            left
        } else {
            Binomial::new(left, 1.0 / cells).expect("valid binomial").sample(rng)
        };
        left -= w;
        out.push(w as u32);
    }
    out
}

/// Quantities evaluated on every resample fit, in addition to the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DerivedQuantity {
    /// Resample-weighted count of decoded present individuals per year.
    Population { rule: PresenceRule },
    /// Overcoverage percentage per year against a registered-population series.
    Overcoverage { rule: PresenceRule, rtb: Vec<f64> },
    /// Mixture-averaged register marginals at the baseline profile.
    RegisterMarginals,
    /// Share of subset individuals whose decoded group agrees across ≥ 90% of resamples.
    GroupStability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct BlbOptions {
    /// Refit every resample from the generic starting values instead of the subset fit.
    pub cold_start: bool,
    /// Replace resample weights by ones (degenerate diagnostic plan).
    pub unit_weights: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlbCell {
    pub subset: usize,
    pub resample: usize,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub loglik: f64,
    #[serde(default)]
    pub converged: bool,
    #[serde(default)]
    pub iterations: usize,
    /// Parameters followed by derived quantities, in `BlbResult::names` order.
    #[serde(default)]
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSummary {
    pub subset: usize,
    pub size: usize,
    pub successes: usize,
    pub failures: usize,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub group_stability: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateQuantity {
    pub name: String,
    pub estimate: f64,
    pub standard_error: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlbResult {
    pub schema_version: String,
    pub plan: BlbPlan,
    pub names: Vec<String>,
    pub cells: Vec<BlbCell>,
    pub subsets: Vec<SubsetSummary>,
    pub aggregate: Vec<AggregateQuantity>,
    pub group_stability: Option<f64>,
}

impl BlbResult {
    pub fn quantity(&self, name: &str) -> Option<&AggregateQuantity> {
        self.aggregate.iter().find(|q| q.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LogHeader {
    schema_version: String,
    plan: BlbPlan,
    names: Vec<String>,
    options: BlbOptions,
}

fn derived_names(model: &Model, data: &Dataset, derived: &[DerivedQuantity]) -> Vec<String> {
    let years: Vec<i32> = (0..data.window.years()).map(|t| data.window.year(t)).collect();
    let mut out = Vec::new();
    for d in derived {
        match d {
            DerivedQuantity::Population { .. } => out.extend(years.iter().map(|y| format!("population:{y}"))),
            DerivedQuantity::Overcoverage { .. } => out.extend(years.iter().map(|y| format!("overcoverage:{y}"))),
            DerivedQuantity::RegisterMarginals => {
                out.extend(model.emission.registers.iter().map(|r| format!("marginal:{r}")))
            }
            DerivedQuantity::GroupStability => {}
        }
    }
    out
}

fn weighted_presence(model: &Model, years: usize, traj: &[DecodedTrajectory], w: &[f64], rule: &PresenceRule) -> Vec<f64> {
    let mut out = vec![0.0; years];
    for tr in traj {
        for (k, &s) in tr.states.iter().enumerate() {
            if rule.counts(model.states.role(s)) {
                out[tr.entry + k] += w[tr.index];
            }
        }
    }
    out
}

fn evaluate_derived(
    model: &Model,
    data: &Dataset,
    params: &ModelParams<f64>,
    weights: &[f64],
    derived: &[DerivedQuantity],
) -> Result<(Vec<f64>, Option<Vec<u8>>)> {
    let needs_decode = derived.iter().any(|d| !matches!(d, DerivedQuantity::RegisterMarginals));
    let traj = if needs_decode { decoder::decode_all(&Likelihood::new(model, data), params)? } else { Vec::new() };
    let years = data.window.years();
    let mut values = Vec::new();
    let mut groups = None;
    for d in derived {
        match d {
            DerivedQuantity::Population { rule } => values.extend(weighted_presence(model, years, &traj, weights, rule)),
            DerivedQuantity::Overcoverage { rule, rtb } => {
                if rtb.len() != years {
                    return Err(Error::Config(format!("register series has {} years, data {}", rtb.len(), years)));
                }
                for (p, &r) in weighted_presence(model, years, &traj, weights, rule).into_iter().zip(rtb) {
                    values.push(decoder::overcoverage(p, r)?);
                }
            }
            DerivedQuantity::RegisterMarginals => {
                let pi = params.mixing_proportions();
                let base = model.scheme.baseline_profile();
                for k in 0..model.registers() {
                    let m: Vec<f64> = (0..model.groups())
                        .map(|g| {
                            decoder::marginal_register_probability(&params.emission, &model.emission, &model.scheme, g, &base, k)
                        })
                        .collect();
                    values.push(mixture_marginal(&pi, &m));
                }
            }
            DerivedQuantity::GroupStability => groups = Some(traj.iter().map(|t| t.group as u8).collect()),
        }
    }
    Ok((values, groups))
}

/// Type-7 sample quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Order-independent mean: sums the sorted values.
fn exchangeable_mean(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s.iter().sum::<f64>() / s.len() as f64
}

fn summarize_subset(subset: usize, size: usize, cells: &[&BlbCell], width: usize) -> SubsetSummary {
    let ok: Vec<&&BlbCell> = cells.iter().filter(|c| c.ok).collect();
    let mut s = SubsetSummary {
        subset,
        size,
        successes: ok.len(),
        failures: cells.len() - ok.len(),
        mean: vec![f64::NAN; width],
        sd: vec![f64::NAN; width],
        lower: vec![f64::NAN; width],
        upper: vec![f64::NAN; width],
        group_stability: None,
    };
    if ok.is_empty() {
        return s;
    }
    for j in 0..width {
        let mut v: Vec<f64> = ok.iter().map(|c| c.values[j]).collect();
        v.sort_by(f64::total_cmp);
        let m = v.iter().sum::<f64>() / v.len() as f64;
        s.mean[j] = m;
        s.sd[j] = if v.len() > 1 {
            (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
        } else {
            0.0
        };
        s.lower[j] = quantile(&v, 0.025);
        s.upper[j] = quantile(&v, 0.975);
    }
    let assignments: Vec<Vec<usize>> = ok
        .iter()
        .filter_map(|c| c.groups.as_ref().map(|g| g.iter().map(|&x| x as usize).collect()))
        .collect();
    if !assignments.is_empty() {
        // rows are resamples; stability is judged per individual
        let b = assignments[0].len();
        let per_ind: Vec<Vec<usize>> = (0..b).map(|i| assignments.iter().map(|a| a[i]).collect()).collect();
        s.group_stability = Some(decoder::group_stability(&per_ind, 0.9));
    }
    s
}

/// Averages per-subset summaries; independent of subset order.
pub fn aggregate(names: &[String], subsets: &[SubsetSummary]) -> Vec<AggregateQuantity> {
    let usable: Vec<&SubsetSummary> = subsets.iter().filter(|s| s.successes > 0).collect();
    names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let avg = |f: &dyn Fn(&SubsetSummary) -> f64| {
                exchangeable_mean(&usable.iter().map(|s| f(s)).collect::<Vec<_>>())
            };
            AggregateQuantity {
                name: name.clone(),
                estimate: avg(&|s| s.mean[j]),
                standard_error: avg(&|s| s.sd[j]),
                lower: avg(&|s| s.lower[j]),
                upper: avg(&|s| s.upper[j]),
            }
        })
        .collect()
}

/// Rebuilds summaries and the aggregate from logged cells.
pub fn assemble(plan: &BlbPlan, names: Vec<String>, subsets: &[Vec<usize>], mut cells: Vec<BlbCell>) -> BlbResult {
    cells.sort_by_key(|c| (c.subset, c.resample));
    let summaries: Vec<SubsetSummary> = subsets
        .iter()
        .enumerate()
        .map(|(j, idx)| {
            let mine: Vec<&BlbCell> = cells.iter().filter(|c| c.subset == j).collect();
            summarize_subset(j, idx.len(), &mine, names.len())
        })
        .collect();
    let aggregate = aggregate(&names, &summaries);
    let stab: Vec<f64> = summaries.iter().filter_map(|s| s.group_stability).collect();
    BlbResult {
        schema_version: SCHEMA_VERSION.into(),
        plan: plan.clone(),
        names,
        cells,
        group_stability: (!stab.is_empty()).then(|| exchangeable_mean(&stab)),
        subsets: summaries,
        aggregate,
    }
}

/// Where per-resample cells are streamed, and whether earlier cells are reused.
#[derive(Debug, Clone, Copy)]
pub struct CellLog<'a> {
    pub path: &'a Path,
    pub resume: bool,
}

fn read_log(path: &Path, header: &LogHeader) -> Result<Vec<BlbCell>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut lines = BufReader::new(file).lines();
    let Some(first) = lines.next() else { return Ok(Vec::new()) };
    let first = first.map_err(|e| Error::io(path, e))?;
    let logged: LogHeader = serde_json::from_str(&first)
        .map_err(|e| Error::Data(format!("{}: unreadable log header: {e}", path.display())))?;
    crate::check_schema_version(&logged.schema_version, &path.display().to_string())?;
    if logged != *header {
        return Err(Error::Plan(format!(
            "{} was written for a different plan or model; remove it or run without resume",
            path.display()
        )));
    }
    let mut cells = Vec::new();
    for line in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        // a torn final line from an interrupted run is dropped
        match serde_json::from_str::<BlbCell>(&line) {
            Ok(c) => cells.push(c),
            Err(_) => break,
        }
    }
    Ok(cells)
}

/// Serializes cells in (subset, resample) order as they complete.
struct OrderedWriter {
    file: Option<File>,
    path: String,
    next: usize,
    pending: BTreeMap<usize, String>,
    error: Option<Error>,
}

impl OrderedWriter {
    fn push(&mut self, slot: usize, line: String) {
        self.pending.insert(slot, line);
        while let Some(line) = self.pending.remove(&self.next) {
            if let (Some(f), None) = (self.file.as_mut(), &self.error) {
                if let Err(e) = writeln!(f, "{line}").and_then(|_| f.flush()) {
                    self.error = Some(Error::io(&self.path, e));
                }
            }
            self.next += 1;
        }
    }
}

/// Fits every (subset, resample) cell, evaluates the derived quantities and
/// aggregates. Cells already present in a resumed log are not refitted.
pub fn run_blb(
    model: &Model,
    data: &Dataset,
    plan: &BlbPlan,
    fit: &FitOptions,
    options: &BlbOptions,
    derived: &[DerivedQuantity],
    log: Option<CellLog>,
) -> Result<BlbResult> {
    plan.validate()?;
    if plan.n != data.len() {
        return Err(Error::Plan(format!("plan is for n={}, data has {} records", plan.n, data.len())));
    }
    let subsets = make_subsets(plan)?;
    let mut names = model.layout().names;
    names.extend(derived_names(model, data, derived));
    let header = LogHeader { schema_version: SCHEMA_VERSION.into(), plan: plan.clone(), names: names.clone(), options: options.clone() };

    let mut done: HashMap<(usize, usize), BlbCell> = HashMap::new();
    let mut writer = OrderedWriter { file: None, path: String::new(), next: 0, pending: BTreeMap::new(), error: None };
    if let Some(log) = log {
        let previous = if log.resume { read_log(log.path, &header)? } else { Vec::new() };
        // rewrite the reusable prefix, dropping any torn tail
        let mut f = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(log.path)
            .map_err(|e| Error::io(log.path, e))?;
        let mut text = serde_json::to_string(&header).expect("header serializes") + "\n";
        for c in &previous {
            text += &(serde_json::to_string(c).expect("cell serializes") + "\n");
        }
        f.write_all(text.as_bytes()).map_err(|e| Error::io(log.path, e))?;
        writer.file = Some(f);
        writer.path = log.path.display().to_string();
        done = previous.into_iter().map(|c| ((c.subset, c.resample), c)).collect();
    }

    let resample_fit = FitOptions { standard_errors: false, starts: if options.cold_start { fit.starts } else { 1 }, ..fit.clone() };
    let subset_fit = FitOptions { standard_errors: false, ..fit.clone() };
    let writer = Mutex::new(writer);
    let mut cells = Vec::with_capacity(plan.s * plan.r);
    for (j, idx) in subsets.iter().enumerate() {
        let sub = data.subset(idx);
        let todo: Vec<usize> = (0..plan.r).filter(|r| !done.contains_key(&(j, *r))).collect();
        let generic = initial_parameters(model, &sub);
        let start = if todo.is_empty() || options.cold_start {
            generic
        } else {
            fit_mle(model, &sub, None, &generic, &subset_fit)
                .map_err(|e| Error::Numeric(format!("subset {j}: initial fit failed: {}", e.message())))?
                .estimate
        };
        {
            let mut w = writer.lock().expect("writer lock");
            // slots restart per subset; the previous subset has fully flushed
            w.next = 0;
        }
        let order: Vec<usize> = todo.clone();
        let fresh: Vec<BlbCell> = order
            .par_iter()
            .enumerate()
            .map(|(slot, &r)| {
                let w: Vec<f64> = if options.unit_weights {
                    vec![1.0; sub.len()]
                } else {
                    let mut rng = rng_for(plan.seed, &[stream::RESAMPLES, j as u64, r as u64]);
                    resample_weights(sub.len(), plan.n as u64, &mut rng).into_iter().map(f64::from).collect()
                };
                let cell = fit_mle(model, &sub, Some(&w), &start, &resample_fit)
                    .and_then(|f| {
                        let p = f.params(model)?;
                        let (extra, groups) = evaluate_derived(model, &sub, &p, &w, derived)?;
                        let mut values = f.estimate.clone();
                        values.extend(extra);
                        if values.iter().any(|v| !v.is_finite()) {
                            return Err(Error::Numeric("non-finite estimate".into()));
                        }
                        Ok(BlbCell {
                            subset: j,
                            resample: r,
                            ok: true,
                            error: None,
                            loglik: f.loglik,
                            converged: f.converged,
                            iterations: f.iterations,
                            values,
                            groups,
                        })
                    })
                    .unwrap_or_else(|e| BlbCell {
                        subset: j,
                        resample: r,
                        ok: false,
                        error: Some(e.to_string()),
                        loglik: f64::NAN,
                        converged: false,
                        iterations: 0,
                        values: Vec::new(),
                        groups: None,
                    });
                let line = serde_json::to_string(&cell).expect("cell serializes");
                writer.lock().expect("writer lock").push(slot, line);
                cell
            })
            .collect();
        let mut mine: Vec<BlbCell> = fresh;
        mine.extend((0..plan.r).filter_map(|r| done.remove(&(j, r))));
        mine.sort_by_key(|c| c.resample);
        let failures = mine.iter().filter(|c| !c.ok).count();
        if failures as f64 > MAX_FAILURE_SHARE * plan.r as f64 {
            let first = mine.iter().find_map(|c| c.error.clone()).unwrap_or_default();
            return Err(Error::Numeric(format!(
                "subset {j}: {failures} of {} resample fits failed (first: {first})",
                plan.r
            )));
        }
        cells.extend(mine);
    }
    if let Some(e) = writer.into_inner().expect("writer lock").error {
        return Err(e);
    }
    Ok(assemble(plan, names, &subsets, cells))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn partition_covers_all_indices() {
        let plan = BlbPlan::partition(100, 10, 1, 3).unwrap();
        let subsets = make_subsets(&plan).unwrap();
        assert_eq!(subsets.len(), 10);
        let mut all: Vec<usize> = subsets.iter().flatten().copied().collect();
        assert!(subsets.iter().all(|s| s.len() == 10));
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(subsets, make_subsets(&plan).unwrap());
    }

    #[test]
    fn national_scale_block_sizes() {
        let plan = BlbPlan::partition(721_854, 20, 1, 0).unwrap();
        let subsets = make_subsets(&plan).unwrap();
        assert!(subsets.iter().all(|s| s.len() == 36_092 || s.len() == 36_093));
        assert_eq!(subsets.iter().map(Vec::len).sum::<usize>(), 721_854);
    }

    #[test]
    fn plan_validation() {
        assert!(BlbPlan { n: 10, s: 3, b: 4, r: 1, gamma: None, mode: SubsetMode::DisjointPartition, seed: 0 }
            .validate()
            .is_err());
        assert!(BlbPlan { n: 10, s: 3, b: 11, r: 1, gamma: None, mode: SubsetMode::WithoutReplacement, seed: 0 }
            .validate()
            .is_err());
        assert!(BlbPlan::with_gamma(1000, 3, 0.4, 1, 0).is_err());
        let p = BlbPlan::with_gamma(1000, 3, 0.7, 1, 0).unwrap();
        assert_eq!(p.b, 126);
        let s = make_subsets(&p).unwrap();
        assert!(s.iter().all(|v| v.len() == 126 && v.windows(2).all(|w| w[0] < w[1])));
    }

    #[test]
    fn weights_sum_to_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(resample_weights(1, 500, &mut rng), vec![500]);
        for b in [2, 7, 100] {
            let w = resample_weights(b, 1000, &mut rng);
            assert_eq!(w.len(), b);
            assert_eq!(w.iter().map(|&x| x as u64).sum::<u64>(), 1000);
        }
    }

    #[test]
    fn full_size_weights_are_poisson_like() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = resample_weights(100_000, 100_000, &mut rng);
        let mean = w.iter().map(|&x| x as f64).sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / w.len() as f64;
        assert!((mean - 1.0).abs() < 0.02);
        // Poisson(1): variance 1, P(0) = e^-1
        assert!((var - 1.0).abs() < 0.03, "{var}");
        let zeros = w.iter().filter(|&&x| x == 0).count() as f64 / w.len() as f64;
        assert!((zeros - (-1.0f64).exp()).abs() < 0.01);
    }

    #[test]
    fn expected_weight_is_n_over_b() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (b, n, reps) = (50usize, 1000u64, 2000);
        let mut acc = vec![0.0; b];
        for _ in 0..reps {
            for (a, w) in acc.iter_mut().zip(resample_weights(b, n, &mut rng)) {
                *a += w as f64;
            }
        }
        let target = n as f64 / b as f64;
        let overall = acc.iter().sum::<f64>() / (b * reps) as f64;
        assert!((overall - target).abs() < 1e-12);
        // per cell: sd of the mean is sqrt(20·0.98/2000) ≈ 0.1, i.e. 0.5% of 20
        for a in acc {
            assert!((a / reps as f64 - target).abs() / target < 0.03);
        }
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 5.0);
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert!((quantile(&v, 0.025) - 1.1).abs() < 1e-12);
        assert_eq!(quantile(&[7.0], 0.975), 7.0);
    }

    fn summary(j: usize, m: f64) -> SubsetSummary {
        SubsetSummary {
            subset: j,
            size: 1,
            successes: 1,
            failures: 0,
            mean: vec![m],
            sd: vec![m / 10.0],
            lower: vec![m - 1.0],
            upper: vec![m + 1.0],
            group_stability: None,
        }
    }

    #[test]
    fn aggregation_is_exchangeable() {
        let names = vec!["x".to_string()];
        let a: Vec<SubsetSummary> = [0.1, 1e8, 0.3, -1e8, 0.7].iter().enumerate().map(|(j, &m)| summary(j, m)).collect();
        let mut b = a.clone();
        b.reverse();
        b.swap(0, 2);
        assert_eq!(aggregate(&names, &a), aggregate(&names, &b));
        let single = aggregate(&names, &a[..1]);
        assert_eq!(single[0].estimate, 0.1);
        assert_eq!(single[0].lower, -0.9);
    }

    proptest::proptest! {
        #[test]
        fn multinomial_total(b in 1usize..200, n in 0u64..5000, seed in 0u64..1000) {
            let w = resample_weights(b, n, &mut ChaCha8Rng::seed_from_u64(seed));
            proptest::prop_assert_eq!(w.len(), b);
            proptest::prop_assert_eq!(w.iter().map(|&x| x as u64).sum::<u64>(), n);
        }
    }
}
