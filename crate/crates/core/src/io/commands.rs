//! The pipeline stages behind the command-line tool. Each stage reads and
//! writes files in the configured output directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::blb::{run_blb, BlbResult, CellLog};
use crate::data::{infer_window, Dataset, IndividualRecord, StudyWindow};
use crate::decoder::{self, DecodedTrajectory, PopulationSeries};
use crate::error::{Error, Result};
use crate::estimator::{fit_mle, initial_parameters, FitResult};
use crate::io::config::RunConfig;
use crate::io::records::{read_json, read_records, read_weights, write_csv, write_json, write_jsonl, write_records, FileHeader};
use crate::model::Model;
use crate::simulator::{simulate_population, TrueHistory};
use crate::SCHEMA_VERSION;

pub const DATA_FILE: &str = "data.jsonl";
pub const TRUTH_FILE: &str = "truth.jsonl";
pub const TRUTH_PARAMS_FILE: &str = "truth_params.json";
pub const RTB_FILE: &str = "rtb.csv";
pub const FIT_FILE: &str = "fit.json";
pub const BLB_LOG_FILE: &str = "blb_cells.jsonl";
pub const BLB_FILE: &str = "blb.json";
pub const TRAJECTORY_FILE: &str = "trajectories.jsonl";
pub const POPULATION_FILE: &str = "population.csv";
pub const PLOT_FILE: &str = "plot_data.json";

/// Runs `f` on a pool of `workers` threads (the global pool when `None`).
pub fn with_workers<R: Send>(workers: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match workers {
        None => Ok(f()),
        Some(0) => Err(Error::Config("worker count must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| Error::Config(format!("cannot start {n} workers: {e}"))),
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterFile {
    pub schema_version: String,
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub records: usize,
    pub person_years: usize,
    pub entries: Vec<usize>,
    pub data: PathBuf,
}

/// Writes records, true histories, true parameters and the registered-population series.
pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<SimulateSummary> {
    let model = cfg.model()?;
    let sim_cfg = cfg.simulation()?;
    let truth = cfg.truth(&model)?;
    let sim = simulate_population(&model, &truth, &sim_cfg)?;
    let data_path = out.join(DATA_FILE);
    write_records(&data_path, &model.emission.registers, &sim.records)?;
    write_jsonl::<TrueHistory>(&out.join(TRUTH_FILE), &FileHeader::new("truth", &model.emission.registers), &sim.truth.individuals)?;
    let layout = model.layout();
    write_json(
        &out.join(TRUTH_PARAMS_FILE),
        &ParameterFile { schema_version: SCHEMA_VERSION.into(), names: layout.names.clone(), values: layout.pack(&truth) },
    )?;
    let data = Dataset::prepare(&model, sim_cfg.window, &sim.records)?;
    write_rtb(&out.join(RTB_FILE), sim_cfg.window, &decoder::register_counts(&data))?;
    Ok(SimulateSummary {
        records: sim.records.len(),
        person_years: sim.records.iter().map(|r| r.observations.len()).sum(),
        entries: sim_cfg.entries,
        data: data_path,
    })
}

fn write_rtb(path: &Path, window: StudyWindow, counts: &[usize]) -> Result<()> {
    let rows: Vec<Vec<String>> =
        counts.iter().enumerate().map(|(t, c)| vec![window.year(t).to_string(), c.to_string()]).collect();
    write_csv(path, &["Year", "Registered"], &rows)
}

/// Registered-population series: from `rtb.csv` next to the data when present,
/// otherwise implied by the event records.
fn registered_series(data_path: &Path, data: &Dataset) -> Result<Vec<f64>> {
    let path = data_path.with_file_name(RTB_FILE);
    if !path.exists() {
        return Ok(decoder::register_counts(data).into_iter().map(|c| c as f64).collect());
    }
    let mut rdr = csv::Reader::from_path(&path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut by_year = std::collections::BTreeMap::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let parsed = (row.get(0).and_then(|y| y.trim().parse::<i32>().ok()), row.get(1).and_then(|v| v.trim().parse::<f64>().ok()));
        let (Some(y), Some(v)) = parsed else {
            return Err(Error::Data(format!("{}: rows must be `Year,Registered`", path.display())));
        };
        by_year.insert(y, v);
    }
    (0..data.window.years())
        .map(|t| {
            let y = data.window.year(t);
            by_year.get(&y).copied().ok_or_else(|| Error::Data(format!("{}: no entry for {y}", path.display())))
        })
        .collect()
}

pub struct LoadedData {
    pub model: Model,
    pub records: Vec<IndividualRecord>,
    pub data: Dataset,
}

pub fn load_data(cfg: &RunConfig, path: &Path) -> Result<LoadedData> {
    let model = cfg.model()?;
    let records = read_records(path, &model.emission.registers)?;
    let window = match cfg.window {
        Some(w) => w,
        None => infer_window(&records)?,
    };
    let data = Dataset::prepare(&model, window, &records)?;
    Ok(LoadedData { model, records, data })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitFile {
    pub schema_version: String,
    pub records: usize,
    pub window: StudyWindow,
    pub weighted: bool,
    pub fit: FitResult,
}

pub fn cmd_fit(cfg: &RunConfig, data_path: &Path, weights: Option<&Path>, out: &Path) -> Result<FitFile> {
    let LoadedData { model, data, .. } = load_data(cfg, data_path)?;
    let w = weights.map(|p| read_weights(p, &data.ids)).transpose()?;
    let init = cfg.initial_values(&model, initial_parameters(&model, &data))?;
    let fit = fit_mle(&model, &data, w.as_deref(), &init, &cfg.fit)?;
    let file = FitFile { schema_version: SCHEMA_VERSION.into(), records: data.len(), window: data.window, weighted: w.is_some(), fit };
    write_json(&out.join(FIT_FILE), &file)?;
    Ok(file)
}

pub fn cmd_blb(cfg: &RunConfig, data_path: &Path, out: &Path, resume: bool) -> Result<BlbResult> {
    let LoadedData { model, data, .. } = load_data(cfg, data_path)?;
    let (plan, options) = cfg.blb_plan(data.len())?;
    let rtb = registered_series(data_path, &data)?;
    let derived = cfg.derived(&rtb);
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let log = out.join(BLB_LOG_FILE);
    let result = run_blb(&model, &data, &plan, &cfg.fit, &options, &derived, Some(CellLog { path: &log, resume }))?;
    write_json(&out.join(BLB_FILE), &result)?;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLine {
    pub id: String,
    pub entry_year: i32,
    pub group: usize,
    pub states: Vec<String>,
}

pub fn cmd_decode(cfg: &RunConfig, data_path: &Path, fit_path: &Path, out: &Path) -> Result<PopulationSeries> {
    let LoadedData { model, data, .. } = load_data(cfg, data_path)?;
    let fit: FitFile = read_json(fit_path)?;
    if fit.fit.names != model.layout().names {
        return Err(Error::Config(format!("{} was fitted with a different model", fit_path.display())));
    }
    let params = fit.fit.params(&model)?;
    let traj = decoder::decode_all(&crate::likelihood::Likelihood::new(&model, &data), &params)?;
    let lines: Vec<TrajectoryLine> = traj
        .iter()
        .map(|t: &DecodedTrajectory| TrajectoryLine {
            id: data.ids[t.index].clone(),
            entry_year: data.window.year(t.entry),
            group: t.group + 1,
            states: t.states.iter().map(|&s| model.states.states[s].label.clone()).collect(),
        })
        .collect();
    write_jsonl(&out.join(TRAJECTORY_FILE), &FileHeader::new("trajectories", &model.emission.registers), &lines)?;
    let series = PopulationSeries::from_trajectories(&model, data.window, &traj, &cfg.presence());
    let rtb = registered_series(data_path, &data)?;
    let rows: Vec<Vec<String>> = (0..series.years.len())
        .map(|t| {
            let oc = decoder::overcoverage(series.present[t] as f64, rtb[t]).map(num).unwrap_or_default();
            vec![
                series.years[t].to_string(),
                series.entered[t].to_string(),
                series.present[t].to_string(),
                series.abroad_known[t].to_string(),
                series.abroad_unknown[t].to_string(),
                series.dead[t].to_string(),
                series.other[t].to_string(),
                num(rtb[t]),
                oc,
            ]
        })
        .collect();
    write_csv(
        &out.join(POPULATION_FILE),
        &["Year", "Entered", "Present", "AbroadKnown", "AbroadUnknown", "Dead", "Other", "Registered", "Overcoverage"],
        &rows,
    )?;
    Ok(series)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    pub label: Vec<String>,
    pub estimate: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub schema_version: String,
    pub series: std::collections::BTreeMap<String, PlotSeries>,
}

/// Report tables written by [`cmd_report`], by file name.
pub const REPORT_TABLES: [(&str, &str); 4] = [
    ("population", "report_population.csv"),
    ("overcoverage", "report_overcoverage.csv"),
    ("marginal", "report_marginals.csv"),
    ("", "report_parameters.csv"),
];

/// Interval tables from a BLB result: one per derived-quantity family, plus
/// all model parameters, each in `Year/Name, Estimate, Lower, Upper` layout.
pub fn cmd_report(blb_path: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let result: BlbResult = read_json(blb_path)?;
    let mut written = Vec::new();
    let mut plot = PlotData { schema_version: SCHEMA_VERSION.into(), series: Default::default() };
    for (prefix, file) in REPORT_TABLES {
        let rows: Vec<(String, &crate::blb::AggregateQuantity)> = result
            .aggregate
            .iter()
            .filter_map(|q| match q.name.split_once(':') {
                Some((p, rest)) if !prefix.is_empty() && p == prefix => Some((rest.to_string(), q)),
                _ if prefix.is_empty() && !["population", "overcoverage", "marginal"].iter().any(|p| q.name.starts_with(&format!("{p}:"))) => {
                    Some((q.name.clone(), q))
                }
                _ => None,
            })
            .collect();
        if rows.is_empty() {
            continue;
        }
        let key = if prefix.is_empty() { "Parameter" } else if prefix == "marginal" { "Register" } else { "Year" };
        let table: Vec<Vec<String>> = rows
            .iter()
            .map(|(k, q)| vec![k.clone(), num(q.estimate), num(q.lower), num(q.upper), num(q.standard_error)])
            .collect();
        let path = out.join(file);
        write_csv(&path, &[key, "Estimate", "Lower", "Upper", "SE"], &table)?;
        written.push(path);
        let name = if prefix.is_empty() { "parameters" } else { prefix };
        plot.series.insert(
            name.to_string(),
            PlotSeries {
                label: rows.iter().map(|(k, _)| k.clone()).collect(),
                estimate: rows.iter().map(|(_, q)| q.estimate).collect(),
                lower: rows.iter().map(|(_, q)| q.lower).collect(),
                upper: rows.iter().map(|(_, q)| q.upper).collect(),
            },
        );
    }
    let plot_path = out.join(PLOT_FILE);
    write_json(&plot_path, &plot)?;
    written.push(plot_path);
    Ok(written)
}

/// simulate → fit → blb → decode → report, all under `out`.
pub fn cmd_pipeline(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let summary = cmd_simulate(cfg, out)?;
    cmd_fit(cfg, &summary.data, None, out)?;
    let mut files = vec![summary.data.clone(), out.join(TRUTH_FILE), out.join(TRUTH_PARAMS_FILE), out.join(RTB_FILE), out.join(FIT_FILE)];
    if cfg.blb.is_some() {
        cmd_blb(cfg, &summary.data, out, false)?;
        files.extend([out.join(BLB_LOG_FILE), out.join(BLB_FILE)]);
    }
    cmd_decode(cfg, &summary.data, &out.join(FIT_FILE), out)?;
    files.extend([out.join(TRAJECTORY_FILE), out.join(POPULATION_FILE)]);
    if cfg.blb.is_some() {
        files.extend(cmd_report(&out.join(BLB_FILE), out)?);
    }
    Ok(files)
}
