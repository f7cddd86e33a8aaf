//! Individual register histories: wire records and the validated in-memory dataset.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::covariates::{BaseCovariates, Profile};
use crate::emission::ObservationCategory;
use crate::error::{Error, Result};
use crate::model::Model;

/// One person as stored on disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndividualRecord {
    pub id: String,
    pub entry_year: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub birth_year: Option<i32>,
    pub covariates: BTreeMap<String, String>,
    /// `(year, category code)` pairs, one per year from entry to the end of the study.
    pub observations: Vec<(i32, u32)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyWindow {
    pub start: i32,
    pub end: i32,
}

impl StudyWindow {
    pub fn new(start: i32, end: i32) -> Result<Self> {
        if end < start {
            return Err(Error::Config(format!("study window {start}..{end} is empty")));
        }
        Ok(Self { start, end })
    }

    pub fn years(&self) -> usize {
        (self.end - self.start + 1) as usize
    }

    pub fn year(&self, offset: usize) -> i32 {
        self.start + offset as i32
    }
}

/// A validated history: observations from the entry year on, with the dense
/// profile slot active in each of those years.
#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub entry: usize,
    pub slots: Vec<u32>,
    pub obs: Vec<ObservationCategory>,
    pub base: BaseCovariates,
}

impl Individual {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub window: StudyWindow,
    pub ids: Vec<String>,
    pub individuals: Vec<Individual>,
    /// Profile behind each dense slot.
    pub profiles: Vec<Profile>,
}

const REPORTED_IDS: usize = 20;

impl Dataset {
    pub fn len(&self) -> usize {
        self.individuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.individuals.is_empty()
    }

    /// Validates every record; on failure the error names the first offending ids and the total count.
    pub fn prepare(model: &Model, window: StudyWindow, records: &[IndividualRecord]) -> Result<Self> {
        let k = model.registers();
        let mut slot_of: HashMap<usize, u32> = HashMap::new();
        let mut profiles = Vec::new();
        let mut individuals = Vec::with_capacity(records.len());
        let mut failures: Vec<String> = Vec::new();
        let mut seen_ids: HashMap<&str, ()> = HashMap::new();
        for rec in records {
            let r = (|| -> Result<Individual> {
                if seen_ids.insert(rec.id.as_str(), ()).is_some() {
                    return Err(Error::Data("duplicate id".into()));
                }
                if rec.entry_year < window.start || rec.entry_year > window.end {
                    return Err(Error::Data(format!("entry year {} outside study window", rec.entry_year)));
                }
                let expected = (window.end - rec.entry_year + 1) as usize;
                if rec.observations.len() != expected {
                    return Err(Error::Data(format!(
                        "{} observation years, expected {expected} ({}..={})",
                        rec.observations.len(),
                        rec.entry_year,
                        window.end
                    )));
                }
                let base = model.scheme.resolve_base(
                    rec.covariates.iter().map(|(a, b)| (a.as_str(), b.as_str())),
                    rec.birth_year,
                )?;
                let mut obs = Vec::with_capacity(expected);
                let mut slots = Vec::with_capacity(expected);
                for (i, &(year, code)) in rec.observations.iter().enumerate() {
                    if year != rec.entry_year + i as i32 {
                        return Err(Error::Data(format!("observation years must run consecutively; found {year}")));
                    }
                    obs.push(ObservationCategory::decode(code, k)?);
                    let profile = model.scheme.profile_at(&base, rec.entry_year, year);
                    let code = model.scheme.profile_code(&profile);
                    let slot = *slot_of.entry(code).or_insert_with(|| {
                        profiles.push(profile);
                        (profiles.len() - 1) as u32
                    });
                    slots.push(slot);
                }
                Ok(Individual { entry: (rec.entry_year - window.start) as usize, slots, obs, base })
            })();
            match r {
                Ok(ind) => individuals.push(ind),
                Err(e) => failures.push(format!("{}: {}", rec.id, e.message())),
            }
        }
        if !failures.is_empty() {
            let shown: Vec<&str> = failures.iter().take(REPORTED_IDS).map(|s| s.as_str()).collect();
            return Err(Error::Data(format!(
                "{} invalid record(s); first: {}",
                failures.len(),
                shown.join("; ")
            )));
        }
        Ok(Self {
            window,
            ids: records.iter().map(|r| r.id.clone()).collect(),
            individuals,
            profiles,
        })
    }

    /// Records selected by index, in the given order, sharing the profile table.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            window: self.window,
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            individuals: indices.iter().map(|&i| self.individuals[i].clone()).collect(),
            profiles: self.profiles.clone(),
        }
    }

    /// Each record repeated `weights[i]` times.
    pub fn expand(&self, weights: &[u32]) -> Self {
        let idx: Vec<usize> = weights
            .iter()
            .enumerate()
            .flat_map(|(i, &w)| std::iter::repeat_n(i, w as usize))
            .collect();
        self.subset(&idx)
    }

    /// Number of individuals entered by each study year.
    pub fn entered_by_year(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.window.years()];
        for ind in &self.individuals {
            counts[ind.entry] += 1;
        }
        let mut acc = 0;
        counts
            .into_iter()
            .map(|c| {
                acc += c;
                acc
            })
            .collect()
    }
}

/// Infers the study window from the records: earliest entry to latest observed year.
pub fn infer_window(records: &[IndividualRecord]) -> Result<StudyWindow> {
    let start = records.iter().map(|r| r.entry_year).min();
    let end = records.iter().flat_map(|r| r.observations.iter().map(|o| o.0)).max();
    match (start, end) {
        (Some(s), Some(e)) => StudyWindow::new(s, e),
        _ => Err(Error::Data("no records".into())),
    }
}
