//! Categorical covariate schemes with one-hot coding against a declared baseline.
//!
//! Static dimensions (sex, country of birth) are fixed per individual. Derived
//! dimensions (years since entry, age) are recomputed for every calendar year
//! from the entry year and birth year, so a record only stores base attributes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cap on the number of distinct covariate profiles; tables are built per profile.
pub const MAX_PROFILES: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DimensionKind {
    Static,
    /// Category index = number of cutpoints `<= year - entry_year`.
    YearsSinceEntry { cutpoints: Vec<i32> },
    /// Category index = number of cutpoints `<= year - birth_year`.
    Age { cutpoints: Vec<i32> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateDimension {
    pub name: String,
    pub categories: Vec<String>,
    #[serde(default)]
    pub baseline: usize,
    #[serde(flatten)]
    pub kind: DimensionKind,
}

impl CovariateDimension {
    pub fn new_static(name: &str, categories: &[&str], baseline: usize) -> Self {
        Self {
            name: name.to_string(),
            categories: categories.iter().map(|c| c.to_string()).collect(),
            baseline,
            kind: DimensionKind::Static,
        }
    }

    pub fn years_since_entry(name: &str, categories: &[&str], cutpoints: Vec<i32>) -> Self {
        Self {
            name: name.to_string(),
            categories: categories.iter().map(|c| c.to_string()).collect(),
            baseline: 0,
            kind: DimensionKind::YearsSinceEntry { cutpoints },
        }
    }

    pub fn age(name: &str, categories: &[&str], cutpoints: Vec<i32>) -> Self {
        Self {
            name: name.to_string(),
            categories: categories.iter().map(|c| c.to_string()).collect(),
            baseline: 0,
            kind: DimensionKind::Age { cutpoints },
        }
    }

    pub fn category_index(&self, category: &str) -> Result<usize> {
        self.categories
            .iter()
            .position(|c| c == category)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown category `{category}` for covariate `{}`",
                    self.name
                ))
            })
    }

    fn is_static(&self) -> bool {
        matches!(self.kind, DimensionKind::Static)
    }
}

fn bucket(cutpoints: &[i32], value: i32) -> usize {
    cutpoints.iter().filter(|&&c| c <= value).count()
}

/// Per-individual attributes from which yearly profiles are derived.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BaseCovariates {
    /// Category index per dimension; entries for derived dimensions are ignored.
    pub categories: Vec<usize>,
    pub birth_year: Option<i32>,
}

/// A fully resolved covariate combination: one category index per dimension.
pub type Profile = Vec<usize>;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CovariateScheme {
    pub dimensions: Vec<CovariateDimension>,
}

impl CovariateScheme {
    pub fn new(dimensions: Vec<CovariateDimension>) -> Result<Self> {
        let scheme = Self { dimensions };
        scheme.validate()?;
        Ok(scheme)
    }

    /// Intercept-only scheme.
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, d) in self.dimensions.iter().enumerate() {
            if d.categories.is_empty() {
                return Err(Error::Config(format!("covariate `{}` has no categories", d.name)));
            }
            if d.baseline >= d.categories.len() {
                return Err(Error::Config(format!("covariate `{}`: baseline out of range", d.name)));
            }
            if self.dimensions[..i].iter().any(|o| o.name == d.name) {
                return Err(Error::Config(format!("duplicate covariate `{}`", d.name)));
            }
            match &d.kind {
                DimensionKind::Static => {}
                DimensionKind::YearsSinceEntry { cutpoints } | DimensionKind::Age { cutpoints } => {
                    if cutpoints.len() + 1 != d.categories.len() {
                        return Err(Error::Config(format!(
                            "covariate `{}`: {} cutpoints need {} categories",
                            d.name,
                            cutpoints.len(),
                            cutpoints.len() + 1
                        )));
                    }
                    if cutpoints.windows(2).any(|w| w[0] >= w[1]) {
                        return Err(Error::Config(format!(
                            "covariate `{}`: cutpoints must be strictly increasing",
                            d.name
                        )));
                    }
                }
            }
        }
        if self.profile_count() > MAX_PROFILES {
            return Err(Error::Config(format!(
                "{} covariate profiles exceed the cap of {MAX_PROFILES}",
                self.profile_count()
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dimensions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dimensions.is_empty()
    }

    pub fn dimension_index(&self, name: &str) -> Result<usize> {
        self.dimensions
            .iter()
            .position(|d| d.name == name)
            .ok_or_else(|| Error::Config(format!("unknown covariate dimension `{name}`")))
    }

    pub fn needs_birth_year(&self) -> bool {
        self.dimensions
            .iter()
            .any(|d| matches!(d.kind, DimensionKind::Age { .. }))
    }

    pub fn profile_count(&self) -> usize {
        self.dimensions
            .iter()
            .map(|d| d.categories.len())
            .product()
    }

    /// Mixed-radix code of a profile, first dimension least significant.
    pub fn profile_code(&self, profile: &[usize]) -> usize {
        let mut code = 0;
        for (d, &c) in self.dimensions.iter().zip(profile).rev() {
            code = code * d.categories.len() + c;
        }
        code
    }

    pub fn profile_from_code(&self, mut code: usize) -> Profile {
        self.dimensions
            .iter()
            .map(|d| {
                let c = code % d.categories.len();
                code /= d.categories.len();
                c
            })
            .collect()
    }

    pub fn baseline_profile(&self) -> Profile {
        self.dimensions.iter().map(|d| d.baseline).collect()
    }

    /// Resolve `(dimension, category)` name pairs into a profile. Every dimension must be named.
    pub fn resolve(&self, named: &[(&str, &str)]) -> Result<Profile> {
        let mut out = vec![usize::MAX; self.len()];
        for (dim, cat) in named {
            let d = self.dimension_index(dim)?;
            out[d] = self.dimensions[d].category_index(cat)?;
        }
        if let Some(d) = out.iter().position(|&c| c == usize::MAX) {
            return Err(Error::Config(format!(
                "covariate profile is missing dimension `{}`",
                self.dimensions[d].name
            )));
        }
        Ok(out)
    }

    /// Resolve the static part of a record's covariates from a name map.
    pub fn resolve_base<'a, I>(&self, named: I, birth_year: Option<i32>) -> Result<BaseCovariates>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut categories = vec![usize::MAX; self.len()];
        for (dim, cat) in named {
            let d = self.dimension_index(dim)?;
            categories[d] = self.dimensions[d].category_index(cat)?;
        }
        for (d, dim) in self.dimensions.iter().enumerate() {
            if dim.is_static() && categories[d] == usize::MAX {
                return Err(Error::Config(format!("missing static covariate `{}`", dim.name)));
            }
            if !dim.is_static() {
                categories[d] = 0;
            }
        }
        if self.needs_birth_year() && birth_year.is_none() {
            return Err(Error::Config("age covariate requires a birth year".into()));
        }
        Ok(BaseCovariates { categories, birth_year })
    }

    /// Profile of an individual in a given calendar year.
    pub fn profile_at(&self, base: &BaseCovariates, entry_year: i32, year: i32) -> Profile {
        self.dimensions
            .iter()
            .enumerate()
            .map(|(d, dim)| match &dim.kind {
                DimensionKind::Static => base.categories[d],
                DimensionKind::YearsSinceEntry { cutpoints } => bucket(cutpoints, year - entry_year),
                DimensionKind::Age { cutpoints } => {
                    bucket(cutpoints, year - base.birth_year.unwrap_or(year))
                }
            })
            .collect()
    }

    /// Number of non-baseline effect coefficients over the selected dimensions.
    pub fn effect_count(&self, dims: &[usize]) -> usize {
        dims.iter()
            .map(|&d| self.dimensions[d].categories.len() - 1)
            .sum()
    }

    /// Offsets (within an effect block over `dims`) of the coefficients active for `profile`.
    pub fn active_effects(&self, dims: &[usize], profile: &[usize]) -> Vec<usize> {
        let mut out = Vec::new();
        let mut offset = 0;
        for &d in dims {
            let dim = &self.dimensions[d];
            let c = profile[d];
            if c != dim.baseline {
                let rank = if c < dim.baseline { c } else { c - 1 };
                out.push(offset + rank);
            }
            offset += dim.categories.len() - 1;
        }
        out
    }

    /// Labels `dim=category` for each coefficient in an effect block over `dims`.
    pub fn effect_labels(&self, dims: &[usize]) -> Vec<String> {
        dims.iter()
            .flat_map(|&d| {
                let dim = &self.dimensions[d];
                dim.categories
                    .iter()
                    .enumerate()
                    .filter(move |(c, _)| *c != dim.baseline)
                    .map(move |(_, cat)| format!("{}={}", dim.name, cat))
            })
            .collect()
    }

    pub fn all_dims(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scheme() -> CovariateScheme {
        CovariateScheme::new(vec![
            CovariateDimension::new_static("sex", &["male", "female"], 0),
            CovariateDimension::new_static("region", &["a", "b", "c"], 1),
            CovariateDimension::years_since_entry("tis", &["entry", "1-5", "5+"], vec![1, 6]),
            CovariateDimension::age("age", &["18-35", "36-60", "60+"], vec![36, 61]),
        ])
        .unwrap()
    }

    #[test]
    fn profile_codes_round_trip() {
        let s = scheme();
        assert_eq!(s.profile_count(), 54);
        for code in 0..s.profile_count() {
            assert_eq!(s.profile_code(&s.profile_from_code(code)), code);
        }
    }

    #[test]
    fn derived_dimensions_follow_calendar_year() {
        let s = scheme();
        let base = s
            .resolve_base([("sex", "female"), ("region", "c")], Some(1970))
            .unwrap();
        assert_eq!(s.profile_at(&base, 2003, 2003), vec![1, 2, 0, 0]);
        assert_eq!(s.profile_at(&base, 2003, 2004), vec![1, 2, 1, 0]);
        assert_eq!(s.profile_at(&base, 2003, 2009), vec![1, 2, 2, 1]);
        assert_eq!(s.profile_at(&base, 2003, 2031), vec![1, 2, 2, 2]);
    }

    #[test]
    fn active_effects_skip_baseline() {
        let s = scheme();
        let dims = s.all_dims();
        assert_eq!(s.effect_count(&dims), 1 + 2 + 2 + 2);
        // region baseline is "b" (index 1): "a" -> rank 0, "c" -> rank 1
        assert_eq!(s.active_effects(&dims, &[0, 1, 0, 0]), Vec::<usize>::new());
        assert_eq!(s.active_effects(&dims, &[1, 0, 2, 1]), vec![0, 1, 4, 5]);
        assert_eq!(s.active_effects(&dims, &[0, 2, 1, 2]), vec![2, 3, 6]);
        let labels = s.effect_labels(&dims);
        assert_eq!(labels[1], "region=a");
        assert_eq!(labels[2], "region=c");
    }

    #[test]
    fn unknown_category_is_named() {
        let s = scheme();
        let err = s.resolve(&[("sex", "other")]).unwrap_err().to_string();
        assert!(err.contains("other"), "{err}");
        let err = s
            .resolve(&[("sex", "male"), ("region", "a"), ("tis", "entry")])
            .unwrap_err()
            .to_string();
        assert!(err.contains("age"), "{err}");
    }

    #[test]
    fn rejects_bad_cutpoints() {
        let bad = CovariateScheme::new(vec![CovariateDimension::age("age", &["a", "b"], vec![3, 5])]);
        assert!(bad.is_err());
    }
}
