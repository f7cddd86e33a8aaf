//! Record files: JSON lines (one individual per line, after a header line) or
//! long CSV (`id,year,category` plus covariate columns).

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::IndividualRecord;
use crate::error::{Error, Result};
use crate::{check_schema_version, SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHeader {
    pub schema_version: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub registers: Vec<String>,
}

impl FileHeader {
    pub fn new(kind: &str, registers: &[String]) -> Self {
        Self { schema_version: SCHEMA_VERSION.into(), kind: kind.into(), registers: registers.to_vec() }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))
}

/// Header line followed by one JSON document per item.
pub fn write_jsonl<T: Serialize>(path: &Path, header: &FileHeader, items: &[T]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", serde_json::to_string(header).expect("header serializes")).map_err(io)?;
    for item in items {
        writeln!(w, "{}", serde_json::to_string(item).expect("item serializes")).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads a JSON-lines file of `kind`; the header line is optional for records
/// produced elsewhere, but when present its schema version must be known.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<(Option<FileHeader>, Vec<T>)> {
    let mut header = None;
    let mut items = Vec::new();
    for (n, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if header.is_none() && items.is_empty() && line.contains("\"schema_version\"") {
            let h: FileHeader = serde_json::from_str(&line)
                .map_err(|e| Error::Data(format!("{}:{}: bad header: {e}", path.display(), n + 1)))?;
            check_schema_version(&h.schema_version, &path.display().to_string())?;
            if h.kind != kind {
                return Err(Error::Data(format!("{} holds `{}`, expected `{kind}`", path.display(), h.kind)));
            }
            header = Some(h);
            continue;
        }
        items.push(serde_json::from_str(&line).map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1)))?);
    }
    Ok((header, items))
}

pub fn write_records(path: &Path, registers: &[String], records: &[IndividualRecord]) -> Result<()> {
    write_jsonl(path, &FileHeader::new("records", registers), records)
}

/// Reads records by extension (`.csv` long format, otherwise JSON lines) and
/// checks any declared register list against the model's.
pub fn read_records(path: &Path, registers: &[String]) -> Result<Vec<IndividualRecord>> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        return read_long_csv(path);
    }
    let (header, records) = read_jsonl::<IndividualRecord>(path, "records")?;
    if let Some(h) = header {
        if !h.registers.is_empty() && h.registers != registers {
            return Err(Error::Config(format!(
                "{} was written for registers [{}], the model has [{}]",
                path.display(),
                h.registers.join(", "),
                registers.join(", ")
            )));
        }
    }
    Ok(records)
}

/// Long format: one row per person-year. Columns other than `id`, `year`,
/// `category` and `birth_year` are covariates and must be constant per person.
pub fn read_long_csv(path: &Path) -> Result<Vec<IndividualRecord>> {
    let bad = |msg: String| Error::Data(format!("{}: {msg}", path.display()));
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(id_col), Some(year_col), Some(cat_col)) = (col("id"), col("year"), col("category")) else {
        return Err(bad("long CSV needs `id`, `year` and `category` columns".into()));
    };
    let birth_col = col("birth_year");
    let covariate_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| ![Some(id_col), Some(year_col), Some(cat_col), birth_col].contains(&Some(*i)))
        .map(|(i, h)| (i, h.to_string()))
        .collect();
    let mut order: Vec<String> = Vec::new();
    let mut by_id: HashMap<String, IndividualRecord> = HashMap::new();
    for (n, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        let line = n + 2;
        let id = row[id_col].to_string();
        let parse = |c: usize, what: &str| {
            row[c].trim().parse::<i64>().map_err(|_| bad(format!("line {line}: record {id}: bad {what} `{}`", &row[c])))
        };
        let year = parse(year_col, "year")? as i32;
        let cat = parse(cat_col, "category")?;
        let cat = u32::try_from(cat).map_err(|_| bad(format!("line {line}: record {id}: negative category")))?;
        let birth = birth_col.map(|c| parse(c, "birth_year")).transpose()?.map(|b| b as i32);
        let covs: BTreeMap<String, String> = covariate_cols.iter().map(|(c, h)| (h.clone(), row[*c].to_string())).collect();
        let rec = by_id.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            IndividualRecord { id: id.clone(), entry_year: year, birth_year: birth, covariates: covs.clone(), observations: Vec::new() }
        });
        if rec.covariates != covs || rec.birth_year != birth {
            return Err(bad(format!("line {line}: record {id}: covariates change between rows")));
        }
        rec.entry_year = rec.entry_year.min(year);
        rec.observations.push((year, cat));
    }
    Ok(order
        .into_iter()
        .map(|id| {
            let mut r = by_id.remove(&id).expect("id recorded");
            r.observations.sort_by_key(|o| o.0);
            r
        })
        .collect())
}

/// Resample weights as `id,weight` rows; every record needs exactly one row.
pub fn read_weights(path: &Path, ids: &[String]) -> Result<Vec<f64>> {
    let bad = |msg: String| Error::Data(format!("{}: {msg}", path.display()));
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut w = vec![f64::NAN; ids.len()];
    let mut rdr = csv::Reader::from_reader(open(path)?);
    for (n, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        if row.len() < 2 {
            return Err(bad(format!("line {}: expected `id,weight`", n + 2)));
        }
        let i = *index.get(&row[0]).ok_or_else(|| bad(format!("line {}: unknown record {}", n + 2, &row[0])))?;
        let v: f64 = row[1].trim().parse().map_err(|_| bad(format!("line {}: bad weight `{}`", n + 2, &row[1])))?;
        if !(v >= 0.0 && v.is_finite()) {
            return Err(bad(format!("line {}: weight of {} must be non-negative", n + 2, &row[0])));
        }
        if !w[i].is_nan() {
            return Err(bad(format!("record {} weighted twice", &row[0])));
        }
        w[i] = v;
    }
    let missing: Vec<&str> = ids.iter().zip(&w).filter(|(_, v)| v.is_nan()).map(|(id, _)| id.as_str()).collect();
    if !missing.is_empty() {
        return Err(bad(format!(
            "{} record(s) without a weight: {}",
            missing.len(),
            missing.iter().take(20).copied().collect::<Vec<_>>().join(", ")
        )));
    }
    Ok(w)
}

/// Pretty JSON document; the value must carry its own `schema_version`.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    writeln!(w, "{text}").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let v: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let version = v
        .get("schema_version")
        .and_then(|s| s.as_str())
        .ok_or_else(|| Error::Data(format!("{}: missing schema_version", path.display())))?;
    check_schema_version(version, &path.display().to_string())?;
    serde_json::from_value(v).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// CSV table from a header row and numeric rows.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str) -> IndividualRecord {
        IndividualRecord {
            id: id.into(),
            entry_year: 2001,
            birth_year: None,
            covariates: [("sex".to_string(), "female".to_string())].into(),
            observations: vec![(2001, 1), (2002, 0)],
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        let regs = vec!["a".to_string()];
        write_records(&p, &regs, &[rec("x"), rec("y")]).unwrap();
        let back = read_records(&p, &regs).unwrap();
        assert_eq!(back, vec![rec("x"), rec("y")]);
        assert!(matches!(read_records(&p, &["b".to_string()]), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_major_version_refused() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        std::fs::write(&p, "{\"schema_version\":\"2.0\",\"kind\":\"records\"}\n").unwrap();
        assert!(read_records(&p, &[]).unwrap_err().to_string().contains("schema version"));
        let q = dir.path().join("f.json");
        std::fs::write(&q, "{\"schema_version\":\"3.1\"}").unwrap();
        assert!(read_json::<serde_json::Value>(&q).is_err());
        std::fs::write(&q, "{\"schema_version\":\"1.4\"}").unwrap();
        assert!(read_json::<serde_json::Value>(&q).is_ok());
    }

    #[test]
    fn long_csv_is_grouped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "id,year,category,sex\ny,2002,0,female\nx,2002,0,female\nx,2001,1,female\ny,2001,1,female\n").unwrap();
        assert_eq!(read_records(&p, &[]).unwrap(), vec![rec("y"), rec("x")]);
        std::fs::write(&p, "id,year,category,sex\nx,2001,1,female\nx,2002,0,male\n").unwrap();
        assert!(read_records(&p, &[]).unwrap_err().to_string().contains("record x"));
        std::fs::write(&p, "id,year,category\nx,2001,zz\n").unwrap();
        assert!(read_records(&p, &[]).unwrap_err().to_string().contains("record x"));
    }

    #[test]
    fn weights_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.csv");
        let ids = vec!["a".to_string(), "b".to_string()];
        std::fs::write(&p, "id,weight\nb,2\na,0\n").unwrap();
        assert_eq!(read_weights(&p, &ids).unwrap(), vec![0.0, 2.0]);
        std::fs::write(&p, "id,weight\nb,2\n").unwrap();
        assert!(read_weights(&p, &ids).unwrap_err().to_string().contains("without a weight: a"));
        std::fs::write(&p, "id,weight\nb,-1\na,1\n").unwrap();
        assert!(read_weights(&p, &ids).is_err());
    }
}
