//! Long-format CSV plus a JSON/TOML sidecar header.
//!
//! CSV columns, in order: `subject_id, visit_index, time, y, r, s`, then one
//! column per baseline covariate (constant within subject). Empty `r`/`s`
//! cells mean the value is absent. `visit_index` is 0-based. The sidecar holds
//! `tau`, `time_unit`, the covariate column names and optional per-subject
//! `u_sum` values. CSV columns not listed as covariates are ignored.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{LongitudinalDataset, SubjectRecord, TimeUnit};
use crate::error::{Error, Result};

pub const CORE_COLUMNS: [&str; 6] = ["subject_id", "visit_index", "time", "y", "r", "s"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub tau: f64,
    #[serde(default)]
    pub time_unit: TimeUnit,
    /// Covariate columns; when absent on read, every non-core column is used.
    #[serde(default)]
    pub covariates: Option<Vec<String>>,
    #[serde(default)]
    pub u_sum: BTreeMap<String, f64>,
}

impl DatasetHeader {
    pub fn from_dataset(ds: &LongitudinalDataset) -> Self {
        let u_sum = ds
            .subjects
            .iter()
            .filter_map(|s| s.u_sum.map(|u| (s.id.to_string(), u)))
            .collect();
        Self {
            tau: ds.tau,
            time_unit: ds.time_unit,
            covariates: Some(ds.covariate_names()),
            u_sum,
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_csv<W: std::io::Write>(ds: &LongitudinalDataset, out: W) -> Result<()> {
    let covs = ds.covariate_names();
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = CORE_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(covs.iter().cloned());
    w.write_record(&header)?;
    for subj in &ds.subjects {
        for j in 0..subj.n_visits() {
            let mut rec = vec![
                subj.id.to_string(),
                j.to_string(),
                subj.visit_times[j].to_string(),
                subj.y[j].to_string(),
                fmt_opt(subj.r.as_ref().map(|r| r[j])),
                fmt_opt(subj.s.as_ref().map(|s| s[j])),
            ];
            rec.extend(covs.iter().map(|c| subj.baseline[c].to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `<stem>.csv` and `<stem>.json`.
pub fn write_dataset(ds: &LongitudinalDataset, csv_path: &Path, header_path: &Path) -> Result<()> {
    let file = fs::File::create(csv_path)?;
    write_csv(ds, file)?;
    let header = DatasetHeader::from_dataset(ds);
    write_header(&header, header_path)
}

pub fn write_header(header: &DatasetHeader, path: &Path) -> Result<()> {
    let text = if path.extension().is_some_and(|e| e == "toml") {
        toml::to_string_pretty(header).map_err(|e| Error::Config(e.to_string()))?
    } else {
        serde_json::to_string_pretty(header)?
    };
    fs::write(path, text)?;
    Ok(())
}

pub fn read_header(path: &Path) -> Result<DatasetHeader> {
    let text = fs::read_to_string(path)?;
    if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    } else {
        Ok(serde_json::from_str(&text)?)
    }
}

fn parse_f64(field: &str, col: &str, line: usize) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Invalid(format!("line {line}: column {col}: cannot parse {field:?}")))
}

pub fn read_csv<R: std::io::Read>(input: R, header: &DatasetHeader) -> Result<LongitudinalDataset> {
    let mut rdr = csv::Reader::from_reader(input);
    let cols: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let idx = |name: &str| cols.iter().position(|c| c == name);
    let find = |name: &str| idx(name).ok_or_else(|| Error::Missing(format!("column {name}")));
    let (c_id, c_visit, c_time, c_y) = (find("subject_id")?, find("visit_index")?, find("time")?, find("y")?);
    let (c_r, c_s) = (idx("r"), idx("s"));
    let cov_names: Vec<String> = match &header.covariates {
        Some(list) => list.clone(),
        None => cols
            .iter()
            .filter(|c| !CORE_COLUMNS.contains(&c.as_str()))
            .cloned()
            .collect(),
    };
    let cov_idx: Vec<(String, usize)> = cov_names
        .iter()
        .map(|n| idx(n).map(|i| (n.clone(), i)).ok_or_else(|| Error::Missing(format!("covariate column {n}"))))
        .collect::<Result<_>>()?;

    struct Row {
        visit: usize,
        time: f64,
        y: f64,
        r: Option<f64>,
        s: Option<f64>,
    }
    let mut order: Vec<u64> = Vec::new();
    let mut rows: BTreeMap<u64, (Vec<Row>, BTreeMap<String, f64>)> = BTreeMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let id: u64 = rec[c_id]
            .trim()
            .parse()
            .map_err(|_| Error::Invalid(format!("line {line}: bad subject_id {:?}", &rec[c_id])))?;
        let visit: usize = rec[c_visit]
            .trim()
            .parse()
            .map_err(|_| Error::Invalid(format!("line {line}: bad visit_index {:?}", &rec[c_visit])))?;
        let opt = |c: Option<usize>, name: &str| -> Result<Option<f64>> {
            match c.map(|i| rec[i].trim()) {
                None | Some("") => Ok(None),
                Some(v) => parse_f64(v, name, line).map(Some),
            }
        };
        let row = Row {
            visit,
            time: parse_f64(&rec[c_time], "time", line)?,
            y: parse_f64(&rec[c_y], "y", line)?,
            r: opt(c_r, "r")?,
            s: opt(c_s, "s")?,
        };
        let entry = rows.entry(id).or_insert_with(|| {
            order.push(id);
            (Vec::new(), BTreeMap::new())
        });
        for (name, i) in &cov_idx {
            let v = parse_f64(&rec[*i], name, line)?;
            entry.1.insert(name.clone(), v);
        }
        entry.0.push(row);
    }

    let mut subjects = Vec::with_capacity(order.len());
    for id in order {
        let (mut rs, baseline) = rows.remove(&id).expect("subject present");
        rs.sort_by_key(|r| r.visit);
        let all_r = rs.iter().all(|r| r.r.is_some());
        let all_s = rs.iter().all(|r| r.s.is_some());
        subjects.push(SubjectRecord {
            id,
            visit_times: rs.iter().map(|r| r.time).collect(),
            y: rs.iter().map(|r| r.y).collect(),
            r: all_r.then(|| rs.iter().map(|r| r.r.unwrap()).collect()),
            s: all_s.then(|| rs.iter().map(|r| r.s.unwrap()).collect()),
            baseline,
            u_sum: header.u_sum.get(&id.to_string()).copied(),
        });
    }
    Ok(LongitudinalDataset::new(subjects, header.tau, header.time_unit))
}

pub fn read_dataset(csv_path: &Path, header_path: &Path) -> Result<LongitudinalDataset> {
    let header = read_header(header_path)?;
    let file = fs::File::open(csv_path)?;
    read_csv(file, &header)
}
