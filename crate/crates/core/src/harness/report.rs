//! CSV and JSON report files.
//!
//! CSV columns, in order:
//!
//! | column | meaning |
//! |---|---|
//! | `algorithm` | driver name, or the check name for suite rows |
//! | `R` | replica count |
//! | `beta` | inverse temperature |
//! | `t_corr` | decorrelation time (skeleton steps or physical time) |
//! | `dt` | time step of the discretized process |
//! | `Dt` | fragment length |
//! | `t_stop` | physical stopping time |
//! | `seed` | master seed |
//! | `rep` | number of repetitions aggregated |
//! | `value` | mean estimate or mean speedup |
//! | `std` | standard deviation over repetitions |
//! | `oracle` | reference value, empty when there is none |
//! | `verdict` | `pass`, `flag`, `fail` or `info` |
//!
//! Reals are written with 17 significant digits in scientific notation.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::consistency::Check;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

pub const CSV_HEADER: &str = "algorithm,R,beta,t_corr,dt,Dt,t_stop,seed,rep,value,std,oracle,verdict";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub algorithm: String,
    #[serde(rename = "R")]
    pub replicas: usize,
    pub beta: f64,
    pub t_corr: f64,
    pub dt: f64,
    #[serde(rename = "Dt")]
    pub window: f64,
    pub t_stop: f64,
    pub seed: u64,
    pub rep: usize,
    pub value: f64,
    pub std: f64,
    pub oracle: Option<f64>,
    pub verdict: String,
}

impl ReportRow {
    /// Key used to order rows before emission.
    fn sort_key(&self) -> (String, usize, u64, u64, u64, u64) {
        (
            self.algorithm.clone(),
            self.replicas,
            self.t_corr.to_bits(),
            self.beta.to_bits(),
            self.window.to_bits(),
            self.seed,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub schema_version: u32,
    pub reports: Vec<ReportRow>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

fn real(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn sort_rows(rows: &mut [ReportRow]) {
    rows.sort_by_key(|a| a.sort_key());
}

pub fn to_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let oracle = r.oracle.map(real).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.algorithm,
            r.replicas,
            real(r.beta),
            real(r.t_corr),
            real(r.dt),
            real(r.window),
            real(r.t_stop),
            r.seed,
            r.rep,
            real(r.value),
            real(r.std),
            oracle,
            r.verdict
        )
        .expect("writing to a string");
    }
    out
}

pub fn to_json(rows: &[ReportRow]) -> Result<String> {
    let file = ReportFile {
        schema_version: SCHEMA_VERSION,
        reports: rows.to_vec(),
    };
    serde_json::to_string_pretty(&file).map_err(|e| Error::Json {
        path: PathBuf::new(),
        source: e,
    })
}

pub fn from_json(text: &str, path: &Path) -> Result<ReportFile> {
    serde_json::from_str(text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Write `<stem>.csv` or `<stem>.json` into `out_dir`, rows sorted by
/// sweep key. Returns the path written.
pub fn emit_reports(rows: &[ReportRow], format: Format, out_dir: &Path, stem: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rows = rows.to_vec();
    sort_rows(&mut rows);
    let (path, text) = match format {
        Format::Csv => (out_dir.join(format!("{stem}.csv")), to_csv(&rows)),
        Format::Json => {
            let path = out_dir.join(format!("{stem}.json"));
            let text = to_json(&rows).map_err(|e| match e {
                Error::Json { source, .. } => Error::Json {
                    path: path.clone(),
                    source,
                },
                e => e,
            })?;
            (path, text + "\n")
        }
    };
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckFile {
    pub schema_version: u32,
    pub all_pass: bool,
    pub checks: Vec<Check>,
}

/// Write the consistency-suite verdicts to `<out_dir>/validate.json`.
pub fn emit_checks(checks: &[Check], out_dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let path = out_dir.join("validate.json");
    let file = CheckFile {
        schema_version: SCHEMA_VERSION,
        all_pass: checks.iter().all(|c| c.pass),
        checks: checks.to_vec(),
    };
    let text = serde_json::to_string_pretty(&file).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
