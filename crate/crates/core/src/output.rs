//! Run artifacts: the sampled time series as CSV and the summary as JSON.
//!
//! Numbers are written with 17 significant digits, which round-trips every
//! `f64` exactly.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::scenario::ScenarioFile;
use crate::sim::{Metrics, RunRecord, Sample};

pub const BASE_COLUMNS: [&str; 12] = [
    "t",
    "y",
    "y_star",
    "e",
    "u",
    "sigma",
    "rho",
    "lambda",
    "eps_bar",
    "m_norm",
    "margin_u",
    "margin_lambda",
];
pub const DIAGNOSTIC_COLUMNS: [&str; 2] = ["V", "min_eig_upsilon"];

/// 17 significant digits.
pub fn format_number(v: f64) -> String {
    format!("{v:.16e}")
}

fn has_diagnostics(samples: &[Sample]) -> bool {
    samples.iter().any(|s| s.v.is_some() || s.min_eig_upsilon.is_some())
}

fn base_values(s: &Sample) -> [f64; 12] {
    [s.t, s.y, s.y_star, s.e, s.u, s.sigma, s.rho, s.lambda, s.eps_bar, s.m_norm, s.margin_u, s.margin_lambda]
}

/// Writes the time series. The `V` and `min_eig_upsilon` columns are present
/// when any sample carries them; a missing value is an empty field.
pub fn write_csv<W: Write>(samples: &[Sample], mut w: W) -> io::Result<()> {
    let diag = has_diagnostics(samples);
    let mut header: Vec<&str> = BASE_COLUMNS.to_vec();
    if diag {
        header.extend(DIAGNOSTIC_COLUMNS);
    }
    writeln!(w, "{}", header.join(","))?;
    let opt = |v: Option<f64>| v.map(format_number).unwrap_or_default();
    for s in samples {
        let mut fields: Vec<String> = base_values(s).iter().map(|v| format_number(*v)).collect();
        if diag {
            fields.push(opt(s.v));
            fields.push(opt(s.min_eig_upsilon));
        }
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

pub fn csv_string(samples: &[Sample]) -> String {
    let mut buf = Vec::new();
    write_csv(samples, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("ASCII output")
}

/// Parses text produced by [`write_csv`].
pub fn read_csv(text: &str) -> Result<Vec<Sample>, String> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or("empty CSV")?.split(',').collect();
    let diag = match header.len() {
        12 => false,
        14 => true,
        k => return Err(format!("expected 12 or 14 columns, found {k}")),
    };
    let expected: Vec<&str> = BASE_COLUMNS.iter().chain(DIAGNOSTIC_COLUMNS.iter().take(if diag { 2 } else { 0 })).copied().collect();
    if header != expected {
        return Err(format!("unexpected header {header:?}"));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != header.len() {
                return Err(format!("row {}: expected {} fields, found {}", i + 2, header.len(), fields.len()));
            }
            let num = |k: usize| fields[k].parse::<f64>().map_err(|e| format!("row {} column {}: {e}", i + 2, header[k]));
            let opt = |k: usize| if fields[k].is_empty() { Ok(None) } else { num(k).map(Some) };
            Ok(Sample {
                t: num(0)?,
                y: num(1)?,
                y_star: num(2)?,
                e: num(3)?,
                u: num(4)?,
                sigma: num(5)?,
                rho: num(6)?,
                lambda: num(7)?,
                eps_bar: num(8)?,
                m_norm: num(9)?,
                margin_u: num(10)?,
                margin_lambda: num(11)?,
                v: if diag { opt(12)? } else { None },
                min_eig_upsilon: if diag { opt(13)? } else { None },
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub scenario: &'a str,
    pub completed: bool,
    pub abort_time: Option<f64>,
    pub state_dimension: usize,
    pub rows: usize,
    pub metrics: &'a Metrics,
    pub config: &'a ScenarioFile,
}

pub fn summary_json(record: &RunRecord, metrics: &Metrics, config: &ScenarioFile) -> String {
    let s = Summary {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        scenario: &record.scenario,
        completed: record.abort.is_none(),
        abort_time: record.abort.as_ref().map(|a| a.t),
        state_dimension: record.state_dimension,
        rows: record.samples.len(),
        metrics,
        config,
    };
    serde_json::to_string_pretty(&s).expect("summary serializes")
}

/// Writes `contents` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputBundle {
    pub csv: PathBuf,
    pub summary: PathBuf,
    pub config_echo: PathBuf,
}

/// Writes `<name>.csv`, `<name>.summary.json` and `<name>.scenario.toml`.
pub fn write_bundle(dir: &Path, record: &RunRecord, metrics: &Metrics, config: &ScenarioFile) -> io::Result<OutputBundle> {
    fs::create_dir_all(dir)?;
    let bundle = OutputBundle {
        csv: dir.join(format!("{}.csv", record.scenario)),
        summary: dir.join(format!("{}.summary.json", record.scenario)),
        config_echo: dir.join(format!("{}.scenario.toml", record.scenario)),
    };
    write_atomic(&bundle.csv, csv_string(&record.samples).as_bytes())?;
    write_atomic(&bundle.summary, summary_json(record, metrics, config).as_bytes())?;
    write_atomic(&bundle.config_echo, config.to_toml().as_bytes())?;
    Ok(bundle)
}
