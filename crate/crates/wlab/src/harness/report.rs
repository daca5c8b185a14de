//! Experiment reports: tables, fits, verdicts and their on-disk form.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::{Error, Result};

/// Table entry. Non-finite numbers are written as the strings `inf`,
/// `-inf` and `NaN` (JSON has no literal for them) and read back as numbers.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Num(f64),
    Text(String),
}

impl Serialize for Cell {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Cell::Num(v) if v.is_finite() => s.serialize_f64(*v),
            Cell::Num(v) => s.serialize_str(&v.to_string()),
            Cell::Text(t) => s.serialize_str(t),
        }
    }
}

impl<'de> Deserialize<'de> for Cell {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
            Null(()),
        }
        Ok(match Raw::deserialize(d)? {
            Raw::Num(v) => Cell::Num(v),
            Raw::Text(t) => match t.as_str() {
                "inf" | "-inf" | "NaN" => Cell::Num(t.parse().unwrap()),
                _ => Cell::Text(t),
            },
            Raw::Null(()) => Cell::Num(f64::NAN),
        })
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Num(v as f64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Text(v.to_string())
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Num(v) => write!(f, "{v:e}"),
            Cell::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len(), "row width in table {}", self.name);
        self.rows.push(row);
    }

    /// Numeric column by name; text cells become NaN.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(
            self.rows
                .iter()
                .map(|r| match &r[k] {
                    Cell::Num(v) => *v,
                    Cell::Text(_) => f64::NAN,
                })
                .collect(),
        )
    }

    fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r.iter().map(|c| c.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Least-squares line `y = slope·x + intercept`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual.
    pub residual: f64,
    pub points: usize,
}

impl LineFit {
    pub fn fit(x: &[f64], y: &[f64]) -> Result<Self> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return Err(Error::Fit("a line fit needs at least two points".into()));
        }
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::Fit("non-finite point in line fit".into()));
        }
        let nf = n as f64;
        let mx = x.iter().sum::<f64>() / nf;
        let my = y.iter().sum::<f64>() / nf;
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        if sxx == 0.0 {
            return Err(Error::Fit("degenerate abscissae in line fit".into()));
        }
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let slope = sxy / sxx;
        let intercept = my - slope * mx;
        let ss: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
        Ok(Self { slope, intercept, residual: (ss / nf).sqrt(), points: n })
    }

    /// Fit `ln y` against `ln x`.
    pub fn log_log(x: &[f64], y: &[f64]) -> Result<Self> {
        let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
        let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
        Self::fit(&lx, &ly)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// Two independent routes to the same quantity disagree.
    OracleBreach,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub check: String,
    pub status: Status,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub id: String,
    pub experiment: String,
    pub config: ExperimentConfig,
    pub tables: Vec<Table>,
    /// Fitted lines and constants, keyed by name.
    pub fits: serde_json::Map<String, serde_json::Value>,
    /// Reported quantities without a pass/fail reading.
    pub probes: serde_json::Map<String, serde_json::Value>,
    pub verdicts: Vec<Verdict>,
    pub warnings: Vec<String>,
    pub wall_clock_s: f64,
}

impl ExperimentReport {
    pub fn new(cfg: &ExperimentConfig, experiment: &str) -> Self {
        Self {
            id: cfg.id.clone(),
            experiment: experiment.into(),
            config: cfg.clone(),
            tables: Vec::new(),
            fits: Default::default(),
            probes: Default::default(),
            verdicts: Vec::new(),
            warnings: Vec::new(),
            wall_clock_s: 0.0,
        }
    }

    pub fn check(&mut self, check: &str, pass: bool, detail: impl Into<String>) {
        let status = if pass { Status::Pass } else { Status::Fail };
        self.verdicts.push(Verdict { check: check.into(), status, detail: detail.into() });
    }

    pub fn breach(&mut self, check: &str, detail: impl Into<String>) {
        self.verdicts.push(Verdict { check: check.into(), status: Status::OracleBreach, detail: detail.into() });
    }

    pub fn fit(&mut self, name: &str, value: impl Serialize) {
        self.fits.insert(name.into(), serde_json::to_value(value).unwrap_or(serde_json::Value::Null));
    }

    pub fn probe(&mut self, name: &str, value: impl Serialize) {
        self.probes.insert(name.into(), serde_json::to_value(value).unwrap_or(serde_json::Value::Null));
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn verdict(&self, check: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.check == check)
    }

    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.status == Status::Pass)
    }

    /// 0 all pass, 1 any failure, 2 any oracle breach.
    pub fn exit_code(&self) -> i32 {
        exit_code(self.verdicts.iter().map(|v| v.status))
    }

    /// Write `<id>.json` and one `<id>.<table>.csv` per table into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut out = Vec::new();
        let json = dir.join(format!("{}.json", self.id));
        std::fs::write(&json, serde_json::to_string_pretty(self)?)?;
        out.push(json);
        for t in &self.tables {
            let p = dir.join(format!("{}.{}.csv", self.id, t.name));
            t.write_csv(&p)?;
            out.push(p);
        }
        Ok(out)
    }

    pub fn summary(&self) -> String {
        let mut s = format!("{} ({}), {:.1} s\n", self.id, self.experiment, self.wall_clock_s);
        for v in &self.verdicts {
            let tag = match v.status {
                Status::Pass => "PASS",
                Status::Fail => "FAIL",
                Status::OracleBreach => "BREACH",
            };
            s.push_str(&format!("  {tag:6} {}: {}\n", v.check, v.detail));
        }
        for w in &self.warnings {
            s.push_str(&format!("  warn   {w}\n"));
        }
        s
    }
}

pub fn exit_code(statuses: impl IntoIterator<Item = Status>) -> i32 {
    let mut code = 0;
    for s in statuses {
        code = code.max(match s {
            Status::Pass => 0,
            Status::Fail => 1,
            Status::OracleBreach => 2,
        });
    }
    code
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_fit_recovers_power_law() {
        let x: Vec<f64> = (1..8).map(|k| 2f64.powi(k)).collect();
        let y: Vec<f64> = x.iter().map(|t| 3.0 * t.powf(-0.25)).collect();
        let f = LineFit::log_log(&x, &y).unwrap();
        assert!((f.slope + 0.25).abs() < 1e-12 && (f.intercept - 3f64.ln()).abs() < 1e-12);
        assert!(f.residual < 1e-12);
        assert!(LineFit::fit(&[1.0, 1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn exit_codes() {
        use Status::*;
        assert_eq!(exit_code([Pass, Pass]), 0);
        assert_eq!(exit_code([Pass, Fail]), 1);
        assert_eq!(exit_code([OracleBreach, Fail]), 2);
        assert_eq!(exit_code([]), 0);
    }

    #[test]
    fn cells_round_trip_through_json() {
        let row = vec![Cell::Num(1.5), Cell::Num(f64::INFINITY), Cell::Num(f64::NEG_INFINITY), Cell::from("x")];
        let back: Vec<Cell> = serde_json::from_str(&serde_json::to_string(&row).unwrap()).unwrap();
        assert_eq!(back, row);
        let nan: Vec<Cell> = serde_json::from_str(&serde_json::to_string(&[Cell::Num(f64::NAN)]).unwrap()).unwrap();
        assert!(matches!(nan[0], Cell::Num(v) if v.is_nan()));
    }
}
