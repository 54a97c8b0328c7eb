//! Input formats: CSV matrices and JSON documents for coefficients,
//! candidate predictions and experiment configurations.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::ExperimentConfig;
use crate::mixing::CandidateSet;

/// A numeric table read from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvMatrix {
    pub header: Option<Vec<String>>,
    pub data: DMatrix<f64>,
}

fn parse_number(field: &str) -> Option<f64> {
    field.trim().parse::<f64>().ok()
}

/// Parses comma-separated numbers with '.' decimals. The first record is
/// taken as a header when any of its fields is not a number. Blank lines
/// are skipped.
pub fn parse_csv_matrix(text: &str) -> Result<CsvMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut header = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(i + 1, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(i + 1, |p| p.line() as usize);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        if let Some(w) = width {
            if rec.len() != w {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected {w} fields, found {}", rec.len()),
                });
            }
        }
        let parsed: Vec<Option<f64>> = rec.iter().map(parse_number).collect();
        if header.is_none() && rows.is_empty() && parsed.iter().any(Option::is_none) {
            header = Some(rec.iter().map(str::to_string).collect());
            width = Some(rec.len());
            continue;
        }
        let mut row = Vec::with_capacity(parsed.len());
        for (j, (v, raw)) in parsed.into_iter().zip(rec.iter()).enumerate() {
            match v {
                Some(x) if x.is_finite() => row.push(x),
                Some(_) => {
                    return Err(Error::Parse {
                        line,
                        msg: format!("field {} is not finite: '{raw}'", j + 1),
                    })
                }
                None => {
                    return Err(Error::Parse {
                        line,
                        msg: format!("field {} is not a number: '{raw}'", j + 1),
                    })
                }
            }
        }
        width = Some(row.len());
        rows.push(row);
    }
    let ncols = width.unwrap_or(0);
    let data = DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]);
    Ok(CsvMatrix { header, data })
}

/// Splits a table into a design and its response column (the last one when
/// `response` is `None`).
pub fn split_response(table: &DMatrix<f64>, response: Option<usize>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let (n, w) = table.shape();
    if w == 0 || n == 0 {
        return Err(Error::Data("dataset is empty".into()));
    }
    let r = response.unwrap_or(w - 1);
    if r >= w {
        return Err(Error::Data(format!("response column {r} out of range for {w} columns")));
    }
    let y = table.column(r).iter().copied().collect();
    let keep: Vec<usize> = (0..w).filter(|&j| j != r).collect();
    let x = DMatrix::from_fn(n, keep.len(), |i, j| table[(i, keep[j])]);
    Ok((x, y))
}

/// A coefficient vector: either a bare JSON array or an object with a
/// `coefficients` field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CoefficientFile {
    Bare(Vec<f64>),
    Object { coefficients: Vec<f64> },
}

impl CoefficientFile {
    pub fn into_vec(self) -> Vec<f64> {
        match self {
            CoefficientFile::Bare(v) | CoefficientFile::Object { coefficients: v } => v,
        }
    }
}

pub fn parse_coefficients(text: &str) -> Result<Vec<f64>> {
    let v = serde_json::from_str::<CoefficientFile>(text)?.into_vec();
    if v.is_empty() {
        return Err(Error::Data("coefficient vector is empty".into()));
    }
    if v.iter().any(|c| !c.is_finite()) {
        return Err(Error::Data("coefficients must be finite".into()));
    }
    Ok(v)
}

/// Candidate predictions and responses for mixing. `predictions[k][i]` is
/// candidate `k` at observation `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateFile {
    pub predictions: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    #[serde(default)]
    pub priors: Option<Vec<f64>>,
    #[serde(default)]
    pub labels: Option<Vec<String>>,
}

impl CandidateFile {
    pub fn into_candidates(self) -> Result<(CandidateSet, Vec<f64>)> {
        let k = self.predictions.len();
        if k == 0 {
            return Err(Error::Data("no candidates".into()));
        }
        let n = self.y.len();
        if self.predictions.iter().any(|r| r.len() != n) {
            return Err(Error::Data(format!("every candidate needs {n} predictions")));
        }
        let preds = DMatrix::from_fn(k, n, |i, j| self.predictions[i][j]);
        let priors = self.priors.unwrap_or_else(|| vec![1.0 / k as f64; k]);
        let labels = self
            .labels
            .unwrap_or_else(|| (0..k).map(|i| format!("c{i}")).collect());
        Ok((CandidateSet::new(preds, priors, labels)?, self.y))
    }
}

pub fn parse_candidates(text: &str) -> Result<(CandidateSet, Vec<f64>)> {
    serde_json::from_str::<CandidateFile>(text)?.into_candidates()
}

pub fn parse_experiment(text: &str) -> Result<ExperimentConfig> {
    Ok(serde_json::from_str(text)?)
}
