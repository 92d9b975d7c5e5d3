//! Preprocessing for the UCI "default of credit card clients" table: pulls
//! the six payment and six bill amounts, clamps the few negative entries to
//! zero and makes a seeded 70/30 train/test split.

use rand::seq::SliceRandom;
use std::io::Read;
use std::path::Path;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::stats::seeded_rng;

pub const TRAIN_FRACTION: f64 = 0.7;
/// Lines searched for the header row (the public file has a banner line first).
const HEADER_SEARCH_LINES: usize = 5;

/// Output column names: `PAY_AMT1..6` then `BILL_AMT1..6`, or the two-column
/// subset `PAY_AMT1, BILL_AMT1`.
pub fn credit_columns(small: bool) -> Vec<String> {
    if small {
        return vec!["PAY_AMT1".into(), "BILL_AMT1".into()];
    }
    (1..=6)
        .map(|i| format!("PAY_AMT{i}"))
        .chain((1..=6).map(|i| format!("BILL_AMT{i}")))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CreditData {
    pub data: Dataset,
    /// Number of negative entries replaced by zero.
    pub clamped: usize,
}

pub fn read_credit(reader: impl Read, small: bool) -> Result<CreditData> {
    let wanted = credit_columns(small);
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let mut header: Option<(Vec<usize>, u64)> = None;
    let mut best_missing: Vec<String> = wanted.clone();
    for _ in 0..HEADER_SEARCH_LINES {
        let Some(rec) = records.next() else { break };
        let rec = rec.map_err(|e| parse_err(&e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let names: Vec<&str> = rec.iter().collect();
        let missing: Vec<String> = wanted.iter().filter(|w| !names.contains(&w.as_str())).cloned().collect();
        if missing.is_empty() {
            let idx = wanted
                .iter()
                .map(|w| names.iter().position(|n| n == w).unwrap_or(0))
                .collect();
            header = Some((idx, line));
            break;
        }
        if missing.len() < best_missing.len() {
            best_missing = missing;
        }
    }
    let Some((idx, _)) = header else {
        return Err(Error::MissingColumns(format!(
            "{} (expected columns: {})",
            best_missing.join(", "),
            wanted.join(", ")
        )));
    };
    let mut data = Dataset::new(wanted);
    let mut clamped = 0;
    let mut row = vec![0.0; idx.len()];
    for rec in records {
        let rec = rec.map_err(|e| parse_err(&e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(str::is_empty) {
            continue;
        }
        for (slot, &k) in row.iter_mut().zip(&idx) {
            let field = rec.get(k).ok_or_else(|| Error::Parse {
                line,
                message: format!("row has {} fields, column {} is missing", rec.len(), k + 1),
            })?;
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                message: format!("'{field}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("'{field}' is not finite"),
                });
            }
            *slot = if v < 0.0 {
                clamped += 1;
                0.0
            } else {
                v
            };
        }
        data.push_row(&row)?;
    }
    if data.is_empty() {
        return Err(Error::InsufficientData("credit file has a header but no data rows".into()));
    }
    Ok(CreditData { data, clamped })
}

fn parse_err(e: &csv::Error) -> Error {
    Error::Parse {
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    }
}

/// Seeded split with `round(0.7 N)` training rows; both parts keep file order.
pub fn split_train_test(data: &Dataset, seed: u64) -> (Dataset, Dataset) {
    let n = data.n_rows();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded_rng(seed));
    let n_train = (n as f64 * TRAIN_FRACTION).round() as usize;
    let (tr, te) = idx.split_at_mut(n_train);
    tr.sort_unstable();
    te.sort_unstable();
    (data.select_rows(tr), data.select_rows(te))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CreditSplit {
    pub train: Dataset,
    pub test: Dataset,
    pub clamped: usize,
}

pub fn ingest_credit(path: impl AsRef<Path>, small: bool, seed: u64) -> Result<CreditSplit> {
    let file = std::fs::File::open(path)?;
    let CreditData { data, clamped } = read_credit(std::io::BufReader::new(file), small)?;
    let (train, test) = split_train_test(&data, seed);
    Ok(CreditSplit { train, test, clamped })
}
