//! Row-major data matrices and their CSV dialect: comma separated, one header
//! row, `.` decimal point, values written in shortest round-trip decimal form.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    names: Vec<String>,
    values: Vec<f64>,
}

/// `x1, ..., xD`.
pub fn default_names(dim: usize) -> Vec<String> {
    (1..=dim).map(|i| format!("x{i}")).collect()
}

impl Dataset {
    pub fn new(names: Vec<String>) -> Self {
        Dataset {
            names,
            values: Vec::new(),
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let mut ds = Dataset::new(default_names(d));
        for r in rows {
            ds.push_row(r)?;
        }
        Ok(ds)
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_cols() {
            return Err(Error::DimensionMismatch {
                expected: self.n_cols(),
                got: names.len(),
            });
        }
        self.names = names;
        Ok(self)
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.n_cols() {
            return Err(Error::DimensionMismatch {
                expected: self.n_cols(),
                got: row.len(),
            });
        }
        self.values.extend_from_slice(row);
        Ok(())
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn n_rows(&self) -> usize {
        if self.names.is_empty() {
            0
        } else {
            self.values.len() / self.names.len()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_cols();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let d = self.n_cols();
        &mut self.values[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.n_cols().max(1))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        let mut out = Dataset::new(self.names.clone());
        for &i in idx {
            out.values.extend_from_slice(self.row(i));
        }
        out
    }

    pub fn select_columns(&self, cols: &[usize]) -> Dataset {
        let names = cols.iter().map(|&j| self.names[j].clone()).collect();
        let mut out = Dataset::new(names);
        for r in self.rows() {
            out.values.extend(cols.iter().map(|&j| r[j]));
        }
        out
    }

    /// Fails on the first negative or non-finite entry.
    pub fn check_nonnegative(&self) -> Result<()> {
        for (i, r) in self.rows().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::NegativeValue {
                        row: i,
                        column: j,
                        value: v,
                    });
                }
            }
        }
        Ok(())
    }

    /// Replaces negative entries by zero; returns how many were changed.
    pub fn clip_negatives(&mut self) -> usize {
        let mut n = 0;
        for v in &mut self.values {
            if *v < 0.0 {
                *v = 0.0;
                n += 1;
            }
        }
        n
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_reader(File::open(path)?)
    }

    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let names: Vec<String> = rdr
            .headers()
            .map_err(|e| csv_error(e, 1))?
            .iter()
            .map(str::to_string)
            .collect();
        if names.is_empty() || names.iter().all(String::is_empty) {
            return Err(Error::Parse {
                line: 1,
                message: "missing header row".into(),
            });
        }
        let mut ds = Dataset::new(names);
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_error(e, 0))?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() != ds.n_cols() {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {} fields, found {}", ds.n_cols(), rec.len()),
                });
            }
            for field in rec.iter() {
                let v: f64 = field.parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("not a number: {field:?}"),
                })?;
                ds.values.push(v);
            }
        }
        Ok(ds)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(File::create(path)?);
        self.to_writer(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn to_writer(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "{}", self.names.join(","))?;
        let mut line = String::new();
        for r in self.rows() {
            line.clear();
            for (j, v) in r.iter().enumerate() {
                if j > 0 {
                    line.push(',');
                }
                line.push_str(&v.to_string());
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

fn csv_error(e: csv::Error, fallback_line: u64) -> Error {
    let line = e.position().map_or(fallback_line, |p| p.line());
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

/// Writes one value per line under a single-column header.
pub fn write_column(path: impl AsRef<Path>, header: &str, values: &[f64]) -> Result<()> {
    let mut f = std::io::BufWriter::new(File::create(path)?);
    writeln!(f, "{header}")?;
    for v in values {
        writeln!(f, "{v}")?;
    }
    f.flush()?;
    Ok(())
}
