//! Physical linear constraints over the compromised measurements.
//!
//! A [`ConstraintSet`] holds `Φ` (one column per compromised sensor), the
//! bound `Φ̃` and whether the law is `ΦM_C = Φ̃` or `ΦM_C ≤ Φ̃`. A perturbation
//! `Δ_C` keeps an equality law intact exactly when `ΦΔ_C = 0`, so any linear
//! combination of valid perturbations is valid too.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{self, Matrix};

/// Absolute tolerance for equality checks.
pub const EQUALITY_TOL: f64 = 1e-6;

/// Slack added to inequality bounds by [`ConstraintSet::check_inequality`].
pub const INEQUALITY_SLACK: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintKind {
    Equality,
    Inequality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub phi: Matrix,
    pub bound: Vec<f64>,
    pub kind: ConstraintKind,
    /// Positions of the compromised sensors in the full measurement vector,
    /// one per column of `phi`.
    pub compromised: Vec<usize>,
}

impl ConstraintSet {
    pub fn new(
        phi: Matrix,
        bound: Vec<f64>,
        kind: ConstraintKind,
        compromised: Vec<usize>,
    ) -> Result<Self> {
        check_len("constraint bound", phi.rows(), bound.len())?;
        check_len("constraint columns", compromised.len(), phi.cols())?;
        if compromised.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(
                "compromised indices must be strictly increasing".into(),
            ));
        }
        Ok(ConstraintSet {
            phi,
            bound,
            kind,
            compromised,
        })
    }

    /// Checks that every compromised index fits a measurement vector of length `d`.
    pub fn check_dimension(&self, d: usize) -> Result<()> {
        match self.compromised.last() {
            Some(&i) if i >= d => Err(Error::IndexOutOfBounds { index: i, len: d }),
            _ => Ok(()),
        }
    }

    pub fn rows(&self) -> usize {
        self.phi.rows()
    }

    fn row_values(&self, m_c: &[f64]) -> Result<Vec<f64>> {
        self.phi.matvec(m_c)
    }

    /// Rows with `|Φᵢ·m_c − Φ̃ᵢ| > tol`; empty means the law holds.
    pub fn check_equality(&self, m_c: &[f64], tol: f64) -> Result<Vec<usize>> {
        let vals = self.row_values(m_c)?;
        Ok(vals
            .iter()
            .zip(&self.bound)
            .enumerate()
            .filter(|(_, (v, b))| (*v - *b).abs() > tol)
            .map(|(i, _)| i)
            .collect())
    }

    /// Rows with `Φᵢ·m_c > Φ̃ᵢ` (boundary inclusive).
    pub fn check_inequality(&self, m_c: &[f64]) -> Result<Vec<usize>> {
        let vals = self.row_values(m_c)?;
        Ok(vals
            .iter()
            .zip(&self.bound)
            .enumerate()
            .filter(|(_, (v, b))| **v > **b + INEQUALITY_SLACK)
            .map(|(i, _)| i)
            .collect())
    }

    /// Violated rows for this set's own kind, using [`EQUALITY_TOL`] for equalities.
    pub fn violations(&self, m_c: &[f64]) -> Result<Vec<usize>> {
        match self.kind {
            ConstraintKind::Equality => self.check_equality(m_c, EQUALITY_TOL),
            ConstraintKind::Inequality => self.check_inequality(m_c),
        }
    }

    /// `‖Φ·Δ_C‖∞ ≤ tol`: the perturbation leaves every equality row unchanged.
    pub fn validate_perturbation(&self, delta_c: &[f64], tol: f64) -> Result<bool> {
        let v = self.phi.matvec(delta_c)?;
        Ok(linalg::norm_inf(&v) <= tol)
    }

    /// Homogeneous equality set from the rows in `v` (deduplicated, first
    /// occurrence order kept). Used to hold violated inequality rows fixed.
    pub fn row_subset(&self, v: &[usize]) -> Result<ConstraintSet> {
        let mut rows: Vec<usize> = Vec::with_capacity(v.len());
        for &i in v {
            if i >= self.rows() {
                return Err(Error::IndexOutOfBounds {
                    index: i,
                    len: self.rows(),
                });
            }
            if !rows.contains(&i) {
                rows.push(i);
            }
        }
        Ok(ConstraintSet {
            phi: self.phi.select_rows(&rows)?,
            bound: rows.iter().map(|&i| self.bound[i]).collect(),
            kind: ConstraintKind::Equality,
            compromised: self.compromised.clone(),
        })
    }

    /// Writes `Φ` as CSV followed by one `#meta` line carrying kind, bound
    /// and compromised indices.
    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.phi.write_csv_to(&mut w)?;
        let kind = match self.kind {
            ConstraintKind::Equality => "equality",
            ConstraintKind::Inequality => "inequality",
        };
        let join = |it: Vec<String>| it.join(",");
        writeln!(
            w,
            "#meta kind={kind};bound={};compromised={}",
            join(self.bound.iter().map(|v| format!("{v:?}")).collect()),
            join(self.compromised.iter().map(|v| v.to_string()).collect()),
        )?;
        w.flush()?;
        Ok(())
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<ConstraintSet> {
        let path = path.as_ref();
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut matrix_text = String::new();
        let mut meta = None;
        for line in reader.lines() {
            let line = line?;
            if let Some(rest) = line.trim().strip_prefix("#meta") {
                meta = Some(rest.trim().to_string());
            } else {
                matrix_text.push_str(&line);
                matrix_text.push('\n');
            }
        }
        let meta = meta.ok_or_else(|| Error::malformed(path, "missing #meta line"))?;
        let phi = Matrix::from_csv_reader(matrix_text.as_bytes())
            .map_err(|e| Error::malformed(path, e.to_string()))?;
        let (mut kind, mut bound, mut compromised) = (None, None, None);
        for field in meta.split(';') {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| Error::malformed(path, format!("bad meta field {field:?}")))?;
            let value = value.trim();
            match key.trim() {
                "kind" => {
                    kind = Some(match value {
                        "equality" => ConstraintKind::Equality,
                        "inequality" => ConstraintKind::Inequality,
                        other => {
                            return Err(Error::malformed(path, format!("unknown kind {other:?}")))
                        }
                    })
                }
                "bound" => bound = Some(parse_list::<f64>(value, path)?),
                "compromised" => compromised = Some(parse_list::<usize>(value, path)?),
                other => return Err(Error::malformed(path, format!("unknown key {other:?}"))),
            }
        }
        let missing = |k: &str| Error::malformed(path, format!("meta line lacks {k}"));
        ConstraintSet::new(
            phi,
            bound.ok_or_else(|| missing("bound"))?,
            kind.ok_or_else(|| missing("kind"))?,
            compromised.ok_or_else(|| missing("compromised"))?,
        )
        .map_err(|e| Error::malformed(path, e.to_string()))
    }
}

fn parse_list<T: std::str::FromStr>(value: &str, path: &Path) -> Result<Vec<T>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| Error::malformed(path, format!("bad list entry {s:?}")))
        })
        .collect()
}

/// Gathers `values[idx]` in the order given.
pub fn subvector(values: &[f64], idx: &[usize]) -> Result<Vec<f64>> {
    idx.iter()
        .map(|&i| {
            values.get(i).copied().ok_or(Error::IndexOutOfBounds {
                index: i,
                len: values.len(),
            })
        })
        .collect()
}

/// Writes `sub` back into `values` at `idx`; the inverse of [`subvector`].
pub fn scatter(values: &mut [f64], idx: &[usize], sub: &[f64]) -> Result<()> {
    check_len("scatter", idx.len(), sub.len())?;
    for (&i, &v) in idx.iter().zip(sub) {
        let len = values.len();
        *values
            .get_mut(i)
            .ok_or(Error::IndexOutOfBounds { index: i, len })? = v;
    }
    Ok(())
}

/// Complement of `c` in `0..d`.
pub fn complement(c: &[usize], d: usize) -> Vec<usize> {
    (0..d).filter(|i| !c.contains(i)).collect()
}

/// A full measurement vector and its compromised/uncompromised partition.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementVector {
    pub values: Vec<f64>,
    pub compromised: Vec<usize>,
    pub uncompromised: Vec<usize>,
}

impl MeasurementVector {
    pub fn new(values: Vec<f64>, compromised: Vec<usize>) -> Result<Self> {
        for &i in &compromised {
            if i >= values.len() {
                return Err(Error::IndexOutOfBounds {
                    index: i,
                    len: values.len(),
                });
            }
        }
        let uncompromised = complement(&compromised, values.len());
        Ok(MeasurementVector {
            values,
            compromised,
            uncompromised,
        })
    }

    pub fn compromised_values(&self) -> Vec<f64> {
        self.compromised.iter().map(|&i| self.values[i]).collect()
    }
}
