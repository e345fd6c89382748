//! Dense real-matrix algebra.
//!
//! Everything the constraint analysis and the state estimator need: row
//! reduction with partial pivoting, numerical rank, the `[I, D, B]`
//! dependency split of a homogeneous system, and a weighted least-squares
//! solve through Householder QR. Matrices are small (tens of rows), so
//! storage is a flat row-major `Vec<f64>`.

use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Default relative pivot tolerance for [`rref`], [`rank`] and [`dependency`].
pub const DEFAULT_PIVOT_TOL: f64 = 1e-9;

/// Row-major dense matrix of finite `f64` values.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix", into = "RawMatrix")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawMatrix> for Matrix {
    type Error = Error;

    fn try_from(raw: RawMatrix) -> Result<Self> {
        Matrix::new(raw.rows, raw.cols, raw.data)
    }
}

impl From<Matrix> for RawMatrix {
    fn from(m: Matrix) -> Self {
        RawMatrix {
            rows: m.rows,
            cols: m.cols,
            data: m.data,
        }
    }
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting bad lengths and NaN/Inf.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_len("matrix data", rows * cols, data.len())?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Diagonal matrix from the given entries.
    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        let n = diag.len();
        let mut data = vec![0.0; n * n];
        for (i, &d) in diag.iter().enumerate() {
            data[i * n + i] = d;
        }
        Matrix::new(n, n, data)
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_len("matrix row", cols, r.as_ref().len())?;
            data.extend_from_slice(r.as_ref());
        }
        Matrix::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        check_len("matmul inner dimension", self.cols, other.rows)?;
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("matvec", self.cols, v.len())?;
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    /// Sub-matrix keeping the listed columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Matrix> {
        for &c in cols {
            if c >= self.cols {
                return Err(Error::IndexOutOfBounds {
                    index: c,
                    len: self.cols,
                });
            }
        }
        let mut out = Matrix::zeros(self.rows, cols.len());
        for i in 0..self.rows {
            for (jj, &j) in cols.iter().enumerate() {
                out[(i, jj)] = self[(i, j)];
            }
        }
        Ok(out)
    }

    /// Sub-matrix keeping the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Matrix> {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            if r >= self.rows {
                return Err(Error::IndexOutOfBounds {
                    index: r,
                    len: self.rows,
                });
            }
            data.extend_from_slice(self.row(r));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols: self.cols,
            data,
        })
    }

    /// Largest absolute entry (0 for an empty matrix).
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        check_len("matrix rows", self.rows, other.rows)?;
        check_len("matrix cols", self.cols, other.cols)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    /// Reads a matrix from CSV: one row per line, comma separated. A first
    /// line whose first cell is not a number is treated as a header.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Matrix> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        Matrix::from_csv_reader(file).map_err(|e| match e {
            Error::MalformedFile { reason, .. } => Error::malformed(path, reason),
            other => other,
        })
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Matrix> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if lineno == 0 && rows.is_empty() && cells[0].parse::<f64>().is_err() {
                continue;
            }
            let row = cells
                .iter()
                .map(|c| {
                    c.parse::<f64>().map_err(|_| {
                        Error::malformed("<csv>", format!("line {}: bad number {c:?}", lineno + 1))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            if let Some(first) = rows.first() {
                if first.len() != row.len() {
                    return Err(Error::malformed(
                        "<csv>",
                        format!("line {}: ragged row", lineno + 1),
                    ));
                }
            }
            rows.push(row);
        }
        Matrix::from_rows(&rows)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv_to(&mut file)?;
        file.flush()?;
        Ok(())
    }

    /// Writes with shortest round-trip float formatting, so a re-read is bit-exact.
    pub fn write_csv_to<W: Write>(&self, mut w: W) -> Result<()> {
        for i in 0..self.rows {
            let line: Vec<String> = self.row(i).iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Reduced row-echelon form with partial pivoting.
///
/// A candidate pivot whose magnitude is below `pivot_tol` times the largest
/// absolute entry of `m` is treated as zero. Returns the reduced matrix and
/// the pivot column of each nonzero row, ascending.
pub fn rref(m: &Matrix, pivot_tol: f64) -> (Matrix, Vec<usize>) {
    let mut a = m.clone();
    let threshold = pivot_tol * m.max_abs();
    let mut pivots = Vec::new();
    if m.max_abs() == 0.0 {
        return (a, pivots);
    }
    let (rows, cols) = (a.rows, a.cols);
    let mut r = 0;
    for c in 0..cols {
        if r == rows {
            break;
        }
        let (best, best_abs) = (r..rows)
            .map(|i| (i, a[(i, c)].abs()))
            .fold((r, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if best_abs <= threshold {
            for i in r..rows {
                a[(i, c)] = 0.0;
            }
            continue;
        }
        if best != r {
            for j in 0..cols {
                a.data.swap(best * cols + j, r * cols + j);
            }
        }
        let p = a[(r, c)];
        for j in 0..cols {
            a[(r, j)] /= p;
        }
        a[(r, c)] = 1.0;
        for i in 0..rows {
            if i == r {
                continue;
            }
            let f = a[(i, c)];
            if f == 0.0 {
                continue;
            }
            for j in 0..cols {
                let v = a[(r, j)];
                a[(i, j)] -= f * v;
            }
            a[(i, c)] = 0.0;
        }
        pivots.push(c);
        r += 1;
    }
    (a, pivots)
}

/// Numerical rank: the number of pivot columns of [`rref`].
pub fn rank(m: &Matrix, pivot_tol: f64) -> usize {
    rref(m, pivot_tol).1.len()
}

/// The `[I, D, B]` split of the solution set of `Φx = 0`: every solution is
/// determined by its free coordinates through `x_D = B·x_I`.
#[derive(Debug, Clone, PartialEq)]
pub struct DependencyDecomposition {
    /// Free (independent) column indices, ascending.
    pub independent: Vec<usize>,
    /// Pivot (dependent) column indices, ascending.
    pub dependent: Vec<usize>,
    /// `|D| × |I|` dependency matrix.
    pub dependency: Matrix,
}

impl DependencyDecomposition {
    /// Number of unknowns `r`.
    pub fn dim(&self) -> usize {
        self.independent.len() + self.dependent.len()
    }

    /// Fills in the dependent coordinates of `x` from its independent ones.
    pub fn complete(&self, x: &mut [f64]) {
        for (row, &d) in self.dependent.iter().enumerate() {
            x[d] = self
                .independent
                .iter()
                .enumerate()
                .map(|(k, &i)| self.dependency[(row, k)] * x[i])
                .sum();
        }
    }

    /// Null-space basis as the columns of an `r × (r − n)` matrix.
    pub fn null_space_basis(&self) -> Matrix {
        let r = self.dim();
        let mut basis = Matrix::zeros(r, self.independent.len());
        let mut x = vec![0.0; r];
        for (k, &i) in self.independent.iter().enumerate() {
            x.iter_mut().for_each(|v| *v = 0.0);
            x[i] = 1.0;
            self.complete(&mut x);
            for (row, v) in x.iter().enumerate() {
                basis[(row, k)] = *v;
            }
        }
        basis
    }
}

/// Splits the columns of `phi` into dependent pivots and independent free
/// columns, with the dependency matrix read off the reduced form.
pub fn dependency(phi: &Matrix, pivot_tol: f64) -> Result<DependencyDecomposition> {
    let (reduced, pivots) = rref(phi, pivot_tol);
    let n = pivots.len();
    if n == 0 {
        return Err(Error::EmptyConstraint);
    }
    if n == phi.cols() {
        return Err(Error::DegenerateConstraint { rank: n });
    }
    let independent: Vec<usize> = (0..phi.cols()).filter(|c| !pivots.contains(c)).collect();
    let mut dep = Matrix::zeros(n, independent.len());
    for row in 0..n {
        for (k, &i) in independent.iter().enumerate() {
            let v = -reduced[(row, i)];
            dep[(row, k)] = if v == 0.0 { 0.0 } else { v };
        }
    }
    Ok(DependencyDecomposition {
        independent,
        dependent: pivots,
        dependency: dep,
    })
}

/// Weighted least squares `x̂ = (HᵀWH)⁻¹HᵀWz` for a diagonal positive `W`,
/// solved as an ordinary least-squares problem on `W^{1/2}H` via Householder
/// QR rather than forming the normal equations.
pub fn least_squares(h: &Matrix, w: &Matrix, z: &[f64]) -> Result<Vec<f64>> {
    let (m, n) = (h.rows(), h.cols());
    check_len("least squares weights", m, w.rows())?;
    check_len("least squares weights", m, w.cols())?;
    check_len("least squares measurements", m, z.len())?;
    if m < n {
        return Err(Error::SingularSystem);
    }
    let mut sqrt_w = Vec::with_capacity(m);
    for i in 0..m {
        let d = w[(i, i)];
        if d <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "weight matrix entry ({i},{i}) = {d} is not positive"
            )));
        }
        sqrt_w.push(d.sqrt());
    }
    let mut a = h.clone();
    let mut b: Vec<f64> = z.to_vec();
    for i in 0..m {
        for j in 0..n {
            a[(i, j)] *= sqrt_w[i];
        }
        b[i] *= sqrt_w[i];
    }
    let scale = a.max_abs();
    if scale == 0.0 {
        return Err(Error::SingularSystem);
    }
    // Householder QR, applying each reflector to b as we go.
    for k in 0..n {
        let norm = (k..m).map(|i| a[(i, k)] * a[(i, k)]).sum::<f64>().sqrt();
        if norm <= 1e-12 * scale {
            return Err(Error::SingularSystem);
        }
        let alpha = if a[(k, k)] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..m).map(|i| a[(i, k)]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for j in k..n {
            let s: f64 = (k..m).map(|i| v[i - k] * a[(i, j)]).sum::<f64>() * 2.0 / vnorm2;
            for i in k..m {
                a[(i, j)] -= s * v[i - k];
            }
        }
        let s: f64 = (k..m).map(|i| v[i - k] * b[i]).sum::<f64>() * 2.0 / vnorm2;
        for i in k..m {
            b[i] -= s * v[i - k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[(k, j)] * x[j]).sum();
        x[k] = (b[k] - s) / a[(k, k)];
    }
    Ok(x)
}
