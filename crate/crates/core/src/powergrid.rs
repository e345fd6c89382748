//! DC state estimation, residual-based bad-data detection and false data
//! injection.
//!
//! Under the DC model `z = Hx + e` the weighted least-squares estimate is
//! `x̂ = (HᵀWH)⁻¹HᵀWz` and a measurement is flagged when `‖z − Hx̂‖₂ > τ`.
//! An injection `a = Hc` shifts the estimate by `c` and leaves the residual
//! untouched, which is the same as `Ba = 0` for `B = H(HᵀH)⁻¹Hᵀ − I`. An
//! attacker who only controls the meters in `C` therefore has the equality
//! constraint `B[:, C]·v_C = 0` on any further perturbation `v`.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::constraints::{complement, ConstraintKind, ConstraintSet};
use crate::error::{check_len, Error, Result};
use crate::linalg::{self, Matrix, DEFAULT_PIVOT_TOL};
use crate::nn::{LabeledDataset, ATTACK, NORMAL};

const BUNDLED_SEED: u64 = 0x39_46;
const BUNDLED_BUSES: usize = 7;
const BUNDLED_BRANCHES: usize = 12;
const CALIBRATION_SEED: u64 = 0x00CA_11B8;
const CALIBRATION_SAMPLES: usize = 2000;

/// Measurement model of a grid: `H` (branches × states), meter weights and
/// the residual threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSystem {
    pub h: Matrix,
    pub w: Matrix,
    pub tau: f64,
}

impl GridSystem {
    /// Validates shape and rank; `W` defaults to the identity.
    pub fn new(h: Matrix, w: Option<Matrix>, tau: f64) -> Result<Self> {
        let (m, n) = (h.rows(), h.cols());
        let r = linalg::rank(&h, DEFAULT_PIVOT_TOL);
        if m <= n || r < n {
            return Err(Error::RankDeficientH {
                rows: m,
                cols: n,
                rank: r,
            });
        }
        let w = w.unwrap_or_else(|| Matrix::identity(m));
        check_len("weight matrix", m, w.rows())?;
        check_len("weight matrix", m, w.cols())?;
        Ok(GridSystem { h, w, tau })
    }

    pub fn branches(&self) -> usize {
        self.h.rows()
    }

    pub fn states(&self) -> usize {
        self.h.cols()
    }

    /// The 12-branch, 6-state system shipped with the crate, with `τ`
    /// calibrated against [`FdiaParams::default`] noise.
    pub fn bundled() -> GridSystem {
        let mut rng = ChaCha8Rng::seed_from_u64(BUNDLED_SEED);
        let mut edges: Vec<(usize, usize)> = Vec::with_capacity(BUNDLED_BRANCHES);
        // Spanning tree first, so the reduced incidence matrix has full column rank.
        for bus in 1..BUNDLED_BUSES {
            edges.push((rng.random_range(0..bus), bus));
        }
        while edges.len() < BUNDLED_BRANCHES {
            let a = rng.random_range(0..BUNDLED_BUSES);
            let b = rng.random_range(0..BUNDLED_BUSES);
            let (a, b) = (a.min(b), a.max(b));
            if a != b && !edges.contains(&(a, b)) {
                edges.push((a, b));
            }
        }
        let n = BUNDLED_BUSES - 1;
        let mut h = Matrix::zeros(BUNDLED_BRANCHES, n);
        for (row, &(from, to)) in edges.iter().enumerate() {
            // Bus 0 is the angle reference and has no state column.
            if from > 0 {
                h[(row, from - 1)] = 1.0;
            }
            h[(row, to - 1)] = -1.0;
        }
        let mut grid = GridSystem::new(h, None, f64::INFINITY).expect("bundled grid is full rank");
        grid.tau = grid
            .calibrate_tau(&FdiaParams::default(), 0.99, CALIBRATION_SEED)
            .expect("calibration on bundled grid");
        grid
    }

    /// Reads `H` from CSV and calibrates `τ` with default noise.
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<GridSystem> {
        let h = Matrix::read_csv(path)?;
        let mut grid = GridSystem::new(h, None, f64::INFINITY)?;
        grid.tau = grid.calibrate_tau(&FdiaParams::default(), 0.99, CALIBRATION_SEED)?;
        Ok(grid)
    }

    pub fn save_h(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.h.write_csv(path)
    }

    /// WLS state estimate.
    pub fn estimate_state(&self, z: &[f64]) -> Result<Vec<f64>> {
        linalg::least_squares(&self.h, &self.w, z)
    }

    /// `‖z − Hx̂‖₂`.
    pub fn residual_norm(&self, z: &[f64]) -> Result<f64> {
        let x = self.estimate_state(z)?;
        let fit = self.h.matvec(&x)?;
        Ok(linalg::norm2(
            &z.iter().zip(&fit).map(|(a, b)| a - b).collect::<Vec<_>>(),
        ))
    }

    /// Residual test: true when `z` is flagged as bad data.
    pub fn detect_bad(&self, z: &[f64]) -> Result<bool> {
        Ok(self.residual_norm(z)? > self.tau)
    }

    /// `B = H(HᵀH)⁻¹Hᵀ − I`, built column by column from least-squares
    /// projections of the unit vectors.
    pub fn fdia_b(&self) -> Result<Matrix> {
        let m = self.branches();
        let eye = Matrix::identity(m);
        let mut p = Matrix::zeros(m, m);
        for j in 0..m {
            let e = eye.column(j);
            let x = linalg::least_squares(&self.h, &eye, &e)?;
            let col = self.h.matvec(&x)?;
            for (i, v) in col.into_iter().enumerate() {
                p[(i, j)] = v;
            }
        }
        p.sub(&eye)
    }

    /// Injection vector `a = Hc`.
    pub fn make_fdia_vector(&self, c: &[f64]) -> Result<Vec<f64>> {
        self.h.matvec(c)
    }

    /// Equality constraint on perturbations of the meters in `c`:
    /// `Φ = B[:, C]`, `Φ̃ = 0`.
    pub fn fdia_constraint(&self, c: &[usize]) -> Result<ConstraintSet> {
        let b = self.fdia_b()?;
        let phi = b.select_columns(c)?;
        let r = linalg::rank(&phi, DEFAULT_PIVOT_TOL);
        if r >= c.len() {
            return Err(Error::DegenerateConstraint { rank: r });
        }
        let k = phi.rows();
        ConstraintSet::new(phi, vec![0.0; k], ConstraintKind::Equality, c.to_vec())
    }

    /// Basis of state shifts `c` whose injection `Hc` is zero outside `compromised`.
    pub fn supported_state_shifts(&self, compromised: &[usize]) -> Result<Matrix> {
        let u = complement(compromised, self.branches());
        let h_u = self.h.select_rows(&u)?;
        match linalg::dependency(&h_u, DEFAULT_PIVOT_TOL) {
            Ok(dep) => Ok(dep.null_space_basis()),
            Err(Error::EmptyConstraint) => Ok(Matrix::identity(self.states())),
            Err(e) => Err(e),
        }
    }

    fn clean_measurement(&self, p: &FdiaParams, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let x = p.sample_state(self.states(), rng)?;
        let noise = Normal::new(0.0, p.noise_std).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let mut z = self.h.matvec(&x)?;
        z.iter_mut().for_each(|v| *v += noise.sample(rng));
        Ok(z)
    }

    /// Clean measurement that passes the residual test.
    fn passing_measurement(&self, p: &FdiaParams, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        for _ in 0..1000 {
            let z = self.clean_measurement(p, rng)?;
            if !self.detect_bad(&z)? {
                return Ok(z);
            }
        }
        Err(Error::GenerationStall {
            what: "clean measurement under residual threshold",
            attempts: 1000,
        })
    }

    /// Stealthy injection supported on `compromised`, with `‖a‖₂` a random
    /// fraction of `‖z‖₂` around `p.attack_factor`.
    fn injection(
        &self,
        z: &[f64],
        compromised: &[usize],
        basis: &Matrix,
        p: &FdiaParams,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>> {
        let std = Normal::new(0.0, 1.0).expect("unit normal");
        for _ in 0..100 {
            let coef: Vec<f64> = (0..basis.cols()).map(|_| std.sample(rng)).collect();
            let c = basis.matvec(&coef)?;
            let mut a = self.make_fdia_vector(&c)?;
            // Rounding leaves ~1e-16 on meters the attacker does not hold.
            for u in complement(compromised, a.len()) {
                a[u] = 0.0;
            }
            let norm = linalg::norm2(&a);
            if norm < 1e-9 {
                continue;
            }
            let factor = p.attack_factor * rng.random_range(0.75..1.25);
            let scale = factor * linalg::norm2(z) / norm;
            return Ok(a.into_iter().map(|v| v * scale).collect());
        }
        Err(Error::GenerationStall {
            what: "non-zero injection",
            attempts: 100,
        })
    }

    /// Sets `τ` to the given quantile of clean residuals.
    pub fn calibrate_tau(&self, p: &FdiaParams, quantile: f64, seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut res = Vec::with_capacity(CALIBRATION_SAMPLES);
        for _ in 0..CALIBRATION_SAMPLES {
            let z = self.clean_measurement(p, &mut rng)?;
            res.push(self.residual_norm(&z)?);
        }
        res.sort_by(f64::total_cmp);
        let idx = ((quantile * res.len() as f64).ceil() as usize).clamp(1, res.len()) - 1;
        Ok(res[idx])
    }

    /// Builds the defender/attacker training sets and one injection-only
    /// test set per compromised-set size.
    pub fn synthesize_dataset(&self, p: &FdiaParams, seed: u64) -> Result<FdiaData> {
        p.validate(self)?;
        let min_c = self.branches() - self.states() + 1;
        let party = |stream: u64| -> Result<LabeledDataset> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream);
            let mut data = LabeledDataset::default();
            let n_attack = (p.records as f64 * p.attack_fraction).round() as usize;
            let mut labels: Vec<usize> = (0..p.records)
                .map(|i| if i < n_attack { ATTACK } else { NORMAL })
                .collect();
            rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), &mut rng);
            for label in labels {
                let z = self.passing_measurement(p, &mut rng)?;
                if label == NORMAL {
                    data.push(z, NORMAL);
                } else {
                    let k = rng.random_range(min_c..=self.branches());
                    let mut c = sample(&mut rng, self.branches(), k).into_vec();
                    c.sort_unstable();
                    let basis = self.supported_state_shifts(&c)?;
                    let a = self.injection(&z, &c, &basis, p, &mut rng)?;
                    data.push(z.iter().zip(&a).map(|(x, y)| x + y).collect(), ATTACK);
                }
            }
            Ok(data)
        };
        let defender = party(1)?;
        let attacker = party(2)?;

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(3);
        let mut tests = Vec::with_capacity(p.cases.len());
        for &case in &p.cases {
            let mut c = sample(&mut rng, self.branches(), case).into_vec();
            c.sort_unstable();
            let basis = self.supported_state_shifts(&c)?;
            let mut clean = Vec::with_capacity(p.test_count);
            let mut attacked = Vec::with_capacity(p.test_count);
            for _ in 0..p.test_count {
                let z = self.passing_measurement(p, &mut rng)?;
                let a = self.injection(&z, &c, &basis, p, &mut rng)?;
                attacked.push(z.iter().zip(&a).map(|(x, y)| x + y).collect());
                clean.push(z);
            }
            tests.push(FdiaTestSet {
                case,
                compromised: c,
                clean,
                attacked,
            });
        }
        Ok(FdiaData {
            defender,
            attacker,
            tests,
        })
    }
}

/// Synthetic measurement and attack distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FdiaParams {
    /// Mean of each state variable; cycled if shorter than the state count.
    pub state_mean: Vec<f64>,
    /// State standard deviation as a fraction of its mean.
    pub state_rel_std: f64,
    /// Meter noise standard deviation.
    pub noise_std: f64,
    /// Injection norm as a fraction of the clean measurement norm.
    pub attack_factor: f64,
    /// Records per party (defender, attacker).
    pub records: usize,
    pub attack_fraction: f64,
    /// Injection-only vectors per test case.
    pub test_count: usize,
    /// Compromised-set sizes, one test set each.
    pub cases: Vec<usize>,
}

impl Default for FdiaParams {
    fn default() -> Self {
        FdiaParams {
            state_mean: vec![120.0, 95.0, 140.0, 80.0, 110.0, 60.0],
            state_rel_std: 0.03,
            noise_std: 0.5,
            attack_factor: 0.15,
            records: 4000,
            attack_fraction: 0.5,
            test_count: 200,
            cases: vec![8, 9, 10],
        }
    }
}

impl FdiaParams {
    fn validate(&self, grid: &GridSystem) -> Result<()> {
        if self.state_mean.is_empty() {
            return Err(Error::InvalidConfig("state_mean is empty".into()));
        }
        if !(self.noise_std > 0.0) || !(self.state_rel_std >= 0.0) {
            return Err(Error::InvalidConfig("noise levels must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.attack_fraction) {
            return Err(Error::InvalidConfig("attack_fraction outside [0, 1]".into()));
        }
        let slack = grid.branches() - grid.states();
        for &case in &self.cases {
            if case <= slack || case > grid.branches() {
                return Err(Error::InvalidCase(case));
            }
        }
        Ok(())
    }

    fn sample_state(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        (0..n)
            .map(|i| {
                let mean = self.state_mean[i % self.state_mean.len()];
                let d = Normal::new(mean, self.state_rel_std * mean.abs())
                    .map_err(|e| Error::InvalidConfig(e.to_string()))?;
                Ok(d.sample(rng))
            })
            .collect()
    }
}

/// Injection-only test vectors for one compromised set.
#[derive(Debug, Clone, PartialEq)]
pub struct FdiaTestSet {
    pub case: usize,
    pub compromised: Vec<usize>,
    /// Residual-passing base measurements `z`.
    pub clean: Vec<Vec<f64>>,
    /// `z + a` with `a = Hc` supported on `compromised`.
    pub attacked: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdiaData {
    pub defender: LabeledDataset,
    pub attacker: LabeledDataset,
    pub tests: Vec<FdiaTestSet>,
}
