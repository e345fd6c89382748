//! Water-treatment flow constraints and synthetic sensor data.
//!
//! Seven flow meters in the treatment plant obey three pipeline laws:
//!
//! * FIT301 ≤ FIT201
//! * |FIT401 − FIT501| ≤ ε₁ with ε₁ = 0.0403
//! * |(FIT502 + FIT503) − (FIT501 + FIT504)| ≤ ε₂ with ε₂ = 0.153
//!
//! Written as `ΦM_C ≤ Φ̃` this is a 5 × 7 system, two-sided bounds becoming
//! two rows each. Records have 25 features laid out like the plant's sensor
//! list; only the seven flow columns carry constraints.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::constraints::{self, ConstraintKind, ConstraintSet};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{LabeledDataset, ATTACK, NORMAL};

pub const EPSILON_1: f64 = 0.0403;
pub const EPSILON_2: f64 = 0.153;

/// Flow meters in constraint-column order.
pub const FIT_NAMES: [&str; 7] = [
    "FIT201", "FIT301", "FIT401", "FIT501", "FIT502", "FIT503", "FIT504",
];

/// The 25 analog sensors in record order: (name, mean, standard deviation).
/// Flow-meter rows are placeholders; their values come from [`sample_flows`].
pub const SENSORS: [(&str, f64, f64); 25] = [
    ("FIT101", 2.40, 0.05),
    ("LIT101", 520.0, 40.0),
    ("AIT201", 260.0, 3.0),
    ("AIT202", 8.40, 0.05),
    ("AIT203", 330.0, 5.0),
    ("FIT201", 2.45, 0.0),
    ("DPIT301", 19.5, 1.0),
    ("FIT301", 2.23, 0.0),
    ("LIT301", 900.0, 50.0),
    ("AIT401", 148.0, 1.0),
    ("AIT402", 170.0, 3.0),
    ("FIT401", 1.72, 0.0),
    ("LIT401", 870.0, 40.0),
    ("AIT501", 7.80, 0.05),
    ("AIT502", 140.0, 3.0),
    ("AIT503", 265.0, 2.0),
    ("AIT504", 12.0, 0.3),
    ("FIT501", 1.72, 0.0),
    ("FIT502", 1.28, 0.0),
    ("FIT503", 0.74, 0.0),
    ("FIT504", 0.30, 0.0),
    ("PIT501", 250.0, 2.0),
    ("PIT502", 1.20, 0.1),
    ("PIT503", 190.0, 2.0),
    ("FIT601", 0.05, 0.01),
];

/// Positions of [`FIT_NAMES`] within a 25-feature record.
pub const FIT_POSITIONS: [usize; 7] = [5, 7, 11, 17, 18, 19, 20];

pub const FEATURES: usize = 25;

/// The full inequality system over the seven flow meters, in the order of
/// [`FIT_NAMES`], mapped onto `fit_positions`.
pub fn swat_constraints_at(fit_positions: &[usize; 7]) -> Result<ConstraintSet> {
    let phi = Matrix::from_rows(&[
        [-1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, -1.0, 1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, -1.0, 1.0, 1.0, -1.0],
        [0.0, 0.0, 0.0, 1.0, -1.0, -1.0, 1.0],
    ])?;
    ConstraintSet::new(
        phi,
        vec![0.0, EPSILON_1, EPSILON_1, EPSILON_2, EPSILON_2],
        ConstraintKind::Inequality,
        fit_positions.to_vec(),
    )
}

/// [`swat_constraints_at`] with the default [`FIT_POSITIONS`].
pub fn swat_constraints() -> ConstraintSet {
    swat_constraints_at(&FIT_POSITIONS).expect("published constraint system is well formed")
}

/// Rows and flow-meter columns (into [`FIT_NAMES`]) for a compromised-set size.
pub fn case_layout(case: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    match case {
        2 => Ok((vec![0], vec![0, 1])),
        5 => Ok((vec![1, 2, 3, 4], vec![2, 3, 4, 5, 6])),
        7 => Ok(((0..5).collect(), (0..7).collect())),
        other => Err(Error::InvalidCase(other)),
    }
}

/// Constraint rows that involve only the flow meters of `case`.
pub fn scenario_constraints(case: usize) -> Result<ConstraintSet> {
    scenario_constraints_at(case, &FIT_POSITIONS)
}

pub fn scenario_constraints_at(case: usize, fit_positions: &[usize; 7]) -> Result<ConstraintSet> {
    let (rows, cols) = case_layout(case)?;
    let full = swat_constraints_at(fit_positions)?;
    let phi = full.phi.select_rows(&rows)?.select_columns(&cols)?;
    ConstraintSet::new(
        phi,
        rows.iter().map(|&r| full.bound[r]).collect(),
        ConstraintKind::Inequality,
        cols.iter().map(|&c| fit_positions[c]).collect(),
    )
}

/// A compromised-flow-meter scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct WaterScenario {
    pub case: usize,
    pub fit_indices: [usize; 7],
    pub constraint: ConstraintSet,
}

impl WaterScenario {
    pub fn new(case: usize) -> Result<Self> {
        Ok(WaterScenario {
            case,
            fit_indices: FIT_POSITIONS,
            constraint: scenario_constraints(case)?,
        })
    }

    pub fn compromised(&self) -> &[usize] {
        &self.constraint.compromised
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WaterParams {
    /// Total training records, split evenly between defender and attacker.
    pub records: usize,
    pub attack_fraction: f64,
    /// Anomaly noise standard deviation as a fraction of each flow's mean.
    pub noise_rel: f64,
    pub test_count: usize,
    pub cases: Vec<usize>,
    /// Rejection-sampling attempts per record before giving up.
    pub retry_budget: usize,
}

impl Default for WaterParams {
    fn default() -> Self {
        WaterParams {
            records: 20_000,
            attack_fraction: 0.5,
            noise_rel: 0.1,
            test_count: 200,
            cases: vec![2, 5, 7],
            retry_budget: 10_000,
        }
    }
}

/// Flow readings in [`FIT_NAMES`] order for a plant in steady state.
fn sample_flows(rng: &mut ChaCha8Rng) -> [f64; 7] {
    let n = |m: f64, s: f64, rng: &mut ChaCha8Rng| Normal::new(m, s).expect("valid normal").sample(rng);
    let fit201 = n(2.45, 0.02, rng);
    let fit301 = fit201 - n(0.22, 0.02, rng).abs();
    let fit401 = n(1.72, 0.02, rng);
    let fit501 = fit401 + n(0.0, 0.008, rng);
    let fit504 = n(0.30, 0.01, rng);
    let fit502 = n(1.28, 0.015, rng);
    let fit503 = fit501 + fit504 - fit502 + n(0.0, 0.03, rng);
    [fit201, fit301, fit401, fit501, fit502, fit503, fit504]
}

fn flow_mean(i: usize) -> f64 {
    SENSORS[FIT_POSITIONS[i]].1
}

fn normal_record(full: &ConstraintSet, budget: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    for _ in 0..budget {
        let flows = sample_flows(rng);
        if !full.check_inequality(&flows)?.is_empty() {
            continue;
        }
        let mut rec: Vec<f64> = SENSORS
            .iter()
            .map(|&(_, mean, sd)| {
                if sd > 0.0 {
                    Normal::new(mean, sd).expect("valid normal").sample(rng)
                } else {
                    mean
                }
            })
            .collect();
        constraints::scatter(&mut rec, &FIT_POSITIONS, &flows)?;
        return Ok(rec);
    }
    Err(Error::GenerationStall {
        what: "normal water record",
        attempts: budget,
    })
}

/// Adds Gaussian noise to the flow meters `cols` (indices into [`FIT_NAMES`]).
fn pollute(rec: &mut [f64], cols: &[usize], noise_rel: f64, rng: &mut ChaCha8Rng) {
    for &c in cols {
        let sd = noise_rel * flow_mean(c);
        rec[FIT_POSITIONS[c]] += Normal::new(0.0, sd).expect("valid normal").sample(rng);
    }
}

/// Training data for defender and attacker plus constraint-satisfying
/// anomaly test sets.
pub fn synthesize_dataset(p: &WaterParams, seed: u64) -> Result<WaterData> {
    if !(p.noise_rel > 0.0) || !(0.0..=1.0).contains(&p.attack_fraction) {
        return Err(Error::InvalidConfig("bad water noise parameters".into()));
    }
    for &case in &p.cases {
        case_layout(case)?;
    }
    let full = swat_constraints();
    let half = p.records / 2;
    let party = |stream: u64| -> Result<LabeledDataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let n_attack = (half as f64 * p.attack_fraction).round() as usize;
        let mut labels: Vec<usize> = (0..half)
            .map(|i| if i < n_attack { ATTACK } else { NORMAL })
            .collect();
        rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), &mut rng);
        let mut data = LabeledDataset::default();
        for label in labels {
            let mut rec = normal_record(&full, p.retry_budget, &mut rng)?;
            if label == ATTACK {
                // Training anomalies may break the flow laws.
                let case = [2, 5, 7][rng.random_range(0..3)];
                let (_, cols) = case_layout(case)?;
                pollute(&mut rec, &cols, p.noise_rel, &mut rng);
            }
            data.push(rec, label);
        }
        Ok(data)
    };
    let defender = party(1)?;
    let attacker = party(2)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    let mut tests = Vec::with_capacity(p.cases.len());
    for &case in &p.cases {
        let (_, cols) = case_layout(case)?;
        let mut clean = Vec::with_capacity(p.test_count);
        let mut attacked = Vec::with_capacity(p.test_count);
        for _ in 0..p.test_count {
            let rec = normal_record(&full, p.retry_budget, &mut rng)?;
            let mut tries = 0;
            let polluted = loop {
                if tries == p.retry_budget {
                    return Err(Error::GenerationStall {
                        what: "constraint-satisfying anomaly",
                        attempts: tries,
                    });
                }
                tries += 1;
                let mut cand = rec.clone();
                pollute(&mut cand, &cols, p.noise_rel, &mut rng);
                let flows = constraints::subvector(&cand, &FIT_POSITIONS)?;
                if full.check_inequality(&flows)?.is_empty() {
                    break cand;
                }
            };
            clean.push(rec);
            attacked.push(polluted);
        }
        tests.push(WaterTestSet {
            case,
            compromised: scenario_constraints(case)?.compromised,
            clean,
            attacked,
        });
    }
    Ok(WaterData {
        defender,
        attacker,
        tests,
    })
}

/// Header comment lines recording the flow-meter columns of a dataset file.
pub fn dataset_header() -> Vec<String> {
    let cols: Vec<String> = FIT_NAMES
        .iter()
        .zip(FIT_POSITIONS)
        .map(|(n, p)| format!("{n}={p}"))
        .collect();
    let names: Vec<&str> = SENSORS.iter().map(|s| s.0).collect();
    vec![
        format!("features={}", names.join(",")),
        format!("fit_columns={}", cols.join(",")),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaterTestSet {
    pub case: usize,
    /// Feature positions of the compromised flow meters.
    pub compromised: Vec<usize>,
    pub clean: Vec<Vec<f64>>,
    /// Anomalous records that still satisfy every flow law.
    pub attacked: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaterData {
    pub defender: LabeledDataset,
    pub attacker: LabeledDataset,
    pub tests: Vec<WaterTestSet>,
}
