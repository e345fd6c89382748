//! End-to-end scenario runs.
//!
//! A [`Workbench`] holds everything one seed needs: synthetic data, the
//! defender model `f`, the attacker's surrogate `f'` (trained on a disjoint
//! split) and the injection-only test sets. [`Workbench::run`] then attacks
//! every test vector under one knowledge setting:
//!
//! | scenario   | knows `M_U` | gradients from | universal search |
//! |------------|-------------|----------------|------------------|
//! | white-box  | yes         | `f`            | no               |
//! | gray-box1  | yes         | `f'`           | no               |
//! | gray-box2  | no          | `f`            | yes              |
//! | black-box  | no          | `f'`           | yes              |
//! | supreme    | yes         | `f`            | no, unconstrained|
//!
//! Every output is scored by the defender. Reports are a deterministic
//! function of the configuration; wall-clock timings live in a separate
//! [`TimingReport`] so that reports can be compared byte for byte.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Duration;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{self, AttackConfig, AttackResult};
use crate::constraints::{self, ConstraintKind, ConstraintSet, MeasurementVector, EQUALITY_TOL};
use crate::error::{Error, Result};
use crate::linalg;
use crate::nn::{self, FeatureScaler, LabeledDataset, Network, NetworkSpec, TrainConfig, ATTACK, NORMAL};
use crate::powergrid::{FdiaParams, GridSystem};
use crate::water::{self, WaterParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Power,
    Water,
}

impl std::str::FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "power" => Ok(Domain::Power),
            "water" => Ok(Domain::Water),
            other => Err(Error::InvalidConfig(format!("unknown domain {other:?}"))),
        }
    }
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Domain::Power => "power",
            Domain::Water => "water",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "white-box")]
    WhiteBox,
    #[serde(rename = "gray-box1")]
    GrayBox1,
    #[serde(rename = "gray-box2")]
    GrayBox2,
    #[serde(rename = "black-box")]
    BlackBox,
    #[serde(rename = "supreme")]
    Supreme,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::Supreme,
        Scenario::WhiteBox,
        Scenario::GrayBox1,
        Scenario::GrayBox2,
        Scenario::BlackBox,
    ];

    /// Whether the attacker only sees `M_C` and must run the universal search.
    pub fn universal(self) -> bool {
        matches!(self, Scenario::GrayBox2 | Scenario::BlackBox)
    }

    /// Whether gradients come from the attacker's own surrogate model.
    pub fn uses_surrogate(self) -> bool {
        matches!(self, Scenario::GrayBox1 | Scenario::BlackBox)
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "white-box" => Ok(Scenario::WhiteBox),
            "gray-box1" => Ok(Scenario::GrayBox1),
            "gray-box2" => Ok(Scenario::GrayBox2),
            "black-box" => Ok(Scenario::BlackBox),
            "supreme" => Ok(Scenario::Supreme),
            other => Err(Error::InvalidConfig(format!("unknown scenario {other:?}"))),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scenario::WhiteBox => "white-box",
            Scenario::GrayBox1 => "gray-box1",
            Scenario::GrayBox2 => "gray-box2",
            Scenario::BlackBox => "black-box",
            Scenario::Supreme => "supreme",
        })
    }
}

/// Training hyperparameters shared by defender and surrogate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: Option<usize>,
    /// Fraction of each party's records used for training; the rest is the
    /// held-out test split.
    pub train_fraction: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 0.1,
            batch_size: 32,
            epochs: 40,
            patience: None,
            train_fraction: 0.75,
        }
    }
}

/// Everything that determines one scenario run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub domain: Domain,
    pub case: usize,
    pub scenario: Scenario,
    pub attack: AttackConfig,
    #[serde(default)]
    pub lambda_grid: Option<Vec<f64>>,
    pub seeds: Vec<u64>,
    /// Per-example generation deadline; misses are counted, not enforced.
    #[serde(default = "default_deadline_ms")]
    pub deadline_ms: f64,
    #[serde(default)]
    pub power: FdiaParams,
    #[serde(default)]
    pub water: WaterParams,
    #[serde(default)]
    pub training: TrainingConfig,
    /// Optional `H` matrix CSV replacing the bundled grid.
    #[serde(default)]
    pub grid_path: Option<PathBuf>,
}

fn default_deadline_ms() -> f64 {
    2000.0
}

/// Default attack settings per domain: 40 steps of 2 A (about half the
/// per-meter spread of normal readings) on the bundled grid,
/// 50 steps of 0.06 m³/h on the water flows.
pub fn default_attack(domain: Domain) -> AttackConfig {
    match domain {
        Domain::Power => AttackConfig {
            step: 40,
            size: 2.0,
            lambda_threshold: 0.1,
            max_itera: 5,
            sample_count: 10,
            seed: 0,
        },
        Domain::Water => AttackConfig {
            step: 50,
            size: 0.06,
            lambda_threshold: 0.1,
            max_itera: 5,
            sample_count: 10,
            seed: 0,
        },
    }
}

impl ScenarioConfig {
    /// Defaults for a domain, scenario and case, five seeds.
    pub fn new(domain: Domain, scenario: Scenario, case: usize) -> Self {
        ScenarioConfig {
            domain,
            case,
            scenario,
            attack: default_attack(domain),
            lambda_grid: None,
            seeds: vec![1, 2, 3, 4, 5],
            deadline_ms: default_deadline_ms(),
            power: FdiaParams::default(),
            water: WaterParams::default(),
            training: TrainingConfig::default(),
            grid_path: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.attack.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("no seeds".into()));
        }
        if self.scenario.universal() && self.attack.sample_count == 0 {
            return Err(Error::InvalidConfig(
                "universal scenarios need sample_count >= 1".into(),
            ));
        }
        if let Some(grid) = &self.lambda_grid {
            if grid.iter().any(|l| !(*l > 0.0 && *l <= 1.0)) {
                return Err(Error::InvalidConfig("lambda grid values must lie in (0, 1]".into()));
            }
        }
        let cases = match self.domain {
            Domain::Power => &self.power.cases,
            Domain::Water => &self.water.cases,
        };
        if !cases.contains(&self.case) {
            return Err(Error::InvalidCase(self.case));
        }
        Ok(())
    }

    pub fn from_json_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::malformed(path, e.to_string()))
    }
}

/// Injection-only test vectors for one compromised set.
#[derive(Debug, Clone, PartialEq)]
pub struct TestSet {
    pub case: usize,
    pub compromised: Vec<usize>,
    pub clean: Vec<Vec<f64>>,
    pub attacked: Vec<Vec<f64>>,
}

/// Data and trained models for one domain and seed.
#[derive(Debug, Clone)]
pub struct Workbench {
    pub domain: Domain,
    pub seed: u64,
    pub grid: Option<GridSystem>,
    pub defender: Network,
    pub surrogate: Network,
    pub defender_accuracy: f64,
    pub surrogate_accuracy: f64,
    pub defender_data: LabeledDataset,
    pub attacker_data: LabeledDataset,
    pub tests: Vec<TestSet>,
    /// Attacker-side normal records used to guess uncompromised readings.
    pub u_pool: Vec<Vec<f64>>,
}

/// Synthesized datasets before training.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub grid: Option<GridSystem>,
    pub defender: LabeledDataset,
    pub attacker: LabeledDataset,
    pub tests: Vec<TestSet>,
}

pub fn synthesize(cfg: &ScenarioConfig, seed: u64) -> Result<SynthOutput> {
    match cfg.domain {
        Domain::Power => {
            let grid = match &cfg.grid_path {
                Some(p) => GridSystem::load(p)?,
                None => GridSystem::bundled(),
            };
            let data = grid.synthesize_dataset(&cfg.power, seed)?;
            let tests = data
                .tests
                .into_iter()
                .map(|t| TestSet {
                    case: t.case,
                    compromised: t.compromised,
                    clean: t.clean,
                    attacked: t.attacked,
                })
                .collect();
            Ok(SynthOutput {
                grid: Some(grid),
                defender: data.defender,
                attacker: data.attacker,
                tests,
            })
        }
        Domain::Water => {
            let data = water::synthesize_dataset(&cfg.water, seed)?;
            let tests = data
                .tests
                .into_iter()
                .map(|t| TestSet {
                    case: t.case,
                    compromised: t.compromised,
                    clean: t.clean,
                    attacked: t.attacked,
                })
                .collect();
            Ok(SynthOutput {
                grid: None,
                defender: data.defender,
                attacker: data.attacker,
                tests,
            })
        }
    }
}

/// Trains one model on the first `train_fraction` of `data` and reports its
/// accuracy on the rest.
pub fn train_model(
    spec: NetworkSpec,
    data: &LabeledDataset,
    training: &TrainingConfig,
    seed: u64,
) -> Result<(Network, f64)> {
    let (train, test) = data.split(training.train_fraction);
    let scaler = FeatureScaler::fit(&train.features)?;
    let net = Network::build(spec)?.with_scaler(scaler)?;
    let cfg = TrainConfig {
        learning_rate: training.learning_rate,
        batch_size: training.batch_size,
        epochs: training.epochs,
        seed,
        patience: training.patience,
    };
    let net = net.train_sgd(&train, &cfg)?;
    let acc = if test.is_empty() {
        nn::class_accuracy(&net, &train)?
    } else {
        nn::class_accuracy(&net, &test)?
    };
    Ok((net, acc))
}

fn mix(seed: u64, salt: u64) -> u64 {
    // SplitMix64 finalizer; keeps derived seeds decorrelated.
    let mut z = seed.wrapping_add(salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Workbench {
    pub fn build(cfg: &ScenarioConfig, seed: u64) -> Result<Self> {
        let synth = synthesize(cfg, seed)?;
        Workbench::from_synth(cfg, seed, synth)
    }

    pub fn from_synth(cfg: &ScenarioConfig, seed: u64, synth: SynthOutput) -> Result<Self> {
        let d = synth
            .defender
            .features
            .first()
            .map(Vec::len)
            .ok_or(Error::EmptyDataset)?;
        let (def_spec, sur_spec) = match cfg.domain {
            Domain::Power => (
                NetworkSpec::fdia_defender(d, mix(seed, 11)),
                NetworkSpec::fdia_surrogate(d, mix(seed, 12)),
            ),
            Domain::Water => (
                NetworkSpec::water_defender(d, mix(seed, 11)),
                NetworkSpec::water_surrogate(d, mix(seed, 12)),
            ),
        };
        let (def, sur) = rayon::join(
            || train_model(def_spec, &synth.defender, &cfg.training, mix(seed, 21)),
            || train_model(sur_spec, &synth.attacker, &cfg.training, mix(seed, 22)),
        );
        let (defender, defender_accuracy) = def?;
        let (surrogate, surrogate_accuracy) = sur?;
        let u_pool = synth
            .attacker
            .features
            .iter()
            .zip(&synth.attacker.labels)
            .filter(|(_, &l)| l == NORMAL)
            .map(|(x, _)| x.clone())
            .collect();
        Ok(Workbench {
            domain: cfg.domain,
            seed,
            grid: synth.grid,
            defender,
            surrogate,
            defender_accuracy,
            surrogate_accuracy,
            defender_data: synth.defender,
            attacker_data: synth.attacker,
            tests: synth.tests,
            u_pool,
        })
    }

    pub fn test_set(&self, case: usize) -> Result<&TestSet> {
        self.tests
            .iter()
            .find(|t| t.case == case)
            .ok_or(Error::InvalidCase(case))
    }

    /// The attacker's constraint set for a case.
    pub fn constraint(&self, case: usize) -> Result<ConstraintSet> {
        match self.domain {
            Domain::Power => {
                let t = self.test_set(case)?;
                self.grid
                    .as_ref()
                    .expect("power workbench has a grid")
                    .fdia_constraint(&t.compromised)
            }
            Domain::Water => water::scenario_constraints(case),
        }
    }

    /// Attacks every vector of the case's test set.
    pub fn run(
        &self,
        scenario: Scenario,
        case: usize,
        attack_cfg: &AttackConfig,
        deadline_ms: f64,
    ) -> Result<SeedOutcome> {
        attack_cfg.validate()?;
        let test = self.test_set(case)?;
        let cs = self.constraint(case)?;
        let model = if scenario.uses_surrogate() {
            &self.surrogate
        } else {
            &self.defender
        };
        if scenario.universal() && self.u_pool.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let clean_detected = test
            .attacked
            .iter()
            .map(|x| self.defender.predict(x).map(|p| p == ATTACK))
            .collect::<Result<Vec<bool>>>()?;

        let results: Vec<AttackResult> = test
            .attacked
            .par_iter()
            .enumerate()
            .map(|(i, m)| {
                let mv = MeasurementVector::new(m.clone(), test.compromised.clone())?;
                match scenario {
                    Scenario::Supreme => {
                        attack::supreme_attack(model, m, ATTACK, attack_cfg.step, attack_cfg.size)
                    }
                    Scenario::WhiteBox | Scenario::GrayBox1 => {
                        attack::known_measurement_attack(model, &mv, ATTACK, &cs, attack_cfg)
                    }
                    Scenario::GrayBox2 | Scenario::BlackBox => {
                        let mut rng = ChaCha8Rng::seed_from_u64(mix(attack_cfg.seed, self.seed));
                        rng.set_stream(i as u64);
                        let mu: Vec<Vec<f64>> = (0..attack_cfg.sample_count)
                            .map(|_| self.u_pool.choose(&mut rng).expect("non-empty pool").clone())
                            .collect();
                        attack::uni_adv_measur(
                            model,
                            &mu,
                            &mv,
                            attack_cfg.lambda_threshold,
                            ATTACK,
                            attack_cfg.max_itera,
                            &cs,
                            attack_cfg,
                        )
                    }
                }
            })
            .collect::<Result<_>>()?;

        let mut detected = 0usize;
        let mut evaded_l2 = Vec::new();
        let mut evaded_rel = Vec::new();
        let mut violations = 0usize;
        let mut residual_breaches = 0usize;
        let mut attacker_success = 0usize;
        let mut steps = 0usize;
        let mut times = Vec::with_capacity(results.len());
        for (i, r) in results.iter().enumerate() {
            let is_detected = self.defender.predict(&r.adversarial)? == ATTACK;
            if is_detected {
                detected += 1;
            } else {
                let clean = &test.clean[i];
                let diff: Vec<f64> = r.adversarial.iter().zip(clean).map(|(a, b)| a - b).collect();
                let l2 = linalg::norm2(&diff);
                evaded_l2.push(l2);
                evaded_rel.push(l2 / linalg::norm2(clean));
            }
            let mut breach = false;
            if let Some(grid) = &self.grid {
                let base_passed = !grid.detect_bad(&test.attacked[i])?;
                breach = base_passed && grid.detect_bad(&r.adversarial)?;
                residual_breaches += usize::from(breach);
            }
            if !satisfies(&cs, &test.attacked[i], r)? {
                violations += 1;
            } else if breach && scenario == Scenario::Supreme {
                // Counted once per example in the baseline's informational total.
                violations += 1;
            }
            attacker_success += usize::from(r.succeeded);
            steps += r.steps_used;
            times.push(r.elapsed);
        }
        let n = results.len();
        let (constraint_violations, residual_breaches, unconstrained_violations) =
            if scenario == Scenario::Supreme {
                (0, 0, Some(violations))
            } else {
                (violations, residual_breaches, None)
            };
        let report = SeedReport {
            seed: self.seed,
            compromised: test.compromised.clone(),
            defender_test_accuracy: self.defender_accuracy,
            surrogate_test_accuracy: self.surrogate_accuracy,
            clean_detection_accuracy: ratio(clean_detected.iter().filter(|&&b| b).count(), n),
            detection_accuracy: ratio(detected, n),
            examples: n,
            evaded: evaded_l2.len(),
            mean_l2: mean(&evaded_l2),
            relative_l2: mean(&evaded_rel),
            attacker_success_rate: ratio(attacker_success, n),
            mean_steps: steps as f64 / n.max(1) as f64,
            constraint_violations,
            residual_breaches,
            unconstrained_violations,
        };
        let timing = SeedTiming::from_durations(self.seed, &times, deadline_ms);
        Ok(SeedOutcome { report, timing })
    }
}

/// Whether an attack output keeps the constraint law and leaves `U` untouched.
fn satisfies(cs: &ConstraintSet, original: &[f64], r: &AttackResult) -> Result<bool> {
    let u = constraints::complement(&cs.compromised, original.len());
    if u.iter().any(|&i| r.perturbation[i] != 0.0) {
        return Ok(false);
    }
    match cs.kind {
        ConstraintKind::Equality => {
            let delta_c = constraints::subvector(&r.perturbation, &cs.compromised)?;
            let v = cs.phi.matvec(&delta_c)?;
            Ok(linalg::norm_inf(&v) < EQUALITY_TOL)
        }
        ConstraintKind::Inequality => {
            let m_c = constraints::subvector(&r.adversarial, &cs.compromised)?;
            Ok(cs.check_inequality(&m_c)?.is_empty())
        }
    }
}

fn ratio(a: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        a as f64 / n as f64
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Median of the values (average of the middle pair for even counts).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub compromised: Vec<usize>,
    pub defender_test_accuracy: f64,
    pub surrogate_test_accuracy: f64,
    /// Defender accuracy on the unperturbed test vectors.
    pub clean_detection_accuracy: f64,
    /// Defender accuracy on the adversarial vectors.
    pub detection_accuracy: f64,
    pub examples: usize,
    pub evaded: usize,
    /// Mean `‖M* − M_clean‖₂` over vectors the defender misses.
    pub mean_l2: Option<f64>,
    /// Same, divided by `‖M_clean‖₂`.
    pub relative_l2: Option<f64>,
    pub attacker_success_rate: f64,
    pub mean_steps: f64,
    pub constraint_violations: usize,
    /// Power only: outputs flagged by the residual test although their
    /// pre-attack vector passed.
    pub residual_breaches: usize,
    /// Supreme baseline only: outputs that break the physical law or (power)
    /// the residual test.
    pub unconstrained_violations: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedTiming {
    pub seed: u64,
    pub mean_time_ms: f64,
    pub median_time_ms: f64,
    pub max_time_ms: f64,
    pub deadline_misses: usize,
    #[serde(skip)]
    pub samples_ms: Vec<f64>,
}

impl SeedTiming {
    fn from_durations(seed: u64, times: &[Duration], deadline_ms: f64) -> Self {
        let ms: Vec<f64> = times.iter().map(|d| d.as_secs_f64() * 1e3).collect();
        SeedTiming {
            seed,
            mean_time_ms: mean(&ms).unwrap_or(0.0),
            median_time_ms: median(&ms).unwrap_or(0.0),
            max_time_ms: ms.iter().cloned().fold(0.0, f64::max),
            deadline_misses: ms.iter().filter(|&&t| t > deadline_ms).count(),
            samples_ms: ms,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub report: SeedReport,
    pub timing: SeedTiming,
}

/// Deterministic summary of a scenario over all seeds (medians across seeds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub domain: Domain,
    pub scenario: Scenario,
    pub case: usize,
    pub attack: AttackConfig,
    pub seeds: Vec<u64>,
    pub detection_accuracy: f64,
    pub clean_detection_accuracy: f64,
    pub defender_test_accuracy: f64,
    pub surrogate_test_accuracy: f64,
    pub mean_l2: Option<f64>,
    pub relative_l2: Option<f64>,
    pub examples: usize,
    pub constraint_violations: usize,
    pub residual_breaches: usize,
    pub per_seed: Vec<SeedReport>,
}

impl ScenarioReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// True when no emitted example broke its constraint or the residual test.
    pub fn invariants_hold(&self) -> bool {
        self.constraint_violations == 0 && self.residual_breaches == 0
    }
}

/// Wall-clock generation cost, kept apart from the deterministic report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub domain: Domain,
    pub scenario: Scenario,
    pub case: usize,
    pub deadline_ms: f64,
    /// Median over every generated example of every seed.
    pub median_time_ms: f64,
    pub mean_time_ms: f64,
    pub deadline_misses: usize,
    pub per_seed: Vec<SeedTiming>,
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub report: ScenarioReport,
    pub timing: TimingReport,
}

/// Combines per-seed outcomes into the scenario summaries.
pub fn aggregate(
    domain: Domain,
    scenario: Scenario,
    case: usize,
    attack: &AttackConfig,
    deadline_ms: f64,
    seeds: Vec<SeedOutcome>,
) -> ScenarioOutcome {
    let reports: Vec<SeedReport> = seeds.iter().map(|s| s.report.clone()).collect();
    let timings: Vec<SeedTiming> = seeds.into_iter().map(|s| s.timing).collect();
    let col = |f: fn(&SeedReport) -> f64| -> f64 {
        median(&reports.iter().map(f).collect::<Vec<_>>()).unwrap_or(0.0)
    };
    let opt_col = |f: fn(&SeedReport) -> Option<f64>| -> Option<f64> {
        median(&reports.iter().filter_map(f).collect::<Vec<_>>())
    };
    let report = ScenarioReport {
        domain,
        scenario,
        case,
        attack: attack.clone(),
        seeds: reports.iter().map(|r| r.seed).collect(),
        detection_accuracy: col(|r| r.detection_accuracy),
        clean_detection_accuracy: col(|r| r.clean_detection_accuracy),
        defender_test_accuracy: col(|r| r.defender_test_accuracy),
        surrogate_test_accuracy: col(|r| r.surrogate_test_accuracy),
        mean_l2: opt_col(|r| r.mean_l2),
        relative_l2: opt_col(|r| r.relative_l2),
        examples: reports.iter().map(|r| r.examples).sum(),
        constraint_violations: reports.iter().map(|r| r.constraint_violations).sum(),
        residual_breaches: reports.iter().map(|r| r.residual_breaches).sum(),
        per_seed: reports,
    };
    let all: Vec<f64> = timings.iter().flat_map(|t| t.samples_ms.iter().copied()).collect();
    let timing = TimingReport {
        domain,
        scenario,
        case,
        deadline_ms,
        median_time_ms: median(&all).unwrap_or(0.0),
        mean_time_ms: mean(&all).unwrap_or(0.0),
        deadline_misses: timings.iter().map(|t| t.deadline_misses).sum(),
        per_seed: timings,
    };
    ScenarioOutcome { report, timing }
}

/// Builds one workbench per seed (in parallel).
pub fn build_workbenches(cfg: &ScenarioConfig) -> Result<Vec<Workbench>> {
    cfg.seeds
        .par_iter()
        .map(|&seed| Workbench::build(cfg, seed))
        .collect()
}

/// Runs a scenario on prepared workbenches.
pub fn run_on(
    benches: &[Workbench],
    scenario: Scenario,
    case: usize,
    attack: &AttackConfig,
    deadline_ms: f64,
) -> Result<ScenarioOutcome> {
    let domain = benches
        .first()
        .map(|b| b.domain)
        .ok_or_else(|| Error::InvalidConfig("no workbenches".into()))?;
    let seeds = benches
        .iter()
        .map(|b| b.run(scenario, case, attack, deadline_ms))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(domain, scenario, case, attack, deadline_ms, seeds))
}

/// Synthesizes, trains and attacks for every configured seed.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioOutcome> {
    cfg.validate()?;
    let benches = build_workbenches(cfg)?;
    run_on(&benches, cfg.scenario, cfg.case, &cfg.attack, cfg.deadline_ms)
}

/// One row of a sweep CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub domain: Domain,
    pub scenario: Scenario,
    pub case: usize,
    pub lambda: f64,
    pub seed: u64,
    pub detection_accuracy: f64,
    pub mean_l2: Option<f64>,
    pub relative_l2: Option<f64>,
    pub mean_time_ms: f64,
    pub constraint_violations: usize,
}

/// Runs the configured scenario for every λ in `lambdas` and every case in
/// `cases`, one row per (case, λ, seed).
pub fn sweep_on(
    benches: &[Workbench],
    scenario: Scenario,
    cases: &[usize],
    lambdas: &[f64],
    base: &AttackConfig,
    deadline_ms: f64,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &case in cases {
        for &lambda in lambdas {
            let cfg = AttackConfig {
                lambda_threshold: lambda,
                ..base.clone()
            };
            for b in benches {
                let out = b.run(scenario, case, &cfg, deadline_ms)?;
                rows.push(SweepRow {
                    domain: b.domain,
                    scenario,
                    case,
                    lambda,
                    seed: b.seed,
                    detection_accuracy: out.report.detection_accuracy,
                    mean_l2: out.report.mean_l2,
                    relative_l2: out.report.relative_l2,
                    mean_time_ms: out.timing.mean_time_ms,
                    constraint_violations: out.report.constraint_violations,
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: std::io::Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(std::io::Error::other)?;
    }
    out.flush()?;
    Ok(())
}

/// Parses `start:stop:step` (inclusive) or a comma-separated list.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidConfig(format!("bad grid {spec:?}"));
    if spec.contains(':') {
        let parts: Vec<f64> = spec
            .split(':')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let [start, stop, step] = parts[..] else {
            return Err(bad());
        };
        if !(step > 0.0) || stop < start {
            return Err(bad());
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        // Round to kill accumulation noise such as 0.30000000000000004.
        Ok((0..=n)
            .map(|k| ((start + k as f64 * step) * 1e9).round() / 1e9)
            .collect())
    } else {
        spec.split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect()
    }
}

/// Text table with one row per report: attack, case, accuracy, L2, time.
pub fn render_table(rows: &[(ScenarioReport, Option<TimingReport>)]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<7} {:<10} {:>5} {:>8} {:>10} {:>8} {:>10} {:>6}",
        "domain", "attack", "case", "accu", "L2-norm", "rel-L2", "time(ms)", "viol"
    );
    for (r, t) in rows {
        let l2 = r.mean_l2.map_or("-".to_string(), |v| format!("{v:.3}"));
        let rel = r.relative_l2.map_or("-".to_string(), |v| format!("{v:.3}"));
        let time = t
            .as_ref()
            .map_or("-".to_string(), |t| format!("{:.2}", t.median_time_ms));
        let _ = writeln!(
            s,
            "{:<7} {:<10} {:>5} {:>7.1}% {:>10} {:>8} {:>10} {:>6}",
            r.domain.to_string(),
            r.scenario.to_string(),
            r.case,
            r.detection_accuracy * 100.0,
            l2,
            rel,
            time,
            r.constraint_violations
        );
    }
    s
}
