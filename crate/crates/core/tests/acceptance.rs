//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

use std::time::Instant;

use physadv::harness::{
    self, Domain, Scenario, ScenarioConfig, ScenarioOutcome, ScenarioReport, TimingReport, Workbench,
};
use physadv::linalg::{self, Matrix, DEFAULT_PIVOT_TOL};
use physadv::nn::{LayerSpec, Network, NetworkSpec};
use physadv::powergrid::GridSystem;
use physadv::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const EQUALITY_TOL: f64 = 1e-6;
const RESIDUAL_TOL: f64 = 1e-8;
const RESIDUAL_PAIRS: usize = 100;
const NULL_SPACE_TOL: f64 = 1e-9;
const NULL_SPACE_CASES: usize = 200;
const GRADIENT_TOL: f64 = 1e-4;
const GRADIENT_CASES: usize = 50;
const FD_STEP: f64 = 1e-5;
const WHITE_BOX_MAX: f64 = 0.10;
const MIN_DEFENDER_ACCURACY: f64 = 0.95;
const BLACK_BOX_MAX_POWER: f64 = 0.50;
const BLACK_BOX_MAX_WATER: f64 = 0.20;
const LAMBDAS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
const TIME_BUDGET_MS: f64 = 2000.0;
const TOTAL_BUDGET_S: f64 = 600.0;

#[derive(Default)]
struct Gate {
    failures: usize,
    lines: Vec<(usize, String)>,
}

impl Gate {
    fn record(&mut self, n: usize, name: &str, pass: bool, detail: String) {
        let verdict = if pass { "PASS" } else { "FAIL" };
        let line = format!("criterion {n} [{name}]: {verdict}: {detail}");
        println!("{line}");
        self.lines.push((n, line));
        if !pass {
            self.failures += 1;
        }
    }
}

struct Run {
    report: ScenarioReport,
    timing: TimingReport,
}

impl From<ScenarioOutcome> for Run {
    fn from(o: ScenarioOutcome) -> Self {
        Run {
            report: o.report,
            timing: o.timing,
        }
    }
}

fn cases(domain: Domain) -> Vec<usize> {
    match domain {
        Domain::Power => vec![8, 9, 10],
        Domain::Water => vec![2, 5, 7],
    }
}

fn run_all(domain: Domain, benches: &[Workbench]) -> Vec<Run> {
    let cfg = ScenarioConfig::new(domain, Scenario::WhiteBox, cases(domain)[0]);
    let mut runs = Vec::new();
    for case in cases(domain) {
        for scenario in Scenario::ALL {
            let out = harness::run_on(benches, scenario, case, &cfg.attack, cfg.deadline_ms)
                .expect("scenario run");
            runs.push(out.into());
        }
    }
    runs
}

fn find(runs: &[Run], domain: Domain, scenario: Scenario, case: usize) -> &Run {
    runs.iter()
        .find(|r| r.report.domain == domain && r.report.scenario == scenario && r.report.case == case)
        .expect("run present")
}

fn random_phi(rng: &mut ChaCha8Rng) -> Matrix {
    let k = rng.random_range(1..=5);
    let r = rng.random_range(2..=8);
    let mut rows: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..r).map(|_| rng.random_range(-3..=3) as f64).collect())
        .collect();
    if rng.random_bool(0.5) {
        // Append a dependent row.
        let (a, b) = (rng.random_range(0..k), rng.random_range(0..k));
        let s = rng.random_range(-2.0..2.0);
        let row: Vec<f64> = rows[a].iter().zip(&rows[b]).map(|(x, y)| x + s * y).collect();
        rows.push(row);
    }
    Matrix::from_rows(&rows).unwrap()
}

fn criterion_null_space(gate: &mut Gate) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0003);
    let mut worst = 0.0f64;
    let mut bad_dim = 0;
    for _ in 0..NULL_SPACE_CASES {
        let phi = random_phi(&mut rng);
        let rank = linalg::rank(&phi, DEFAULT_PIVOT_TOL);
        match linalg::dependency(&phi, DEFAULT_PIVOT_TOL) {
            Ok(dep) => {
                let basis = dep.null_space_basis();
                if basis.cols() != phi.cols() - rank {
                    bad_dim += 1;
                }
                for j in 0..basis.cols() {
                    worst = worst.max(linalg::norm_inf(&phi.matvec(&basis.column(j)).unwrap()));
                }
                // Random combination of basis columns.
                let coef: Vec<f64> = (0..basis.cols()).map(|_| rng.random_range(-5.0..5.0)).collect();
                let x = basis.matvec(&coef).unwrap();
                let scale = 1.0 + linalg::norm_inf(&x);
                worst = worst.max(linalg::norm_inf(&phi.matvec(&x).unwrap()) / scale);
            }
            Err(Error::DegenerateConstraint { .. }) => {
                if rank != phi.cols() {
                    bad_dim += 1;
                }
            }
            Err(Error::EmptyConstraint) => {
                if rank != 0 {
                    bad_dim += 1;
                }
            }
            Err(e) => panic!("unexpected {e}"),
        }
    }
    gate.record(
        3,
        "null space",
        worst < NULL_SPACE_TOL && bad_dim == 0,
        format!("{NULL_SPACE_CASES} instances, max |Φb| {worst:.2e}, dimension mismatches {bad_dim}"),
    );
}

fn criterion_gradient(gate: &mut Gate) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0004);
    let mut worst = 0.0f64;
    for case in 0..GRADIENT_CASES {
        let d = rng.random_range(2..12);
        let depth = rng.random_range(1..4);
        let mut layers: Vec<LayerSpec> = (0..depth)
            .map(|_| LayerSpec::relu(rng.random_range(2..16)).dropout(rng.random_range(0.0..0.5)))
            .collect();
        layers.push(LayerSpec::softmax(2));
        let net = Network::build(NetworkSpec {
            input_dim: d,
            layers,
            seed: case as u64,
        })
        .unwrap();
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let label = rng.random_range(0..2);
        let g = net.input_gradient(&x, label).unwrap();
        for i in 0..d {
            let (mut up, mut down) = (x.clone(), x.clone());
            up[i] += FD_STEP;
            down[i] -= FD_STEP;
            let fd = (net.loss(&up, label).unwrap() - net.loss(&down, label).unwrap()) / (2.0 * FD_STEP);
            let denom = g[i].abs().max(fd.abs()).max(1e-6);
            worst = worst.max((g[i] - fd).abs() / denom);
        }
    }
    gate.record(
        4,
        "gradient fidelity",
        worst < GRADIENT_TOL,
        format!("{GRADIENT_CASES} nets, max relative error {worst:.2e}"),
    );
}

fn residual_pairs(grid: &GridSystem) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0002);
    let mut worst = 0.0f64;
    for _ in 0..RESIDUAL_PAIRS {
        let x: Vec<f64> = (0..grid.states()).map(|_| rng.random_range(50.0..150.0)).collect();
        let mut z = grid.h.matvec(&x).unwrap();
        z.iter_mut().for_each(|v| *v += rng.random_range(-2.0..2.0));
        let c: Vec<f64> = (0..grid.states()).map(|_| rng.random_range(-40.0..40.0)).collect();
        let a = grid.make_fdia_vector(&c).unwrap();
        let za: Vec<f64> = z.iter().zip(&a).map(|(p, q)| p + q).collect();
        let diff = (grid.residual_norm(&za).unwrap() - grid.residual_norm(&z).unwrap()).abs();
        worst = worst.max(diff);
    }
    worst
}

fn main() {
    let start = Instant::now();
    let mut gate = Gate::default();

    criterion_null_space(&mut gate);
    criterion_gradient(&mut gate);

    let power_cfg = ScenarioConfig::new(Domain::Power, Scenario::WhiteBox, 8);
    let water_cfg = ScenarioConfig::new(Domain::Water, Scenario::WhiteBox, 2);
    let power = harness::build_workbenches(&ScenarioConfig {
        seeds: SEEDS.to_vec(),
        ..power_cfg.clone()
    })
    .expect("power workbenches");
    let water = harness::build_workbenches(&ScenarioConfig {
        seeds: SEEDS.to_vec(),
        ..water_cfg.clone()
    })
    .expect("water workbenches");
    println!("workbenches ready after {:.1} s", start.elapsed().as_secs_f64());

    let mut runs = run_all(Domain::Power, &power);
    runs.extend(run_all(Domain::Water, &water));

    // Water black-box λ sweep, one run per case and λ.
    let mut sweep: Vec<(usize, f64, Run)> = Vec::new();
    for case in cases(Domain::Water) {
        for lambda in LAMBDAS {
            let attack = physadv::attack::AttackConfig {
                lambda_threshold: lambda,
                ..water_cfg.attack.clone()
            };
            let out = harness::run_on(&water, Scenario::BlackBox, case, &attack, water_cfg.deadline_ms)
                .expect("sweep run");
            sweep.push((case, lambda, out.into()));
        }
    }

    let rows: Vec<(ScenarioReport, Option<TimingReport>)> = runs
        .iter()
        .map(|r| (r.report.clone(), Some(r.timing.clone())))
        .collect();
    print!("{}", harness::render_table(&rows));

    // 1. Constraint soundness over every constrained run.
    let all_runs = runs.iter().chain(sweep.iter().map(|(_, _, r)| r));
    let (mut examples, mut violations) = (0, 0);
    for r in all_runs.clone().filter(|r| r.report.scenario != Scenario::Supreme) {
        examples += r.report.examples;
        violations += r.report.constraint_violations;
    }
    gate.record(
        1,
        "constraint soundness",
        violations == 0 && examples > 0,
        format!("{violations} violations in {examples} adversarial examples (equality tol {EQUALITY_TOL:e})"),
    );

    // 2. Residual stealth.
    let grid = power[0].grid.as_ref().expect("power grid");
    let worst = residual_pairs(grid);
    let breaches: usize = runs
        .iter()
        .filter(|r| r.report.domain == Domain::Power)
        .map(|r| r.report.residual_breaches)
        .sum();
    gate.record(
        2,
        "residual stealth",
        worst < RESIDUAL_TOL && breaches == 0,
        format!("{RESIDUAL_PAIRS} pairs, max |Δresidual| {worst:.2e}; {breaches} constrained power examples flagged"),
    );

    // 3 and 4 ran first.

    // 5. White-box efficacy on the desk scenarios.
    let wp = &find(&runs, Domain::Power, Scenario::WhiteBox, 8).report;
    let ww = &find(&runs, Domain::Water, Scenario::WhiteBox, 2).report;
    let pass5 = wp.detection_accuracy <= WHITE_BOX_MAX
        && ww.detection_accuracy <= WHITE_BOX_MAX
        && wp.defender_test_accuracy >= MIN_DEFENDER_ACCURACY
        && ww.defender_test_accuracy >= MIN_DEFENDER_ACCURACY;
    gate.record(
        5,
        "white-box efficacy",
        pass5,
        format!(
            "power |C|=8 detection {:.1}% (defender {:.1}%), water case 2 detection {:.1}% (defender {:.1}%)",
            100.0 * wp.detection_accuracy,
            100.0 * wp.defender_test_accuracy,
            100.0 * ww.detection_accuracy,
            100.0 * ww.defender_test_accuracy
        ),
    );

    // 6. Black-box efficacy on every case.
    let mut pass6 = true;
    let mut parts = Vec::new();
    for (domain, limit) in [(Domain::Power, BLACK_BOX_MAX_POWER), (Domain::Water, BLACK_BOX_MAX_WATER)] {
        for case in cases(domain) {
            let r = &find(&runs, domain, Scenario::BlackBox, case).report;
            pass6 &= r.detection_accuracy <= limit;
            parts.push(format!("{domain} {case}: {:.1}%", 100.0 * r.detection_accuracy));
        }
    }
    gate.record(6, "black-box efficacy", pass6, parts.join(", "));

    // 7. λ trend on the water black-box sweep.
    let mut pass7 = true;
    let mut parts = Vec::new();
    for case in cases(Domain::Water) {
        let at = |l: f64| {
            sweep
                .iter()
                .find(|(c, lam, _)| *c == case && *lam == l)
                .map(|(_, _, r)| r.report.detection_accuracy)
                .unwrap()
        };
        let (lo, hi) = (at(LAMBDAS[0]), at(LAMBDAS[LAMBDAS.len() - 1]));
        pass7 &= hi >= lo;
        let curve: Vec<String> = LAMBDAS.iter().map(|&l| format!("{:.1}", 100.0 * at(l))).collect();
        parts.push(format!("case {case}: [{}]%", curve.join(", ")));
    }
    gate.record(7, "lambda trend", pass7, parts.join("; "));

    // 8. Time budget.
    let slowest = all_runs
        .map(|r| r.timing.median_time_ms)
        .fold(0.0f64, f64::max);
    gate.record(
        8,
        "time budget",
        slowest < TIME_BUDGET_MS,
        format!("slowest scenario median {slowest:.2} ms per example"),
    );

    // 9. Determinism: fresh workbenches, identical config, byte-identical JSON.
    let det_cfg = ScenarioConfig {
        seeds: vec![1, 2],
        ..ScenarioConfig::new(Domain::Water, Scenario::BlackBox, 7)
    };
    let first = harness::run_scenario(&det_cfg).expect("first run").report.to_json();
    let second = harness::run_scenario(&det_cfg).expect("second run").report.to_json();
    let power_det = ScenarioConfig {
        seeds: vec![1, 2],
        ..ScenarioConfig::new(Domain::Power, Scenario::GrayBox2, 8)
    };
    let p1 = harness::run_scenario(&power_det).expect("first run").report.to_json();
    let p2 = harness::run_scenario(&power_det).expect("second run").report.to_json();
    gate.record(
        9,
        "determinism",
        first == second && p1 == p2,
        format!(
            "water black-box {} bytes, power gray-box2 {} bytes",
            first.len(),
            p1.len()
        ),
    );

    let elapsed = start.elapsed().as_secs_f64();
    let within = elapsed <= TOTAL_BUDGET_S;
    println!(
        "acceptance runtime {elapsed:.1} s ({} the {TOTAL_BUDGET_S} s budget)",
        if within { "within" } else { "over" }
    );
    if !within {
        gate.failures += 1;
    }
    println!("\nsummary:");
    gate.lines.sort();
    for (_, line) in &gate.lines {
        println!("  {line}");
    }
    if gate.failures > 0 {
        println!("{} criteria failed", gate.failures);
        std::process::exit(1);
    }
}
