use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use physadv::harness::{self, Domain, Scenario, ScenarioConfig, ScenarioReport, TimingReport};
use physadv::{water, Error};

/// Constraint-aware adversarial examples against learned anomaly detectors.
#[derive(Parser, Debug)]
#[command(name = "physadv", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the synthetic datasets (and grid matrix) to a directory.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Train defender and surrogate models and save them as JSON.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "models")]
        out: PathBuf,
    },
    /// Run one attack scenario and write a JSON report.
    Attack {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenario: Option<Scenario>,
        #[arg(long)]
        case: Option<usize>,
        /// Report path; a `.timing.json` and a `.csv` are written next to it.
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
    },
    /// Sweep λ (and optionally cases) for a universal scenario; writes a CSV.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenario: Option<Scenario>,
        /// Cases to sweep, comma separated.
        #[arg(long, value_delimiter = ',')]
        case: Vec<usize>,
        /// `start:stop:step` or a comma-separated list.
        #[arg(long, default_value = "0.1:0.9:0.2")]
        lambda: String,
        #[arg(long, default_value = "sweep.csv")]
        out: PathBuf,
    },
    /// Render report JSON files as a table.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long)]
    domain: Option<Domain>,
    /// Seeds, comma separated.
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    /// JSON scenario configuration; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl Common {
    fn resolve(&self, scenario: Option<Scenario>, case: Option<usize>) -> physadv::Result<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(p) => ScenarioConfig::from_json_file(p)?,
            None => {
                let domain = self.domain.unwrap_or(Domain::Power);
                let case = case.unwrap_or(match domain {
                    Domain::Power => 8,
                    Domain::Water => 2,
                });
                ScenarioConfig::new(domain, scenario.unwrap_or(Scenario::WhiteBox), case)
            }
        };
        if let Some(d) = self.domain {
            if d != cfg.domain {
                cfg.attack = harness::default_attack(d);
                cfg.domain = d;
            }
        }
        if let Some(s) = scenario {
            cfg.scenario = s;
        }
        if let Some(c) = case {
            cfg.case = c;
        }
        if !self.seed.is_empty() {
            cfg.seeds = self.seed.clone();
        }
        Ok(cfg)
    }
}

enum Failure {
    Error(Error),
    Invariant(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Error(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invariant(msg)) => {
            eprintln!("invariant breach: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::DegenerateConstraint { .. } | Error::EmptyConstraint => ExitCode::from(3),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Synth { common, out } => synth(&common.resolve(None, None)?, &out),
        Command::Train { common, out } => train(&common.resolve(None, None)?, &out),
        Command::Attack {
            common,
            scenario,
            case,
            out,
        } => attack(&common.resolve(scenario, case)?, &out),
        Command::Sweep {
            common,
            scenario,
            case,
            lambda,
            out,
        } => {
            let first = case.first().copied();
            let mut cfg = common.resolve(scenario.or(Some(Scenario::BlackBox)), first)?;
            if cfg.lambda_grid.is_none() || lambda != "0.1:0.9:0.2" {
                cfg.lambda_grid = Some(harness::parse_grid(&lambda)?);
            }
            let cases = if case.is_empty() { vec![cfg.case] } else { case };
            sweep(&cfg, &cases, &out)
        }
        Command::Report { reports } => report(&reports),
    }
}

fn synth(cfg: &ScenarioConfig, out: &Path) -> Result<(), Failure> {
    fs::create_dir_all(out)?;
    for &seed in &cfg.seeds {
        let s = harness::synthesize(cfg, seed)?;
        let dir = out.join(format!("{}-seed{seed}", cfg.domain));
        fs::create_dir_all(&dir)?;
        let header = match cfg.domain {
            Domain::Water => water::dataset_header(),
            Domain::Power => Vec::new(),
        };
        s.defender.write_csv(dir.join("defender.csv"), &header)?;
        s.attacker.write_csv(dir.join("attacker.csv"), &header)?;
        if let Some(grid) = &s.grid {
            grid.save_h(dir.join("h.csv"))?;
        }
        for t in &s.tests {
            let mut comment = header.clone();
            comment.push(format!("compromised={:?}", t.compromised));
            let attacked = physadv::nn::LabeledDataset::new(
                t.attacked.clone(),
                vec![physadv::nn::ATTACK; t.attacked.len()],
            )?;
            attacked.write_csv(dir.join(format!("test-case{}.csv", t.case)), &comment)?;
            let clean = physadv::nn::LabeledDataset::new(
                t.clean.clone(),
                vec![physadv::nn::NORMAL; t.clean.len()],
            )?;
            clean.write_csv(dir.join(format!("clean-case{}.csv", t.case)), &comment)?;
            let cs = match (&s.grid, cfg.domain) {
                (Some(grid), Domain::Power) => grid.fdia_constraint(&t.compromised),
                _ => water::scenario_constraints(t.case),
            };
            match cs {
                Ok(cs) => cs.write_file(dir.join(format!("constraint-case{}.csv", t.case)))?,
                Err(e) => eprintln!("case {}: no constraint file ({e})", t.case),
            }
        }
        println!(
            "{}: defender {} records, attacker {} records, {} test sets",
            dir.display(),
            s.defender.len(),
            s.attacker.len(),
            s.tests.len()
        );
    }
    Ok(())
}

fn train(cfg: &ScenarioConfig, out: &Path) -> Result<(), Failure> {
    fs::create_dir_all(out)?;
    let benches = harness::build_workbenches(cfg)?;
    for b in &benches {
        let def = out.join(format!("{}-seed{}-defender.json", b.domain, b.seed));
        let sur = out.join(format!("{}-seed{}-surrogate.json", b.domain, b.seed));
        b.defender.save(&def)?;
        b.surrogate.save(&sur)?;
        println!(
            "seed {}: defender accuracy {:.4}, surrogate accuracy {:.4}",
            b.seed, b.defender_accuracy, b.surrogate_accuracy
        );
    }
    Ok(())
}

fn sidecar(out: &Path, ext: &str) -> PathBuf {
    let stem = out.file_stem().map_or("report".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.{ext}"))
}

fn attack(cfg: &ScenarioConfig, out: &Path) -> Result<(), Failure> {
    let outcome = harness::run_scenario(cfg)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(out, outcome.report.to_json())?;
    let timing = serde_json::to_string_pretty(&outcome.timing).expect("timing serializes");
    fs::write(sidecar(out, "timing.json"), timing)?;
    let mut w = csv::Writer::from_path(sidecar(out, "csv")).map_err(std::io::Error::other)?;
    w.write_record([
        "seed",
        "detection_accuracy",
        "mean_l2",
        "relative_l2",
        "median_time_ms",
        "deadline_misses",
        "constraint_violations",
    ])
    .map_err(std::io::Error::other)?;
    for (r, t) in outcome.report.per_seed.iter().zip(&outcome.timing.per_seed) {
        w.write_record([
            r.seed.to_string(),
            r.detection_accuracy.to_string(),
            r.mean_l2.map_or(String::new(), |v| v.to_string()),
            r.relative_l2.map_or(String::new(), |v| v.to_string()),
            t.median_time_ms.to_string(),
            t.deadline_misses.to_string(),
            r.constraint_violations.to_string(),
        ])
        .map_err(std::io::Error::other)?;
    }
    w.flush()?;
    print!(
        "{}",
        harness::render_table(&[(outcome.report.clone(), Some(outcome.timing.clone()))])
    );
    if outcome.timing.deadline_misses > 0 {
        eprintln!(
            "warning: {} examples exceeded the {} ms deadline",
            outcome.timing.deadline_misses, cfg.deadline_ms
        );
    }
    if !outcome.report.invariants_hold() {
        return Err(Failure::Invariant(format!(
            "{} constraint violations, {} residual breaches",
            outcome.report.constraint_violations, outcome.report.residual_breaches
        )));
    }
    Ok(())
}

fn sweep(cfg: &ScenarioConfig, cases: &[usize], out: &Path) -> Result<(), Failure> {
    cfg.validate()?;
    let lambdas = cfg.lambda_grid.clone().unwrap_or_else(|| vec![cfg.attack.lambda_threshold]);
    let benches = harness::build_workbenches(cfg)?;
    let rows = harness::sweep_on(&benches, cfg.scenario, cases, &lambdas, &cfg.attack, cfg.deadline_ms)?;
    harness::write_sweep_csv(&rows, fs::File::create(out)?)?;
    println!("{} rows written to {}", rows.len(), out.display());
    let breaches: usize = rows.iter().map(|r| r.constraint_violations).sum();
    if breaches > 0 {
        return Err(Failure::Invariant(format!("{breaches} constraint violations")));
    }
    Ok(())
}

fn report(paths: &[PathBuf]) -> Result<(), Failure> {
    let mut rows = Vec::new();
    // Sidecars sit next to their reports and are matched by shell globs.
    for p in paths.iter().filter(|p| !p.to_string_lossy().ends_with(".timing.json")) {
        let text = fs::read_to_string(p)?;
        let r: ScenarioReport =
            serde_json::from_str(&text).map_err(|e| Error::MalformedFile {
                path: p.clone(),
                reason: e.to_string(),
            })?;
        let timing = fs::read_to_string(sidecar(p, "timing.json"))
            .ok()
            .and_then(|t| serde_json::from_str::<TimingReport>(&t).ok());
        rows.push((r, timing));
    }
    print!("{}", harness::render_table(&rows));
    Ok(())
}
