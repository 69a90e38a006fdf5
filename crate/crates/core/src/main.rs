use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use mrac::matching::{solve_matching, MatchingError};
use mrac::output::write_bundle;
use mrac::poly::Polynomial;
use mrac::scenario::{self, Overrides, Theta0Mode};
use mrac::sim::{boeing_model, compute_metrics, run_scenario, ControllerKind};
use mrac::suite::{run_suite, SuiteName};

const EXIT_OK: u8 = 0;
const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Parser)]
#[command(name = "mrac", version, about = "Singularity-free MRAC simulation and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ControllerArg {
    Proposed,
    Baseline,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Explicit,
    Multipliers,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    PaperRepro,
    Properties,
    RelativeDegreeSweep,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or built-in scenario and write CSV, summary and
    /// config echo.
    Simulate {
        /// Path to a TOML scenario, or one of boeing-case-i, boeing-case-ii,
        /// boeing-baseline.
        scenario: String,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        t_final: Option<f64>,
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[arg(long, value_enum)]
        controller: Option<ControllerArg>,
        #[arg(long, value_enum)]
        theta0_mode: Option<ModeArg>,
    },
    /// Solve the matching equation for a plant file (or `boeing`) and print
    /// the ideal gains as JSON.
    Match { plant: String },
    /// Run a named batch of acceptance checks.
    Suite {
        #[arg(value_enum)]
        name: SuiteArg,
        /// Instances per relative degree in the sweep.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
}

/// Plant file for `match`: descending coefficients; `omega` defaults to
/// `(s+1)^(n-1)` and `rm` to `(s+1)^(n-m)`.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PlantSpec {
    p: Vec<f64>,
    z: Vec<f64>,
    kp: f64,
    omega: Option<Vec<f64>>,
    rm: Option<Vec<f64>>,
}

fn simulate(scenario_arg: &str, overrides: Overrides, out_dir: PathBuf) -> u8 {
    let mut loaded = match scenario::load(scenario_arg) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let cfg = match loaded.resolve(&overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let record = match run_scenario(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let metrics = compute_metrics(&record);
    let mut echo = loaded.file.clone();
    echo.canonicalize();
    match write_bundle(&out_dir, &record, &metrics, &echo) {
        Ok(b) => {
            println!("{}", b.csv.display());
            println!("{}", b.summary.display());
            println!("{}", b.config_echo.display());
        }
        Err(e) => {
            eprintln!("error: cannot write outputs to {}: {e}", out_dir.display());
            return EXIT_CONFIG;
        }
    }
    println!(
        "tracking_ratio {:.6e}  sigma_switch_count {}  rows {}",
        metrics.tracking_ratio,
        metrics.sigma_switch_count,
        record.samples.len()
    );
    match record.abort {
        Some(a) => {
            eprintln!("run aborted at t = {}: {}", a.t, a.reason);
            EXIT_RUNTIME
        }
        None => EXIT_OK,
    }
}

fn load_plant(arg: &str) -> Result<(Polynomial, Polynomial, f64, Polynomial, Polynomial), String> {
    if arg == "boeing" && !std::path::Path::new(arg).exists() {
        let cfg = mrac::sim::boeing_scenario(mrac::sim::BoeingCase::I);
        let p = boeing_model();
        return Ok((p.p, p.z, p.kp, cfg.omega, cfg.reference.rm));
    }
    let text = std::fs::read_to_string(arg).map_err(|e| format!("{arg}: {e}"))?;
    let spec: PlantSpec = toml::from_str(&text).map_err(|e| {
        let line = e.span().map(|s| text[..s.start].matches('\n').count() + 1);
        match line {
            Some(l) => format!("{arg}:{l}: {}", e.message()),
            None => format!("{arg}: {}", e.message()),
        }
    })?;
    if spec.p.is_empty() || spec.z.is_empty() {
        return Err(format!("{arg}: p and z need at least one coefficient"));
    }
    let p = Polynomial::from_descending(&spec.p);
    let z = Polynomial::from_descending(&spec.z);
    let n = p.degree();
    let m = z.degree();
    let omega = spec
        .omega
        .map(|c| Polynomial::from_descending(&c))
        .unwrap_or_else(|| Polynomial::binomial_power(1.0, n.saturating_sub(1)));
    let rm = spec
        .rm
        .map(|c| Polynomial::from_descending(&c))
        .unwrap_or_else(|| Polynomial::binomial_power(1.0, n.saturating_sub(m)));
    Ok((p, z, spec.kp, omega, rm))
}

fn match_command(arg: &str) -> u8 {
    let (p, z, kp, omega, rm) = match load_plant(arg) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    match solve_matching(&p, &z, kp, &omega, &rm) {
        Ok(g) => {
            println!("{}", serde_json::to_string_pretty(&g).expect("gains serialize"));
            EXIT_OK
        }
        Err(e @ MatchingError::Singular { .. }) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}

fn suite_command(name: SuiteArg, seeds: u64) -> u8 {
    let name = match name {
        SuiteArg::PaperRepro => SuiteName::PaperRepro,
        SuiteArg::Properties => SuiteName::Properties,
        SuiteArg::RelativeDegreeSweep => SuiteName::RelativeDegreeSweep,
    };
    let results = run_suite(name, seeds);
    for r in &results {
        println!("{}", r.line());
    }
    let passed = results.iter().filter(|r| r.passed).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed == results.len() {
        EXIT_OK
    } else {
        EXIT_RUNTIME
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Simulate { scenario, dt, t_final, stride, out_dir, controller, theta0_mode } => {
            let overrides = Overrides {
                dt,
                t_final,
                stride,
                controller: controller.map(|c| match c {
                    ControllerArg::Proposed => ControllerKind::Proposed,
                    ControllerArg::Baseline => ControllerKind::Baseline,
                }),
                theta0_mode: theta0_mode.map(|m| match m {
                    ModeArg::Explicit => Theta0Mode::Explicit,
                    ModeArg::Multipliers => Theta0Mode::Multipliers,
                }),
            };
            simulate(&scenario, overrides, out_dir)
        }
        Command::Match { plant } => match_command(&plant),
        Command::Suite { name, seeds } => suite_command(name, seeds),
    };
    ExitCode::from(code)
}
