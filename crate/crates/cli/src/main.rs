//! `ccepe`: run experiments, verification suites, curve dumps and ratio
//! sweeps. Exit status 0 on success, 1 on a property violation, 2 on a
//! configuration or I/O error.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ccepe_core::harness::curve::{emit_curve, emit_curve_file, read_profile};
use ccepe_core::harness::ratio::{parse_params, parse_range, run_sweep, RatioSweep};
use ccepe_core::harness::verify::{
    run_suite, Mutation, Suite, SuiteReport, VerifyOptions, DEFAULT_SEED,
};
use ccepe_core::harness::{run_experiment, EnvironmentSpec, ExperimentConfig, ValueFamily};
use ccepe_core::{Error, MechanismKind};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "ccepe",
    version,
    about = "Prior-free revenue experiments for downward-closed permutation environments"
)]
struct Cli {
    /// Directory for result files.
    #[arg(
        long,
        global = true,
        env = "CCEPE_OUTPUT_DIR",
        default_value = "results"
    )]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run { config: PathBuf },
    /// Run a verification suite (or `all`).
    Verify {
        suite: String,
        /// Random instances on top of the regression corpus.
        #[arg(long, default_value_t = 100)]
        budget: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Inject a defect (negative control): `corrupt-envelope`.
        #[arg(long)]
        mutate: Option<String>,
    },
    /// Dump true and estimated revenue curves of a profile as CSV.
    Curve {
        profile: PathBuf,
        #[arg(long)]
        sigma: f64,
        /// `c,alpha,m`.
        #[arg(long)]
        params: String,
        /// Output file; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Sweep the approximation ratio over instance sizes.
    Ratio {
        /// `c,alpha,m[,p]`.
        #[arg(long, default_value = "1.666,2.734,12,0.627")]
        params: String,
        /// uniform, power_law, bimodal or equal_values.
        #[arg(long)]
        family: String,
        /// Inclusive size range `a..b`.
        #[arg(long)]
        n_range: String,
        /// digital_goods, k_unit:K or explicit:SETS,MAX_SIZE.
        #[arg(long, default_value = "digital_goods")]
        env: String,
        #[arg(long, default_value = "ccepe")]
        mechanism: String,
        /// Instances per size.
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 2000)]
        mc_trials: usize,
        /// Output file, relative to the output directory.
        #[arg(long, default_value = "ratio.csv")]
        output: PathBuf,
    },
}

enum Outcome {
    Pass,
    Violation,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Violation) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<Outcome, Error> {
    match &cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(config)?;
            let s = run_experiment(&cfg, &cli.out_dir)?;
            println!(
                "{}: {} instances, mean ratio {}, max ratio {}, bound {:.3}, violations {} -> {}",
                cfg.name,
                s.rows,
                fmt_opt(s.mean_ratio),
                fmt_opt(s.max_ratio),
                s.bound,
                s.violations,
                s.path.display()
            );
            Ok(verdict(s.passed()))
        }
        Command::Verify {
            suite,
            budget,
            seed,
            mutate,
        } => {
            let suites: Vec<Suite> = if suite == "all" {
                Suite::ALL.to_vec()
            } else {
                vec![suite.parse()?]
            };
            let opts = VerifyOptions {
                budget: *budget,
                seed: *seed,
                mutation: mutate.as_deref().map(str::parse::<Mutation>).transpose()?,
            };
            let mut ok = true;
            for s in suites {
                let report = run_suite(s, &opts)?;
                print_report(&report);
                if !report.passed() {
                    ok = false;
                    let path = cli.out_dir.join(format!("counterexample-{s}.json"));
                    write_json(&path, &report)?;
                    println!("  counterexample written to {}", path.display());
                }
            }
            Ok(verdict(ok))
        }
        Command::Curve {
            profile,
            sigma,
            params,
            output,
        } => {
            let params = parse_params(params)?;
            let v = read_profile(profile)?;
            match output {
                Some(p) => emit_curve_file(&v, &params, *sigma, &cli.out_dir.join(p))?,
                None => {
                    let stdout = io::stdout();
                    emit_curve(&v, &params, *sigma, stdout.lock())?;
                }
            }
            Ok(Outcome::Pass)
        }
        Command::Ratio {
            params,
            family,
            n_range,
            env,
            mechanism,
            instances,
            seed,
            mc_trials,
            output,
        } => {
            let sweep = RatioSweep {
                params: parse_params(params)?,
                mechanism: mechanism.parse::<MechanismKind>()?,
                family: ValueFamily::named(family)?,
                environment: parse_env(env)?,
                n_range: parse_range(n_range)?,
                instances: *instances,
                seed: *seed,
                mc_trials: (*mc_trials).max(1),
            };
            let rep = run_sweep(&sweep, &cli.out_dir.join(output))?;
            println!(
                "max ratio {}, violations {} -> {}",
                fmt_opt(rep.max_ratio),
                rep.violations,
                rep.path.display()
            );
            Ok(verdict(rep.passed()))
        }
    }
}

fn verdict(ok: bool) -> Outcome {
    if ok {
        Outcome::Pass
    } else {
        Outcome::Violation
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "undefined".to_string(), |r| format!("{r:.4}"))
}

fn parse_env(text: &str) -> Result<EnvironmentSpec, Error> {
    let bad = || {
        Error::Config(format!(
            "unknown environment `{text}` (digital_goods, k_unit:K or explicit:SETS,MAX_SIZE)"
        ))
    };
    let (kind, arg) = text.split_once(':').unwrap_or((text, ""));
    match kind {
        "digital_goods" if arg.is_empty() => Ok(EnvironmentSpec::DigitalGoods),
        "k_unit" => Ok(EnvironmentSpec::KUnit {
            k: arg.parse().map_err(|_| bad())?,
        }),
        "explicit" => {
            let (sets, max_size) = arg.split_once(',').ok_or_else(bad)?;
            Ok(EnvironmentSpec::RandomExplicit {
                components: 1,
                sets: sets.parse().map_err(|_| bad())?,
                max_size: max_size.parse().map_err(|_| bad())?,
                permuted: true,
            })
        }
        _ => Err(bad()),
    }
}

fn print_report(r: &SuiteReport) {
    let status = if r.passed() { "PASS" } else { "FAIL" };
    println!(
        "{status} {}: {} regression + {} random cases, {} checks",
        r.suite, r.regression_cases, r.random_cases, r.checks
    );
    if let Some(c) = &r.counterexample {
        println!("  {}: {}", c.property, c.reason);
    }
}

fn write_json(path: &Path, value: &SuiteReport) -> Result<(), Error> {
    let io_err = |e: io::Error| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err)?;
    }
    let mut f = fs::File::create(path).map_err(io_err)?;
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| Error::Config(e.to_string()))?;
    f.write_all(b"\n").map_err(io_err)
}
