use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use krac_bench::experiment::{predict_all, run_bench, BenchConfig};
use krac_bench::formulas::{Params, Profile};
use krac_bench::report::{emit, Format};
use krac_bench::script::run_experiment;
use krac_core::scenario::BehaviorKind;
use krac_core::Mechanism;

#[derive(Parser)]
#[command(name = "krac", version, about = "Overhead experiments for k-resilient DHT access control")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct ModelArgs {
    #[arg(long, default_value_t = 20)]
    k: u64,
    /// ZKP rounds per authentication.
    #[arg(long, default_value_t = 20)]
    n: u64,
    /// ACL items per value, owner included.
    #[arg(long = "acl-size", default_value_t = 10)]
    acl_size: u64,
    /// Messages per request/reply exchange.
    #[arg(long, default_value_t = 2)]
    y: u64,
}

impl ModelArgs {
    fn params(&self) -> Params {
        Params {
            k: self.k,
            n: self.n,
            a: self.acl_size,
            y: self.y,
        }
    }
}

#[derive(clap::Args)]
struct Output {
    #[arg(long, default_value = "csv", value_parser = parse::<Format>)]
    format: Format,
    /// Destination file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Measure the standard workload on the simulator.
    Bench {
        /// One mechanism; all three when omitted.
        #[arg(long, value_parser = parse::<Mechanism>)]
        mechanism: Option<Mechanism>,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 128)]
        peers: usize,
        /// Subverted peers, placed at random.
        #[arg(long, default_value_t = 0)]
        adversary: usize,
        #[arg(long, value_delimiter = ',', default_value = "deny", value_parser = parse::<BehaviorKind>)]
        behavior: Vec<BehaviorKind>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        trials: u64,
        #[command(flatten)]
        output: Output,
    },
    /// Evaluate the analytic model.
    Predict {
        #[arg(long, default_value = "paper", value_parser = parse::<Profile>)]
        profile: Profile,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        output: Output,
    },
    /// Run a scenario script; exits non-zero if any assertion fails.
    Run {
        script: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Also write the measured rows.
        #[arg(long, value_parser = parse::<Format>)]
        format: Option<Format>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse<T: std::str::FromStr>(s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| e.to_string())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(message) => {
            eprintln!("krac: {message}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Cmd::Bench {
            mechanism,
            model,
            peers,
            adversary,
            behavior,
            seed,
            trials,
            output,
        } => {
            let config = BenchConfig {
                mechanisms: mechanism.map_or(Mechanism::ALL.to_vec(), |m| vec![m]),
                params: model.params(),
                peers,
                adversaries: adversary,
                behaviors: behavior,
                seed,
                trials,
            };
            let report = run_bench(&config).map_err(|e| e.to_string())?;
            emit(&report, output.format, output.out.as_deref()).map_err(|e| e.to_string())?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Predict { profile, model, output } => {
            let report = predict_all(profile, &model.params()).map_err(|e| e.to_string())?;
            emit(&report, output.format, output.out.as_deref()).map_err(|e| e.to_string())?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Run {
            script,
            model,
            seed,
            format,
            out,
        } => {
            let text = std::fs::read_to_string(&script).map_err(|e| format!("{}: {e}", script.display()))?;
            let result = run_experiment(&text, &model.params(), seed).map_err(|e| e.to_string())?;
            for a in &result.asserts {
                let verdict = if a.passed { "ok  " } else { "FAIL" };
                println!("{verdict} line {}: {} ({})", a.line, a.text, a.detail);
            }
            if let Some(digest) = &result.store_digest {
                println!("store {digest}");
            }
            if let Some(format) = format {
                emit(&result.report, format, out.as_deref()).map_err(|e| e.to_string())?;
            }
            Ok(if result.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}
