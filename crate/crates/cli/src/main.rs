use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;
use taco_cli::{cmd_run, cmd_sweep, cmd_validate, parse_policies, CliError, Overrides};
use taco_core::validate::Suite;

/// Two-timescale virtual-twin placement simulator.
///
/// Log verbosity follows the HDT_LOG environment variable (error, warn,
/// info, debug, trace); the default is warn.
#[derive(Parser)]
#[command(name = "taco", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum RoundZ {
    Threshold,
    Probabilistic,
}

#[derive(Clone, Copy, ValueEnum)]
enum PathlossSign {
    Physical,
    Literal,
}

#[derive(clap::Args)]
struct Common {
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Rounding of the relaxed offloading choice.
    #[arg(long, value_enum)]
    round_z: Option<RoundZ>,
    /// Sign of the path-loss exponent.
    #[arg(long, value_enum)]
    pathloss_sign: Option<PathlossSign>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            round_z: self.round_z.map(|r| match r {
                RoundZ::Threshold => "threshold".into(),
                RoundZ::Probabilistic => "probabilistic".into(),
            }),
            pathloss_sign: self.pathloss_sign.map(|p| match p {
                PathlossSign::Physical => "physical".into(),
                PathlossSign::Literal => "literal".into(),
            }),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Runs one scenario and writes slots.csv and summary.csv.
    Run {
        /// Scenario config (TOML).
        config: PathBuf,
        /// Comma-separated policies: taco, cro, lot, all_local.
        #[arg(long, default_value = "taco,cro,lot")]
        policy: String,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Runs a parameter sweep described by a TOML spec.
    Sweep {
        spec: PathBuf,
        /// Parallel runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Output directory; overrides the spec.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Runs invariant suites; exits with 3 if any check fails.
    Validate {
        /// Suites to run; all of them when omitted.
        #[arg(long = "suite", value_parser = parse_suite)]
        suites: Vec<Suite>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn parse_suite(s: &str) -> Result<Suite, String> {
    s.parse()
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, policy, out, common } => {
            let policies = parse_policies(&policy)?;
            cmd_run(&config, &policies, &out, &common.overrides())?;
            println!("wrote {} and {}", out.join("slots.csv").display(), out.join("summary.csv").display());
        }
        Command::Sweep { spec, jobs, out, common } => {
            let rows = cmd_sweep(&spec, jobs, out.as_deref(), &common.overrides())?;
            let ok = rows.iter().filter(|r| r.metrics.is_some()).count();
            println!("{ok}/{} sweep rows succeeded", rows.len());
        }
        Command::Validate { suites, seed } => {
            let suites = if suites.is_empty() { Suite::ALL.to_vec() } else { suites };
            cmd_validate(&suites, seed)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HDT_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { taco_cli::EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
