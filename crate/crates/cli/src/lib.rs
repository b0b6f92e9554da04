//! Command-line front end: configuration, subcommands and artifact
//! manifests. `run` is the whole program minus process exit.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod reference;

use std::ffi::OsString;
use std::io::Write as _;
use std::path::PathBuf;

use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::config::{parse_override, RunConfig};
use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "rwtkan",
    version,
    about = "Reservoir water temperature models: tree ensembles, MLP, Shapley attribution and KAN equations",
    arg_required_else_help = true,
    after_help = "Configuration files hold `key = value` lines. Run `rwtkan keys` for the accepted keys.\nExit codes: 0 ok, 1 runtime error, 2 usage error."
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// Configuration file of `key = value` lines
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory (key `out`)
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Base seed (key `seed`)
    #[arg(long)]
    seed: Option<u64>,
    /// Override any configuration key; repeatable, later wins
    #[arg(long = "param", value_name = "KEY=VALUE")]
    params: Vec<String>,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// rf, gbm or mlp (key `model`)
    #[arg(long)]
    model: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the feature-rows table from raw files or generated profiles
    Ingest {
        #[command(flatten)]
        common: Common,
        /// Generate synthetic profiles instead of reading files
        #[arg(long)]
        synthetic: bool,
        #[arg(long, value_name = "FILE")]
        observations: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        daily: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        morphometry: Option<PathBuf>,
    },
    /// Split profiles, fit the scaler and train one model
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        /// paper (tuned settings) or quick (key `preset`)
        #[arg(long)]
        preset: Option<String>,
    },
    /// Score a trained model on the held-out profiles
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Exact Shapley attributions for test rows
    Explain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Incremental-input KAN experiment with symbolic distillation
    KanRun {
        #[command(flatten)]
        common: Common,
        /// simple or complex (key `kan.regime`)
        #[arg(long)]
        regime: Option<String>,
    },
    /// Assemble a markdown report from the artifacts in the output directory
    Report {
        #[command(flatten)]
        common: Common,
    },
    /// Published equation bank
    Eq {
        #[command(subcommand)]
        action: EqAction,
    },
    /// List the accepted configuration keys
    Keys,
}

#[derive(Subcommand, Debug)]
enum EqAction {
    /// Evaluate an equation at a point in normalized feature space
    #[command(allow_negative_numbers = true)]
    Eval {
        /// simple or complex
        #[arg(long)]
        set: String,
        /// Number of inputs, 1 to 10
        #[arg(long)]
        inputs: usize,
        #[arg(long)]
        x1: Option<f64>,
        #[arg(long)]
        x2: Option<f64>,
        #[arg(long)]
        x3: Option<f64>,
        #[arg(long)]
        x4: Option<f64>,
        #[arg(long)]
        x5: Option<f64>,
        #[arg(long)]
        x6: Option<f64>,
        #[arg(long)]
        x7: Option<f64>,
        #[arg(long)]
        x8: Option<f64>,
        #[arg(long)]
        x9: Option<f64>,
        #[arg(long)]
        x10: Option<f64>,
    },
    /// Print one equation with its published test R²
    Show {
        #[arg(long)]
        set: String,
        #[arg(long)]
        inputs: usize,
    },
    /// Print every equation as `set,inputs,r2,expression`
    List,
}

fn resolve(common: &Common, extra: Vec<(&str, Option<String>)>) -> Result<RunConfig, CliError> {
    let mut overrides = common.params.iter().map(|p| parse_override(p)).collect::<Result<Vec<_>, _>>()?;
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
    let flags = [("out", path(&common.out)), ("seed", common.seed.map(|s| s.to_string()))].into_iter().chain(extra);
    overrides.extend(flags.filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
    config::load(common.config.as_deref(), &overrides)
}

fn execute(cmd: Command) -> Result<String, CliError> {
    match cmd {
        Command::Ingest { common, synthetic, observations, daily, morphometry } => {
            let p = |v: Option<PathBuf>| v.map(|p| p.display().to_string());
            let cfg = resolve(
                &common,
                vec![
                    ("synthetic", synthetic.then(|| "true".to_string())),
                    ("observations", p(observations)),
                    ("daily", p(daily)),
                    ("morphometry", p(morphometry)),
                ],
            )?;
            commands::ingest(&cfg)
        }
        Command::Train { common, model, preset } => commands::train(&resolve(&common, vec![("model", model.model), ("preset", preset)])?),
        Command::Evaluate { common, model } => commands::evaluate(&resolve(&common, vec![("model", model.model)])?),
        Command::Explain { common, model } => commands::explain(&resolve(&common, vec![("model", model.model)])?),
        Command::KanRun { common, regime } => commands::kan_run(&resolve(&common, vec![("kan.regime", regime)])?),
        Command::Report { common } => commands::report(&resolve(&common, vec![])?),
        Command::Eq { action } => match action {
            EqAction::Eval { set, inputs, x1, x2, x3, x4, x5, x6, x7, x8, x9, x10 } => {
                commands::eq_eval(&set, inputs, &[x1, x2, x3, x4, x5, x6, x7, x8, x9, x10])
            }
            EqAction::Show { set, inputs } => commands::eq_show(&set, inputs),
            EqAction::List => commands::eq_list(),
        },
        Command::Keys => Ok(config::KEYS.iter().map(|(k, d)| if d.is_empty() { k.to_string() } else { format!("{k}\t{d}") }).collect::<Vec<_>>().join("\n")),
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// exit code. Output goes to stdout; failures print a JSON error record on
/// stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => {
                    let what = match e.kind() {
                        ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => "a subcommand is required".to_string(),
                        k => k.to_string(),
                    };
                    eprintln!("{}", CliError::usage(what).record());
                    2
                }
            };
        }
    };
    match execute(cli.command) {
        Ok(text) => {
            // a closed pipe (e.g. `| head`) is not an error worth reporting
            if !text.is_empty() {
                let _ = writeln!(std::io::stdout().lock(), "{text}");
            }
            0
        }
        Err(e) => {
            eprintln!("{}", e.record());
            e.exit_code
        }
    }
}

/// The clap command, for help rendering and argument checks.
pub fn command() -> clap::Command {
    Cli::command()
}
