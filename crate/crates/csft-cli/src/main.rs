//! `csft` command-line driver.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use csft::filters::ParamOverrides;

#[derive(Debug, Parser)]
#[command(name = "csft", version, about = "Continuous sparse Fourier transform experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Plant a random eta-separated sparse signal.
    Gen(GenArgs),
    /// Recover the tones of a planted signal.
    Recover(RecoverArgs),
    /// Compare recovered tones against the planted ones.
    Eval(EvalArgs),
    /// Tabulate the filter in time or frequency as CSV.
    FilterDump(FilterDumpArgs),
    /// Monte-Carlo audits of the hashing events.
    HashStats(HashStatsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    /// `ell = 4`, `alpha = 1/3`, `s2 = 1/B`.
    Desk,
    /// Every constant from the default derivation rules.
    Standard,
}

#[derive(Debug, Clone, Args)]
pub struct FilterArgs {
    #[arg(long, value_enum, default_value_t = Profile::Desk)]
    pub profile: Profile,
    /// Bins per dimension; must be a multiple of `d`.
    #[arg(long = "B")]
    pub bins: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
}

impl FilterArgs {
    pub fn overrides(&self) -> ParamOverrides {
        let base = match self.profile {
            Profile::Desk => ParamOverrides::desk(),
            Profile::Standard => ParamOverrides::default(),
        };
        ParamOverrides { b: self.bins.or(base.b), ..base }
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub d: usize,
    #[arg(long = "F")]
    pub band: f64,
    #[arg(long)]
    pub eta: f64,
    #[arg(long = "T")]
    pub duration: f64,
    /// `none` or `gaussian:SIGMA`.
    #[arg(long, default_value = "none")]
    pub noise: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RecoverArgs {
    #[arg(long)]
    pub signal: PathBuf,
    /// Number of tones to report; defaults to the planted count.
    #[arg(long)]
    pub k: Option<usize>,
    /// Ratio constant of the location search.
    #[arg(long = "C", default_value_t = 120.0)]
    pub c_ratio: f64,
    /// Merge repetitions; defaults to the derived value.
    #[arg(long)]
    pub rmerge: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Run even when the duration is too short, sampling the signal past `T`.
    #[arg(long)]
    pub force: bool,
    #[command(flatten)]
    pub filter: FilterArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to the output path with a `.manifest.json` suffix.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Planted signal file.
    #[arg(long)]
    pub truth: PathBuf,
    /// Tones file, or a signal file.
    #[arg(long)]
    pub recovered: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    /// Monte-Carlo trials per tone for the SNR estimate; needs a tones file.
    #[arg(long, default_value_t = 0)]
    pub snr_trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Domain {
    Time,
    Freq,
}

#[derive(Debug, Args)]
pub struct FilterDumpArgs {
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, default_value_t = 1)]
    pub d: usize,
    #[arg(long = "F", default_value_t = 1.0)]
    pub band: f64,
    #[arg(long, default_value_t = 1.0)]
    pub eta: f64,
    #[command(flatten)]
    pub filter: FilterArgs,
    #[arg(long, value_enum, default_value_t = Domain::Freq)]
    pub domain: Domain,
    #[arg(long, default_value_t = 401)]
    pub points: usize,
    /// Defaults to standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HashStatsArgs {
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long)]
    pub d: usize,
    #[arg(long, default_value_t = 1.0)]
    pub eta: f64,
    #[command(flatten)]
    pub filter: FilterArgs,
    #[arg(long, default_value_t = 20_000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Defaults to standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<csft::Error>() {
            return if e.is_duration() { 3 } else { 2 };
        }
        if cause.is::<serde_json::Error>() || cause.is::<commands::UsageError>() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => commands::gen(&a),
        Command::Recover(a) => commands::recover(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::FilterDump(a) => commands::filter_dump(&a),
        Command::HashStats(a) => commands::hash_stats(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
