use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "rmtq",
    version,
    about = "Two qubits in a random-matrix environment: weak-coupling channel, resolvent equations and finite-N Monte Carlo",
    args_override_self = true,
    propagate_version = true
)]
pub struct Cli {
    /// Flat key=value file; flags given on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads.
    #[arg(long, global = true, env = "RMTQ_THREADS", value_name = "K")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Channel trajectory of one initial condition.
    Evolve(EvolveArgs),
    /// The tau -> infinity state and its quantifiers.
    Stationary(StationaryArgs),
    /// One quantifier over a tau grid and a range of one parameter.
    Sweep(SweepArgs),
    /// Semigroup residual and det Phi3(inf) of the channel.
    MarkovCheck(MarkovArgs),
    /// Finite-N ensemble mean, variance and standard error over time.
    FiniteN(FiniteNArgs),
    /// Ensemble variances for several N with a power-law fit.
    VarianceScan(VarianceScanArgs),
    /// Self-consistent resolvent pair along a line parallel to the real axis.
    Resolvent(ResolventArgs),
    /// Finite-N ensemble against the channel over a tau grid.
    Compare(CompareArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Evolve(_) => "evolve",
            Command::Stationary(_) => "stationary",
            Command::Sweep(_) => "sweep",
            Command::MarkovCheck(_) => "markov-check",
            Command::FiniteN(_) => "finite-n",
            Command::VarianceScan(_) => "variance-scan",
            Command::Resolvent(_) => "resolvent",
            Command::Compare(_) => "compare",
        }
    }
}

pub const SUBCOMMANDS: [&str; 8] = [
    "evolve",
    "stationary",
    "sweep",
    "markov-check",
    "finite-n",
    "variance-scan",
    "resolvent",
    "compare",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DosKind {
    Lorentzian,
    Flat,
    Tabulated,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct DosArgs {
    #[arg(long, value_enum, default_value = "lorentzian")]
    pub dos: DosKind,
    /// Lorentzian half-width.
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// Flat density value.
    #[arg(long, default_value_t = 1.0)]
    pub gamma0: f64,
    /// Two-column table `energy density` for the tabulated density.
    #[arg(long, value_name = "FILE")]
    pub dos_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    Product,
    Bell1,
    Bell2,
    Werner,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct InitArgs {
    #[arg(long, value_enum, default_value = "bell2")]
    pub init: InitKind,
    /// alpha0, alpha1 or alpha2 of the family; the Bell amplitude for werner.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Phase of beta, in radians.
    #[arg(long, default_value_t = 0.0)]
    pub beta_phase: f64,
    /// Weight of the Bell projector in the werner family.
    #[arg(long, default_value_t = 0.5)]
    pub alpha3: f64,
    /// Bell family of the werner projector.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub werner_family: u8,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct ChannelArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub dos: DosArgs,
    /// Energy of the initial environment level.
    #[arg(long, default_value_t = 0.0)]
    pub env_energy: f64,
    /// Qubit splitting.
    #[arg(long, default_value_t = 1.0)]
    pub s: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct TauGrid {
    #[arg(long, default_value_t = 10.0)]
    pub tau_max: f64,
    /// Intervals of the grid; there are steps + 1 points.
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct EvolveArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub channel: ChannelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub init: InitArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: TauGrid,
    #[arg(long, value_name = "CSV")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct StationaryArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub channel: ChannelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub init: InitArgs,
    #[arg(long, value_name = "CSV")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParam {
    Alpha0,
    Alpha1,
    Alpha2,
    Alpha3,
    Gamma,
    EnvEnergy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quantity {
    Negativity,
    Concurrence,
    Discord,
    Entropy,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SweepArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub channel: ChannelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub init: InitArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: TauGrid,
    /// Parameter varied across columns.
    #[arg(long, value_enum)]
    pub param: SweepParam,
    #[arg(long)]
    pub from: f64,
    #[arg(long)]
    pub to: f64,
    /// Number of parameter values, endpoints included.
    #[arg(long, default_value_t = 21)]
    pub count: usize,
    #[arg(long, value_enum, default_value = "concurrence")]
    pub quantity: Quantity,
    #[arg(long, value_name = "CSV")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct MarkovArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub channel: ChannelArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyArg {
    Common,
    Independent,
    FreeAncilla,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingArg {
    Iid,
    Quantile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PictureArg {
    Schrodinger,
    Interaction,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct OracleArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub channel: ChannelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub init: InitArgs,
    #[arg(long, value_enum, default_value = "common")]
    pub topology: TopologyArg,
    /// Coupling strength.
    #[arg(long, default_value_t = 0.1)]
    pub v: f64,
    /// How the environment spectrum is drawn from the density.
    #[arg(long, value_enum, default_value = "iid")]
    pub env_sampling: SamplingArg,
    #[arg(long, default_value_t = 100)]
    pub draws: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dense-matrix memory budget in GiB.
    #[arg(long, default_value_t = 2.0)]
    pub budget_gib: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct FiniteNArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub oracle: OracleArgs,
    /// Environment dimension.
    #[arg(long)]
    pub n: usize,
    /// Largest fast time.
    #[arg(long, default_value_t = 10.0)]
    pub t_max: f64,
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    #[arg(long, value_enum, default_value = "schrodinger")]
    pub picture: PictureArg,
    #[arg(long, value_name = "CSV")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct VarianceScanArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub oracle: OracleArgs,
    /// Comma-separated environment dimensions.
    #[arg(long, value_delimiter = ',', required = true)]
    pub n_list: Vec<usize>,
    /// Fast time at which variances are taken.
    #[arg(long, default_value_t = 5.0)]
    pub t: f64,
    #[arg(long, value_name = "CSV")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct ResolventArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub dos: DosArgs,
    #[arg(long, default_value_t = 1.0)]
    pub s: f64,
    #[arg(long, default_value_t = 0.5)]
    pub v: f64,
    #[arg(long, default_value_t = 0.5)]
    pub z_imag: f64,
    #[arg(long, default_value_t = -5.0)]
    pub e_from: f64,
    #[arg(long, default_value_t = 5.0)]
    pub e_to: f64,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    #[arg(long, value_name = "CSV")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct CompareArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub oracle: OracleArgs,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 3.0)]
    pub tau_max: f64,
    #[arg(long, default_value_t = 12)]
    pub steps: usize,
    #[arg(long, value_name = "CSV")]
    pub out: PathBuf,
}
