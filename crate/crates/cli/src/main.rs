//! `homomorph`: collect data, train representations and policies, and
//! verify tabular homomorphisms from the command line.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use homomorph_core::Error;

pub const OUTPUT_ROOT_ENV: &str = "HOMOMORPH_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "homomorph", version, about = "Latent homomorphism learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Configuration shared by every experiment subcommand.
#[derive(Args, Clone, Default)]
pub struct ConfigArgs {
    /// Experiment TOML file; defaults are used when omitted.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override a config entry, e.g. `--set repr.epochs=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum EnvPreset {
    /// 6x6 grid, 4 actions.
    Grid6,
    /// 14x14 grid, 8 actions.
    Grid14,
    /// Continuous top-down navigation.
    Nav,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum AgentKind {
    Td3,
    Dqn,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ColorBy {
    Reward,
}

#[derive(Subcommand)]
enum Command {
    /// Collect uniform-random transitions.
    Collect {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_enum)]
        env: Option<EnvPreset>,
        /// Number of transitions (overrides `data.n_transitions`).
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the state and action representation on a collected dataset.
    TrainRepr {
        #[command(flatten)]
        config: ConfigArgs,
        /// Dataset directory written by `collect`.
        #[arg(long)]
        data: PathBuf,
        /// OURS, MDP_H, D_MDP, JSAE or JSAE_C.
        #[arg(long)]
        baseline: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train latent policies on a frozen representation, one process per seed.
    TrainPolicy {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_enum)]
        env: Option<EnvPreset>,
        #[arg(long)]
        repr_checkpoint: PathBuf,
        #[arg(long, value_enum)]
        agent: Option<AgentKind>,
        /// Train seeds 0..N (overrides `seeds`).
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long, conflicts_with = "steps")]
        episodes: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Train a single seed in this process.
        #[arg(long, hide = true)]
        worker_seed: Option<u64>,
    },
    /// Greedy rollouts of trained policies.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_enum)]
        env: Option<EnvPreset>,
        #[arg(long)]
        repr_checkpoint: PathBuf,
        /// Policy checkpoints; the n-th is evaluated with seed n.
        #[arg(long = "policy", required = true)]
        policies: Vec<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Latent maps and learning curves as SVG with CSV twins.
    Plot {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_enum)]
        env: Option<EnvPreset>,
        /// Latent dump CSV to plot.
        #[arg(long, conflicts_with = "repr_checkpoint")]
        dump: Option<PathBuf>,
        /// Build the dump from this representation instead.
        #[arg(long)]
        repr_checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        components: usize,
        #[arg(long, value_enum, default_value = "reward")]
        color: ColorBy,
        /// Learning curves to draw, as `label=metrics.csv`.
        #[arg(long = "metrics", value_name = "LABEL=PATH")]
        metrics: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summary table over metrics files.
    Report {
        /// Metrics files as `label=metrics.csv`.
        #[arg(long = "metrics", value_name = "LABEL=PATH", required = true)]
        metrics: Vec<String>,
        #[arg(long, default_value = "env")]
        env_name: String,
        #[arg(long, default_value_t = 50)]
        window: usize,
        #[arg(long)]
        best_k: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a homomorphism between tabular MDPs and the optimality of lifted policies.
    VerifyHomomorphism(commands::VerifyArgs),
    /// Run the full staged pipeline from a config file.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Overrides `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    use commands::*;
    match cli.command {
        Command::Collect { config, env, n, seed, out } => collect(&config, env, n, seed, &out),
        Command::TrainRepr { config, data, baseline, epochs, out } => train_repr(&config, &data, baseline, epochs, &out),
        Command::TrainPolicy { config, env, repr_checkpoint, agent, seeds, episodes, steps, out, worker_seed } => {
            let opts = PolicyOpts { env, agent, seeds, episodes, steps };
            train_policy(&config, &opts, &repr_checkpoint, &out, worker_seed)
        }
        Command::Eval { config, env, repr_checkpoint, policies, episodes, out } => {
            eval(&config, env, &repr_checkpoint, &policies, episodes, &out)
        }
        Command::Plot { config, env, dump, repr_checkpoint, components, color: ColorBy::Reward, metrics, out } => {
            plot(&config, env, dump.as_deref(), repr_checkpoint.as_deref(), components, &metrics, &out)
        }
        Command::Report { metrics, env_name, window, best_k, out } => report(&metrics, &env_name, window, best_k, out.as_deref()),
        Command::VerifyHomomorphism(args) => verify(&args),
        Command::Run { config, out } => run(&config, out),
    }
}

/// 2 for configuration and input-format problems, 3 for everything that
/// failed while running.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Format { .. } | Error::UnknownBaseline(_) => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
