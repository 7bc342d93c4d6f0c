use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use covgm::experiment::{run_task, ExperimentConfig, Task};
use covgm::Error;

#[derive(Parser)]
#[command(name = "covgm", version, about = "Covariate-dependent graphical models: fitting, testing, selection, studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset from a model with parameters.
    Simulate(Common),
    /// Exact maximum likelihood fit of a log-linear model.
    FitMle(Common),
    /// Likelihood-ratio and Wald tests of a nested model.
    TestLrt(Common),
    /// Pseudo-likelihood fit of a dynamic Ising model.
    FitPseudo(Common),
    /// Birth-death MCMC neighborhood selection.
    Select(Common),
    /// Simulation studies and edge-list comparison.
    Evaluate(Common),
}

#[derive(Args)]
struct Common {
    /// JSON task configuration.
    #[arg(long)]
    config: PathBuf,
    /// Root seed, overriding the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
}

impl Command {
    fn split(self) -> (Task, Common) {
        match self {
            Command::Simulate(c) => (Task::Simulate, c),
            Command::FitMle(c) => (Task::FitMle, c),
            Command::TestLrt(c) => (Task::TestLrt, c),
            Command::FitPseudo(c) => (Task::FitPseudo, c),
            Command::Select(c) => (Task::Select, c),
            Command::Evaluate(c) => (Task::Evaluate, c),
        }
    }
}

fn run(task: Task, args: Common) -> Result<(), Error> {
    let mut config = ExperimentConfig::read(&args.config)?;
    if config.task != task {
        return Err(Error::Validation(format!(
            "{}: configuration is for task '{}', not '{}'",
            args.config.display(),
            config.task.name(),
            task.name()
        )));
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let out = args.out.unwrap_or_else(|| config.output_dir());
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(threads) = args.threads {
        if threads == 0 {
            return Err(Error::Validation("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(threads);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Validation(format!("cannot start worker pool: {e}")))?;
    let outcome = pool.install(|| run_task(&config, &out))?;
    print!("{}", outcome.report.to_text());
    for file in &outcome.files {
        println!("wrote {}", file.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (task, args) = cli.command.split();
    match run(task, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
