use clap::{Parser, Subcommand};
use dssl_cli::commands::{self, EvalArgs, GenerateArgs, MetricsArgs, SweepArgs, TrainArgs};

/// Decoupled self-supervised node representation learning.
///
/// Exit codes: 0 success, 2 invalid arguments or input, 3 non-finite loss
/// during training, 4 file system error. Set DSSL_THREADS to bound the
/// worker thread count.
#[derive(Parser)]
#[command(name = "dssl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled graph with a target homophily.
    Generate(GenerateArgs),
    /// Print homophily statistics of a labeled graph as JSON.
    Metrics(MetricsArgs),
    /// Train a model and write a checkpoint and per-epoch log.
    Train(TrainArgs),
    /// Probe accuracy and clustering NMI of representations.
    Eval(EvalArgs),
    /// Train and evaluate over a grid of one setting and several seeds.
    Sweep(SweepArgs),
}

fn main() {
    if let Ok(v) = std::env::var("DSSL_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: DSSL_THREADS must be a positive integer, got `{v}`");
                std::process::exit(2);
            }
        }
    }
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Metrics(a) => commands::metrics(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Sweep(a) => commands::sweep(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
