//! `daec`: contraction analysis of quadratic index-1 DAEs from the command line.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use contraction::NormOrder;

#[derive(Debug, Parser)]
#[command(name = "daec", version, about = "Contraction analysis for semi-explicit index-1 quadratic DAEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Jacobian blocks, reduced Jacobian, matrix measures and the certificate.
    Analyze(ModelArgs),
    /// Certified box, vertex check and the invariant ball.
    Region(RegionArgs),
    /// Seeded random-system checks of the forward and converse theorems.
    VerifyTheorems(VerifyArgs),
    /// Simulate from a start point, optionally checking ball invariance.
    Simulate(SimulateArgs),
    /// Sufficient critical clearing time of a fault model against the nominal ball.
    Scct(ScctArgs),
    /// Print the JSON of a built-in model.
    Demo(DemoArgs),
}

#[derive(Debug, Args, Clone)]
pub struct ModelArgs {
    /// Model JSON path or built-in name (scalar, linear, scalar-fault, two-bus, two-bus-fault).
    #[arg(long)]
    pub model: String,
    /// Target contraction rate; capped by what the certificate supports.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Slack of the 2-norm extension used by the certificate.
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    /// Directory for output files; JSON is always printed to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RegionArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Norm used for the vertex check.
    #[arg(long, default_value = "2", value_parser = parse_norm)]
    pub norm: NormOrder,
    /// Comma-separated positive weights, one per coordinate.
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random systems per suite.
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    /// Admissible tuples per exponent in the Lemma 1 suites.
    #[arg(long, default_value_t = 1000)]
    pub lemma_tuples: usize,
    /// Largest differential and algebraic dimension sampled.
    #[arg(long, default_value_t = 6)]
    pub max_dim: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Comma-separated differential start; defaults to the equilibrium.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    /// Simulated time; the invariance check defaults to 10/beta.
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Number of seeded starts on the invariant ball (0 skips the check).
    #[arg(long, default_value_t = 0)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ScctArgs {
    /// Nominal (post-fault) model whose ball is used.
    #[command(flatten)]
    pub model: ModelArgs,
    /// Fault-on model, path or built-in name.
    #[arg(long)]
    pub fault: String,
    /// Use a Euclidean ball of this radius around the equilibrium instead of the certified one.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Comma-separated fault-on start; defaults to the nominal equilibrium.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    #[arg(long, default_value_t = 10.0)]
    pub horizon: f64,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    /// Built-in model name.
    pub name: String,
    /// Write to this file instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_norm(s: &str) -> Result<NormOrder, String> {
    s.parse().map_err(|e: contraction::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze(a) => commands::analyze(&a),
        Command::Region(a) => commands::region(&a),
        Command::VerifyTheorems(a) => commands::verify_theorems(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Scct(a) => commands::scct(&a),
        Command::Demo(a) => commands::demo(&a),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("daec: {}", e.message);
            ExitCode::from(e.code as u8)
        }
    }
}
