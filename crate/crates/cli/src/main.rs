use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "diffsim", version, about = "Differentiable rigid-body contact simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Roll the scene forward and write the trajectory as CSV.
    Simulate {
        /// Scene file, or the name of a bundled scene.
        #[arg(long)]
        scene: String,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        /// Trajectory CSV (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-contact CSV: impulses, modes and signed distances.
        #[arg(long)]
        contacts: Option<PathBuf>,
    },
    /// Analytical Jacobian of the final state after `steps` steps.
    Jacobian {
        #[arg(long)]
        scene: String,
        /// One of q, v, tau, all, or mu<pair>.
        #[arg(long, default_value = "all")]
        theta: String,
        #[arg(long, default_value_t = 1)]
        steps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytical and central finite-difference Jacobians.
    Fdcheck {
        #[arg(long)]
        scene: String,
        #[arg(long, default_value_t = 1e-6)]
        eps: f64,
        /// Largest accepted relative error.
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value = "all")]
        theta: String,
        #[arg(long, default_value_t = 1)]
        steps: usize,
    },
    /// Time a step, its analytical Jacobian and its finite-difference Jacobian.
    Bench {
        #[arg(long)]
        scene: String,
        #[arg(long, default_value_t = 1000)]
        reps: usize,
        #[arg(long, default_value_t = 50)]
        warmup: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Gauss-Newton inverse problems through contact.
    SolveInverse {
        #[arg(long)]
        scene: String,
        #[arg(long, value_enum)]
        problem: Problem,
        /// Trajectory CSV (as written by `simulate`). The estimation problems fit
        /// its last configuration, `invdyn` its last velocity. `invdyn`
        /// defaults to a zero target velocity.
        #[arg(long)]
        target: Option<PathBuf>,
        /// Rollout length of the estimation problems; defaults to the target length.
        #[arg(long)]
        steps: Option<usize>,
        /// Restrict the search to these velocity or torque components (comma separated).
        #[arg(long, value_delimiter = ',')]
        dofs: Option<Vec<usize>>,
        /// Use finite-difference Jacobians instead of the analytical ones.
        #[arg(long)]
        fd: bool,
        #[arg(long, default_value_t = 100)]
        max_iters: usize,
        /// Gauss-Newton trace CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the scene back as normalized JSON.
    Dump {
        #[arg(long)]
        scene: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the bundled scenes.
    Scenes,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Problem {
    EstimateV0,
    EstimateImpulse,
    Invdyn,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SIM_LOG", "warn")).init();
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
