mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "lcmito", version, about = "Conditional local independence testing for Ornstein-Uhlenbeck processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
pub struct Common {
    /// Flat key = value file; command-line values take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Extra key=value override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub sets: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Args, Debug)]
pub struct EstArgs {
    /// Training interval as a multiple of the observation step.
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub u: Option<f64>,
    #[arg(long)]
    pub pool_lags: Option<bool>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate trajectories and write them as CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        n_traj: Option<usize>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        n_steps: Option<usize>,
        #[arg(long)]
        edge_prob: Option<f64>,
        #[arg(long)]
        diag: Option<f64>,
        /// `ou` or `nonlinear`.
        #[arg(long)]
        model: Option<String>,
        /// Drift JSON to use instead of a random draw.
        #[arg(long)]
        phi: Option<String>,
        /// Where to write the drift used.
        #[arg(long)]
        phi_out: Option<String>,
    },
    /// Fit the drift and diffusion to a trajectory CSV.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<String>,
        #[command(flatten)]
        est: EstArgs,
    },
    /// Test whether alpha is locally independent of beta given a conditioning set.
    Test {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<String>,
        /// 1-based coordinate.
        #[arg(long)]
        alpha: Option<usize>,
        /// 1-based coordinate.
        #[arg(long)]
        beta: Option<usize>,
        /// Comma-separated 1-based coordinates; defaults to all but alpha.
        #[arg(long)]
        cond: Option<String>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        level: Option<f64>,
        #[arg(long)]
        gamma_out: Option<String>,
        #[command(flatten)]
        est: EstArgs,
    },
    /// Recover the local independence graph.
    Discover {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<String>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        level: Option<f64>,
        #[arg(long)]
        bonferroni: Option<bool>,
        /// Number of fold seeds for the stability report.
        #[arg(long)]
        splits: Option<usize>,
        /// Drift JSON of the true model, for precision and recall.
        #[arg(long)]
        truth: Option<String>,
        /// Stability and score report (JSON).
        #[arg(long)]
        report: Option<String>,
        #[command(flatten)]
        est: EstArgs,
    },
    /// Rejection rates over grids of sample size and effect size.
    Experiment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        d: Option<usize>,
        /// Comma-separated sample sizes.
        #[arg(long)]
        n_traj: Option<String>,
        /// Comma-separated values of the tested drift entry.
        #[arg(long)]
        effects: Option<String>,
        #[arg(long)]
        n_phi: Option<usize>,
        #[arg(long)]
        reps: Option<usize>,
        /// 0 runs a single half/half split.
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        level: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        n_steps: Option<usize>,
        #[arg(long)]
        edge_prob: Option<f64>,
        #[arg(long)]
        diag: Option<f64>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        alpha: Option<usize>,
        #[arg(long)]
        beta: Option<usize>,
        #[arg(long)]
        identifiable_only: Option<bool>,
        #[command(flatten)]
        est: EstArgs,
    },
}

fn s<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(|x| x.to_string())
}

impl Common {
    fn flags(&self) -> Vec<(&'static str, Option<String>)> {
        vec![("seed", s(&self.seed)), ("out", s(&self.out))]
    }
}

impl EstArgs {
    fn flags(&self) -> Vec<(&'static str, Option<String>)> {
        vec![("stride", s(&self.stride)), ("u", s(&self.u)), ("pool_lags", s(&self.pool_lags))]
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    use config::Settings;
    match cli.command {
        Command::Simulate { common, d, n_traj, sigma, delta, n_steps, edge_prob, diag, model, phi, phi_out } => {
            let mut f = common.flags();
            f.extend([
                ("d", s(&d)),
                ("n_traj", s(&n_traj)),
                ("sigma", s(&sigma)),
                ("delta", s(&delta)),
                ("n_steps", s(&n_steps)),
                ("edge_prob", s(&edge_prob)),
                ("diag", s(&diag)),
                ("model", model),
                ("phi", phi),
                ("phi_out", phi_out),
            ]);
            commands::simulate(Settings::load(common.config.as_deref(), f, &common.sets)?)
        }
        Command::Estimate { common, data, est } => {
            let mut f = common.flags();
            f.extend(est.flags());
            f.push(("data", data));
            commands::estimate(Settings::load(common.config.as_deref(), f, &common.sets)?)
        }
        Command::Test { common, data, alpha, beta, cond, folds, level, gamma_out, est } => {
            let mut f = common.flags();
            f.extend(est.flags());
            f.extend([
                ("data", data),
                ("alpha", s(&alpha)),
                ("beta", s(&beta)),
                ("cond", cond),
                ("folds", s(&folds)),
                ("level", s(&level)),
                ("gamma_out", gamma_out),
            ]);
            commands::test(Settings::load(common.config.as_deref(), f, &common.sets)?)
        }
        Command::Discover { common, data, folds, level, bonferroni, splits, truth, report, est } => {
            let mut f = common.flags();
            f.extend(est.flags());
            f.extend([
                ("data", data),
                ("folds", s(&folds)),
                ("level", s(&level)),
                ("bonferroni", s(&bonferroni)),
                ("splits", s(&splits)),
                ("truth", truth),
                ("report", report),
            ]);
            commands::discover(Settings::load(common.config.as_deref(), f, &common.sets)?)
        }
        Command::Experiment {
            common,
            d,
            n_traj,
            effects,
            n_phi,
            reps,
            folds,
            level,
            delta,
            n_steps,
            edge_prob,
            diag,
            sigma,
            alpha,
            beta,
            identifiable_only,
            est,
        } => {
            let mut f = common.flags();
            f.extend(est.flags());
            f.extend([
                ("d", s(&d)),
                ("n_traj", n_traj),
                ("effects", effects),
                ("n_phi", s(&n_phi)),
                ("reps", s(&reps)),
                ("folds", s(&folds)),
                ("level", s(&level)),
                ("delta", s(&delta)),
                ("n_steps", s(&n_steps)),
                ("edge_prob", s(&edge_prob)),
                ("diag", s(&diag)),
                ("sigma", s(&sigma)),
                ("alpha", s(&alpha)),
                ("beta", s(&beta)),
                ("identifiable_only", s(&identifiable_only)),
            ]);
            commands::experiment(Settings::load(common.config.as_deref(), f, &common.sets)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numerical = e.chain().any(|c| c.downcast_ref::<lcm_ito::Error>().is_some_and(|x| x.is_numerical()));
            ExitCode::from(if numerical { 2 } else { 1 })
        }
    }
}
