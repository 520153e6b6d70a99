use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands;
use crate::config::RunConfig;
use crate::error::{Failure, Outcome};
use crate::io;

const PRECEDENCE: &str = "\
Settings come from three layers: built-in defaults, then the TOML file given
with --config, then command-line flags. A flag wins over the file and the
file wins over the defaults. Every random stream (excitation, sensor noise,
network init, batch shuffling, window sampling) is derived from the single
run seed, so a command is reproducible given its config and seed.

Exit codes: 0 success, 2 invalid input, config or io, 3 numeric failure.";

#[derive(Debug, Parser)]
#[command(name = "pinode", version, about = "Cart-pole grey-box identification with a physics-informed neural ODE", after_help = PRECEDENCE)]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Run seed; overrides `seed` in the config file.
    #[arg(long, global = true, value_name = "INT")]
    pub seed: Option<u64>,
    /// Output path: dataset for generate/simulate, model for train, report
    /// for fit-baseline/gradcheck/stats, directory for evaluate.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Record a synthetic rig run through the sensor model into a dataset CSV.
    Generate {
        /// Recording length in seconds.
        #[arg(long)]
        duration: Option<f64>,
        /// Peak excitation force in newtons.
        #[arg(long)]
        amplitude: Option<f64>,
    },
    /// Print per-channel statistics of a dataset.
    Stats {
        /// Dataset CSV; defaults to `paths.dataset`.
        dataset: Option<PathBuf>,
    },
    /// Train the hybrid model and save the network as JSON.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Fit the pure-ODE friction coefficients by least squares.
    FitBaseline {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Compare the trained model against the fitted pure-ODE model.
    Evaluate {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Open-loop rollout of the pure-ODE model, or of a trained network.
    Simulate {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Check loss gradients against finite differences.
    Gradcheck {
        /// Network to check; a freshly initialized one by default.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        batches: usize,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
        /// Add one to this parameter's analytic derivative.
        #[arg(long, hide = true)]
        corrupt: Option<usize>,
    },
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("value serializes"));
}

/// Runs one parsed invocation.
pub fn run(cli: Cli) -> Outcome<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let reports = cfg.paths.reports.clone();
    let out_or = |default: PathBuf| cli.out.clone().unwrap_or(default);
    match cli.command {
        Command::Generate { duration, amplitude } => {
            if let Some(d) = duration {
                cfg.generate.duration = d;
            }
            if let Some(a) = amplitude {
                cfg.generate.amplitude = a;
            }
            let out = out_or(cfg.paths.dataset.clone());
            let data = commands::generate(&cfg, &out)?;
            println!("wrote {}", out.display());
            print!("{}", commands::stats_text(&data)?);
        }
        Command::Stats { dataset } => {
            let path = dataset.unwrap_or(cfg.paths.dataset.clone());
            let text = commands::stats_text(&io::read_dataset(&path)?)?;
            print!("{text}");
            if let Some(out) = &cli.out {
                io::write_text(out, &text)?;
            }
        }
        Command::Train { dataset, epochs } => {
            if let Some(e) = epochs {
                cfg.training.epochs = e;
            }
            let dataset = dataset.unwrap_or(cfg.paths.dataset.clone());
            let model = out_or(cfg.paths.model.clone());
            let report = commands::train(&cfg, &dataset, &model, &reports.join("train_report.json"), |e, l| {
                eprintln!("epoch {e:>4}  loss {l:.6e}")
            })?;
            println!("wrote {}", model.display());
            println!(
                "first epoch loss {}  final epoch loss {}",
                report["first_epoch_loss"], report["final_epoch_loss"]
            );
        }
        Command::FitBaseline { dataset } => {
            let dataset = dataset.unwrap_or(cfg.paths.dataset.clone());
            let out = out_or(reports.join("baseline_report.json"));
            let report = commands::fit_baseline(&cfg, &dataset, &out)?;
            println!(
                "mu_c {}  mu_p {}  one-step loss {}",
                report["mu_c"], report["mu_p"], report["one_step_loss"]
            );
        }
        Command::Evaluate { dataset, model } => {
            let dataset = dataset.unwrap_or(cfg.paths.dataset.clone());
            let model = model.unwrap_or(cfg.paths.model.clone());
            let out = out_or(reports);
            let ev = commands::evaluate(&cfg, &dataset, &model, &out)?;
            print!("{}", ev.table);
            println!("wrote {}", out.join("evaluate_report.json").display());
        }
        Command::Simulate { model, duration } => {
            if let Some(d) = duration {
                cfg.generate.duration = d;
            }
            let out = out_or(reports.join("simulation.csv"));
            let data = commands::simulate(&cfg, model.as_deref(), &out)?;
            println!("wrote {} ({} samples)", out.display(), data.len());
        }
        Command::Gradcheck {
            model,
            batches,
            tolerance,
            corrupt,
        } => {
            let out = out_or(reports.join("gradcheck_report.json"));
            let res = commands::gradcheck(&cfg, model.as_deref(), batches, tolerance, corrupt, &out)?;
            print_json(&serde_json::json!({
                "passed": res.report["passed"],
                "max_relative_error": res.report["max_relative_error"],
                "worst_index": res.report["worst_index"],
            }));
            if !res.passed {
                return Err(Failure::numeric(format!(
                    "gradient check failed: relative error {} at parameter {}",
                    res.report["max_relative_error"], res.report["worst_index"]
                )));
            }
        }
    }
    Ok(())
}
