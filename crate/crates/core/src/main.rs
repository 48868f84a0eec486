use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedsim::bwo::{bwo_optimize, Benchmark, BwoParams};
use fedsim::config::load_config;
use fedsim::cost::{self, cost_fedavg, cost_fedx, fraction_ratio, normalized_cost_general};
use fedsim::experiment::{default_out_dir, run_experiment, run_matrix};
use fedsim::rng::seeded;
use fedsim::Result;

#[derive(Parser)]
#[command(
    name = "fedsim",
    version,
    about = "Deterministic federated-learning simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write metrics.jsonl into the output directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Defaults to $FEDSIM_OUT, then ./out.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run several configs with replicate seeds and print a summary table.
    Matrix {
        #[arg(long, num_args = 1.., required = true)]
        configs: Vec<PathBuf>,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the communication-cost formulas.
    Cost {
        /// Global rounds.
        #[arg(long)]
        t: u64,
        /// Client fraction for FedAvg.
        #[arg(long)]
        c: f64,
        /// Number of clients.
        #[arg(long)]
        n: u64,
        /// Model size in bytes.
        #[arg(long)]
        m: u64,
        #[arg(long, default_value_t = 8)]
        eps: u64,
        /// FedAvg round count, when it differs from the score-only one.
        #[arg(long)]
        t_avg: Option<u64>,
    },
    /// Recompute the reference cost percentages; exits non-zero on any mismatch.
    ValidateCosts,
    /// Print the fully resolved configuration.
    PrintConfig {
        #[arg(long)]
        config: PathBuf,
    },
    /// Minimize a benchmark function with the standalone optimizer.
    BwoBench {
        #[arg(long, default_value = "sphere")]
        function: Benchmark,
        #[arg(long, default_value_t = 10)]
        dim: usize,
        #[arg(long, default_value_t = 20)]
        population: usize,
        #[arg(long, default_value_t = 200)]
        iterations: usize,
        #[arg(long, default_value_t = 5.0)]
        spread: f64,
        #[arg(long, default_value_t = 0.3)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn execute(command: Command) -> Result<ExitCode> {
    match command {
        Command::Run { config, seed, out } => {
            let mut cfg = load_config(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let out = out.unwrap_or_else(default_out_dir);
            let report = run_experiment(&cfg, &out)?;
            let s = report.summary();
            println!(
                "{} seed={} rounds={} stop={:?} accuracy={:.4} up={}B down={}B -> {}",
                s.strategy,
                s.seed,
                s.rounds_completed,
                s.stop_reason,
                s.final_accuracy,
                s.total_up_bytes,
                s.total_down_bytes,
                out.join("metrics.jsonl").display()
            );
        }
        Command::Matrix {
            configs,
            repeats,
            out,
        } => {
            let mut named = Vec::with_capacity(configs.len());
            for path in &configs {
                let name = path.file_stem().map_or_else(
                    || path.display().to_string(),
                    |s| s.to_string_lossy().into_owned(),
                );
                named.push((name, load_config(path)?));
            }
            let out = out.unwrap_or_else(default_out_dir);
            let table = run_matrix(&named, repeats, Some(&out))?;
            print!("{}", table.render());
            if table.baseline.is_none() {
                println!("normalized cost unavailable: no fedavg config with fraction = 1.0");
            }
        }
        Command::Cost {
            t,
            c,
            n,
            m,
            eps,
            t_avg,
        } => {
            let ratio = fraction_ratio(c)?;
            let t_avg = t_avg.unwrap_or(t);
            let avg = cost_fedavg(t_avg, ratio, n, m);
            let fedx = cost_fedx(t, n, m, eps);
            println!("fedavg bytes:     {}", cost::to_f64(avg));
            println!("score-only bytes: {fedx}");
            let norm = normalized_cost_general(t, t_avg, n, m, eps, ratio)?;
            println!("normalized cost:  {:.4}%", cost::to_f64(norm) * 100.0);
            if t_avg > 0 && n > 0 {
                let approx = cost::normalized_cost(t, t_avg, n)?;
                println!("round ratio:      {:.4}%", cost::to_f64(approx) * 100.0);
            }
        }
        Command::ValidateCosts => {
            let rows = cost::validate_reference_costs()?;
            print!("{}", cost::render_figure_table(&rows));
            if rows.iter().any(|r| !r.pass) {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::PrintConfig { config } => {
            print!("{}", load_config(&config)?.to_toml());
        }
        Command::BwoBench {
            function,
            dim,
            population,
            iterations,
            spread,
            sigma,
            seed,
        } => {
            let params = BwoParams {
                population_size: population,
                max_iterations: iterations,
                mutation_scale: sigma,
                init_spread: spread,
                ..BwoParams::default()
            };
            let mut rng = seeded(seed);
            let outcome = bwo_optimize(|x: &[f64]| Ok(function.eval(x)), dim, &params, &mut rng)?;
            println!(
                "{:?} dim={dim} best={:.6e} evaluations={}",
                function,
                outcome.best.fitness.unwrap_or(f64::NAN),
                outcome.evaluations
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}
