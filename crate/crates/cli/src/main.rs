use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crcsf::human_policy::derive_seed;
use crcsf_cli::config::{load_config, load_repro_config, ExperimentConfig, ReproConfig};
use crcsf_cli::io::summary_table;
use crcsf_cli::pipeline::{self, EvaluateOptions};
use crcsf_cli::CliError;

#[derive(Parser)]
#[command(name = "crcsf", version, about = "Calibrate, train and evaluate CRC safety filters")]
struct Cli {
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scenario: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate interaction batches and per-timestep margin labels.
    Calibrate(Common),
    /// Fit the margin model on the training set in the output directory.
    TrainMargin(Common),
    /// Run the selected variants and write per-episode and summary tables.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated list, e.g. `cbf_qp,online_crc_sf`.
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<String>>,
        #[arg(long)]
        n_trials: Option<usize>,
        #[arg(long)]
        dump_trajectories: bool,
    },
    /// Full pipeline for the single-agent and crowd groups plus a combined report.
    ReproPaper {
        /// Optional file with `{"groups": [ExperimentConfig, ...]}`.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_trials: Option<usize>,
    },
    /// Print the Lipschitz bundle and the resulting discretization margin.
    EstimateLipschitz(Common),
}

fn resolve(common: &Common) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let mut cfg = match &common.config {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::head_on_default(),
    };
    if let Some(s) = &common.scenario {
        cfg.scenario.name = s.clone();
    }
    if let Some(seed) = common.seed {
        cfg.calibration.seed = derive_seed(seed, 0);
        cfg.evaluation.base_seed = derive_seed(seed, 1);
        cfg.margin_model.seed = derive_seed(seed, 2);
    }
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    cfg.output_dir = out.display().to_string();
    cfg.validate()?;
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Other(e.to_string()))?;
    }
    match cli.command {
        Command::Calibrate(c) => {
            let (cfg, out) = resolve(&c)?;
            let s = pipeline::calibrate(&cfg, &out)?;
            println!(
                "calibrated {} labels over {} batches: eta {:.4}, loss bound {:.4}, fixed lambda {:.4} ({} labels at the risk floor)",
                s.labels, s.batches, s.eta, s.loss_bound, s.fixed_lambda, s.unattainable_labels
            );
        }
        Command::TrainMargin(c) => {
            let (cfg, out) = resolve(&c)?;
            let (_, r) = pipeline::train_margin(&cfg, &out)?;
            println!("train MSE {:.6}  validation MSE {:.6}", r.train_mse, r.validation_mse);
        }
        Command::Evaluate { common, variants, n_trials, dump_trajectories } => {
            let (mut cfg, out) = resolve(&common)?;
            if let Some(v) = variants {
                cfg.evaluation.variants = v;
            }
            if let Some(n) = n_trials {
                cfg.evaluation.n_trials = n;
            }
            cfg.validate()?;
            let res = pipeline::evaluate(&cfg, &out, &EvaluateOptions { dump_trajectories })?;
            print!("{}", summary_table(&res.summaries));
        }
        Command::ReproPaper { config, out, seed, n_trials } => {
            let mut repro: ReproConfig = match config {
                Some(p) => load_repro_config(&p)?,
                None => pipeline::default_repro(),
            };
            for (i, g) in repro.groups.iter_mut().enumerate() {
                if let Some(s) = seed {
                    let base = derive_seed(s, i as u64);
                    g.calibration.seed = derive_seed(base, 0);
                    g.evaluation.base_seed = derive_seed(base, 1);
                    g.margin_model.seed = derive_seed(base, 2);
                }
                if let Some(n) = n_trials {
                    g.evaluation.n_trials = n;
                }
                g.output_dir = out.join(&g.scenario.name).display().to_string();
                g.validate()?;
            }
            pipeline::repro_paper(&repro, &out)?;
            print!("{}", std::fs::read_to_string(out.join("report.md"))?);
        }
        Command::EstimateLipschitz(c) => {
            let (cfg, _) = resolve(&c)?;
            let b = pipeline::estimate_bundle(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&b).expect("bundle serializes"));
            println!("eta = {}", crcsf::barrier::eta(&b, cfg.dynamics.dt));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
