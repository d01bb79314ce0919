use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mpis::estimators::Inference64;
use mpis::sampler::draw;
use mpis_cli::config::{parse_k_list, ExperimentConfig, Method, Overrides};
use mpis_cli::runner::Experiment;
use mpis_cli::verify::{verify, TOLERANCE};
use mpis_cli::CliError;

#[derive(Parser)]
#[command(name = "mpis", version, about = "Massively parallel importance sampling for plated models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep methods, K and runs; write CSV tables and charts.
    Run(Common),
    /// Compare the engine against brute-force enumeration.
    Verify(Common),
    /// Print the zoo models with their default sizes.
    ListModels,
    /// Print the contraction plan of the model at the first K.
    DumpPlan(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    model: Option<String>,
    /// Comma-separated K values.
    #[arg(long = "K")]
    k: Option<String>,
    #[arg(long)]
    runs: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        let k_values = self.k.as_deref().map(parse_k_list).transpose().map_err(CliError::Config)?;
        let o = Overrides {
            model: self.model.clone(),
            k_values,
            runs: self.runs,
            out: self.out.clone(),
            workers: self.workers,
            seed: self.seed,
        };
        ExperimentConfig::load(self.config.as_deref(), &o)
    }
}

fn list_models() -> Result<(), CliError> {
    for name in mpis::zoo::NAMES {
        let params = mpis::zoo::default_params(name)?;
        let p: Vec<String> = params.iter().map(|(k, v)| format!("{k}={v}")).collect();
        println!("{name:<16} {}", p.join(" "));
    }
    Ok(())
}

fn dump_plan(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let exp = Experiment::build(cfg)?;
    let k = cfg.k_values[0];
    let store = draw(&exp.train, k, cfg.job_seed(Method::Mp, k), 0)?;
    let inf = Inference64::new(&exp.train, &store)?;
    for (i, s) in exp.train.latents().iter().enumerate() {
        println!("K{i} = {}", s.name);
    }
    for (p, d) in exp.train.graph().plates.iter().enumerate() {
        println!("P{p} = {} ({})", d.id, d.size);
    }
    print!("{}", inf.plan(&[])?.dump());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::ListModels => list_models(),
        Command::Run(c) => c.load().and_then(|cfg| {
            let summary = mpis_cli::runner::run(&cfg)?;
            for s in summary {
                println!(
                    "{:<6} K={:<5} elbo {:.4} ± {:.4}  predictive {:.4} ± {:.4}  {:.4}s",
                    s.method, s.k, s.elbo_mean, s.elbo_se, s.predictive_ll_mean, s.predictive_ll_se, s.wall_time_mean
                );
            }
            println!("wrote {}", cfg.out.display());
            Ok(())
        }),
        Command::Verify(c) => c.load().and_then(|cfg| {
            let report = verify(&cfg)?;
            for d in &report {
                println!("{d}");
            }
            match report.iter().map(|d| d.max()).fold(0.0, f64::max) {
                worst if worst < TOLERANCE => Ok(()),
                worst => Err(CliError::Numeric(format!("max discrepancy {worst:.3e} exceeds {TOLERANCE:e}"))),
            }
        }),
        Command::DumpPlan(c) => c.load().and_then(|cfg| dump_plan(&cfg)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
