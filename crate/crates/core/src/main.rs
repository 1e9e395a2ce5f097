use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedtte::harness::{
    generate, read_predictions, report_predictions, run_attack, run_experiment, run_export_state, ExperimentConfig,
    HarnessError, Overrides, PREDICTIONS_FILE,
};

#[derive(Parser)]
#[command(name = "fedtte", version, about = "Federated travel-time estimation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic world and its trajectories.
    Generate(Common),
    /// Run federated training and evaluate on the held-out day.
    Train(Common),
    /// Attack-risk sweep over epsilon against a finished training run.
    Attack(Common),
    /// Export per-slot road states from a finished training run.
    ExportState(Common),
    /// Recompute metrics from a prediction dump.
    Metrics(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seeds both the synthetic world and the federation.
    #[arg(long)]
    seed: Option<u64>,
    /// Privacy budget; `inf` disables noise.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Clients selected per round.
    #[arg(long)]
    clients: Option<usize>,
    /// Local epochs per round.
    #[arg(long)]
    epochs: Option<usize>,
    /// Output (or run) directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        cfg.apply(&Overrides {
            seed: self.seed,
            epsilon: self.epsilon,
            clients: self.clients,
            epochs: self.epochs,
        });
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Generate(c) => {
            generate(&c.config()?, &c.out)?;
            println!("wrote {}", c.out.display());
        }
        Command::Train(c) => {
            let out = run_experiment(&c.config()?, Some(&c.out))?;
            let (g, p) = (&out.report.global, &out.report.personalized);
            println!("rounds {}", out.report.rounds);
            println!("global       mae {:.3} rmse {:.3} mape {:.3}%", g.mae, g.rmse, g.mape);
            println!("personalized mae {:.3} rmse {:.3} mape {:.3}%", p.mae, p.rmse, p.mape);
        }
        Command::Attack(c) => {
            let table = run_attack(&c.config()?, &c.out)?;
            for s in &table.summary {
                println!("epsilon {:>8} mean risk {:.4} (no-noise {:.4})", s.epsilon, s.mean_risk, s.ceiling);
            }
        }
        Command::ExportState(c) => {
            run_export_state(&c.config()?, &c.out)?;
            println!("wrote {}", c.out.join(fedtte::harness::STATE_FILE).display());
        }
        Command::Metrics(c) => {
            let path = c.out.join(PREDICTIONS_FILE);
            let file = std::fs::File::open(&path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
            let preds = read_predictions(file)?;
            let report = serde_json::json!({
                "global": report_predictions(&preds, false, "eval_global")?,
                "personalized": report_predictions(&preds, true, "eval_personalized")?,
            });
            // a closed pipe (e.g. `| head`) is not an error worth reporting
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
