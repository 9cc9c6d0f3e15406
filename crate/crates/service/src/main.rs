use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tlens_core::nn::Domain;
use tlens_core::pipeline::artifact::{model_path, SUMMARY};
use tlens_core::pipeline::{load_datasets, run_pipeline, train_models, RunConfig};
use tlens_service::{ArtifactStore, ARTIFACT_ROOT_ENV};

#[derive(Parser)]
#[command(name = "tlens", version, about = "Transfer-learning diagnostics: train, analyze, serve")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the source and fine-tuned target models only.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory receiving source.tlns, target.tlns and history.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full pipeline and publish the artifact under the artifact root.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = ARTIFACT_ROOT_ENV, default_value = "artifacts")]
        out: PathBuf,
    },
    /// Serve every run under the artifact root over HTTP.
    Serve {
        #[arg(long, env = ARTIFACT_ROOT_ENV, default_value = "artifacts")]
        out: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
    /// Print a run's confusion table (CSV) or summary (JSON).
    Export {
        run: String,
        #[arg(long, value_enum, default_value_t = ExportFormat::Csv)]
        format: ExportFormat,
        #[arg(long, env = ARTIFACT_ROOT_ENV, default_value = "artifacts")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportFormat {
    Csv,
    Json,
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig, String> {
    let cfg = RunConfig::load(path).map_err(|e| e.to_string())?;
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let cfg = load_config(&config, seed)?;
            let data = load_datasets(&cfg.data).map_err(|e| e.to_string())?;
            let models = train_models(&cfg.training, &data).map_err(|e| e.to_string())?;
            std::fs::create_dir_all(&out).map_err(|e| format!("{}: {e}", out.display()))?;
            models.source.save(&out.join("source.tlns")).map_err(|e| e.to_string())?;
            models.target.save(&out.join("target.tlns")).map_err(|e| e.to_string())?;
            let history = serde_json::json!({
                "source": models.source.meta.history,
                "target": models.target.meta.history,
            });
            let text = serde_json::to_string_pretty(&history).map_err(|e| e.to_string())?;
            std::fs::write(out.join("history.json"), text).map_err(|e| e.to_string())?;
            println!("wrote models to {}", out.display());
        }
        Command::Analyze { config, seed, out } => {
            let cfg = load_config(&config, seed)?;
            let (run_id, dir, summary) = run_pipeline(&cfg, &out).map_err(|e| e.to_string())?;
            println!("run {run_id} published at {}", dir.display());
            println!(
                "transferability {:+.4} (best target {:.4}, best source {:.4})",
                summary.transferability.score, summary.transferability.best_target, summary.transferability.best_source
            );
            println!("models: {}, {}", model_path(Domain::Source), model_path(Domain::Target));
        }
        Command::Serve { out, port } => {
            let store = ArtifactStore::new(out);
            let runs = store.run_ids().map_err(|e| e.message)?;
            if runs.is_empty() {
                return Err(format!("no runs under {}", store.root().display()));
            }
            println!("serving {} run(s) from {} on http://127.0.0.1:{port}", runs.len(), store.root().display());
            let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
            rt.block_on(tlens_service::serve(store, port)).map_err(|e| e.to_string())?;
        }
        Command::Export { run, format, out } => {
            let store = ArtifactStore::new(out);
            let bytes = match format {
                ExportFormat::Csv => store.read(&run, "confusion.csv"),
                ExportFormat::Json => store.read(&run, SUMMARY),
            }
            .map_err(|e| e.message)?;
            print!("{}", String::from_utf8_lossy(&bytes));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
