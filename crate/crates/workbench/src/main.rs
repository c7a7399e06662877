use std::process::ExitCode;

use clap::Parser;
use flowlenia::{Precision, SimConfig};
use flowlenia_workbench::cli::{Cli, Command};
use flowlenia_workbench::commands::{evolve, render, search, simulate};
use flowlenia_workbench::server::{self, AppState};
use flowlenia_workbench::{Result, WorkbenchError};
use serde_json::json;
use tracing_subscriber::EnvFilter;

fn print(value: serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(&value).unwrap_or_default());
}

fn run(cli: Cli) -> Result<()> {
    let precision: Option<Precision> = cli.precision.map(Into::into);
    match &cli.command {
        Command::Simulate(args) => {
            let summary = simulate::run(args, precision)?;
            print(serde_json::to_value(summary)?);
        }
        Command::Search(args) => {
            let (records, checkpoints) = search::run(args, precision)?;
            let localized = records.iter().filter(|r| r.stats.as_ref().is_some_and(|s| s.localized)).count();
            print(json!({
                "samples": records.len(),
                "localized": localized,
                "report": args.report,
                "checkpoints": checkpoints,
            }));
        }
        Command::Evolve(args) => {
            let out = evolve::run(args, precision)?;
            print(json!({
                "generation": out.state.run.es.generation,
                "generations_run": out.history.len(),
                "best_fitness": out.state.run.best_fitness,
                "out": args.out,
            }));
        }
        Command::Render(args) => {
            render::run(args)?;
            print(json!({ "png": args.out }));
        }
        Command::Serve(args) => {
            let config = match &args.config {
                Some(path) => SimConfig::load(path)?,
                None => SimConfig::default(),
            };
            config.validate()?;
            let runtime = tokio::runtime::Runtime::new().map_err(|e| io_error("tokio runtime", e))?;
            runtime.block_on(async {
                let listener = tokio::net::TcpListener::bind(args.bind)
                    .await
                    .map_err(|e| io_error(&args.bind.to_string(), e))?;
                let addr = listener.local_addr().map_err(|e| io_error("listener", e))?;
                tracing::info!(%addr, "serving");
                eprintln!("listening on http://{addr}");
                server::serve(listener, AppState::new(config, precision))
                    .await
                    .map_err(|e| io_error("server", e))
            })?;
        }
    }
    Ok(())
}

fn io_error(context: &str, source: std::io::Error) -> WorkbenchError {
    WorkbenchError::Io {
        context: context.to_string(),
        source,
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
