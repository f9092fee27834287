use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use notibus_wire::{Broker, BrokerConfig, DEFAULT_PORT};
use tracing_subscriber::EnvFilter;

/// notibus event broker
#[derive(Parser, Debug)]
#[command(name = "notibusd", version)]
struct Cli {
    /// Address to listen on.
    #[arg(long, default_value_t = format!("0.0.0.0:{DEFAULT_PORT}"))]
    listen: String,
    /// Directory for property sets and logs.
    #[arg(long, env = "NOTIBUS_DATA_DIR")]
    data_dir: PathBuf,
    #[arg(long, default_value = "info", value_parser = ["error", "warn", "info", "debug"])]
    log_level: String,
    /// Milliseconds a dropped client's proxies are kept for reconnection.
    #[arg(long, default_value_t = 5000)]
    reconnect_grace_ms: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::new(format!("notibus_core={0},notibus_wire={0},notibusd={0}", cli.log_level)))
        .with_writer(std::io::stderr)
        .init();
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("notibusd: cannot start runtime: {e}");
            return ExitCode::FAILURE;
        }
    };
    rt.block_on(async {
        if let Err(e) = std::fs::create_dir_all(&cli.data_dir) {
            eprintln!("notibusd: cannot create data dir {}: {e}", cli.data_dir.display());
            return ExitCode::FAILURE;
        }
        let mut cfg = BrokerConfig::new(cli.listen, cli.data_dir);
        cfg.reconnect_grace = std::time::Duration::from_millis(cli.reconnect_grace_ms);
        match Broker::bind(&cfg).await {
            Ok(broker) => {
                broker.run().await;
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("notibusd: {e}");
                ExitCode::FAILURE
            }
        }
    })
}
