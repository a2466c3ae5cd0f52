use std::path::PathBuf;

use clap::Args;
use pretrial_service::{serve as run_server, AppState, ServiceConfig};

use super::model::load_model;
use super::psa::load_psa_config;
use crate::{invalid, CliError, Io};

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Tree or forest served by /predict. Without it /predict answers 409.
    #[arg(long, value_name = "JSON")]
    pub model: Option<PathBuf>,
    /// Append-only decision log; replayed on start.
    #[arg(long, value_name = "PATH")]
    pub log_path: PathBuf,
    /// PSA configuration (TOML) for /assess. Built-in table when omitted.
    #[arg(long, value_name = "TOML")]
    pub psa_config: Option<PathBuf>,
    /// Require "Authorization: Bearer <token>" on every request.
    #[arg(long)]
    pub token: Option<String>,
}

pub fn serve(args: ServeArgs, io: &mut Io) -> Result<(), CliError> {
    let config = ServiceConfig {
        psa: load_psa_config(args.psa_config.as_deref())?,
        model: args.model.as_deref().map(load_model).transpose()?,
        log_path: args.log_path.clone(),
        token: args.token.clone(),
    };
    let state = AppState::open(config).map_err(invalid)?;
    io.note(&format!("replayed {} decisions from {}", state.decisions().len(), args.log_path.display()));
    let runtime = tokio::runtime::Runtime::new().map_err(invalid)?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind((args.host.as_str(), args.port))
            .await
            .map_err(|e| invalid(format!("cannot bind {}:{}: {e}", args.host, args.port)))?;
        let addr = listener.local_addr().map_err(invalid)?;
        io.note(&format!("listening on http://{addr}"));
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        run_server(listener, state, shutdown).await.map_err(invalid)
    })
}
