use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use morphfader::backend::BackendRegistry;
use morphfader_service::{router, ServiceConfig};

/// HTTP service for interactive sound morphing.
#[derive(Parser)]
#[command(name = "morphfader-service", version)]
struct Args {
    /// Address to bind.
    #[arg(long, env = "MORPHFADER_BIND", default_value = "127.0.0.1")]
    bind: String,

    #[arg(long, env = "MORPHFADER_PORT", default_value_t = 8080)]
    port: u16,

    /// Backend selector: `toy` or `adapter:<name>`.
    #[arg(long, env = "MORPHFADER_BACKEND", default_value = "toy")]
    backend: String,

    /// Generation jobs allowed to run at once.
    #[arg(long, env = "MORPHFADER_WORKERS", default_value_t = 1)]
    workers: usize,

    /// Also save recorded sessions under this directory.
    #[arg(long, env = "MORPHFADER_SPILL_DIR")]
    spill_dir: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> ExitCode {
    let args = Args::parse();
    let backend = match BackendRegistry::default().resolve(&args.backend) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            return ExitCode::FAILURE;
        }
    };
    let mut config = ServiceConfig::new(backend);
    config.workers = args.workers;
    config.spill_dir = args.spill_dir;

    let addr: SocketAddr = match format!("{}:{}", args.bind, args.port).parse() {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error[config]: bad bind address: {e}");
            return ExitCode::FAILURE;
        }
    };
    let listener = match tokio::net::TcpListener::bind(addr).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error[io]: cannot bind {addr}: {e}");
            return ExitCode::FAILURE;
        }
    };
    eprintln!("listening on http://{addr}");
    if let Err(e) = axum::serve(listener, router(config)).await {
        eprintln!("error[io]: {e}");
        return ExitCode::FAILURE;
    }
    ExitCode::SUCCESS
}
