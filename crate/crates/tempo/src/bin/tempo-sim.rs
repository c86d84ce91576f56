//! Simulated MCP domain server speaking newline-delimited JSON-RPC on stdio.
//!
//! Usage: `tempo-sim <iot|fmsr|tsfm|wo>`. Behaviour is tuned with the
//! `TEMPO_SIM_*` environment variables (see `SimConfig::from_env`).

use std::process::ExitCode;

use tempo::mcpio::sim::{serve_stdio, Domain, SimConfig, SimData, SimServer};

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tempo-sim: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> anyhow::Result<()> {
    let domain: Domain = std::env::args()
        .nth(1)
        .ok_or_else(|| anyhow::anyhow!("usage: tempo-sim <iot|fmsr|tsfm|wo>"))?
        .parse()?;
    let config = SimConfig::from_env()?;
    let data = match &config.data_dir {
        Some(dir) => SimData::load(dir)?,
        None => SimData::bundled(),
    };
    serve_stdio(&SimServer::new(domain, data, config))?;
    Ok(())
}
