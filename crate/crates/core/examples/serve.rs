//! Start the HTTP service with settings from `RES_*` environment variables.
//!
//! cargo run --example serve
//! curl -s localhost:8080/api/query -d '{"question":"Compare CRISPR vs gene therapy"}' -H 'content-type: application/json'

use res_agent::service::{serve, AppState, ServiceConfig};

#[tokio::main]
async fn main() -> std::io::Result<()> {
    let config = ServiceConfig::from_env().map_err(std::io::Error::other)?;
    let addr = config.socket_addr().map_err(std::io::Error::other)?;
    let state = AppState::open(config)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    println!("listening on http://{}", listener.local_addr()?);
    serve(listener, state, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
}
