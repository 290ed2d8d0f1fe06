//! WebSocket session server for playing the navigation game live.
//!
//! Keyboard intents from the browser are turned into embedding frames by a
//! per-player corrupted decoder, then run through the same bandit,
//! post-processing and game pipeline the simulation harness uses.
//!
//! HTTP routes: `GET /healthz`, `GET /configs`, `GET /players/{id}/snapshot`
//! and the socket at `GET /ws`.

pub mod config;
pub mod protocol;
pub mod server;
pub mod session;

use std::sync::Arc;

use gesture_ucb::FileStore;
use tokio::net::TcpListener;

pub use config::{default_presets, GatewayConfig, Preset};
pub use protocol::{
    ClientBody, ClientMessage, Handshake, ServerBody, ServerMessage, CLOSE_PROTOCOL_VIOLATION,
    CLOSE_VERSION_MISMATCH, PROTOCOL_VERSION,
};
pub use server::{router, AppState};
pub use session::{GatewayContext, Session, SessionError};

/// Builds the shared context with snapshots stored under the data directory.
pub fn context(config: GatewayConfig) -> gesture_ucb::Result<Arc<GatewayContext>> {
    let store = FileStore::new(config.players_dir())?;
    Ok(Arc::new(GatewayContext::new(config, Arc::new(store))?))
}

/// Serves until the listener fails.
pub async fn serve(listener: TcpListener, ctx: Arc<GatewayContext>) -> std::io::Result<()> {
    axum::serve(listener, router(AppState::new(ctx))).await
}
