use std::collections::HashSet;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::ws::{CloseFrame, Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures::stream::SplitStream;
use futures::{SinkExt, StreamExt};
use gesture_ucb::store::valid_key;
use tokio::sync::mpsc;
use tokio::time::MissedTickBehavior;

use crate::protocol::{
    ClientMessage, Handshake, ServerBody, ServerMessage, CLOSE_PROTOCOL_VIOLATION,
    CLOSE_VERSION_MISMATCH, PROTOCOL_VERSION,
};
use crate::session::{GatewayContext, Session, SessionError};

const CLOSE_INTERNAL: u16 = 1011;

#[derive(Clone)]
pub struct AppState {
    pub ctx: Arc<GatewayContext>,
    connected: Arc<Mutex<HashSet<String>>>,
}

impl AppState {
    pub fn new(ctx: Arc<GatewayContext>) -> Self {
        Self {
            ctx,
            connected: Arc::default(),
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/configs", get(configs))
        .route("/players/{id}/snapshot", get(snapshot))
        .route("/ws", get(upgrade))
        .with_state(state)
}

async fn configs(State(state): State<AppState>) -> Response {
    Json(&state.ctx.config.presets).into_response()
}

async fn snapshot(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    if valid_key(&id).is_err() {
        return (StatusCode::BAD_REQUEST, "invalid player id").into_response();
    }
    match state.ctx.store.load(&id) {
        Ok(Some(doc)) => Json(doc).into_response(),
        Ok(None) => (StatusCode::NOT_FOUND, "no snapshot for this player").into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| connection(socket, state))
}

#[derive(Debug)]
pub enum Outgoing {
    Text(String),
    Close(u16, String),
}

/// Numbers outgoing messages and applies the backpressure rule: telemetry is
/// dropped when the queue is full, everything else waits for room.
pub struct Outbox {
    tx: mpsc::Sender<Outgoing>,
    seq: u64,
    start: Instant,
    dropped: u64,
}

#[derive(Debug, PartialEq, Eq)]
pub struct WriterGone;

impl Outbox {
    pub fn new(capacity: usize) -> (Self, mpsc::Receiver<Outgoing>) {
        let (tx, rx) = mpsc::channel(capacity);
        let outbox = Self {
            tx,
            seq: 0,
            start: Instant::now(),
            dropped: 0,
        };
        (outbox, rx)
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub async fn push(&mut self, body: ServerBody) -> Result<(), WriterGone> {
        let droppable = body.is_droppable();
        let msg = ServerMessage {
            seq: self.seq,
            ts: self.start.elapsed().as_secs_f64() * 1000.0,
            body,
        };
        self.seq += 1;
        let text = Outgoing::Text(serde_json::to_string(&msg).expect("message serializes"));
        if droppable {
            match self.tx.try_send(text) {
                Ok(()) => Ok(()),
                Err(mpsc::error::TrySendError::Full(_)) => {
                    self.dropped += 1;
                    Ok(())
                }
                Err(mpsc::error::TrySendError::Closed(_)) => Err(WriterGone),
            }
        } else {
            self.tx.send(text).await.map_err(|_| WriterGone)
        }
    }

    pub async fn push_all(&mut self, bodies: Vec<ServerBody>) -> Result<(), WriterGone> {
        for b in bodies {
            self.push(b).await?;
        }
        Ok(())
    }

    pub async fn close(&mut self, code: u16, reason: impl Into<String>) {
        let _ = self.tx.send(Outgoing::Close(code, reason.into())).await;
    }
}

/// Removes the player from the connected set when the connection ends.
struct Claim {
    connected: Arc<Mutex<HashSet<String>>>,
    player_id: String,
}

impl Drop for Claim {
    fn drop(&mut self) {
        self.connected
            .lock()
            .expect("connected set lock")
            .remove(&self.player_id);
    }
}

async fn connection(socket: WebSocket, state: AppState) {
    let (mut sink, mut stream) = socket.split();
    let (mut outbox, mut rx) = Outbox::new(state.ctx.config.outbound_capacity);
    let writer = tokio::spawn(async move {
        while let Some(out) = rx.recv().await {
            match out {
                Outgoing::Text(text) => {
                    if sink.send(Message::Text(text.into())).await.is_err() {
                        break;
                    }
                }
                Outgoing::Close(code, reason) => {
                    let frame = CloseFrame {
                        code,
                        reason: close_reason(reason).into(),
                    };
                    let _ = sink.send(Message::Close(Some(frame))).await;
                    break;
                }
            }
        }
    });
    let closing = run(&mut stream, &mut outbox, &state).await;
    if let Some((code, reason)) = &closing {
        tracing::info!(code, %reason, "closing connection");
        outbox.close(*code, reason.clone()).await;
    }
    drop(outbox);
    let _ = writer.await;
    if closing.is_some() {
        // wait for the client's half of the closing handshake so the close
        // frame is not lost to a reset connection
        let _ = tokio::time::timeout(Duration::from_secs(1), async {
            while let Some(Ok(msg)) = stream.next().await {
                if matches!(msg, Message::Close(_)) {
                    break;
                }
            }
        })
        .await;
    }
}

/// Control frames carry at most 123 bytes of reason text.
fn close_reason(mut reason: String) -> String {
    if reason.len() > 123 {
        let mut end = 123;
        while !reason.is_char_boundary(end) {
            end -= 1;
        }
        reason.truncate(end);
    }
    reason
}

type Closing = Option<(u16, String)>;

fn violation(reason: impl Into<String>) -> Closing {
    Some((CLOSE_PROTOCOL_VIOLATION, reason.into()))
}

fn session_close(e: SessionError) -> Closing {
    match e {
        SessionError::Version(v) => Some((
            CLOSE_VERSION_MISMATCH,
            format!("protocol version {v} is not supported, expected {PROTOCOL_VERSION}"),
        )),
        SessionError::Protocol(m) => violation(m),
        SessionError::Core(e) => {
            tracing::error!(error = %e, "session failed");
            Some((CLOSE_INTERNAL, "internal error".into()))
        }
    }
}

fn parse_handshake(text: &str) -> Result<Handshake, Closing> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| violation(format!("handshake is not JSON: {e}")))?;
    if let Some(proto) = value.get("proto").and_then(|p| p.as_u64()) {
        if proto != PROTOCOL_VERSION as u64 {
            return Err(session_close(SessionError::Version(proto as u32)));
        }
    }
    serde_json::from_value(value).map_err(|e| violation(format!("bad handshake: {e}")))
}

async fn run(
    stream: &mut SplitStream<WebSocket>,
    outbox: &mut Outbox,
    state: &AppState,
) -> Closing {
    let config = &state.ctx.config;
    let first = tokio::time::timeout(
        Duration::from_millis(config.handshake_timeout_ms),
        stream.next(),
    )
    .await;
    let text = match first {
        Err(_) => return violation("handshake timed out"),
        Ok(None) | Ok(Some(Err(_))) | Ok(Some(Ok(Message::Close(_)))) => return None,
        Ok(Some(Ok(Message::Text(t)))) => t,
        Ok(Some(Ok(_))) => return violation("expected a text handshake"),
    };
    let hs = match parse_handshake(text.as_str()) {
        Ok(hs) => hs,
        Err(closing) => return closing,
    };
    if !state
        .connected
        .lock()
        .expect("connected set lock")
        .insert(hs.player_id.clone())
    {
        return violation(format!("player {} is already connected", hs.player_id));
    }
    let _claim = Claim {
        connected: state.connected.clone(),
        player_id: hs.player_id.clone(),
    };
    let (mut session, opening) = match Session::open(state.ctx.clone(), &hs) {
        Ok(s) => s,
        Err(e) => return session_close(e),
    };
    tracing::info!(player = %hs.player_id, config = %hs.config, "session opened");
    if outbox.push_all(opening).await.is_err() {
        return None;
    }

    let mut ticker = tokio::time::interval(config.frame_interval());
    ticker.set_missed_tick_behavior(MissedTickBehavior::Delay);
    let closing = loop {
        tokio::select! {
            incoming = stream.next() => {
                let text = match incoming {
                    None | Some(Err(_)) | Some(Ok(Message::Close(_))) => break None,
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Binary(_))) => break violation("binary messages are not supported"),
                    Some(Ok(_)) => continue,
                };
                let msg: ClientMessage = match serde_json::from_str(text.as_str()) {
                    Ok(m) => m,
                    Err(e) => break violation(format!("bad message: {e}")),
                };
                match session.handle(msg.body) {
                    Ok(out) => {
                        if outbox.push_all(out).await.is_err() {
                            break None;
                        }
                    }
                    Err(e) => break session_close(e),
                }
            }
            _ = ticker.tick() => {
                match session.tick() {
                    Ok(out) => {
                        if outbox.push_all(out).await.is_err() {
                            break None;
                        }
                    }
                    Err(e) => break session_close(e),
                }
            }
        }
    };
    if session.is_active() {
        // keep what was learned in an unfinished round
        if let Err(e) = session.save() {
            tracing::error!(player = %hs.player_id, error = %e, "snapshot save failed");
        }
    }
    if outbox.dropped() > 0 {
        tracing::debug!(player = %hs.player_id, dropped = outbox.dropped(), "telemetry dropped");
    }
    closing
}

#[cfg(test)]
mod tests {
    use super::*;
    use gesture_ucb::Gesture;

    fn telemetry(frame: u64) -> ServerBody {
        ServerBody::Telemetry {
            frame,
            arm: 0,
            scores: vec![],
            theta_norms: vec![],
            fnr: None,
            rolling_precision: None,
        }
    }

    fn seq_of(out: Outgoing) -> u64 {
        match out {
            Outgoing::Text(t) => serde_json::from_str::<ServerMessage>(&t).unwrap().seq,
            Outgoing::Close(..) => panic!("unexpected close"),
        }
    }

    #[tokio::test]
    async fn telemetry_drops_but_state_waits() {
        let (mut outbox, mut rx) = Outbox::new(2);
        for f in 0..4 {
            outbox.push(telemetry(f)).await.unwrap();
        }
        assert_eq!(outbox.dropped(), 2);
        // a state message must wait for room rather than be dropped
        let emission = ServerBody::Emission {
            frame: 4,
            class: Gesture::Up,
            pending: None,
        };
        let push = tokio::spawn(async move {
            outbox.push(emission).await.unwrap();
            outbox
        });
        assert_eq!(seq_of(rx.recv().await.unwrap()), 0);
        let outbox = push.await.unwrap();
        assert_eq!(seq_of(rx.recv().await.unwrap()), 1);
        // the gap in sequence numbers shows the two dropped messages
        assert_eq!(seq_of(rx.recv().await.unwrap()), 4);
        assert_eq!(outbox.dropped(), 2);
    }

    #[tokio::test]
    async fn push_fails_once_writer_is_gone() {
        let (mut outbox, rx) = Outbox::new(1);
        drop(rx);
        assert_eq!(outbox.push(telemetry(0)).await, Err(WriterGone));
    }

    #[test]
    fn close_reasons_fit_a_control_frame() {
        assert_eq!(close_reason("short".into()), "short");
        let long = "é".repeat(100);
        let cut = close_reason(long);
        assert!(cut.len() <= 123);
        assert!(cut.chars().all(|c| c == 'é'));
    }

    #[test]
    fn handshake_version_is_checked_first() {
        let closing = parse_handshake(r#"{"proto":2,"player_id":"p","config":"x","junk":1}"#);
        assert_eq!(closing.unwrap_err().unwrap().0, CLOSE_VERSION_MISMATCH);
        let closing = parse_handshake(r#"{"proto":1}"#);
        assert_eq!(closing.unwrap_err().unwrap().0, CLOSE_PROTOCOL_VIOLATION);
        let closing = parse_handshake("hello");
        assert_eq!(closing.unwrap_err().unwrap().0, CLOSE_PROTOCOL_VIOLATION);
        assert!(parse_handshake(r#"{"proto":1,"player_id":"p","config":"x"}"#).is_ok());
    }
}
