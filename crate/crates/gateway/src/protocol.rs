//! JSON messages exchanged over the session socket.
//!
//! Every message is a JSON object with a `kind` tag. The client opens with a
//! [`Handshake`]; after that it sends [`ClientMessage`]s and receives
//! [`ServerMessage`]s, each carrying a per-connection sequence number.

use gesture_ucb::metrics::GesturePrecision;
use gesture_ucb::{GameState, Gesture, RewardSource};
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

/// Close code for malformed or out-of-order messages.
pub const CLOSE_PROTOCOL_VIOLATION: u16 = 4000;
/// Close code for a handshake with an unsupported `proto`.
pub const CLOSE_VERSION_MISMATCH: u16 = 4001;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Handshake {
    pub proto: u32,
    pub player_id: String,
    /// Name of a difficulty preset served by `GET /configs`.
    pub config: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientMessage {
    #[serde(flatten)]
    pub body: ClientBody,
    /// Client clock in milliseconds, echoed nowhere; kept for client-side logs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ts: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClientBody {
    /// The player performs a gesture.
    Intent { gesture: Gesture },
    /// Spacebar: the last gesture got no response.
    Report,
    /// Starts the next round, optionally switching preset.
    Start {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        config: Option<String>,
    },
    Pause,
    Resume,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServerMessage {
    pub seq: u64,
    /// Milliseconds since the connection was accepted.
    pub ts: f64,
    #[serde(flatten)]
    pub body: ServerBody,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ServerBody {
    /// Reply to the handshake.
    Welcome {
        proto: u32,
        player_id: String,
        config: String,
        /// The model was restored from this player's stored snapshot.
        resumed: bool,
        dim: usize,
        frames_per_second: f64,
    },
    GameState {
        round: u32,
        paused: bool,
        /// Round in progress; false after completion until the next `start`.
        active: bool,
        attempts: usize,
        path: Vec<Gesture>,
        #[serde(flatten)]
        game: GameState,
    },
    Emission {
        frame: u64,
        class: Gesture,
        pending: Option<Gesture>,
    },
    Reward {
        frame: u64,
        value: i8,
        source: RewardSource,
        /// Pull records the reward was applied to; 0 with learning off.
        credited: usize,
    },
    Telemetry {
        frame: u64,
        arm: usize,
        scores: Vec<f64>,
        theta_norms: Vec<f64>,
        fnr: Option<f64>,
        rolling_precision: Option<f64>,
    },
    RoundSummary {
        round: u32,
        completed: bool,
        attempts: usize,
        fnr: Option<f64>,
        mean_delta: Option<f64>,
        per_gesture: Vec<GesturePrecision>,
        snapshot_saved: bool,
    },
}

impl ServerBody {
    /// Telemetry may be dropped under backpressure; everything else may not.
    pub fn is_droppable(&self) -> bool {
        matches!(self, ServerBody::Telemetry { .. })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn client_messages_parse() {
        let m: ClientMessage =
            serde_json::from_str(r#"{"kind":"intent","gesture":"left","ts":12.5}"#).unwrap();
        assert_eq!(
            m.body,
            ClientBody::Intent {
                gesture: Gesture::Left
            }
        );
        let m: ClientMessage = serde_json::from_str(r#"{"kind":"report"}"#).unwrap();
        assert_eq!(m.body, ClientBody::Report);
        let m: ClientMessage = serde_json::from_str(r#"{"kind":"start"}"#).unwrap();
        assert_eq!(m.body, ClientBody::Start { config: None });
    }

    #[test]
    fn bad_client_messages_fail() {
        for text in [
            r#"{"kind":"intent","gesture":"sideways"}"#,
            r#"{"kind":"intent"}"#,
            r#"{"kind":"dance"}"#,
            r#"{"gesture":"up"}"#,
            "[]",
        ] {
            assert!(serde_json::from_str::<ClientMessage>(text).is_err(), "{text}");
        }
    }

    #[test]
    fn handshake_rejects_extra_fields() {
        let ok = r#"{"proto":1,"player_id":"p1","config":"standard"}"#;
        assert!(serde_json::from_str::<Handshake>(ok).is_ok());
        let extra = r#"{"proto":1,"player_id":"p1","config":"standard","x":1}"#;
        assert!(serde_json::from_str::<Handshake>(extra).is_err());
    }

    #[test]
    fn server_message_is_flat() {
        let m = ServerMessage {
            seq: 3,
            ts: 1.0,
            body: ServerBody::Reward {
                frame: 10,
                value: -1,
                source: RewardSource::UserReport,
                credited: 2,
            },
        };
        let v: serde_json::Value = serde_json::to_value(&m).unwrap();
        assert_eq!(v["kind"], "reward");
        assert_eq!(v["seq"], 3);
        assert_eq!(v["source"], "user_report");
        let back: ServerMessage = serde_json::from_value(v).unwrap();
        assert_eq!(back, m);
    }
}
