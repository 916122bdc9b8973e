//! Wire messages: one JSON object per text frame, discriminated by `type`.

use serde::{Deserialize, Serialize};

use reachguide::session::{PlannerMode, SessionEvent, SessionMetrics};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Hello {
        version: u32,
        mode: PlannerMode,
        /// Target in the hand frame, meters. Generated from `seed` when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target: Option<[f64; 3]>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Pose {
        t: f64,
        x: f64,
        y: f64,
        z: f64,
    },
    Reset,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    /// Half-width of the guidance cuboid around the hand start, meters.
    pub extent: f64,
    pub resolution: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneInstance {
    pub id: u64,
    pub position: [f64; 3],
    pub w: f64,
    pub h: f64,
    pub similarity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Scene {
        version: u32,
        mode: PlannerMode,
        target: [f64; 3],
        hand_start: [f64; 3],
        workspace: Workspace,
        distractors: Vec<SceneInstance>,
    },
    Event {
        event: SessionEvent,
    },
    Metrics {
        metrics: SessionMetrics,
    },
    Transcript {
        events: Vec<SessionEvent>,
    },
    Error {
        message: String,
    },
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn client_messages_parse() {
        let m: ClientMessage =
            serde_json::from_str(r#"{"type":"hello","version":1,"mode":"discrete"}"#).unwrap();
        assert_eq!(
            m,
            ClientMessage::Hello {
                version: 1,
                mode: PlannerMode::Discrete,
                target: None,
                seed: None
            }
        );
        let m: ClientMessage =
            serde_json::from_str(r#"{"type":"pose","t":0.5,"x":0.1,"y":0.0,"z":-0.2}"#).unwrap();
        assert_eq!(
            m,
            ClientMessage::Pose {
                t: 0.5,
                x: 0.1,
                y: 0.0,
                z: -0.2
            }
        );
        let m: ClientMessage = serde_json::from_str(r#"{"type":"reset"}"#).unwrap();
        assert_eq!(m, ClientMessage::Reset);
        assert!(serde_json::from_str::<ClientMessage>(r#"{"type":"pose","t":1}"#).is_err());
    }

    #[test]
    fn server_message_tags() {
        let s = serde_json::to_string(&ServerMessage::Error {
            message: "x".into(),
        })
        .unwrap();
        assert_eq!(s, r#"{"type":"error","message":"x"}"#);
    }
}
