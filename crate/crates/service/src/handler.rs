//! Transport-independent session logic: one [`SessionHandler`] per connection.

use std::sync::Arc;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use reachguide::reach_mdp::{ReachPolicy, DEFAULT_EXTENT, DEFAULT_RESOLUTION};
use reachguide::session::{EventKind, GuidanceSession, PlannerMode, SessionConfig, SessionEvent};
use reachguide::simulator::StartDistribution;

use crate::wire::{ClientMessage, SceneInstance, ServerMessage, Workspace, PROTOCOL_VERSION};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("expected hello first")]
    NoHello,
    #[error("hello already received; send reset to change mode")]
    DuplicateHello,
    #[error("unsupported protocol version {0}")]
    Version(u32),
    #[error("pose time {t} does not increase past {last}")]
    NonIncreasingTime { t: f64, last: f64 },
    #[error("non-finite pose")]
    NonFinitePose,
    #[error("discrete mode unavailable: the server has no policy")]
    NoPolicy,
    #[error("target {0:?} lies outside the workspace")]
    TargetOutsideWorkspace([f64; 3]),
}

/// Distractor layout around the generated target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub rows: usize,
    pub cols: usize,
    /// Center-to-center spacing, meters.
    pub spacing: f64,
    pub start: StartDistribution,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            rows: 3,
            cols: 4,
            spacing: 0.15,
            start: StartDistribution::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub session: SessionConfig,
    pub scene: SceneConfig,
    /// Seconds without a client message before the connection closes.
    pub idle_timeout: f64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            session: SessionConfig::default(),
            scene: SceneConfig::default(),
            idle_timeout: 60.0,
        }
    }
}

struct Hello {
    mode: PlannerMode,
    target: Vector3<f64>,
    seed: u64,
}

struct Active {
    session: GuidanceSession,
    last: Option<(f64, Vector3<f64>)>,
}

pub struct SessionHandler {
    policy: Option<Arc<ReachPolicy>>,
    config: ServiceConfig,
    hello: Option<Hello>,
    active: Option<Active>,
    /// Event logs of sessions that reached done.
    finished: Vec<Vec<SessionEvent>>,
}

impl SessionHandler {
    pub fn new(policy: Option<Arc<ReachPolicy>>, config: ServiceConfig) -> Self {
        Self {
            policy,
            config,
            hello: None,
            active: None,
            finished: Vec::new(),
        }
    }

    fn extent(&self) -> f64 {
        self.policy
            .as_ref()
            .map_or(DEFAULT_EXTENT, |p| p.metadata().extent)
    }

    fn resolution(&self) -> f64 {
        self.policy
            .as_ref()
            .map_or(DEFAULT_RESOLUTION, |p| p.metadata().resolution)
    }

    /// Completed transcripts, oldest first.
    pub fn transcripts(&self) -> &[Vec<SessionEvent>] {
        &self.finished
    }

    /// Events of the session in progress, if any.
    pub fn current_events(&self) -> Option<&[SessionEvent]> {
        self.active.as_ref().map(|a| a.session.events())
    }

    pub fn handle_text(&mut self, text: &str) -> Result<Vec<ServerMessage>, ProtocolError> {
        let msg: ClientMessage =
            serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
        self.handle(msg)
    }

    pub fn handle(&mut self, msg: ClientMessage) -> Result<Vec<ServerMessage>, ProtocolError> {
        match msg {
            ClientMessage::Hello {
                version,
                mode,
                target,
                seed,
            } => {
                if self.hello.is_some() {
                    return Err(ProtocolError::DuplicateHello);
                }
                if version != PROTOCOL_VERSION {
                    return Err(ProtocolError::Version(version));
                }
                if mode == PlannerMode::Discrete && self.policy.is_none() {
                    return Err(ProtocolError::NoPolicy);
                }
                let seed = seed.unwrap_or(0);
                let target = match target {
                    Some(t) => {
                        let e = self.extent() + 1e-9;
                        if t.iter().any(|v| !v.is_finite() || v.abs() > e) {
                            return Err(ProtocolError::TargetOutsideWorkspace(t));
                        }
                        Vector3::from(t)
                    }
                    None => {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        self.config.scene.start.sample(&mut rng)
                    }
                };
                self.hello = Some(Hello { mode, target, seed });
                Ok(vec![self.start_session()])
            }
            ClientMessage::Reset => {
                if self.hello.is_none() {
                    return Err(ProtocolError::NoHello);
                }
                Ok(vec![self.start_session()])
            }
            ClientMessage::Pose { t, x, y, z } => self.pose(t, Vector3::new(x, y, z)),
        }
    }

    fn start_session(&mut self) -> ServerMessage {
        let hello = self.hello.as_ref().expect("checked by caller");
        let session = GuidanceSession::new(
            hello.mode,
            self.policy.clone(),
            hello.target,
            self.config.session,
        )
        .expect("policy checked at hello");
        let scene = scene(&self.config.scene, hello, self.extent(), self.resolution());
        self.active = Some(Active {
            session,
            last: None,
        });
        scene
    }

    fn pose(&mut self, t: f64, p: Vector3<f64>) -> Result<Vec<ServerMessage>, ProtocolError> {
        let Some(active) = self.active.as_mut() else {
            return Err(ProtocolError::NoHello);
        };
        if !(t.is_finite() && p.iter().all(|v| v.is_finite())) {
            return Err(ProtocolError::NonFinitePose);
        }
        if let Some((last, _)) = active.last {
            if t <= last {
                return Err(ProtocolError::NonIncreasingTime { t, last });
            }
        }
        let speed = hand_speed(active.last, t, &p);
        active.last = Some((t, p));
        if active.session.is_finished() {
            // clients keep streaming after done; nothing more to say until reset
            return Ok(Vec::new());
        }
        let event = active
            .session
            .step(p, speed, t)
            .expect("time and finiteness checked above");
        let mut out = Vec::new();
        if let Some(ev) = event {
            let done = ev.kind == EventKind::Done;
            out.push(ServerMessage::Event { event: ev });
            if done {
                let events = active.session.events().to_vec();
                out.push(ServerMessage::Metrics {
                    metrics: active.session.metrics(),
                });
                out.push(ServerMessage::Transcript {
                    events: events.clone(),
                });
                self.finished.push(events);
            }
        }
        Ok(out)
    }
}

/// Speed from the previous pose; zero for the first one.
pub fn hand_speed(last: Option<(f64, Vector3<f64>)>, t: f64, p: &Vector3<f64>) -> f64 {
    match last {
        Some((t0, p0)) => (p - p0).norm() / (t - t0),
        None => 0.0,
    }
}

fn scene(cfg: &SceneConfig, hello: &Hello, extent: f64, resolution: f64) -> ServerMessage {
    let mut rng = ChaCha8Rng::seed_from_u64(hello.seed ^ 0x5ce9e);
    let target = hello.target;
    // grid of lookalikes in the target's shelf plane; the target takes one random slot
    let slot = rng.random_range(0..(cfg.rows * cfg.cols).max(1));
    let (sr, sc) = (slot / cfg.cols.max(1), slot % cfg.cols.max(1));
    let mut distractors = Vec::new();
    let mut id = 1;
    for r in 0..cfg.rows {
        for c in 0..cfg.cols {
            if (r, c) == (sr, sc) {
                continue;
            }
            let x = target.x + (c as f64 - sc as f64) * cfg.spacing;
            let y = target.y + (r as f64 - sr as f64) * cfg.spacing;
            distractors.push(SceneInstance {
                id,
                position: [x, y, target.z],
                w: 0.08,
                h: 0.12,
                similarity: rng.random_range(0.1..0.55),
            });
            id += 1;
        }
    }
    ServerMessage::Scene {
        version: PROTOCOL_VERSION,
        mode: hello.mode,
        target: target.into(),
        hand_start: [0.0; 3],
        workspace: Workspace { extent, resolution },
        distractors,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn continuous_handler() -> SessionHandler {
        SessionHandler::new(None, ServiceConfig::default())
    }

    fn hello(mode: PlannerMode) -> ClientMessage {
        ClientMessage::Hello {
            version: PROTOCOL_VERSION,
            mode,
            target: Some([0.0, 0.2, 0.0]),
            seed: Some(1),
        }
    }

    fn pose(t: f64, y: f64) -> ClientMessage {
        ClientMessage::Pose {
            t,
            x: 0.0,
            y,
            z: 0.0,
        }
    }

    #[test]
    fn pose_before_hello_is_an_error() {
        let mut h = continuous_handler();
        assert_eq!(h.handle(pose(0.0, 0.0)), Err(ProtocolError::NoHello));
    }

    #[test]
    fn non_increasing_time_is_an_error() {
        let mut h = continuous_handler();
        h.handle(hello(PlannerMode::Continuous)).unwrap();
        h.handle(pose(1.0, 0.0)).unwrap();
        assert!(matches!(
            h.handle(pose(1.0, 0.0)),
            Err(ProtocolError::NonIncreasingTime { .. })
        ));
    }

    #[test]
    fn discrete_without_policy_is_refused() {
        let mut h = continuous_handler();
        assert_eq!(
            h.handle(hello(PlannerMode::Discrete)),
            Err(ProtocolError::NoPolicy)
        );
    }

    #[test]
    fn reset_gives_a_fresh_overview() {
        let mut h = continuous_handler();
        let scene = h.handle(hello(PlannerMode::Continuous)).unwrap();
        assert!(matches!(scene[0], ServerMessage::Scene { .. }));
        let first = h.handle(pose(0.0, 0.0)).unwrap();
        assert!(
            matches!(&first[0], ServerMessage::Event { event } if event.kind == EventKind::Overview)
        );
        h.handle(pose(0.1, 0.0)).unwrap();
        let again = h.handle(ClientMessage::Reset).unwrap();
        assert!(matches!(again[0], ServerMessage::Scene { .. }));
        let first = h.handle(pose(0.0, 0.0)).unwrap();
        assert!(
            matches!(&first[0], ServerMessage::Event { event } if event.kind == EventKind::Overview)
        );
    }

    #[test]
    fn generated_scene_is_seeded() {
        let msg = |seed| {
            let mut h = continuous_handler();
            h.handle(ClientMessage::Hello {
                version: PROTOCOL_VERSION,
                mode: PlannerMode::Continuous,
                target: None,
                seed: Some(seed),
            })
            .unwrap()
        };
        assert_eq!(msg(4), msg(4));
        assert_ne!(msg(4), msg(5));
        let ServerMessage::Scene {
            distractors,
            target,
            ..
        } = &msg(4)[0]
        else {
            panic!("scene expected")
        };
        assert_eq!(distractors.len(), 11);
        assert!(target.iter().all(|v| (0.1..=0.6).contains(&v.abs())));
    }

    #[test]
    fn malformed_text() {
        let mut h = continuous_handler();
        assert!(matches!(
            h.handle_text("{"),
            Err(ProtocolError::Malformed(_))
        ));
    }
}
