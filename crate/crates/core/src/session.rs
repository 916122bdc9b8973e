//! One retrieval episode: plan overview, readiness-gated command issuance, grasp
//! prompt, and metric accounting. Used by the simulator and the live service.

use std::io::{BufRead, Write};
use std::sync::Arc;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::continuous::{ContinuousConfig, ContinuousPlanner, Cue, CueInput};
use crate::direction::{Axis, Direction};
use crate::reach_mdp::{plan_overview, ClockDirection, QueryResult, ReachPolicy};

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("session already finished")]
    SessionFinished,
    #[error("time went backwards: {now} after {last}")]
    TimeNotIncreasing { now: f64, last: f64 },
    #[error("non-finite hand observation")]
    InvalidObservation,
}

#[derive(Debug, thiserror::Error)]
pub enum TranscriptError {
    #[error("transcript line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("transcript invalid: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerMode {
    Discrete,
    Continuous,
}

impl std::fmt::Display for PlannerMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PlannerMode::Discrete => "discrete",
            PlannerMode::Continuous => "continuous",
        })
    }
}

impl std::str::FromStr for PlannerMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "discrete" => Ok(PlannerMode::Discrete),
            "continuous" => Ok(PlannerMode::Continuous),
            other => Err(format!("unknown planner mode `{other}`")),
        }
    }
}

/// Seconds each kind of utterance takes to speak.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UtteranceDurations {
    pub overview: f64,
    pub discrete_command: f64,
    pub continuous_cue: f64,
    pub stop: f64,
    pub grasp_prompt: f64,
}

impl Default for UtteranceDurations {
    fn default() -> Self {
        Self {
            overview: 2.5,
            discrete_command: 1.5,
            continuous_cue: 1.0,
            stop: 0.3,
            grasp_prompt: 1.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub durations: UtteranceDurations,
    /// Hand speeds below this (m/s) count as slowed down.
    pub ready_speed: f64,
    /// Seconds the hand must stay slow before the next command.
    pub settle_time: f64,
    /// Seconds after a movement command ends with no observed motion before the
    /// session stops waiting for the hand to move.
    pub response_timeout: f64,
    pub continuous: ContinuousConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            durations: UtteranceDurations::default(),
            ready_speed: 0.05,
            settle_time: 0.3,
            response_timeout: 3.0,
            continuous: ContinuousConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Overview,
    Command,
    Stop,
    GraspPrompt,
    Done,
}

/// Machine-readable descriptor of an event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventPayload {
    Overview {
        clock: ClockDirection,
    },
    Move {
        command_id: usize,
        direction: Direction,
        magnitude_m: f64,
    },
    Cue {
        direction: Direction,
    },
    KeepGoing {
        direction: Direction,
    },
    Stop {
        axis: Axis,
    },
    GraspPrompt,
    Done {
        metrics: SessionMetrics,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub time: f64,
    pub kind: EventKind,
    pub utterance: String,
    pub payload: EventPayload,
}

impl SessionEvent {
    /// Movement commands and stops; these are what `n_commands` counts.
    pub fn is_guidance_command(&self) -> bool {
        matches!(self.kind, EventKind::Command | EventKind::Stop)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    /// Command and stop events; the overview and grasp prompt are not counted.
    pub n_commands: usize,
    /// Seconds from the first movement command to done.
    pub guide_time: f64,
    /// Hand path length over the session, meters.
    pub net_hand_movement: f64,
    pub success: bool,
    pub overview_time: Option<f64>,
    pub first_command_time: Option<f64>,
    pub end_time: Option<f64>,
}

enum Planner {
    Discrete(Arc<ReachPolicy>),
    Continuous(ContinuousPlanner),
}

pub struct GuidanceSession {
    planner: Planner,
    target: Vector3<f64>,
    config: SessionConfig,
    events: Vec<SessionEvent>,
    n_commands: usize,
    path_length: f64,
    last_pose: Option<Vector3<f64>>,
    last_time: Option<f64>,
    overview_time: Option<f64>,
    first_command_time: Option<f64>,
    speaking_until: f64,
    utterance_start: f64,
    slow_since: Option<f64>,
    motion_seen: bool,
    prev: Option<Direction>,
    grasp_done_at: Option<f64>,
    finished: bool,
}

impl GuidanceSession {
    pub fn discrete(policy: Arc<ReachPolicy>, target: Vector3<f64>, config: SessionConfig) -> Self {
        Self::with_planner(Planner::Discrete(policy), target, config)
    }

    pub fn continuous(target: Vector3<f64>, config: SessionConfig) -> Self {
        let planner = ContinuousPlanner::new(config.continuous);
        Self::with_planner(Planner::Continuous(planner), target, config)
    }

    /// Build a session for `mode`; discrete sessions need a policy.
    pub fn new(
        mode: PlannerMode,
        policy: Option<Arc<ReachPolicy>>,
        target: Vector3<f64>,
        config: SessionConfig,
    ) -> Option<Self> {
        match mode {
            PlannerMode::Discrete => policy.map(|p| Self::discrete(p, target, config)),
            PlannerMode::Continuous => Some(Self::continuous(target, config)),
        }
    }

    fn with_planner(planner: Planner, target: Vector3<f64>, config: SessionConfig) -> Self {
        Self {
            planner,
            target,
            config,
            events: Vec::new(),
            n_commands: 0,
            path_length: 0.0,
            last_pose: None,
            last_time: None,
            overview_time: None,
            first_command_time: None,
            speaking_until: f64::NEG_INFINITY,
            utterance_start: f64::NEG_INFINITY,
            slow_since: None,
            motion_seen: true,
            prev: None,
            grasp_done_at: None,
            finished: false,
        }
    }

    pub fn mode(&self) -> PlannerMode {
        match self.planner {
            Planner::Discrete(_) => PlannerMode::Discrete,
            Planner::Continuous(_) => PlannerMode::Continuous,
        }
    }

    pub fn target(&self) -> Vector3<f64> {
        self.target
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    pub fn n_commands(&self) -> usize {
        self.n_commands
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Metrics so far; `success` is set once the session reaches done.
    pub fn metrics(&self) -> SessionMetrics {
        let end = self
            .events
            .last()
            .filter(|e| e.kind == EventKind::Done)
            .map(|e| e.time);
        let guide_time = match (self.first_command_time, end.or(self.last_time)) {
            (Some(first), Some(end)) => end - first,
            _ => 0.0,
        };
        SessionMetrics {
            n_commands: self.n_commands,
            guide_time,
            net_hand_movement: self.path_length,
            success: self.finished,
            overview_time: self.overview_time,
            first_command_time: self.first_command_time,
            end_time: end.or(self.last_time),
        }
    }

    /// Feed one hand observation; returns at most one event.
    pub fn step(
        &mut self,
        hand: Vector3<f64>,
        hand_speed: f64,
        now: f64,
    ) -> Result<Option<SessionEvent>, SessionError> {
        if self.finished {
            return Err(SessionError::SessionFinished);
        }
        if !(now.is_finite() && hand_speed.is_finite() && hand.iter().all(|v| v.is_finite())) {
            return Err(SessionError::InvalidObservation);
        }
        if let Some(last) = self.last_time {
            if now <= last {
                return Err(SessionError::TimeNotIncreasing { now, last });
            }
        }
        if let Some(p) = self.last_pose {
            self.path_length += (hand - p).norm();
        }
        self.last_pose = Some(hand);
        self.last_time = Some(now);

        if hand_speed >= self.config.ready_speed {
            self.slow_since = None;
            if now >= self.utterance_start {
                self.motion_seen = true;
            }
        } else if self.slow_since.is_none() {
            self.slow_since = Some(now);
        }

        if self.overview_time.is_none() {
            let clock = plan_overview(&hand, &self.target);
            self.overview_time = Some(now);
            let d = self.config.durations.overview;
            return Ok(Some(self.emit(
                now,
                d,
                EventKind::Overview,
                clock.utterance(),
                EventPayload::Overview { clock },
            )));
        }

        if let Some(done_at) = self.grasp_done_at {
            if now < done_at {
                return Ok(None);
            }
            self.finished = true;
            let mut metrics = self.metrics();
            metrics.end_time = Some(now);
            if let Some(first) = self.first_command_time {
                metrics.guide_time = now - first;
            }
            let ev = SessionEvent {
                time: now,
                kind: EventKind::Done,
                utterance: String::new(),
                payload: EventPayload::Done { metrics },
            };
            self.events.push(ev.clone());
            return Ok(Some(ev));
        }

        let ready = self.is_ready(now);
        let event = match &mut self.planner {
            Planner::Discrete(policy) => {
                if !ready {
                    return Ok(None);
                }
                match policy.query(&hand, &self.target, self.prev) {
                    QueryResult::Done => self.grasp_prompt(now),
                    QueryResult::Command(id) => {
                        let spec = policy
                            .command(id)
                            .expect("policy actions index its model")
                            .clone();
                        self.prev = Some(spec.direction);
                        let d = self.config.durations.discrete_command;
                        self.movement(now, d);
                        self.emit(
                            now,
                            d,
                            EventKind::Command,
                            spec.utterance,
                            EventPayload::Move {
                                command_id: id,
                                direction: spec.direction,
                                magnitude_m: spec.nominal_magnitude,
                            },
                        )
                    }
                }
            }
            Planner::Continuous(planner) => {
                let cue = planner.next_cue(&CueInput {
                    hand,
                    hand_speed,
                    target: self.target,
                    now,
                    ready,
                });
                let d = self.config.durations;
                match cue {
                    Cue::Silent => return Ok(None),
                    Cue::Done => self.grasp_prompt(now),
                    Cue::Cue(direction) => {
                        self.movement(now, d.continuous_cue);
                        self.emit(
                            now,
                            d.continuous_cue,
                            EventKind::Command,
                            format!("Keep on going {direction}"),
                            EventPayload::Cue { direction },
                        )
                    }
                    Cue::KeepGoing(direction) => {
                        self.movement(now, d.continuous_cue);
                        self.emit(
                            now,
                            d.continuous_cue,
                            EventKind::Command,
                            "Keep on going".into(),
                            EventPayload::KeepGoing { direction },
                        )
                    }
                    Cue::Stop(axis) => {
                        self.n_commands += 1;
                        self.emit(
                            now,
                            d.stop,
                            EventKind::Stop,
                            "Stop".into(),
                            EventPayload::Stop { axis },
                        )
                    }
                }
            }
        };
        Ok(Some(event))
    }

    fn is_ready(&self, now: f64) -> bool {
        let quiet = now >= self.speaking_until;
        let settled = self
            .slow_since
            .is_some_and(|t| now - t >= self.config.settle_time - 1e-9);
        let responded =
            self.motion_seen || now >= self.speaking_until + self.config.response_timeout;
        quiet && settled && responded
    }

    /// Bookkeeping for a command that asks the hand to move.
    fn movement(&mut self, now: f64, _duration: f64) {
        self.n_commands += 1;
        self.first_command_time.get_or_insert(now);
        self.motion_seen = false;
    }

    fn grasp_prompt(&mut self, now: f64) -> SessionEvent {
        let d = self.config.durations.grasp_prompt;
        self.grasp_done_at = Some(now + d);
        self.emit(
            now,
            d,
            EventKind::GraspPrompt,
            "Please grasp the product with your free hand".into(),
            EventPayload::GraspPrompt,
        )
    }

    fn emit(
        &mut self,
        now: f64,
        duration: f64,
        kind: EventKind,
        utterance: String,
        payload: EventPayload,
    ) -> SessionEvent {
        self.utterance_start = now;
        self.speaking_until = now + duration;
        let ev = SessionEvent {
            time: now,
            kind,
            utterance,
            payload,
        };
        self.events.push(ev.clone());
        ev
    }
}

/// Write events as one JSON record per line.
pub fn write_event_log<W: Write>(events: &[SessionEvent], mut w: W) -> std::io::Result<()> {
    for ev in events {
        serde_json::to_writer(&mut w, ev)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_event_log<R: BufRead>(r: R) -> Result<Vec<SessionEvent>, TranscriptError> {
    let mut events = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ev = serde_json::from_str(&line).map_err(|source| TranscriptError::Parse {
            line: i + 1,
            source,
        })?;
        events.push(ev);
    }
    Ok(events)
}

/// Check a transcript's ordering contract and recompute the metrics it implies.
/// For a completed session, the recomputed metrics must equal the ones carried by
/// the done event.
pub fn replay_metrics(events: &[SessionEvent]) -> Result<SessionMetrics, TranscriptError> {
    let invalid = |m: String| Err(TranscriptError::Invalid(m));
    let Some(first) = events.first() else {
        return invalid("empty transcript".into());
    };
    if first.kind != EventKind::Overview {
        return invalid("first event is not the overview".into());
    }
    if events
        .iter()
        .filter(|e| e.kind == EventKind::Overview)
        .count()
        != 1
    {
        return invalid("more than one overview".into());
    }
    if let Some(w) = events.windows(2).find(|w| w[1].time <= w[0].time) {
        return invalid(format!(
            "events not strictly time-ordered at t={}",
            w[1].time
        ));
    }
    if let Some(pos) = events.iter().position(|e| e.kind == EventKind::Done) {
        if pos != events.len() - 1 {
            return invalid("events after done".into());
        }
    }
    let n_commands = events.iter().filter(|e| e.is_guidance_command()).count();
    let first_command_time = events
        .iter()
        .find(|e| e.kind == EventKind::Command)
        .map(|e| e.time);
    let done = events.last().filter(|e| e.kind == EventKind::Done);
    let end_time = done.map(|e| e.time);
    let guide_time = match (first_command_time, end_time) {
        (Some(a), Some(b)) => b - a,
        _ => 0.0,
    };
    let mut metrics = SessionMetrics {
        n_commands,
        guide_time,
        net_hand_movement: 0.0,
        success: done.is_some(),
        overview_time: Some(first.time),
        first_command_time,
        end_time,
    };
    if let Some(EventPayload::Done { metrics: reported }) = done.map(|e| &e.payload) {
        metrics.net_hand_movement = reported.net_hand_movement;
        if *reported != metrics {
            return invalid(format!(
                "done metrics {reported:?} disagree with transcript {metrics:?}"
            ));
        }
    }
    Ok(metrics)
}
