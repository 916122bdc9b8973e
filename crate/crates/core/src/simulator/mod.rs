//! Discrete-event simulation of a person's hand following verbal guidance.
//!
//! The hand starts at the origin and the target sits at the start offset. Time
//! advances in fixed ticks; each tick moves the hand along its current motion
//! segment and feeds the pose to a [`GuidanceSession`]. Reactions to utterances
//! start after the utterance ends plus a lognormal reaction latency.

mod compare;

use std::sync::Arc;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::hand_model::CommandModel;
use crate::reach_mdp::ReachPolicy;
use crate::session::{
    EventPayload, GuidanceSession, PlannerMode, SessionConfig, SessionEvent, SessionMetrics,
};

pub use compare::{
    bootstrap_mean_ci, compare, simulate_batch, trial_seed, write_trials_csv, ComparisonSummary,
    MetricSummary, ModeSummary, PairedDifference, StartDistribution, CSV_HEADER,
};

pub const DEFAULT_COMMAND_CAP: usize = 60;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("discrete mode needs a policy")]
    MissingPolicy,
    #[error("start offset {0:?} lies outside the policy workspace")]
    OutsideWorkspace([f64; 3]),
    #[error("invalid human config: {0}")]
    InvalidHuman(String),
    #[error(transparent)]
    Session(#[from] crate::session::SessionError),
    #[error(transparent)]
    Model(#[from] crate::hand_model::HandModelError),
}

/// Synthetic human. These parameters are placeholders, not measured values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimHumanConfig {
    /// Median reaction latency, seconds.
    pub latency_median: f64,
    /// Log-space standard deviation of the latency.
    pub latency_log_sd: f64,
    /// Hand speed while executing a discrete command, m/s.
    pub discrete_speed: f64,
    /// Hand speed while tracking a continuous cue, m/s.
    pub continuous_speed: f64,
    /// Per-move standard deviation of the off-axis drift, meters.
    pub off_axis_sd: f64,
    /// Speed multiplier when a continuous cue asks to go back along an axis
    /// that was already tracked in this trial.
    pub correction_speed_factor: f64,
}

impl Default for SimHumanConfig {
    fn default() -> Self {
        Self {
            latency_median: 0.4,
            latency_log_sd: 0.3,
            discrete_speed: 0.3,
            continuous_speed: 0.15,
            off_axis_sd: 0.0,
            correction_speed_factor: 1.0,
        }
    }
}

impl SimHumanConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            ("latency_median", self.latency_median),
            ("latency_log_sd", self.latency_log_sd),
            ("discrete_speed", self.discrete_speed),
            ("continuous_speed", self.continuous_speed),
            ("correction_speed_factor", self.correction_speed_factor),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::InvalidHuman(format!("{name} = {v}")));
            }
        }
        if !(self.off_axis_sd >= 0.0 && self.off_axis_sd.is_finite()) {
            return Err(SimError::InvalidHuman(format!(
                "off_axis_sd = {}",
                self.off_axis_sd
            )));
        }
        Ok(())
    }

    fn latency<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        LogNormal::new(self.latency_median.ln(), self.latency_log_sd)
            .expect("validated")
            .sample(rng)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub human: SimHumanConfig,
    pub session: SessionConfig,
    /// Seconds per tick.
    pub dt: f64,
    pub command_cap: usize,
    /// Simulated seconds after which an episode counts as failed.
    pub time_limit: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            human: SimHumanConfig::default(),
            session: SessionConfig::default(),
            dt: 0.01,
            command_cap: DEFAULT_COMMAND_CAP,
            time_limit: 600.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialOutcome {
    Success,
    /// Command cap reached before the grasp prompt.
    NeverTerminated,
    TimeLimit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub seed: u64,
    pub mode: PlannerMode,
    /// `target - hand` at the start, meters.
    pub start_offset: [f64; 3],
    pub outcome: TrialOutcome,
    pub metrics: SessionMetrics,
    /// Path length counted by the simulator itself, meters.
    pub sim_path_length: f64,
    /// Guidance commands counted by the simulator itself.
    pub sim_command_count: usize,
    /// Sum of reported hand speed times tick length, meters.
    pub speed_integral: f64,
    pub final_offset: [f64; 3],
    pub events: Vec<SessionEvent>,
}

/// Hand motion along a constant velocity between two times.
#[derive(Clone, Copy, Debug)]
struct Segment {
    start: f64,
    end: f64,
    velocity: Vector3<f64>,
}

/// Piecewise-constant-velocity hand.
#[derive(Debug, Default)]
struct Hand {
    pos: Vector3<f64>,
    /// Discrete moves queue up; continuous tracking is open-ended.
    queue: Vec<Segment>,
    /// Open-ended tracking motion: (start time, velocity).
    tracking: Option<(f64, Vector3<f64>)>,
    /// Time at which tracking stops, once a stop has been heard.
    tracking_stop: Option<f64>,
}

impl Hand {
    fn busy_until(&self) -> f64 {
        self.queue.last().map_or(f64::NEG_INFINITY, |s| s.end)
    }

    /// Move from `t0` to `t1`.
    fn advance(&mut self, t0: f64, t1: f64) {
        for s in &self.queue {
            let a = s.start.max(t0);
            let b = s.end.min(t1);
            if b > a {
                self.pos += s.velocity * (b - a);
            }
        }
        self.queue.retain(|s| s.end > t1);
        if let Some((start, v)) = self.tracking {
            let stop = self.tracking_stop.unwrap_or(f64::INFINITY);
            let a = start.max(t0);
            let b = stop.min(t1);
            if b > a {
                self.pos += v * (b - a);
            }
            if stop <= t1 {
                self.tracking = None;
                self.tracking_stop = None;
            }
        }
    }
}

/// One hand observation as fed to the session.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseSample {
    pub t: f64,
    pub position: [f64; 3],
}

/// Run one guidance episode. The hand starts at the origin, the target at `start_offset`.
pub fn run_trial(
    mode: PlannerMode,
    policy: Option<&Arc<ReachPolicy>>,
    model: &CommandModel,
    config: &SimConfig,
    start_offset: Vector3<f64>,
    seed: u64,
) -> Result<TrialRecord, SimError> {
    simulate(mode, policy, model, config, start_offset, seed, None)
}

/// [`run_trial`] that also returns every pose fed to the session.
pub fn run_trial_traced(
    mode: PlannerMode,
    policy: Option<&Arc<ReachPolicy>>,
    model: &CommandModel,
    config: &SimConfig,
    start_offset: Vector3<f64>,
    seed: u64,
) -> Result<(TrialRecord, Vec<PoseSample>), SimError> {
    let mut trace = Vec::new();
    let r = simulate(
        mode,
        policy,
        model,
        config,
        start_offset,
        seed,
        Some(&mut trace),
    )?;
    Ok((r, trace))
}

fn simulate(
    mode: PlannerMode,
    policy: Option<&Arc<ReachPolicy>>,
    model: &CommandModel,
    config: &SimConfig,
    start_offset: Vector3<f64>,
    seed: u64,
    mut trace: Option<&mut Vec<PoseSample>>,
) -> Result<TrialRecord, SimError> {
    config.human.validate()?;
    if let Some(p) = policy {
        let e = p.metadata().extent + 1e-9;
        if start_offset.iter().any(|v| v.abs() > e) {
            return Err(SimError::OutsideWorkspace(start_offset.into()));
        }
    }
    let target = start_offset;
    let mut session = GuidanceSession::new(mode, policy.cloned(), target, config.session)
        .ok_or(SimError::MissingPolicy)?;
    let human = config.human;
    let durations = config.session.durations;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let off_axis = Normal::new(0.0, human.off_axis_sd).expect("validated");

    let mut hand = Hand::default();
    let mut tracked_axes = [false; 3];
    let mut sim_commands = 0usize;
    let mut path = 0.0;
    let mut speed_integral = 0.0;
    let mut outcome = TrialOutcome::TimeLimit;
    let mut prev_t = 0.0;
    let mut k: u64 = 0;

    loop {
        let t = k as f64 * config.dt;
        let before = hand.pos;
        if k > 0 {
            hand.advance(prev_t, t);
        }
        let step_len = (hand.pos - before).norm();
        let speed = if k > 0 { step_len / (t - prev_t) } else { 0.0 };
        path += step_len;
        speed_integral += speed * (t - prev_t);
        prev_t = t;
        k += 1;

        if let Some(tr) = trace.as_deref_mut() {
            tr.push(PoseSample {
                t,
                position: hand.pos.into(),
            });
        }
        let Some(ev) = session.step(hand.pos, speed, t)? else {
            if t >= config.time_limit {
                break;
            }
            continue;
        };
        if ev.is_guidance_command() {
            sim_commands += 1;
            if sim_commands > config.command_cap {
                outcome = TrialOutcome::NeverTerminated;
                break;
            }
        }
        match ev.payload {
            EventPayload::Move {
                command_id,
                direction,
                ..
            } => {
                let latency = human.latency(&mut rng);
                let m = model.sample_movement(command_id, &mut rng)?;
                let start = (t + durations.discrete_command + latency).max(hand.busy_until());
                let dur = m.abs() / human.discrete_speed;
                if dur > 0.0 {
                    let mut disp = direction.unit() * m;
                    if human.off_axis_sd > 0.0 {
                        for k in 0..3 {
                            if k != direction.axis().index() {
                                disp[k] += off_axis.sample(&mut rng);
                            }
                        }
                    }
                    hand.queue.push(Segment {
                        start,
                        end: start + dur,
                        velocity: disp / dur,
                    });
                }
            }
            EventPayload::Cue { direction } | EventPayload::KeepGoing { direction } => {
                let latency = human.latency(&mut rng);
                let start = t + durations.continuous_cue + latency;
                let axis = direction.axis().index();
                let mut speed = human.continuous_speed;
                if tracked_axes[axis] {
                    speed *= human.correction_speed_factor;
                }
                tracked_axes[axis] = true;
                let mut v = direction.unit() * speed;
                if human.off_axis_sd > 0.0 {
                    // drift rate chosen so a 1 s track drifts by off_axis_sd
                    for k in 0..3 {
                        if k != axis {
                            v[k] += off_axis.sample(&mut rng);
                        }
                    }
                }
                hand.tracking = Some((start, v));
                hand.tracking_stop = None;
            }
            EventPayload::Stop { .. } => {
                let latency = human.latency(&mut rng);
                let stop_at = t + latency;
                match hand.tracking {
                    // stop heard before the hand started moving
                    Some((start, _)) if start >= stop_at => {
                        hand.tracking = None;
                        hand.tracking_stop = None;
                    }
                    Some(_) => hand.tracking_stop = Some(stop_at),
                    None => {}
                }
            }
            EventPayload::Done { .. } => {
                outcome = TrialOutcome::Success;
                break;
            }
            EventPayload::Overview { .. } | EventPayload::GraspPrompt => {}
        }
        if t >= config.time_limit {
            break;
        }
    }

    let mut metrics = session.metrics();
    if outcome != TrialOutcome::Success {
        metrics.success = false;
    }
    Ok(TrialRecord {
        seed,
        mode,
        start_offset: start_offset.into(),
        outcome,
        metrics,
        sim_path_length: path,
        sim_command_count: sim_commands,
        speed_integral,
        final_offset: (target - hand.pos).into(),
        events: session.events().to_vec(),
    })
}

/// Draw a start offset for trial `seed` from `dist`.
pub fn draw_start(dist: &StartDistribution, seed: u64) -> Vector3<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    dist.sample(&mut rng)
}
