//! Axis-sequenced continuous cueing: "keep on going {direction}" until the error on
//! the current axis drops under the stop threshold, then "stop".

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::direction::{Axis, Direction};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContinuousConfig {
    /// Meters.
    pub stop_threshold: f64,
    /// Meters per second; slower counts as "slowed down".
    pub ready_speed: f64,
    /// Minimum seconds between a cue and a following "keep on going".
    pub refractory: f64,
}

impl Default for ContinuousConfig {
    fn default() -> Self {
        Self {
            stop_threshold: 0.025,
            ready_speed: 0.05,
            refractory: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerAxis {
    Vertical,
    Horizontal,
    Depth,
    Done,
}

impl PlannerAxis {
    fn axis(self) -> Option<Axis> {
        match self {
            PlannerAxis::Vertical => Some(Axis::Vertical),
            PlannerAxis::Horizontal => Some(Axis::Horizontal),
            PlannerAxis::Depth => Some(Axis::Depth),
            PlannerAxis::Done => None,
        }
    }

    fn from_axis(axis: Axis) -> Self {
        match axis {
            Axis::Vertical => PlannerAxis::Vertical,
            Axis::Horizontal => PlannerAxis::Horizontal,
            Axis::Depth => PlannerAxis::Depth,
        }
    }

    fn next(self) -> Self {
        match self.axis().and_then(Axis::next_in_order) {
            Some(a) => PlannerAxis::from_axis(a),
            None => PlannerAxis::Done,
        }
    }

    fn rank(self) -> usize {
        match self {
            PlannerAxis::Vertical => 0,
            PlannerAxis::Horizontal => 1,
            PlannerAxis::Depth => 2,
            PlannerAxis::Done => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "cue", content = "direction", rename_all = "snake_case")]
pub enum Cue {
    Cue(Direction),
    KeepGoing(Direction),
    Stop(Axis),
    Done,
    Silent,
}

/// One observation handed to the planner.
#[derive(Clone, Copy, Debug)]
pub struct CueInput {
    pub hand: Vector3<f64>,
    pub hand_speed: f64,
    pub target: Vector3<f64>,
    pub now: f64,
    /// The hand has settled and no utterance is playing.
    pub ready: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuousPlanner {
    pub config: ContinuousConfig,
    pub current_axis: PlannerAxis,
    /// Direction currently being cued, if an axis is active.
    pub active: Option<Direction>,
    pub last_cue_time: f64,
}

impl ContinuousPlanner {
    pub fn new(config: ContinuousConfig) -> Self {
        Self {
            config,
            current_axis: PlannerAxis::Vertical,
            active: None,
            last_cue_time: f64::NEG_INFINITY,
        }
    }

    pub fn next_cue(&mut self, input: &CueInput) -> Cue {
        let err = input.target - input.hand;
        let thr = self.config.stop_threshold;

        if let Some(dir) = self.active {
            let axis = dir.axis();
            let e = err[axis.index()];
            // Stop inside the band, or once the hand has passed the target.
            if e.abs() < thr || e * dir.sign() < 0.0 {
                self.active = None;
                self.current_axis = PlannerAxis::from_axis(axis).next();
                return Cue::Stop(axis);
            }
            if input.ready
                && input.hand_speed < self.config.ready_speed
                && input.now - self.last_cue_time >= self.config.refractory
            {
                self.last_cue_time = input.now;
                return Cue::KeepGoing(dir);
            }
            return Cue::Silent;
        }

        if !input.ready {
            return Cue::Silent;
        }
        // Re-enter the earliest completed axis that drifted out of the band.
        if let Some(axis) = Axis::ORDER
            .into_iter()
            .take(self.current_axis.rank())
            .find(|a| err[a.index()].abs() >= thr)
        {
            self.current_axis = PlannerAxis::from_axis(axis);
        }
        while let Some(axis) = self.current_axis.axis() {
            if err[axis.index()].abs() >= thr {
                break;
            }
            self.current_axis = self.current_axis.next();
        }
        match self.current_axis.axis() {
            None => Cue::Done,
            Some(axis) => {
                let dir = Direction::toward(axis, err[axis.index()]);
                self.active = Some(dir);
                self.last_cue_time = input.now;
                Cue::Cue(dir)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(hand: [f64; 3], target: [f64; 3], speed: f64, now: f64) -> CueInput {
        CueInput {
            hand: Vector3::from(hand),
            hand_speed: speed,
            target: Vector3::from(target),
            now,
            ready: true,
        }
    }

    #[test]
    fn starts_with_vertical() {
        let mut p = ContinuousPlanner::new(ContinuousConfig::default());
        let cue = p.next_cue(&input([0.0; 3], [-0.15, 0.30, 0.40], 0.0, 0.0));
        assert_eq!(cue, Cue::Cue(Direction::Up));
        assert_eq!(p.current_axis, PlannerAxis::Vertical);
    }

    #[test]
    fn stop_advances_axis() {
        let mut p = ContinuousPlanner::new(ContinuousConfig::default());
        p.next_cue(&input([0.0; 3], [-0.15, 0.30, 0.40], 0.0, 0.0));
        let mut i = input([0.0, 0.28, 0.0], [-0.15, 0.30, 0.40], 0.15, 2.0);
        i.ready = false;
        assert_eq!(p.next_cue(&i), Cue::Stop(Axis::Vertical));
        assert_eq!(p.current_axis, PlannerAxis::Horizontal);
        assert_eq!(
            p.next_cue(&input([0.0, 0.28, 0.0], [-0.15, 0.30, 0.40], 0.0, 3.0)),
            Cue::Cue(Direction::Left)
        );
    }

    #[test]
    fn keep_going_after_refractory() {
        let mut p = ContinuousPlanner::new(ContinuousConfig::default());
        p.next_cue(&input([0.0; 3], [0.0, 0.30, 0.0], 0.0, 0.0));
        assert_eq!(
            p.next_cue(&input([0.0, 0.1, 0.0], [0.0, 0.30, 0.0], 0.01, 0.5)),
            Cue::Silent
        );
        assert_eq!(
            p.next_cue(&input([0.0, 0.1, 0.0], [0.0, 0.30, 0.0], 0.01, 1.2)),
            Cue::KeepGoing(Direction::Up)
        );
        // refractory restarts
        assert_eq!(
            p.next_cue(&input([0.0, 0.1, 0.0], [0.0, 0.30, 0.0], 0.01, 1.5)),
            Cue::Silent
        );
        // moving fast: nothing to say
        assert_eq!(
            p.next_cue(&input([0.0, 0.1, 0.0], [0.0, 0.30, 0.0], 0.2, 3.0)),
            Cue::Silent
        );
    }

    #[test]
    fn skips_cleared_axes_and_finishes() {
        let mut p = ContinuousPlanner::new(ContinuousConfig::default());
        assert_eq!(
            p.next_cue(&input([0.0; 3], [0.01, 0.0, 0.3], 0.0, 0.0)),
            Cue::Cue(Direction::Forward)
        );
        let mut q = ContinuousPlanner::new(ContinuousConfig::default());
        assert_eq!(
            q.next_cue(&input([0.0; 3], [0.01, -0.02, 0.0], 0.0, 0.0)),
            Cue::Done
        );
    }

    #[test]
    fn passing_the_target_stops_and_reenters() {
        let mut p = ContinuousPlanner::new(ContinuousConfig::default());
        let target = [0.0, 0.30, 0.0];
        p.next_cue(&input([0.0; 3], target, 0.0, 0.0));
        // jumped past the band in one observation
        assert_eq!(
            p.next_cue(&input([0.0, 0.36, 0.0], target, 0.15, 2.0)),
            Cue::Stop(Axis::Vertical)
        );
        assert_eq!(p.current_axis, PlannerAxis::Horizontal);
        assert_eq!(
            p.next_cue(&input([0.0, 0.36, 0.0], target, 0.0, 3.0)),
            Cue::Cue(Direction::Down)
        );
        assert_eq!(p.current_axis, PlannerAxis::Vertical);
    }

    #[test]
    fn not_ready_suppresses_new_cues() {
        let mut p = ContinuousPlanner::new(ContinuousConfig::default());
        let mut i = input([0.0; 3], [0.0, 0.3, 0.0], 0.0, 0.0);
        i.ready = false;
        assert_eq!(p.next_cue(&i), Cue::Silent);
        assert_eq!(p.active, None);
    }
}
