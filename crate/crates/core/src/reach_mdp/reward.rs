use serde::{Deserialize, Serialize};

use super::{GridSpec, OffsetState};
use crate::direction::{Axis, Direction};

/// `numerator / (offset + err)` with `err` the residual error in meters on the axis
/// being departed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NecessaryTransition {
    pub numerator: f64,
    pub offset: f64,
}

impl Default for NecessaryTransition {
    fn default() -> Self {
        Self {
            numerator: 1.0,
            offset: 0.001,
        }
    }
}

impl NecessaryTransition {
    pub fn value(&self, err: f64) -> f64 {
        self.numerator / (self.offset + err)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub goal_state_reward: f64,
    pub living_penalty: f64,
    pub interleave_penalty: f64,
    pub axis_order_reward: f64,
    pub necessary_transition: NecessaryTransition,
    /// Reward vertical -> horizontal switches.
    pub order_vertical_to_horizontal: bool,
    /// Reward horizontal -> depth switches.
    pub order_horizontal_to_depth: bool,
    /// Treat a vertical first command (no previous command) as following the order.
    pub initial_axis_vertical: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            goal_state_reward: 10_000.0,
            living_penalty: -10.0,
            interleave_penalty: -100.0,
            axis_order_reward: 100.0,
            necessary_transition: NecessaryTransition::default(),
            order_vertical_to_horizontal: true,
            order_horizontal_to_depth: true,
            initial_axis_vertical: true,
        }
    }
}

impl RewardConfig {
    fn in_order(&self, from: Axis, to: Axis) -> bool {
        match (from, to) {
            (Axis::Vertical, Axis::Horizontal) => self.order_vertical_to_horizontal,
            (Axis::Horizontal, Axis::Depth) => self.order_horizontal_to_depth,
            _ => false,
        }
    }
}

/// Every reward term except the goal reward. Depends only on the source state and
/// the command direction.
pub fn step_reward(grid: &GridSpec, s: &OffsetState, a: Direction, cfg: &RewardConfig) -> f64 {
    let mut r = cfg.living_penalty;
    match s.prev {
        None => {
            if cfg.initial_axis_vertical && a.axis() == Axis::Vertical {
                r += cfg.axis_order_reward;
            }
        }
        Some(prev) if prev.axis() != a.axis() => {
            r += cfg.interleave_penalty;
            if cfg.in_order(prev.axis(), a.axis()) {
                r += cfg.axis_order_reward;
            }
            let residual = s.cell(prev.axis()).unsigned_abs() as f64 * grid.resolution;
            r += cfg.necessary_transition.value(residual);
        }
        Some(_) => {}
    }
    r
}

/// Full reward for the transition `s --a--> s_next`.
pub fn reward(
    grid: &GridSpec,
    s: &OffsetState,
    a: Direction,
    s_next: &OffsetState,
    cfg: &RewardConfig,
) -> f64 {
    let goal = if s_next.is_terminal() {
        cfg.goal_state_reward
    } else {
        0.0
    };
    step_reward(grid, s, a, cfg) + goal
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(cells: [i32; 3], prev: Option<Direction>) -> OffsetState {
        OffsetState::new(cells, prev)
    }

    #[test]
    fn table_values() {
        let cfg = RewardConfig::default();
        assert_eq!(cfg.goal_state_reward, 10_000.0);
        assert_eq!(cfg.living_penalty, -10.0);
        assert_eq!(cfg.interleave_penalty, -100.0);
        assert_eq!(cfg.axis_order_reward, 100.0);
        assert_eq!(cfg.necessary_transition.value(0.0), 1.0 / 0.001);
        assert!((cfg.necessary_transition.value(0.05) - 1.0 / 0.051).abs() < 1e-12);
    }

    #[test]
    fn vertical_to_horizontal_with_cleared_axis() {
        let g = GridSpec::default();
        let cfg = RewardConfig::default();
        let s = st([3, 0, 4], Some(Direction::Up));
        let r = reward(
            &g,
            &s,
            Direction::Left,
            &st([2, 0, 4], Some(Direction::Left)),
            &cfg,
        );
        assert!((r - 990.0).abs() < 1e-9);
    }

    #[test]
    fn same_axis_only_pays_living_penalty() {
        let g = GridSpec::default();
        let cfg = RewardConfig::default();
        let s = st([3, 1, 4], Some(Direction::Left));
        let r = reward(
            &g,
            &s,
            Direction::Left,
            &st([1, 1, 4], Some(Direction::Left)),
            &cfg,
        );
        assert_eq!(r, -10.0);
    }

    #[test]
    fn skipping_horizontal_gets_no_order_reward() {
        let g = GridSpec::default();
        let cfg = RewardConfig::default();
        let s = st([3, 2, 4], Some(Direction::Up));
        let r = reward(
            &g,
            &s,
            Direction::Forward,
            &st([3, 2, 2], Some(Direction::Forward)),
            &cfg,
        );
        let expected = -10.0 - 100.0 + 1.0 / (0.001 + 0.10);
        assert!((r - expected).abs() < 1e-9);
        assert!((r - (-100.1)).abs() < 0.01);
    }

    #[test]
    fn goal_reward_on_terminal_successor() {
        let g = GridSpec::default();
        let cfg = RewardConfig::default();
        let s = st([0, 0, 1], Some(Direction::Forward));
        let r = reward(
            &g,
            &s,
            Direction::Forward,
            &st([0, 0, 0], Some(Direction::Forward)),
            &cfg,
        );
        assert_eq!(r, 10_000.0 - 10.0);
    }

    #[test]
    fn first_command_vertical_counts_as_ordered() {
        let g = GridSpec::default();
        let cfg = RewardConfig::default();
        let s = st([3, 2, 4], None);
        assert_eq!(step_reward(&g, &s, Direction::Up, &cfg), 90.0);
        assert_eq!(step_reward(&g, &s, Direction::Forward, &cfg), -10.0);
        let off = RewardConfig {
            initial_axis_vertical: false,
            ..cfg
        };
        assert_eq!(step_reward(&g, &s, Direction::Up, &off), -10.0);
    }
}
