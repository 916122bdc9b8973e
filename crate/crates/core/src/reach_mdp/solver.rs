//! Synchronous value iteration.
//!
//! The goal reward is carried as the value of terminal states during backups, so a
//! command that reaches the goal is worth `step + gamma * goal_state_reward`. The
//! exported value table reports terminal states as 0.
//!
//! Commands along an axis whose offset cell is already zero are not offered. Without
//! that restriction the necessary-transition term (up to 1000 per axis switch) makes
//! switch cycles between cleared axes worth more than reaching the goal.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::policy::{PolicyMetadata, ReachPolicy, NO_ACTION, POLICY_FORMAT_VERSION};
use super::reward::{step_reward, RewardConfig};
use super::transition::axis_row;
use super::{
    GridSpec, MdpError, OffsetState, Result, DEFAULT_GAMMA, DEFAULT_MAX_SWEEPS, DEFAULT_TOLERANCE,
    PREV_VALUES,
};
use crate::direction::Direction;
use crate::hand_model::CommandModel;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub grid: GridSpec,
    pub reward: RewardConfig,
    pub gamma: f64,
    /// Max-norm change between successive sweeps at which iteration stops.
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            reward: RewardConfig::default(),
            gamma: DEFAULT_GAMMA,
            tolerance: DEFAULT_TOLERANCE,
            max_sweeps: DEFAULT_MAX_SWEEPS,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStats {
    pub sweeps: usize,
    pub final_delta: f64,
}

/// Destination rows per command, indexed by the source cell along the command's axis.
struct CommandTable {
    direction: Direction,
    axis: usize,
    /// `rows[src + extent]` = (destination cell offset `dst + extent`, probability).
    rows: Vec<Vec<(usize, f64)>>,
}

struct Backup<'a> {
    grid: GridSpec,
    reward: &'a RewardConfig,
    gamma: f64,
    commands: Vec<CommandTable>,
    strides: [usize; 3],
    cells_per_prev: usize,
}

impl Backup<'_> {
    /// Best action value and the lowest command id achieving it.
    fn best(&self, index: usize, state: &OffsetState, u: &[f64]) -> (f64, u16) {
        let mut best = f64::NEG_INFINITY;
        let mut best_id = NO_ACTION;
        let within_prev = index % self.cells_per_prev;
        for (id, cmd) in self.commands.iter().enumerate() {
            let src = state.cells[cmd.axis];
            if src == 0 {
                continue;
            }
            let n = self.grid.extent_cells[cmd.axis] as i32;
            let stride = self.strides[cmd.axis];
            let base = (cmd.direction.index() + 1) * self.cells_per_prev + within_prev
                - (src + n) as usize * stride;
            let expected: f64 = cmd.rows[(src + n) as usize]
                .iter()
                .map(|&(dst, p)| p * u[base + dst * stride])
                .sum();
            let q =
                step_reward(&self.grid, state, cmd.direction, self.reward) + self.gamma * expected;
            if q > best {
                best = q;
                best_id = id as u16;
            }
        }
        (best, best_id)
    }
}

fn validate(model: &CommandModel, cfg: &SolveConfig) -> Result<()> {
    if !(cfg.gamma > 0.0 && cfg.gamma <= 1.0) {
        return Err(MdpError::InvalidConfig(format!(
            "gamma {} outside (0, 1]",
            cfg.gamma
        )));
    }
    if !(cfg.tolerance > 0.0) {
        return Err(MdpError::InvalidConfig(format!(
            "tolerance {}",
            cfg.tolerance
        )));
    }
    if !(cfg.grid.resolution > 0.0) {
        return Err(MdpError::InvalidConfig(format!(
            "resolution {}",
            cfg.grid.resolution
        )));
    }
    if model.len() >= NO_ACTION as usize {
        return Err(MdpError::InvalidConfig("vocabulary too large".into()));
    }
    Ok(())
}

/// Solve the reaching MDP by value iteration and extract the greedy policy.
///
/// Sweeps may run on the rayon pool; each state's backup reads only the previous
/// table, so results do not depend on the number of workers.
pub fn solve(model: &CommandModel, cfg: &SolveConfig) -> Result<ReachPolicy> {
    validate(model, cfg)?;
    let grid = cfg.grid;
    let dims = grid.dims();
    let strides = [1, dims[0], dims[0] * dims[1]];
    let commands = model
        .commands()
        .iter()
        .zip(model.gaussians())
        .map(|(spec, g)| {
            let axis = spec.direction.axis().index();
            let n = grid.extent_cells[axis] as i32;
            let rows = (-n..=n)
                .map(|src| {
                    axis_row(&grid, g, spec.direction, src)
                        .into_iter()
                        .map(|(dst, p)| ((dst + n) as usize, p))
                        .collect()
                })
                .collect();
            CommandTable {
                direction: spec.direction,
                axis,
                rows,
            }
        })
        .collect();
    let backup = Backup {
        grid,
        reward: &cfg.reward,
        gamma: cfg.gamma,
        commands,
        strides,
        cells_per_prev: grid.cells_per_prev(),
    };

    let n_states = grid.n_states();
    let states: Vec<OffsetState> = (0..n_states).map(|i| grid.state(i)).collect();
    let goal = cfg.reward.goal_state_reward;
    let mut u: Vec<f64> = states
        .iter()
        .map(|s| if s.is_terminal() { goal } else { 0.0 })
        .collect();
    let mut next = u.clone();

    let mut sweeps = 0;
    let mut delta = f64::INFINITY;
    while sweeps < cfg.max_sweeps {
        delta = next
            .par_iter_mut()
            .enumerate()
            .map(|(i, slot)| {
                let s = &states[i];
                if s.is_terminal() {
                    return 0.0;
                }
                let (v, _) = backup.best(i, s, &u);
                let d = (v - u[i]).abs();
                *slot = v;
                d
            })
            .reduce(|| 0.0, f64::max);
        std::mem::swap(&mut u, &mut next);
        sweeps += 1;
        if delta < cfg.tolerance {
            break;
        }
    }
    if delta >= cfg.tolerance {
        return Err(MdpError::NonConvergence { sweeps, delta });
    }

    let actions: Vec<u16> = (0..n_states)
        .into_par_iter()
        .map(|i| {
            let s = &states[i];
            if s.is_terminal() {
                NO_ACTION
            } else {
                backup.best(i, s, &u).1
            }
        })
        .collect();
    let values = states
        .iter()
        .zip(&u)
        .map(|(s, &v)| if s.is_terminal() { 0.0 } else { v })
        .collect();
    debug_assert_eq!(PREV_VALUES * grid.cells_per_prev(), n_states);

    let metadata = PolicyMetadata {
        format_version: POLICY_FORMAT_VERSION,
        grid,
        resolution: grid.resolution,
        extent: grid.extent(),
        gamma: cfg.gamma,
        tolerance: cfg.tolerance,
        max_sweeps: cfg.max_sweeps,
        reward: cfg.reward,
        vocabulary_hash: model.vocabulary_hash(),
        convergence: ConvergenceStats {
            sweeps,
            final_delta: delta,
        },
        model: model.clone(),
    };
    ReachPolicy::new(metadata, values, actions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hand_model::{CommandSpec, GaussianSource, MovementGaussian, Provenance};

    pub(crate) fn line_model(cmds: &[(Direction, f64, f64)]) -> CommandModel {
        let commands = cmds
            .iter()
            .enumerate()
            .map(|(id, &(direction, mu, _))| CommandSpec {
                id,
                direction,
                nominal_magnitude: mu,
                utterance: format!("move {mu} {direction} #{id}"),
            })
            .collect();
        let gaussians = cmds
            .iter()
            .enumerate()
            .map(|(id, &(_, mu, sigma))| MovementGaussian {
                command_id: id,
                mu,
                sigma,
                sample_count: 0,
                source: GaussianSource::SyntheticDefault,
            })
            .collect();
        CommandModel::new(commands, gaussians, Provenance::SyntheticDefault).unwrap()
    }

    #[test]
    fn deterministic_chain_values() {
        let model = line_model(&[(Direction::Left, 0.05, 0.0)]);
        let cfg = SolveConfig {
            grid: GridSpec::horizontal_line(0.05, 2),
            tolerance: 1e-9,
            ..SolveConfig::default()
        };
        let policy = solve(&model, &cfg).unwrap();
        for prev in [None, Some(Direction::Left)] {
            let v1 = policy.value(&OffsetState::new([-1, 0, 0], prev));
            let v2 = policy.value(&OffsetState::new([-2, 0, 0], prev));
            assert!((v1 - 9890.0).abs() < 1e-6, "{v1}");
            assert!((v2 - 9781.1).abs() < 1e-6, "{v2}");
        }
        assert_eq!(policy.value(&OffsetState::new([0, 0, 0], None)), 0.0);
        assert_eq!(policy.action(&OffsetState::new([0, 0, 0], None)), None);
        assert_eq!(policy.action(&OffsetState::new([-2, 0, 0], None)), Some(0));
    }

    #[test]
    fn rejects_bad_gamma() {
        let model = line_model(&[(Direction::Left, 0.05, 0.0)]);
        let cfg = SolveConfig {
            grid: GridSpec::horizontal_line(0.05, 2),
            gamma: 1.5,
            ..SolveConfig::default()
        };
        assert!(matches!(
            solve(&model, &cfg),
            Err(MdpError::InvalidConfig(_))
        ));
    }

    #[test]
    fn reports_non_convergence() {
        let model = line_model(&[
            (Direction::Left, 0.05, 0.02),
            (Direction::Right, 0.05, 0.02),
        ]);
        let cfg = SolveConfig {
            grid: GridSpec::horizontal_line(0.05, 4),
            max_sweeps: 2,
            tolerance: 1e-9,
            ..SolveConfig::default()
        };
        assert!(matches!(
            solve(&model, &cfg),
            Err(MdpError::NonConvergence { sweeps: 2, .. })
        ));
    }

    #[test]
    fn undiscounted_solve_converges() {
        let model = line_model(&[
            (Direction::Left, 0.05, 0.01),
            (Direction::Right, 0.05, 0.01),
        ]);
        let cfg = SolveConfig {
            grid: GridSpec::horizontal_line(0.05, 4),
            gamma: 1.0,
            tolerance: 1e-6,
            ..SolveConfig::default()
        };
        let policy = solve(&model, &cfg).unwrap();
        let right = policy.action(&OffsetState::new([3, 0, 0], None)).unwrap();
        assert_eq!(model.commands()[right as usize].direction, Direction::Right);
    }
}
