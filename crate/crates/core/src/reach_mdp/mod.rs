//! Discretized reaching MDP over the target-minus-hand offset.
//!
//! A state is the offset `target - hand` rounded to grid cells plus the direction
//! of the previous command. Commands move the hand along one axis by a draw from
//! the command's movement Gaussian; the cell `(0, 0, 0)` is terminal.

mod overview;
mod policy;
mod reward;
mod solver;
mod transition;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::direction::{Axis, Direction};
use crate::hand_model::HandModelError;

pub use overview::{plan_overview, ClockDirection};
pub use policy::{PolicyMetadata, QueryResult, ReachPolicy, POLICY_FORMAT_VERSION, POLICY_MAGIC};
pub use reward::{reward, step_reward, NecessaryTransition, RewardConfig};
pub use solver::{solve, ConvergenceStats, SolveConfig};
pub use transition::{axis_row, normal_cdf, transition_row};

pub const DEFAULT_RESOLUTION: f64 = 0.05;
pub const DEFAULT_EXTENT: f64 = 0.8;
pub const DEFAULT_GAMMA: f64 = 0.99;
pub const DEFAULT_TOLERANCE: f64 = 0.1;
pub const DEFAULT_MAX_SWEEPS: usize = 10_000;

/// Number of distinct previous-command values: none plus six directions.
pub const PREV_VALUES: usize = 7;

#[derive(Debug, thiserror::Error)]
pub enum MdpError {
    #[error("unknown command id {0}")]
    UnknownCommand(usize),
    #[error("value iteration did not converge after {sweeps} sweeps (last delta {delta})")]
    NonConvergence { sweeps: usize, delta: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("transition requested from the terminal state")]
    TerminalState,
    #[error("policy file: {0}")]
    BadPolicyFile(String),
    #[error("policy does not cover command model: {0}")]
    ModelMismatch(String),
    #[error(transparent)]
    Model(#[from] HandModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = MdpError> = std::result::Result<T, E>;

/// Cell grid of the operational cuboid. Axis `k` spans cells `-extent_cells[k]..=extent_cells[k]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub resolution: f64,
    pub extent_cells: [usize; 3],
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::cuboid(DEFAULT_RESOLUTION, DEFAULT_EXTENT).expect("default grid is valid")
    }
}

impl GridSpec {
    /// Cube of half-width `extent` meters at `resolution` meters per cell.
    pub fn cuboid(resolution: f64, extent: f64) -> Result<Self> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(MdpError::InvalidConfig(format!("resolution {resolution}")));
        }
        if !(extent >= 0.0 && extent.is_finite()) {
            return Err(MdpError::InvalidConfig(format!("extent {extent}")));
        }
        let n = (extent / resolution).round() as usize;
        Ok(Self {
            resolution,
            extent_cells: [n; 3],
        })
    }

    /// Grid that only extends along x (the other axes hold a single cell).
    pub fn horizontal_line(resolution: f64, cells: usize) -> Self {
        Self {
            resolution,
            extent_cells: [cells, 0, 0],
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.extent_cells.map(|n| 2 * n + 1)
    }

    pub fn cells_per_prev(&self) -> usize {
        self.dims().iter().product()
    }

    pub fn n_states(&self) -> usize {
        self.cells_per_prev() * PREV_VALUES
    }

    /// Half-width of the cuboid along x, meters.
    pub fn extent(&self) -> f64 {
        // rounded so 6 * 0.05 reads back as 0.3
        (self.extent_cells[0] as f64 * self.resolution * 1e12).round() / 1e12
    }

    /// Nearest-cell rounding (half-cell boundary rounds away from zero), clamped to the grid.
    pub fn discretize(&self, offset: &Vector3<f64>) -> [i32; 3] {
        std::array::from_fn(|k| {
            let n = self.extent_cells[k] as i32;
            let q = offset[k] / self.resolution;
            // decimal half-cell inputs (0.075 / 0.05) land a hair short of .5
            let q = (q + q.signum() * 1e-9).round();
            if q.is_nan() {
                0
            } else {
                q.clamp(-(n as f64), n as f64) as i32
            }
        })
    }

    pub fn contains(&self, cells: [i32; 3]) -> bool {
        (0..3).all(|k| cells[k].unsigned_abs() as usize <= self.extent_cells[k])
    }

    pub fn index(&self, state: &OffsetState) -> usize {
        let [nx, ny, nz] = self.dims();
        let [x, y, z] = std::array::from_fn::<usize, 3, _>(|k| {
            (state.cells[k] + self.extent_cells[k] as i32) as usize
        });
        ((prev_index(state.prev) * nz + z) * ny + y) * nx + x
    }

    pub fn state(&self, index: usize) -> OffsetState {
        let [nx, ny, nz] = self.dims();
        let x = index % nx;
        let y = (index / nx) % ny;
        let z = (index / (nx * ny)) % nz;
        let p = index / (nx * ny * nz);
        let raw = [x, y, z];
        OffsetState {
            cells: std::array::from_fn(|k| raw[k] as i32 - self.extent_cells[k] as i32),
            prev: prev_from_index(p),
        }
    }

    /// Offset at the cell center, meters.
    pub fn center(&self, cells: [i32; 3]) -> Vector3<f64> {
        Vector3::from(cells.map(|c| c as f64 * self.resolution))
    }
}

pub fn prev_index(prev: Option<Direction>) -> usize {
    prev.map_or(0, |d| d.index() + 1)
}

pub fn prev_from_index(i: usize) -> Option<Direction> {
    if i == 0 {
        None
    } else {
        Some(Direction::ALL[i - 1])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OffsetState {
    /// Signed cell indices of `target - hand` along x, y, z.
    pub cells: [i32; 3],
    pub prev: Option<Direction>,
}

impl OffsetState {
    pub fn new(cells: [i32; 3], prev: Option<Direction>) -> Self {
        Self { cells, prev }
    }

    pub fn is_terminal(&self) -> bool {
        self.cells == [0, 0, 0]
    }

    pub fn cell(&self, axis: Axis) -> i32 {
        self.cells[axis.index()]
    }
}

/// Offset `target - hand` rounded to grid cells.
pub fn discretize(grid: &GridSpec, offset: &Vector3<f64>) -> [i32; 3] {
    grid.discretize(offset)
}
