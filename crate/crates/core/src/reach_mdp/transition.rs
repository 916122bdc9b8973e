use statrs::function::erf::erfc;

use super::{GridSpec, MdpError, OffsetState, Result};
use crate::direction::Direction;
use crate::hand_model::{CommandModel, MovementGaussian};

/// Entries below this mass are dropped from a row.
const MASS_EPSILON: f64 = 1e-15;

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Mass of `N(mu, sigma^2)` on `[lo, hi]`, computed on the tail that keeps precision.
fn interval_mass(lo: f64, hi: f64, mu: f64, sigma: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let a = (lo - mu) / sigma;
    let b = (hi - mu) / sigma;
    if a > 0.0 {
        normal_cdf(-a) - normal_cdf(-b)
    } else {
        normal_cdf(b) - normal_cdf(a)
    }
}

/// Distribution of the destination cell along the command's axis, starting from the
/// center of `src_cell`. The hand moves by `X ~ N(mu, sigma^2)` along `direction`, so
/// the offset changes by `-sign * X`; mass beyond the grid lands on the boundary cell.
pub fn axis_row(
    grid: &GridSpec,
    gaussian: &MovementGaussian,
    direction: Direction,
    src_cell: i32,
) -> Vec<(i32, f64)> {
    let axis = direction.axis().index();
    let n = grid.extent_cells[axis] as i32;
    let res = grid.resolution;
    let sign = direction.sign();
    let start = src_cell as f64 * res;

    if gaussian.sigma == 0.0 {
        let dest = ((start - sign * gaussian.mu) / res).round();
        let dest = dest.clamp(-(n as f64), n as f64) as i32;
        return vec![(dest, 1.0)];
    }

    (-n..=n)
        .filter_map(|j| {
            let lo = if j == -n {
                f64::NEG_INFINITY
            } else {
                (j as f64 - 0.5) * res
            };
            let hi = if j == n {
                f64::INFINITY
            } else {
                (j as f64 + 0.5) * res
            };
            // Movement range that lands the offset in [lo, hi].
            let (m_lo, m_hi) = if sign > 0.0 {
                (start - hi, start - lo)
            } else {
                (lo - start, hi - start)
            };
            let p = interval_mass(m_lo, m_hi, gaussian.mu, gaussian.sigma);
            (p > MASS_EPSILON).then_some((j, p))
        })
        .collect()
}

/// Successor distribution for issuing `command_id` in `state`.
pub fn transition_row(
    grid: &GridSpec,
    state: &OffsetState,
    command_id: usize,
    model: &CommandModel,
) -> Result<Vec<(OffsetState, f64)>> {
    if state.is_terminal() {
        return Err(MdpError::TerminalState);
    }
    let spec = model
        .command(command_id)
        .map_err(|_| MdpError::UnknownCommand(command_id))?;
    let gaussian = model.gaussian(command_id)?;
    let axis = spec.direction.axis().index();
    Ok(axis_row(grid, gaussian, spec.direction, state.cells[axis])
        .into_iter()
        .map(|(cell, p)| {
            let mut cells = state.cells;
            cells[axis] = cell;
            (OffsetState::new(cells, Some(spec.direction)), p)
        })
        .collect())
}
