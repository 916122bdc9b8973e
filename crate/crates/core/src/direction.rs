//! Command directions and the axis groups they act on.
//!
//! World frame: +x right, +y up, +z forward (toward the shelf).

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Left,
    Right,
    Up,
    Down,
    Forward,
    Backward,
}

/// Axis group of a command. Guidance order is vertical, then horizontal, then depth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Horizontal,
    Vertical,
    Depth,
}

impl Direction {
    pub const ALL: [Direction; 6] = [
        Direction::Left,
        Direction::Right,
        Direction::Up,
        Direction::Down,
        Direction::Forward,
        Direction::Backward,
    ];

    pub fn axis(self) -> Axis {
        match self {
            Direction::Left | Direction::Right => Axis::Horizontal,
            Direction::Up | Direction::Down => Axis::Vertical,
            Direction::Forward | Direction::Backward => Axis::Depth,
        }
    }

    /// +1 when the direction points along the positive world axis.
    pub fn sign(self) -> f64 {
        match self {
            Direction::Right | Direction::Up | Direction::Forward => 1.0,
            Direction::Left | Direction::Down | Direction::Backward => -1.0,
        }
    }

    pub fn unit(self) -> Vector3<f64> {
        let mut v = Vector3::zeros();
        v[self.axis().index()] = self.sign();
        v
    }

    pub fn opposite(self) -> Direction {
        match self {
            Direction::Left => Direction::Right,
            Direction::Right => Direction::Left,
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        }
    }

    /// The direction along `axis` that reduces a positive or negative error.
    pub fn toward(axis: Axis, error: f64) -> Direction {
        let positive = error >= 0.0;
        match (axis, positive) {
            (Axis::Horizontal, true) => Direction::Right,
            (Axis::Horizontal, false) => Direction::Left,
            (Axis::Vertical, true) => Direction::Up,
            (Axis::Vertical, false) => Direction::Down,
            (Axis::Depth, true) => Direction::Forward,
            (Axis::Depth, false) => Direction::Backward,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::Left => "left",
            Direction::Right => "right",
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }

    /// Phrase used after a magnitude, e.g. "to the right" or "up".
    pub fn phrase(self) -> &'static str {
        match self {
            Direction::Left => "to the left",
            Direction::Right => "to the right",
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Direction::ALL
            .into_iter()
            .find(|d| d.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown direction `{s}`"))
    }
}

impl Axis {
    pub const ORDER: [Axis; 3] = [Axis::Vertical, Axis::Horizontal, Axis::Depth];

    /// Component index in a world-frame vector.
    pub fn index(self) -> usize {
        match self {
            Axis::Horizontal => 0,
            Axis::Vertical => 1,
            Axis::Depth => 2,
        }
    }

    /// The axis that follows this one in the prescribed guidance order.
    pub fn next_in_order(self) -> Option<Axis> {
        match self {
            Axis::Vertical => Some(Axis::Horizontal),
            Axis::Horizontal => Some(Axis::Depth),
            Axis::Depth => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::Horizontal => "horizontal",
            Axis::Vertical => "vertical",
            Axis::Depth => "depth",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn opposite_is_involution_and_flips_sign() {
        for d in Direction::ALL {
            assert_eq!(d.opposite().opposite(), d);
            assert_eq!(d.opposite().axis(), d.axis());
            assert_eq!(d.opposite().sign(), -d.sign());
        }
    }

    #[test]
    fn toward_reduces_error() {
        assert_eq!(Direction::toward(Axis::Vertical, 0.3), Direction::Up);
        assert_eq!(Direction::toward(Axis::Horizontal, -0.1), Direction::Left);
        assert_eq!(Direction::toward(Axis::Depth, 0.4), Direction::Forward);
    }

    #[test]
    fn parse_round_trip() {
        for d in Direction::ALL {
            assert_eq!(d.name().parse::<Direction>().unwrap(), d);
        }
        assert!("sideways".parse::<Direction>().is_err());
    }
}
