use std::fmt;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Heading to the target in the shelf plane, as a clock hour (12 = straight up).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockDirection {
    Hour(u8),
    StraightAhead,
}

impl ClockDirection {
    pub fn utterance(&self) -> String {
        match self {
            ClockDirection::Hour(h) => {
                format!("I found the product at about {h} o'clock direction")
            }
            ClockDirection::StraightAhead => "I found the product straight ahead".to_string(),
        }
    }
}

impl fmt::Display for ClockDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClockDirection::Hour(h) => write!(f, "{h} o'clock"),
            ClockDirection::StraightAhead => f.write_str("straight ahead"),
        }
    }
}

/// Project `target - hand` onto the XY plane and round the clockwise angle from +y
/// to the nearest 30 degrees. Half-hour headings round away from 12.
pub fn plan_overview(hand: &Vector3<f64>, target: &Vector3<f64>) -> ClockDirection {
    let d = target - hand;
    if d.x.hypot(d.y) < 1e-9 {
        return ClockDirection::StraightAhead;
    }
    let hours = d.x.atan2(d.y).to_degrees() / 30.0;
    // nudge exact half-hours that land a hair short after the degree conversion
    let rounded = (hours + hours.signum() * 1e-9).round() as i32;
    let hour = rounded.rem_euclid(12);
    ClockDirection::Hour(if hour == 0 { 12 } else { hour as u8 })
}
