//! Closed-loop reference pursuer used for evader pretraining and sanity runs.

use crate::orbit::{ControlAccel, LvlhState};

/// Critically damped proportional-derivative homing on the assigned evader,
/// saturated at `bound`. `bandwidth` (rad/s) sets the closed-loop speed.
pub fn homing_accel(pursuer: &LvlhState, target: &LvlhState, bandwidth: f64, bound: f64) -> ControlAccel {
    let rel = target.relative_to(pursuer);
    let kp = bandwidth * bandwidth;
    let kd = 2.0 * bandwidth;
    let p = rel.position();
    let v = rel.velocity();
    ControlAccel::from_array(std::array::from_fn(|a| kp * p[a] + kd * v[a])).clipped(bound)
}

/// One homing command per pursuer towards its nearest evader.
pub fn homing_team(pursuers: &[LvlhState], evaders: &[LvlhState], bandwidth: f64, bound: f64) -> Vec<ControlAccel> {
    let assign = super::events::assign(pursuers, evaders, &[]);
    pursuers.iter().zip(assign).map(|(p, e)| homing_accel(p, &evaders[e], bandwidth, bound)).collect()
}

pub const DEFAULT_BANDWIDTH: f64 = 0.05;
