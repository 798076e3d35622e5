//! Team reward.
//!
//! Pursuit shaping pays for each pursuer's approach to its assigned evader
//! down to a standoff distance, in units of the arena half-extent. During
//! attachment the shaping follows the nearest pursuer of every unattached
//! evader down to contact distance, in units of the task radius.

use crate::orbit::{ControlAccel, LvlhState};
use crate::queue::{backlog_penalty, QueueState};

use super::config::EnvConfig;
use super::events::distance;
use super::TaskPhase;

/// Phase-resolved counts that enter the reward.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardEvents {
    pub capture: bool,
    pub attachment: bool,
    pub collisions: usize,
    pub boundary_exits: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardBreakdown {
    pub distance: f64,
    pub capture: f64,
    pub attachment: f64,
    pub collision: f64,
    pub boundary: f64,
    pub fuel: f64,
    pub backlog: f64,
    /// Clamped sum of the terms above.
    pub total: f64,
    /// Adversarial evader reward: the negated task terms minus its own fuel.
    pub evader: f64,
}

pub struct RewardInput<'a> {
    pub phase: TaskPhase,
    pub prev_pursuers: &'a [LvlhState],
    pub prev_evaders: &'a [LvlhState],
    pub next_pursuers: &'a [LvlhState],
    pub next_evaders: &'a [LvlhState],
    pub pursuer_accels: &'a [ControlAccel],
    pub evader_accels: &'a [ControlAccel],
    /// Evader index per pursuer, chosen on the pre-step states.
    pub assignment: &'a [usize],
    /// Evaders attached before this step.
    pub attached: &'a [bool],
    pub events: RewardEvents,
    pub queue: &'a QueueState,
}

fn excess(d: f64, floor: f64) -> f64 {
    (d - floor).max(0.0)
}

fn nearest(pursuers: &[LvlhState], ev: &LvlhState) -> f64 {
    pursuers.iter().map(|p| distance(p, ev)).fold(f64::INFINITY, f64::min)
}

pub fn compute_reward(c: &EnvConfig, input: &RewardInput<'_>) -> RewardBreakdown {
    let w = &c.reward;
    let shaping = match input.phase {
        TaskPhase::Pursuit => {
            let floor = c.standoff_km();
            let sum: f64 = input
                .assignment
                .iter()
                .enumerate()
                .map(|(i, &e)| {
                    excess(distance(&input.prev_pursuers[i], &input.prev_evaders[e]), floor)
                        - excess(distance(&input.next_pursuers[i], &input.next_evaders[e]), floor)
                })
                .sum();
            sum / c.half_extent
        }
        TaskPhase::Attachment => {
            let floor = c.contact_km();
            let sum: f64 = (0..input.prev_evaders.len())
                .filter(|&e| !input.attached.get(e).copied().unwrap_or(false))
                .map(|e| {
                    excess(nearest(input.prev_pursuers, &input.prev_evaders[e]), floor)
                        - excess(nearest(input.next_pursuers, &input.next_evaders[e]), floor)
                })
                .sum();
            sum / c.task_radius_km()
        }
        TaskPhase::Done(_) => 0.0,
    };
    let burn = |a: &[ControlAccel]| a.iter().map(ControlAccel::norm).sum::<f64>() * c.dt;

    let distance = w.w_d * shaping;
    let capture = if input.events.capture { w.w_cap } else { 0.0 };
    let attachment = if input.events.attachment { w.w_att } else { 0.0 };
    let collision = -w.w_col * input.events.collisions as f64;
    let boundary = -w.w_bnd * input.events.boundary_exits as f64;
    let fuel = -w.w_fuel * burn(input.pursuer_accels);
    let backlog = backlog_penalty(input.queue, c.queue.lambda);
    let total = (distance + capture + attachment + collision + boundary + fuel + backlog).clamp(-w.r_max, w.r_max);
    let evader = (-(distance + capture + attachment) - w.w_fuel * burn(input.evader_accels)).clamp(-w.r_max, w.r_max);
    RewardBreakdown { distance, capture, attachment, collision, boundary, fuel, backlog, total, evader }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn at(x: f64) -> LvlhState {
        LvlhState::from_pos_vel([x, 0.0, 0.0], [0.0; 3])
    }

    fn eval(
        c: &EnvConfig,
        prev_p: &[LvlhState],
        next_p: &[LvlhState],
        ev: RewardEvents,
        q: &QueueState,
    ) -> RewardBreakdown {
        let evs = [at(0.0)];
        let assignment = vec![0; prev_p.len()];
        let accels = vec![ControlAccel::ZERO; prev_p.len()];
        compute_reward(
            c,
            &RewardInput {
                phase: TaskPhase::Pursuit,
                prev_pursuers: prev_p,
                prev_evaders: &evs,
                next_pursuers: next_p,
                next_evaders: &evs,
                pursuer_accels: &accels,
                evader_accels: &[ControlAccel::ZERO],
                assignment: &assignment,
                attached: &[false],
                events: ev,
                queue: q,
            },
        )
    }

    #[test]
    fn zero_case() {
        let c = EnvConfig::default();
        let ps = [at(1.0), at(2.0)];
        let r = eval(&c, &ps, &ps, RewardEvents::default(), &QueueState::empty(2, 1));
        assert_eq!(r.total, 0.0);
    }

    #[test]
    fn single_event_values() {
        let c = EnvConfig::default();
        let ps = [at(1.0)];
        let q = QueueState::empty(1, 1);
        let cap = eval(&c, &ps, &ps, RewardEvents { capture: true, ..Default::default() }, &q);
        assert_eq!(cap.total, 10.0);
        assert_eq!(cap.evader, -10.0);
        let col = eval(&c, &ps, &ps, RewardEvents { collisions: 1, ..Default::default() }, &q);
        assert_eq!(col.total, -5.0);
        let att = eval(&c, &ps, &ps, RewardEvents { attachment: true, ..Default::default() }, &q);
        assert_eq!(att.total, 20.0);
    }

    #[test]
    fn approach_pays_per_arena_unit_until_standoff() {
        let c = EnvConfig { half_extent: 5.0, ..EnvConfig::default() };
        let q = QueueState::empty(1, 1);
        let r = eval(&c, &[at(3.0)], &[at(2.0)], RewardEvents::default(), &q);
        assert!((r.total - 0.2).abs() < 1e-12);
        let r = eval(&c, &[at(0.03)], &[at(0.01)], RewardEvents::default(), &q);
        assert!((r.total - 0.005 / 5.0).abs() < 1e-12);
    }

    #[test]
    fn backlog_and_fuel_enter_negatively() {
        let c = EnvConfig::default();
        let q = QueueState::from_rows(vec![vec![100.0]]).unwrap();
        let ps = [at(1.0)];
        let r = eval(&c, &ps, &ps, RewardEvents::default(), &q);
        assert!((r.total + 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn reward_is_bounded(x0 in -1e4f64..1e4, x1 in -1e4f64..1e4, cols in 0usize..100, exits in 0usize..100) {
            let c = EnvConfig { half_extent: 1e-3, ..EnvConfig::default() };
            let q = QueueState::from_rows(vec![vec![1e9]]).unwrap();
            let ev = RewardEvents { capture: true, attachment: true, collisions: cols, boundary_exits: exits };
            let r = eval(&c, &[at(x0)], &[at(x1)], ev, &q);
            prop_assert!(r.total.abs() <= c.reward.r_max);
            prop_assert!(r.evader.abs() <= c.reward.r_max);
        }
    }
}
