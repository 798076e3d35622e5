//! Fixed-layout per-agent observation vectors.
//!
//! Layout, in order:
//! own position / l_r (3), asinh(own velocity / 1 m/s) (3),
//! teammates relative to self (6 each, `team_slots`),
//! opponents relative to self (6 each, `other_slots`),
//! normalized backlog load/(1+load), phase one-hot (pursuit, attachment),
//! remaining time fraction.
//! Relative entries are asinh(Δp / 50 m) and asinh(Δv / 1 m/s). Unused
//! slots are exactly zero.

use crate::orbit::LvlhState;

use super::TaskPhase;

pub const LAYOUT_VERSION: u32 = 1;

const POS_SCALE_KM: f64 = 0.05;
const VEL_SCALE_KMS: f64 = 1e-3;
const TAIL: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObservationLayout {
    pub team_slots: usize,
    pub other_slots: usize,
}

impl ObservationLayout {
    pub fn pursuer(m_max: usize, k_max: usize) -> Self {
        Self { team_slots: m_max.saturating_sub(1), other_slots: k_max }
    }

    pub fn evader(m_max: usize, k_max: usize) -> Self {
        Self { team_slots: k_max.saturating_sub(1), other_slots: m_max }
    }

    pub fn dim(&self) -> usize {
        6 + 6 * self.team_slots + 6 * self.other_slots + TAIL
    }
}

pub struct ObservationInput<'a> {
    pub index: usize,
    pub team: &'a [LvlhState],
    pub others: &'a [LvlhState],
    pub load: f64,
    pub phase: TaskPhase,
    pub time_left: f64,
    pub half_extent: f64,
}

pub fn observe(layout: &ObservationLayout, input: &ObservationInput<'_>) -> Vec<f64> {
    assert!(input.team.len() <= layout.team_slots + 1 && input.others.len() <= layout.other_slots);
    let mut out = vec![0.0; layout.dim()];
    let me = input.team[input.index];
    let p = me.position();
    let v = me.velocity();
    for a in 0..3 {
        out[a] = p[a] / input.half_extent;
        out[3 + a] = (v[a] / VEL_SCALE_KMS).asinh();
    }
    let mut slot = 6;
    for (j, mate) in input.team.iter().enumerate() {
        if j == input.index {
            continue;
        }
        write_relative(&mut out[slot..slot + 6], &mate.relative_to(&me));
        slot += 6;
    }
    let mut slot = 6 + 6 * layout.team_slots;
    for other in input.others {
        write_relative(&mut out[slot..slot + 6], &other.relative_to(&me));
        slot += 6;
    }
    let tail = 6 + 6 * (layout.team_slots + layout.other_slots);
    let load = input.load.max(0.0);
    out[tail] = load / (1.0 + load);
    match input.phase {
        TaskPhase::Pursuit => out[tail + 1] = 1.0,
        TaskPhase::Attachment => out[tail + 2] = 1.0,
        TaskPhase::Done(_) => {}
    }
    out[tail + 3] = input.time_left;
    out
}

fn write_relative(dst: &mut [f64], rel: &LvlhState) {
    let p = rel.position();
    let v = rel.velocity();
    for a in 0..3 {
        dst[a] = (p[a] / POS_SCALE_KM).asinh();
        dst[3 + a] = (v[a] / VEL_SCALE_KMS).asinh();
    }
}

/// Phase slot offsets inside an observation, used by callers that need
/// to read the phase back.
pub fn phase_offsets(layout: &ObservationLayout) -> (usize, usize) {
    let tail = 6 + 6 * (layout.team_slots + layout.other_slots);
    (tail + 1, tail + 2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_layout_dimension() {
        let l = ObservationLayout::pursuer(5, 2);
        assert_eq!(l.dim(), 6 + 24 + 12 + 4);
        assert_eq!(ObservationLayout::evader(5, 2).dim(), 6 + 6 + 30 + 4);
    }

    #[test]
    fn padding_is_zero_and_phase_is_one_hot() {
        let l = ObservationLayout::pursuer(5, 2);
        let team = [LvlhState::from_pos_vel([1.0, 0.0, 0.0], [0.0; 3]), LvlhState::ZERO];
        let others = [LvlhState::from_pos_vel([0.0, 0.05, 0.0], [0.0; 3])];
        let o = observe(
            &l,
            &ObservationInput {
                index: 0,
                team: &team,
                others: &others,
                load: 1.0,
                phase: TaskPhase::Attachment,
                time_left: 0.5,
                half_extent: 5.0,
            },
        );
        assert_eq!(o[0], 0.2);
        assert_eq!(o[6], (-1.0f64 / 0.05).asinh());
        assert!(o[12..30].iter().all(|&v| v == 0.0));
        assert!((o[31] - (0.05f64 / 0.05).asinh()).abs() < 1e-12);
        assert!(o[36..42].iter().all(|&v| v == 0.0));
        assert_eq!(&o[42..], &[0.5, 0.0, 1.0, 0.5]);
        assert_eq!(phase_offsets(&l), (43, 44));
    }
}
