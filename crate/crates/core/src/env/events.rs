//! Geometric event detection on a snapshot of agent states.

use crate::orbit::{norm3, LvlhState};

use super::config::{CaptureRule, EnvConfig};

/// Thresholds in km and km/s, derived from an [`EnvConfig`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventGeometry {
    pub half_extent: f64,
    pub capture_radius: f64,
    pub contact: f64,
    pub collision: f64,
    pub dock_speed: f64,
    pub drive_radius: f64,
    pub rule: CaptureRule,
}

impl EventGeometry {
    pub fn from_config(c: &EnvConfig) -> Self {
        Self {
            half_extent: c.half_extent,
            capture_radius: c.task_radius_km(),
            contact: c.contact_km(),
            collision: c.collision_km(),
            dock_speed: c.dock_speed_kms(),
            drive_radius: c.drive_radius,
            rule: c.capture_rule,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventSet {
    /// Evader each pursuer is assigned to (nearest unattached one).
    pub assignment: Vec<usize>,
    /// Capture condition holds (surround or drive-to-wall).
    pub capture: bool,
    pub driven_to_boundary: bool,
    /// Evaders with a pursuer in contact at docking speed.
    pub attached: Vec<bool>,
    pub attachment_success: bool,
    /// Colliding pursuer pairs `(i, j)` with `i < j`.
    pub collisions: Vec<(usize, usize)>,
    /// Pursuers outside the arena.
    pub boundary_exits: Vec<usize>,
}

pub fn distance(a: &LvlhState, b: &LvlhState) -> f64 {
    norm3(a.relative_to(b).position())
}

pub fn outside(s: &LvlhState, half_extent: f64) -> bool {
    s.position().iter().any(|c| c.abs() > half_extent)
}

/// Nearest evader per pursuer, skipping evaders already attached unless
/// every evader is.
pub fn assign(pursuers: &[LvlhState], evaders: &[LvlhState], attached: &[bool]) -> Vec<usize> {
    let open: Vec<usize> = (0..evaders.len()).filter(|&e| !attached.get(e).copied().unwrap_or(false)).collect();
    let pool: Vec<usize> = if open.is_empty() { (0..evaders.len()).collect() } else { open };
    pursuers
        .iter()
        .map(|p| {
            *pool
                .iter()
                .min_by(|&&a, &&b| distance(p, &evaders[a]).total_cmp(&distance(p, &evaders[b])))
                .expect("at least one evader")
        })
        .collect()
}

/// `attached_before` marks evaders already attached earlier in the episode;
/// `wall_hits` marks evaders that hit the arena wall during this step.
pub fn detect_events(
    pursuers: &[LvlhState],
    evaders: &[LvlhState],
    attached_before: &[bool],
    wall_hits: &[bool],
    geo: &EventGeometry,
) -> EventSet {
    let assignment = assign(pursuers, evaders, attached_before);
    let within: Vec<bool> =
        pursuers.iter().zip(&assignment).map(|(p, &e)| distance(p, &evaders[e]) <= geo.capture_radius).collect();
    let surround = match geo.rule {
        CaptureRule::All => within.iter().all(|&w| w),
        CaptureRule::Any => within.iter().any(|&w| w),
    };
    let driven_to_boundary = evaders.iter().enumerate().any(|(e, ev)| {
        wall_hits.get(e).copied().unwrap_or(false) && pursuers.iter().any(|p| distance(p, ev) <= geo.drive_radius)
    });

    let attached: Vec<bool> = evaders
        .iter()
        .enumerate()
        .map(|(e, ev)| {
            attached_before.get(e).copied().unwrap_or(false)
                || pursuers.iter().any(|p| {
                    let rel = p.relative_to(ev);
                    norm3(rel.position()) <= geo.contact && norm3(rel.velocity()) <= geo.dock_speed
                })
        })
        .collect();
    let attachment_success = attached.iter().all(|&a| a);

    let mut collisions = Vec::new();
    for i in 0..pursuers.len() {
        for j in i + 1..pursuers.len() {
            if distance(&pursuers[i], &pursuers[j]) < geo.collision {
                collisions.push((i, j));
            }
        }
    }
    let boundary_exits = (0..pursuers.len()).filter(|&i| outside(&pursuers[i], geo.half_extent)).collect();

    EventSet {
        assignment,
        capture: surround || driven_to_boundary,
        driven_to_boundary,
        attached,
        attachment_success,
        collisions,
        boundary_exits,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(x: f64, y: f64, z: f64) -> LvlhState {
        LvlhState::from_pos_vel([x, y, z], [0.0; 3])
    }

    fn geo() -> EventGeometry {
        EventGeometry::from_config(&EnvConfig::default())
    }

    #[test]
    fn surround_at_49_m_captures() {
        let ev = [at(1.0, 1.0, 1.0)];
        let ps = [at(1.049, 1.0, 1.0), at(1.0, 0.951, 1.0), at(1.0, 1.0, 1.049)];
        let e = detect_events(&ps, &ev, &[false], &[false], &geo());
        assert!(e.capture && !e.driven_to_boundary);
        let ps = [at(1.049, 1.0, 1.0), at(1.0, 0.951, 1.0), at(1.0, 1.0, 1.051)];
        assert!(!detect_events(&ps, &ev, &[false], &[false], &geo()).capture);
        let mut any = geo();
        any.rule = CaptureRule::Any;
        assert!(detect_events(&ps, &ev, &[false], &[false], &any).capture);
    }

    #[test]
    fn contact_at_2_4_m_attaches() {
        let ev = [at(0.0, 0.0, 0.0)];
        let ps = [at(0.0024, 0.0, 0.0), at(3.0, 0.0, 0.0)];
        let e = detect_events(&ps, &ev, &[false], &[false], &geo());
        assert!(e.attachment_success);
        let moving = [LvlhState::from_pos_vel([0.0024, 0.0, 0.0], [0.0006, 0.0, 0.0])];
        assert!(!detect_events(&moving, &ev, &[false], &[false], &geo()).attachment_success);
        let far = [at(0.0027, 0.0, 0.0)];
        assert!(!detect_events(&far, &ev, &[false], &[false], &geo()).attachment_success);
    }

    #[test]
    fn collisions_need_close_pursuers() {
        let ev = [at(100.0, 0.0, 0.0)];
        let ps = [at(0.0, 0.0, 0.0), at(10.0, 0.0, 0.0)];
        assert!(detect_events(&ps, &ev, &[false], &[false], &geo()).collisions.is_empty());
        let ps = [at(0.0, 0.0, 0.0), at(0.0030, 0.0, 0.0), at(0.0, 0.0032, 0.0)];
        assert_eq!(detect_events(&ps, &ev, &[false], &[false], &geo()).collisions, vec![(0, 1)]);
    }

    #[test]
    fn boundary_and_drive_rules() {
        let g = geo();
        let ev = [at(g.half_extent, 0.0, 0.0)];
        let ps = [at(g.half_extent - 0.5, 0.0, 0.0), at(g.half_extent + 1.0, 0.0, 0.0)];
        let e = detect_events(&ps, &ev, &[false], &[true], &g);
        assert_eq!(e.boundary_exits, vec![1]);
        assert!(e.driven_to_boundary && e.capture);
        let e = detect_events(&ps, &ev, &[false], &[false], &g);
        assert!(!e.capture);
    }

    #[test]
    fn assignment_skips_attached_evaders() {
        let ev = [at(0.0, 0.0, 0.0), at(10.0, 0.0, 0.0)];
        let ps = [at(1.0, 0.0, 0.0), at(9.0, 0.0, 0.0)];
        assert_eq!(assign(&ps, &ev, &[false, false]), vec![0, 1]);
        assert_eq!(assign(&ps, &ev, &[true, false]), vec![1, 1]);
        assert_eq!(assign(&ps, &ev, &[true, true]), vec![0, 1]);
    }
}
