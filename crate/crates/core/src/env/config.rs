//! Environment configuration. Field names follow Rust conventions; the
//! serialized keys use the symbol names of the experiment tables.

use serde::{Deserialize, Serialize};

use super::evader::EvaderKind;
use super::EnvError;
use crate::orbit::{OrbitParams, GEO_RADIUS_KM, MU_EARTH};

const M_PER_KM: f64 = 1000.0;

/// Whether capture needs every pursuer inside the task radius or just one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CaptureRule {
    #[default]
    All,
    Any,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueueParams {
    /// Local compute drained per satellite and target each step.
    pub c_local: f64,
    /// Work sensed per step from an in-range target.
    pub s0: f64,
    /// Sensing range (km).
    pub rho_sense: f64,
    /// Outage penalty coefficient.
    pub lambda: f64,
    /// Optional absolute load threshold for offload eligibility.
    pub offload_threshold: Option<f64>,
}

impl Default for QueueParams {
    fn default() -> Self {
        Self { c_local: 1.0, s0: 1.0, rho_sense: 100.0, lambda: 0.01, offload_threshold: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub w_d: f64,
    pub w_cap: f64,
    pub w_att: f64,
    pub w_col: f64,
    pub w_bnd: f64,
    pub w_fuel: f64,
    pub r_max: f64,
    /// Distance (m) below which pursuit shaping stops paying for closing in.
    pub standoff: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self { w_d: 1.0, w_cap: 10.0, w_att: 20.0, w_col: 5.0, w_bnd: 5.0, w_fuel: 0.1, r_max: 100.0, standoff: 25.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    #[serde(rename = "m")]
    pub pursuers: usize,
    #[serde(rename = "k")]
    pub evaders: usize,
    /// Layout capacity for pursuers.
    pub m_max: usize,
    /// Layout capacity for evaders.
    pub k_max: usize,
    /// Arena half-extent per axis (km).
    #[serde(rename = "l_r")]
    pub half_extent: f64,
    /// Body radii (m).
    #[serde(rename = "r_p")]
    pub pursuer_radius: f64,
    #[serde(rename = "r_e")]
    pub evader_radius: f64,
    /// Pursuit-to-attachment switch radius (m).
    #[serde(rename = "r_pe")]
    pub task_radius: f64,
    /// Speed cap (km/s).
    pub v_max: f64,
    /// Minimum tolerance distance (m).
    #[serde(rename = "varpi_min")]
    pub tolerance: f64,
    /// Task window in steps.
    #[serde(rename = "T0")]
    pub horizon: usize,
    /// Step length (s).
    pub dt: f64,
    /// Pursuer acceleration bound (km/s²).
    pub a_max_p: f64,
    pub evader_gain: f64,
    pub mu: f64,
    /// Reference orbit radius (km).
    pub a0: f64,
    /// Mean motion override; derived from `mu` and `a0` when absent.
    pub omega: Option<f64>,
    /// Attachment relative-speed gate (m/s).
    pub v_dock: f64,
    pub capture_rule: CaptureRule,
    /// When false, capture ends the episode successfully.
    pub attachment: bool,
    /// A wall hit by the evader counts as capture if a pursuer is this close (km).
    pub drive_radius: f64,
    pub evader_policy: EvaderKind,
    /// Per-step impulse probability of the scripted evader.
    pub p_imp: f64,
    pub queue: QueueParams,
    pub reward: RewardWeights,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            pursuers: 3,
            evaders: 1,
            m_max: 5,
            k_max: 2,
            half_extent: 500.0,
            pursuer_radius: 1.5,
            evader_radius: 1.0,
            task_radius: 50.0,
            v_max: 10.0,
            tolerance: 0.1,
            horizon: 1000,
            dt: 1.0,
            a_max_p: 2e-3,
            evader_gain: 1.2,
            mu: MU_EARTH,
            a0: GEO_RADIUS_KM,
            omega: None,
            v_dock: 0.5,
            capture_rule: CaptureRule::All,
            attachment: true,
            drive_radius: 1.0,
            evader_policy: EvaderKind::RandomImpulse,
            p_imp: 0.1,
            queue: QueueParams::default(),
            reward: RewardWeights::default(),
        }
    }
}

impl EnvConfig {
    /// Scaled arena used for desk-scale training runs.
    pub fn desk_scale() -> Self {
        Self { half_extent: 5.0, horizon: 300, attachment: false, ..Self::default() }
    }

    pub fn orbit(&self) -> Result<OrbitParams, EnvError> {
        let orbit = match self.omega {
            Some(w) => OrbitParams::with_omega(self.mu, self.a0, w)?,
            None => OrbitParams::from_radius(self.mu, self.a0)?,
        };
        Ok(orbit)
    }

    pub fn evader_bound(&self) -> f64 {
        self.evader_gain * self.a_max_p
    }

    pub fn task_radius_km(&self) -> f64 {
        self.task_radius / M_PER_KM
    }

    /// Pursuer–evader contact distance `r_p + r_e + ϖ_min` (km).
    pub fn contact_km(&self) -> f64 {
        (self.pursuer_radius + self.evader_radius + self.tolerance) / M_PER_KM
    }

    /// Pursuer–pursuer collision distance `2 r_p + ϖ_min` (km).
    pub fn collision_km(&self) -> f64 {
        (2.0 * self.pursuer_radius + self.tolerance) / M_PER_KM
    }

    pub fn dock_speed_kms(&self) -> f64 {
        self.v_dock / M_PER_KM
    }

    pub fn standoff_km(&self) -> f64 {
        self.reward.standoff / M_PER_KM
    }

    /// Minimum pairwise separation at reset (km).
    pub fn placement_separation_km(&self) -> f64 {
        10.0 * self.task_radius_km()
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |key: &str, why: &str| Err(EnvError::Config(format!("`{key}` {why}")));
        if self.pursuers == 0 {
            return bad("m", "must be at least 1");
        }
        if self.evaders == 0 {
            return bad("k", "must be at least 1");
        }
        if self.pursuers > self.m_max {
            return bad("m", &format!("exceeds layout capacity m_max = {}", self.m_max));
        }
        if self.evaders > self.k_max {
            return bad("k", &format!("exceeds layout capacity k_max = {}", self.k_max));
        }
        let positive = [
            ("l_r", self.half_extent),
            ("r_p", self.pursuer_radius),
            ("r_e", self.evader_radius),
            ("r_pe", self.task_radius),
            ("v_max", self.v_max),
            ("varpi_min", self.tolerance),
            ("dt", self.dt),
            ("a_max_p", self.a_max_p),
            ("evader_gain", self.evader_gain),
            ("v_dock", self.v_dock),
            ("drive_radius", self.drive_radius),
            ("r_max", self.reward.r_max),
        ];
        for (key, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(key, &format!("must be positive and finite, got {v}"));
            }
        }
        if self.horizon == 0 {
            return bad("T0", "must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.p_imp) {
            return bad("p_imp", "must lie in [0, 1]");
        }
        let non_negative = [
            ("c_local", self.queue.c_local),
            ("s0", self.queue.s0),
            ("rho_sense", self.queue.rho_sense),
            ("lambda", self.queue.lambda),
            ("w_d", self.reward.w_d),
            ("w_cap", self.reward.w_cap),
            ("w_att", self.reward.w_att),
            ("w_col", self.reward.w_col),
            ("w_bnd", self.reward.w_bnd),
            ("w_fuel", self.reward.w_fuel),
            ("standoff", self.reward.standoff),
        ];
        for (key, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return bad(key, &format!("must be non-negative and finite, got {v}"));
            }
        }
        self.orbit()?;
        Ok(())
    }
}
