//! Scripted evader behaviours.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::EnvError;
use crate::orbit::{ControlAccel, LvlhState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EvaderKind {
    /// Full-bound impulse in a uniformly random direction with probability `p_imp`.
    #[default]
    RandomImpulse,
    /// Never thrusts.
    Passive,
}

impl FromStr for EvaderKind {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random_impulse" => Ok(Self::RandomImpulse),
            "passive" => Ok(Self::Passive),
            other => Err(EnvError::UnknownEvader(other.to_string())),
        }
    }
}

impl fmt::Display for EvaderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::RandomImpulse => "random_impulse",
            Self::Passive => "passive",
        })
    }
}

/// Produces one evader's thrust for the coming step. The random stream is
/// consumed identically whatever the states are, so impulse sequences depend
/// on the seed alone.
pub fn scripted_evader<R: Rng + ?Sized>(
    kind: EvaderKind,
    _evader: &LvlhState,
    _pursuers: &[LvlhState],
    p_imp: f64,
    bound: f64,
    rng: &mut R,
) -> ControlAccel {
    match kind {
        EvaderKind::Passive => ControlAccel::ZERO,
        EvaderKind::RandomImpulse => {
            let fire = rng.gen::<f64>() < p_imp;
            let dir = random_unit(rng);
            if fire {
                ControlAccel::from_array(dir.map(|c| c * bound))
            } else {
                ControlAccel::ZERO
            }
        }
    }
}

fn random_unit<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let n = crate::orbit::norm3(v);
        if n > 1e-12 {
            return v.map(|c| c / n);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run(p: f64, seed: u64) -> Vec<ControlAccel> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..200)
            .map(|_| scripted_evader(EvaderKind::RandomImpulse, &LvlhState::ZERO, &[], p, 2.4e-3, &mut rng))
            .collect()
    }

    #[test]
    fn never_fires_at_zero_probability() {
        assert!(run(0.0, 1).iter().all(|a| *a == ControlAccel::ZERO));
    }

    #[test]
    fn always_fires_at_full_bound() {
        for a in run(1.0, 2) {
            assert!((a.norm() - 2.4e-3).abs() < 1e-15);
        }
    }

    #[test]
    fn sequence_is_seed_determined() {
        assert_eq!(run(0.3, 9), run(0.3, 9));
        assert_ne!(run(0.3, 9), run(0.3, 10));
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("passive".parse::<EvaderKind>().unwrap(), EvaderKind::Passive);
        assert!(matches!("greedy".parse::<EvaderKind>(), Err(EnvError::UnknownEvader(_))));
        assert_eq!(EvaderKind::RandomImpulse.to_string().parse::<EvaderKind>().unwrap(), EvaderKind::RandomImpulse);
    }
}
