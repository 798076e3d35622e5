//! Interval estimates, proportion tests and curve summaries.

use statrs::function::erf::erfc;

use super::EvalError;

/// Two-sided 95% standard-normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

/// Wilson score interval for `successes` out of `n` at quantile `z`.
/// `None` when `n = 0`.
pub fn wilson_interval(successes: usize, n: usize, z: f64) -> Option<(f64, f64)> {
    if n == 0 {
        return None;
    }
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    Some(((center - half).max(0.0), (center + half).min(1.0)))
}

/// Standard normal upper tail `P(Z > z)`.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Pooled two-proportion z-test of `x1/n1` against `x2/n2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProportionTest {
    pub p1: f64,
    pub p2: f64,
    pub z: f64,
    /// One-sided p-value for `p1 > p2`.
    pub p_greater: f64,
    pub p_two_sided: f64,
}

pub fn two_proportion_z(x1: usize, n1: usize, x2: usize, n2: usize) -> Result<ProportionTest, EvalError> {
    if n1 == 0 || n2 == 0 {
        return Err(EvalError::Empty("two-proportion test needs episodes on both sides"));
    }
    if x1 > n1 || x2 > n2 {
        return Err(EvalError::Input(format!("successes exceed trials: {x1}/{n1}, {x2}/{n2}")));
    }
    let (a, b) = (n1 as f64, n2 as f64);
    let p1 = x1 as f64 / a;
    let p2 = x2 as f64 / b;
    let pooled = (x1 + x2) as f64 / (a + b);
    let se = (pooled * (1.0 - pooled) * (1.0 / a + 1.0 / b)).sqrt();
    // Identical all-zero or all-one samples carry no evidence either way.
    let z = if se > 0.0 { (p1 - p2) / se } else { 0.0 };
    Ok(ProportionTest { p1, p2, z, p_greater: normal_sf(z), p_two_sided: (2.0 * normal_sf(z.abs())).min(1.0) })
}

/// Fraction of runs still incomplete after each grid time. Failed runs
/// carry `f64::INFINITY`.
pub fn incomplete_fraction(completion_times: &[f64], grid: &[f64]) -> Result<Vec<f64>, EvalError> {
    if completion_times.is_empty() {
        return Err(EvalError::Empty("incomplete_fraction needs at least one completion time"));
    }
    if completion_times.iter().any(|t| t.is_nan()) {
        return Err(EvalError::Input("completion time is NaN".into()));
    }
    let mut sorted = completion_times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(grid
        .iter()
        .map(|&t| {
            let done = sorted.partition_point(|&c| c <= t);
            (sorted.len() - done) as f64 / n
        })
        .collect())
}

/// Raw per-episode collision counts and their smoothed curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionCurve {
    pub counts: Vec<f64>,
    pub smoothed: Vec<f64>,
}

pub const COLLISION_WINDOW: usize = 50;

/// Smooths per-episode collision counts with a width-50 box kernel.
///
/// Each count spreads its mass evenly over the (edge-truncated) window
/// centred on it, so the smoothed series has exactly the raw total.
pub fn collision_curve(counts: &[f64]) -> CollisionCurve {
    CollisionCurve { counts: counts.to_vec(), smoothed: mass_preserving_smooth(counts, COLLISION_WINDOW) }
}

pub fn mass_preserving_smooth(x: &[f64], window: usize) -> Vec<f64> {
    let n = x.len();
    let w = window.max(1);
    let mut out = vec![0.0; n];
    for (i, &v) in x.iter().enumerate() {
        let lo = i.saturating_sub((w - 1) / 2);
        let hi = (i + w / 2 + 1).min(n);
        let share = v / (hi - lo) as f64;
        for o in &mut out[lo..hi] {
            *o += share;
        }
    }
    out
}

/// Mean of the first and last `fraction` of a series (at least one
/// element each). `None` for an empty series.
pub fn head_tail_means(x: &[f64], fraction: f64) -> Option<(f64, f64)> {
    if x.is_empty() {
        return None;
    }
    let k = ((x.len() as f64 * fraction).floor() as usize).clamp(1, x.len());
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Some((mean(&x[..k]), mean(&x[x.len() - k..])))
}

pub fn median(x: &[f64]) -> Option<f64> {
    if x.is_empty() {
        return None;
    }
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    Some(if s.len() % 2 == 1 { s[m] } else { 0.5 * (s[m - 1] + s[m]) })
}
