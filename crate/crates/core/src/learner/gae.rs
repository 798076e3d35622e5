use super::LearnerError;

/// Generalized advantage estimates and return targets for one trajectory.
///
/// `values[t]` is the joint value at step `t`; `bootstrap` is the value
/// after the last step, ignored when that step is terminal.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), LearnerError> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(LearnerError::Shape(format!(
            "gae needs aligned sequences, got {} rewards, {} values, {} dones",
            n,
            values.len(),
            dones.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Shifts and scales to zero mean and unit standard deviation.
pub fn normalize(x: &mut [f64]) {
    if x.len() < 2 {
        return;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    for v in x.iter_mut() {
        *v = (*v - mean) / std;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_terminal_step() {
        let (a, r) = compute_gae(&[1.0], &[0.5], &[true], 123.0, 0.99, 0.95).unwrap();
        assert_eq!(a, vec![0.5]);
        assert_eq!(r, vec![1.0]);
    }

    #[test]
    fn zero_lambda_gives_td_residuals() {
        let rewards = [0.3, -1.0, 2.0, 0.5];
        let values = [0.1, 0.4, -0.2, 0.7];
        let dones = [false, false, true, false];
        let (a, _) = compute_gae(&rewards, &values, &dones, 0.9, 0.99, 0.0).unwrap();
        let next = [0.4, -0.2, 0.0, 0.9];
        for t in 0..4 {
            let live = if dones[t] { 0.0 } else { 1.0 };
            assert!((a[t] - (rewards[t] + 0.99 * next[t] * live - values[t])).abs() < 1e-15);
        }
    }

    #[test]
    fn three_step_discounted_sum() {
        let (a, _) = compute_gae(&[1.0, 1.0, 1.0], &[0.0; 3], &[false, false, true], 0.0, 0.99, 1.0).unwrap();
        let expect = [1.0 + 0.99 + 0.99 * 0.99, 1.0 + 0.99, 1.0];
        for t in 0..3 {
            assert!((a[t] - expect[t]).abs() < 1e-12);
        }
        assert!((a[0] - 2.9701).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        assert!(compute_gae(&[1.0], &[], &[true], 0.0, 0.9, 0.9).is_err());
    }

    #[test]
    fn normalization_is_standard() {
        let mut x = vec![1.0, 2.0, 3.0, 4.0];
        normalize(&mut x);
        let mean: f64 = x.iter().sum::<f64>() / 4.0;
        let var: f64 = x.iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn unit_lambda_is_monte_carlo(
            rewards in prop::collection::vec(-5.0f64..5.0, 1..40),
            seed in prop::collection::vec(-3.0f64..3.0, 40),
            gamma in 0.0f64..0.999,
        ) {
            let n = rewards.len();
            let values = &seed[..n];
            let mut dones = vec![false; n];
            dones[n - 1] = true;
            let (a, _) = compute_gae(&rewards, values, &dones, 0.0, gamma, 1.0).unwrap();
            for t in 0..n {
                let mc: f64 = (t..n).map(|k| gamma.powi((k - t) as i32) * rewards[k]).sum();
                prop_assert!((a[t] - (mc - values[t])).abs() < 1e-10);
            }
        }
    }
}
