/// Running mean and variance (parallel-merge form).
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStat {
    pub count: f64,
    pub mean: f64,
    pub var: f64,
}

impl Default for RunningStat {
    fn default() -> Self {
        Self { count: 1e-4, mean: 0.0, var: 1.0 }
    }
}

impl RunningStat {
    pub fn update(&mut self, batch: &[f64]) {
        if batch.is_empty() {
            return;
        }
        let n = batch.len() as f64;
        let mean = batch.iter().sum::<f64>() / n;
        let var = batch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let total = self.count + n;
        let delta = mean - self.mean;
        let m2 = self.var * self.count + var * n + delta * delta * self.count * n / total;
        self.mean += delta * n / total;
        self.var = m2 / total;
        self.count = total;
    }

    pub fn std(&self) -> f64 {
        (self.var + 1e-8).sqrt()
    }
}

/// Scales rewards by the running standard deviation of the discounted
/// return, one accumulator per environment.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardScaler {
    pub stat: RunningStat,
    pub returns: Vec<f64>,
    pub gamma: f64,
}

impl RewardScaler {
    pub fn new(envs: usize, gamma: f64) -> Self {
        Self { stat: RunningStat::default(), returns: vec![0.0; envs], gamma }
    }

    /// Feeds one reward per environment and returns the scaled rewards.
    pub fn process(&mut self, rewards: &[f64], dones: &[bool]) -> Vec<f64> {
        assert_eq!(rewards.len(), self.returns.len());
        for (ret, &r) in self.returns.iter_mut().zip(rewards) {
            *ret = *ret * self.gamma + r;
        }
        self.stat.update(&self.returns);
        for (ret, &d) in self.returns.iter_mut().zip(dones) {
            if d {
                *ret = 0.0;
            }
        }
        let s = self.stat.std();
        rewards.iter().map(|r| r / s).collect()
    }

    pub fn scale(&self) -> f64 {
        self.stat.std()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn running_stat_matches_batch_moments() {
        let data: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin() * 3.0 + 1.0).collect();
        let mut s = RunningStat { count: 0.0, mean: 0.0, var: 0.0 };
        for chunk in data.chunks(7) {
            s.update(chunk);
        }
        let mean = data.iter().sum::<f64>() / 100.0;
        let var = data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 100.0;
        assert!((s.mean - mean).abs() < 1e-12);
        assert!((s.var - var).abs() < 1e-12);
    }

    #[test]
    fn scaler_divides_by_return_std() {
        let mut sc = RewardScaler::new(2, 0.9);
        for _ in 0..50 {
            sc.process(&[1.0, -1.0], &[false, false]);
        }
        let out = sc.process(&[2.0, 0.0], &[true, true]);
        assert!((out[0] - 2.0 / sc.scale()).abs() < 1e-12);
        assert_eq!(sc.returns, vec![0.0, 0.0]);
    }
}
