use super::PolicyError;

/// Rolling `[window, agents, obs_dim]` history, oldest frame first.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationWindow {
    window: usize,
    agents: usize,
    obs_dim: usize,
    data: Vec<f64>,
}

impl ObservationWindow {
    /// A window whose every frame is `frame` (episode start).
    pub fn repeat(window: usize, frame: &[Vec<f64>]) -> Result<Self, PolicyError> {
        let agents = frame.len();
        let obs_dim = frame.first().map_or(0, Vec::len);
        if window == 0 || agents == 0 || obs_dim == 0 || frame.iter().any(|o| o.len() != obs_dim) {
            return Err(PolicyError::Shape("window needs at least one agent with a non-empty observation".into()));
        }
        if frame.iter().flatten().any(|v| !v.is_finite()) {
            return Err(PolicyError::NonFinite("observation"));
        }
        let flat: Vec<f64> = frame.iter().flatten().copied().collect();
        let data = flat.iter().copied().cycle().take(window * flat.len()).collect();
        Ok(Self { window, agents, obs_dim, data })
    }

    pub fn from_data(window: usize, agents: usize, obs_dim: usize, data: Vec<f64>) -> Result<Self, PolicyError> {
        if data.len() != window * agents * obs_dim || window == 0 || agents == 0 {
            return Err(PolicyError::Shape(format!("{} values for a {window}x{agents}x{obs_dim} window", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(PolicyError::NonFinite("observation"));
        }
        Ok(Self { window, agents, obs_dim, data })
    }

    /// Drops the oldest frame and appends `frame`.
    pub fn push(&mut self, frame: &[Vec<f64>]) -> Result<(), PolicyError> {
        if frame.len() != self.agents || frame.iter().any(|o| o.len() != self.obs_dim) {
            return Err(PolicyError::Shape("frame does not match window".into()));
        }
        if frame.iter().flatten().any(|v| !v.is_finite()) {
            return Err(PolicyError::NonFinite("observation"));
        }
        let step = self.agents * self.obs_dim;
        self.data.copy_within(step.., 0);
        let tail = self.data.len() - step;
        for (a, o) in frame.iter().enumerate() {
            self.data[tail + a * self.obs_dim..tail + (a + 1) * self.obs_dim].copy_from_slice(o);
        }
        Ok(())
    }

    /// Applies `f` to every observation vector in place.
    pub fn map_rows(&mut self, mut f: impl FnMut(&mut [f64])) {
        for row in self.data.chunks_mut(self.obs_dim) {
            f(row);
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let step = self.agents * self.obs_dim;
        &self.data[t * step..(t + 1) * step]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repeat_then_push_rolls_history() {
        let mut w = ObservationWindow::repeat(3, &[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(w.frame(0), w.frame(2));
        w.push(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
        assert_eq!(w.frame(1), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(w.frame(2), &[5.0, 6.0, 7.0, 8.0]);
        assert!(w.push(&[vec![1.0]]).is_err());
        assert!(ObservationWindow::repeat(3, &[vec![f64::NAN]]).is_err());
    }
}
