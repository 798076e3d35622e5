//! RMSProp with global gradient-norm clipping.

use super::{Matrix, ParamStore};

#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
    square_avg: Vec<Matrix>,
}

impl RmsProp {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        Self::with_state(store, lr, 0.99, 1e-5)
    }

    pub fn with_state(store: &ParamStore, lr: f64, decay: f64, eps: f64) -> Self {
        let square_avg = store.entries().iter().map(|e| Matrix::zeros(e.value.rows, e.value.cols)).collect();
        Self { lr, decay, eps, square_avg }
    }

    pub fn square_avg(&self) -> &[Matrix] {
        &self.square_avg
    }

    pub fn square_avg_mut(&mut self) -> &mut [Matrix] {
        &mut self.square_avg
    }

    /// `v ← ρv + (1−ρ)g²`, `p ← p − lr·g / (√v + ε)`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Matrix]) {
        assert_eq!(grads.len(), store.len(), "one gradient per parameter");
        for ((id, g), v) in store.ids().collect::<Vec<_>>().into_iter().zip(grads).zip(&mut self.square_avg) {
            let p = store.get_mut(id);
            for ((pv, gv), sv) in p.data.iter_mut().zip(&g.data).zip(&mut v.data) {
                *sv = self.decay * *sv + (1.0 - self.decay) * gv * gv;
                *pv -= self.lr * gv / (sv.sqrt() + self.eps);
            }
        }
    }
}

pub fn global_norm(grads: &[Matrix]) -> f64 {
    grads.iter().map(Matrix::sq_norm).sum::<f64>().sqrt()
}

/// Rescales all gradients so their joint norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Matrix], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale_assign(s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_over_sqrt_one_minus_decay() {
        let mut store = ParamStore::new();
        store.add("w", Matrix::from_vec(1, 2, vec![1.0, -1.0]));
        let mut opt = RmsProp::with_state(&store, 0.1, 0.99, 0.0);
        opt.step(&mut store, &[Matrix::from_vec(1, 2, vec![2.0, -3.0])]);
        let w = store.get(store.find("w").unwrap());
        let step = 0.1 / 0.01f64.sqrt();
        assert!((w.data[0] - (1.0 - step)).abs() < 1e-12);
        assert!((w.data[1] - (-1.0 + step)).abs() < 1e-12);
    }

    #[test]
    fn clipping_caps_the_norm() {
        let mut g = vec![Matrix::from_vec(1, 2, vec![3.0, 4.0])];
        let before = clip_global_norm(&mut g, 0.5);
        assert_eq!(before, 5.0);
        assert!((global_norm(&g) - 0.5).abs() < 1e-12);
        let before = clip_global_norm(&mut g, 10.0);
        assert!((before - 0.5).abs() < 1e-12);
    }
}
