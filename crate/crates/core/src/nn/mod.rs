//! Minimal tape-based autodiff used by the policy and learner.

mod graph;
pub mod matrix;
mod optim;
mod params;

pub use graph::{Gradients, Graph, Var, LN_2PI};
pub use matrix::Matrix;
pub use optim::{clip_global_norm, global_norm, RmsProp};
pub use params::{orthogonal, ParamEntry, ParamId, ParamStore};

/// Affine map `x·W + b` with `W` stored `in×out`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<R: rand::Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let w = store.add(format!("{name}.w"), orthogonal(inputs, outputs, gain, rng));
        let b = store.add(format!("{name}.b"), Matrix::zeros(1, outputs));
        Self { w, b }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Matrix::filled(1, width, 1.0));
        let beta = store.add(format!("{name}.beta"), Matrix::zeros(1, width));
        Self { gamma, beta }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    /// Checks d(loss)/d(param) against central differences for every
    /// scalar of every parameter in the store.
    fn check(store: &ParamStore, f: impl Fn(&mut Graph<'_>) -> Var) {
        let mut g = Graph::new(store);
        let root = f(&mut g);
        let grads = g.backward(root).into_dense(store);
        let h = 1e-6;
        let mut work = store.clone();
        for id in store.ids() {
            for i in 0..store.get(id).len() {
                let orig = work.get(id).data[i];
                work.get_mut(id).data[i] = orig + h;
                let up = {
                    let mut g = Graph::new(&work);
                    let r = f(&mut g);
                    g.value(r).item()
                };
                work.get_mut(id).data[i] = orig - h;
                let down = {
                    let mut g = Graph::new(&work);
                    let r = f(&mut g);
                    g.value(r).item()
                };
                work.get_mut(id).data[i] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = grads[id.index()].data[i];
                let tol = 1e-6 * (1.0 + fd.abs().max(an.abs()));
                assert!((fd - an).abs() < tol, "{}[{i}]: fd {fd} vs analytic {an}", store.name(id));
            }
        }
    }

    #[test]
    fn elementwise_and_broadcast_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParamStore::new();
        let a = s.add("a", random(4, 3, &mut rng));
        let b = s.add("b", random(4, 3, &mut rng));
        let row = s.add("row", random(1, 3, &mut rng));
        let col = s.add("col", random(4, 1, &mut rng));
        check(&s, |g| {
            let (a, b, row, col) = (g.param(a), g.param(b), g.param(row), g.param(col));
            let x = g.mul(a, b);
            let x = g.add_row(x, row);
            let x = g.mul_col(x, col);
            let y = g.sub(x, b);
            let y = g.gelu(y);
            let t = g.tanh(a);
            let y = g.add(y, t);
            let e = g.exp(y);
            let e = g.add_scalar(e, 0.5);
            let l = g.log(e);
            let l = g.scale(l, 0.7);
            g.sum(l)
        });
    }

    #[test]
    fn matmul_layernorm_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = ParamStore::new();
        let x = s.add("x", random(5, 4, &mut rng));
        let w = s.add("w", random(4, 6, &mut rng));
        let ln = LayerNorm::new(&mut s, "ln", 6);
        s.get_mut(ln.gamma).data.iter_mut().for_each(|v| *v += 0.3);
        let wt = s.add("wt", random(5, 6, &mut rng));
        check(&s, |g| {
            let (x, w, wt) = (g.param(x), g.param(w), g.param(wt));
            let y = g.matmul(x, w);
            let y = ln.forward(g, y);
            let p = g.softmax_rows(y);
            let p = g.mul(p, wt);
            g.mean(p)
        });
    }

    #[test]
    fn attention_full_and_causal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = ParamStore::new();
        let q = s.add("q", random(6, 4, &mut rng));
        let k = s.add("k", random(6, 4, &mut rng));
        let v = s.add("v", random(6, 4, &mut rng));
        let kx = s.add("kx", random(4, 4, &mut rng));
        let w = s.add("w", random(6, 4, &mut rng));
        for causal in [false, true] {
            check(&s, |g| {
                let (q, k, v, w) = (g.param(q), g.param(k), g.param(v), g.param(w));
                let o = g.attention(q, k, v, 2, 2, causal);
                let o = g.mul(o, w);
                g.sum(o)
            });
        }
        // cross attention with different key length
        check(&s, |g| {
            let (q, kx, w) = (g.param(q), g.param(kx), g.param(w));
            let o = g.attention(q, kx, kx, 2, 2, false);
            let o = g.mul(o, w);
            g.sum(o)
        });
    }

    #[test]
    fn causal_attention_ignores_future_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = ParamStore::new();
        let q = random(4, 4, &mut rng);
        let k = random(4, 4, &mut rng);
        let v = random(4, 4, &mut rng);
        let mut g1 = Graph::new(&s);
        let (a, b, c) = (g1.input(q.clone()), g1.input(k.clone()), g1.input(v.clone()));
        let o1 = g1.attention(a, b, c, 1, 2, true);
        let mut k2 = k.clone();
        let mut v2 = v.clone();
        k2.row_mut(3).iter_mut().for_each(|x| *x += 5.0);
        v2.row_mut(3).iter_mut().for_each(|x| *x -= 2.0);
        let mut g2 = Graph::new(&s);
        let (a, b, c) = (g2.input(q), g2.input(k2), g2.input(v2));
        let o2 = g2.attention(a, b, c, 1, 2, true);
        for r in 0..3 {
            assert_eq!(g1.value(o1).row(r), g2.value(o2).row(r));
        }
        assert_ne!(g1.value(o1).row(3), g2.value(o2).row(3));
    }

    #[test]
    fn structural_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = ParamStore::new();
        let a = s.add("a", random(6, 3, &mut rng));
        let b = s.add("b", random(3, 2, &mut rng));
        let t = s.add("t", random(2, 3, &mut rng));
        check(&s, |g| {
            let (a, b, t) = (g.param(a), g.param(b), g.param(t));
            let m = g.group_mean(a, 2);
            let q = g.gather_rows(t, vec![1, 0, 1]);
            let d = g.row_dot(m, q);
            let c = g.concat_cols(vec![d, b]);
            let c0 = g.select_col(c, 2);
            let c1 = g.select_col(c, 0);
            let x = g.mul(c0, c1);
            let sq = g.mul(x, x);
            let cl = g.clamp(sq, -10.0, 10.0);
            g.sum(cl)
        });
    }

    #[test]
    fn gaussian_and_surrogate() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut s = ParamStore::new();
        let mean = s.add("mean", random(5, 3, &mut rng));
        let ls = s.add("ls", random(1, 3, &mut rng));
        let sample: Vec<f64> = (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let _old: Vec<f64> = (0..5).map(|_| rng.gen_range(-6.0..-2.0)).collect();
        let adv: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        check(&s, |g| {
            let (mean, ls) = (g.param(mean), g.param(ls));
            let lp = g.gaussian_log_prob(mean, ls, sample.clone());
            g.sum(lp)
        });
        // keep ratios inside the trust region so the objective is smooth
        let mut g = Graph::new(&s);
        let (m, l) = (g.param(mean), g.param(ls));
        let lp = g.gaussian_log_prob(m, l, sample.clone());
        let near: Vec<f64> = g.value(lp).data.iter().map(|v| v + 0.01).collect();
        check(&s, |g| {
            let (mean, ls) = (g.param(mean), g.param(ls));
            let lp = g.gaussian_log_prob(mean, ls, sample.clone());
            let obj = g.clipped_surrogate(lp, near.clone(), adv.clone(), 0.2);
            g.sum(obj)
        });
    }

    #[test]
    fn surrogate_values() {
        let s = ParamStore::new();
        let mut g = Graph::new(&s);
        let lp = g.input(Matrix::from_vec(3, 1, vec![0.0, 1.2f64.ln(), 0.8f64.ln()]));
        let obj = g.clipped_surrogate(lp, vec![0.0; 3], vec![2.0, 1.0, -1.0], 0.05);
        let v = &g.value(obj).data;
        assert!((v[0] - 2.0).abs() < 1e-12);
        assert!((v[1] - 1.05).abs() < 1e-12);
        assert!((v[2] + 0.95).abs() < 1e-12);
    }

    #[test]
    fn tracked_inputs_receive_gradients() {
        let s = ParamStore::new();
        let mut g = Graph::new(&s);
        let x = g.tracked(Matrix::from_vec(1, 2, vec![1.5, -2.0]));
        let y = g.mul(x, x);
        let r = g.sum(y);
        let grads = g.backward(r);
        assert_eq!(grads.wrt(x).unwrap().data, vec![3.0, -4.0]);
    }
}
