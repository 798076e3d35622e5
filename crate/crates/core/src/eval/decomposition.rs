//! Exhaustive check of the sequential advantage decomposition on
//! single-state matrix games.
//!
//! For an ordering `i_1..i_n`, the joint advantage `Q(a) − V` must equal
//! the sum over `m` of `Q(a^{i_1..i_m}) − Q(a^{i_1..i_{m−1}})`, where each
//! partial `Q` marginalizes the remaining agents under the factored policy.

use rand::Rng;

use super::EvalError;
use crate::seed::{rng_for, Stream};

pub const MAX_AGENTS: usize = 3;
pub const MAX_ACTIONS: usize = 3;

/// One-state `n`-agent game with an explicit reward table and a factored
/// stochastic policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyGame {
    /// Actions available to each agent.
    pub actions: Vec<usize>,
    /// Per-agent action probabilities.
    pub policy: Vec<Vec<f64>>,
    /// Joint reward in row-major order over agents `0..n`.
    pub rewards: Vec<f64>,
}

impl ToyGame {
    /// Game with rewards drawn from `[-1, 1]` and a random or uniform
    /// policy.
    pub fn random(agents: usize, actions: usize, uniform_policy: bool, seed: u64) -> Result<Self, EvalError> {
        let mut rng = rng_for(seed, Stream::Evaluation, agents as u64);
        let acts = vec![actions; agents];
        let joint: usize = acts.iter().product();
        let policy = acts
            .iter()
            .map(|&k| {
                if uniform_policy {
                    vec![1.0 / k as f64; k]
                } else {
                    let w: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
                    let s: f64 = w.iter().sum();
                    w.into_iter().map(|x| x / s).collect()
                }
            })
            .collect();
        let rewards = (0..joint).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let game = Self { actions: acts, policy, rewards };
        game.validate()?;
        Ok(game)
    }

    pub fn agents(&self) -> usize {
        self.actions.len()
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let n = self.actions.len();
        if n == 0 || n > MAX_AGENTS || self.actions.iter().any(|&k| k == 0 || k > MAX_ACTIONS) {
            return Err(EvalError::TooLarge {
                agents: n,
                max_actions: self.actions.iter().copied().max().unwrap_or(0),
            });
        }
        if self.policy.len() != n || self.policy.iter().zip(&self.actions).any(|(p, &k)| p.len() != k) {
            return Err(EvalError::Input("policy table does not match the action counts".into()));
        }
        if self
            .policy
            .iter()
            .any(|p| p.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9)
        {
            return Err(EvalError::Input("every agent policy must be a probability vector".into()));
        }
        if self.rewards.len() != self.actions.iter().product::<usize>() {
            return Err(EvalError::Input("reward table size differs from the joint action count".into()));
        }
        Ok(())
    }

    fn joint_actions(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new()];
        for &k in &self.actions {
            out = out.into_iter().flat_map(|p| (0..k).map(move |a| [p.clone(), vec![a]].concat())).collect();
        }
        out
    }

    fn reward(&self, joint: &[usize]) -> f64 {
        let idx = joint.iter().zip(&self.actions).fold(0, |acc, (&a, &k)| acc * k + a);
        self.rewards[idx]
    }

    /// Expected reward with the agents in `fixed` pinned to their actions
    /// and every other agent drawn from its policy.
    pub fn partial_q(&self, fixed: &[(usize, usize)]) -> f64 {
        self.joint_actions()
            .iter()
            .filter(|j| fixed.iter().all(|&(i, a)| j[i] == a))
            .map(|j| {
                let w: f64 = (0..self.agents())
                    .filter(|i| !fixed.iter().any(|f| f.0 == *i))
                    .map(|i| self.policy[i][j[i]])
                    .product();
                w * self.reward(j)
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionReport {
    pub order: Vec<usize>,
    pub joint_actions: usize,
    pub max_residual: f64,
    /// Per joint action: the joint advantage and the sum of sequential
    /// per-agent advantages.
    pub rows: Vec<(Vec<usize>, f64, f64)>,
}

/// Checks the decomposition for one agent ordering over every joint
/// action.
pub fn verify_decomposition(game: &ToyGame, order: &[usize]) -> Result<DecompositionReport, EvalError> {
    game.validate()?;
    let n = game.agents();
    let mut seen = vec![false; n];
    if order.len() != n || order.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
        return Err(EvalError::Input(format!("{order:?} is not a permutation of 0..{n}")));
    }
    let v = game.partial_q(&[]);
    let mut rows = Vec::new();
    let mut max_residual: f64 = 0.0;
    for joint in game.joint_actions() {
        let joint_adv = game.reward(&joint) - v;
        let mut prefix = Vec::with_capacity(n);
        let mut prev = v;
        let mut sum = 0.0;
        for &i in order {
            prefix.push((i, joint[i]));
            let q = game.partial_q(&prefix);
            sum += q - prev;
            prev = q;
        }
        max_residual = max_residual.max((joint_adv - sum).abs());
        rows.push((joint, joint_adv, sum));
    }
    Ok(DecompositionReport { order: order.to_vec(), joint_actions: rows.len(), max_residual, rows })
}

/// Every permutation of `0..n`.
pub fn orderings(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for rest in orderings(n - 1) {
        for pos in 0..=rest.len() {
            let mut p = rest.clone();
            p.insert(pos, n - 1);
            out.push(p);
        }
    }
    out
}
