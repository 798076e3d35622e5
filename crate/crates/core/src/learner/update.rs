//! Losses, the combined gradient step and target-network tracking.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{Hyperparams, LearnerError, RolloutBatch};
use crate::experts::reg_loss_graph;
use crate::nn::{clip_global_norm, Graph, Matrix, ParamId, ParamStore, RmsProp, Var};
use crate::policy::{AgentAction, ObservationWindow, Policy};

/// Lagged copy of the value-head parameters used in the Bellman target.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetParams {
    ids: Vec<ParamId>,
    values: Vec<Matrix>,
}

impl TargetParams {
    pub fn from_policy(policy: &Policy) -> Self {
        let ids = policy.value_head_params();
        let values = ids.iter().map(|&id| policy.store().get(id).clone()).collect();
        Self { ids, values }
    }

    pub fn from_parts(ids: Vec<ParamId>, values: Vec<Matrix>) -> Self {
        Self { ids, values }
    }

    pub fn ids(&self) -> &[ParamId] {
        &self.ids
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Matrix] {
        &mut self.values
    }

    /// Copy of `policy` with its value head replaced by the target.
    pub fn apply_to(&self, policy: &Policy) -> Policy {
        let mut p = policy.clone();
        for (&id, v) in self.ids.iter().zip(&self.values) {
            *p.store_mut().get_mut(id) = v.clone();
        }
        p
    }
}

/// `target ← (1 − η)·target + η·online`.
pub fn soft_update(target: &mut TargetParams, store: &ParamStore, eta: f64) -> Result<(), LearnerError> {
    for (&id, t) in target.ids.iter().zip(&mut target.values) {
        let p = store.get(id);
        if p.shape() != t.shape() {
            return Err(LearnerError::Shape(format!(
                "target {} is {:?}, online is {:?}",
                store.name(id),
                t.shape(),
                p.shape()
            )));
        }
        for (tv, pv) in t.data.iter_mut().zip(&p.data) {
            *tv = (1.0 - eta) * *tv + eta * pv;
        }
    }
    Ok(())
}

/// Mean squared Bellman residual over per-agent values and their fixed
/// targets.
pub fn encoder_loss(values: &[f64], targets: &[f64]) -> f64 {
    assert_eq!(values.len(), targets.len());
    values.iter().zip(targets).map(|(v, y)| (y - v).powi(2)).sum::<f64>() / values.len() as f64
}

/// Negative mean clipped surrogate.
pub fn decoder_loss(log_probs: &[f64], old_log_probs: &[f64], advantages: &[f64], clip: f64) -> f64 {
    assert_eq!(log_probs.len(), old_log_probs.len());
    assert_eq!(log_probs.len(), advantages.len());
    let s: f64 = log_probs
        .iter()
        .zip(old_log_probs)
        .zip(advantages)
        .map(|((lp, old), a)| {
            let r = (lp - old).exp();
            (r * a).min(r.clamp(1.0 - clip, 1.0 + clip) * a)
        })
        .sum();
    -s / log_probs.len() as f64
}

/// Borrowed view of the samples in one optimizer step.
#[derive(Debug, Clone)]
pub struct MiniBatch<'a> {
    pub windows: Vec<&'a ObservationWindow>,
    pub tasks: Vec<usize>,
    pub actions: Vec<Vec<AgentAction>>,
    /// Flattened per-agent old log-probabilities.
    pub old_log_probs: Vec<f64>,
    /// Flattened per-agent advantages (the joint advantage, broadcast).
    pub advantages: Vec<f64>,
    /// Flattened per-agent Bellman targets.
    pub value_targets: Vec<f64>,
}

impl<'a> MiniBatch<'a> {
    pub fn from_batch(batch: &'a RolloutBatch, indices: &[usize]) -> Self {
        let mut mb = MiniBatch {
            windows: Vec::with_capacity(indices.len()),
            tasks: Vec::with_capacity(indices.len()),
            actions: Vec::with_capacity(indices.len()),
            old_log_probs: Vec::new(),
            advantages: Vec::new(),
            value_targets: Vec::new(),
        };
        for &i in indices {
            let s = &batch.samples[i];
            mb.windows.push(&s.window);
            mb.tasks.push(s.task);
            mb.actions.push(s.actions.clone());
            mb.old_log_probs.extend(s.actions.iter().map(|a| a.log_prob));
            mb.advantages.extend(std::iter::repeat_n(s.advantage, s.actions.len()));
            mb.value_targets.extend_from_slice(&s.value_targets);
        }
        mb
    }
}

/// Loss components of one mini-batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub encoder: f64,
    pub decoder: f64,
    pub regularizer: f64,
    /// `−entropy_coef · entropy`.
    pub entropy_bonus: f64,
    pub total: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Builds the combined objective on `g` and returns its root.
pub fn combined_loss(
    policy: &Policy,
    g: &mut Graph<'_>,
    mb: &MiniBatch<'_>,
    hyper: &Hyperparams,
) -> Result<(Var, LossParts), LearnerError> {
    let enc = policy.encode_graph(g, &mb.windows)?;
    let rows = enc.batch * enc.agents;
    if mb.value_targets.len() != rows || mb.old_log_probs.len() != rows || mb.advantages.len() != rows {
        return Err(LearnerError::Shape(format!("mini-batch has {rows} agent rows but mismatched targets")));
    }
    let mix = policy.mix_graph(g, &enc, &mb.tasks)?;
    let means = policy.decode_graph(g, &enc, mix.h, Policy::teacher_inputs(&mb.actions), enc.agents);
    let log_std = policy.log_std_graph(g);
    let lp = policy.log_prob_graph(g, means, log_std, &mb.actions);

    let targets = g.input(Matrix::from_vec(rows, 1, mb.value_targets.clone()));
    let resid = g.sub(enc.values, targets);
    let sq = g.mul(resid, resid);
    let enc_loss = g.mean(sq);

    let surrogate = g.clipped_surrogate(lp, mb.old_log_probs.clone(), mb.advantages.clone(), hyper.clip);
    let s = g.mean(surrogate);
    let dec_loss = g.scale(s, -1.0);

    let reg = reg_loss_graph(g, mix.alpha, hyper.eta_reg, hyper.eps_reg);
    let entropy = policy.entropy_graph(g, log_std);
    let bonus = g.scale(entropy, -hyper.entropy_coef);

    let a = g.add(enc_loss, dec_loss);
    let b = g.add(a, reg);
    let total = g.add(b, bonus);

    let new_lp = &g.value(lp).data;
    let mut kl = 0.0;
    let mut clipped = 0usize;
    for (n, o) in new_lp.iter().zip(&mb.old_log_probs) {
        kl += o - n;
        if ((n - o).exp() - 1.0).abs() > hyper.clip {
            clipped += 1;
        }
    }
    let parts = LossParts {
        encoder: g.value(enc_loss).item(),
        decoder: g.value(dec_loss).item(),
        regularizer: g.value(reg).item(),
        entropy_bonus: g.value(bonus).item(),
        total: g.value(total).item(),
        entropy: g.value(entropy).item(),
        approx_kl: kl / rows as f64,
        clip_fraction: clipped as f64 / rows as f64,
    };
    Ok((total, parts))
}

/// Averages over every optimizer step of one update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateMetrics {
    pub encoder_loss: f64,
    pub decoder_loss: f64,
    pub reg_loss: f64,
    pub entropy_bonus: f64,
    pub total_loss: f64,
    pub entropy: f64,
    pub grad_norm: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub steps: usize,
}

impl UpdateMetrics {
    fn accumulate(&mut self, p: &LossParts, grad_norm: f64) {
        self.encoder_loss += p.encoder;
        self.decoder_loss += p.decoder;
        self.reg_loss += p.regularizer;
        self.entropy_bonus += p.entropy_bonus;
        self.total_loss += p.total;
        self.entropy += p.entropy;
        self.grad_norm += grad_norm;
        self.approx_kl += p.approx_kl;
        self.clip_fraction += p.clip_fraction;
        self.steps += 1;
    }

    fn finish(mut self) -> Self {
        if self.steps > 0 {
            let n = self.steps as f64;
            for v in [
                &mut self.encoder_loss,
                &mut self.decoder_loss,
                &mut self.reg_loss,
                &mut self.entropy_bonus,
                &mut self.total_loss,
                &mut self.entropy,
                &mut self.grad_norm,
                &mut self.approx_kl,
                &mut self.clip_fraction,
            ] {
                *v /= n;
            }
        }
        self
    }
}

/// `ppo_epochs` passes over shuffled mini-batches of a prepared batch,
/// each followed by a global-norm clip, an RMSProp step and a soft target
/// update.
pub fn update<R: Rng + ?Sized>(
    policy: &mut Policy,
    optimizer: &mut RmsProp,
    target: &mut TargetParams,
    batch: &RolloutBatch,
    hyper: &Hyperparams,
    update_index: u64,
    rng: &mut R,
) -> Result<UpdateMetrics, LearnerError> {
    let mut metrics = UpdateMetrics::default();
    if batch.is_empty() {
        return Ok(metrics);
    }
    optimizer.lr = hyper.lr;
    let mut order: Vec<usize> = (0..batch.len()).collect();
    for _ in 0..hyper.ppo_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(hyper.batch) {
            let mb = MiniBatch::from_batch(batch, chunk);
            let (parts, mut grads) = {
                let mut g = Graph::new(policy.store());
                let (root, parts) = combined_loss(policy, &mut g, &mb, hyper)?;
                (parts, g.backward(root).into_dense(policy.store()))
            };
            if !parts.total.is_finite() {
                return Err(LearnerError::NonFinite {
                    what: "loss",
                    update: update_index,
                    detail: format!(
                        "encoder {} decoder {} regularizer {}",
                        parts.encoder, parts.decoder, parts.regularizer
                    ),
                });
            }
            if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
                let id = policy.store().ids().nth(bad).expect("gradient index");
                return Err(LearnerError::NonFinite {
                    what: "gradient",
                    update: update_index,
                    detail: format!("parameter {}", policy.store().name(id)),
                });
            }
            let norm = clip_global_norm(&mut grads, hyper.max_grad_norm);
            optimizer.step(policy.store_mut(), &grads);
            soft_update(target, policy.store(), hyper.eta_soft)?;
            metrics.accumulate(&parts, norm);
        }
    }
    if let Some(k) = hyper.hard_update_interval {
        if k > 0 && (update_index + 1).is_multiple_of(k) {
            *target = TargetParams::from_policy(policy);
        }
    }
    Ok(metrics.finish())
}
