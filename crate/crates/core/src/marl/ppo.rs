//! Semi-Markov reward, advantage, clipped surrogate and critic loss.

use serde::{Deserialize, Serialize};

use super::nn::Mlp;
use super::observation::Observation;
use super::policy::{Action, Policy};
use crate::harness::metrics::CostBreakdown;

/// Weights turning a slot's cost breakdown into a reward term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub beta1: f64,
    pub beta2: f64,
    /// Penalty per slice whose demand is not supported.
    pub p1: f64,
    /// Penalty when some slice-1 reservation misses its reliability target.
    pub p2: f64,
}

/// Discounted negative cost over the slots of one window, the first slot
/// undiscounted.
pub fn window_reward(slots: &[CostBreakdown], gamma: f64, w: &RewardWeights) -> f64 {
    let mut reward = 0.0;
    let mut discount = 1.0;
    for c in slots {
        reward -= discount * (c.system(w.beta1, w.beta2) + c.penalty(w.p1, w.p2));
        discount *= gamma;
    }
    reward
}

/// `R + gamma^dt V(next) - V(cur)`, without the bootstrap when terminal.
pub fn advantage(reward: f64, gamma: f64, dt: usize, v_next: f64, v_cur: f64, done: bool) -> f64 {
    bootstrap_target(reward, gamma, dt, v_next, done) - v_cur
}

pub fn bootstrap_target(reward: f64, gamma: f64, dt: usize, v_next: f64, done: bool) -> f64 {
    if done {
        reward
    } else {
        reward + gamma.powi(dt as i32) * v_next
    }
}

/// One decision as consumed by the update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub cell: usize,
    pub window_index: usize,
    pub state: Vec<f64>,
    pub observation: Observation,
    pub action: Action,
    pub old_log_prob: f64,
    pub reward: f64,
    /// Slots until this cell's next decision.
    pub dt: usize,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// `min(xi A, clip(xi, 1-delta, 1+delta) A)`.
pub fn clipped_term(ratio: f64, adv: f64, delta: f64) -> f64 {
    (ratio * adv).min(ratio.clamp(1.0 - delta, 1.0 + delta) * adv)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyLoss {
    /// Batch mean of the clipped surrogate.
    pub surrogate: f64,
    pub entropy: f64,
    /// Gradient of `surrogate + entropy_coef * entropy`.
    pub grad: Vec<f64>,
}

/// Clipped surrogate over a batch of `(observation, action, old log-prob,
/// advantage)` samples.
pub fn clipped_policy_loss(
    policy: &Policy,
    batch: &[(&Observation, &Action, f64, f64)],
    delta: f64,
    entropy_coef: f64,
) -> PolicyLoss {
    assert!(!batch.is_empty(), "empty batch");
    let n = batch.len() as f64;
    let mut grad = vec![0.0; policy.param_count()];
    let mut surrogate = 0.0;
    let mut entropy = 0.0;
    for &(obs, action, old, adv) in batch {
        let e = policy.evaluate(obs, action, None);
        let ratio = (e.log_prob - old).exp();
        surrogate += clipped_term(ratio, adv, delta);
        entropy += e.entropy;
        // the unclipped branch is the one selected unless the clip binds
        let clipped = ratio.clamp(1.0 - delta, 1.0 + delta);
        let active = ratio * adv <= clipped * adv || clipped == ratio;
        let c_logp = if active { ratio * adv / n } else { 0.0 };
        policy.evaluate(obs, action, Some((&mut grad, c_logp, entropy_coef / n)));
    }
    PolicyLoss {
        surrogate: surrogate / n,
        entropy: entropy / n,
        grad,
    }
}

/// Mean squared error between `V(state)` and targets, with its gradient.
pub fn critic_loss(critic: &Mlp, batch: &[(&[f64], f64)]) -> (f64, Vec<f64>) {
    assert!(!batch.is_empty(), "empty batch");
    let n = batch.len() as f64;
    let mut grad = vec![0.0; critic.param_count()];
    let mut loss = 0.0;
    for &(state, target) in batch {
        let trace = critic.forward(state);
        let diff = trace.output()[0] - target;
        loss += diff * diff / n;
        critic.backward(&trace, &[2.0 * diff / n], &mut grad);
    }
    (loss, grad)
}
