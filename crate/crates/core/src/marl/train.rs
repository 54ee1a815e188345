//! Episode loop: rollouts with the current policy, then clipped-surrogate
//! policy updates and bootstrapped critic regression.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint;
use super::nn::{clip_global_norm, Adam, Mlp};
use super::policy::{Action, InputNorm, Policy, PolicyKind};
use super::ppo::{advantage, bootstrap_target, clipped_policy_loss, critic_loss, Transition};
use super::MarlError;
use crate::harness::sim::{run_episode, Decision, EpisodeOptions, Scheme, World};

/// One row of the training curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: usize,
    /// System cost plus penalties over the whole episode.
    pub cumulative_cost: f64,
    pub mean_reward: f64,
    pub policy_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub episodes: usize,
    pub seed: u64,
    /// Write `policy_ep<N>.stinpol` here every `checkpoint_every` episodes.
    pub checkpoint_dir: Option<PathBuf>,
    pub checkpoint_every: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Greedy-evaluated best policy when evaluation is on, else the last.
    pub policy: Policy,
    pub last_policy: Policy,
    pub critic: Mlp,
    pub curve: Vec<CurvePoint>,
    /// `(episodes trained, greedy episode cost)` of every evaluation; the
    /// first entry is the initial policy.
    pub evaluations: Vec<(usize, f64)>,
}

pub fn policy_kind(scheme: Scheme) -> PolicyKind {
    match scheme {
        Scheme::PureAmappo => PolicyKind::Ratio,
        _ => PolicyKind::Selection,
    }
}

fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut sizes = vec![input];
    sizes.extend_from_slice(hidden);
    sizes.push(output);
    sizes
}

/// Freshly initialised policy for `scheme`, biased by the scenario's
/// initial output biases.
pub fn initial_policy(world: &World, scheme: Scheme, seed: u64) -> Policy {
    let rl = &world.scenario.rl;
    let kind = policy_kind(scheme);
    let out = match kind {
        PolicyKind::Selection => rl.a_max,
        PolicyKind::Ratio => 2 * rl.a_max,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Mlp::new(&layer_sizes(world.observation.dim(), &rl.hidden, out), 0.01, &mut rng);
    let bias = match kind {
        PolicyKind::Selection => rl.init_selection_bias,
        PolicyKind::Ratio => rl.init_ratio_bias,
    };
    net.layers.last_mut().expect("layers").bias.fill(bias);
    Policy::new(kind, net, rl.init_log_std)
}

pub fn initial_critic(world: &World, seed: u64) -> Mlp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c0de);
    Mlp::new(&layer_sizes(world.state_dim(), &world.scenario.rl.hidden, 1), 1.0, &mut rng)
}

/// Episode cost of the greedy policy.
pub fn greedy_cost(world: &World, scheme: Scheme, policy: &Policy) -> Result<f64, MarlError> {
    let mut act = |obs: &super::observation::Observation| policy.greedy(obs);
    let ep = run_episode(world, scheme, Some(&mut act), EpisodeOptions::default())?;
    Ok(ep.report.total_cost())
}

/// Turns one episode's decisions into transitions. Each cell's decision
/// bootstraps from that cell's next decision; its last one is terminal.
pub fn transitions(decisions: &[Decision], policy: &Policy, state_dim: usize) -> Vec<Transition> {
    let mut out = Vec::new();
    for (i, d) in decisions.iter().enumerate() {
        let Some(action) = &d.action else { continue };
        if !d.complete {
            continue;
        }
        let next = decisions[i + 1..].iter().find(|e| e.cell == d.cell);
        let old_log_prob = policy.evaluate(&d.observation, action, None).log_prob;
        out.push(Transition {
            cell: d.cell,
            window_index: d.window.index,
            state: d.state.clone(),
            observation: d.observation.clone(),
            action: action.clone(),
            old_log_prob,
            reward: d.reward,
            dt: d.window.len,
            next_state: next.map_or_else(|| vec![0.0; state_dim], |e| e.state.clone()),
            done: next.is_none(),
        });
    }
    out
}

/// Smallest batch whose advantages are standardised.
const ADVANTAGE_NORMALIZE_MIN: usize = 32;

/// Running spread of window rewards; rewards are divided by it before they
/// reach the critic.
#[derive(Debug, Clone, Copy, Default)]
struct RewardScale {
    count: f64,
    mean: f64,
    m2: f64,
}

impl RewardScale {
    fn push(&mut self, x: f64) {
        self.count += 1.0;
        let d = x - self.mean;
        self.mean += d / self.count;
        self.m2 += d * (x - self.mean);
    }

    fn scale(&self) -> f64 {
        if self.count < 2.0 {
            return 1.0;
        }
        let std = (self.m2 / (self.count - 1.0)).sqrt();
        if std > 1e-8 {
            std
        } else {
            1.0
        }
    }
}

/// Input spreads below this are treated as this, so near-constant features
/// are not blown up.
const MIN_INPUT_STD: f64 = 1e-2;

/// Running per-feature moments of the observations met in training.
#[derive(Debug, Clone)]
struct FeatureStats {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl FeatureStats {
    fn new(dim: usize) -> Self {
        Self {
            count: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.count += 1.0;
        for ((m, m2), v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / self.count;
            *m2 += d * (v - *m);
        }
    }

    fn norm(&self) -> InputNorm {
        let std = self
            .m2
            .iter()
            .map(|m2| {
                let var = if self.count > 1.0 { m2 / (self.count - 1.0) } else { 0.0 };
                if var > 0.0 {
                    var.sqrt().max(MIN_INPUT_STD)
                } else {
                    1.0
                }
            })
            .collect();
        InputNorm {
            mean: self.mean.clone(),
            std,
        }
    }
}

struct UpdateStats {
    policy_loss: f64,
    critic_loss: f64,
    entropy: f64,
}

#[allow(clippy::too_many_arguments)]
fn update(
    policy: &mut Policy,
    critic: &mut Mlp,
    popt: &mut Adam,
    copt: &mut Adam,
    batch: &[Transition],
    world: &World,
    entropy_coef: f64,
    reward_scale: f64,
    rng: &mut ChaCha8Rng,
) -> UpdateStats {
    let rl = &world.scenario.rl;
    let targets: Vec<f64> = batch
        .iter()
        .map(|tr| {
            let v_next = if tr.done { 0.0 } else { critic.output(&tr.next_state)[0] };
            bootstrap_target(tr.reward / reward_scale, rl.gamma, tr.dt, v_next, tr.done)
        })
        .collect();
    let mut adv: Vec<f64> = batch
        .iter()
        .map(|tr| {
            let v_next = if tr.done { 0.0 } else { critic.output(&tr.next_state)[0] };
            advantage(tr.reward / reward_scale, rl.gamma, tr.dt, v_next, critic.output(&tr.state)[0], tr.done)
        })
        .collect();
    // centring a handful of samples mostly compares unrelated windows, so
    // small batches keep the critic's baseline alone
    if adv.len() >= ADVANTAGE_NORMALIZE_MIN {
        let mean = adv.iter().sum::<f64>() / adv.len() as f64;
        let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / adv.len() as f64;
        let std = var.sqrt().max(1e-8);
        for a in adv.iter_mut() {
            *a = (*a - mean) / std;
        }
    }
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut stats = UpdateStats {
        policy_loss: 0.0,
        critic_loss: 0.0,
        entropy: 0.0,
    };
    for _ in 0..rl.epochs {
        order.shuffle(rng);
        let mut pl = 0.0;
        let mut cl = 0.0;
        let mut ent = 0.0;
        let mut chunks = 0.0;
        for chunk in order.chunks(rl.minibatch) {
            let samples: Vec<(&_, &Action, f64, f64)> = chunk
                .iter()
                .map(|&i| (&batch[i].observation, &batch[i].action, batch[i].old_log_prob, adv[i]))
                .collect();
            let loss = clipped_policy_loss(policy, &samples, rl.clip, entropy_coef);
            // ascend the surrogate: descend its negation
            let mut g: Vec<f64> = loss.grad.iter().map(|v| -v).collect();
            clip_global_norm(&mut g, rl.max_grad_norm);
            let mut p = policy.params();
            popt.step(&mut p, &g);
            policy.set_params(&p);

            let states: Vec<(&[f64], f64)> = chunk.iter().map(|&i| (batch[i].state.as_slice(), targets[i])).collect();
            let (c_loss, mut cg) = critic_loss(critic, &states);
            clip_global_norm(&mut cg, rl.max_grad_norm);
            let mut cp = critic.params();
            copt.step(&mut cp, &cg);
            critic.set_params(&cp);

            pl += -loss.surrogate;
            cl += c_loss;
            ent += loss.entropy;
            chunks += 1.0;
        }
        stats = UpdateStats {
            policy_loss: pl / chunks,
            critic_loss: cl / chunks,
            entropy: ent / chunks,
        };
    }
    stats
}

fn episode_seed(seed: u64, episode: usize) -> u64 {
    seed ^ (episode as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Trains the policy of a learned scheme on `world`.
pub fn train(world: &World, scheme: Scheme, options: &TrainOptions) -> Result<TrainOutcome, MarlError> {
    assert!(scheme != Scheme::Idoa, "the benchmark without learning has nothing to train");
    let rl = world.scenario.rl.clone();
    let mut policy = initial_policy(world, scheme, options.seed);
    let mut critic = initial_critic(world, options.seed);
    let mut popt = Adam::new(policy.param_count(), rl.lr_policy);
    let mut copt = Adam::new(critic.param_count(), rl.lr_critic);
    let mut curve = Vec::with_capacity(options.episodes);
    let mut evaluations = Vec::new();
    let mut best = policy.clone();
    let mut best_cost = f64::INFINITY;
    let evaluate = rl.eval_every > 0 && options.episodes > 0;
    if evaluate {
        best_cost = greedy_cost(world, scheme, &policy)?;
        evaluations.push((0, best_cost));
    }
    let mut entropy_coef = rl.entropy_coef;
    let mut scale = RewardScale::default();
    let mut inputs = FeatureStats::new(world.observation.dim());
    for ep in 0..options.episodes {
        let episode = {
            let snapshot = &policy;
            let mut sample_rng = ChaCha8Rng::seed_from_u64(episode_seed(options.seed, ep));
            let mut act = |obs: &super::observation::Observation| snapshot.sample(obs, &mut sample_rng);
            let opts = EpisodeOptions {
                record_states: true,
                log: None,
            };
            run_episode(world, scheme, Some(&mut act), opts)?
        };
        // the update stream is decoupled from the sampling stream
        let mut rng = ChaCha8Rng::seed_from_u64(episode_seed(options.seed, ep) ^ 0xa5a5_a5a5);
        for d in episode.decisions.iter().filter(|d| d.action.is_some()) {
            inputs.push(&d.observation.features);
        }
        policy.input = inputs.norm();
        let batch = transitions(&episode.decisions, &policy, world.state_dim());
        for tr in &batch {
            scale.push(tr.reward);
        }
        let last_good = policy.clone();
        let stats = if batch.is_empty() {
            UpdateStats {
                policy_loss: 0.0,
                critic_loss: 0.0,
                entropy: 0.0,
            }
        } else {
            update(
                &mut policy,
                &mut critic,
                &mut popt,
                &mut copt,
                &batch,
                world,
                entropy_coef,
                scale.scale(),
                &mut rng,
            )
        };
        let finite = stats.policy_loss.is_finite() && stats.critic_loss.is_finite();
        if !finite || !policy.is_finite() || !critic.is_finite() {
            return Err(MarlError::Divergence {
                episode: ep,
                reason: format!(
                    "non-finite loss or parameters (policy loss {}, critic loss {})",
                    stats.policy_loss, stats.critic_loss
                ),
                last_good: Box::new(last_good),
            });
        }
        entropy_coef *= rl.entropy_decay;
        let rewards: Vec<f64> = episode.decisions.iter().filter(|d| d.complete).map(|d| d.reward).collect();
        let mean_reward = if rewards.is_empty() {
            0.0
        } else {
            rewards.iter().sum::<f64>() / rewards.len() as f64
        };
        curve.push(CurvePoint {
            episode: ep + 1,
            cumulative_cost: episode.report.total_cost(),
            mean_reward,
            policy_loss: stats.policy_loss,
            critic_loss: stats.critic_loss,
            entropy: stats.entropy,
        });
        log::info!(
            "{} episode {} cost {:.4} reward {:.4}",
            scheme.name(),
            ep + 1,
            episode.report.total_cost(),
            mean_reward
        );
        if evaluate && ((ep + 1) % rl.eval_every == 0 || ep + 1 == options.episodes) {
            let cost = greedy_cost(world, scheme, &policy)?;
            evaluations.push((ep + 1, cost));
            if cost < best_cost {
                best_cost = cost;
                best = policy.clone();
            }
        }
        if let Some(dir) = &options.checkpoint_dir {
            let every = options.checkpoint_every.max(1);
            if (ep + 1) % every == 0 || ep + 1 == options.episodes {
                write_checkpoint(dir, ep + 1, &policy)?;
            }
        }
    }
    let last_policy = policy.clone();
    Ok(TrainOutcome {
        policy: if evaluate { best } else { policy },
        last_policy,
        critic,
        curve,
        evaluations,
    })
}

pub fn checkpoint_path(dir: &std::path::Path, episode: usize) -> PathBuf {
    dir.join(format!("policy_ep{episode}.stinpol"))
}

pub fn write_checkpoint(dir: &std::path::Path, episode: usize, policy: &Policy) -> Result<PathBuf, MarlError> {
    let path = checkpoint_path(dir, episode);
    std::fs::write(&path, checkpoint::encode(policy)).map_err(|source| MarlError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

pub fn read_checkpoint(path: &std::path::Path) -> Result<Policy, MarlError> {
    let bytes = std::fs::read(path).map_err(|source| MarlError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    checkpoint::decode(&bytes)
}

/// First episode (1-based) at which the forward moving average of `span`
/// costs reaches `factor` times the final cost, the final cost being the
/// mean of the last tenth of the curve.
pub fn episodes_to_converge(costs: &[f64], factor: f64, span: usize) -> Option<usize> {
    if costs.is_empty() {
        return None;
    }
    let tail = (costs.len() / 10).max(1);
    let last = &costs[costs.len() - tail..];
    let target = factor * last.iter().sum::<f64>() / tail as f64;
    let span = span.max(1);
    (0..costs.len()).find_map(|e| {
        let end = (e + span).min(costs.len());
        let avg = costs[e..end].iter().sum::<f64>() / (end - e) as f64;
        (avg <= target).then_some(e + 1)
    })
}
