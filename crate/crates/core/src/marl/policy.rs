//! Policy heads over the shared MLP: masked multi-Bernoulli satellite
//! selection, and per-slice Gaussian reservation logits for the
//! direct-ratio benchmark.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::nn::{Mlp, Trace};
use super::observation::Observation;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyKind {
    /// One Bernoulli per satellite slot; the terrestrial slot is forced.
    Selection,
    /// Two Gaussian logits per slot, squashed by a sigmoid into ratios.
    Ratio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Action {
    Select(Vec<bool>),
    /// Pre-sigmoid logits, slot-major: `[slot0 slice1, slot0 slice2, ...]`.
    Ratios(Vec<f64>),
}

impl Action {
    /// Reservation ratios per slot from ratio logits, rescaled so each
    /// access point stays within one unit.
    pub fn ratios(&self, mask: &[bool]) -> Vec<[f64; 2]> {
        match self {
            Action::Select(_) => vec![[0.0; 2]; mask.len()],
            Action::Ratios(u) => mask
                .iter()
                .enumerate()
                .map(|(j, &m)| {
                    if !m {
                        return [0.0; 2];
                    }
                    let b = [sigmoid(u[2 * j]), sigmoid(u[2 * j + 1])];
                    let s = b[0] + b[1];
                    if s > 1.0 {
                        [b[0] / s, b[1] / s]
                    } else {
                        b
                    }
                })
                .collect(),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Normalised inputs are clipped to this magnitude.
pub const INPUT_CLIP: f64 = 5.0;

/// Per-feature standardisation applied to observations before the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl InputNorm {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| ((v - m) / s).clamp(-INPUT_CLIP, INPUT_CLIP))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub kind: PolicyKind,
    pub net: Mlp,
    /// Per-output log standard deviation of the ratio head; empty for
    /// selection.
    pub log_std: Vec<f64>,
    pub input: InputNorm,
}

/// Log-probability, entropy and their parameter gradients for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub log_prob: f64,
    pub entropy: f64,
}

impl Policy {
    pub fn new(kind: PolicyKind, net: Mlp, init_log_std: f64) -> Self {
        let log_std = match kind {
            PolicyKind::Selection => Vec::new(),
            PolicyKind::Ratio => vec![init_log_std; net.output_dim()],
        };
        let input = InputNorm::identity(net.input_dim());
        Self {
            kind,
            net,
            log_std,
            input,
        }
    }

    pub fn a_max(&self) -> usize {
        match self.kind {
            PolicyKind::Selection => self.net.output_dim(),
            PolicyKind::Ratio => self.net.output_dim() / 2,
        }
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count() + self.log_std.len()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.net.params();
        p.extend_from_slice(&self.log_std);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let n = self.net.param_count();
        self.net.set_params(&p[..n]);
        self.log_std.copy_from_slice(&p[n..]);
    }

    pub fn is_finite(&self) -> bool {
        self.net.is_finite() && self.log_std.iter().all(|v| v.is_finite())
    }

    /// Per-slot selection probabilities: masked slots are 0 and the
    /// terrestrial slot is 1 when present.
    pub fn probabilities(&self, obs: &Observation) -> Vec<f64> {
        assert_eq!(self.kind, PolicyKind::Selection);
        let out = self.net.output(&self.input.apply(&obs.features));
        obs.mask
            .iter()
            .enumerate()
            .map(|(j, &m)| match (m, j) {
                (false, _) => 0.0,
                (true, 0) => 1.0,
                (true, _) => sigmoid(out[j]),
            })
            .collect()
    }

    /// Ratio head means (pre-sigmoid) for every slot and slice.
    pub fn means(&self, obs: &Observation) -> Vec<f64> {
        assert_eq!(self.kind, PolicyKind::Ratio);
        self.net.output(&self.input.apply(&obs.features))
    }

    pub fn sample<R: Rng>(&self, obs: &Observation, rng: &mut R) -> Action {
        match self.kind {
            PolicyKind::Selection => {
                let p = self.probabilities(obs);
                // one uniform per slot keeps the stream aligned across masks
                Action::Select(p.iter().map(|&q| rng.random::<f64>() < q).collect())
            }
            PolicyKind::Ratio => {
                let mu = self.means(obs);
                let u = mu
                    .iter()
                    .zip(&self.log_std)
                    .enumerate()
                    .map(|(i, (m, s))| {
                        let z: f64 = StandardNormal.sample(rng);
                        if obs.mask[i / 2] {
                            m + s.exp() * z
                        } else {
                            0.0
                        }
                    })
                    .collect();
                Action::Ratios(u)
            }
        }
    }

    /// Most likely action.
    pub fn greedy(&self, obs: &Observation) -> Action {
        match self.kind {
            PolicyKind::Selection => Action::Select(self.probabilities(obs).iter().map(|&q| q >= 0.5).collect()),
            PolicyKind::Ratio => {
                let mu = self.means(obs);
                Action::Ratios(
                    mu.iter()
                        .enumerate()
                        .map(|(i, &m)| if obs.mask[i / 2] { m } else { 0.0 })
                        .collect(),
                )
            }
        }
    }

    /// Log-probability and entropy of `action` under the policy. When
    /// `grad` is given, adds `c_logp * d logp + c_ent * d entropy` to it.
    pub fn evaluate(
        &self,
        obs: &Observation,
        action: &Action,
        grad: Option<(&mut [f64], f64, f64)>,
    ) -> Evaluation {
        let trace = self.net.forward(&self.input.apply(&obs.features));
        match (self.kind, action) {
            (PolicyKind::Selection, Action::Select(a)) => self.evaluate_selection(obs, a, &trace, grad),
            (PolicyKind::Ratio, Action::Ratios(u)) => self.evaluate_ratio(obs, u, &trace, grad),
            _ => panic!("action does not match the policy head"),
        }
    }

    fn evaluate_selection(
        &self,
        obs: &Observation,
        a: &[bool],
        trace: &Trace,
        grad: Option<(&mut [f64], f64, f64)>,
    ) -> Evaluation {
        let x = trace.output();
        let mut log_prob = 0.0;
        let mut entropy = 0.0;
        let mut d_out = vec![0.0; x.len()];
        let (c_logp, c_ent) = grad.as_ref().map_or((0.0, 0.0), |g| (g.1, g.2));
        // slot 0 is terrestrial and never sampled
        for j in 1..obs.mask.len() {
            if !obs.mask[j] {
                continue;
            }
            let p = sigmoid(x[j]);
            // log p = -softplus(-x), log(1-p) = -softplus(x)
            let lp = if a[j] { -softplus(-x[j]) } else { -softplus(x[j]) };
            log_prob += lp;
            entropy += softplus(x[j]) - x[j] * p;
            let d_logp = if a[j] { 1.0 - p } else { -p };
            let d_ent = -x[j] * p * (1.0 - p);
            d_out[j] = c_logp * d_logp + c_ent * d_ent;
        }
        if let Some((g, _, _)) = grad {
            let n = self.net.param_count();
            self.net.backward(trace, &d_out, &mut g[..n]);
        }
        Evaluation { log_prob, entropy }
    }

    fn evaluate_ratio(
        &self,
        obs: &Observation,
        u: &[f64],
        trace: &Trace,
        grad: Option<(&mut [f64], f64, f64)>,
    ) -> Evaluation {
        let mu = trace.output();
        let mut log_prob = 0.0;
        let mut entropy = 0.0;
        let mut d_out = vec![0.0; mu.len()];
        let mut d_std = vec![0.0; mu.len()];
        let (c_logp, c_ent) = grad.as_ref().map_or((0.0, 0.0), |g| (g.1, g.2));
        for i in 0..mu.len() {
            if !obs.mask[i / 2] {
                continue;
            }
            let s = self.log_std[i];
            let var = (2.0 * s).exp();
            let diff = u[i] - mu[i];
            log_prob += -0.5 * diff * diff / var - s - 0.5 * LN_2PI;
            entropy += s + 0.5 * (LN_2PI + 1.0);
            d_out[i] = c_logp * diff / var;
            d_std[i] = c_logp * (diff * diff / var - 1.0) + c_ent;
        }
        if let Some((g, _, _)) = grad {
            let n = self.net.param_count();
            let (gn, gs) = g.split_at_mut(n);
            self.net.backward(trace, &d_out, gn);
            for (a, b) in gs.iter_mut().zip(&d_std) {
                *a += b;
            }
        }
        Evaluation { log_prob, entropy }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obs(mask: Vec<bool>, dim: usize, rng: &mut ChaCha8Rng) -> Observation {
        let a = mask.len();
        Observation {
            cell: 0,
            window_index: 0,
            features: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
            mask,
            slots: vec![None; a],
        }
    }

    #[test]
    fn zero_weights_give_half() {
        let p = Policy::new(PolicyKind::Selection, Mlp::zeros(&[4, 3, 3]), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let o = obs(vec![true, true, false], 4, &mut rng);
        assert_eq!(p.probabilities(&o), vec![1.0, 0.5, 0.0]);
    }

    #[test]
    fn terrestrial_only_is_a_single_outcome() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = Policy::new(PolicyKind::Selection, Mlp::new(&[4, 8, 3], 1.0, &mut rng), 0.0);
        let o = obs(vec![true, false, false], 4, &mut rng);
        for _ in 0..20 {
            assert_eq!(p.sample(&o, &mut rng), Action::Select(vec![true, false, false]));
        }
        let e = p.evaluate(&o, &Action::Select(vec![true, false, false]), None);
        assert_eq!(e.log_prob, 0.0);
        assert_eq!(e.entropy, 0.0);
    }

    #[test]
    fn ratio_actions_stay_within_one_unit() {
        let a = Action::Ratios(vec![5.0, 5.0, -1.0, 0.0]);
        let r = a.ratios(&[true, true]);
        assert!((r[0][0] + r[0][1] - 1.0).abs() < 1e-12);
        assert!((r[1][0] - sigmoid(-1.0)).abs() < 1e-15 && r[1][1] == 0.5);
        assert_eq!(a.ratios(&[false, true])[0], [0.0, 0.0]);
    }

    fn check_gradient(kind: PolicyKind, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = match kind {
            PolicyKind::Selection => 4,
            PolicyKind::Ratio => 8,
        };
        let mut p = Policy::new(kind, Mlp::new(&[6, 5, out], 1.0, &mut rng), -0.3);
        let o = obs(vec![true, true, false, true], 6, &mut rng);
        let action = p.sample(&o, &mut rng);
        let (c1, c2) = (0.7, 0.3);
        let mut g = vec![0.0; p.param_count()];
        p.evaluate(&o, &action, Some((&mut g, c1, c2)));
        let base = p.params();
        let f = |p: &Policy| {
            let e = p.evaluate(&o, &action, None);
            c1 * e.log_prob + c2 * e.entropy
        };
        let h = 1e-5;
        for i in 0..base.len() {
            let mut q = base.clone();
            q[i] += h;
            p.set_params(&q);
            let up = f(&p);
            q[i] -= 2.0 * h;
            p.set_params(&q);
            let down = f(&p);
            p.set_params(&base);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn selection_gradient_matches_finite_differences() {
        for seed in 0..3 {
            check_gradient(PolicyKind::Selection, seed);
        }
    }

    #[test]
    fn ratio_gradient_matches_finite_differences() {
        for seed in 0..3 {
            check_gradient(PolicyKind::Ratio, seed);
        }
    }
}
