//! Per-slot cost accounting and summary statistics of a run.

use serde::{Deserialize, Serialize};

use crate::marl::ppo::RewardWeights;

/// Costs of one cell in one slot.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    /// `sum_ap sum_l alpha_ap * b * B_ap`, unweighted.
    pub res_cost: f64,
    /// Satellite share of `res_cost`.
    pub satellite_res_cost: f64,
    /// Sum of satellite ratios over both slices.
    pub satellite_ratio: f64,
    /// Largest slice-2 violation probability over serving access points.
    pub dis_cost: f64,
    /// Slices whose demand exceeds the supported intensity.
    pub shortfall: [bool; 2],
    /// Some slice-1 reservation misses the reliability target.
    pub reliability_violation: bool,
    /// Unsupported share of each slice's demand.
    pub unserved: [f64; 2],
}

impl CostBreakdown {
    pub fn system(&self, beta1: f64, beta2: f64) -> f64 {
        beta1 * self.res_cost + beta2 * self.dis_cost
    }

    pub fn penalty(&self, p1: f64, p2: f64) -> f64 {
        let short = self.shortfall.iter().filter(|&&s| s).count() as f64;
        p1 * short + if self.reliability_violation { p2 } else { 0.0 }
    }

    pub fn total(&self, w: &RewardWeights) -> f64 {
        self.system(w.beta1, w.beta2) + self.penalty(w.p1, w.p2)
    }

    /// Probability that delay-tolerant traffic is not delivered within its
    /// bound, counting unsupported traffic as late.
    pub fn effective_dissatisfaction(&self) -> f64 {
        1.0 - (1.0 - self.dis_cost) * (1.0 - self.unserved[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub slot: usize,
    pub cell: usize,
    pub cost: CostBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scheme: String,
    pub horizon: usize,
    pub cell_count: usize,
    pub weights: RewardWeights,
    /// Slot-major, then by cell.
    pub records: Vec<SlotRecord>,
    /// Coordination iterations of every round that had satellite requests.
    pub idoa_iterations: Vec<u32>,
    /// Satellite-slot pairs whose load exceeds the beam capacity.
    pub capacity_violations: usize,
    /// Access point reservations above one unit or on unreachable slots.
    pub ratio_violations: usize,
    pub solver_failures: usize,
}

impl MetricsReport {
    pub fn system_cost_per_slot(&self) -> Vec<f64> {
        self.per_slot(|c| c.system(self.weights.beta1, self.weights.beta2))
    }

    /// System cost plus penalties, per slot.
    pub fn total_cost_per_slot(&self) -> Vec<f64> {
        self.per_slot(|c| c.total(&self.weights))
    }

    fn per_slot(&self, f: impl Fn(&CostBreakdown) -> f64) -> Vec<f64> {
        let mut out = vec![0.0; self.horizon];
        for r in &self.records {
            out[r.slot] += f(&r.cost);
        }
        out
    }

    pub fn total_system_cost(&self) -> f64 {
        self.system_cost_per_slot().iter().sum()
    }

    pub fn total_penalty(&self) -> f64 {
        self.records.iter().map(|r| r.cost.penalty(self.weights.p1, self.weights.p2)).sum()
    }

    pub fn total_cost(&self) -> f64 {
        self.total_cost_per_slot().iter().sum()
    }

    pub fn mean_slot_cost(&self) -> f64 {
        if self.horizon == 0 {
            0.0
        } else {
            self.total_cost() / self.horizon as f64
        }
    }

    pub fn resource_cost(&self) -> f64 {
        self.records.iter().map(|r| r.cost.res_cost).sum()
    }

    pub fn satellite_resource_cost(&self) -> f64 {
        self.records.iter().map(|r| r.cost.satellite_res_cost).sum()
    }

    pub fn satellite_ratio(&self) -> f64 {
        self.records.iter().map(|r| r.cost.satellite_ratio).sum()
    }

    /// Mean of the per cell-slot dissatisfaction cost.
    pub fn dissatisfaction_probability(&self) -> f64 {
        self.mean(|c| c.dis_cost)
    }

    pub fn effective_dissatisfaction(&self) -> f64 {
        self.mean(CostBreakdown::effective_dissatisfaction)
    }

    fn mean(&self, f: impl Fn(&CostBreakdown) -> f64) -> f64 {
        if self.records.is_empty() {
            0.0
        } else {
            self.records.iter().map(|r| f(&r.cost)).sum::<f64>() / self.records.len() as f64
        }
    }

    pub fn shortfall_count(&self) -> usize {
        self.records.iter().map(|r| r.cost.shortfall.iter().filter(|&&s| s).count()).sum()
    }

    pub fn reliability_violation_count(&self) -> usize {
        self.records.iter().filter(|r| r.cost.reliability_violation).count()
    }

    /// Empirical CDF of the per-slot system cost: sorted `(cost, fraction)`.
    pub fn cost_cdf(&self) -> Vec<(f64, f64)> {
        empirical_cdf(&self.system_cost_per_slot())
    }
}

pub fn empirical_cdf(samples: &[f64]) -> Vec<(f64, f64)> {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter().enumerate().map(|(i, &x)| (x, (i + 1) as f64 / n)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn penalty_counts_each_slice() {
        let c = CostBreakdown {
            shortfall: [true, true],
            reliability_violation: true,
            ..Default::default()
        };
        assert_eq!(c.penalty(5.0, 3.0), 13.0);
    }

    #[test]
    fn cdf_is_monotone_and_ends_at_one() {
        let cdf = empirical_cdf(&[3.0, 1.0, 2.0, 2.0]);
        assert_eq!(cdf.last().unwrap().1, 1.0);
        assert!(cdf.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 < w[1].1));
    }

    #[test]
    fn unserved_traffic_counts_as_late() {
        let c = CostBreakdown {
            dis_cost: 0.5,
            unserved: [0.0, 0.5],
            ..Default::default()
        };
        assert_eq!(c.effective_dissatisfaction(), 0.75);
    }
}
