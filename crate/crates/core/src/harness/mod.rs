//! Scenario ingestion, the end-to-end simulation, benchmarks, sweeps and
//! exports.

pub mod export;
pub mod metrics;
pub mod scenario;
pub mod sim;

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::marl::policy::Policy;
use crate::reservation::ReservationError;
use metrics::MetricsReport;
use scenario::Scenario;
use sim::{run_episode, EpisodeOptions, Scheme, World};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error("scheme {0} needs a policy")]
    MissingPolicy(&'static str),
    #[error("policy action does not fit scheme {0}")]
    ActionShape(&'static str),
    #[error("policy expects {expected} inputs but the scenario encodes {found}")]
    PolicyShape { expected: usize, found: usize },
    #[error(transparent)]
    Reservation(#[from] ReservationError),
    #[error("{path}: {message}")]
    Export { path: PathBuf, message: String },
}

fn check_policy(world: &World, policy: &Policy) -> Result<(), HarnessError> {
    let found = world.observation.dim();
    let expected = policy.net.input_dim();
    if expected != found || policy.a_max() != world.observation.a_max {
        return Err(HarnessError::PolicyShape { expected, found });
    }
    Ok(())
}

/// Learned selection, local solve and coordination, with the greedy
/// action of `policy`.
pub fn run_drs(world: &World, policy: &Policy) -> Result<MetricsReport, HarnessError> {
    check_policy(world, policy)?;
    let mut act = |obs: &crate::marl::observation::Observation| policy.greedy(obs);
    Ok(run_episode(world, Scheme::Drs, Some(&mut act), EpisodeOptions::default())?.report)
}

/// Every reachable access point in every window.
pub fn run_benchmark_idoa(world: &World) -> Result<MetricsReport, HarnessError> {
    Ok(run_episode(world, Scheme::Idoa, None, EpisodeOptions::default())?.report)
}

/// Ratios straight from the policy's mean action; capacity is still
/// enforced by the coordination round.
pub fn run_benchmark_pure_amappo(world: &World, policy: &Policy) -> Result<MetricsReport, HarnessError> {
    check_policy(world, policy)?;
    let mut act = |obs: &crate::marl::observation::Observation| policy.greedy(obs);
    Ok(run_episode(world, Scheme::PureAmappo, Some(&mut act), EpisodeOptions::default())?.report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub angle_deg: f64,
    /// Satellite share of the resource cost over the run.
    pub satellite_resource: f64,
    /// Sum of satellite ratios over cells, slots and slices.
    pub satellite_ratio: f64,
    /// Mean slice-2 dissatisfaction probability, unsupported traffic
    /// counted as late.
    pub dissatisfaction: f64,
    /// Mean of the dissatisfaction cost alone.
    pub dissatisfaction_cost: f64,
    pub mean_slot_cost: f64,
}

/// One DRS evaluation per minimum elevation angle, in parallel.
pub fn sweep_elevation(scenario: &Scenario, angles: &[f64], policy: &Policy) -> Result<Vec<SweepRow>, HarnessError> {
    if let Some(a) = angles.iter().find(|a| !(0.0..90.0).contains(*a)) {
        return Err(HarnessError::Invalid(vec![format!("elevation angle {a} outside [0, 90)")]));
    }
    angles
        .par_iter()
        .map(|&angle| {
            let mut s = scenario.clone();
            s.constellation.min_elevation_deg = angle;
            let world = World::new(&s)?;
            let report = run_drs(&world, policy)?;
            Ok(SweepRow {
                angle_deg: angle,
                satellite_resource: report.satellite_resource_cost(),
                satellite_ratio: report.satellite_ratio(),
                dissatisfaction: report.effective_dissatisfaction(),
                dissatisfaction_cost: report.dissatisfaction_probability(),
                mean_slot_cost: report.mean_slot_cost(),
            })
        })
        .collect()
}
