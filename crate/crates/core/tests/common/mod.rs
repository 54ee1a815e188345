#![allow(dead_code)]

pub mod fixtures;
pub mod grid;

use std::path::PathBuf;

use stin_slicing::harness::scenario::{load_scenario, Scenario};
use stin_slicing::harness::sim::{run_episode, EpisodeOptions, Scheme, World};
use stin_slicing::marl::observation::Observation;
use stin_slicing::marl::policy::Action;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.toml"))
}

pub fn scenario(name: &str) -> Scenario {
    load_scenario(&scenario_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Selection that keeps the satellites whose bit is set in `code`, in the
/// order they appear in the mask; the terrestrial slot follows the mask.
fn selection(obs: &Observation, code: usize) -> Vec<bool> {
    let mut sel = vec![false; obs.mask.len()];
    sel[0] = obs.mask[0];
    let sats = (1..obs.mask.len()).filter(|&i| obs.mask[i]);
    for (k, i) in sats.enumerate() {
        sel[i] = code >> k & 1 == 1;
    }
    sel
}

/// Episode cost when the i-th decision of the episode uses `codes[i]`.
pub fn scripted_cost(world: &World, codes: &[usize]) -> f64 {
    let mut i = 0;
    let mut ctl = |obs: &Observation| {
        let a = Action::Select(selection(obs, codes[i]));
        i += 1;
        a
    };
    let ep = run_episode(world, Scheme::Drs, Some(&mut ctl), EpisodeOptions::default()).expect("episode");
    assert_eq!(i, codes.len(), "decision count changed with the selection");
    ep.report.total_cost()
}

/// Exhaustive minimum of the episode cost over every sequence of
/// satellite subsets, for worlds whose windows and candidate sets do not
/// depend on the selections. Returns the optimum and its codes.
pub fn enumerate_optimum(world: &World) -> (f64, Vec<usize>) {
    let mut radix = Vec::new();
    let mut probe = |obs: &Observation| {
        let sats = obs.mask.iter().skip(1).filter(|&&m| m).count();
        radix.push(1usize << sats);
        Action::Select(obs.mask.clone())
    };
    run_episode(world, Scheme::Drs, Some(&mut probe), EpisodeOptions::default()).expect("episode");
    let total: usize = radix.iter().product();
    assert!(total <= 1 << 16, "{total} sequences is too many to enumerate");
    let mut codes = vec![0usize; radix.len()];
    let mut best = (f64::INFINITY, codes.clone());
    for _ in 0..total {
        let cost = scripted_cost(world, &codes);
        if cost < best.0 {
            best = (cost, codes.clone());
        }
        for (c, r) in codes.iter_mut().zip(&radix) {
            *c += 1;
            if *c < *r {
                break;
            }
            *c = 0;
        }
    }
    best
}
