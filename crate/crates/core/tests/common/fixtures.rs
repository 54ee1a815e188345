//! Multi-cell coordination rounds whose local solutions oversubscribe at
//! least one satellite.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use stin_slicing::constellation::{AccessPoint, ApLink, CellAccess, SatId};
use stin_slicing::coordination::CellRequest;
use stin_slicing::demand::SlicingWindow;
use stin_slicing::qos::{ApClassParams, LinkParams, SliceParams};
use stin_slicing::reservation::{solve_local, CostWeights, SlotInput, WindowProblem};

pub struct Round {
    pub problems: Vec<WindowProblem>,
    pub requests: Vec<CellRequest>,
    pub capacity: f64,
}

fn link(rng: &mut ChaCha8Rng) -> LinkParams {
    LinkParams {
        terrestrial: ApClassParams {
            bandwidth_hz: 5e6,
            power_w: 25_000.0,
            pathloss_exponent: 0.5,
        },
        satellite: ApClassParams {
            bandwidth_hz: 15e6,
            power_w: 1e7 * rng.random_range(0.5..2.0),
            pathloss_exponent: 0.5,
        },
        noise_w: 1.0,
        theta: 1.0,
        slices: [
            SliceParams {
                packet_bits: 0.2e6,
                delay_bound_s: 0.05,
            },
            SliceParams {
                packet_bits: 2e6,
                delay_bound_s: 0.3,
            },
        ],
        epsilon: 0.01,
    }
}

fn cell_problem(rng: &mut ChaCha8Rng, cell: usize, sats: &[SatId], slots: usize, link: &LinkParams) -> WindowProblem {
    let terrestrial = rng.random_bool(0.4);
    let mut selected = Vec::new();
    if terrestrial {
        selected.push(AccessPoint::Terrestrial);
    }
    selected.extend(sats.iter().map(|&s| AccessPoint::Satellite(s)));
    let inputs = (0..slots)
        .map(|t| {
            let mut links: Vec<ApLink> = sats
                .iter()
                .map(|&s| {
                    let d = rng.random_range(550e3..1000e3);
                    ApLink {
                        ap: AccessPoint::Satellite(s),
                        distance_m: d,
                        prop_delay_s: d / 2.998e8,
                        elevation_deg: 50.0,
                        range_rate_mps: 0.0,
                    }
                })
                .collect();
            if terrestrial {
                links.insert(
                    0,
                    ApLink {
                        ap: AccessPoint::Terrestrial,
                        distance_m: 500.0,
                        prop_delay_s: 0.0,
                        elevation_deg: 90.0,
                        range_rate_mps: 0.0,
                    },
                );
            }
            let l1 = rng.random_range(20.0..70.0);
            let l2 = rng.random_range(2.0..8.0);
            let covered = if terrestrial { rng.random_range(0.1..0.4) } else { 0.0 };
            SlotInput {
                slot: t,
                access: CellAccess {
                    cell_id: cell as u32 + 1,
                    links,
                },
                lambda: [l1, l2],
                lambda_covered: [l1 * covered, l2 * covered],
            }
        })
        .collect();
    WindowProblem {
        cell,
        window: SlicingWindow {
            cell,
            index: 0,
            start: 0,
            len: slots,
        },
        selected,
        slots: inputs,
        base_stations: 2,
        weights: CostWeights {
            beta1: 1.0,
            beta2: rng.random_range(1.0..5.0),
            beta3: 10.0,
            alpha_terrestrial: 0.5 / 5e6,
            alpha_satellite: rng.random_range(0.5..1.5) / 15e6,
        },
        omega: BTreeMap::new(),
        link: link.clone(),
        pinned: BTreeMap::new(),
        from_slot: 0,
    }
}

/// Two to four cells sharing one to three satellites. The beam capacity is
/// set below the heaviest satellite's requested load, so the first round is
/// always oversubscribed.
pub fn oversubscribed_round(seed: u64) -> Round {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = rng.random_range(2..=4usize);
    let sats: Vec<SatId> = (0..rng.random_range(1..=3u32)).map(|i| SatId(10 + i)).collect();
    let slots = rng.random_range(1..=2usize);
    let link = link(&mut rng);
    let problems: Vec<WindowProblem> = (0..cells).map(|n| cell_problem(&mut rng, n, &sats, slots, &link)).collect();
    let requests: Vec<CellRequest> = problems
        .iter()
        .map(|p| CellRequest {
            cell: p.cell,
            solution: solve_local(p).expect("local solve"),
            spans: sats.iter().map(|&s| (s, (0..slots).collect())).collect(),
        })
        .collect();
    let heaviest = sats
        .iter()
        .map(|&s| {
            requests
                .iter()
                .map(|r| r.solution.total_ratio(AccessPoint::Satellite(s)))
                .sum::<f64>()
        })
        .fold(0.0, f64::max);
    assert!(heaviest > 0.0, "seed {seed}: no satellite load to oversubscribe");
    Round {
        problems,
        requests,
        capacity: heaviest * rng.random_range(0.3..0.8),
    }
}
