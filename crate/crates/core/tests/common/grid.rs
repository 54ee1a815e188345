//! Exhaustive 0.01-grid oracle for the single-cell window problem, and a
//! generator of small random instances for it.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use stin_slicing::constellation::{AccessPoint, ApLink, CellAccess, SatId};
use stin_slicing::demand::SlicingWindow;
use stin_slicing::qos::{ApClassParams, LinkParams, SliceParams};
use stin_slicing::reservation::{CostWeights, SlotInput, WindowProblem};

pub const STEPS: usize = 100;
const C_LIGHT: f64 = 2.998e8;

/// Per access point, per slot: (packets/s per unit ratio, delay bound) for
/// both slices, or `None` when unreachable. Recomputed here from first
/// principles rather than through the library's helpers.
struct Channel {
    reach: Vec<Option<[(f64, f64); 2]>>,
    terrestrial: bool,
    unit_cost: f64,
}

fn channels(p: &WindowProblem) -> Vec<Channel> {
    p.selected
        .iter()
        .map(|&ap| {
            let class = match ap {
                AccessPoint::Terrestrial => p.link.terrestrial,
                AccessPoint::Satellite(_) => p.link.satellite,
            };
            let reach = p
                .slots
                .iter()
                .map(|s| {
                    let link = s.access.links.iter().find(|l| l.ap == ap)?;
                    let d = link.distance_m;
                    let h = d.powf(-class.pathloss_exponent);
                    let se = (1.0 + class.power_w * h * h / p.link.noise_w).log2();
                    Some(std::array::from_fn(|l| {
                        let sp = p.link.slices[l];
                        let k = class.bandwidth_hz * se / sp.packet_bits;
                        let bound = if ap.is_satellite() { sp.delay_bound_s - d / C_LIGHT } else { sp.delay_bound_s };
                        (k, bound)
                    }))
                })
                .collect();
            let alpha = if ap.is_satellite() { p.weights.alpha_satellite } else { p.weights.alpha_terrestrial };
            let omega = match ap {
                AccessPoint::Satellite(s) => p.omega.get(&s).copied().unwrap_or(1.0),
                AccessPoint::Terrestrial => 1.0,
            };
            Channel { reach, terrestrial: !ap.is_satellite(), unit_cost: alpha * class.bandwidth_hz * omega }
        })
        .collect()
}

fn tail(theta: f64, rate: f64, bound: f64) -> f64 {
    if bound <= 0.0 {
        1.0
    } else {
        (-theta * rate * bound).exp()
    }
}

/// Cost of one slice for a grid vector `idx` of ratios (in grid steps) and
/// activation flags `r`, or infinity when a constraint fails.
fn slice_cost(p: &WindowProblem, ch: &[Channel], l: usize, idx: &[usize], r: &[bool]) -> f64 {
    let theta = p.link.theta;
    let factor = theta / (theta.exp() - 1.0);
    let mut cost = 0.0;
    for (j, c) in ch.iter().enumerate() {
        let b = idx[j] as f64 / STEPS as f64;
        if b > 0.0 && !r[j] {
            return f64::INFINITY;
        }
        let reach = c.reach.iter().filter(|x| x.is_some()).count() as f64;
        cost += p.weights.beta1 * c.unit_cost * reach * b;
        if l == 0 && r[j] {
            for x in c.reach.iter().flatten() {
                let (k, bound) = x[0];
                if tail(theta, k * b, bound) > p.link.epsilon + 1e-12 {
                    return f64::INFINITY;
                }
            }
        }
    }
    for (t, s) in p.slots.iter().enumerate() {
        let mut supported = 0.0;
        let mut worst: f64 = 0.0;
        for (j, c) in ch.iter().enumerate() {
            let Some(x) = c.reach[t] else { continue };
            let b = idx[j] as f64 / STEPS as f64;
            let (k, bound) = x[l];
            let queue = factor * k * b;
            supported += if c.terrestrial {
                (queue * p.base_stations as f64).min(s.lambda_covered[l])
            } else {
                queue
            };
            if l == 1 {
                let rr = if r[j] { 1.0 } else { 0.0 };
                worst = worst.max(tail(theta, k * b, bound) + rr - 1.0);
            }
        }
        if supported < s.lambda[l] - 1e-9 {
            return f64::INFINITY;
        }
        cost += p.weights.beta2 * worst;
    }
    cost
}

/// Minimum over every activation vector compatible with the ratios.
fn best_over_activation(p: &WindowProblem, ch: &[Channel], l: usize, idx: &[usize]) -> f64 {
    let m = idx.len();
    let mut best = f64::INFINITY;
    // a positive ratio needs r = 1; only zero ratios leave r free
    for mask in 0..(1u32 << m) {
        let r: Vec<bool> = (0..m).map(|j| mask & (1 << j) != 0).collect();
        if (0..m).any(|j| idx[j] > 0 && !r[j]) {
            continue;
        }
        best = best.min(slice_cost(p, ch, l, idx, &r));
    }
    best
}

fn decode(mut code: usize, m: usize) -> Vec<usize> {
    let mut v = vec![0; m];
    for x in v.iter_mut() {
        *x = code % (STEPS + 1);
        code /= STEPS + 1;
    }
    v
}

/// Grid optimum of the window objective (resource plus dissatisfaction),
/// or `None` when no grid point is feasible.
pub fn grid_optimum(p: &WindowProblem) -> Option<f64> {
    let ch = channels(p);
    let m = ch.len();
    let n = (STEPS + 1).pow(m as u32);
    let mut c1: Vec<f64> = (0..n).map(|code| best_over_activation(p, &ch, 0, &decode(code, m))).collect();
    // componentwise prefix minimum: c1[x] = min over y <= x
    let mut stride = 1;
    for _ in 0..m {
        for code in 0..n {
            if (code / stride) % (STEPS + 1) > 0 {
                let prev = c1[code - stride];
                if prev < c1[code] {
                    c1[code] = prev;
                }
            }
        }
        stride *= STEPS + 1;
    }
    let mut best = f64::INFINITY;
    for code in 0..n {
        let idx = decode(code, m);
        let c2 = best_over_activation(p, &ch, 1, &idx);
        if !c2.is_finite() {
            continue;
        }
        let mut comp = 0;
        let mut s = 1;
        for &i in &idx {
            comp += (STEPS - i) * s;
            s *= STEPS + 1;
        }
        best = best.min(c2 + c1[comp]);
    }
    best.is_finite().then_some(best)
}

/// Random single-cell instance with at most three access points and two slots.
pub fn random_instance(seed: u64) -> WindowProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slots = rng.random_range(1..=2usize);
    let has_terrestrial = rng.random_bool(0.6);
    let max_sats = if has_terrestrial { 2 } else { 3 };
    let sats = rng.random_range(1..=max_sats);
    let mut aps = Vec::new();
    if has_terrestrial {
        aps.push(AccessPoint::Terrestrial);
    }
    for s in 0..sats {
        aps.push(AccessPoint::Satellite(SatId(10 + s as u32)));
    }
    let link = LinkParams {
        terrestrial: ApClassParams { bandwidth_hz: 5e6, power_w: 25_000.0, pathloss_exponent: 0.5 },
        satellite: ApClassParams { bandwidth_hz: 15e6, power_w: 1e7 * rng.random_range(0.5..2.0), pathloss_exponent: 0.5 },
        noise_w: 1.0,
        theta: [0.5, 1.0, 2.0][rng.random_range(0..3)],
        slices: [
            SliceParams { packet_bits: 0.2e6, delay_bound_s: 0.05 },
            SliceParams { packet_bits: 2e6, delay_bound_s: 0.3 },
        ],
        epsilon: 0.01,
    };
    let mut access: Vec<Vec<ApLink>> = vec![Vec::new(); slots];
    for &ap in &aps {
        let reach: Vec<bool> = if ap.is_satellite() && slots == 2 {
            match rng.random_range(0..4) {
                0 => vec![true, false],
                1 => vec![false, true],
                _ => vec![true, true],
            }
        } else {
            vec![true; slots]
        };
        for t in 0..slots {
            if !reach[t] {
                continue;
            }
            let d = if ap.is_satellite() { rng.random_range(550e3..1200e3) } else { 500.0 };
            access[t].push(ApLink {
                ap,
                distance_m: d,
                prop_delay_s: if ap.is_satellite() { d / C_LIGHT } else { 0.0 },
                elevation_deg: 45.0,
                range_rate_mps: 0.0,
            });
        }
    }
    let base_stations = rng.random_range(1..=2u32);
    let slot_inputs = (0..slots)
        .map(|t| {
            let total1: f64 = rng.random_range(0.0..70.0);
            let total2: f64 = rng.random_range(0.0..8.0);
            let uncovered: f64 = if has_terrestrial { rng.random_range(0.1..0.6) } else { 1.0 };
            SlotInput {
                slot: t,
                access: CellAccess { cell_id: 1, links: access[t].clone() },
                lambda: [total1, total2],
                lambda_covered: [total1 * (1.0 - uncovered), total2 * (1.0 - uncovered)],
            }
        })
        .collect();
    let mut omega = BTreeMap::new();
    if rng.random_bool(0.3) {
        omega.insert(SatId(10), rng.random_range(0.5..3.0));
    }
    WindowProblem {
        cell: 0,
        window: SlicingWindow { cell: 0, index: 0, start: 0, len: slots },
        selected: aps,
        slots: slot_inputs,
        base_stations,
        weights: CostWeights {
            beta1: 1.0,
            beta2: rng.random_range(0.5..5.0),
            beta3: 1.0,
            alpha_terrestrial: 0.3 / 5e6,
            alpha_satellite: rng.random_range(0.5..2.0) / 15e6,
        },
        omega,
        link,
        pinned: BTreeMap::new(),
        from_slot: 0,
    }
}
