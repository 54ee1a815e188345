//! Per-cell, per-slice Poisson intensity traces and slicing-window planning.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::qos::Slice;

/// Lower clamp on the reference intensity in the window-variation rule.
pub const DEFAULT_LAMBDA_FLOOR: f64 = 1e-6;

/// Shape multiplying the base intensity, evaluated at slot midpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Modulation {
    #[default]
    Constant,
    /// Linear interpolation between `(slot, multiplier)` knots, held
    /// constant outside the knot range.
    Piecewise { knots: Vec<(f64, f64)> },
    /// `1 + amplitude * sin(2*pi*(x - phase_slots) / period_slots)`.
    Sinusoid {
        amplitude: f64,
        period_slots: f64,
        #[serde(default)]
        phase_slots: f64,
    },
}

impl Modulation {
    pub fn value(&self, x: f64) -> f64 {
        match self {
            Modulation::Constant => 1.0,
            Modulation::Piecewise { knots } => interpolate(knots, x),
            Modulation::Sinusoid {
                amplitude,
                period_slots,
                phase_slots,
            } => {
                1.0 + amplitude
                    * (2.0 * std::f64::consts::PI * (x - phase_slots) / period_slots).sin()
            }
        }
    }
}

fn interpolate(knots: &[(f64, f64)], x: f64) -> f64 {
    match knots {
        [] => 1.0,
        [(_, y)] => *y,
        _ => {
            if x <= knots[0].0 {
                return knots[0].1;
            }
            for pair in knots.windows(2) {
                let (x0, y0) = pair[0];
                let (x1, y1) = pair[1];
                if x <= x1 {
                    if x1 == x0 {
                        return y1;
                    }
                    return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
                }
            }
            knots[knots.len() - 1].1
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Burst {
    pub slot: usize,
    #[serde(default = "one")]
    pub duration_slots: usize,
    pub multiplier: f64,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SliceDemand {
    /// Arrivals per second before modulation.
    pub base_intensity: f64,
    #[serde(default)]
    pub modulation: Modulation,
    #[serde(default)]
    pub bursts: Vec<Burst>,
    /// Standard deviation of the multiplicative per-slot jitter.
    #[serde(default)]
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDemand {
    pub cell_id: u32,
    /// Share of the demand only satellites can reach.
    pub uncovered_fraction: f64,
    pub slices: [SliceDemand; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct DemandProfile {
    pub seed: u64,
    pub cells: Vec<CellDemand>,
}

impl DemandProfile {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        for (i, c) in self.cells.iter().enumerate() {
            if !(0.0..=1.0).contains(&c.uncovered_fraction) {
                errs.push(format!("demand[{i}].uncovered_fraction must be within [0, 1]"));
            }
            for (l, s) in c.slices.iter().enumerate() {
                if !(s.base_intensity >= 0.0) {
                    errs.push(format!("demand[{i}].slices[{l}].base_intensity must be >= 0"));
                }
                if !(s.noise_std >= 0.0) {
                    errs.push(format!("demand[{i}].slices[{l}].noise_std must be >= 0"));
                }
                if let Modulation::Sinusoid { period_slots, .. } = s.modulation {
                    if !(period_slots > 0.0) {
                        errs.push(format!("demand[{i}].slices[{l}] sinusoid period must be > 0"));
                    }
                }
                for b in &s.bursts {
                    if !(b.multiplier >= 0.0) {
                        errs.push(format!("demand[{i}].slices[{l}] burst multiplier must be >= 0"));
                    }
                }
            }
        }
        errs
    }
}

/// Intensities indexed `[cell][slice][slot]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandTrace {
    pub horizon: usize,
    lambda: Vec<[Vec<f64>; 2]>,
    covered: Vec<[Vec<f64>; 2]>,
    uncovered: Vec<[Vec<f64>; 2]>,
}

impl DemandTrace {
    /// Builds a trace from total intensities and per-cell uncovered shares.
    pub fn from_totals(totals: Vec<[Vec<f64>; 2]>, uncovered_fraction: &[f64]) -> Self {
        let horizon = totals.first().map(|c| c[0].len()).unwrap_or(0);
        let mut covered = Vec::with_capacity(totals.len());
        let mut uncovered = Vec::with_capacity(totals.len());
        for (n, cell) in totals.iter().enumerate() {
            let frac = uncovered_fraction[n];
            let nc: [Vec<f64>; 2] = std::array::from_fn(|l| cell[l].iter().map(|v| v * frac).collect());
            let c: [Vec<f64>; 2] =
                std::array::from_fn(|l| cell[l].iter().zip(&nc[l]).map(|(v, u)| v - u).collect());
            covered.push(c);
            uncovered.push(nc);
        }
        // recombined so that lambda == covered + uncovered holds bit for bit
        let lambda = covered
            .iter()
            .zip(&uncovered)
            .map(|(c, u): (&[Vec<f64>; 2], &[Vec<f64>; 2])| {
                std::array::from_fn(|l| c[l].iter().zip(&u[l]).map(|(a, b)| a + b).collect())
            })
            .collect();
        Self {
            horizon,
            lambda,
            covered,
            uncovered,
        }
    }

    pub fn cell_count(&self) -> usize {
        self.lambda.len()
    }

    pub fn lambda(&self, n: usize, slice: Slice, t: usize) -> f64 {
        self.lambda[n][slice.index()][t]
    }

    pub fn lambda_covered(&self, n: usize, slice: Slice, t: usize) -> f64 {
        self.covered[n][slice.index()][t]
    }

    pub fn lambda_uncovered(&self, n: usize, slice: Slice, t: usize) -> f64 {
        self.uncovered[n][slice.index()][t]
    }

    /// Scales every intensity; used by scenario transforms.
    pub fn scaled(&self, factor: f64) -> Self {
        let scale = |v: &Vec<[Vec<f64>; 2]>| {
            v.iter()
                .map(|c| std::array::from_fn(|l| c[l].iter().map(|x| x * factor).collect()))
                .collect()
        };
        Self {
            horizon: self.horizon,
            lambda: scale(&self.lambda),
            covered: scale(&self.covered),
            uncovered: scale(&self.uncovered),
        }
    }
}

/// Deterministic intensity of one slice at one slot, before jitter.
pub fn shaped_intensity(demand: &SliceDemand, t: usize) -> f64 {
    let mid = t as f64 + 0.5;
    let mut v = demand.base_intensity * demand.modulation.value(mid);
    for b in &demand.bursts {
        if t >= b.slot && t < b.slot + b.duration_slots {
            v *= b.multiplier;
        }
    }
    v.max(0.0)
}

/// Generates a trace over `horizon` slots. The jitter streams are drawn in
/// cell, slice, slot order from one seeded generator.
pub fn generate_trace(profile: &DemandProfile, horizon: usize) -> DemandTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let totals: Vec<[Vec<f64>; 2]> = profile
        .cells
        .iter()
        .map(|cell| {
            std::array::from_fn(|l| {
                let sd = &cell.slices[l];
                (0..horizon)
                    .map(|t| {
                        let base = shaped_intensity(sd, t);
                        if sd.noise_std > 0.0 {
                            let z: f64 = rng.sample(StandardNormal);
                            (base * (1.0 + sd.noise_std * z)).max(0.0)
                        } else {
                            base
                        }
                    })
                    .collect()
            })
        })
        .collect();
    let fractions: Vec<f64> = profile.cells.iter().map(|c| c.uncovered_fraction).collect();
    DemandTrace::from_totals(totals, &fractions)
}

/// Poisson arrival times over `[0, duration)` at a constant intensity.
pub fn sample_arrivals(intensity: f64, duration_s: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    homogeneous_arrivals(intensity, duration_s, &mut rng)
}

fn homogeneous_arrivals<R: Rng>(intensity: f64, duration_s: f64, rng: &mut R) -> Vec<f64> {
    if !(intensity > 0.0) || !(duration_s > 0.0) {
        return Vec::new();
    }
    let exp = Exp::new(intensity).expect("positive rate");
    let mut out = Vec::with_capacity((intensity * duration_s * 1.1) as usize + 8);
    let mut t = 0.0;
    loop {
        let dt: f64 = exp.sample(rng);
        t += dt;
        if t >= duration_s {
            break;
        }
        // equal timestamps are possible only through rounding
        if out.last().is_some_and(|&last| t <= last) {
            continue;
        }
        out.push(t);
    }
    out
}

/// Non-homogeneous arrivals by thinning: piece `k` covers
/// `[k*piece, (k+1)*piece)` at intensity `rates[k]`.
pub fn sample_arrivals_piecewise(rates: &[f64], piece_duration_s: f64, seed: u64) -> Vec<f64> {
    let peak = rates.iter().cloned().fold(0.0, f64::max);
    let duration = rates.len() as f64 * piece_duration_s;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let candidates = homogeneous_arrivals(peak, duration, &mut rng);
    candidates
        .into_iter()
        .filter(|&t| {
            let k = ((t / piece_duration_s) as usize).min(rates.len() - 1);
            let u: f64 = rng.random();
            u * peak < rates[k]
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowRule {
    pub max_slots: usize,
    pub threshold: f64,
    pub lambda_floor: f64,
}

impl WindowRule {
    pub fn new(max_slots: usize, threshold: f64) -> Self {
        Self {
            max_slots,
            threshold,
            lambda_floor: DEFAULT_LAMBDA_FLOOR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlicingWindow {
    pub cell: usize,
    pub index: usize,
    pub start: usize,
    pub len: usize,
}

impl SlicingWindow {
    pub fn end(&self) -> usize {
        self.start + self.len
    }

    pub fn slots(&self) -> std::ops::Range<usize> {
        self.start..self.end()
    }

    pub fn contains(&self, t: usize) -> bool {
        t >= self.start && t < self.end()
    }
}

/// Largest window length at `start` whose relative demand deviation from the
/// first slot stays within the threshold on every slice.
pub fn next_window_length(trace: &DemandTrace, n: usize, start: usize, rule: &WindowRule) -> usize {
    let limit = rule.max_slots.max(1).min(trace.horizon - start);
    let mut w = 1;
    while w < limit {
        let t = start + w;
        let within = Slice::ALL.iter().all(|&l| {
            let reference = trace.lambda(n, l, start);
            let dev = (trace.lambda(n, l, t) - reference).abs();
            dev / reference.max(rule.lambda_floor) <= rule.threshold
        });
        if !within {
            break;
        }
        w += 1;
    }
    w
}

/// Tiles the horizon of one cell with consecutive windows.
pub fn plan_windows(trace: &DemandTrace, n: usize, rule: &WindowRule) -> Vec<SlicingWindow> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < trace.horizon {
        let len = next_window_length(trace, n, start, rule);
        out.push(SlicingWindow {
            cell: n,
            index: out.len(),
            start,
            len,
        });
        start += len;
    }
    out
}
