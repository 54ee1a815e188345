//! Fixed-length observation of one cell at the start of one slicing window.

use serde::{Deserialize, Serialize};

use crate::constellation::{AccessPoint, ApLink, CellAccess};
use crate::demand::{DemandTrace, SlicingWindow};
use crate::qos::Slice;
use crate::reservation::LocalSolution;

/// Scaling constants and sizes of the encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationConfig {
    /// Access point slots; slot 0 is the terrestrial access point.
    pub a_max: usize,
    pub w_max: usize,
    /// Demand divisor per slice; values are clipped to 1 after division.
    pub demand_scale: [f64; 2],
    /// Distance divisor, normally the slant range at zero elevation.
    pub distance_scale: f64,
    /// Range-rate divisor, normally the orbital speed.
    pub speed_scale: f64,
}

/// Features per access point slot: valid flag, distance/elevation/range
/// rate at the first and last reachable slot, previous ratios of both
/// slices, then `w_max` accessibility bits.
pub const AP_STATIC_FEATURES: usize = 9;

impl ObservationConfig {
    pub fn ap_block(&self) -> usize {
        AP_STATIC_FEATURES + self.w_max
    }

    /// Demand of both slices over `w_max` slots, then the window length.
    pub fn global_block(&self) -> usize {
        2 * self.w_max + 1
    }

    pub fn dim(&self) -> usize {
        self.global_block() + self.a_max * self.ap_block()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub cell: usize,
    pub window_index: usize,
    pub features: Vec<f64>,
    /// Valid access point slots.
    pub mask: Vec<bool>,
    /// Access point behind every slot.
    pub slots: Vec<Option<AccessPoint>>,
}

impl Observation {
    pub fn has_terrestrial(&self) -> bool {
        self.mask.first().copied().unwrap_or(false)
    }
}

struct Candidate {
    ap: AccessPoint,
    first: ApLink,
    last: ApLink,
    reach: Vec<bool>,
}

fn clip(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// Encodes the observation of `window` from the per-slot access sets of its
/// slots (`access[k]` belongs to slot `window.start + k`).
///
/// When more satellites are reachable than there are slots, the ones
/// nearest at their first reachable slot in the window are kept, ties by id.
pub fn encode_observation(
    config: &ObservationConfig,
    window: &SlicingWindow,
    trace: &DemandTrace,
    access: &[&CellAccess],
    previous: &LocalSolution,
) -> Observation {
    assert_eq!(access.len(), window.len, "one access set per window slot");
    let mut features = vec![0.0; config.dim()];
    let w = config.w_max;
    for (k, t) in window.slots().take(w).enumerate() {
        for slice in Slice::ALL {
            let l = slice.index();
            let scale = config.demand_scale[l];
            let v = if scale > 0.0 { trace.lambda(window.cell, slice, t) / scale } else { 0.0 };
            features[l * w + k] = clip(v);
        }
    }
    features[2 * w] = clip(window.len as f64 / w as f64);

    let mut candidates: Vec<Candidate> = Vec::new();
    for (k, a) in access.iter().enumerate() {
        for link in &a.links {
            match candidates.iter_mut().find(|c| c.ap == link.ap) {
                Some(c) => {
                    c.last = *link;
                    c.reach[k] = true;
                }
                None => {
                    let mut reach = vec![false; window.len];
                    reach[k] = true;
                    candidates.push(Candidate {
                        ap: link.ap,
                        first: *link,
                        last: *link,
                        reach,
                    });
                }
            }
        }
    }
    let terrestrial = candidates.iter().position(|c| c.ap == AccessPoint::Terrestrial);
    let terrestrial = terrestrial.map(|i| candidates.remove(i));
    candidates.sort_by(|a, b| {
        a.first
            .distance_m
            .total_cmp(&b.first.distance_m)
            .then(a.ap.cmp(&b.ap))
    });
    candidates.truncate(config.a_max.saturating_sub(1));

    let mut mask = vec![false; config.a_max];
    let mut slots = vec![None; config.a_max];
    let base = config.global_block();
    let block = config.ap_block();
    let mut place = |slot: usize, c: &Candidate, features: &mut [f64]| {
        mask[slot] = true;
        slots[slot] = Some(c.ap);
        let f = &mut features[base + slot * block..base + (slot + 1) * block];
        f[0] = 1.0;
        f[1] = clip(c.first.distance_m / config.distance_scale);
        f[2] = clip(c.last.distance_m / config.distance_scale);
        f[3] = clip(c.first.elevation_deg / 90.0);
        f[4] = clip(c.last.elevation_deg / 90.0);
        f[5] = clip(c.first.range_rate_mps / config.speed_scale);
        f[6] = clip(c.last.range_rate_mps / config.speed_scale);
        f[7] = previous.ratio(c.ap, Slice::DelaySensitive);
        f[8] = previous.ratio(c.ap, Slice::DelayTolerant);
        for (k, &r) in c.reach.iter().take(w).enumerate() {
            f[AP_STATIC_FEATURES + k] = if r { 1.0 } else { 0.0 };
        }
    };
    if let Some(t) = &terrestrial {
        place(0, t, &mut features);
    }
    for (i, c) in candidates.iter().enumerate() {
        place(i + 1, c, &mut features);
    }
    Observation {
        cell: window.cell,
        window_index: window.index,
        features,
        mask,
        slots,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::SatId;

    fn link(id: u32, d: f64, el: f64, rr: f64) -> ApLink {
        ApLink {
            ap: AccessPoint::Satellite(SatId(id)),
            distance_m: d,
            prop_delay_s: 0.0,
            elevation_deg: el,
            range_rate_mps: rr,
        }
    }

    fn config() -> ObservationConfig {
        ObservationConfig {
            a_max: 3,
            w_max: 2,
            demand_scale: [100.0, 10.0],
            distance_scale: 2000e3,
            speed_scale: 8000.0,
        }
    }

    fn trace() -> DemandTrace {
        DemandTrace::from_totals(vec![[vec![50.0, 100.0, 300.0], vec![5.0, 2.0, 1.0]]], &[0.5])
    }

    #[test]
    fn hand_scaled_two_satellite_fixture() {
        let cfg = config();
        let window = SlicingWindow { cell: 0, index: 4, start: 0, len: 2 };
        let a0 = CellAccess { cell_id: 1, links: vec![link(7, 1000e3, 45.0, -4000.0), link(3, 800e3, 60.0, 0.0)] };
        let a1 = CellAccess { cell_id: 1, links: vec![link(7, 900e3, 54.0, -2000.0)] };
        let mut prev = LocalSolution::default();
        prev.ratios.insert(AccessPoint::Satellite(SatId(7)), [0.25, 0.5]);
        let obs = encode_observation(&cfg, &window, &trace(), &[&a0, &a1], &prev);
        assert_eq!(obs.features.len(), 5 + 3 * 11);
        assert_eq!(&obs.features[..5], &[0.5, 1.0, 0.5, 0.2, 1.0]);
        assert_eq!(obs.mask, vec![false, true, true]);
        assert_eq!(obs.slots[1], Some(AccessPoint::Satellite(SatId(3))));
        assert!(obs.features[5..16].iter().all(|&v| v == 0.0));
        // satellite 3 is nearer, so it takes slot 1
        let s3 = &obs.features[16..27];
        assert_eq!(s3, &[1.0, 0.4, 0.4, 60.0 / 90.0, 60.0 / 90.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let s7 = &obs.features[27..38];
        assert_eq!(s7, &[1.0, 0.5, 0.45, 0.5, 0.6, -0.5, -0.25, 0.25, 0.5, 1.0, 1.0]);
    }

    #[test]
    fn no_satellites_leaves_only_terrestrial() {
        let cfg = config();
        let window = SlicingWindow { cell: 0, index: 0, start: 1, len: 1 };
        let t = ApLink {
            ap: AccessPoint::Terrestrial,
            distance_m: 500.0,
            prop_delay_s: 0.0,
            elevation_deg: 90.0,
            range_rate_mps: 0.0,
        };
        let a = CellAccess { cell_id: 1, links: vec![t] };
        let obs = encode_observation(&cfg, &window, &trace(), &[&a], &LocalSolution::default());
        assert_eq!(obs.mask, vec![true, false, false]);
        assert!(obs.has_terrestrial());
        let again = encode_observation(&cfg, &window, &trace(), &[&a], &LocalSolution::default());
        assert_eq!(obs, again);
    }

    #[test]
    fn truncation_keeps_nearest() {
        let cfg = config();
        let window = SlicingWindow { cell: 0, index: 0, start: 0, len: 1 };
        let a = CellAccess {
            cell_id: 1,
            links: vec![link(1, 900e3, 50.0, 0.0), link(2, 700e3, 70.0, 0.0), link(3, 800e3, 60.0, 0.0)],
        };
        let obs = encode_observation(&cfg, &window, &trace(), &[&a], &LocalSolution::default());
        assert_eq!(
            obs.slots,
            vec![None, Some(AccessPoint::Satellite(SatId(2))), Some(AccessPoint::Satellite(SatId(3)))]
        );
    }
}
