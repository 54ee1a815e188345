//! Queueing model of one slice queue at one access point.
//!
//! Service is deterministic, so the effective capacity equals the service
//! rate. The delay tail uses the exponential approximation
//! `P(D >= D_B) ~ exp(-theta * C * D_B)` and the largest Poisson intensity a
//! reservation sustains is `theta * C / (e^theta - 1)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constellation::{AccessPoint, CellAccess, SPEED_OF_LIGHT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QosError {
    #[error("distance must be positive, got {0} m")]
    NonPositiveDistance(f64),
    #[error("reservation ratio {0} outside [0, 1]")]
    RatioOutOfRange(f64),
    #[error("reservation on {0} which is not accessible in this slot")]
    InaccessibleReservation(AccessPoint),
}

/// Slice 1 carries delay-sensitive traffic, slice 2 delay-tolerant traffic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Slice {
    DelaySensitive,
    DelayTolerant,
}

impl Slice {
    pub const ALL: [Slice; 2] = [Slice::DelaySensitive, Slice::DelayTolerant];

    pub fn index(self) -> usize {
        match self {
            Slice::DelaySensitive => 0,
            Slice::DelayTolerant => 1,
        }
    }

    /// 1-based slice number used in files.
    pub fn number(self) -> u32 {
        self.index() as u32 + 1
    }

    pub fn from_index(i: usize) -> Slice {
        if i == 0 {
            Slice::DelaySensitive
        } else {
            Slice::DelayTolerant
        }
    }
}

/// Physical parameters of one access-point class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApClassParams {
    pub bandwidth_hz: f64,
    /// Effective transmit power with antenna and path-gain offsets folded in.
    pub power_w: f64,
    pub pathloss_exponent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceParams {
    pub packet_bits: f64,
    pub delay_bound_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    pub terrestrial: ApClassParams,
    pub satellite: ApClassParams,
    pub noise_w: f64,
    pub theta: f64,
    pub slices: [SliceParams; 2],
    pub epsilon: f64,
}

impl LinkParams {
    pub fn class(&self, ap: AccessPoint) -> &ApClassParams {
        match ap {
            AccessPoint::Terrestrial => &self.terrestrial,
            AccessPoint::Satellite(_) => &self.satellite,
        }
    }

    pub fn slice(&self, slice: Slice) -> &SliceParams {
        &self.slices[slice.index()]
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        for (name, c) in [("terrestrial", &self.terrestrial), ("satellite", &self.satellite)] {
            if !(c.bandwidth_hz > 0.0) {
                errs.push(format!("link.{name}.bandwidth must be > 0"));
            }
            if !(c.power_w > 0.0) {
                errs.push(format!("link.{name}: effective power must be > 0"));
            }
            if !(c.pathloss_exponent > 0.0) {
                errs.push(format!("link.{name}.pathloss_exponent must be > 0"));
            }
        }
        if !(self.noise_w > 0.0) {
            errs.push("link: noise power must be > 0".to_string());
        }
        if !(self.theta > 0.0) {
            errs.push("link.theta must be > 0".to_string());
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            errs.push("link.epsilon must be within (0, 1)".to_string());
        }
        for (i, s) in self.slices.iter().enumerate() {
            if !(s.packet_bits > 0.0) {
                errs.push(format!("slices[{i}].packet_bits must be > 0"));
            }
            if !(s.delay_bound_s > 0.0) {
                errs.push(format!("slices[{i}].delay_bound_s must be > 0"));
            }
        }
        errs
    }
}

/// Amplitude channel gain `h = d^-delta`.
pub fn channel_gain(distance_m: f64, pathloss_exponent: f64) -> Result<f64, QosError> {
    if !(distance_m > 0.0) {
        return Err(QosError::NonPositiveDistance(distance_m));
    }
    Ok(distance_m.powf(-pathloss_exponent))
}

/// Spectral efficiency `log2(1 + P |h|^2 / sigma^2)` of an access point at
/// distance `d`.
pub fn spectral_efficiency(ap: AccessPoint, distance_m: f64, params: &LinkParams) -> Result<f64, QosError> {
    let class = params.class(ap);
    let h = channel_gain(distance_m, class.pathloss_exponent)?;
    Ok((1.0 + class.power_w * h * h / params.noise_w).log2())
}

/// Packets per second served per unit of reserved ratio.
pub fn rate_per_ratio(ap: AccessPoint, distance_m: f64, slice: Slice, params: &LinkParams) -> Result<f64, QosError> {
    let class = params.class(ap);
    let se = spectral_efficiency(ap, distance_m, params)?;
    Ok(class.bandwidth_hz / params.slice(slice).packet_bits * se)
}

/// Service rate in packets/s for reserved ratio `b`.
pub fn service_rate(
    b: f64,
    ap: AccessPoint,
    distance_m: f64,
    slice: Slice,
    params: &LinkParams,
) -> Result<f64, QosError> {
    if !(0.0..=1.0).contains(&b) {
        return Err(QosError::RatioOutOfRange(b));
    }
    Ok(b * rate_per_ratio(ap, distance_m, slice, params)?)
}

/// Effective capacity of a deterministic server: the rate itself.
pub fn effective_capacity(rate: f64, _theta: f64) -> f64 {
    rate
}

/// Delay-bound violation probability. A non-positive bound cannot be met.
pub fn violation_probability(rate: f64, theta: f64, delay_bound_s: f64) -> f64 {
    if delay_bound_s <= 0.0 {
        return 1.0;
    }
    (-theta * effective_capacity(rate, theta) * delay_bound_s).exp().min(1.0)
}

/// Slice delay bound left after satellite propagation.
pub fn effective_delay_bound(slice: Slice, ap: AccessPoint, distance_m: f64, params: &LinkParams) -> f64 {
    let bound = params.slice(slice).delay_bound_s;
    if ap.is_satellite() {
        bound - distance_m / SPEED_OF_LIGHT
    } else {
        bound
    }
}

/// `theta / (e^theta - 1)`: supported Poisson intensity per packet/s of
/// effective capacity.
pub fn intensity_factor(theta: f64) -> f64 {
    theta / theta.exp_m1()
}

/// Maximal supported Poisson intensity for one access point.
pub fn supported_intensity(
    rate: f64,
    theta: f64,
    ap: AccessPoint,
    base_stations: u32,
    covered_demand: f64,
) -> f64 {
    let per_queue = intensity_factor(theta) * effective_capacity(rate, theta);
    match ap {
        AccessPoint::Satellite(_) => per_queue,
        AccessPoint::Terrestrial => (per_queue * base_stations as f64).min(covered_demand),
    }
}

/// Total supported intensity of a slice from a set of reservations in one
/// slot. Every reserved access point must be accessible in that slot.
pub fn total_supported(
    reservations: &[(AccessPoint, f64)],
    access: &CellAccess,
    slice: Slice,
    base_stations: u32,
    covered_demand: f64,
    params: &LinkParams,
) -> Result<f64, QosError> {
    let mut total = 0.0;
    for &(ap, b) in reservations {
        let link = access
            .link(ap)
            .ok_or(QosError::InaccessibleReservation(ap))?;
        let rate = service_rate(b, ap, link.distance_m, slice, params)?;
        total += supported_intensity(rate, params.theta, ap, base_stations, covered_demand);
    }
    Ok(total)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

pub fn dbw_to_watts(dbw: f64) -> f64 {
    db_to_linear(dbw)
}


#[cfg(test)]
mod tests {
    use super::test_support::simple_params;
    use super::*;
    use crate::constellation::{ApLink, SatId};

    const SAT: AccessPoint = AccessPoint::Satellite(SatId(4));

    #[test]
    fn channel_gain_cases() {
        assert_eq!(channel_gain(1.0, 2.5).unwrap(), 1.0);
        assert!((channel_gain(100.0, 2.0).unwrap() - 1e-4).abs() < 1e-18);
        assert_eq!(channel_gain(0.0, 2.0), Err(QosError::NonPositiveDistance(0.0)));
        assert!(channel_gain(-3.0, 2.0).is_err());
    }

    #[test]
    fn channel_gain_matches_integer_power() {
        // |h|^2 = d^-5 for delta = 2.5; d^5 is exact in u128
        let d: u128 = 811_700;
        let exact = 1.0 / (d.pow(5) as f64);
        let h = channel_gain(811_700.0, 2.5).unwrap();
        assert!(((h * h) - exact).abs() / exact < 1e-12);
    }

    #[test]
    fn service_rate_cases() {
        let p = simple_params();
        // SNR = 15 * 1^-4 / 1 = 15 at d = 1
        assert_eq!(service_rate(0.0, SAT, 1.0, Slice::DelaySensitive, &p).unwrap(), 0.0);
        let r = service_rate(0.5, SAT, 1.0, Slice::DelaySensitive, &p).unwrap();
        assert!((r - 100.0).abs() < 1e-9);
        let r2 = service_rate(1.0, SAT, 1.0, Slice::DelaySensitive, &p).unwrap();
        assert!((r2 - 2.0 * r).abs() < 1e-9);
        assert!(service_rate(1.5, SAT, 1.0, Slice::DelaySensitive, &p).is_err());
    }

    #[test]
    fn effective_capacity_is_rate() {
        assert_eq!(effective_capacity(0.0, 1.0), 0.0);
        assert_eq!(effective_capacity(100.0, 1.0), 100.0);
        for theta in [0.1, 1.0, 4.0] {
            assert_eq!(effective_capacity(37.5, theta), 37.5);
        }
    }

    #[test]
    fn violation_probability_cases() {
        assert_eq!(violation_probability(0.0, 1.0, 0.05), 1.0);
        let v = violation_probability(100.0, 1.0, 0.05);
        assert!((v - (-5f64).exp()).abs() < 1e-12);
        assert!(v < 0.01);
        assert_eq!(violation_probability(100.0, 1.0, -0.01), 1.0);
        assert_eq!(violation_probability(100.0, 1.0, 0.0), 1.0);
    }

    #[test]
    fn effective_delay_bound_cases() {
        let p = simple_params();
        assert_eq!(effective_delay_bound(Slice::DelaySensitive, AccessPoint::Terrestrial, 500.0, &p), 0.05);
        let b = effective_delay_bound(Slice::DelaySensitive, SAT, 811.7e3, &p);
        assert!((b - 0.047292).abs() < 1e-6, "{b}");
        let far = effective_delay_bound(Slice::DelaySensitive, SAT, 15_000e3, &p);
        assert!(far < 0.0);
        assert_eq!(violation_probability(1e6, 1.0, far), 1.0);
    }

    #[test]
    fn supported_intensity_cases() {
        assert_eq!(supported_intensity(0.0, 1.0, SAT, 0, 0.0), 0.0);
        let s = supported_intensity(100.0, 1.0, SAT, 0, 0.0);
        assert!((s - 100.0 / (std::f64::consts::E - 1.0)).abs() < 1e-9);
        assert!((s - 58.20).abs() < 0.01);
        let t = supported_intensity(100.0, 1.0, AccessPoint::Terrestrial, 3, 50.0);
        assert_eq!(t, 50.0);
    }

    #[test]
    fn total_supported_adds_and_checks_access() {
        let p = simple_params();
        let link = |id| ApLink { ap: AccessPoint::Satellite(SatId(id)), distance_m: 1.0, prop_delay_s: 0.0, elevation_deg: 60.0, range_rate_mps: 0.0 };
        let access = CellAccess { cell_id: 1, links: vec![link(1), link(2)] };
        assert_eq!(total_supported(&[], &access, Slice::DelaySensitive, 0, 0.0, &p).unwrap(), 0.0);
        let res = [(AccessPoint::Satellite(SatId(1)), 0.5), (AccessPoint::Satellite(SatId(2)), 0.5)];
        let tot = total_supported(&res, &access, Slice::DelaySensitive, 0, 0.0, &p).unwrap();
        assert!((tot - 2.0 * 100.0 / (std::f64::consts::E - 1.0)).abs() < 1e-9);
        let bad = [(AccessPoint::Satellite(SatId(9)), 0.1)];
        assert_eq!(
            total_supported(&bad, &access, Slice::DelaySensitive, 0, 0.0, &p),
            Err(QosError::InaccessibleReservation(AccessPoint::Satellite(SatId(9))))
        );
    }

    #[test]
    fn supported_intensity_keeps_queue_stable() {
        for i in 1..=50 {
            let theta = i as f64 * 0.1;
            assert!(intensity_factor(theta) < 1.0);
            let r = 123.0;
            assert!(supported_intensity(r, theta, SAT, 0, 0.0) < r);
        }
    }

    #[test]
    fn db_conversions() {
        assert!((dbw_to_watts(10.0) - 10.0).abs() < 1e-12);
        assert!((dbm_to_watts(30.0) - 1.0).abs() < 1e-12);
        assert!((dbm_to_watts(-100.0) - 1e-13).abs() < 1e-25);
    }
}
