//! Walker-delta LEO shell propagation and per-cell access sets.
//!
//! Satellites follow circular Keplerian orbits in an Earth-centered inertial
//! frame. The ascending node of plane 0 lies on the +x axis and in-plane phase
//! is measured from the ascending node, so satellite 0 starts at
//! `(R_e + h, 0, 0)`. Cells sit on a spherical Earth and rotate with it at the
//! sidereal rate unless rotation is frozen in the config.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius used by the bundled scenarios.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
/// Standard gravitational parameter of the Earth.
pub const EARTH_MU: f64 = 3.986e14;
/// Propagation speed used for every delay computation.
pub const SPEED_OF_LIGHT: f64 = 2.998e8;
/// Sidereal rotation rate of the Earth.
pub const EARTH_ROTATION_RATE: f64 = 7.292_115_9e-5;

pub type Vec3 = [f64; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstellationError {
    #[error("invalid constellation config: {0}")]
    InvalidConfig(String),
    #[error("invalid cell map: {0}")]
    InvalidCells(String),
    #[error("slicing window contains no slots")]
    EmptyWindow,
}

/// Satellite identifier, `plane * sats_per_orbit + in_plane_index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SatId(pub u32);

/// A resource source for a cell: the virtual terrestrial access point or a
/// satellite beam. The derived ordering puts the terrestrial AP first and
/// satellites in ascending id, which is the tie-break order used everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AccessPoint {
    Terrestrial,
    Satellite(SatId),
}

impl AccessPoint {
    pub fn is_satellite(&self) -> bool {
        matches!(self, AccessPoint::Satellite(_))
    }

    pub fn satellite(&self) -> Option<SatId> {
        match self {
            AccessPoint::Satellite(id) => Some(*id),
            AccessPoint::Terrestrial => None,
        }
    }
}

impl std::fmt::Display for AccessPoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AccessPoint::Terrestrial => write!(f, "T"),
            AccessPoint::Satellite(id) => write!(f, "S{}", id.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstellationConfig {
    pub orbit_count: u32,
    pub sats_per_orbit: u32,
    pub altitude_m: f64,
    pub inclination_deg: f64,
    /// Walker phasing factor F: plane `p` is offset by `2*pi*F*p / (P*S)`.
    #[serde(default = "default_phasing")]
    pub phasing_offset: f64,
    #[serde(default = "default_earth_radius")]
    pub earth_radius_m: f64,
    pub min_elevation_deg: f64,
    /// Rotate cells with the Earth. Turning this off freezes the ground.
    #[serde(default = "default_true")]
    pub earth_rotation: bool,
}

fn default_phasing() -> f64 {
    1.0
}

fn default_earth_radius() -> f64 {
    EARTH_RADIUS_M
}

fn default_true() -> bool {
    true
}

impl ConstellationConfig {
    /// The 72x22 Starlink phase-1 shell at 550 km / 53 deg.
    pub fn starlink_phase1() -> Self {
        Self {
            orbit_count: 72,
            sats_per_orbit: 22,
            altitude_m: 550_000.0,
            inclination_deg: 53.0,
            phasing_offset: 1.0,
            earth_radius_m: EARTH_RADIUS_M,
            min_elevation_deg: 40.0,
            earth_rotation: true,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.orbit_count < 1 {
            errs.push("constellation.orbit_count must be >= 1".to_string());
        }
        if self.sats_per_orbit < 1 {
            errs.push("constellation.sats_per_orbit must be >= 1".to_string());
        }
        if !(self.altitude_m > 0.0) {
            errs.push("constellation.altitude_m must be > 0".to_string());
        }
        if !(0.0..=180.0).contains(&self.inclination_deg) {
            errs.push("constellation.inclination_deg must be within [0, 180]".to_string());
        }
        if !(0.0..90.0).contains(&self.min_elevation_deg) {
            errs.push("constellation.min_elevation_deg must be within [0, 90)".to_string());
        }
        if !(self.earth_radius_m > 0.0) {
            errs.push("constellation.earth_radius_m must be > 0".to_string());
        }
        errs
    }

    pub fn satellite_count(&self) -> usize {
        (self.orbit_count * self.sats_per_orbit) as usize
    }

    pub fn orbit_radius_m(&self) -> f64 {
        self.earth_radius_m + self.altitude_m
    }

    /// Mean motion in rad/s.
    pub fn mean_motion(&self) -> f64 {
        (EARTH_MU / self.orbit_radius_m().powi(3)).sqrt()
    }

    pub fn period_s(&self) -> f64 {
        2.0 * PI / self.mean_motion()
    }

    /// Orbital speed of every satellite in the shell.
    pub fn orbital_speed(&self) -> f64 {
        self.orbit_radius_m() * self.mean_motion()
    }

    /// Largest Earth-central angle between a site and a satellite that is
    /// still above the elevation mask.
    pub fn max_central_angle(&self) -> f64 {
        let eps = self.min_elevation_deg.to_radians();
        let ratio = self.earth_radius_m * eps.cos() / self.orbit_radius_m();
        (ratio.clamp(-1.0, 1.0)).acos() - eps
    }

    fn orbital_angles(&self, sat: SatId, time_s: f64) -> (f64, f64) {
        let per = self.sats_per_orbit;
        let plane = sat.0 / per;
        let idx = sat.0 % per;
        let total = (self.orbit_count * per) as f64;
        let raan = 2.0 * PI * plane as f64 / self.orbit_count as f64;
        let u = 2.0 * PI * idx as f64 / per as f64
            + 2.0 * PI * self.phasing_offset * plane as f64 / total
            + self.mean_motion() * time_s;
        (raan, u)
    }
}

pub fn satellite_position(config: &ConstellationConfig, sat: SatId, time_s: f64) -> Vec3 {
    let (raan, u) = config.orbital_angles(sat, time_s);
    let inc = config.inclination_deg.to_radians();
    let r = config.orbit_radius_m();
    let (so, co) = raan.sin_cos();
    let (su, cu) = u.sin_cos();
    let (si, ci) = inc.sin_cos();
    [
        r * (co * cu - so * su * ci),
        r * (so * cu + co * su * ci),
        r * su * si,
    ]
}

pub fn satellite_velocity(config: &ConstellationConfig, sat: SatId, time_s: f64) -> Vec3 {
    let (raan, u) = config.orbital_angles(sat, time_s);
    let inc = config.inclination_deg.to_radians();
    let v = config.orbital_speed();
    let (so, co) = raan.sin_cos();
    let (su, cu) = u.sin_cos();
    let (si, ci) = inc.sin_cos();
    [
        v * (-co * su - so * cu * ci),
        v * (-so * su + co * cu * ci),
        v * cu * si,
    ]
}

/// Positions of every satellite at the start of `slot`, ordered by id.
pub fn propagate(config: &ConstellationConfig, slot: usize, slot_duration_s: f64) -> Vec<Vec3> {
    let t = slot as f64 * slot_duration_s;
    (0..config.satellite_count() as u32)
        .map(|id| satellite_position(config, SatId(id), t))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat_deg: f64,
    pub lon_deg: f64,
}

impl GeoPoint {
    /// Inertial position of the point after the Earth has turned by
    /// `rotation_rad`.
    pub fn position(&self, radius_m: f64, rotation_rad: f64) -> Vec3 {
        let lat = self.lat_deg.to_radians();
        let lon = self.lon_deg.to_radians() + rotation_rad;
        [
            radius_m * lat.cos() * lon.cos(),
            radius_m * lat.cos() * lon.sin(),
            radius_m * lat.sin(),
        ]
    }
}

fn earth_rotation_angle(config: &ConstellationConfig, time_s: f64) -> f64 {
    if config.earth_rotation {
        EARTH_ROTATION_RATE * time_s
    } else {
        0.0
    }
}

pub fn site_position(config: &ConstellationConfig, site: &GeoPoint, time_s: f64) -> Vec3 {
    site.position(config.earth_radius_m, earth_rotation_angle(config, time_s))
}

fn site_velocity(config: &ConstellationConfig, site_pos: &Vec3) -> Vec3 {
    if config.earth_rotation {
        [
            -EARTH_ROTATION_RATE * site_pos[1],
            EARTH_ROTATION_RATE * site_pos[0],
            0.0,
        ]
    } else {
        [0.0; 3]
    }
}

pub(crate) fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// Elevation of a satellite above the local horizon of a site, in degrees.
/// Both positions are in the same Earth-centered frame.
pub fn elevation_angle(sat_position: &Vec3, site_position: &Vec3) -> f64 {
    let rho = sub(sat_position, site_position);
    let range = norm(&rho);
    let up = norm(site_position);
    if range == 0.0 || up == 0.0 {
        return 90.0;
    }
    // atan2 keeps full precision near the zenith where asin does not
    let along = dot(&rho, site_position) / up;
    let c = [
        rho[1] * site_position[2] - rho[2] * site_position[1],
        rho[2] * site_position[0] - rho[0] * site_position[2],
        rho[0] * site_position[1] - rho[1] * site_position[0],
    ];
    let across = norm(&c) / up;
    along.atan2(across).to_degrees()
}

/// Slant range from a site to a satellite at the given elevation.
pub fn slant_range(earth_radius_m: f64, altitude_m: f64, elevation_deg: f64) -> f64 {
    let s = elevation_deg.to_radians().sin();
    let r = earth_radius_m;
    -r * s + (r * r * s * s + 2.0 * r * altitude_m + altitude_m * altitude_m).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub cell_id: u32,
    pub center_lat_deg: f64,
    pub center_lon_deg: f64,
    /// Number of terrestrial base stations `A_n`.
    pub base_stations: u32,
    /// Fraction of the cell demand that terrestrial networks can reach.
    pub terrestrial_coverage_fraction: f64,
    /// Average user distance to the serving base station.
    #[serde(default = "default_bs_distance")]
    pub bs_distance_m: f64,
}

fn default_bs_distance() -> f64 {
    500.0
}

impl Cell {
    pub fn center(&self) -> GeoPoint {
        GeoPoint {
            lat_deg: self.center_lat_deg,
            lon_deg: self.center_lon_deg,
        }
    }

    pub fn has_terrestrial(&self) -> bool {
        self.base_stations > 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CellMap {
    pub cells: Vec<Cell>,
}

impl CellMap {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.cells.is_empty() {
            errs.push("cells: at least one cell is required".to_string());
        }
        for (i, cell) in self.cells.iter().enumerate() {
            if cell.cell_id as usize != i + 1 {
                errs.push(format!(
                    "cells[{i}].cell_id = {} but ids must be contiguous from 1",
                    cell.cell_id
                ));
            }
            if !(0.0..=1.0).contains(&cell.terrestrial_coverage_fraction) {
                errs.push(format!(
                    "cells[{i}].terrestrial_coverage_fraction must be within [0, 1]"
                ));
            }
            if !(-90.0..=90.0).contains(&cell.center_lat_deg) {
                errs.push(format!("cells[{i}].center_lat_deg must be within [-90, 90]"));
            }
            if !(cell.bs_distance_m > 0.0) {
                errs.push(format!("cells[{i}].bs_distance_m must be > 0"));
            }
        }
        errs
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// Link geometry between a cell center and one access point in one slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApLink {
    pub ap: AccessPoint,
    pub distance_m: f64,
    pub prop_delay_s: f64,
    pub elevation_deg: f64,
    pub range_rate_mps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellAccess {
    pub cell_id: u32,
    /// Terrestrial first (when present), then satellites by ascending id.
    pub links: Vec<ApLink>,
}

impl CellAccess {
    pub fn link(&self, ap: AccessPoint) -> Option<&ApLink> {
        self.links.iter().find(|l| l.ap == ap)
    }

    pub fn accessible(&self, ap: AccessPoint) -> bool {
        self.link(ap).is_some()
    }

    pub fn access_points(&self) -> impl Iterator<Item = AccessPoint> + '_ {
        self.links.iter().map(|l| l.ap)
    }

    pub fn satellites(&self) -> impl Iterator<Item = &ApLink> + '_ {
        self.links.iter().filter(|l| l.ap.is_satellite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessSnapshot {
    pub slot: usize,
    /// Indexed by cell position (`cell_id - 1`).
    pub cells: Vec<CellAccess>,
}

impl AccessSnapshot {
    pub fn cell(&self, n: usize) -> &CellAccess {
        &self.cells[n]
    }
}

pub fn terrestrial_link(cell: &Cell) -> ApLink {
    ApLink {
        ap: AccessPoint::Terrestrial,
        distance_m: cell.bs_distance_m,
        prop_delay_s: 0.0,
        elevation_deg: 90.0,
        range_rate_mps: 0.0,
    }
}

/// Accessible access points of every cell at the start of `slot`.
pub fn access_snapshot(
    config: &ConstellationConfig,
    cells: &CellMap,
    slot: usize,
    slot_duration_s: f64,
) -> AccessSnapshot {
    let time_s = slot as f64 * slot_duration_s;
    let sats: Vec<(Vec3, Vec3)> = (0..config.satellite_count() as u32)
        .map(|id| {
            (
                satellite_position(config, SatId(id), time_s),
                satellite_velocity(config, SatId(id), time_s),
            )
        })
        .collect();
    // prefilter on the central angle before the exact elevation test
    let cos_cap = config.max_central_angle().cos() - 1e-9;
    let orbit_r = config.orbit_radius_m();

    let per_cell = cells
        .cells
        .iter()
        .map(|cell| {
            let site = site_position(config, &cell.center(), time_s);
            let site_vel = site_velocity(config, &site);
            let site_r = norm(&site);
            let mut links = Vec::new();
            if cell.has_terrestrial() {
                links.push(terrestrial_link(cell));
            }
            for (id, (pos, vel)) in sats.iter().enumerate() {
                if dot(pos, &site) / (orbit_r * site_r) < cos_cap {
                    continue;
                }
                let elevation = elevation_angle(pos, &site);
                if elevation < config.min_elevation_deg {
                    continue;
                }
                let rho = sub(pos, &site);
                let distance = norm(&rho);
                let rel_vel = sub(vel, &site_vel);
                links.push(ApLink {
                    ap: AccessPoint::Satellite(SatId(id as u32)),
                    distance_m: distance,
                    prop_delay_s: distance / SPEED_OF_LIGHT,
                    elevation_deg: elevation,
                    range_rate_mps: dot(&rho, &rel_vel) / distance,
                });
            }
            CellAccess {
                cell_id: cell.cell_id,
                links,
            }
        })
        .collect();

    AccessSnapshot {
        slot,
        cells: per_cell,
    }
}

/// Link geometry of a given satellite to a cell at an arbitrary time,
/// regardless of the elevation mask.
pub fn satellite_link(
    config: &ConstellationConfig,
    cell: &Cell,
    sat: SatId,
    time_s: f64,
) -> ApLink {
    let site = site_position(config, &cell.center(), time_s);
    let pos = satellite_position(config, sat, time_s);
    let vel = satellite_velocity(config, sat, time_s);
    let rho = sub(&pos, &site);
    let distance = norm(&rho);
    let rel_vel = sub(&vel, &site_velocity(config, &site));
    ApLink {
        ap: AccessPoint::Satellite(sat),
        distance_m: distance,
        prop_delay_s: distance / SPEED_OF_LIGHT,
        elevation_deg: elevation_angle(&pos, &site),
        range_rate_mps: dot(&rho, &rel_vel) / distance,
    }
}

/// Union of the per-slot access sets of one cell over a slicing window.
pub fn window_access_union<'a, I>(per_slot: I) -> Result<BTreeSet<AccessPoint>, ConstellationError>
where
    I: IntoIterator<Item = &'a CellAccess>,
{
    let mut union = BTreeSet::new();
    let mut any = false;
    for access in per_slot {
        any = true;
        union.extend(access.access_points());
    }
    if any {
        Ok(union)
    } else {
        Err(ConstellationError::EmptyWindow)
    }
}
