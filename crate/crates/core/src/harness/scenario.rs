//! Scenario files: TOML with one table per module type. Link budgets are
//! given in dB and converted to linear units by [`Scenario::link_params`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::constellation::{Cell, CellMap, ConstellationConfig};
use crate::coordination::IdoaConfig;
use crate::demand::{DemandProfile, WindowRule, DEFAULT_LAMBDA_FLOOR};
use crate::qos::{self, ApClassParams, LinkParams, SliceParams};
use crate::reservation::CostWeights;

use super::HarnessError;

pub const PAPER_DEFAULT: &str = include_str!("../../scenarios/paper_default.toml");

/// How cells see satellites: orbital geometry or a fixed script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AccessModel {
    #[default]
    Orbital,
    Scripted { links: Vec<ScriptedLink> },
}

/// Satellite `satellite` is visible to `cell_id` on slots
/// `from_slot..to_slot` at a fixed distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedLink {
    pub cell_id: u32,
    pub satellite: u32,
    pub from_slot: usize,
    pub to_slot: usize,
    pub distance_m: f64,
    #[serde(default = "default_elevation")]
    pub elevation_deg: f64,
}

fn default_elevation() -> f64 {
    60.0
}

/// Link budget of one access point class. The effective transmit power
/// is `power + antenna_gain + channel_offset` in dB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApClassConfig {
    pub bandwidth_hz: f64,
    pub power_dbm: f64,
    #[serde(default)]
    pub antenna_gain_dbi: f64,
    /// Gain not captured by `d^-delta`, such as the reference-distance
    /// constant of the path loss model.
    #[serde(default)]
    pub channel_offset_db: f64,
    pub pathloss_exponent: f64,
}

impl ApClassConfig {
    pub fn to_params(&self) -> ApClassParams {
        ApClassParams {
            bandwidth_hz: self.bandwidth_hz,
            power_w: qos::dbm_to_watts(self.power_dbm + self.antenna_gain_dbi + self.channel_offset_db),
            pathloss_exponent: self.pathloss_exponent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    pub noise_dbm: f64,
    pub theta: f64,
    pub epsilon: f64,
    pub terrestrial: ApClassConfig,
    pub satellite: ApClassConfig,
    pub slices: [SliceParams; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub alpha_terrestrial: f64,
    pub alpha_satellite: f64,
    pub p1: f64,
    pub p2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdoaSettings {
    pub iter_max: u32,
    pub tol: f64,
}

/// Learning hyperparameters shared by both learned schemes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlConfig {
    pub a_max: usize,
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub clip: f64,
    pub lr_policy: f64,
    pub lr_critic: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub entropy_coef: f64,
    /// Multiplier applied to the entropy coefficient after every episode.
    pub entropy_decay: f64,
    pub max_grad_norm: f64,
    pub episodes: usize,
    /// Greedy evaluation period in episodes; 0 disables evaluation.
    pub eval_every: usize,
    /// Initial output bias of the selection head.
    pub init_selection_bias: f64,
    /// Initial output bias of the ratio head, in logit space.
    pub init_ratio_bias: f64,
    pub init_log_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub horizon: usize,
    pub slot_duration_s: f64,
    pub w_max: usize,
    /// Relative demand change that closes a slicing window.
    pub window_threshold: f64,
    /// Per-satellite beam capacity `K`.
    pub beam_capacity: f64,
    pub constellation: ConstellationConfig,
    #[serde(default)]
    pub access: AccessModel,
    pub cells: Vec<Cell>,
    pub demand: DemandProfile,
    pub link: LinkConfig,
    pub costs: CostConfig,
    pub idoa: IdoaSettings,
    pub rl: RlConfig,
}

impl Scenario {
    pub fn link_params(&self) -> LinkParams {
        LinkParams {
            terrestrial: self.link.terrestrial.to_params(),
            satellite: self.link.satellite.to_params(),
            noise_w: qos::dbm_to_watts(self.link.noise_dbm),
            theta: self.link.theta,
            slices: self.link.slices,
            epsilon: self.link.epsilon,
        }
    }

    pub fn cost_weights(&self) -> CostWeights {
        CostWeights {
            beta1: self.costs.beta1,
            beta2: self.costs.beta2,
            beta3: self.costs.beta3,
            alpha_terrestrial: self.costs.alpha_terrestrial,
            alpha_satellite: self.costs.alpha_satellite,
        }
    }

    pub fn idoa_config(&self) -> IdoaConfig {
        IdoaConfig {
            iter_max: self.idoa.iter_max,
            tol: self.idoa.tol,
            beta3: self.costs.beta3,
        }
    }

    pub fn window_rule(&self) -> WindowRule {
        WindowRule {
            max_slots: self.w_max,
            threshold: self.window_threshold,
            lambda_floor: DEFAULT_LAMBDA_FLOOR,
        }
    }

    pub fn cell_map(&self) -> CellMap {
        CellMap {
            cells: self.cells.clone(),
        }
    }

    /// Every semantic problem, not just the first.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.horizon < 1 {
            errs.push("horizon must be >= 1".into());
        }
        if !(self.slot_duration_s > 0.0) {
            errs.push("slot_duration_s must be > 0".into());
        }
        if self.w_max < 1 {
            errs.push("w_max must be >= 1".into());
        }
        if !(self.window_threshold >= 0.0) {
            errs.push("window_threshold must be >= 0".into());
        }
        if !(self.beam_capacity > 0.0) {
            errs.push("beam_capacity must be > 0".into());
        }
        errs.extend(self.constellation.validate());
        errs.extend(self.cell_map().validate());
        errs.extend(self.demand.validate());
        if self.demand.cells.len() != self.cells.len() {
            errs.push(format!(
                "demand.cells has {} entries for {} cells",
                self.demand.cells.len(),
                self.cells.len()
            ));
        }
        for (i, d) in self.demand.cells.iter().enumerate() {
            let Some(cell) = self.cells.iter().find(|c| c.cell_id == d.cell_id) else {
                errs.push(format!("demand.cells[{i}].cell_id {} does not name a cell", d.cell_id));
                continue;
            };
            if d.cell_id as usize != i + 1 {
                errs.push(format!("demand.cells[{i}].cell_id must be {}", i + 1));
            }
            let expected = if cell.has_terrestrial() {
                1.0 - cell.terrestrial_coverage_fraction
            } else {
                1.0
            };
            if (d.uncovered_fraction - expected).abs() > 1e-9 {
                errs.push(format!(
                    "demand.cells[{i}].uncovered_fraction = {} disagrees with cell {} (expected {expected})",
                    d.uncovered_fraction, d.cell_id
                ));
            }
        }
        for (name, class) in [("terrestrial", &self.link.terrestrial), ("satellite", &self.link.satellite)] {
            if !class.power_dbm.is_finite() || !class.antenna_gain_dbi.is_finite() || !class.channel_offset_db.is_finite() {
                errs.push(format!("link.{name} dB values must be finite"));
            }
        }
        if !self.link.noise_dbm.is_finite() {
            errs.push("link.noise_dbm must be finite".into());
        }
        errs.extend(self.link_params().validate());
        errs.extend(self.cost_weights().validate());
        if !(self.costs.p1 >= 0.0) || !(self.costs.p2 >= 0.0) {
            errs.push("costs.p1 and costs.p2 must be >= 0".into());
        }
        if self.idoa.iter_max < 1 {
            errs.push("idoa.iter_max must be >= 1".into());
        }
        if !(self.idoa.tol > 0.0) {
            errs.push("idoa.tol must be > 0".into());
        }
        if let AccessModel::Scripted { links } = &self.access {
            for (i, l) in links.iter().enumerate() {
                if l.cell_id < 1 || l.cell_id as usize > self.cells.len() {
                    errs.push(format!("access.links[{i}].cell_id {} does not name a cell", l.cell_id));
                }
                if l.from_slot >= l.to_slot {
                    errs.push(format!("access.links[{i}] has an empty slot range"));
                }
                if !(l.distance_m > 0.0) {
                    errs.push(format!("access.links[{i}].distance_m must be > 0"));
                }
            }
        }
        let rl = &self.rl;
        if rl.a_max < 2 {
            errs.push("rl.a_max must be >= 2 (terrestrial plus one satellite)".into());
        }
        if rl.hidden.is_empty() || rl.hidden.contains(&0) {
            errs.push("rl.hidden must list positive layer widths".into());
        }
        if !(rl.gamma > 0.0 && rl.gamma < 1.0) {
            errs.push("rl.gamma must be within (0, 1)".into());
        }
        if !(rl.clip > 0.0 && rl.clip < 1.0) {
            errs.push("rl.clip must be within (0, 1)".into());
        }
        if !(rl.lr_policy > 0.0) || !(rl.lr_critic > 0.0) {
            errs.push("rl learning rates must be > 0".into());
        }
        if rl.minibatch < 1 {
            errs.push("rl.minibatch must be >= 1".into());
        }
        if !(rl.entropy_coef >= 0.0) || !(rl.entropy_decay > 0.0 && rl.entropy_decay <= 1.0) {
            errs.push("rl.entropy_coef must be >= 0 and rl.entropy_decay within (0, 1]".into());
        }
        if !(rl.max_grad_norm > 0.0) {
            errs.push("rl.max_grad_norm must be > 0".into());
        }
        errs
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Git blob hash (`sha256("blob <len>\0" + bytes)`) of the serialized
    /// scenario.
    pub fn content_hash(&self) -> String {
        blob_hash(self.to_toml().as_bytes())
    }
}

pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Parses and validates scenario text; `origin` only labels errors.
pub fn parse_scenario(text: &str, origin: &Path) -> Result<Scenario, HarnessError> {
    let scenario: Scenario = toml::from_str(text).map_err(|e| HarnessError::Parse {
        path: origin.to_path_buf(),
        message: e.to_string(),
    })?;
    let errs = scenario.validate();
    if errs.is_empty() {
        Ok(scenario)
    } else {
        Err(HarnessError::Invalid(errs))
    }
}

/// Loads a scenario file. The name `paper_default` resolves to the bundled
/// scenario when no such file exists.
pub fn load_scenario(path: &Path) -> Result<Scenario, HarnessError> {
    if !path.exists() && path.as_os_str() == "paper_default" {
        return paper_default();
    }
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: PathBuf::from(path),
        source,
    })?;
    parse_scenario(&text, path)
}

pub fn paper_default() -> Result<Scenario, HarnessError> {
    parse_scenario(PAPER_DEFAULT, Path::new("paper_default"))
}
