//! Distributed execution of local solutions against per-satellite beam
//! capacity, with proportional reduction and penalty re-solves.
//!
//! Cells only ever see their own solution plus the aggregate feedback each
//! satellite reports (its penalty weight). The coordinator never hands one
//! cell's reservations to another.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::constellation::{AccessPoint, SatId};
use crate::qos::Slice;
use crate::reservation::{LocalSolution, ReservationError};

/// Absolute tolerance of the capacity check on executed plans.
pub const CAPACITY_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdoaConfig {
    pub iter_max: u32,
    /// Relative objective change under which every cell counts as converged.
    pub tol: f64,
    pub beta3: f64,
}

impl Default for IdoaConfig {
    fn default() -> Self {
        Self {
            iter_max: 10,
            tol: 1e-4,
            beta3: 100.0,
        }
    }
}

/// Committed beam ratio per satellite and slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SatelliteLedger {
    pub capacity: f64,
    committed: BTreeMap<(SatId, usize), f64>,
}

impl SatelliteLedger {
    pub fn new(capacity: f64) -> Self {
        Self {
            capacity,
            committed: BTreeMap::new(),
        }
    }

    pub fn committed(&self, sat: SatId, slot: usize) -> f64 {
        self.committed.get(&(sat, slot)).copied().unwrap_or(0.0)
    }

    pub fn residual(&self, sat: SatId, slot: usize) -> f64 {
        (self.capacity - self.committed(sat, slot)).max(0.0)
    }

    pub fn commit(&mut self, sat: SatId, slots: &[usize], amount: f64) {
        for &t in slots {
            *self.committed.entry((sat, t)).or_insert(0.0) += amount;
        }
    }

    /// Largest committed load over all satellites and slots.
    pub fn peak(&self) -> f64 {
        self.committed.values().cloned().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyState {
    pub omega: BTreeMap<SatId, f64>,
    pub psi: BTreeMap<SatId, f64>,
    pub iteration: u32,
    pub beta3: f64,
}

impl PenaltyState {
    /// Every weight starts at one.
    pub fn new(beta3: f64) -> Self {
        Self {
            omega: BTreeMap::new(),
            psi: BTreeMap::new(),
            iteration: 0,
            beta3,
        }
    }

    pub fn omega(&self, sat: SatId) -> f64 {
        self.omega.get(&sat).copied().unwrap_or(1.0)
    }
}

/// Applies `w <- (u w + (u + 1) beta3 psi / K) / (u + 1)` to every satellite
/// present in `psi` and advances the iteration counter.
pub fn update_penalty(state: &PenaltyState, psi: &BTreeMap<SatId, f64>, capacity: f64) -> PenaltyState {
    let u = state.iteration as f64;
    let mut next = state.clone();
    for (&sat, &p) in psi {
        let w = state.omega(sat);
        let updated = (u * w + (u + 1.0) * state.beta3 * p / capacity) / (u + 1.0);
        next.omega.insert(sat, updated.max(0.0));
    }
    next.psi = psi.clone();
    next.iteration += 1;
    next
}

/// Proportional reduction of one satellite's requests to a capacity. When
/// the requests fit they are granted unchanged; otherwise every request is
/// scaled by `capacity / total` and the last non-zero grantee absorbs the
/// rounding so the grants sum to the capacity.
pub fn report_and_reduce(requests: &[f64], capacity: f64) -> Vec<f64> {
    let total: f64 = requests.iter().sum();
    if total <= capacity {
        return requests.to_vec();
    }
    let scale = capacity / total;
    let mut granted: Vec<f64> = requests.iter().map(|r| r * scale).collect();
    if let Some(last) = requests.iter().rposition(|&r| r > 0.0) {
        let others: f64 = granted.iter().enumerate().filter(|&(i, _)| i != last).map(|(_, g)| g).sum();
        granted[last] = (capacity - others).max(0.0);
    }
    granted
}

/// One cell taking part in a coordination round.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRequest {
    pub cell: usize,
    pub solution: LocalSolution,
    /// Satellites executed in this round, each with the slots its
    /// reservation will occupy.
    pub spans: BTreeMap<SatId, Vec<usize>>,
}

/// Re-solve hook: a cell recomputes its own local solution from its own
/// state and the satellites' penalty weights.
pub trait LocalSolver {
    fn resolve(&mut self, cell: usize, omega: &BTreeMap<SatId, f64>) -> Result<LocalSolution, ReservationError>;
}

impl<F> LocalSolver for F
where
    F: FnMut(usize, &BTreeMap<SatId, f64>) -> Result<LocalSolution, ReservationError>,
{
    fn resolve(&mut self, cell: usize, omega: &BTreeMap<SatId, f64>) -> Result<LocalSolution, ReservationError> {
        self(cell, omega)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub iteration: u32,
    pub satellite: u32,
    pub requested: f64,
    pub granted: f64,
    pub psi: f64,
    pub omega: f64,
}

/// Which cell's solution was handed to which cell. Only self-reads are legal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolutionRead {
    pub iteration: u32,
    pub reader: usize,
    pub owner: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InteractionLog {
    pub records: Vec<InteractionRecord>,
    pub reads: Vec<SolutionRead>,
}

impl InteractionLog {
    /// Line-delimited JSON records.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("plain record"));
            out.push('\n');
        }
        out
    }
}

/// Executed reservation of one cell on one satellite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Execution {
    pub cell: usize,
    pub satellite: SatId,
    pub slots: Vec<usize>,
    pub ratios: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdoaOutcome {
    pub executions: Vec<Execution>,
    /// Latest local solution of every participating cell, with executed
    /// satellite ratios replaced by their granted values.
    pub solutions: BTreeMap<usize, LocalSolution>,
    pub iterations: u32,
    pub penalties: PenaltyState,
}

struct Round {
    /// Grant factor per (cell, satellite).
    factors: BTreeMap<(usize, SatId), f64>,
    psi: BTreeMap<SatId, f64>,
    requested: BTreeMap<SatId, f64>,
    granted: BTreeMap<SatId, f64>,
}

fn evaluate_round(requests: &[CellRequest], ledger: &SatelliteLedger) -> Round {
    // per satellite, per slot: (cell, requested total)
    let mut load: BTreeMap<SatId, BTreeMap<usize, Vec<(usize, f64)>>> = BTreeMap::new();
    for req in requests {
        for (&sat, slots) in &req.spans {
            let amount = req.solution.total_ratio(AccessPoint::Satellite(sat));
            for &t in slots {
                load.entry(sat).or_default().entry(t).or_default().push((req.cell, amount));
            }
        }
    }
    let mut factors: BTreeMap<(usize, SatId), f64> = BTreeMap::new();
    let mut psi = BTreeMap::new();
    let mut requested = BTreeMap::new();
    let mut granted = BTreeMap::new();
    for (&sat, per_slot) in &load {
        let mut excess: f64 = 0.0;
        for (&t, entries) in per_slot {
            let amounts: Vec<f64> = entries.iter().map(|e| e.1).collect();
            let total: f64 = amounts.iter().sum();
            excess = excess.max(ledger.committed(sat, t) + total - ledger.capacity);
            let grants = report_and_reduce(&amounts, ledger.residual(sat, t));
            for ((cell, amount), g) in entries.iter().zip(grants) {
                let f = if *amount > 0.0 { (g / amount).min(1.0) } else { 1.0 };
                let e = factors.entry((*cell, sat)).or_insert(1.0);
                *e = e.min(f);
            }
        }
        psi.insert(sat, excess.max(0.0));
    }
    for req in requests {
        for &sat in req.spans.keys() {
            let amount = req.solution.total_ratio(AccessPoint::Satellite(sat));
            let f = factors.get(&(req.cell, sat)).copied().unwrap_or(1.0);
            *requested.entry(sat).or_insert(0.0) += amount;
            *granted.entry(sat).or_insert(0.0) += amount * f;
        }
    }
    Round {
        factors,
        psi,
        requested,
        granted,
    }
}

fn relative_change(old: f64, new: f64) -> f64 {
    (new - old).abs() / old.abs().max(1e-12)
}

/// Runs the coordination loop for the cells taking part at one slot and
/// commits the final grants to the ledger.
pub fn run_idoa<S: LocalSolver>(
    mut requests: Vec<CellRequest>,
    ledger: &mut SatelliteLedger,
    config: &IdoaConfig,
    solver: &mut S,
    mut log: Option<&mut InteractionLog>,
) -> Result<IdoaOutcome, ReservationError> {
    let mut penalties = PenaltyState::new(config.beta3);
    let mut touched: BTreeSet<SatId> = BTreeSet::new();
    let mut converged = false;
    let mut iterations = 0u32;
    let iter_max = config.iter_max.max(1);
    let round = loop {
        iterations += 1;
        let round = evaluate_round(&requests, ledger);
        if let Some(log) = log.as_deref_mut() {
            for (&sat, &psi) in &round.psi {
                log.records.push(InteractionRecord {
                    iteration: iterations,
                    satellite: sat.0,
                    requested: round.requested[&sat],
                    granted: round.granted[&sat],
                    psi,
                    omega: penalties.omega(sat),
                });
            }
        }
        let over = round.psi.values().any(|&p| p > CAPACITY_SLACK);
        if !over || iterations >= iter_max || converged {
            break round;
        }
        for (&sat, &p) in &round.psi {
            if p > CAPACITY_SLACK {
                touched.insert(sat);
            }
        }
        let psi: BTreeMap<SatId, f64> = touched.iter().map(|s| (*s, round.psi.get(s).copied().unwrap_or(0.0))).collect();
        penalties = update_penalty(&penalties, &psi, ledger.capacity);
        // Jacobi step: every cell re-solves against the same weights
        let mut all_small = true;
        for req in requests.iter_mut() {
            if let Some(log) = log.as_deref_mut() {
                log.reads.push(SolutionRead {
                    iteration: iterations,
                    reader: req.cell,
                    owner: req.cell,
                });
            }
            let next = solver.resolve(req.cell, &penalties.omega)?;
            if relative_change(req.solution.objective, next.objective) >= config.tol {
                all_small = false;
            }
            req.solution = next;
        }
        converged = all_small;
    };

    let mut executions = Vec::new();
    let mut solutions = BTreeMap::new();
    for req in requests {
        let mut solution = req.solution;
        for (&sat, slots) in &req.spans {
            let ap = AccessPoint::Satellite(sat);
            let f = round.factors.get(&(req.cell, sat)).copied().unwrap_or(1.0);
            let ratios = [
                solution.ratio(ap, Slice::DelaySensitive) * f,
                solution.ratio(ap, Slice::DelayTolerant) * f,
            ];
            ledger.commit(sat, slots, ratios[0] + ratios[1]);
            solution.ratios.insert(ap, ratios);
            solution.active.insert(ap, [ratios[0] > 0.0, ratios[1] > 0.0]);
            executions.push(Execution {
                cell: req.cell,
                satellite: sat,
                slots: slots.clone(),
                ratios,
            });
        }
        solutions.insert(req.cell, solution);
    }
    Ok(IdoaOutcome {
        executions,
        solutions,
        iterations,
        penalties,
    })
}

/// Executed ratios per (cell, access point) for every slot of the horizon.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReservationPlan {
    slots: Vec<BTreeMap<(usize, AccessPoint), [f64; 2]>>,
}

impl ReservationPlan {
    pub fn new(horizon: usize) -> Self {
        Self {
            slots: vec![BTreeMap::new(); horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.slots.len()
    }

    pub fn set(&mut self, cell: usize, ap: AccessPoint, slot: usize, ratios: [f64; 2]) {
        self.slots[slot].insert((cell, ap), ratios);
    }

    pub fn get(&self, cell: usize, ap: AccessPoint, slot: usize) -> [f64; 2] {
        self.slots[slot].get(&(cell, ap)).copied().unwrap_or([0.0; 2])
    }

    /// Reservations of one cell at one slot.
    pub fn cell_slot(&self, cell: usize, slot: usize) -> impl Iterator<Item = (AccessPoint, [f64; 2])> + '_ {
        self.slots[slot]
            .range((cell, AccessPoint::Terrestrial)..)
            .take_while(move |((c, _), _)| *c == cell)
            .map(|((_, ap), b)| (*ap, *b))
    }

    /// Total ratio reserved on a satellite at a slot across cells and slices.
    pub fn satellite_load(&self, sat: SatId, slot: usize) -> f64 {
        self.slots[slot]
            .iter()
            .filter(|((_, ap), _)| *ap == AccessPoint::Satellite(sat))
            .map(|(_, b)| b[0] + b[1])
            .sum()
    }

    /// Load of every satellite reserved at a slot.
    pub fn satellite_loads(&self, slot: usize) -> BTreeMap<SatId, f64> {
        let mut per_sat: BTreeMap<SatId, f64> = BTreeMap::new();
        for ((_, ap), b) in &self.slots[slot] {
            if let AccessPoint::Satellite(s) = ap {
                *per_sat.entry(*s).or_insert(0.0) += b[0] + b[1];
            }
        }
        per_sat
    }

    /// Largest per-satellite load over the horizon.
    pub fn peak_satellite_load(&self) -> f64 {
        (0..self.slots.len())
            .flat_map(|t| self.satellite_loads(t).into_values())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn under_capacity_is_unchanged() {
        assert_eq!(report_and_reduce(&[0.5, 0.4], 3.0), vec![0.5, 0.4]);
    }

    #[test]
    fn proportional_example() {
        let g = report_and_reduce(&[1.0, 0.9, 0.8, 0.7], 3.0);
        let expect = [0.8824, 0.7941, 0.7059, 0.6176];
        for (a, b) in g.iter().zip(expect) {
            assert!((a - b).abs() < 5e-5);
        }
        assert_eq!(g.iter().sum::<f64>(), 3.0);
    }

    #[test]
    fn penalty_examples() {
        let sat = SatId(7);
        let s0 = PenaltyState::new(1.0);
        let s1 = update_penalty(&s0, &BTreeMap::from([(sat, 0.3)]), 3.0);
        assert!((s1.omega(sat) - 0.1).abs() < 1e-15);
        let s2 = update_penalty(&s1, &BTreeMap::from([(sat, 0.0)]), 3.0);
        assert!((s2.omega(sat) - 0.05).abs() < 1e-15);
        let mut s = s2;
        let mut prev = s.omega(sat);
        for _ in 0..20 {
            s = update_penalty(&s, &BTreeMap::from([(sat, 0.0)]), 3.0);
            assert!(s.omega(sat) <= prev);
            prev = s.omega(sat);
        }
    }

    fn solution(sat: SatId, b: [f64; 2], objective: f64) -> LocalSolution {
        let mut s = LocalSolution::default();
        s.ratios.insert(AccessPoint::Satellite(sat), b);
        s.active.insert(AccessPoint::Satellite(sat), [b[0] > 0.0, b[1] > 0.0]);
        s.objective = objective;
        s
    }

    #[test]
    fn fast_path_runs_once() {
        let sat = SatId(1);
        let reqs = vec![CellRequest { cell: 0, solution: solution(sat, [0.3, 0.2], 1.0), spans: BTreeMap::from([(sat, vec![0, 1])]) }];
        let mut ledger = SatelliteLedger::new(3.0);
        let mut never = |_: usize, _: &BTreeMap<SatId, f64>| -> Result<LocalSolution, ReservationError> { panic!("no re-solve expected") };
        let out = run_idoa(reqs, &mut ledger, &IdoaConfig::default(), &mut never, None).unwrap();
        assert_eq!(out.iterations, 1);
        assert_eq!(out.executions[0].ratios, [0.3, 0.2]);
        assert!((ledger.committed(sat, 1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn single_iteration_reduces_without_resolve() {
        let sat = SatId(1);
        let reqs: Vec<CellRequest> = (0..4)
            .map(|n| CellRequest { cell: n, solution: solution(sat, [0.6, 0.4], 1.0), spans: BTreeMap::from([(sat, vec![5])]) })
            .collect();
        let mut ledger = SatelliteLedger::new(3.0);
        let cfg = IdoaConfig { iter_max: 1, ..IdoaConfig::default() };
        let mut never = |_: usize, _: &BTreeMap<SatId, f64>| -> Result<LocalSolution, ReservationError> { panic!("no re-solve expected") };
        let out = run_idoa(reqs, &mut ledger, &cfg, &mut never, None).unwrap();
        for e in &out.executions {
            assert!((e.ratios[0] - 0.45).abs() < 1e-12 && (e.ratios[1] - 0.3).abs() < 1e-12);
        }
        assert!(ledger.committed(sat, 5) <= 3.0 + CAPACITY_SLACK);
    }

    #[test]
    fn committed_load_limits_new_grants() {
        let sat = SatId(2);
        let mut ledger = SatelliteLedger::new(1.0);
        ledger.commit(sat, &[3], 0.8);
        let reqs = vec![CellRequest { cell: 1, solution: solution(sat, [0.5, 0.0], 1.0), spans: BTreeMap::from([(sat, vec![2, 3])]) }];
        let cfg = IdoaConfig { iter_max: 1, ..IdoaConfig::default() };
        let mut never = |_: usize, _: &BTreeMap<SatId, f64>| -> Result<LocalSolution, ReservationError> { unreachable!() };
        let out = run_idoa(reqs, &mut ledger, &cfg, &mut never, None).unwrap();
        assert!((out.executions[0].ratios[0] - 0.2).abs() < 1e-12);
        assert!(ledger.committed(sat, 3) <= 1.0 + 1e-12);
    }

    proptest! {
        #[test]
        fn reduction_is_proportional(reqs in proptest::collection::vec(0.0f64..1.0, 1..12), k in 1u32..4) {
            let k = k as f64;
            let g = report_and_reduce(&reqs, k);
            let total: f64 = reqs.iter().sum();
            let sum: f64 = g.iter().sum();
            prop_assert!(sum <= k + 1e-12);
            prop_assert!((sum - total.min(k)).abs() < 1e-12);
            if total > k {
                let ratio = k / total;
                for (r, x) in reqs.iter().zip(&g) {
                    if *r > 1e-3 {
                        prop_assert!((x / r - ratio).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
