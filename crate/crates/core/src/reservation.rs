//! Per-cell, per-window reservation problem.
//!
//! For a fixed set of selected access points the controller chooses one
//! reserved ratio per (access point, slice) that holds at every slot of the
//! window in which the access point is reachable. The activation binaries,
//! the reliability floor of slice 1 and the max-of-probabilities cost of
//! slice 2 make this a small mixed-integer convex program. It is solved
//! exactly with a branch-and-bound MILP in which `exp(-k b)` is replaced by
//! its tangent envelope, refined by cutting planes until the envelope is
//! tight at the incumbent.

use std::collections::BTreeMap;

use microlp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem, Solution, SolveOptions, SolveOutcome, Variable};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constellation::{AccessPoint, CellAccess, SatId};
use crate::demand::SlicingWindow;
use crate::qos::{self, LinkParams, Slice};

/// Absolute slack used in every feasibility check.
pub const FEASIBILITY_SLACK: f64 = 1e-9;

/// Price of one unit of relative demand shortfall in one slot.
const SHORTFALL_PRICE: f64 = 1e5;
/// Objective error of the tangent envelope accepted at the optimum.
const ENVELOPE_GAP: f64 = 1e-5;
/// Accepted difference between the envelope lower bound and the best
/// pattern's objective.
const OPTIMALITY_GAP: f64 = 1e-5;
const MAX_PATTERN_ROUNDS: usize = 8;
/// Envelope violations below this are not worth a cut.
const CUT_THRESHOLD: f64 = 1e-12;
const MAX_CUT_ROUNDS: usize = 60;
/// Initial tangent points, expressed in units of `k * b`.
const INITIAL_TANGENTS: [f64; 6] = [0.0, 0.5, 1.5, 3.0, 6.0, 15.0];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReservationError {
    #[error("window problem has no slots")]
    EmptyWindow,
    #[error("selected access point {0} is never reachable in the window")]
    Unreachable(AccessPoint),
    #[error("reservation solver failed: {0}")]
    Solver(String),
    #[error(transparent)]
    Qos(#[from] qos::QosError),
}

/// Cost weights shared by all cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    /// Cost per reserved Hz of terrestrial bandwidth.
    pub alpha_terrestrial: f64,
    /// Cost per reserved Hz of satellite beam bandwidth.
    pub alpha_satellite: f64,
}

impl CostWeights {
    pub fn alpha(&self, ap: AccessPoint) -> f64 {
        match ap {
            AccessPoint::Terrestrial => self.alpha_terrestrial,
            AccessPoint::Satellite(_) => self.alpha_satellite,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        for (name, v) in [
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("beta3", self.beta3),
            ("alpha_terrestrial", self.alpha_terrestrial),
            ("alpha_satellite", self.alpha_satellite),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                errs.push(format!("costs.{name} must be finite and >= 0"));
            }
        }
        errs
    }
}

/// Demand and access of one slot of a window.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotInput {
    pub slot: usize,
    pub access: CellAccess,
    pub lambda: [f64; 2],
    pub lambda_covered: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowProblem {
    pub cell: usize,
    pub window: SlicingWindow,
    pub selected: Vec<AccessPoint>,
    /// One entry per slot of the window, in order.
    pub slots: Vec<SlotInput>,
    pub base_stations: u32,
    pub weights: CostWeights,
    /// Penalty weight per satellite; missing entries count as 1.
    pub omega: BTreeMap<SatId, f64>,
    pub link: LinkParams,
    /// Already executed reservations, which the solver must keep.
    pub pinned: BTreeMap<(AccessPoint, Slice), f64>,
    /// First slot (absolute) that the objective and constraints cover.
    pub from_slot: usize,
}

impl WindowProblem {
    pub fn omega(&self, ap: AccessPoint) -> f64 {
        match ap {
            AccessPoint::Terrestrial => 1.0,
            AccessPoint::Satellite(s) => self.omega.get(&s).copied().unwrap_or(1.0),
        }
    }

    /// Slots covered by the objective.
    pub fn active_slots(&self) -> impl Iterator<Item = &SlotInput> + '_ {
        self.slots.iter().filter(move |s| s.slot >= self.from_slot)
    }

    fn unit_cost(&self, ap: AccessPoint) -> f64 {
        self.weights.beta1 * self.weights.alpha(ap) * self.link.class(ap).bandwidth_hz * self.omega(ap)
    }
}

/// Outcome of a local solve. Ratios are constant over the window and apply
/// at the slots where the access point is reachable.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LocalSolution {
    pub ratios: BTreeMap<AccessPoint, [f64; 2]>,
    pub active: BTreeMap<AccessPoint, [bool; 2]>,
    /// Weighted resource plus dissatisfaction cost over the covered slots.
    pub objective: f64,
    /// Largest relative demand shortfall over covered slots and slices.
    pub shortfall: f64,
}

impl LocalSolution {
    pub fn ratio(&self, ap: AccessPoint, slice: Slice) -> f64 {
        self.ratios.get(&ap).map(|r| r[slice.index()]).unwrap_or(0.0)
    }

    pub fn is_active(&self, ap: AccessPoint, slice: Slice) -> bool {
        self.active.get(&ap).map(|r| r[slice.index()]).unwrap_or(false)
    }

    /// Ratio in effect at one slot, zero when the access point is unreachable.
    pub fn ratio_at(&self, ap: AccessPoint, slice: Slice, access: &CellAccess) -> f64 {
        if access.accessible(ap) {
            self.ratio(ap, slice)
        } else {
            0.0
        }
    }

    pub fn is_feasible(&self) -> bool {
        self.shortfall <= FEASIBILITY_SLACK
    }

    /// Sum of both slices' ratios on one access point.
    pub fn total_ratio(&self, ap: AccessPoint) -> f64 {
        self.ratio(ap, Slice::DelaySensitive) + self.ratio(ap, Slice::DelayTolerant)
    }
}

/// Smallest ratio meeting the slice reliability target on one access point.
/// Returns `f64::INFINITY` when the delay bound is already consumed by
/// propagation, and a value above 1 when even the full resource falls short.
pub fn min_ratio_for_reliability(
    ap: AccessPoint,
    distance_m: f64,
    slice: Slice,
    epsilon: f64,
    theta: f64,
    params: &LinkParams,
) -> Result<f64, ReservationError> {
    if epsilon >= 1.0 {
        return Ok(0.0);
    }
    let bound = qos::effective_delay_bound(slice, ap, distance_m, params);
    if bound <= 0.0 {
        return Ok(f64::INFINITY);
    }
    let k = qos::rate_per_ratio(ap, distance_m, slice, params)?;
    Ok((1.0 / epsilon).ln() / (theta * k * bound))
}

/// `P1'` resource term: `sum_t sum_l sum_ap beta1 * alpha * b * B * omega`
/// without the `beta1` factor.
pub fn resource_cost(solution: &LocalSolution, problem: &WindowProblem) -> f64 {
    let mut total = 0.0;
    for s in problem.active_slots() {
        for (&ap, b) in &solution.ratios {
            if !s.access.accessible(ap) {
                continue;
            }
            let unit = problem.weights.alpha(ap) * problem.link.class(ap).bandwidth_hz * problem.omega(ap);
            total += unit * (b[0] + b[1]);
        }
    }
    total
}

/// Largest slice-2 violation probability plus `r - 1` over reachable access
/// points at slot `t`, floored at zero.
pub fn dissatisfaction_cost(solution: &LocalSolution, problem: &WindowProblem, t: usize) -> f64 {
    let Some(s) = problem.slots.iter().find(|s| s.slot == t) else {
        return 0.0;
    };
    let mut worst: f64 = 0.0;
    for (&ap, active) in &solution.active {
        let Some(link) = s.access.link(ap) else { continue };
        let b = solution.ratio(ap, Slice::DelayTolerant);
        let p = slice_probability(ap, link.distance_m, b, Slice::DelayTolerant, &problem.link);
        let r = if active[1] { 1.0 } else { 0.0 };
        worst = worst.max(p + r - 1.0);
    }
    worst
}

/// Violation probability of one slice queue at ratio `b`.
pub fn slice_probability(ap: AccessPoint, distance_m: f64, b: f64, slice: Slice, params: &LinkParams) -> f64 {
    let bound = qos::effective_delay_bound(slice, ap, distance_m, params);
    let rate = b * qos::rate_per_ratio(ap, distance_m, slice, params).unwrap_or(0.0);
    qos::violation_probability(rate, params.theta, bound)
}

/// Objective of `P1'` over the covered slots.
pub fn window_objective(solution: &LocalSolution, problem: &WindowProblem) -> f64 {
    let res = problem.weights.beta1 * resource_cost(solution, problem);
    let dis: f64 = problem
        .active_slots()
        .map(|s| dissatisfaction_cost(solution, problem, s.slot))
        .sum();
    res + problem.weights.beta2 * dis
}

/// Supported intensity of one slice at one slot under a solution.
pub fn supported_at(solution: &LocalSolution, problem: &WindowProblem, s: &SlotInput, slice: Slice) -> f64 {
    let mut total = 0.0;
    for (&ap, b) in &solution.ratios {
        let Some(link) = s.access.link(ap) else { continue };
        let rate = b[slice.index()] * qos::rate_per_ratio(ap, link.distance_m, slice, &problem.link).unwrap_or(0.0);
        total += qos::supported_intensity(
            rate,
            problem.link.theta,
            ap,
            problem.base_stations,
            s.lambda_covered[slice.index()],
        );
    }
    total
}

/// Largest relative demand shortfall over the covered slots.
pub fn demand_shortfall(solution: &LocalSolution, problem: &WindowProblem) -> f64 {
    let mut worst: f64 = 0.0;
    for s in problem.active_slots() {
        for slice in Slice::ALL {
            let need = s.lambda[slice.index()];
            if need <= 0.0 {
                continue;
            }
            let have = supported_at(solution, problem, s, slice);
            worst = worst.max((need - have) / need);
        }
    }
    worst.max(0.0)
}

/// Per-AP data shared by the model builder and the cut generator.
struct ApData {
    ap: AccessPoint,
    /// Slots (index into the covered slot list) where the AP is reachable,
    /// with the packets/s per unit ratio for each slice.
    reach: Vec<(usize, [f64; 2], [f64; 2])>,
    /// Reliability floor of slice 1 over the covered slots.
    floor: f64,
}

fn ap_data(problem: &WindowProblem, covered: &[&SlotInput]) -> Result<Vec<ApData>, ReservationError> {
    let theta = problem.link.theta;
    let mut out = Vec::new();
    for &ap in &problem.selected {
        let mut reach = Vec::new();
        let mut floor: f64 = 0.0;
        for (i, s) in covered.iter().enumerate() {
            let Some(link) = s.access.link(ap) else { continue };
            let d = link.distance_m;
            let k = [
                qos::rate_per_ratio(ap, d, Slice::DelaySensitive, &problem.link)?,
                qos::rate_per_ratio(ap, d, Slice::DelayTolerant, &problem.link)?,
            ];
            // exponent per unit ratio of the violation probability
            let kappa: [f64; 2] = std::array::from_fn(|l| {
                let bound = qos::effective_delay_bound(Slice::from_index(l), ap, d, &problem.link);
                if bound <= 0.0 {
                    0.0
                } else {
                    theta * k[l] * bound
                }
            });
            floor = floor.max(min_ratio_for_reliability(
                ap,
                d,
                Slice::DelaySensitive,
                problem.link.epsilon,
                theta,
                &problem.link,
            )?);
            reach.push((i, k, kappa));
        }
        out.push(ApData { ap, reach, floor });
    }
    Ok(out)
}

#[derive(Clone, Copy)]
enum Ratio {
    Fixed(f64),
    Free { b: Variable, r: Variable },
}

struct Model {
    problem: Problem,
    ratios: Vec<[Ratio; 2]>,
    z: Vec<Variable>,
}

/// Solves the window problem. Infeasible demand is not an error: the
/// returned solution then covers as much demand as the resources allow and
/// reports the remaining relative shortfall.
pub fn solve_local(problem: &WindowProblem) -> Result<LocalSolution, ReservationError> {
    if problem.slots.is_empty() {
        return Err(ReservationError::EmptyWindow);
    }
    let covered: Vec<&SlotInput> = problem.active_slots().collect();
    let data = ap_data(problem, &covered)?;
    let c = qos::intensity_factor(problem.link.theta);

    // cut points per (ap index, covered slot index)
    let mut cuts: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for (a, d) in data.iter().enumerate() {
        for &(i, _, kappa) in &d.reach {
            let k = kappa[1];
            let pts = if k > 0.0 {
                INITIAL_TANGENTS.iter().map(|x| (x / k).min(1.0)).collect()
            } else {
                vec![0.0]
            };
            cuts.insert((a, i), pts);
        }
    }

    // Outer loop: the MILP over the current tangent envelope gives a lower
    // bound and an activation pattern; the pattern is then refined as a
    // warm-started LP until its envelope is tight, which gives an upper bound.
    let mut best: Option<Refined> = None;
    for _ in 0..MAX_PATTERN_ROUNDS {
        let model = build_model(problem, &covered, &data, &cuts, c, None);
        let sol = match &best {
            None => into_solution(model.problem.solve())?,
            Some(b) => {
                // the incumbent lets branch and bound prune everything that
                // cannot improve on it by more than the accepted gap
                let mut options = SolveOptions::default();
                options.mip_gap = OPTIMALITY_GAP / b.upper.abs().max(1.0);
                options.warm_start = Some(b.hint.clone());
                into_solution(model.problem.solve_with(options))?
            }
        };
        let lower = sol.stats().best_bound.unwrap_or(sol.objective()).min(sol.objective());
        if best.as_ref().is_some_and(|b| lower >= b.upper - OPTIMALITY_GAP) {
            break;
        }
        let (_, raw, _) = read_values(&model, &sol, &data);
        let refined = refine_pattern(problem, &covered, &data, &mut cuts, c, &raw)?;
        let improved = best.as_ref().is_none_or(|b| refined.upper < b.upper);
        if improved {
            best = Some(refined);
        }
        if lower >= best.as_ref().map_or(f64::INFINITY, |b| b.upper) - OPTIMALITY_GAP {
            break;
        }
    }
    let Refined { values, flags, .. } = best.expect("at least one round");
    let mut solution = LocalSolution::default();
    for (a, d) in data.iter().enumerate() {
        solution.ratios.insert(d.ap, values[a]);
        solution.active.insert(d.ap, flags[a]);
    }
    solution.objective = window_objective(&solution, problem);
    solution.shortfall = demand_shortfall(&solution, problem);
    Ok(solution)
}

fn into_solution(outcome: Result<SolveOutcome, microlp::Error>) -> Result<Solution, ReservationError> {
    outcome
        .map_err(|e| ReservationError::Solver(e.to_string()))?
        .into_solution()
        .map_err(|_| ReservationError::Solver("interrupted".into()))
}

/// Cleaned ratios and flags, plus the raw activation pattern.
fn read_values(model: &Model, sol: &Solution, data: &[ApData]) -> (Vec<[f64; 2]>, Vec<[bool; 2]>, Vec<[bool; 2]>) {
    let mut values = Vec::with_capacity(data.len());
    let mut flags = Vec::with_capacity(data.len());
    let mut raw = Vec::with_capacity(data.len());
    for (a, d) in data.iter().enumerate() {
        let mut b = [0.0; 2];
        let mut r = [false; 2];
        for l in 0..2 {
            match model.ratios[a][l] {
                Ratio::Fixed(v) => {
                    b[l] = v;
                    r[l] = v > 0.0;
                }
                Ratio::Free { b: bv, r: rv } => {
                    b[l] = sol.var_value(bv).clamp(0.0, 1.0);
                    r[l] = sol.var_value(rv) > 0.5;
                }
            }
        }
        raw.push(r);
        clean_ratios(&mut b, &mut r, d.floor, &model.ratios[a]);
        values.push(b);
        flags.push(r);
    }
    (values, flags, raw)
}

/// Best point found for one activation pattern.
struct Refined {
    upper: f64,
    values: Vec<[f64; 2]>,
    flags: Vec<[bool; 2]>,
    /// Full variable assignment, feasible for the MILP.
    hint: Vec<(Variable, f64)>,
}

/// Tightens the envelope for a fixed activation pattern. Returns the
/// model objective of the refined point, envelope error included, with its
/// ratios and flags.
fn refine_pattern(
    problem: &WindowProblem,
    covered: &[&SlotInput],
    data: &[ApData],
    cuts: &mut BTreeMap<(usize, usize), Vec<f64>>,
    c: f64,
    pattern: &[[bool; 2]],
) -> Result<Refined, ReservationError> {
    let mut rounds = 0;
    let (model, sol, upper) = loop {
        let model = build_model(problem, covered, data, cuts, c, Some(pattern));
        let sol = into_solution(model.problem.solve())?;
        // dissatisfaction the envelope misses at this point, and the
        // tangents that would close it
        let mut gap = vec![0.0f64; covered.len()];
        let mut violated = Vec::new();
        for (a, d) in data.iter().enumerate() {
            let Ratio::Free { b, .. } = model.ratios[a][1] else { continue };
            if !pattern[a][1] {
                continue;
            }
            let b0 = sol.var_value(b).clamp(0.0, 1.0);
            for &(i, _, kappa) in &d.reach {
                let k = kappa[1];
                if k <= 0.0 {
                    continue;
                }
                let excess = (-k * b0).exp() - sol.var_value(model.z[i]);
                gap[i] = gap[i].max(excess);
                if excess > CUT_THRESHOLD {
                    violated.push((a, i, b0));
                }
            }
        }
        let missing = problem.weights.beta2 * gap.iter().sum::<f64>();
        let upper = sol.objective() + missing;
        if missing <= ENVELOPE_GAP || rounds == MAX_CUT_ROUNDS {
            break (model, sol, upper);
        }
        rounds += 1;
        let mut added = false;
        for (a, i, b0) in violated {
            let pts = cuts.get_mut(&(a, i)).expect("cut entry");
            if !pts.iter().any(|p| (p - b0).abs() < 1e-14) {
                pts.push(b0);
                added = true;
            }
        }
        if !added {
            break (model, sol, upper);
        }
    };
    // a full assignment for the MILP: each z lifted onto the true maximum so
    // every tangent holds
    let mut top = vec![0.0f64; covered.len()];
    for (a, d) in data.iter().enumerate() {
        if !pattern[a][1] {
            continue;
        }
        let b0 = match model.ratios[a][1] {
            Ratio::Free { b, .. } => sol.var_value(b).clamp(0.0, 1.0),
            Ratio::Fixed(v) => v,
        };
        for &(i, _, kappa) in &d.reach {
            top[i] = top[i].max((-kappa[1] * b0).exp());
        }
    }
    let mut hint: Vec<(Variable, f64)> = sol.iter().collect();
    for (i, &z) in model.z.iter().enumerate() {
        if let Some(h) = hint.iter_mut().find(|h| h.0 == z) {
            h.1 = h.1.max(top[i]);
        }
    }
    let (values, flags, _) = read_values(&model, &sol, data);
    Ok(Refined { upper, values, flags, hint })
}

/// Removes solver noise: drops inactive ratios, lifts slice-1 ratios onto
/// their reliability floor and keeps the pair within one unit.
fn clean_ratios(b: &mut [f64; 2], r: &mut [bool; 2], floor: f64, kinds: &[Ratio; 2]) {
    for l in 0..2 {
        if matches!(kinds[l], Ratio::Fixed(_)) {
            continue;
        }
        if !r[l] || b[l] < 1e-12 {
            b[l] = 0.0;
        }
    }
    if let Ratio::Free { .. } = kinds[0] {
        if r[0] && b[0] < floor {
            b[0] = floor.min(1.0);
        }
    }
    let excess = b[0] + b[1] - 1.0;
    if excess > 0.0 {
        if let Ratio::Free { .. } = kinds[1] {
            b[1] = (b[1] - excess).max(0.0);
        } else if let Ratio::Free { .. } = kinds[0] {
            b[0] = (b[0] - excess).max(0.0);
        }
    }
    for l in 0..2 {
        if !matches!(kinds[l], Ratio::Fixed(_)) {
            r[l] = b[l] > 0.0;
        }
    }
}

fn build_model(
    problem: &WindowProblem,
    covered: &[&SlotInput],
    data: &[ApData],
    cuts: &BTreeMap<(usize, usize), Vec<f64>>,
    c: f64,
    pattern: Option<&[[bool; 2]]>,
) -> Model {
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let weights = problem.weights;
    let mut ratios = Vec::with_capacity(data.len());
    for (a, d) in data.iter().enumerate() {
        let reach = d.reach.len() as f64;
        let unit = problem.unit_cost(d.ap) * reach;
        let mut pair = [Ratio::Fixed(0.0); 2];
        for (l, slot) in pair.iter_mut().enumerate() {
            let slice = Slice::from_index(l);
            if let Some(&v) = problem.pinned.get(&(d.ap, slice)) {
                *slot = Ratio::Fixed(v);
                continue;
            }
            if d.reach.is_empty() || (l == 0 && d.floor > 1.0) {
                *slot = Ratio::Fixed(0.0);
                continue;
            }
            let (b, r) = match pattern {
                Some(p) => {
                    let on = if p[a][l] { 1.0 } else { 0.0 };
                    (lp.add_var(unit, (0.0, on)), lp.add_var(0.0, (on, on)))
                }
                None => (lp.add_var(unit, (0.0, 1.0)), lp.add_binary_var(0.0)),
            };
            lp.add_constraint(&[(b, 1.0), (r, -1.0)], ComparisonOp::Le, 0.0);
            if l == 0 && d.floor > 0.0 {
                lp.add_constraint(&[(b, 1.0), (r, -d.floor)], ComparisonOp::Ge, 0.0);
            }
            *slot = Ratio::Free { b, r };
        }
        // both slices share one unit of the access point
        let mut expr = LinearExpr::empty();
        let mut rhs = 1.0;
        for slot in &pair {
            match *slot {
                Ratio::Fixed(v) => rhs -= v,
                Ratio::Free { b, .. } => expr.add(b, 1.0),
            }
        }
        if pair.iter().any(|p| matches!(p, Ratio::Free { .. })) {
            lp.add_constraint(expr, ComparisonOp::Le, rhs.max(0.0));
        }
        ratios.push(pair);
    }

    let z: Vec<Variable> = covered.iter().map(|_| lp.add_var(weights.beta2, (0.0, f64::INFINITY))).collect();

    for (i, s) in covered.iter().enumerate() {
        for slice in Slice::ALL {
            let l = slice.index();
            let need = s.lambda[l];
            if need <= 0.0 {
                continue;
            }
            let mut expr = LinearExpr::empty();
            let mut rhs = need;
            for (a, d) in data.iter().enumerate() {
                let Some(&(_, k, _)) = d.reach.iter().find(|e| e.0 == i) else { continue };
                let gain = c * k[l];
                if d.ap == AccessPoint::Terrestrial {
                    // terrestrial support is capped by the covered demand
                    let cap = s.lambda_covered[l];
                    let scale = problem.base_stations as f64;
                    let y = lp.add_var(0.0, (0.0, cap.max(0.0)));
                    match ratios[a][l] {
                        Ratio::Fixed(v) => {
                            lp.add_constraint(&[(y, 1.0)], ComparisonOp::Le, gain * scale * v);
                        }
                        Ratio::Free { b, .. } => {
                            lp.add_constraint(&[(y, 1.0), (b, -gain * scale)], ComparisonOp::Le, 0.0);
                        }
                    }
                    expr.add(y, 1.0);
                } else {
                    match ratios[a][l] {
                        Ratio::Fixed(v) => rhs -= gain * v,
                        Ratio::Free { b, .. } => expr.add(b, gain),
                    }
                }
            }
            let short = lp.add_var(SHORTFALL_PRICE / need, (0.0, need));
            expr.add(short, 1.0);
            lp.add_constraint(expr, ComparisonOp::Ge, rhs);
        }
    }

    for (a, d) in data.iter().enumerate() {
        for &(i, _, kappa) in &d.reach {
            let k = kappa[1];
            match ratios[a][1] {
                Ratio::Fixed(v) => {
                    if v > 0.0 {
                        let p = if k > 0.0 { (-k * v).exp() } else { 1.0 };
                        lp.add_constraint(&[(z[i], 1.0)], ComparisonOp::Ge, p);
                    }
                }
                Ratio::Free { b, r } => {
                    if k <= 0.0 {
                        // z >= 1 + r - 1
                        lp.add_constraint(&[(z[i], 1.0), (r, -1.0)], ComparisonOp::Ge, 0.0);
                        continue;
                    }
                    // z >= g(b0) + g'(b0) (b - b0) + r - 1
                    for &b0 in &cuts[&(a, i)] {
                        let g = (-k * b0).exp();
                        let slope = -k * g;
                        lp.add_constraint(
                            &[(z[i], 1.0), (b, -slope), (r, -1.0)],
                            ComparisonOp::Ge,
                            g - slope * b0 - 1.0,
                        );
                    }
                }
            }
        }
    }

    Model { problem: lp, ratios, z }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::ApLink;
    use crate::qos::test_support::simple_params;

    const S1: AccessPoint = AccessPoint::Satellite(SatId(1));
    const S2: AccessPoint = AccessPoint::Satellite(SatId(2));

    fn weights() -> CostWeights {
        CostWeights {
            beta1: 1.0,
            beta2: 10.0,
            beta3: 100.0,
            alpha_terrestrial: 1e-8,
            alpha_satellite: 5e-8,
        }
    }

    fn link(ap: AccessPoint, d: f64) -> ApLink {
        ApLink { ap, distance_m: d, prop_delay_s: if ap.is_satellite() { d / 2.998e8 } else { 0.0 }, elevation_deg: 60.0, range_rate_mps: 0.0 }
    }

    fn problem(aps: &[(AccessPoint, f64)], lambda: [f64; 2], covered: [f64; 2], slots: usize) -> WindowProblem {
        let access = CellAccess { cell_id: 1, links: aps.iter().map(|&(ap, d)| link(ap, d)).collect() };
        WindowProblem {
            cell: 0,
            window: SlicingWindow { cell: 0, index: 0, start: 0, len: slots },
            selected: aps.iter().map(|a| a.0).collect(),
            slots: (0..slots)
                .map(|t| SlotInput { slot: t, access: access.clone(), lambda, lambda_covered: covered })
                .collect(),
            base_stations: 1,
            weights: weights(),
            omega: BTreeMap::new(),
            link: simple_params(),
            pinned: BTreeMap::new(),
            from_slot: 0,
        }
    }

    #[test]
    fn min_ratio_examples() {
        let p = simple_params();
        assert_eq!(min_ratio_for_reliability(S1, 1.0, Slice::DelaySensitive, 1.0, 1.0, &p).unwrap(), 0.0);
        // rate per ratio at d = 1 is 200 packets/s for slice 1
        let b = min_ratio_for_reliability(AccessPoint::Terrestrial, 1.0, Slice::DelaySensitive, 0.01, 1.0, &p).unwrap();
        assert!((b - 100f64.ln() / 10.0).abs() < 1e-12);
        assert!(min_ratio_for_reliability(S1, 15_000e3, Slice::DelaySensitive, 0.01, 1.0, &p).unwrap().is_infinite());
    }

    #[test]
    fn resource_cost_example() {
        let mut p = problem(&[(AccessPoint::Terrestrial, 1.0)], [0.0; 2], [0.0; 2], 1);
        p.link.terrestrial.bandwidth_hz = 10e6;
        p.weights.alpha_terrestrial = 1e-6;
        let mut s = LocalSolution::default();
        s.ratios.insert(AccessPoint::Terrestrial, [0.5, 0.0]);
        assert!((resource_cost(&s, &p) - 5.0).abs() < 1e-12);
        s.ratios.insert(AccessPoint::Terrestrial, [0.0; 2]);
        assert_eq!(resource_cost(&s, &p), 0.0);
    }

    #[test]
    fn omega_scales_satellite_cost() {
        let mut p = problem(&[(S1, 1.0)], [0.0; 2], [0.0; 2], 1);
        let mut s = LocalSolution::default();
        s.ratios.insert(S1, [0.5, 0.0]);
        let base = resource_cost(&s, &p);
        p.omega.insert(SatId(1), 2.0);
        assert!((resource_cost(&s, &p) - 2.0 * base).abs() < 1e-12);
    }

    #[test]
    fn dissatisfaction_examples() {
        let p = problem(&[(S1, 1.0), (S2, 1.0)], [0.0; 2], [0.0; 2], 1);
        let mut s = LocalSolution::default();
        assert_eq!(dissatisfaction_cost(&s, &p, 0), 0.0);
        // slice 2: k = 10e6 / 2e6 * 4 = 20 packets/s per unit, D = 0.3 s
        let b_for = |prob: f64| -prob.ln() / (20.0 * (0.3 - 1.0 / 2.998e8));
        s.ratios.insert(S1, [0.0, b_for(0.1)]);
        s.active.insert(S1, [false, true]);
        assert!((dissatisfaction_cost(&s, &p, 0) - 0.1).abs() < 1e-12);
        s.ratios.insert(S1, [0.0, b_for(0.05)]);
        s.ratios.insert(S2, [0.0, b_for(0.2)]);
        s.active.insert(S2, [false, true]);
        assert!((dissatisfaction_cost(&s, &p, 0) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn zero_demand_reserves_nothing() {
        let p = problem(&[(AccessPoint::Terrestrial, 1.0), (S1, 1.0)], [0.0; 2], [0.0; 2], 3);
        let s = solve_local(&p).unwrap();
        assert_eq!(s.objective, 0.0);
        for b in s.ratios.values() {
            assert_eq!(*b, [0.0, 0.0]);
        }
        for r in s.active.values() {
            assert_eq!(*r, [false, false]);
        }
    }

    #[test]
    fn single_satellite_closed_form() {
        let p0 = problem(&[(S1, 1.0)], [0.0; 2], [0.0; 2], 1);
        let c = qos::intensity_factor(1.0);
        // k1 = 200 packets/s per unit ratio; D = 0.05 - 1/c_light
        let k1 = 200.0;
        let full = c * k1;
        let lambda = 0.98 * full;
        let mut p = p0.clone();
        p.slots[0].lambda = [lambda, 0.0];
        let s = solve_local(&p).unwrap();
        let bound = 0.05 - 1.0 / 2.998e8;
        let b_eps = 100f64.ln() / (k1 * bound);
        let b_dem = lambda / full;
        assert!((s.ratio(S1, Slice::DelaySensitive) - b_eps.max(b_dem)).abs() < 1e-6);
        assert!(s.is_feasible());
    }

    #[test]
    fn infeasible_demand_reports_shortfall() {
        let mut p = problem(&[(S1, 1.0)], [0.0; 2], [0.0; 2], 2);
        p.slots[1].lambda = [1e6, 0.0];
        let s = solve_local(&p).unwrap();
        assert!(!s.is_feasible());
        assert!((s.ratio(S1, Slice::DelaySensitive) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pinned_values_are_kept() {
        let mut p = problem(&[(AccessPoint::Terrestrial, 1.0), (S1, 1.0)], [50.0, 5.0], [50.0, 5.0], 2);
        p.pinned.insert((S1, Slice::DelaySensitive), 0.7);
        let s = solve_local(&p).unwrap();
        assert_eq!(s.ratio(S1, Slice::DelaySensitive), 0.7);
        assert!(s.ratio(S1, Slice::DelayTolerant) <= 0.3 + 1e-12);
    }
}
