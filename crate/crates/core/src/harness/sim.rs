//! Time-slotted simulation of one episode under one scheme.

use std::cell::Cell as Counter;
use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::constellation::{self, AccessPoint, AccessSnapshot, ApLink, CellAccess, SatId, SPEED_OF_LIGHT};
use crate::coordination::{run_idoa, CellRequest, IdoaConfig, InteractionLog, ReservationPlan, SatelliteLedger, CAPACITY_SLACK};
use crate::demand::{generate_trace, plan_windows, DemandTrace, SlicingWindow};
use crate::marl::observation::{encode_observation, Observation, ObservationConfig};
use crate::marl::policy::Action;
use crate::marl::ppo::{window_reward, RewardWeights};
use crate::qos::{self, LinkParams, Slice};
use crate::reservation::{solve_local, slice_probability, CostWeights, LocalSolution, SlotInput, WindowProblem};

use super::metrics::{CostBreakdown, MetricsReport, SlotRecord};
use super::scenario::{AccessModel, Scenario};
use super::HarnessError;

/// Relative slack on demand and reliability checks of executed plans.
pub const CHECK_SLACK: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Scheme {
    /// Learned satellite selection, local solve, coordination.
    Drs,
    /// Every reachable access point, local solve, coordination.
    Idoa,
    /// Learned reservation ratios, capacity enforcement only.
    PureAmappo,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Drs => "drs",
            Scheme::Idoa => "idoa",
            Scheme::PureAmappo => "pure_amappo",
        }
    }
}

/// Decentralized decision maker: sees one cell's observation only.
pub trait Controller {
    fn act(&mut self, obs: &Observation) -> Action;
}

impl<F: FnMut(&Observation) -> Action> Controller for F {
    fn act(&mut self, obs: &Observation) -> Action {
        self(obs)
    }
}

/// Everything about a scenario that does not change between episodes.
#[derive(Debug, Clone)]
pub struct World {
    pub scenario: Scenario,
    pub link: LinkParams,
    pub weights: CostWeights,
    pub reward: RewardWeights,
    pub idoa: IdoaConfig,
    pub trace: DemandTrace,
    pub windows: Vec<Vec<SlicingWindow>>,
    pub access: Vec<AccessSnapshot>,
    pub observation: ObservationConfig,
}

impl World {
    pub fn new(scenario: &Scenario) -> Result<Self, HarnessError> {
        let trace = generate_trace(&scenario.demand, scenario.horizon);
        Self::with_trace(scenario, trace)
    }

    pub fn with_trace(scenario: &Scenario, trace: DemandTrace) -> Result<Self, HarnessError> {
        let errs = scenario.validate();
        if !errs.is_empty() {
            return Err(HarnessError::Invalid(errs));
        }
        if trace.horizon != scenario.horizon || trace.cell_count() != scenario.cells.len() {
            return Err(HarnessError::Invalid(vec!["demand trace does not match the scenario".into()]));
        }
        let access = access_timeline(scenario);
        let rule = scenario.window_rule();
        let windows = (0..scenario.cells.len()).map(|n| plan_windows(&trace, n, &rule)).collect();
        let mut demand_scale = [0.0f64; 2];
        for n in 0..trace.cell_count() {
            for slice in Slice::ALL {
                for t in 0..trace.horizon {
                    let l = slice.index();
                    demand_scale[l] = demand_scale[l].max(trace.lambda(n, slice, t));
                }
            }
        }
        let c = &scenario.constellation;
        let observation = ObservationConfig {
            a_max: scenario.rl.a_max,
            w_max: scenario.w_max,
            demand_scale,
            distance_scale: constellation::slant_range(c.earth_radius_m, c.altitude_m, 0.0),
            speed_scale: c.orbital_speed(),
        };
        Ok(Self {
            scenario: scenario.clone(),
            link: scenario.link_params(),
            weights: scenario.cost_weights(),
            reward: RewardWeights {
                beta1: scenario.costs.beta1,
                beta2: scenario.costs.beta2,
                p1: scenario.costs.p1,
                p2: scenario.costs.p2,
            },
            idoa: scenario.idoa_config(),
            trace,
            windows,
            access,
            observation,
        })
    }

    pub fn horizon(&self) -> usize {
        self.scenario.horizon
    }

    pub fn cell_count(&self) -> usize {
        self.scenario.cells.len()
    }

    pub fn cell_access(&self, n: usize, t: usize) -> &CellAccess {
        self.access[t].cell(n)
    }

    /// Dimension of the critic input: every cell's latest observation and
    /// its age, then a one-hot of the deciding cell.
    pub fn state_dim(&self) -> usize {
        self.cell_count() * (self.observation.dim() + 2)
    }
}

/// Access sets of every cell at every slot.
pub fn access_timeline(scenario: &Scenario) -> Vec<AccessSnapshot> {
    match &scenario.access {
        AccessModel::Orbital => {
            let cells = scenario.cell_map();
            (0..scenario.horizon)
                .into_par_iter()
                .map(|t| constellation::access_snapshot(&scenario.constellation, &cells, t, scenario.slot_duration_s))
                .collect()
        }
        AccessModel::Scripted { links } => (0..scenario.horizon)
            .map(|t| {
                let cells = scenario
                    .cells
                    .iter()
                    .map(|cell| {
                        let mut out = Vec::new();
                        if cell.has_terrestrial() {
                            out.push(constellation::terrestrial_link(cell));
                        }
                        let mut sats: Vec<ApLink> = links
                            .iter()
                            .filter(|l| l.cell_id == cell.cell_id && (l.from_slot..l.to_slot).contains(&t))
                            .map(|l| ApLink {
                                ap: AccessPoint::Satellite(SatId(l.satellite)),
                                distance_m: l.distance_m,
                                prop_delay_s: l.distance_m / SPEED_OF_LIGHT,
                                elevation_deg: l.elevation_deg,
                                range_rate_mps: 0.0,
                            })
                            .collect();
                        sats.sort_by_key(|l| l.ap);
                        sats.dedup_by_key(|l| l.ap);
                        out.extend(sats);
                        CellAccess {
                            cell_id: cell.cell_id,
                            links: out,
                        }
                    })
                    .collect();
                AccessSnapshot { slot: t, cells }
            })
            .collect(),
    }
}

/// One cell decision and what came of it.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub cell: usize,
    pub window: SlicingWindow,
    pub observation: Observation,
    pub action: Option<Action>,
    /// Global critic state at the decision slot; empty unless requested.
    pub state: Vec<f64>,
    pub reward: f64,
    /// The window has ended within the horizon.
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub report: MetricsReport,
    pub decisions: Vec<Decision>,
    pub plan: ReservationPlan,
}

#[derive(Default)]
pub struct EpisodeOptions<'a> {
    /// Build critic states for every decision.
    pub record_states: bool,
    pub log: Option<&'a mut InteractionLog>,
}

struct CellState {
    next_window: usize,
    window: Option<SlicingWindow>,
    problem: Option<WindowProblem>,
    solution: LocalSolution,
    executed: BTreeSet<AccessPoint>,
    previous: LocalSolution,
    decision: Option<usize>,
    latest_obs: Option<(usize, Vec<f64>)>,
}

fn slot_inputs(world: &World, n: usize, window: &SlicingWindow) -> Vec<SlotInput> {
    window
        .slots()
        .map(|t| SlotInput {
            slot: t,
            access: world.cell_access(n, t).clone(),
            lambda: [world.trace.lambda(n, Slice::DelaySensitive, t), world.trace.lambda(n, Slice::DelayTolerant, t)],
            lambda_covered: [
                world.trace.lambda_covered(n, Slice::DelaySensitive, t),
                world.trace.lambda_covered(n, Slice::DelayTolerant, t),
            ],
        })
        .collect()
}

fn pinned_values(state: &CellState) -> BTreeMap<(AccessPoint, Slice), f64> {
    let mut pinned = BTreeMap::new();
    for &ap in &state.executed {
        for slice in Slice::ALL {
            pinned.insert((ap, slice), state.solution.ratio(ap, slice));
        }
    }
    pinned
}

fn critic_state(world: &World, states: &[CellState], t: usize, cell: usize) -> Vec<f64> {
    let dim = world.observation.dim();
    let mut out = Vec::with_capacity(world.state_dim());
    for s in states {
        match &s.latest_obs {
            Some((at, f)) => {
                out.extend_from_slice(f);
                out.push(((t - at) as f64 / world.scenario.w_max as f64).min(1.0));
            }
            None => {
                out.extend(std::iter::repeat_n(0.0, dim));
                out.push(1.0);
            }
        }
    }
    out.extend((0..states.len()).map(|n| if n == cell { 1.0 } else { 0.0 }));
    out
}

fn solution_from_ratios(obs: &Observation, action: &Action) -> LocalSolution {
    let ratios = action.ratios(&obs.mask);
    let mut sol = LocalSolution::default();
    for (j, ap) in obs.slots.iter().enumerate() {
        let Some(ap) = ap else { continue };
        let b = ratios[j];
        sol.ratios.insert(*ap, b);
        sol.active.insert(*ap, [b[0] > 0.0, b[1] > 0.0]);
    }
    sol
}

/// Costs of cell `n` at slot `t` under the executed plan, plus the number
/// of malformed reservations found.
pub fn slot_cost(world: &World, plan: &ReservationPlan, n: usize, t: usize) -> (CostBreakdown, usize) {
    let access = world.cell_access(n, t);
    let cell = &world.scenario.cells[n];
    let link = &world.link;
    let mut c = CostBreakdown::default();
    let mut supported = [0.0; 2];
    let mut bad = 0;
    for (ap, b) in plan.cell_slot(n, t) {
        if b[0] + b[1] > 1.0 + CAPACITY_SLACK || b[0] < 0.0 || b[1] < 0.0 {
            bad += 1;
        }
        let Some(l) = access.link(ap) else {
            if b[0] + b[1] > 0.0 {
                bad += 1;
            }
            continue;
        };
        let unit = world.weights.alpha(ap) * link.class(ap).bandwidth_hz;
        c.res_cost += unit * (b[0] + b[1]);
        if ap.is_satellite() {
            c.satellite_res_cost += unit * (b[0] + b[1]);
            c.satellite_ratio += b[0] + b[1];
        }
        if b[0] > 0.0 {
            let p = slice_probability(ap, l.distance_m, b[0], Slice::DelaySensitive, link);
            if p > link.epsilon * (1.0 + CHECK_SLACK) {
                c.reliability_violation = true;
            }
        }
        if b[1] > 0.0 {
            let p = slice_probability(ap, l.distance_m, b[1], Slice::DelayTolerant, link);
            c.dis_cost = c.dis_cost.max(p);
        }
        for slice in Slice::ALL {
            let i = slice.index();
            let rate = b[i] * qos::rate_per_ratio(ap, l.distance_m, slice, link).unwrap_or(0.0);
            supported[i] += qos::supported_intensity(
                rate,
                link.theta,
                ap,
                cell.base_stations,
                world.trace.lambda_covered(n, slice, t),
            );
        }
    }
    for slice in Slice::ALL {
        let i = slice.index();
        let need = world.trace.lambda(n, slice, t);
        if need > 0.0 {
            c.shortfall[i] = supported[i] < need * (1.0 - CHECK_SLACK) - 1e-12;
            c.unserved[i] = ((need - supported[i]) / need).max(0.0);
        }
    }
    (c, bad)
}

/// Runs one episode. `controller` is consulted by the learned schemes at
/// every window start; the benchmark without learning ignores it.
pub fn run_episode(
    world: &World,
    scheme: Scheme,
    mut controller: Option<&mut dyn Controller>,
    mut options: EpisodeOptions<'_>,
) -> Result<Episode, HarnessError> {
    if scheme != Scheme::Idoa && controller.is_none() {
        return Err(HarnessError::MissingPolicy(scheme.name()));
    }
    let horizon = world.horizon();
    let cells = world.cell_count();
    let mut plan = ReservationPlan::new(horizon);
    let mut ledger = SatelliteLedger::new(world.scenario.beam_capacity);
    let mut decisions: Vec<Decision> = Vec::new();
    let mut costs: Vec<Vec<CostBreakdown>> = vec![Vec::with_capacity(horizon); cells];
    let mut records = Vec::with_capacity(horizon * cells);
    let mut idoa_iterations = Vec::new();
    let mut ratio_violations = 0;
    let failures = Counter::new(0usize);
    let idoa_config = match scheme {
        Scheme::PureAmappo => IdoaConfig {
            iter_max: 1,
            ..world.idoa.clone()
        },
        _ => world.idoa.clone(),
    };
    let mut states: Vec<CellState> = (0..cells)
        .map(|_| CellState {
            next_window: 0,
            window: None,
            problem: None,
            solution: LocalSolution::default(),
            executed: BTreeSet::new(),
            previous: LocalSolution::default(),
            decision: None,
            latest_obs: None,
        })
        .collect();

    for t in 0..horizon {
        // agents whose windows open now act on their own observation
        let mut started = Vec::new();
        for n in 0..cells {
            let st = &mut states[n];
            let Some(&window) = world.windows[n].get(st.next_window) else { continue };
            if window.start != t {
                continue;
            }
            st.next_window += 1;
            let access: Vec<&CellAccess> = window.slots().map(|s| world.cell_access(n, s)).collect();
            let obs = encode_observation(&world.observation, &window, &world.trace, &access, &st.previous);
            let (selected, action) = match scheme {
                Scheme::Idoa => {
                    let union = constellation::window_access_union(access.iter().copied())
                        .expect("window has slots");
                    (union.into_iter().collect::<Vec<_>>(), None)
                }
                Scheme::Drs => {
                    let action = controller.as_deref_mut().expect("checked above").act(&obs);
                    let Action::Select(bits) = &action else {
                        return Err(HarnessError::ActionShape(scheme.name()));
                    };
                    let selected = obs
                        .slots
                        .iter()
                        .enumerate()
                        .filter(|&(j, ap)| ap.is_some() && obs.mask[j] && (j == 0 || bits[j]))
                        .map(|(_, ap)| ap.expect("checked"))
                        .collect();
                    (selected, Some(action))
                }
                Scheme::PureAmappo => {
                    let action = controller.as_deref_mut().expect("checked above").act(&obs);
                    if !matches!(action, Action::Ratios(_)) {
                        return Err(HarnessError::ActionShape(scheme.name()));
                    }
                    (obs.slots.iter().flatten().copied().collect(), Some(action))
                }
            };
            let problem = WindowProblem {
                cell: n,
                window,
                selected,
                slots: slot_inputs(world, n, &window),
                base_stations: world.scenario.cells[n].base_stations,
                weights: world.weights.clone(),
                omega: BTreeMap::new(),
                link: world.link.clone(),
                pinned: BTreeMap::new(),
                from_slot: window.start,
            };
            st.solution = match (&action, scheme) {
                (Some(a), Scheme::PureAmappo) => solution_from_ratios(&obs, a),
                _ => match solve_local(&problem) {
                    Ok(s) => s,
                    Err(e) => {
                        log::warn!("cell {n} window {}: {e}", window.index);
                        failures.set(failures.get() + 1);
                        LocalSolution::default()
                    }
                },
            };
            st.problem = Some(problem);
            st.window = Some(window);
            st.executed.clear();
            st.latest_obs = Some((t, obs.features.clone()));
            st.decision = Some(decisions.len());
            decisions.push(Decision {
                cell: n,
                window,
                observation: obs,
                action,
                state: Vec::new(),
                reward: 0.0,
                complete: false,
            });
            started.push(n);
        }
        if options.record_states && !started.is_empty() {
            for &n in &started {
                let d = states[n].decision.expect("just decided");
                decisions[d].state = critic_state(world, &states, t, n);
            }
        }

        // satellites reachable for the first time in a window are reserved
        // through one coordination round
        let mut requests = Vec::new();
        for (n, st) in states.iter().enumerate() {
            let (Some(window), Some(problem)) = (&st.window, &st.problem) else { continue };
            let mut spans = BTreeMap::new();
            for ap in &problem.selected {
                let AccessPoint::Satellite(sat) = *ap else { continue };
                if st.executed.contains(ap) || !world.cell_access(n, t).accessible(*ap) {
                    continue;
                }
                let slots: Vec<usize> = (t..window.end()).filter(|&s| world.cell_access(n, s).accessible(*ap)).collect();
                spans.insert(sat, slots);
            }
            if !spans.is_empty() {
                requests.push(CellRequest {
                    cell: n,
                    solution: st.solution.clone(),
                    spans,
                });
            }
        }
        if !requests.is_empty() {
            let outcome = {
                let states = &states;
                let failures = &failures;
                let mut resolve = |cell: usize, omega: &BTreeMap<SatId, f64>| {
                    let st = &states[cell];
                    if scheme == Scheme::PureAmappo {
                        return Ok(st.solution.clone());
                    }
                    let mut p = st.problem.clone().expect("open window");
                    p.omega = omega.clone();
                    p.pinned = pinned_values(st);
                    p.from_slot = t;
                    Ok(solve_local(&p).unwrap_or_else(|e| {
                        log::warn!("cell {cell} re-solve at slot {t}: {e}");
                        failures.set(failures.get() + 1);
                        st.solution.clone()
                    }))
                };
                run_idoa(requests, &mut ledger, &idoa_config, &mut resolve, options.log.as_deref_mut())?
            };
            idoa_iterations.push(outcome.iterations);
            for (cell, sol) in outcome.solutions {
                states[cell].solution = sol;
            }
            for e in outcome.executions {
                let ap = AccessPoint::Satellite(e.satellite);
                for &s in &e.slots {
                    plan.set(e.cell, ap, s, e.ratios);
                }
                states[e.cell].executed.insert(ap);
            }
        }

        // terrestrial reservations are local and execute at the window start
        for &n in &started {
            let st = &mut states[n];
            let window = st.window.expect("open window");
            let has = st.problem.as_ref().is_some_and(|p| p.selected.contains(&AccessPoint::Terrestrial));
            if !has {
                continue;
            }
            let b = st.solution.ratios.get(&AccessPoint::Terrestrial).copied().unwrap_or([0.0; 2]);
            for s in window.slots() {
                plan.set(n, AccessPoint::Terrestrial, s, b);
            }
            st.executed.insert(AccessPoint::Terrestrial);
        }

        for n in 0..cells {
            let (c, bad) = slot_cost(world, &plan, n, t);
            ratio_violations += bad;
            costs[n].push(c);
            records.push(SlotRecord { slot: t, cell: n, cost: c });
            let st = &mut states[n];
            let Some(window) = st.window else { continue };
            if window.end() == t + 1 {
                let d = st.decision.expect("open decision");
                decisions[d].reward = window_reward(&costs[n][window.start..], world.scenario.rl.gamma, &world.reward);
                decisions[d].complete = true;
                st.previous = st.solution.clone();
                st.window = None;
                st.problem = None;
            }
        }
    }

    let mut capacity_violations = 0;
    for t in 0..horizon {
        capacity_violations += plan
            .satellite_loads(t)
            .values()
            .filter(|&&v| v > world.scenario.beam_capacity + CAPACITY_SLACK)
            .count();
    }
    let report = MetricsReport {
        scheme: scheme.name().to_string(),
        horizon,
        cell_count: cells,
        weights: world.reward,
        records,
        idoa_iterations,
        capacity_violations,
        ratio_violations,
        solver_failures: failures.get(),
    };
    Ok(Episode { report, decisions, plan })
}
