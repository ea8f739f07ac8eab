//! Exact event-driven simulation of the agent/target hybrid system.
//!
//! Target uncertainty is piecewise linear: it grows at rate A when the target
//! is unattended, drains at A - B*N with N agents dwelling, and is clamped at
//! zero. Agents alternate dwelling and traveling under the threshold policy:
//! stay while R_i exceeds the diagonal threshold, otherwise depart to the
//! first proximity-ordered neighbor whose uncertainty exceeds its threshold.
//!
//! Because every rate is constant between events, all guard crossings are
//! computed in closed form and the cost integral is exact (trapezoids over
//! linear segments). Given the same mission and thresholds, two runs produce
//! bit-identical event logs.

use crate::error::{Error, Result};
use crate::scenario::{MissionSpec, ThresholdMatrix};

/// Times closer than this are treated as one simultaneous instant. Guards are
/// computed in closed form, so the tolerance only absorbs float noise.
pub const TIME_TOL: f64 = 1e-12;

/// Transversality floor: an endogenous guard firing with |A - B*N| below this
/// has no usable event-time derivative.
pub const GUARD_RATE_FLOOR: f64 = 1e-9;

// ---------------------------------------------------------------------------
// Event taxonomy
// ---------------------------------------------------------------------------

/// Typed events of the hybrid system.
///
/// Target events: `Event1` R_i meets the dwelling agent's diagonal threshold
/// from above; `Event2` a neighbor's R_j meets the threshold seen from node i
/// from below; `Event3` R_i reaches zero and freezes; `Event4` R_i leaves
/// zero after a departure. Departure events carry which crossing induced
/// them; arrivals are labelled by the kind of the departure that started the
/// travel leg.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    Event1,
    Event2,
    Event3,
    Event4,
    Dep1,
    Dep2,
    Dep3_1,
    Dep3_2,
    Arr1,
    Arr2,
    Horizon,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Event1 => "EVENT1",
            EventKind::Event2 => "EVENT2",
            EventKind::Event3 => "EVENT3",
            EventKind::Event4 => "EVENT4",
            EventKind::Dep1 => "DEP1",
            EventKind::Dep2 => "DEP2",
            EventKind::Dep3_1 => "DEP3_1",
            EventKind::Dep3_2 => "DEP3_2",
            EventKind::Arr1 => "ARR1",
            EventKind::Arr2 => "ARR2",
            EventKind::Horizon => "HORIZON",
        }
    }
}

/// One entry of the event log. `target` is the primary node of the event
/// (the guard node for target events, the departed node for DEP, the origin
/// for ARR); `aux_target` holds the j of Event2 (the crossing neighbor), of
/// DEP (the destination) and of ARR (the arrival node).
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub k: usize,
    pub time: f64,
    pub kind: EventKind,
    pub agent: Option<usize>,
    pub target: usize,
    pub aux_target: Option<usize>,
    /// R of `target` right after the event was applied.
    pub r_after: f64,
}

/// What flipped the control decision that produced a departure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Inducer {
    /// Crossing of the agent's own diagonal threshold at this instant.
    OwnThreshold,
    /// Upward crossing of `theta[i][j]` by neighbor j at this instant.
    NeighborThreshold(usize),
    /// The agent arrived this instant and leaves with zero dwell; the
    /// departure inherits the arrival's event-time derivative.
    Arrival,
    /// Initial policy evaluation at t = 0 (exogenous, zero derivative).
    Initial,
    /// Not a departure event.
    None,
}

/// Side information the simulator hands to observers along with each event.
/// Rates refer to the node whose dynamics the event touches: the guard node
/// for target events, the departed node for DEP, the arrival node for ARR.
#[derive(Debug, Clone, Copy)]
pub struct EventCtx {
    pub rate_before: f64,
    pub rate_after: f64,
    pub n_before: usize,
    pub n_after: usize,
    pub inducer: Inducer,
}

/// Reasons an observer may abort a run (simulation itself never aborts).
#[derive(Debug, Clone)]
pub enum SimAbort {
    SingularGuard {
        time: f64,
        rate: f64,
        kind: EventKind,
        target: usize,
        agent: Option<usize>,
    },
    Internal(String),
}

impl From<SimAbort> for Error {
    fn from(a: SimAbort) -> Error {
        match a {
            SimAbort::SingularGuard {
                time,
                rate,
                kind,
                target,
                agent,
            } => Error::SingularGuard {
                time,
                rate,
                kind,
                target,
                agent,
            },
            SimAbort::Internal(msg) => Error::Internal(msg),
        }
    }
}

/// Hook for co-simulation (the IPA engine) and instrumented tests.
pub trait SimObserver {
    /// All target states are linear on [t0, t1]; called before the instant
    /// at t1 is processed.
    fn on_advance(&mut self, t0: f64, t1: f64) -> std::result::Result<(), SimAbort> {
        let _ = (t0, t1);
        Ok(())
    }
    fn on_event(
        &mut self,
        record: &EventRecord,
        ctx: &EventCtx,
    ) -> std::result::Result<(), SimAbort> {
        let _ = (record, ctx);
        Ok(())
    }
}

/// Observer that does nothing; plain simulation runs use it.
pub struct NullObserver;
impl SimObserver for NullObserver {}

// ---------------------------------------------------------------------------
// State
// ---------------------------------------------------------------------------

/// Where an agent is and since when.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AgentState {
    Dwelling { node: usize, since: f64 },
    Traveling {
        from: usize,
        to: usize,
        depart_time: f64,
        arrival_time: f64,
    },
}

impl AgentState {
    pub fn dwelling_node(&self) -> Option<usize> {
        match self {
            AgentState::Dwelling { node, .. } => Some(*node),
            AgentState::Traveling { .. } => None,
        }
    }
}

/// Per-target hybrid state. `frozen` is the explicit zero mode of the
/// dynamics: it is entered only when the uncertainty actually dwells at zero
/// (Event 3), not when a trajectory merely touches zero on its way through
/// an instant, so it cannot be inferred from `r == 0` alone.
#[derive(Debug, Clone, Copy)]
pub struct TargetState {
    pub r: f64,
    /// Number of agents currently dwelling here.
    pub n: usize,
    /// The target sits in the zero mode (rate pinned to 0).
    pub frozen: bool,
}

/// Complete hybrid state at the current clock.
#[derive(Debug, Clone)]
pub struct SimState {
    pub time: f64,
    pub targets: Vec<TargetState>,
    pub agents: Vec<AgentState>,
}

/// Piecewise-linear trajectory segment of one target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub target: usize,
    pub t0: f64,
    pub t1: f64,
    pub r0: f64,
    pub r1: f64,
}

/// Output of a run: exact cost, full event log, trajectories, visit orders.
#[derive(Debug, Clone)]
pub struct SimResult {
    /// Average uncertainty (1/T) * sum_i integral of R_i over [0, T].
    pub cost: f64,
    pub events: Vec<EventRecord>,
    pub segments: Vec<Segment>,
    /// Per-agent sequence of visited nodes (start node first).
    pub visits: Vec<Vec<usize>>,
    /// Instants at which two or more agents arrived at the same target.
    pub coincident_arrivals: usize,
}

impl SimResult {
    /// Ordered list of nodes agent `a` dwelled at (zero-dwell visits count).
    pub fn visiting_sequence(&self, agent: usize) -> &[usize] {
        &self.visits[agent]
    }

    /// Event kinds with their actors, used to detect trajectory-structure
    /// changes between perturbed runs.
    pub fn event_signature(&self) -> Vec<(EventKind, Option<usize>, usize, Option<usize>)> {
        self.events
            .iter()
            .map(|e| (e.kind, e.agent, e.target, e.aux_target))
            .collect()
    }
}

/// The control policy's verdict for a dwelling agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlDecision {
    Stay,
    DepartTo(usize),
}

/// Threshold policy at node `i`: stay while R_i > theta_ii, or while no
/// ordered neighbor j has R_j >= theta_ij; otherwise depart to the first
/// qualifying neighbor.
pub fn control_decision(
    spec: &MissionSpec,
    state: &SimState,
    theta: &ThresholdMatrix,
    agent: usize,
    node: usize,
) -> ControlDecision {
    if state.targets[node].r > theta.get(node, node, agent) {
        return ControlDecision::Stay;
    }
    for &j in spec.ordered_neighborhood(node) {
        if state.targets[j].r >= theta.get(node, j, agent) {
            return ControlDecision::DepartTo(j);
        }
    }
    ControlDecision::Stay
}

// ---------------------------------------------------------------------------
// Crossing detection
// ---------------------------------------------------------------------------

/// A guard crossing or arrival detected ahead of time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pending {
    pub time: f64,
    pub kind: PendingKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PendingKind {
    /// R_i meets theta_ii^a from above (agent a dwelling at i).
    OwnThreshold { agent: usize, node: usize },
    /// R_j meets theta_ij^a from below (agent a dwelling at i).
    NeighborThreshold { agent: usize, node: usize, neighbor: usize },
    /// R_i meets zero from above.
    ZeroTouch { node: usize },
    /// Scheduled arrival of a traveling agent.
    Arrival { agent: usize, node: usize },
}

// ---------------------------------------------------------------------------
// Simulator
// ---------------------------------------------------------------------------

pub struct Simulator<'a> {
    spec: &'a MissionSpec,
    theta: &'a ThresholdMatrix,
    state: SimState,
    /// Kind of the departure that started each traveling agent's leg, used
    /// to label the matching arrival (DEP1 -> ARR1, anything else -> ARR2).
    leg_kind: Vec<Option<EventKind>>,
    events: Vec<EventRecord>,
    segments: Vec<Segment>,
    visits: Vec<Vec<usize>>,
    cost_integral: f64,
    coincident_arrivals: usize,
    finished: bool,
}

impl<'a> Simulator<'a> {
    pub fn new(spec: &'a MissionSpec, theta: &'a ThresholdMatrix) -> Self {
        let targets = spec
            .targets
            .iter()
            .map(|t| TargetState {
                r: t.r0,
                n: 0,
                frozen: false,
            })
            .collect::<Vec<_>>();
        let mut agents = Vec::with_capacity(spec.agent_count());
        for a in &spec.agents {
            agents.push(AgentState::Dwelling {
                node: a.start_node,
                since: 0.0,
            });
        }
        let mut state = SimState {
            time: 0.0,
            targets,
            agents,
        };
        for a in &spec.agents {
            state.targets[a.start_node].n += 1;
        }
        for (i, t) in spec.targets.iter().enumerate() {
            let drift = t.growth - t.collect * state.targets[i].n as f64;
            state.targets[i].frozen = !t.waypoint && t.r0 == 0.0 && drift <= 0.0;
        }
        let visits = spec.agents.iter().map(|a| vec![a.start_node]).collect();
        Simulator {
            spec,
            theta,
            state,
            leg_kind: vec![None; spec.agent_count()],
            events: Vec::new(),
            segments: Vec::new(),
            visits,
            cost_integral: 0.0,
            coincident_arrivals: 0,
            finished: false,
        }
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    /// Unclamped drift A_i - B_i * N_i of the current occupancy.
    fn drift(&self, i: usize) -> f64 {
        let t = &self.spec.targets[i];
        t.growth - t.collect * self.state.targets[i].n as f64
    }

    /// Current rate of R_i: zero for way points and in the frozen mode,
    /// A - B*N otherwise.
    pub fn rate(&self, i: usize) -> f64 {
        if self.spec.targets[i].waypoint || self.state.targets[i].frozen {
            0.0
        } else {
            self.drift(i)
        }
    }

    /// Earliest upcoming instant and every crossing/arrival that shares it
    /// (within [`TIME_TOL`]). Returns `(T, [])` when nothing happens before
    /// the horizon (stalled states simply coast to the end).
    pub fn peek_next(&self) -> (f64, Vec<Pending>) {
        let mut candidates: Vec<Pending> = Vec::new();
        let now = self.state.time;
        let m = self.spec.node_count();

        for i in 0..m {
            let rate = self.rate(i);
            let r = self.state.targets[i].r;
            if rate < 0.0 && r > 0.0 {
                candidates.push(Pending {
                    time: now + r / (-rate),
                    kind: PendingKind::ZeroTouch { node: i },
                });
            }
        }
        for (a, st) in self.state.agents.iter().enumerate() {
            match *st {
                AgentState::Dwelling { node: i, .. } => {
                    let rate_i = self.rate(i);
                    let r_i = self.state.targets[i].r;
                    let th_ii = self.theta.get(i, i, a);
                    if rate_i < 0.0 && r_i > th_ii {
                        candidates.push(Pending {
                            time: now + (r_i - th_ii) / (-rate_i),
                            kind: PendingKind::OwnThreshold { agent: a, node: i },
                        });
                    }
                    for &j in self.spec.ordered_neighborhood(i) {
                        let rate_j = self.rate(j);
                        let r_j = self.state.targets[j].r;
                        let th_ij = self.theta.get(i, j, a);
                        if rate_j > 0.0 && r_j < th_ij && th_ij.is_finite() {
                            candidates.push(Pending {
                                time: now + (th_ij - r_j) / rate_j,
                                kind: PendingKind::NeighborThreshold {
                                    agent: a,
                                    node: i,
                                    neighbor: j,
                                },
                            });
                        }
                    }
                }
                AgentState::Traveling { to, arrival_time, .. } => {
                    candidates.push(Pending {
                        time: arrival_time,
                        kind: PendingKind::Arrival { agent: a, node: to },
                    });
                }
            }
        }

        let horizon = self.spec.horizon;
        let earliest = candidates
            .iter()
            .map(|c| c.time)
            .fold(f64::INFINITY, f64::min);
        if earliest >= horizon - TIME_TOL {
            return (horizon, Vec::new());
        }
        let mut due: Vec<Pending> = candidates
            .into_iter()
            .filter(|c| c.time <= earliest + TIME_TOL)
            .collect();
        // Deterministic processing order: zero touches are resolved last (see
        // process_instant); sorting here fixes within-class order by target
        // id then agent id.
        due.sort_by(|a, b| pending_order_key(a).cmp(&pending_order_key(b)));
        (earliest, due)
    }

    /// Advance all targets linearly to `t1`, accumulating the exact cost
    /// integral and recording trajectory segments.
    fn advance<O: SimObserver>(
        &mut self,
        t1: f64,
        obs: &mut O,
    ) -> std::result::Result<(), SimAbort> {
        let t0 = self.state.time;
        let dt = t1 - t0;
        if dt <= 0.0 {
            return Ok(());
        }
        obs.on_advance(t0, t1)?;
        for i in 0..self.spec.node_count() {
            let rate = self.rate(i);
            let r0 = self.state.targets[i].r;
            let r1 = (r0 + rate * dt).max(0.0);
            if !self.spec.targets[i].waypoint {
                self.cost_integral += 0.5 * (r0 + r1) * dt;
            }
            self.segments.push(Segment {
                target: i,
                t0,
                t1,
                r0,
                r1,
            });
            self.state.targets[i].r = r1;
        }
        self.state.time = t1;
        Ok(())
    }

    fn push_event<O: SimObserver>(
        &mut self,
        kind: EventKind,
        agent: Option<usize>,
        target: usize,
        aux_target: Option<usize>,
        ctx: EventCtx,
        obs: &mut O,
    ) -> std::result::Result<(), SimAbort> {
        let record = EventRecord {
            k: self.events.len(),
            time: self.state.time,
            kind,
            agent,
            target,
            aux_target,
            r_after: self.state.targets[target].r,
        };
        obs.on_event(&record, &ctx)?;
        self.events.push(record);
        Ok(())
    }

    /// Re-evaluate the policy for every dwelling agent and apply departures.
    /// `own_event1` and `neighbor_event2` say which guards fired at this
    /// instant so the departure can name its inducer; `just_arrived` marks
    /// agents whose zero-dwell pass-through inherits the arrival derivative.
    fn reevaluate_controls<O: SimObserver>(
        &mut self,
        own_event1: &[bool],
        neighbor_event2: &[Vec<bool>],
        just_arrived: &[bool],
        obs: &mut O,
    ) -> std::result::Result<(), SimAbort> {
        // Ascending (node, agent) order over the departures actually taken.
        let mut dwellers: Vec<(usize, usize)> = self
            .state
            .agents
            .iter()
            .enumerate()
            .filter_map(|(a, st)| st.dwelling_node().map(|i| (i, a)))
            .collect();
        dwellers.sort_unstable();

        for (i, a) in dwellers {
            let decision = control_decision(self.spec, &self.state, self.theta, a, i);
            let j = match decision {
                ControlDecision::Stay => continue,
                ControlDecision::DepartTo(j) => j,
            };
            let inducer = if own_event1[a] {
                Inducer::OwnThreshold
            } else if neighbor_event2[a][j] {
                Inducer::NeighborThreshold(j)
            } else if just_arrived[a] {
                Inducer::Arrival
            } else if self.state.time == 0.0 {
                Inducer::Initial
            } else {
                return Err(SimAbort::Internal(format!(
                    "departure of agent {a} from node {i} at t={} has no inducing event",
                    self.state.time
                )));
            };
            let r_i = self.state.targets[i].r;
            // DEP3 is the departure out of the zero mode (where the
            // sensitivity row was reset); a trajectory that merely touches
            // zero at this same instant never entered that mode and departs
            // with the ordinary DEP2 transfer.
            let kind = match inducer {
                Inducer::OwnThreshold => EventKind::Dep1,
                _ if !self.state.targets[i].frozen => EventKind::Dep2,
                // Frozen at zero: sub-case by the dynamics after departure.
                _ => {
                    let n_after = self.state.targets[i].n - 1;
                    let t = &self.spec.targets[i];
                    if !t.waypoint && t.growth > t.collect * n_after as f64 {
                        EventKind::Dep3_1
                    } else {
                        EventKind::Dep3_2
                    }
                }
            };

            let rate_before = self.rate(i);
            let n_before = self.state.targets[i].n;
            self.state.targets[i].n -= 1;
            // The reduced service may no longer hold R_i at zero: the target
            // leaves the zero mode at this same instant.
            let lifts_off_zero = r_i == 0.0
                && !self.spec.targets[i].waypoint
                && self.drift(i) > 0.0;
            if lifts_off_zero {
                self.state.targets[i].frozen = false;
            }
            let travel = self.spec.graph.travel_time(i, j);
            self.state.agents[a] = AgentState::Traveling {
                from: i,
                to: j,
                depart_time: self.state.time,
                arrival_time: self.state.time + travel,
            };
            self.leg_kind[a] = Some(kind);
            let rate_after = self.rate(i);
            let ctx = EventCtx {
                rate_before,
                rate_after,
                n_before,
                n_after: n_before - 1,
                inducer,
            };
            self.push_event(kind, Some(a), i, Some(j), ctx, obs)?;

            // A departure that lifts R_i off zero is flagged as Event 4
            // (exogenous indicator; zero event-time derivative).
            if lifts_off_zero {
                let ctx4 = EventCtx {
                    rate_before: 0.0,
                    rate_after,
                    n_before: n_before - 1,
                    n_after: n_before - 1,
                    inducer: Inducer::None,
                };
                self.push_event(EventKind::Event4, Some(a), i, None, ctx4, obs)?;
            }
        }
        Ok(())
    }

    /// Process every crossing/arrival sharing the current instant.
    ///
    /// Order within the instant: threshold crossings are recorded first (they
    /// only compute derivatives), then arrivals are applied, then the policy
    /// is re-evaluated producing departures, and zero touches are resolved
    /// last — a target that ends the instant frozen at zero fires Event 3,
    /// while a touch immediately undone by a departure is no mode switch at
    /// all and must leave the gradient state untouched.
    fn process_instant<O: SimObserver>(
        &mut self,
        due: Vec<Pending>,
        obs: &mut O,
    ) -> std::result::Result<(), SimAbort> {
        let n_agents = self.spec.agent_count();
        let m = self.spec.node_count();
        let mut own_event1 = vec![false; n_agents];
        let mut neighbor_event2 = vec![vec![false; m]; n_agents];
        let mut just_arrived = vec![false; n_agents];
        let mut zero_touched = vec![false; m];

        // 0. Snap zero touches exactly (a zero touch can only coincide with
        // a zero-valued Event 1 guard, so the later guard snaps agree).
        for p in &due {
            if let PendingKind::ZeroTouch { node } = p.kind {
                self.state.targets[node].r = 0.0;
            }
        }
        // 1. Own-threshold crossings (Event 1).
        for p in &due {
            if let PendingKind::OwnThreshold { agent, node } = p.kind {
                let th = self.theta.get(node, node, agent);
                self.state.targets[node].r = th; // snap the guard exactly
                own_event1[agent] = true;
                let rate = self.rate(node);
                let ctx = EventCtx {
                    rate_before: rate,
                    rate_after: rate,
                    n_before: self.state.targets[node].n,
                    n_after: self.state.targets[node].n,
                    inducer: Inducer::None,
                };
                self.push_event(EventKind::Event1, Some(agent), node, None, ctx, obs)?;
            }
        }
        // 2. Neighbor-threshold crossings (Event 2).
        for p in &due {
            if let PendingKind::NeighborThreshold { agent, node, neighbor } = p.kind {
                let th = self.theta.get(node, neighbor, agent);
                self.state.targets[neighbor].r = th;
                neighbor_event2[agent][neighbor] = true;
                let rate = self.rate(neighbor);
                let ctx = EventCtx {
                    rate_before: rate,
                    rate_after: rate,
                    n_before: self.state.targets[neighbor].n,
                    n_after: self.state.targets[neighbor].n,
                    inducer: Inducer::None,
                };
                self.push_event(EventKind::Event2, Some(agent), node, Some(neighbor), ctx, obs)?;
            }
        }
        // 3. Arrivals. Applied one by one so each reads the live rate left by
        // the previous one; coincident arrivals at one target are counted.
        let mut arrivals: Vec<(usize, usize)> = due
            .iter()
            .filter_map(|p| match p.kind {
                PendingKind::Arrival { agent, node } => Some((node, agent)),
                _ => None,
            })
            .collect();
        arrivals.sort_unstable();
        for w in arrivals.windows(2) {
            if w[0].0 == w[1].0 {
                self.coincident_arrivals += 1;
            }
        }
        for (j, a) in arrivals {
            let from = match self.state.agents[a] {
                AgentState::Traveling { from, .. } => from,
                AgentState::Dwelling { .. } => {
                    return Err(SimAbort::Internal(format!(
                        "arrival of non-traveling agent {a}"
                    )))
                }
            };
            let rate_before = self.rate(j);
            let n_before = self.state.targets[j].n;
            self.state.targets[j].n += 1;
            self.state.agents[a] = AgentState::Dwelling {
                node: j,
                since: self.state.time,
            };
            self.visits[a].push(j);
            just_arrived[a] = true;
            let rate_after = self.rate(j);
            let kind = match self.leg_kind[a].take() {
                Some(EventKind::Dep1) => EventKind::Arr1,
                Some(_) => EventKind::Arr2,
                None => {
                    return Err(SimAbort::Internal(format!(
                        "arrival of agent {a} with no departure on record"
                    )))
                }
            };
            let ctx = EventCtx {
                rate_before,
                rate_after,
                n_before,
                n_after: n_before + 1,
                inducer: Inducer::None,
            };
            self.push_event(kind, Some(a), from, Some(j), ctx, obs)?;
        }
        // 4. Policy re-evaluation: departures (DEP1/DEP2/DEP3, Event 4).
        self.reevaluate_controls(&own_event1, &neighbor_event2, &just_arrived, obs)?;

        // 5. Zero touches, resolved against the post-departure dynamics: the
        // zero mode is entered (Event 3) only when the remaining service can
        // actually hold the target at zero; a touch undone by a departure at
        // the same instant is no mode switch.
        for p in &due {
            if let PendingKind::ZeroTouch { node } = p.kind {
                if !zero_touched[node] {
                    zero_touched[node] = true;
                    self.state.targets[node].r = 0.0;
                    if self.drift(node) <= 0.0 {
                        let rate_before = self.drift(node);
                        self.state.targets[node].frozen = true;
                        let ctx = EventCtx {
                            rate_before,
                            rate_after: 0.0,
                            n_before: self.state.targets[node].n,
                            n_after: self.state.targets[node].n,
                            inducer: Inducer::None,
                        };
                        self.push_event(EventKind::Event3, None, node, None, ctx, obs)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Run to the horizon. The observer may abort (gradient evaluation does
    /// so on singular guards); plain simulation never fails.
    pub fn run<O: SimObserver>(&mut self, obs: &mut O) -> std::result::Result<(), SimAbort> {
        assert!(!self.finished, "simulator cannot be re-run");
        // Initial policy evaluation: departures at t = 0 are exogenous.
        let n_agents = self.spec.agent_count();
        let m = self.spec.node_count();
        self.reevaluate_controls(
            &vec![false; n_agents],
            &vec![vec![false; m]; n_agents],
            &vec![false; n_agents],
            obs,
        )?;
        loop {
            let (t_next, due) = self.peek_next();
            if due.is_empty() {
                // Nothing left before the horizon.
                self.advance(self.spec.horizon, obs)?;
                let ctx = EventCtx {
                    rate_before: 0.0,
                    rate_after: 0.0,
                    n_before: 0,
                    n_after: 0,
                    inducer: Inducer::None,
                };
                self.push_event(EventKind::Horizon, None, 0, None, ctx, obs)?;
                self.finished = true;
                return Ok(());
            }
            self.advance(t_next, obs)?;
            self.process_instant(due, obs)?;
        }
    }

    pub fn into_result(self) -> SimResult {
        assert!(self.finished, "simulation has not run to the horizon");
        SimResult {
            cost: self.cost_integral / self.spec.horizon,
            events: self.events,
            segments: self.segments,
            visits: self.visits,
            coincident_arrivals: self.coincident_arrivals,
        }
    }
}

/// Within-instant ordering: crossings by class, then target id, then agent.
/// Zero touches sort last because they are resolved after departures.
fn pending_order_key(p: &Pending) -> (u8, usize, usize) {
    match p.kind {
        PendingKind::OwnThreshold { agent, node } => (0, node, agent),
        PendingKind::NeighborThreshold { agent, neighbor, .. } => (1, neighbor, agent),
        PendingKind::Arrival { agent, node } => (2, node, agent),
        PendingKind::ZeroTouch { node } => (3, node, 0),
    }
}

/// Simulate the mission under thresholds `theta`; exact and deterministic.
pub fn simulate(spec: &MissionSpec, theta: &ThresholdMatrix) -> SimResult {
    let mut sim = Simulator::new(spec, theta);
    let mut obs = NullObserver;
    sim.run(&mut obs)
        .expect("null observer never aborts");
    sim.into_result()
}

/// Simulate with an observer attached; aborts propagate as errors.
pub fn simulate_observed<O: SimObserver>(
    spec: &MissionSpec,
    theta: &ThresholdMatrix,
    obs: &mut O,
) -> Result<SimResult> {
    let mut sim = Simulator::new(spec, theta);
    sim.run(obs).map_err(Error::from)?;
    Ok(sim.into_result())
}
