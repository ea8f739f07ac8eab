//! Event-driven gradient estimation: sensitivities of every target state
//! with respect to every threshold entry, propagated across events and
//! integrated into the cost gradient.
//!
//! Between events every dR_i/dtheta is constant, so the whole computation is
//! event-driven: threshold crossings generate event-time derivatives, agent
//! departures and arrivals transfer them into the target sensitivities (the
//! travel time is independent of the thresholds, so a departure's derivative
//! is carried unchanged to the matching arrival), and a target freezing at
//! zero resets its row.
//!
//! Every mode-switch update below is one instance of the boundary rule
//! `dR(tau+) = dR(tau-) + (f_before - f_after) * tau'` with the rates the
//! simulator observed; the named handlers keep the event taxonomy visible
//! and check the preconditions of their cases.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scenario::{MissionSpec, ThresholdMatrix};
use crate::sim::{
    simulate_observed, EventCtx, EventKind, EventRecord, Inducer, SimAbort, SimObserver,
    GUARD_RATE_FLOOR,
};

/// Sensitivity state: one row of dR_i/dtheta per target, plus the pending
/// event-time derivative carried by each traveling agent.
#[derive(Debug, Clone)]
pub struct GradState {
    node_count: usize,
    agent_count: usize,
    /// dr[i][entry] = dR_i / dtheta_entry, entry = (z*M + p)*M + q.
    dr: Vec<Vec<f64>>,
    /// Event-time derivative vector carried by each traveling agent.
    pending: Vec<Option<Vec<f64>>>,
}

impl GradState {
    pub fn new(node_count: usize, agent_count: usize) -> Self {
        let entries = node_count * node_count * agent_count;
        GradState {
            node_count,
            agent_count,
            dr: vec![vec![0.0; entries]; node_count],
            pending: vec![None; agent_count],
        }
    }

    pub fn entry_count(&self) -> usize {
        self.node_count * self.node_count * self.agent_count
    }

    #[inline]
    pub fn entry_index(&self, p: usize, q: usize, z: usize) -> usize {
        (z * self.node_count + p) * self.node_count + q
    }

    /// Row of sensitivities of target `i`.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.dr[i]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.dr[i]
    }

    pub fn pending(&self, agent: usize) -> Option<&Vec<f64>> {
        self.pending[agent].as_ref()
    }

    pub fn set_pending(&mut self, agent: usize, tau: Vec<f64>) {
        self.pending[agent] = Some(tau);
    }

    pub fn take_pending(&mut self, agent: usize) -> Option<Vec<f64>> {
        self.pending[agent].take()
    }

    /// Event 1 (R_i meets theta_ii^a from above): event-time derivative
    /// tau'_pqz = -(dR_i - [p=q=i, z=a]) / (A_i - B_i N_i(tau-)).
    pub fn on_event1(&self, agent: usize, node: usize, rate_before: f64) -> Vec<f64> {
        let mut tau: Vec<f64> = self.dr[node].iter().map(|&d| -d / rate_before).collect();
        let special = self.entry_index(node, node, agent);
        tau[special] += 1.0 / rate_before;
        tau
    }

    /// Event 2 (R_j meets theta_ij^a from below while agent a dwells at i):
    /// tau'_pqz = -(dR_j - [p=i, q=j, z=a]) / (A_j - B_j N_j(tau-)).
    pub fn on_event2(
        &self,
        agent: usize,
        node: usize,
        neighbor: usize,
        rate_before: f64,
    ) -> Vec<f64> {
        let mut tau: Vec<f64> = self.dr[neighbor].iter().map(|&d| -d / rate_before).collect();
        let special = self.entry_index(node, neighbor, agent);
        tau[special] += 1.0 / rate_before;
        tau
    }

    /// Shared mode-switch transfer at a node whose dynamics jump from
    /// `rate_before` to `rate_after` at an event with derivative `tau`.
    fn transfer(&mut self, node: usize, rate_before: f64, rate_after: f64, tau: &[f64]) {
        let jump = rate_before - rate_after;
        if jump == 0.0 {
            return;
        }
        for (d, t) in self.dr[node].iter_mut().zip(tau) {
            *d += jump * t;
        }
    }

    /// DEP1: departure induced by the agent's own Event 1. The dwell count
    /// drops by one, so the rate jumps by -B_i.
    pub fn on_dep1(&mut self, node: usize, rate_before: f64, rate_after: f64, tau: &[f64]) {
        self.transfer(node, rate_before, rate_after, tau);
    }

    /// DEP2: departure induced by a neighbor's Event 2 with R_i > 0.
    pub fn on_dep2(&mut self, node: usize, rate_before: f64, rate_after: f64, tau: &[f64]) {
        self.transfer(node, rate_before, rate_after, tau);
    }

    /// DEP3: departure induced by Event 2 with R_i = 0, where dR_i is already
    /// zero. DEP3-1 (rate becomes positive) seeds the row from tau'; DEP3-2
    /// (the target stays frozen) leaves it at zero.
    pub fn on_dep3(&mut self, node: usize, rate_after: f64, tau: &[f64]) {
        debug_assert!(
            self.dr[node].iter().all(|&d| d == 0.0),
            "DEP3 fired at a node with nonzero sensitivity"
        );
        self.transfer(node, 0.0, rate_after, tau);
    }

    /// ARR1/ARR2: the traveling agent lands, transferring the departure's
    /// event-time derivative into the arrival target's sensitivities with
    /// the live rates at the arrival instant.
    pub fn on_arr(&mut self, node: usize, rate_before: f64, rate_after: f64, tau: &[f64]) {
        self.transfer(node, rate_before, rate_after, tau);
    }

    /// Event 3: the target reaches zero and freezes; the row resets.
    pub fn on_event3(&mut self, node: usize) {
        self.dr[node].fill(0.0);
    }
}

/// One debugging-trace row: the nonzero sensitivities of the touched target
/// right after an event.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub event_index: usize,
    pub time: f64,
    pub target: usize,
    pub p: usize,
    pub q: usize,
    pub z: usize,
    pub value: f64,
}

/// Cost gradient with its co-simulated cost.
#[derive(Debug, Clone)]
pub struct GradResult {
    node_count: usize,
    agent_count: usize,
    grad: Vec<f64>,
    /// J(theta) of the co-simulated run.
    pub cost: f64,
    pub trace: Option<Vec<TraceRow>>,
}

impl GradResult {
    #[inline]
    pub fn get(&self, p: usize, q: usize, z: usize) -> f64 {
        self.grad[(z * self.node_count + p) * self.node_count + q]
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn agent_count(&self) -> usize {
        self.agent_count
    }

    pub fn values(&self) -> &[f64] {
        &self.grad
    }

    /// Euclidean norm over all entries (non-edge entries are zero).
    pub fn norm(&self) -> f64 {
        self.grad.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Observer that co-simulates the gradient state alongside a run.
pub struct GradObserver {
    g: GradState,
    /// Integral accumulator for sum_i dR_i dt (divided by T at the end).
    acc: Vec<f64>,
    waypoint: Vec<bool>,
    /// Event-time derivatives computed at the current instant.
    own_tau: Vec<Option<Vec<f64>>>,
    event2_tau: HashMap<(usize, usize), Vec<f64>>,
    arrived_tau: Vec<Option<Vec<f64>>>,
    trace: Option<Vec<TraceRow>>,
}

impl GradObserver {
    pub fn new(spec: &MissionSpec, want_trace: bool) -> Self {
        let m = spec.node_count();
        let n = spec.agent_count();
        GradObserver {
            g: GradState::new(m, n),
            acc: vec![0.0; m * m * n],
            waypoint: spec.targets.iter().map(|t| t.waypoint).collect(),
            own_tau: vec![None; n],
            event2_tau: HashMap::new(),
            arrived_tau: vec![None; n],
            trace: want_trace.then(Vec::new),
        }
    }

    pub fn grad_state(&self) -> &GradState {
        &self.g
    }

    /// Interval contribution of Eq.-style cost-gradient accumulation:
    /// acc += sum_i dR_i * (t1 - t0) while the sensitivities are constant.
    pub fn accumulate(&mut self, dt: f64) {
        for (i, row) in self.g.dr.iter().enumerate() {
            if self.waypoint[i] {
                continue;
            }
            for (a, d) in self.acc.iter_mut().zip(row) {
                *a += d * dt;
            }
        }
    }

    fn check_guard(
        &self,
        record: &EventRecord,
        rate: f64,
    ) -> std::result::Result<(), SimAbort> {
        if rate.abs() < GUARD_RATE_FLOOR {
            Err(SimAbort::SingularGuard {
                time: record.time,
                rate: rate.abs(),
                kind: record.kind,
                target: record.target,
                agent: record.agent,
            })
        } else {
            Ok(())
        }
    }

    fn tau_for_inducer(
        &self,
        record: &EventRecord,
        inducer: Inducer,
    ) -> std::result::Result<Vec<f64>, SimAbort> {
        let agent = record.agent.expect("departure carries an agent");
        match inducer {
            Inducer::OwnThreshold => self.own_tau[agent].clone().ok_or_else(|| {
                SimAbort::Internal(format!("DEP1 at k={} without its Event 1", record.k))
            }),
            Inducer::NeighborThreshold(j) => {
                self.event2_tau.get(&(agent, j)).cloned().ok_or_else(|| {
                    SimAbort::Internal(format!("DEP at k={} without its Event 2", record.k))
                })
            }
            Inducer::Arrival => self.arrived_tau[agent].clone().ok_or_else(|| {
                SimAbort::Internal(format!(
                    "pass-through departure at k={} without an arrival derivative",
                    record.k
                ))
            }),
            Inducer::Initial => Ok(vec![0.0; self.g.entry_count()]),
            Inducer::None => Err(SimAbort::Internal(format!(
                "departure at k={} with no inducer",
                record.k
            ))),
        }
    }

    fn record_trace(&mut self, record: &EventRecord, node: usize) {
        if let Some(trace) = &mut self.trace {
            let m = self.g.node_count;
            for (idx, &v) in self.g.dr[node].iter().enumerate() {
                if v != 0.0 {
                    trace.push(TraceRow {
                        event_index: record.k,
                        time: record.time,
                        target: node,
                        q: idx % m,
                        p: (idx / m) % m,
                        z: idx / (m * m),
                        value: v,
                    });
                }
            }
        }
    }

    fn finish(self, horizon: f64, cost: f64) -> GradResult {
        GradResult {
            node_count: self.g.node_count,
            agent_count: self.g.agent_count,
            grad: self.acc.iter().map(|a| a / horizon).collect(),
            cost,
            trace: self.trace,
        }
    }
}

impl SimObserver for GradObserver {
    fn on_advance(&mut self, t0: f64, t1: f64) -> std::result::Result<(), SimAbort> {
        // Crossing derivatives belong to the instant that just closed.
        self.own_tau.iter_mut().for_each(|t| *t = None);
        self.arrived_tau.iter_mut().for_each(|t| *t = None);
        self.event2_tau.clear();
        self.accumulate(t1 - t0);
        Ok(())
    }

    fn on_event(
        &mut self,
        record: &EventRecord,
        ctx: &EventCtx,
    ) -> std::result::Result<(), SimAbort> {
        match record.kind {
            EventKind::Event1 => {
                self.check_guard(record, ctx.rate_before)?;
                let agent = record.agent.expect("Event 1 carries an agent");
                let tau = self.g.on_event1(agent, record.target, ctx.rate_before);
                self.own_tau[agent] = Some(tau);
            }
            EventKind::Event2 => {
                self.check_guard(record, ctx.rate_before)?;
                let agent = record.agent.expect("Event 2 carries an agent");
                let neighbor = record.aux_target.expect("Event 2 carries its neighbor");
                let tau = self.g.on_event2(agent, record.target, neighbor, ctx.rate_before);
                self.event2_tau.insert((agent, neighbor), tau);
            }
            EventKind::Event3 => {
                self.check_guard(record, ctx.rate_before)?;
                self.g.on_event3(record.target);
                self.record_trace(record, record.target);
            }
            EventKind::Event4 | EventKind::Horizon => {}
            EventKind::Dep1 => {
                let agent = record.agent.expect("departure carries an agent");
                let tau = self.tau_for_inducer(record, ctx.inducer)?;
                self.g
                    .on_dep1(record.target, ctx.rate_before, ctx.rate_after, &tau);
                self.record_trace(record, record.target);
                self.g.set_pending(agent, tau);
            }
            EventKind::Dep2 => {
                let agent = record.agent.expect("departure carries an agent");
                let tau = self.tau_for_inducer(record, ctx.inducer)?;
                self.g
                    .on_dep2(record.target, ctx.rate_before, ctx.rate_after, &tau);
                self.record_trace(record, record.target);
                self.g.set_pending(agent, tau);
            }
            EventKind::Dep3_1 | EventKind::Dep3_2 => {
                let agent = record.agent.expect("departure carries an agent");
                let tau = self.tau_for_inducer(record, ctx.inducer)?;
                self.g.on_dep3(record.target, ctx.rate_after, &tau);
                self.record_trace(record, record.target);
                self.g.set_pending(agent, tau);
            }
            EventKind::Arr1 | EventKind::Arr2 => {
                let agent = record.agent.expect("arrival carries an agent");
                let node = record.aux_target.expect("arrival carries its node");
                let tau = self.g.take_pending(agent).ok_or_else(|| {
                    SimAbort::Internal(format!(
                        "arrival at k={} with no pending event-time derivative",
                        record.k
                    ))
                })?;
                self.g.on_arr(node, ctx.rate_before, ctx.rate_after, &tau);
                self.record_trace(record, node);
                self.arrived_tau[agent] = Some(tau);
            }
        }
        Ok(())
    }
}

/// Compute the cost gradient dJ/dtheta for every entry by co-simulating the
/// event-driven run. Non-edge entries are identically zero.
pub fn grad_j(spec: &MissionSpec, theta: &ThresholdMatrix) -> Result<GradResult> {
    grad_j_traced(spec, theta, false)
}

/// As [`grad_j`], optionally retaining the per-event sensitivity trace.
pub fn grad_j_traced(
    spec: &MissionSpec,
    theta: &ThresholdMatrix,
    want_trace: bool,
) -> Result<GradResult> {
    if theta.node_count() != spec.node_count() || theta.agent_count() != spec.agent_count() {
        return Err(Error::Validation(
            "threshold matrix dimensions do not match the mission".into(),
        ));
    }
    let mut obs = GradObserver::new(spec, want_trace);
    let result = simulate_observed(spec, theta, &mut obs)?;
    Ok(obs.finish(spec.horizon, result.cost))
}
