//! Cross-module invariants: serialization round trips, determinism,
//! nonnegativity, gradient-state locality und event-time derivatives
//! against finite differences of the event times themselves.

mod common;

use proptest::prelude::*;

use patrolgrad::gradcheck::{random_mission, RandomMissionOptions};
use patrolgrad::ipa::{grad_j, GradObserver, GradState};
use patrolgrad::scenario::load_scenario;
use patrolgrad::sim::{
    simulate, simulate_observed, EventCtx, EventKind, EventRecord, SimAbort, SimObserver,
};
use patrolgrad::theory::one_agent_two_target_mission;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn round_trip_serialization(seed in 0u64..5000) {
        let spec = random_mission(seed, &RandomMissionOptions::default());
        let text = spec.to_document_string();
        let reloaded = load_scenario(&text).unwrap();
        prop_assert_eq!(spec, reloaded);
    }

    #[test]
    fn runs_are_deterministic_and_nonnegative(seed in 0u64..5000) {
        let spec = random_mission(seed, &RandomMissionOptions::default());
        let a = simulate(&spec, &spec.theta0);
        let b = simulate(&spec, &spec.theta0);
        prop_assert_eq!(&a.events, &b.events);
        prop_assert_eq!(a.cost.to_bits(), b.cost.to_bits());
        for seg in &a.segments {
            prop_assert!(seg.r0 >= 0.0 && seg.r1 >= 0.0);
        }
        // Log sorted by time.
        for w in a.events.windows(2) {
            prop_assert!(w[0].time <= w[1].time + 1e-12);
        }
    }

    #[test]
    fn non_edge_gradient_entries_stay_zero(seed in 0u64..5000) {
        let spec = random_mission(seed, &RandomMissionOptions::default());
        if let Ok(grad) = grad_j(&spec, &spec.theta0) {
            let m = spec.node_count();
            for z in 0..spec.agent_count() {
                for p in 0..m {
                    for q in 0..m {
                        if p != q && !spec.graph.has_edge(p, q) {
                            prop_assert_eq!(grad.get(p, q, z), 0.0);
                        }
                    }
                }
            }
        }
    }
}

/// Wraps the gradient observer and asserts, per event, that only the rows of
/// the touched targets changed, and that a frozen target's row is zero.
struct LocalityObserver {
    inner: GradObserver,
    node_count: usize,
    violations: Vec<String>,
}

impl LocalityObserver {
    fn rows_snapshot(&self) -> Vec<Vec<f64>> {
        (0..self.node_count)
            .map(|i| self.inner.grad_state().row(i).to_vec())
            .collect()
    }
}

impl SimObserver for LocalityObserver {
    fn on_advance(&mut self, t0: f64, t1: f64) -> Result<(), SimAbort> {
        self.inner.on_advance(t0, t1)
    }

    fn on_event(&mut self, record: &EventRecord, ctx: &EventCtx) -> Result<(), SimAbort> {
        let before = self.rows_snapshot();
        self.inner.on_event(record, ctx)?;
        let after = self.rows_snapshot();
        let mut touchable = vec![false; self.node_count];
        touchable[record.target] = true;
        if let Some(aux) = record.aux_target {
            touchable[aux] = true;
        }
        for i in 0..self.node_count {
            if !touchable[i] && before[i] != after[i] {
                self.violations.push(format!(
                    "event k={} {:?} changed row {} it does not own",
                    record.k, record.kind, i
                ));
            }
        }
        if record.kind == EventKind::Event3
            && after[record.target].iter().any(|&v| v != 0.0)
        {
            self.violations
                .push(format!("row {} nonzero after its reset", record.target));
        }
        Ok(())
    }
}

#[test]
fn events_touch_only_their_targets() {
    for seed in [2u64, 5, 13, 21] {
        let spec = random_mission(seed, &RandomMissionOptions::default());
        let mut obs = LocalityObserver {
            inner: GradObserver::new(&spec, false),
            node_count: spec.node_count(),
            violations: Vec::new(),
        };
        if simulate_observed(&spec, &spec.theta0, &mut obs).is_ok() {
            assert!(obs.violations.is_empty(), "{:?}", obs.violations);
        }
    }
}

/// Captures the sensitivity rows and guard rates at the n-th Event 1 on a
/// given target, to reconstruct the event-time derivative.
struct EventTimeProbe {
    inner: GradObserver,
    watch_target: usize,
    watch_index: usize,
    seen: usize,
    captured: Option<(Vec<f64>, f64)>, // (row of the guard target, rate before)
}

impl SimObserver for EventTimeProbe {
    fn on_advance(&mut self, t0: f64, t1: f64) -> Result<(), SimAbort> {
        self.inner.on_advance(t0, t1)
    }

    fn on_event(&mut self, record: &EventRecord, ctx: &EventCtx) -> Result<(), SimAbort> {
        if record.kind == EventKind::Event1 && record.target == self.watch_target {
            if self.seen == self.watch_index {
                self.captured = Some((
                    self.inner.grad_state().row(record.target).to_vec(),
                    ctx.rate_before,
                ));
            }
            self.seen += 1;
        }
        self.inner.on_event(record, ctx)
    }
}

/// The predicted event-time derivative of a mid-trajectory crossing (where
/// the sensitivities are no longer zero) matches a central finite difference
/// of the measured event time.
#[test]
fn event_time_derivative_matches_finite_difference() {
    let mut spec = one_agent_two_target_mission(0.3, 1.0, 60.0).unwrap();
    let mut theta = spec.theta0.clone();
    theta.set(0, 0, 0, 0.5);
    theta.set(1, 1, 0, 0.4);
    spec.theta0 = theta.clone();

    // Watch the third Event 1 at target 1 (0-based index 2): by then the
    // sensitivity row carries history from two full cycles.
    let watch_index = 2;
    let mut probe = EventTimeProbe {
        inner: GradObserver::new(&spec, false),
        watch_target: 0,
        watch_index,
        seen: 0,
        captured: None,
    };
    simulate_observed(&spec, &theta, &mut probe).unwrap();
    let (row, rate) = probe.captured.expect("third crossing exists");
    let mut g = GradState::new(2, 1);
    g.row_mut(0).copy_from_slice(&row);
    let tau = g.on_event1(0, 0, rate);

    let event1_time = |theta: &patrolgrad::scenario::ThresholdMatrix| -> f64 {
        let run = simulate(&spec, theta);
        run.events
            .iter()
            .filter(|e| e.kind == EventKind::Event1 && e.target == 0)
            .nth(watch_index)
            .expect("crossing present in perturbed run")
            .time
    };

    let h = 1e-5;
    for (p, q) in [(0usize, 0usize), (1usize, 1usize)] {
        let base = theta.get(p, q, 0);
        let mut plus = theta.clone();
        plus.set(p, q, 0, base + h);
        let mut minus = theta.clone();
        minus.set(p, q, 0, base - h);
        let fd = (event1_time(&plus) - event1_time(&minus)) / (2.0 * h);
        let predicted = tau[g.entry_index(p, q, 0)];
        let rel = (predicted - fd).abs() / fd.abs().max(1e-9);
        assert!(
            rel <= 1e-4,
            "entry ({p},{q}): tau' {predicted} vs fd {fd} (rel {rel:.2e})"
        );
    }
}
