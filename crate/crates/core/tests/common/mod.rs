//! Shared test support: a fixed-step explicit integrator of the hybrid
//! dynamics that polls the threshold policy every step. Deliberately
//! independent of the event-driven engine (no closed-form crossings, no
//! event log); used as the exactness oracle.

#![allow(dead_code)]

use patrolgrad::scenario::{MissionSpec, ThresholdMatrix};

#[derive(Clone, Copy)]
enum Motion {
    At(usize),
    Fly { to: usize, arrive: f64 },
}

/// Average cost from explicit fixed-step integration with per-step policy
/// polling; O(dt) accurate against the exact event-driven cost.
pub fn euler_cost(spec: &MissionSpec, theta: &ThresholdMatrix, dt: f64) -> f64 {
    let m = spec.node_count();
    let mut r: Vec<f64> = spec.targets.iter().map(|t| t.r0).collect();
    let mut agents: Vec<Motion> = spec
        .agents
        .iter()
        .map(|a| Motion::At(a.start_node))
        .collect();
    let mut acc = 0.0;
    let steps = (spec.horizon / dt).round() as u64;
    for step in 0..steps {
        let t = step as f64 * dt;
        // Arrivals land at the first step boundary past their arrival time.
        for motion in agents.iter_mut() {
            if let Motion::Fly { to, arrive } = *motion {
                if arrive <= t + 1e-12 {
                    *motion = Motion::At(to);
                }
            }
        }
        // Threshold policy, re-polled every step.
        for a in 0..agents.len() {
            if let Motion::At(i) = agents[a] {
                if r[i] > theta.get(i, i, a) {
                    continue;
                }
                for &j in spec.ordered_neighborhood(i) {
                    if r[j] >= theta.get(i, j, a) {
                        agents[a] = Motion::Fly {
                            to: j,
                            arrive: t + spec.graph.travel_time(i, j),
                        };
                        break;
                    }
                }
            }
        }
        // Occupancy and one explicit step of the clamped dynamics.
        let mut occ = vec![0usize; m];
        for motion in &agents {
            if let Motion::At(i) = motion {
                occ[*i] += 1;
            }
        }
        for i in 0..m {
            let spec_t = &spec.targets[i];
            if spec_t.waypoint {
                r[i] = 0.0;
                continue;
            }
            let drift = spec_t.growth - spec_t.collect * occ[i] as f64;
            let rate = if r[i] <= 0.0 && drift <= 0.0 { 0.0 } else { drift };
            let next = (r[i] + rate * dt).max(0.0);
            acc += 0.5 * (r[i] + next) * dt;
            r[i] = next;
        }
    }
    acc / spec.horizon
}

/// Repository-level path to a bundled configuration file.
pub fn config_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

pub fn load_bundled(name: &str) -> MissionSpec {
    let text = std::fs::read_to_string(config_path(name))
        .unwrap_or_else(|e| panic!("reading {name}: {e}"));
    patrolgrad::scenario::load_scenario(&text).unwrap_or_else(|e| panic!("loading {name}: {e}"))
}
