//! Finite-difference verification of the event-driven gradient, plus the
//! seeded random-mission generator used for randomized checking.
//!
//! Protocol: central differences with step h = h_scale * max(1, theta_pq^z),
//! one probe per finite entry. The cost is only piecewise differentiable in
//! the thresholds, so a probe whose two perturbed runs produce different
//! event signatures is flagged and excluded from error statistics instead of
//! being compared.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::Result;
use crate::ipa::grad_j;
use crate::scenario::{build_mission, MissionSpec, Point, TargetSpec, ThresholdMatrix};
use crate::sim::simulate;

pub const DEFAULT_H_SCALE: f64 = 1e-4;

/// Components smaller than this are not compared (both estimators are noise
/// there).
pub const MAGNITUDE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckRow {
    pub p: usize,
    pub q: usize,
    pub z: usize,
    pub theta: f64,
    pub ipa: f64,
    pub fd: f64,
    /// |ipa - fd| / max(|ipa|, |fd|); NaN when flagged.
    pub rel_err: f64,
    /// The two perturbed runs crossed into a different event sequence.
    pub seq_changed: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub rows: Vec<GradCheckRow>,
    pub h_scale: f64,
    /// J at the unperturbed point.
    pub cost: f64,
}

impl GradCheckReport {
    /// Largest relative error over unflagged components above the magnitude
    /// floor; zero when nothing qualifies.
    pub fn max_rel_err(&self) -> f64 {
        self.rows
            .iter()
            .filter(|r| !r.seq_changed && r.ipa.abs().max(r.fd.abs()) > MAGNITUDE_FLOOR)
            .map(|r| r.rel_err)
            .fold(0.0, f64::max)
    }

    pub fn compared_components(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| !r.seq_changed && r.ipa.abs().max(r.fd.abs()) > MAGNITUDE_FLOOR)
            .count()
    }

    pub fn flagged_components(&self) -> usize {
        self.rows.iter().filter(|r| r.seq_changed).count()
    }
}

/// Central finite difference of J with respect to one threshold entry.
/// Returns (derivative, seq_changed).
pub fn fd_probe(
    spec: &MissionSpec,
    theta: &ThresholdMatrix,
    p: usize,
    q: usize,
    z: usize,
    h: f64,
) -> (f64, bool) {
    let base = theta.get(p, q, z);
    let mut plus = theta.clone();
    plus.set(p, q, z, base + h);
    let mut minus = theta.clone();
    minus.set(p, q, z, base - h);
    let run_plus = simulate(spec, &plus);
    let run_minus = simulate(spec, &minus);
    let seq_changed = run_plus.event_signature() != run_minus.event_signature();
    ((run_plus.cost - run_minus.cost) / (2.0 * h), seq_changed)
}

/// Compare the event-driven gradient against finite differences on every
/// finite entry. Probes run on the worker pool; the row order is fixed.
pub fn gradcheck(
    spec: &MissionSpec,
    theta: &ThresholdMatrix,
    h_scale: f64,
) -> Result<GradCheckReport> {
    let ipa = grad_j(spec, theta)?;
    let entries: Vec<(usize, usize, usize, f64)> = theta.iter_finite().collect();
    let rows: Vec<GradCheckRow> = entries
        .par_iter()
        .map(|&(p, q, z, th)| {
            let h = h_scale * th.max(1.0);
            let (fd, seq_changed) = fd_probe(spec, theta, p, q, z, h);
            let ipa_v = ipa.get(p, q, z);
            let denom = ipa_v.abs().max(fd.abs());
            let rel_err = if seq_changed {
                f64::NAN
            } else if denom > 0.0 {
                (ipa_v - fd).abs() / denom
            } else {
                0.0
            };
            GradCheckRow {
                p,
                q,
                z,
                theta: th,
                ipa: ipa_v,
                fd,
                rel_err,
                seq_changed,
            }
        })
        .collect();
    Ok(GradCheckReport {
        rows,
        h_scale,
        cost: ipa.cost,
    })
}

/// Bounds for the seeded mission generator.
#[derive(Debug, Clone)]
pub struct RandomMissionOptions {
    pub min_targets: usize,
    pub max_targets: usize,
    pub max_agents: usize,
    pub min_horizon: f64,
    pub max_horizon: f64,
}

impl Default for RandomMissionOptions {
    fn default() -> Self {
        RandomMissionOptions {
            min_targets: 2,
            max_targets: 5,
            max_agents: 2,
            min_horizon: 20.0,
            max_horizon: 50.0,
        }
    }
}

/// Deterministic random mission: connected topology, drain-capable rates
/// kept away from the A = B*N degeneracies, and finite thresholds drawn
/// inside the band the dynamics actually sweep.
pub fn random_mission(seed: u64, opts: &RandomMissionOptions) -> MissionSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.gen_range(opts.min_targets..=opts.max_targets);
    let n = rng.gen_range(1..=opts.max_agents.min(m));

    // Spread-out positions so travel legs dominate numeric noise.
    let mut positions: Vec<Point> = Vec::new();
    while positions.len() < m {
        let cand = Point {
            x: rng.gen_range(0.0..10.0),
            y: rng.gen_range(0.0..10.0),
        };
        if positions.iter().all(|p| p.dist(&cand) > 1.5) {
            positions.push(cand);
        }
    }

    // Rate grids chosen so A - B and A - 2B stay well away from zero.
    const GROWTH: [f64; 5] = [0.3, 0.5, 0.7, 0.9, 1.1];
    const COLLECT: [f64; 4] = [1.3, 1.7, 2.3, 2.9];
    let targets: Vec<TargetSpec> = positions
        .iter()
        .map(|&position| TargetSpec {
            position,
            growth: GROWTH[rng.gen_range(0..GROWTH.len())],
            collect: COLLECT[rng.gen_range(0..COLLECT.len())],
            r0: rng.gen_range(0.0..6.0),
            waypoint: false,
        })
        .collect();

    // Random spanning tree plus extra edges.
    let mut edges: Vec<(usize, usize, Option<f64>)> = Vec::new();
    for i in 1..m {
        let j = rng.gen_range(0..i);
        edges.push((j, i, None));
    }
    for i in 0..m {
        for j in (i + 1)..m {
            let exists = edges.iter().any(|&(a, b, _)| (a, b) == (i, j));
            if !exists && rng.gen_bool(0.35) {
                edges.push((i, j, None));
            }
        }
    }

    let starts: Vec<usize> = (0..n).map(|_| rng.gen_range(0..m)).collect();
    let horizon = rng.gen_range(opts.min_horizon..opts.max_horizon);

    let mut spec = build_mission(horizon, targets, &edges, &starts, 1.0)
        .expect("generated mission is valid");
    let mut theta = spec.theta0.clone();
    let finite: Vec<(usize, usize, usize, f64)> = theta.iter_finite().collect();
    for (p, q, z, _) in finite {
        theta.set(p, q, z, rng.gen_range(0.3..6.0));
    }
    spec.theta0 = theta;
    spec
}
