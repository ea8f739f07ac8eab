//! Finite-horizon dynamic-programming baseline on a discretized grid.
//!
//! Single-agent missions only: the joint multi-agent grid is out of reach at
//! desk scale. Time advances in steps of `dt`, uncertainties live on a `dr`
//! grid capped per target at the highest reachable value, and travel times
//! round up to whole steps. Decisions happen at nodes: dwell one step or
//! depart along an edge (a committed macro-action of the rounded travel
//! length). Stage cost is the trapezoid of the summed uncertainties over the
//! step, normalized by the discretized horizon.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scenario::{MissionSpec, ThresholdMatrix};

#[derive(Debug, Clone)]
pub struct DpConfig {
    /// Time step (s).
    pub dt: f64,
    /// Uncertainty quantization step.
    pub dr: f64,
    /// Optional global cap override; default caps each target at
    /// R0_i + A_i * T, the highest value it can reach.
    pub r_max: Option<f64>,
    /// Memory budget in bytes for value and policy tables.
    pub budget_bytes: usize,
}

impl Default for DpConfig {
    fn default() -> Self {
        DpConfig {
            dt: 1.0,
            dr: 1.0,
            r_max: None,
            budget_bytes: 1 << 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RolloutAction {
    Dwell,
    Depart { to: usize },
    Travel { to: usize, remaining: usize },
}

#[derive(Debug, Clone)]
pub struct RolloutStep {
    pub step: usize,
    pub time: f64,
    /// Node the agent occupies, or the destination while traveling.
    pub node: usize,
    pub action: RolloutAction,
    /// Grid uncertainties at the start of the step.
    pub r: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DpResult {
    /// Optimal discretized cost from the initial state.
    pub cost: f64,
    pub rollout: Vec<RolloutStep>,
    /// Cost of the greedy rollout (equals `cost` for this deterministic MDP).
    pub rollout_cost: f64,
    /// The rollout schedule replayed under the exact continuous dynamics.
    pub rollout_cost_continuous: f64,
    pub state_count: usize,
    /// Backward-induction sweeps performed (= horizon steps).
    pub sweeps: usize,
}

/// Shared problem definition for the discretized dynamics.
struct Grid {
    m: usize,
    dt: f64,
    dr: f64,
    /// Grid levels per target (cap / dr + 1).
    levels: Vec<usize>,
    caps: Vec<f64>,
    /// Horizon steps.
    steps: usize,
    /// Normalizing horizon for the stage cost.
    t_norm: f64,
    /// Rounded travel steps per directed edge, usize::MAX when absent.
    travel_steps: Vec<usize>,
    growth: Vec<f64>,
    collect: Vec<f64>,
    waypoint: Vec<bool>,
    start: usize,
    r0: Vec<f64>,
}

impl Grid {
    fn new(spec: &MissionSpec, cfg: &DpConfig) -> Result<Grid> {
        if spec.agent_count() != 1 {
            return Err(Error::Unsupported(
                "the dp baseline handles exactly one agent".into(),
            ));
        }
        if !(cfg.dt > 0.0) || !(cfg.dr > 0.0) {
            return Err(Error::Validation("dp requires dt > 0 and dr > 0".into()));
        }
        let m = spec.node_count();
        let steps = (spec.horizon / cfg.dt - 1e-9).ceil().max(1.0) as usize;
        let caps: Vec<f64> = spec
            .targets
            .iter()
            .map(|t| {
                if t.waypoint {
                    0.0
                } else {
                    let reachable = t.r0 + t.growth * spec.horizon;
                    cfg.r_max.map_or(reachable, |cap| cap.min(reachable))
                }
            })
            .collect();
        let levels: Vec<usize> = caps
            .iter()
            .map(|&c| (c / cfg.dr + 1e-9).floor() as usize + 1)
            .collect();
        let mut travel_steps = vec![usize::MAX; m * m];
        for &(i, j) in spec.graph.edges() {
            let t = spec.graph.travel_time(i, j);
            let s = ((t / cfg.dt - 1e-9).ceil() as usize).max(1);
            travel_steps[i * m + j] = s;
            travel_steps[j * m + i] = s;
        }
        Ok(Grid {
            m,
            dt: cfg.dt,
            dr: cfg.dr,
            levels,
            caps,
            steps,
            t_norm: steps as f64 * cfg.dt,
            travel_steps,
            growth: spec.targets.iter().map(|t| t.growth).collect(),
            collect: spec.targets.iter().map(|t| t.collect).collect(),
            waypoint: spec.targets.iter().map(|t| t.waypoint).collect(),
            start: spec.agents[0].start_node,
            r0: spec.targets.iter().map(|t| t.r0).collect(),
        })
    }

    /// Product of the per-target grid sizes; None on overflow (the budget
    /// check treats that as over budget).
    fn r_states(&self) -> Option<usize> {
        self.levels
            .iter()
            .try_fold(1usize, |acc, &l| acc.checked_mul(l))
    }

    fn quantize(&self, i: usize, value: f64) -> f64 {
        let v = (value / self.dr).round() * self.dr;
        v.clamp(0.0, self.caps[i])
    }

    fn decode_into(&self, mut idx: usize, r: &mut [f64]) {
        for i in 0..self.m {
            r[i] = (idx % self.levels[i]) as f64 * self.dr;
            idx /= self.levels[i];
        }
    }

    fn encode(&self, r: &[f64]) -> usize {
        let mut idx = 0usize;
        for i in (0..self.m).rev() {
            let level = (r[i] / self.dr + 0.5) as usize;
            idx = idx * self.levels[i] + level.min(self.levels[i] - 1);
        }
        idx
    }

    /// One dt step with the agent dwelling at `at` (or absent when None).
    /// Returns the stage cost of the step and mutates `r` in place.
    fn advance_step(&self, r: &mut [f64], at: Option<usize>) -> f64 {
        let mut cost = 0.0;
        for i in 0..self.m {
            if self.waypoint[i] {
                continue;
            }
            let occupied = at == Some(i);
            let rate = if occupied {
                self.growth[i] - self.collect[i]
            } else {
                self.growth[i]
            };
            let before = r[i];
            let after = self.quantize(i, before + rate * self.dt);
            cost += 0.5 * (before + after) * self.dt / self.t_norm;
            r[i] = after;
        }
        cost
    }

    /// Cost of the depart-to macro action written into `fly` (duration is
    /// `travel_steps`, truncated at the horizon for cost purposes).
    fn depart_into(&self, fly: &mut [f64], steps: usize, t: usize) -> f64 {
        let mut cost = 0.0;
        for walked in 0..steps {
            if t + walked >= self.steps {
                break;
            }
            cost += self.advance_step(fly, None);
        }
        cost
    }
}

/// Backward-induction value iteration over the (node, R grid) state space.
pub fn value_iteration(spec: &MissionSpec, cfg: &DpConfig) -> Result<DpResult> {
    let grid = Grid::new(spec, cfg)?;
    let m = grid.m;
    let max_travel = spec
        .graph
        .edges()
        .iter()
        .map(|&(i, j)| grid.travel_steps[i * m + j])
        .max()
        .unwrap_or(1)
        .max(1);
    let ring = max_travel + 1;
    let over_budget = |states: usize| Error::DpBudget {
        states,
        layers: ring + grid.steps,
        budget: cfg.budget_bytes,
    };
    let state_count = grid
        .r_states()
        .and_then(|r| r.checked_mul(m))
        .ok_or_else(|| over_budget(usize::MAX))?;
    let bytes = state_count
        .checked_mul(ring)
        .and_then(|v| v.checked_mul(std::mem::size_of::<f64>()))
        .and_then(|v| v.checked_add(state_count.checked_mul(grid.steps)?))
        .ok_or_else(|| over_budget(state_count))?;
    if bytes > cfg.budget_bytes {
        return Err(over_budget(state_count));
    }

    // values[t % ring] holds V_t while t is inside the lookahead window;
    // slots start at zero, which doubles as the terminal layer V_H = 0 (and
    // beyond: a flight crossing the horizon continues into zero value).
    // Layers index states as ridx * m + node.
    let mut values: Vec<Vec<f64>> = vec![vec![0.0; state_count]; ring];
    let mut policy: Vec<Vec<u8>> = vec![Vec::new(); grid.steps];

    for t in (0..grid.steps).rev() {
        let mut layer = vec![0.0f64; state_count];
        let mut decisions = vec![0u8; state_count];
        {
            let values = &values;
            let grid = &grid;
            layer
                .par_chunks_mut(m)
                .zip(decisions.par_chunks_mut(m))
                .enumerate()
                .for_each_init(
                    || (vec![0.0f64; m], vec![0.0f64; m]),
                    |(r, fly), (ridx, (vrow, arow))| {
                        grid.decode_into(ridx, r);
                        for node in 0..m {
                            fly.copy_from_slice(r);
                            let dwell_cost = grid.advance_step(fly, Some(node));
                            let mut best = dwell_cost
                                + if t + 1 < grid.steps {
                                    values[(t + 1) % ring][grid.encode(fly) * m + node]
                                } else {
                                    0.0
                                };
                            let mut best_action = 0u8;
                            for (k, &j) in spec.ordered_neighborhood(node).iter().enumerate() {
                                let steps = grid.travel_steps[node * m + j];
                                fly.copy_from_slice(r);
                                let travel_cost = grid.depart_into(fly, steps, t);
                                let tail = if t + steps < grid.steps {
                                    values[(t + steps) % ring][grid.encode(fly) * m + j]
                                } else {
                                    0.0
                                };
                                let total = travel_cost + tail;
                                if total < best - 1e-12 {
                                    best = total;
                                    best_action = (k + 1) as u8;
                                }
                            }
                            vrow[node] = best;
                            arow[node] = best_action;
                        }
                    },
                );
        }
        values[t % ring] = layer;
        policy[t] = decisions;
    }

    // Greedy rollout from the quantized initial state.
    let mut r: Vec<f64> = (0..m).map(|i| grid.quantize(i, grid.r0[i])).collect();
    let mut node = grid.start;
    let mut t = 0usize;
    let mut rollout_cost = 0.0;
    let mut rollout = Vec::new();
    while t < grid.steps {
        let ridx = grid.encode(&r);
        let a = policy[t][ridx * m + node];
        if a == 0 {
            rollout.push(RolloutStep {
                step: t,
                time: t as f64 * grid.dt,
                node,
                action: RolloutAction::Dwell,
                r: r.clone(),
            });
            rollout_cost += grid.advance_step(&mut r, Some(node));
            t += 1;
        } else {
            let j = spec.ordered_neighborhood(node)[(a - 1) as usize];
            let steps = grid.travel_steps[node * m + j];
            rollout.push(RolloutStep {
                step: t,
                time: t as f64 * grid.dt,
                node,
                action: RolloutAction::Depart { to: j },
                r: r.clone(),
            });
            for walked in 0..steps {
                if t >= grid.steps {
                    break;
                }
                rollout_cost += grid.advance_step(&mut r, None);
                t += 1;
                if walked + 1 < steps && t < grid.steps {
                    rollout.push(RolloutStep {
                        step: t,
                        time: t as f64 * grid.dt,
                        node: j,
                        action: RolloutAction::Travel {
                            to: j,
                            remaining: steps - walked - 1,
                        },
                        r: r.clone(),
                    });
                }
            }
            node = j;
        }
    }

    let start_r: Vec<f64> = (0..m).map(|i| grid.quantize(i, grid.r0[i])).collect();
    let cost = values[0][grid.encode(&start_r) * m + grid.start];
    let rollout_cost_continuous = evaluate_rollout_continuous(spec, cfg, &rollout)?;
    Ok(DpResult {
        cost,
        rollout,
        rollout_cost,
        rollout_cost_continuous,
        state_count,
        sweeps: grid.steps,
    })
}

/// Exhaustive enumeration over every action sequence; exponential and only
/// meant as the optimality oracle on toy instances. Uses the identical
/// discretized dynamics but no value tables.
pub fn enumerate_optimal(spec: &MissionSpec, cfg: &DpConfig) -> Result<f64> {
    let grid = Grid::new(spec, cfg)?;
    let r: Vec<f64> = (0..grid.m).map(|i| grid.quantize(i, grid.r0[i])).collect();
    fn recurse(spec: &MissionSpec, grid: &Grid, t: usize, node: usize, r: &[f64]) -> f64 {
        if t >= grid.steps {
            return 0.0;
        }
        // Dwell branch.
        let mut next = r.to_vec();
        let dwell_cost = grid.advance_step(&mut next, Some(node));
        let mut best = dwell_cost + recurse(spec, grid, t + 1, node, &next);
        // Departure branches.
        for &j in spec.ordered_neighborhood(node) {
            let steps = grid.travel_steps[node * grid.m + j];
            let mut fly = r.to_vec();
            let mut cost = 0.0;
            let mut walked = 0;
            for _ in 0..steps {
                if t + walked >= grid.steps {
                    break;
                }
                cost += grid.advance_step(&mut fly, None);
                walked += 1;
            }
            let total = cost + recurse(spec, grid, t + steps, j, &fly);
            if total < best {
                best = total;
            }
        }
        best
    }
    Ok(recurse(spec, &grid, 0, grid.start, &r))
}

/// Forward rollout of the threshold policy on the same discretized dynamics,
/// for baseline-dominance comparisons against the DP optimum.
pub fn rollout_threshold_discretized(
    spec: &MissionSpec,
    theta: &ThresholdMatrix,
    cfg: &DpConfig,
) -> Result<f64> {
    let grid = Grid::new(spec, cfg)?;
    let mut r: Vec<f64> = (0..grid.m).map(|i| grid.quantize(i, grid.r0[i])).collect();
    let mut cost = 0.0;
    let mut t = 0usize;
    let mut node = grid.start;
    while t < grid.steps {
        // Stay while R_node exceeds the diagonal threshold; otherwise take
        // the first proximity-ordered neighbor above its threshold.
        let mut depart_to = None;
        if r[node] <= theta.get(node, node, 0) {
            for &j in spec.ordered_neighborhood(node) {
                if r[j] >= theta.get(node, j, 0) {
                    depart_to = Some(j);
                    break;
                }
            }
        }
        match depart_to {
            None => {
                cost += grid.advance_step(&mut r, Some(node));
                t += 1;
            }
            Some(j) => {
                let steps = grid.travel_steps[node * grid.m + j];
                for walked in 0..steps {
                    if t + walked >= grid.steps {
                        break;
                    }
                    cost += grid.advance_step(&mut r, None);
                }
                t += steps;
                node = j;
            }
        }
    }
    Ok(cost)
}

/// Replay a rollout's schedule under the exact continuous-time dynamics
/// (real rates, exact zero clamping, trapezoid integrals) using the same
/// rounded travel times the policy committed to.
pub fn evaluate_rollout_continuous(
    spec: &MissionSpec,
    cfg: &DpConfig,
    rollout: &[RolloutStep],
) -> Result<f64> {
    let grid = Grid::new(spec, cfg)?;
    let mut r: Vec<f64> = grid.r0.clone();
    let mut integral = 0.0;
    // Advance one continuous dt with the agent at `at` (None = traveling).
    let mut advance = |r: &mut Vec<f64>, at: Option<usize>| {
        for i in 0..grid.m {
            if grid.waypoint[i] {
                continue;
            }
            let rate = if at == Some(i) {
                grid.growth[i] - grid.collect[i]
            } else {
                grid.growth[i]
            };
            let before = r[i];
            let after = before + rate * grid.dt;
            if after >= 0.0 {
                integral += 0.5 * (before + after) * grid.dt;
                r[i] = after;
            } else {
                // Hits zero inside the step: triangle area then flat zero.
                let t_zero = before / (-rate);
                integral += 0.5 * before * t_zero;
                r[i] = 0.0;
            }
        }
    };
    let mut t = 0usize;
    for step in rollout {
        match step.action {
            RolloutAction::Dwell => {
                advance(&mut r, Some(step.node));
                t += 1;
            }
            RolloutAction::Depart { to } => {
                let steps = grid.travel_steps[step.node * grid.m + to];
                for _ in 0..steps {
                    if t >= grid.steps {
                        break;
                    }
                    advance(&mut r, None);
                    t += 1;
                }
            }
            RolloutAction::Travel { .. } => {}
        }
        if t >= grid.steps {
            break;
        }
    }
    while t < grid.steps {
        // Defensive tail: schedule shorter than the horizon (cannot happen
        // for rollouts produced by value_iteration).
        advance(&mut r, None);
        t += 1;
    }
    Ok(integral / grid.t_norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{build_mission, Point, TargetSpec};

    fn target(x: f64, y: f64, a: f64, b: f64, r0: f64) -> TargetSpec {
        TargetSpec {
            position: Point { x, y },
            growth: a,
            collect: b,
            r0,
            waypoint: false,
        }
    }

    #[test]
    fn lone_drained_target_costs_nothing() {
        let spec = build_mission(
            8.0,
            vec![target(0.0, 0.0, 1.0, 2.0, 0.0)],
            &[],
            &[0],
            0.0,
        )
        .unwrap();
        let result = value_iteration(&spec, &DpConfig::default()).unwrap();
        assert_eq!(result.cost, 0.0);
        assert_eq!(result.rollout_cost, 0.0);
    }

    #[test]
    fn matches_exhaustive_enumeration_on_toy() {
        // Two targets, ten steps: at most 2^10 sequences.
        let spec = build_mission(
            10.0,
            vec![
                target(0.0, 0.0, 1.0, 3.0, 4.0),
                target(2.0, 0.0, 1.0, 3.0, 2.0),
            ],
            &[(0, 1, None)],
            &[0],
            0.0,
        )
        .unwrap();
        let cfg = DpConfig::default();
        let dp = value_iteration(&spec, &cfg).unwrap();
        let brute = enumerate_optimal(&spec, &cfg).unwrap();
        assert!(
            (dp.cost - brute).abs() < 1e-9,
            "dp {} vs enumeration {brute}",
            dp.cost
        );
        assert!((dp.rollout_cost - dp.cost).abs() < 1e-9);
    }

    #[test]
    fn cost_to_go_grows_with_remaining_horizon() {
        // With nonnegative stage costs, the optimal cost from a fixed state
        // cannot shrink when more steps remain.
        let targets = vec![
            target(0.0, 0.0, 1.0, 3.0, 4.0),
            target(2.0, 0.0, 1.0, 3.0, 2.0),
        ];
        let mut prev = 0.0;
        for steps in 1..=8 {
            let spec = build_mission(steps as f64, targets.clone(), &[(0, 1, None)], &[0], 0.0)
                .unwrap();
            // Compare unnormalized integrals so horizons are comparable.
            let dp = value_iteration(&spec, &DpConfig::default()).unwrap();
            let unnormalized = dp.cost * steps as f64;
            assert!(
                unnormalized >= prev - 1e-9,
                "cost-to-go shrank at {steps} steps"
            );
            prev = unnormalized;
        }
    }

    #[test]
    fn threshold_rollout_never_beats_dp() {
        let spec = build_mission(
            12.0,
            vec![
                target(0.0, 0.0, 1.0, 4.0, 5.0),
                target(2.0, 0.0, 1.0, 4.0, 1.0),
                target(0.0, 2.0, 1.0, 4.0, 3.0),
            ],
            &[(0, 1, None), (0, 2, None), (1, 2, None)],
            &[0],
            2.0,
        )
        .unwrap();
        let cfg = DpConfig::default();
        let dp = value_iteration(&spec, &cfg).unwrap();
        let fixed = rollout_threshold_discretized(&spec, &spec.theta0, &cfg).unwrap();
        assert!(
            dp.cost <= fixed + 1e-9,
            "dp {} should dominate threshold rollout {fixed}",
            dp.cost
        );
    }

    #[test]
    fn multi_agent_is_rejected() {
        let spec = build_mission(
            10.0,
            vec![
                target(0.0, 0.0, 1.0, 2.0, 1.0),
                target(2.0, 0.0, 1.0, 2.0, 1.0),
            ],
            &[(0, 1, None)],
            &[0, 1],
            1.0,
        )
        .unwrap();
        assert!(matches!(
            value_iteration(&spec, &DpConfig::default()),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn budget_overflow_is_reported() {
        let spec = build_mission(
            50.0,
            vec![
                target(0.0, 0.0, 1.0, 2.0, 10.0),
                target(2.0, 0.0, 1.0, 2.0, 10.0),
                target(0.0, 2.0, 1.0, 2.0, 10.0),
                target(2.0, 2.0, 1.0, 2.0, 10.0),
            ],
            &[(0, 1, None), (1, 3, None), (2, 3, None), (0, 2, None)],
            &[0],
            1.0,
        )
        .unwrap();
        let cfg = DpConfig {
            budget_bytes: 1024,
            ..DpConfig::default()
        };
        assert!(matches!(
            value_iteration(&spec, &cfg),
            Err(Error::DpBudget { .. })
        ));
    }
}
