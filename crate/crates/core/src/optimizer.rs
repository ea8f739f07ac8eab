//! Projected gradient descent on the threshold matrix with a diminishing
//! step-size schedule.

use crate::error::{Error, Result};
use crate::ipa::{grad_j, GradResult};
use crate::scenario::{MissionSpec, ThresholdMatrix};
use crate::sim::simulate;

/// Step schedule beta_l = beta0 / (1 + l)^gamma. Any gamma in (0.5, 1]
/// keeps the series divergent while the steps vanish.
#[derive(Debug, Clone)]
pub struct DescentConfig {
    pub iterations: usize,
    pub beta0: f64,
    pub gamma: f64,
    /// Optional early stop on the max-norm threshold change.
    pub tol: Option<f64>,
}

impl Default for DescentConfig {
    fn default() -> Self {
        DescentConfig {
            iterations: 300,
            beta0: 1.0,
            gamma: 0.6,
            tol: None,
        }
    }
}

impl DescentConfig {
    pub fn step_size(&self, l: usize) -> f64 {
        self.beta0 / (1.0 + l as f64).powf(self.gamma)
    }

    fn validate(&self) -> Result<()> {
        if !(self.beta0 > 0.0) {
            return Err(Error::Validation(format!(
                "beta0 must be positive, got {}",
                self.beta0
            )));
        }
        if !(self.gamma > 0.5 && self.gamma <= 1.0) {
            return Err(Error::Validation(format!(
                "gamma must lie in (0.5, 1], got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// One recorded iterate.
#[derive(Debug, Clone)]
pub struct DescentIterate {
    pub theta: ThresholdMatrix,
    pub cost: f64,
    pub grad_norm: f64,
    /// Smallest diagonal gradient component over non-waypoint nodes and all
    /// agents (strictly positive throughout single-agent drain-capable runs).
    pub min_diag_grad: f64,
    /// Per-agent visiting sequence under this iterate's thresholds.
    pub visits: Vec<Vec<usize>>,
}

/// Full optimization record. When a singular guard interrupts an evaluation
/// the iterations recorded so far are kept and `diagnostic` explains why the
/// run stopped early.
#[derive(Debug, Clone)]
pub struct DescentTrace {
    pub iterates: Vec<DescentIterate>,
    /// Iteration index at which the early-stop tolerance fired, if it did.
    pub converged_at: Option<usize>,
    pub diagnostic: Option<String>,
}

impl DescentTrace {
    pub fn initial_cost(&self) -> f64 {
        self.iterates.first().map(|i| i.cost).unwrap_or(f64::NAN)
    }

    pub fn final_cost(&self) -> f64 {
        self.iterates.last().map(|i| i.cost).unwrap_or(f64::NAN)
    }

    pub fn final_theta(&self) -> Option<&ThresholdMatrix> {
        self.iterates.last().map(|i| &i.theta)
    }
}

fn evaluate(spec: &MissionSpec, theta: &ThresholdMatrix) -> Result<(GradResult, Vec<Vec<usize>>)> {
    let grad = grad_j(spec, theta)?;
    // The visiting sequence is a by-product of the same trajectory; the
    // gradient co-simulation does not expose it, so replay deterministically.
    let run = simulate(spec, theta);
    Ok((grad, run.visits))
}

fn min_diag_grad(spec: &MissionSpec, grad: &GradResult) -> f64 {
    let mut min = f64::INFINITY;
    for z in 0..spec.agent_count() {
        for (i, t) in spec.targets.iter().enumerate() {
            if !t.waypoint {
                min = min.min(grad.get(i, i, z));
            }
        }
    }
    min
}

/// Projected descent theta <- max(theta - beta_l * grad J, 0) on finite
/// entries; +inf (non-edge) entries are never touched.
pub fn descend(spec: &MissionSpec, theta0: &ThresholdMatrix, cfg: &DescentConfig) -> Result<DescentTrace> {
    cfg.validate()?;
    let mut theta = theta0.clone();
    theta.project_nonnegative();
    let mut trace = DescentTrace {
        iterates: Vec::with_capacity(cfg.iterations + 1),
        converged_at: None,
        diagnostic: None,
    };
    for l in 0..=cfg.iterations {
        let (grad, visits) = match evaluate(spec, &theta) {
            Ok(v) => v,
            Err(e @ Error::SingularGuard { .. }) => {
                trace.diagnostic = Some(e.to_string());
                return Ok(trace);
            }
            Err(e) => return Err(e),
        };
        trace.iterates.push(DescentIterate {
            theta: theta.clone(),
            cost: grad.cost,
            grad_norm: grad.norm(),
            min_diag_grad: min_diag_grad(spec, &grad),
            visits,
        });
        if l == cfg.iterations {
            break;
        }
        let beta = cfg.step_size(l);
        let mut next = theta.clone();
        let finite: Vec<(usize, usize, usize, f64)> = theta.iter_finite().collect();
        for (p, q, z, value) in finite {
            next.set(p, q, z, value - beta * grad.get(p, q, z));
        }
        next.project_nonnegative();
        if let Some(tol) = cfg.tol {
            if next.max_abs_diff(&theta) < tol {
                trace.converged_at = Some(l + 1);
                theta = next;
                let (grad, visits) = match evaluate(spec, &theta) {
                    Ok(v) => v,
                    Err(e @ Error::SingularGuard { .. }) => {
                        trace.diagnostic = Some(e.to_string());
                        return Ok(trace);
                    }
                    Err(e) => return Err(e),
                };
                trace.iterates.push(DescentIterate {
                    theta: theta.clone(),
                    cost: grad.cost,
                    grad_norm: grad.norm(),
                    min_diag_grad: min_diag_grad(spec, &grad),
                    visits,
                });
                break;
            }
        }
        theta = next;
    }
    Ok(trace)
}

/// Run descent on a single-agent mission and return the trajectory of the
/// diagonal thresholds, one row per iterate. Requires A_i < B_i everywhere
/// (the drain-capable regime in which the diagonal gradients stay positive).
pub fn zero_diagonal_check(
    spec: &MissionSpec,
    theta0: &ThresholdMatrix,
    cfg: &DescentConfig,
) -> Result<(DescentTrace, Vec<Vec<f64>>)> {
    if spec.agent_count() != 1 {
        return Err(Error::Unsupported(
            "diagonal-threshold analysis applies to single-agent missions".into(),
        ));
    }
    for (i, t) in spec.targets.iter().enumerate() {
        if !t.waypoint && t.growth >= t.collect {
            return Err(Error::Validation(format!(
                "target {}: requires A < B for a single agent (got A={}, B={})",
                i + 1,
                t.growth,
                t.collect
            )));
        }
    }
    let trace = descend(spec, theta0, cfg)?;
    let diag = trace
        .iterates
        .iter()
        .map(|it| {
            (0..spec.node_count())
                .map(|i| it.theta.get(i, i, 0))
                .collect()
        })
        .collect();
    Ok((trace, diag))
}
