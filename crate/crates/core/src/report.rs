//! Deterministic artifact emission: fixed-format CSV writers, checksums and
//! the per-run manifest.
//!
//! Every artifact goes through one [`Emitter`]: floats are printed with 17
//! significant digits, lines end with `\n`, files are written atomically and
//! checksummed, so identical invocations produce byte-identical outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::dp::{DpResult, RolloutAction};
use crate::error::Result;
use crate::gradcheck::GradCheckReport;
use crate::ipa::{GradResult, TraceRow};
use crate::optimizer::DescentTrace;
use crate::scenario::ThresholdMatrix;
use crate::sim::SimResult;
use crate::theory::SpectralReport;

/// 17 significant digits, round-trip exact for f64.
pub fn fmt_f64(x: f64) -> String {
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    format!("{x:.16e}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes artifacts into one output directory and accumulates their
/// checksums for the manifest.
pub struct Emitter {
    out_dir: PathBuf,
    artifacts: Vec<(String, String)>,
}

impl Emitter {
    pub fn new(out_dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(out_dir)?;
        Ok(Emitter {
            out_dir: out_dir.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    /// Atomic write (temp file + rename) with checksum tracking.
    pub fn emit(&mut self, name: &str, content: &str) -> Result<()> {
        let path = self.out_dir.join(name);
        let tmp = self.out_dir.join(format!(".{name}.tmp"));
        std::fs::write(&tmp, content)?;
        std::fs::rename(&tmp, &path)?;
        self.artifacts.push((name.to_string(), sha256_hex(content.as_bytes())));
        Ok(())
    }

    /// Write the manifest last; it lists every artifact written so far.
    pub fn finish_manifest(
        mut self,
        subcommand: &str,
        config_path: Option<&Path>,
        parameters: BTreeMap<String, String>,
        duration_seconds: f64,
    ) -> Result<()> {
        self.artifacts.sort();
        let manifest = RunManifest {
            subcommand: subcommand.to_string(),
            config: config_path.map(|p| p.display().to_string()),
            parameters,
            out_dir: self.out_dir.display().to_string(),
            duration_seconds,
            artifacts: self
                .artifacts
                .iter()
                .map(|(name, sha256)| ArtifactEntry {
                    name: name.clone(),
                    sha256: sha256.clone(),
                })
                .collect(),
        };
        let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        let tmp = self.out_dir.join(".manifest.json.tmp");
        std::fs::write(&tmp, body)?;
        std::fs::rename(tmp, self.out_dir.join("manifest.json"))?;
        Ok(())
    }
}

#[derive(Debug, Serialize)]
struct RunManifest {
    subcommand: String,
    config: Option<String>,
    parameters: BTreeMap<String, String>,
    out_dir: String,
    duration_seconds: f64,
    artifacts: Vec<ArtifactEntry>,
}

#[derive(Debug, Serialize)]
struct ArtifactEntry {
    name: String,
    sha256: String,
}

fn opt_id(v: Option<usize>) -> String {
    v.map(|x| (x + 1).to_string()).unwrap_or_default()
}

// ---------------------------------------------------------------------------
// CSV renderers (all ids 1-based in artifacts)
// ---------------------------------------------------------------------------

pub fn events_csv(result: &SimResult) -> String {
    let mut out = String::from("k,time,kind,agent,target,aux_target,R_target_after\n");
    for e in &result.events {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            e.k,
            fmt_f64(e.time),
            e.kind.as_str(),
            opt_id(e.agent),
            e.target + 1,
            opt_id(e.aux_target),
            fmt_f64(e.r_after)
        ));
    }
    out
}

pub fn trajectories_csv(result: &SimResult) -> String {
    let mut out = String::from("target,segment_start,segment_end,R_start,R_end\n");
    for s in &result.segments {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            s.target + 1,
            fmt_f64(s.t0),
            fmt_f64(s.t1),
            fmt_f64(s.r0),
            fmt_f64(s.r1)
        ));
    }
    out
}

pub fn theta_csv(theta: &ThresholdMatrix) -> String {
    let mut out = String::from("p,q,z,value\n");
    for z in 0..theta.agent_count() {
        for p in 0..theta.node_count() {
            for q in 0..theta.node_count() {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    p + 1,
                    q + 1,
                    z + 1,
                    fmt_f64(theta.get(p, q, z))
                ));
            }
        }
    }
    out
}

pub fn cost_trace_csv(trace: &DescentTrace) -> String {
    let mut out = String::from("l,J,grad_norm\n");
    for (l, it) in trace.iterates.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{}\n",
            l,
            fmt_f64(it.cost),
            fmt_f64(it.grad_norm)
        ));
    }
    out
}

pub fn theta_trace_csv(trace: &DescentTrace) -> String {
    let mut out = String::from("l,p,q,z,value\n");
    for (l, it) in trace.iterates.iter().enumerate() {
        for (p, q, z, v) in it.theta.iter_finite() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                l,
                p + 1,
                q + 1,
                z + 1,
                fmt_f64(v)
            ));
        }
    }
    out
}

pub fn visits_csv(trace: &DescentTrace) -> String {
    let mut out = String::from("l,agent,step,node\n");
    for (l, it) in trace.iterates.iter().enumerate() {
        for (a, seq) in it.visits.iter().enumerate() {
            for (s, node) in seq.iter().enumerate() {
                out.push_str(&format!("{},{},{},{}\n", l, a + 1, s, node + 1));
            }
        }
    }
    out
}

pub fn gradient_csv(grad: &GradResult) -> String {
    let mut out = String::from("p,q,z,value\n");
    for z in 0..grad.agent_count() {
        for p in 0..grad.node_count() {
            for q in 0..grad.node_count() {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    p + 1,
                    q + 1,
                    z + 1,
                    fmt_f64(grad.get(p, q, z))
                ));
            }
        }
    }
    out
}

pub fn gradcheck_csv(report: &GradCheckReport) -> String {
    let mut out = String::from("p,q,z,theta,ipa,fd,rel_err,seq_changed\n");
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.p + 1,
            r.q + 1,
            r.z + 1,
            fmt_f64(r.theta),
            fmt_f64(r.ipa),
            fmt_f64(r.fd),
            if r.rel_err.is_nan() {
                String::new()
            } else {
                fmt_f64(r.rel_err)
            },
            r.seq_changed as u8
        ));
    }
    out
}

pub fn grad_trace_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from("k,time,target,p,q,z,dR\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.event_index,
            fmt_f64(r.time),
            r.target + 1,
            r.p + 1,
            r.q + 1,
            r.z + 1,
            fmt_f64(r.value)
        ));
    }
    out
}

pub fn spectral_csv(reports: &[SpectralReport]) -> String {
    let mut out = String::from(
        "rho,max_norm,eig1_re,eig1_im,eig2_re,eig2_im,eig3_re,eig3_im,eig4_re,eig4_im\n",
    );
    for r in reports {
        out.push_str(&format!("{},{}", fmt_f64(r.rho), fmt_f64(r.max_norm)));
        for e in &r.eigenvalues {
            out.push_str(&format!(",{},{}", fmt_f64(e.re), fmt_f64(e.im)));
        }
        out.push('\n');
    }
    out
}

pub fn grad_cycles_csv(trajectory: &[nalgebra::Vector4<f64>]) -> String {
    let mut out = String::from("cycle,dR1_dtheta1,dR1_dtheta2,dR2_dtheta1,dR2_dtheta2\n");
    for (k, x) in trajectory.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            k,
            fmt_f64(x[0]),
            fmt_f64(x[1]),
            fmt_f64(x[2]),
            fmt_f64(x[3])
        ));
    }
    out
}

pub fn dp_cost_txt(result: &DpResult) -> String {
    format!(
        "J_dp {}\nJ_rollout {}\nJ_rollout_continuous {}\nstates {}\nsweeps {}\n",
        fmt_f64(result.cost),
        fmt_f64(result.rollout_cost),
        fmt_f64(result.rollout_cost_continuous),
        result.state_count,
        result.sweeps
    )
}

pub fn dp_rollout_csv(result: &DpResult) -> String {
    let m = result.rollout.first().map(|s| s.r.len()).unwrap_or(0);
    let mut out = String::from("step,time,node,action");
    for i in 0..m {
        out.push_str(&format!(",R{}", i + 1));
    }
    out.push('\n');
    for s in &result.rollout {
        let action = match s.action {
            RolloutAction::Dwell => "dwell".to_string(),
            RolloutAction::Depart { to } => format!("depart->{}", to + 1),
            RolloutAction::Travel { to, remaining } => {
                format!("travel->{}({})", to + 1, remaining)
            }
        };
        out.push_str(&format!(
            "{},{},{},{}",
            s.step,
            fmt_f64(s.time),
            s.node + 1,
            action
        ));
        for v in &s.r {
            out.push_str(&format!(",{}", fmt_f64(*v)));
        }
        out.push('\n');
    }
    out
}
