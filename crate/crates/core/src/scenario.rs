//! Mission description: targets, graph topology, travel times, agents,
//! ordered neighborhoods and the threshold matrix.
//!
//! Everything here is immutable after [`load_scenario`] succeeds and safe to
//! share read-only across concurrent simulation runs.
//!
//! Node and agent indices are 0-based everywhere in code; configuration files
//! and CSV artifacts use the 1-based ids the mission author wrote.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A 2D location in the mission plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn dist(&self, other: &Point) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// One monitored node: uncertainty grows at `growth` when unattended and
/// drains at `collect` per dwelling agent. Way points carry no uncertainty;
/// their state is pinned to zero and they are excluded from the cost.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSpec {
    pub position: Point,
    /// Uncertainty growth rate (units/s), > 0.
    pub growth: f64,
    /// Per-agent collection rate (units/s), > 0.
    pub collect: f64,
    /// Initial uncertainty, >= 0.
    pub r0: f64,
    pub waypoint: bool,
}

/// An agent and the node it starts on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentSpec {
    pub start_node: usize,
}

/// Undirected topology with per-edge travel times and proximity-ordered
/// neighborhoods shared by all agents.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    node_count: usize,
    /// Normalized (i < j) unordered edges.
    edges: Vec<(usize, usize)>,
    /// Dense travel-time lookup; +inf where no edge, 0 on the diagonal.
    travel: Vec<f64>,
    /// Neighbors of each node sorted by Euclidean distance, ties by id.
    neighborhoods: Vec<Vec<usize>>,
}

impl Graph {
    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i != j && self.travel[i * self.node_count + j].is_finite()
    }

    /// Travel time between adjacent nodes; +inf when no edge exists.
    pub fn travel_time(&self, i: usize, j: usize) -> f64 {
        self.travel[i * self.node_count + j]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighborhoods[i].len()
    }

    /// Neighbors of `i` ordered by proximity, ties broken by ascending id.
    pub fn neighborhood(&self, i: usize) -> &[usize] {
        &self.neighborhoods[i]
    }

    fn connected(&self) -> bool {
        if self.node_count == 0 {
            return false;
        }
        let mut seen = vec![false; self.node_count];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for &j in &self.neighborhoods[i] {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.iter().all(|&s| s)
    }
}

/// The optimization variable: per-agent M x M nonnegative thresholds with
/// +inf marking entries that have no edge behind them.
///
/// Entry (p, q, z) gates agent z at node p: the diagonal (p == q) gates
/// departure from p, off-diagonal entries gate eligibility of neighbor q.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdMatrix {
    node_count: usize,
    agent_count: usize,
    values: Vec<f64>,
}

impl ThresholdMatrix {
    /// All finite entries (diagonal plus both orientations of each edge) set
    /// to `init`; everything else +inf.
    pub fn uniform(graph: &Graph, agent_count: usize, init: f64) -> Self {
        let m = graph.node_count();
        let mut values = vec![f64::INFINITY; m * m * agent_count];
        let mut out = ThresholdMatrix {
            node_count: m,
            agent_count,
            values: Vec::new(),
        };
        for z in 0..agent_count {
            for p in 0..m {
                for q in 0..m {
                    if p == q || graph.has_edge(p, q) {
                        values[out.index(p, q, z)] = init;
                    }
                }
            }
        }
        out.values = values;
        out
    }

    #[inline]
    pub fn index(&self, p: usize, q: usize, z: usize) -> usize {
        (z * self.node_count + p) * self.node_count + q
    }

    #[inline]
    pub fn get(&self, p: usize, q: usize, z: usize) -> f64 {
        self.values[self.index(p, q, z)]
    }

    pub fn set(&mut self, p: usize, q: usize, z: usize, value: f64) {
        let idx = self.index(p, q, z);
        self.values[idx] = value;
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn agent_count(&self) -> usize {
        self.agent_count
    }

    /// Total number of stored entries (finite and infinite).
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Iterate finite entries as (p, q, z, theta).
    pub fn iter_finite(&self) -> impl Iterator<Item = (usize, usize, usize, f64)> + '_ {
        let m = self.node_count;
        self.values.iter().enumerate().filter_map(move |(idx, &v)| {
            v.is_finite().then(|| {
                let q = idx % m;
                let p = (idx / m) % m;
                let z = idx / (m * m);
                (p, q, z, v)
            })
        })
    }

    /// Elementwise max(., 0) on finite entries; +inf entries untouched.
    pub fn project_nonnegative(&mut self) {
        for v in &mut self.values {
            if v.is_finite() && *v < 0.0 {
                *v = 0.0;
            }
        }
    }

    /// Max absolute difference over finite entries.
    pub fn max_abs_diff(&self, other: &ThresholdMatrix) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .filter(|(a, b)| a.is_finite() && b.is_finite())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// The complete, validated mission description.
#[derive(Debug, Clone, PartialEq)]
pub struct MissionSpec {
    pub horizon: f64,
    pub targets: Vec<TargetSpec>,
    pub agents: Vec<AgentSpec>,
    pub graph: Graph,
    /// Initial thresholds from the configuration document.
    pub theta0: ThresholdMatrix,
}

impl MissionSpec {
    pub fn node_count(&self) -> usize {
        self.targets.len()
    }

    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    /// Proximity-ordered neighbors of node `i` (shared by all agents).
    pub fn ordered_neighborhood(&self, i: usize) -> &[usize] {
        self.graph.neighborhood(i)
    }

    /// Serialize back to the configuration document format. Reloading the
    /// result yields a field-wise identical spec.
    pub fn to_document_string(&self) -> String {
        let doc = Doc {
            mission: MissionSection {
                horizon: self.horizon,
            },
            targets: self
                .targets
                .iter()
                .enumerate()
                .map(|(i, t)| TargetRow {
                    id: (i + 1) as u32,
                    x: t.position.x,
                    y: t.position.y,
                    growth: t.growth,
                    collect: t.collect,
                    r0: t.r0,
                    waypoint: t.waypoint,
                })
                .collect(),
            edges: self
                .graph
                .edges()
                .iter()
                .map(|&(i, j)| EdgeRow {
                    i: (i + 1) as u32,
                    j: (j + 1) as u32,
                    travel_time: Some(self.graph.travel_time(i, j)),
                })
                .collect(),
            agents: self
                .agents
                .iter()
                .enumerate()
                .map(|(z, a)| AgentRow {
                    id: (z + 1) as u32,
                    start_node: (a.start_node + 1) as u32,
                })
                .collect(),
            thresholds: Some(ThresholdsSection::Explicit {
                agent: (0..self.agent_count())
                    .map(|z| ThetaAgentRow {
                        id: (z + 1) as u32,
                        rows: (0..self.node_count())
                            .map(|p| {
                                (0..self.node_count())
                                    .map(|q| self.theta0.get(p, q, z))
                                    .collect()
                            })
                            .collect(),
                    })
                    .collect(),
            }),
        };
        toml::to_string(&doc).expect("mission spec serializes")
    }
}

// ---------------------------------------------------------------------------
// Configuration document schema
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct Doc {
    mission: MissionSection,
    #[serde(default)]
    targets: Vec<TargetRow>,
    #[serde(default)]
    edges: Vec<EdgeRow>,
    #[serde(default)]
    agents: Vec<AgentRow>,
    #[serde(default)]
    thresholds: Option<ThresholdsSection>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MissionSection {
    horizon: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct TargetRow {
    id: u32,
    x: f64,
    y: f64,
    #[serde(rename = "A")]
    growth: f64,
    #[serde(rename = "B")]
    collect: f64,
    #[serde(rename = "R0")]
    r0: f64,
    #[serde(default)]
    waypoint: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct EdgeRow {
    i: u32,
    j: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    travel_time: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AgentRow {
    id: u32,
    start_node: u32,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum ThresholdsSection {
    /// One scalar applied to every finite entry.
    Uniform { init: f64 },
    /// Full per-agent M x M matrices; non-edges must hold `inf`.
    Explicit { agent: Vec<ThetaAgentRow> },
}

#[derive(Debug, Serialize, Deserialize)]
struct ThetaAgentRow {
    id: u32,
    rows: Vec<Vec<f64>>,
}

// ---------------------------------------------------------------------------
// Loading and validation
// ---------------------------------------------------------------------------

/// Parse and validate a mission configuration document (TOML).
pub fn load_scenario(text: &str) -> Result<MissionSpec> {
    let doc: Doc = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    build_from_doc(doc)
}

/// Assemble a mission programmatically; runs the same validation as
/// [`load_scenario`]. `edges` entries are (i, j, optional travel override).
pub fn build_mission(
    horizon: f64,
    targets: Vec<TargetSpec>,
    edges: &[(usize, usize, Option<f64>)],
    agent_starts: &[usize],
    theta_init: f64,
) -> Result<MissionSpec> {
    let graph = build_graph(&targets, edges)?;
    let theta0 = ThresholdMatrix::uniform(&graph, agent_starts.len(), theta_init);
    let agents = agent_starts
        .iter()
        .map(|&s| AgentSpec { start_node: s })
        .collect();
    finish_validation(horizon, targets, agents, graph, theta0)
}

fn build_from_doc(doc: Doc) -> Result<MissionSpec> {
    let m = doc.targets.len();
    if m == 0 {
        return Err(Error::Validation("no targets defined".into()));
    }
    // Target ids must be exactly 1..M; rows may appear in any order.
    let mut targets: Vec<Option<TargetSpec>> = vec![None; m];
    for row in &doc.targets {
        let id = row.id as usize;
        if id == 0 || id > m {
            return Err(Error::Validation(format!(
                "target id {} out of range 1..={m}",
                row.id
            )));
        }
        if targets[id - 1].is_some() {
            return Err(Error::Validation(format!("duplicate target id {}", row.id)));
        }
        targets[id - 1] = Some(TargetSpec {
            position: Point { x: row.x, y: row.y },
            growth: row.growth,
            collect: row.collect,
            r0: row.r0,
            waypoint: row.waypoint,
        });
    }
    let targets: Vec<TargetSpec> = targets.into_iter().map(|t| t.unwrap()).collect();

    let mut edges = Vec::with_capacity(doc.edges.len());
    for row in &doc.edges {
        let (i, j) = (row.i as usize, row.j as usize);
        if i == 0 || i > m || j == 0 || j > m {
            return Err(Error::Validation(format!(
                "edge ({}, {}) references an unknown target",
                row.i, row.j
            )));
        }
        edges.push((i - 1, j - 1, row.travel_time));
    }
    let graph = build_graph(&targets, &edges)?;

    let n = doc.agents.len();
    let mut agents: Vec<Option<AgentSpec>> = vec![None; n];
    for row in &doc.agents {
        let id = row.id as usize;
        if id == 0 || id > n {
            return Err(Error::Validation(format!(
                "agent id {} out of range 1..={n}",
                row.id
            )));
        }
        if agents[id - 1].is_some() {
            return Err(Error::Validation(format!("duplicate agent id {}", row.id)));
        }
        let start = row.start_node as usize;
        if start == 0 || start > m {
            return Err(Error::Validation(format!(
                "agent {} start node {} out of range 1..={m}",
                row.id, row.start_node
            )));
        }
        agents[id - 1] = Some(AgentSpec {
            start_node: start - 1,
        });
    }
    let agents: Vec<AgentSpec> = agents.into_iter().map(|a| a.unwrap()).collect();

    let theta0 = match doc.thresholds {
        None => ThresholdMatrix::uniform(&graph, n, 0.0),
        Some(ThresholdsSection::Uniform { init }) => {
            if !init.is_finite() || init < 0.0 {
                return Err(Error::Validation(format!(
                    "thresholds.init must be a finite nonnegative number, got {init}"
                )));
            }
            ThresholdMatrix::uniform(&graph, n, init)
        }
        Some(ThresholdsSection::Explicit { agent }) => {
            if agent.len() != n {
                return Err(Error::Validation(format!(
                    "thresholds list {} agents, mission has {n}",
                    agent.len()
                )));
            }
            let mut theta = ThresholdMatrix::uniform(&graph, n, 0.0);
            let mut seen = vec![false; n];
            for entry in &agent {
                let id = entry.id as usize;
                if id == 0 || id > n || seen[id - 1] {
                    return Err(Error::Validation(format!(
                        "bad or duplicate threshold agent id {}",
                        entry.id
                    )));
                }
                seen[id - 1] = true;
                if entry.rows.len() != m || entry.rows.iter().any(|r| r.len() != m) {
                    return Err(Error::Validation(format!(
                        "threshold matrix for agent {} is not {m}x{m}",
                        entry.id
                    )));
                }
                for (p, row) in entry.rows.iter().enumerate() {
                    for (q, &v) in row.iter().enumerate() {
                        theta.set(p, q, id - 1, v);
                    }
                }
            }
            theta
        }
    };

    finish_validation(doc.mission.horizon, targets, agents, graph, theta0)
}

fn build_graph(targets: &[TargetSpec], edges: &[(usize, usize, Option<f64>)]) -> Result<Graph> {
    let m = targets.len();
    let mut travel = vec![f64::INFINITY; m * m];
    for i in 0..m {
        travel[i * m + i] = 0.0;
    }
    let mut normalized = Vec::with_capacity(edges.len());
    for &(i, j, tt) in edges {
        if i == j {
            return Err(Error::Validation(format!("self-loop edge at target {}", i + 1)));
        }
        if i >= m || j >= m {
            return Err(Error::Validation(format!(
                "edge ({}, {}) references an unknown target",
                i + 1,
                j + 1
            )));
        }
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        if travel[a * m + b].is_finite() {
            return Err(Error::Validation(format!("duplicate edge ({}, {})", a + 1, b + 1)));
        }
        let time = match tt {
            Some(t) => t,
            // Unit agent speed: travel time defaults to Euclidean distance.
            None => targets[i].position.dist(&targets[j].position),
        };
        if !(time > 0.0) || !time.is_finite() {
            return Err(Error::Validation(format!(
                "edge ({}, {}) travel time must be positive and finite, got {time}",
                a + 1,
                b + 1
            )));
        }
        travel[a * m + b] = time;
        travel[b * m + a] = time;
        normalized.push((a, b));
    }
    normalized.sort_unstable();

    let mut neighborhoods = vec![Vec::new(); m];
    for i in 0..m {
        let mut neigh: Vec<usize> = (0..m)
            .filter(|&j| j != i && travel[i * m + j].is_finite())
            .collect();
        // Proximity order with deterministic tie-break by ascending id.
        neigh.sort_by(|&a, &b| {
            let da = targets[i].position.dist(&targets[a].position);
            let db = targets[i].position.dist(&targets[b].position);
            da.partial_cmp(&db).unwrap().then(a.cmp(&b))
        });
        neighborhoods[i] = neigh;
    }

    let graph = Graph {
        node_count: m,
        edges: normalized,
        travel,
        neighborhoods,
    };
    if !graph.connected() {
        return Err(Error::Validation("graph is not connected".into()));
    }
    Ok(graph)
}

fn finish_validation(
    horizon: f64,
    targets: Vec<TargetSpec>,
    agents: Vec<AgentSpec>,
    graph: Graph,
    theta0: ThresholdMatrix,
) -> Result<MissionSpec> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::Validation(format!(
            "mission horizon must be positive, got {horizon}"
        )));
    }
    for (i, t) in targets.iter().enumerate() {
        if !(t.growth > 0.0) || !t.growth.is_finite() {
            return Err(Error::Validation(format!(
                "target {}: growth rate A must be > 0, got {}",
                i + 1,
                t.growth
            )));
        }
        if !(t.collect > 0.0) || !t.collect.is_finite() {
            return Err(Error::Validation(format!(
                "target {}: collection rate B must be > 0, got {}",
                i + 1,
                t.collect
            )));
        }
        if !(t.r0 >= 0.0) || !t.r0.is_finite() {
            return Err(Error::Validation(format!(
                "target {}: R0 must be >= 0, got {}",
                i + 1,
                t.r0
            )));
        }
        if t.waypoint && t.r0 != 0.0 {
            return Err(Error::Validation(format!(
                "target {}: way points carry no uncertainty, R0 must be 0",
                i + 1
            )));
        }
    }
    for (z, a) in agents.iter().enumerate() {
        if a.start_node >= targets.len() {
            return Err(Error::Validation(format!(
                "agent {}: start node out of range",
                z + 1
            )));
        }
    }
    let m = targets.len();
    if theta0.node_count() != m || theta0.agent_count() != agents.len() {
        return Err(Error::Validation("threshold matrix dimensions mismatch".into()));
    }
    for z in 0..agents.len() {
        for p in 0..m {
            for q in 0..m {
                let v = theta0.get(p, q, z);
                let structural = p == q || graph.has_edge(p, q);
                if structural {
                    if !v.is_finite() || v < 0.0 {
                        return Err(Error::Validation(format!(
                            "theta[{},{}] of agent {} must be finite and >= 0, got {v}",
                            p + 1,
                            q + 1,
                            z + 1
                        )));
                    }
                } else if v.is_finite() {
                    return Err(Error::Validation(format!(
                        "theta[{},{}] of agent {} is finite but ({},{}) is not an edge",
                        p + 1,
                        q + 1,
                        z + 1,
                        p + 1,
                        q + 1
                    )));
                }
            }
        }
    }
    Ok(MissionSpec {
        horizon,
        targets,
        agents,
        graph,
        theta0,
    })
}
