//! JSON scenario files.
//!
//! ```json
//! {
//!   "name": "ring",
//!   "network": {
//!     "nodes": [{ "id": 1, "R_s": 0.01, "L_s": 1.8e-3, "C_s": 2.2e-3 }],
//!     "lines": [{ "id": 1, "from": 1, "to": 2, "R_t": 0.07, "L_t": 2.1e-6 }],
//!     "loads": [{ "node": 1, "Z_inv": 0.08, "I_const": 10.0, "P_const": 1.0e4 }]
//!   },
//!   "controller": { "kind": "proposed", "K1": 50, "K2": 200, "Pi": 25000, "V_star": [379.5] },
//!   "simulation": { "t_end": 2.0, "dt": 1e-5 },
//!   "initial": { "kind": "equilibrium" },
//!   "events": [{ "time": 0.5, "loads": [{ "node": 1, "dP_const": 4000 }] }]
//! }
//! ```
//!
//! Node and line ids are arbitrary unique integers; indices in the resolved
//! model follow the order of appearance. Per-node controller values may be a
//! scalar (applied to every node) or an array.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::control::{ControllerConfig, DerivativeMode, LevantGains};
use crate::error::{Error, Result};
use crate::network::{DguParams, LineParams, Network, NetworkState, ZipLoad};
use crate::simulation::{Drive, Event, LoadDelta, Method, SimConfig};
use crate::steady_state::{equilibrium_from_ustar, equilibrium_from_vstar};

/// A scalar shared by all nodes, or one value per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerNode {
    Uniform(f64),
    Each(Vec<f64>),
}

impl PerNode {
    pub fn resolve(&self, n: usize, what: &'static str) -> Result<DVector<f64>> {
        match self {
            PerNode::Uniform(x) => Ok(DVector::from_element(n, *x)),
            PerNode::Each(v) if v.len() == n => Ok(DVector::from_column_slice(v)),
            PerNode::Each(v) => Err(Error::DimensionMismatch {
                what,
                expected: n,
                got: v.len(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: i64,
    #[serde(rename = "R_s")]
    pub r_s: f64,
    #[serde(rename = "L_s")]
    pub l_s: f64,
    #[serde(rename = "C_s")]
    pub c_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSpec {
    pub id: i64,
    pub from: i64,
    pub to: i64,
    #[serde(rename = "R_t")]
    pub r_t: f64,
    #[serde(rename = "L_t")]
    pub l_t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSpec {
    pub node: i64,
    #[serde(rename = "Z_inv", default)]
    pub z_inv: f64,
    #[serde(rename = "I_const", default)]
    pub i_const: f64,
    #[serde(rename = "P_const", default)]
    pub p_const: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub lines: Vec<LineSpec>,
    #[serde(default)]
    pub loads: Vec<LoadSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    #[default]
    Proposed,
    Comparison,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevantSpec {
    #[serde(default = "default_lambda0")]
    pub lambda0: f64,
    #[serde(default = "default_lambda1")]
    pub lambda1: f64,
    #[serde(rename = "L")]
    pub lipschitz: PerNode,
}

fn default_lambda0() -> f64 {
    LevantGains::DEFAULT_LAMBDA0
}

fn default_lambda1() -> f64 {
    LevantGains::DEFAULT_LAMBDA1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    #[serde(default)]
    pub kind: ControllerKind,
    #[serde(rename = "K1", default = "zero_per_node")]
    pub k1: PerNode,
    #[serde(rename = "K2", default = "zero_per_node")]
    pub k2: PerNode,
    #[serde(rename = "Pi", default = "zero_per_node")]
    pub pi: PerNode,
    #[serde(rename = "V_star")]
    pub v_star: PerNode,
    #[serde(default)]
    pub derivative_mode: DerivativeMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levant: Option<LevantSpec>,
    /// Constant input, required when `kind` is `constant`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<PerNode>,
}

fn zero_per_node() -> PerNode {
    PerNode::Uniform(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub t_end: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub method: Method,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_abs_tol")]
    pub abs_tol: f64,
    #[serde(default = "default_stride")]
    pub record_stride: usize,
}

fn default_dt() -> f64 {
    SimConfig::DEFAULT_DT
}

fn default_rel_tol() -> f64 {
    1e-8
}

fn default_abs_tol() -> f64 {
    1e-10
}

fn default_stride() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitialSpec {
    /// Equilibrium of the loads in force at t = 0: at `V*` under feedback,
    /// at the constant input otherwise.
    #[default]
    Equilibrium,
    State {
        #[serde(rename = "I_s")]
        i_s: Vec<f64>,
        #[serde(rename = "I_t", default)]
        i_t: Vec<f64>,
        #[serde(rename = "V")]
        v: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadDeltaSpec {
    pub node: i64,
    #[serde(rename = "dZ_inv", default)]
    pub dz_inv: f64,
    #[serde(rename = "dI_const", default)]
    pub di_const: f64,
    #[serde(rename = "dP_const", default)]
    pub dp_const: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    pub time: f64,
    pub loads: Vec<LoadDeltaSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_true")]
    pub svg: bool,
    /// Storage functions written to `diagnostics.csv`.
    #[serde(default = "default_diagnostics")]
    pub diagnostics: Vec<String>,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            svg: true,
            diagnostics: default_diagnostics(),
        }
    }
}

fn default_true() -> bool {
    true
}

fn default_diagnostics() -> Vec<String> {
    vec!["sd".into()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub network: NetworkSpec,
    pub controller: ControllerSpec,
    pub simulation: SimulationSpec,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub events: Vec<EventSpec>,
    #[serde(default)]
    pub outputs: OutputSpec,
}

/// Fully validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub network: Network,
    pub kind: ControllerKind,
    pub controller: ControllerConfig,
    pub constant_input: Option<DVector<f64>>,
    pub sim: SimConfig,
    pub initial: InitialSpec,
    pub events: Vec<Event>,
    pub outputs: OutputSpec,
    /// 1-based style ids of nodes and lines, in index order.
    pub node_ids: Vec<i64>,
    pub line_ids: Vec<i64>,
}

impl Scenario {
    pub fn drive(&self) -> Drive {
        match self.kind {
            ControllerKind::Proposed => Drive::Controller(self.controller.clone()),
            ControllerKind::Comparison => Drive::Comparison(self.controller.clone()),
            ControllerKind::Constant => Drive::Constant(
                self.constant_input
                    .clone()
                    .unwrap_or_else(|| self.controller.v_star.clone()),
            ),
        }
    }

    pub fn initial_state(&self) -> Result<NetworkState> {
        match &self.initial {
            InitialSpec::Equilibrium => match (&self.kind, &self.constant_input) {
                (ControllerKind::Constant, Some(u)) => {
                    Ok(equilibrium_from_ustar(&self.network, u, Some(&self.controller.v_star))?.state())
                }
                _ => Ok(equilibrium_from_vstar(&self.network, &self.controller.v_star)?.state()),
            },
            InitialSpec::State { i_s, i_t, v } => {
                let s = NetworkState::from_slices(i_s, i_t, v);
                self.network.check_state(&s)?;
                Ok(s)
            }
        }
    }

    /// Loads in force after every event has been applied.
    pub fn final_loads(&self) -> Result<Vec<ZipLoad>> {
        let mut loads = self.network.loads().to_vec();
        let mut events = self.events.clone();
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        for e in &events {
            loads = e.apply(&loads)?;
        }
        Ok(loads)
    }
}

fn invariant(path: &str, e: Error) -> Error {
    match e {
        e @ (Error::InvariantViolation { .. } | Error::SchemaViolation { .. }) => e,
        other => Error::InvariantViolation {
            path: path.to_string(),
            message: other.to_string(),
        },
    }
}

/// Parse scenario text; `origin` labels errors.
pub fn parse_scenario(text: &str, origin: &str) -> Result<ScenarioFile> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        if inner.is_syntax() || inner.is_eof() {
            Error::Parse {
                path: origin.to_string(),
                line: inner.line(),
                column: inner.column(),
                message: inner.to_string(),
            }
        } else {
            Error::SchemaViolation {
                path: origin.to_string(),
                field,
                message: inner.to_string(),
            }
        }
    })
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let origin = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: origin.clone(),
        source,
    })?;
    let file = parse_scenario(&text, &origin)?;
    resolve(&file, &origin)
}

/// Validate a parsed scenario and build the model objects.
pub fn resolve(file: &ScenarioFile, origin: &str) -> Result<Scenario> {
    let inv = |message: String| Error::InvariantViolation {
        path: origin.to_string(),
        message,
    };
    let net_spec = &file.network;
    let mut node_index = HashMap::new();
    for (i, node) in net_spec.nodes.iter().enumerate() {
        if node_index.insert(node.id, i).is_some() {
            return Err(inv(format!("duplicate node id {}", node.id)));
        }
    }
    let lookup = |id: i64, owner: &str| {
        node_index
            .get(&id)
            .copied()
            .ok_or_else(|| inv(format!("{owner} references unknown node id {id}")))
    };
    let n = net_spec.nodes.len();
    let dgus = net_spec
        .nodes
        .iter()
        .map(|d| DguParams {
            r_s: d.r_s,
            l_s: d.l_s,
            c_s: d.c_s,
        })
        .collect();
    let mut line_ids = Vec::with_capacity(net_spec.lines.len());
    let mut lines = Vec::with_capacity(net_spec.lines.len());
    for l in &net_spec.lines {
        if line_ids.contains(&l.id) {
            return Err(inv(format!("duplicate line id {}", l.id)));
        }
        line_ids.push(l.id);
        lines.push(LineParams {
            r_t: l.r_t,
            l_t: l.l_t,
            from: lookup(l.from, &format!("line {}", l.id))?,
            to: lookup(l.to, &format!("line {}", l.id))?,
        });
    }
    let mut loads = vec![ZipLoad::default(); n];
    let mut seen = vec![false; n];
    for l in &net_spec.loads {
        let i = lookup(l.node, "load")?;
        if std::mem::replace(&mut seen[i], true) {
            return Err(inv(format!("node {} has more than one load", l.node)));
        }
        loads[i] = ZipLoad::new(l.z_inv, l.i_const, l.p_const);
    }
    let network = Network::new(dgus, lines, loads).map_err(|e| invariant(origin, e))?;

    let c = &file.controller;
    let levant = match &c.levant {
        Some(l) => LevantGains {
            lambda0: l.lambda0,
            lambda1: l.lambda1,
            lipschitz: l.lipschitz.resolve(n, "levant.L")?,
        },
        None => LevantGains::with_lipschitz(DVector::from_element(n, 1.0)),
    };
    if c.derivative_mode == DerivativeMode::Levant && c.levant.is_none() {
        return Err(Error::SchemaViolation {
            path: origin.to_string(),
            field: "controller.levant".into(),
            message: "required when derivative_mode is levant".into(),
        });
    }
    let controller = ControllerConfig {
        k1: c.k1.resolve(n, "K1").map_err(|e| invariant(origin, e))?,
        k2: c.k2.resolve(n, "K2").map_err(|e| invariant(origin, e))?,
        pi: c.pi.resolve(n, "Pi").map_err(|e| invariant(origin, e))?,
        v_star: c.v_star.resolve(n, "V_star").map_err(|e| invariant(origin, e))?,
        derivative_mode: c.derivative_mode,
        levant,
    };
    if c.kind != ControllerKind::Constant {
        controller.validate(n).map_err(|e| invariant(origin, e))?;
    }
    let constant_input = match (&c.kind, &c.u) {
        (ControllerKind::Constant, Some(u)) => Some(u.resolve(n, "u").map_err(|e| invariant(origin, e))?),
        (ControllerKind::Constant, None) => {
            return Err(Error::SchemaViolation {
                path: origin.to_string(),
                field: "controller.u".into(),
                message: "required when kind is constant".into(),
            })
        }
        _ => None,
    };

    let s = &file.simulation;
    let sim = SimConfig {
        t_end: s.t_end,
        dt: s.dt,
        method: s.method,
        rel_tol: s.rel_tol,
        abs_tol: s.abs_tol,
        record_stride: s.record_stride,
    };
    sim.validate().map_err(|e| invariant(origin, e))?;

    let mut events = Vec::with_capacity(file.events.len());
    for e in &file.events {
        if !(e.time > 0.0 && e.time < sim.t_end) {
            return Err(inv(format!("event time {} outside (0, {})", e.time, sim.t_end)));
        }
        let deltas = e
            .loads
            .iter()
            .map(|d| {
                Ok(LoadDelta {
                    node: lookup(d.node, "event")?,
                    dz_inv: d.dz_inv,
                    di_const: d.di_const,
                    dp_const: d.dp_const,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        events.push(Event {
            time: e.time,
            deltas,
        });
    }

    let scenario = Scenario {
        name: file.name.clone(),
        network,
        kind: c.kind,
        controller,
        constant_input,
        sim,
        initial: file.initial.clone(),
        events,
        outputs: file.outputs.clone(),
        node_ids: net_spec.nodes.iter().map(|d| d.id).collect(),
        line_ids,
    };
    // Post-event loads must stay valid.
    scenario
        .final_loads()
        .and_then(|l| scenario.network.with_loads(l))
        .map_err(|e| invariant(origin, e))?;
    if let InitialSpec::State { i_s, i_t, v } = &file.initial {
        if i_s.len() != n || v.len() != n || i_t.len() != scenario.network.m() {
            return Err(inv("initial state has the wrong dimensions".into()));
        }
    }
    for name in &scenario.outputs.diagnostics {
        name.parse::<crate::passivity::StorageId>()
            .map_err(|e| invariant(origin, e))?;
    }
    Ok(scenario)
}

impl ScenarioFile {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}
