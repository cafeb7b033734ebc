//! Scenario files.
//!
//! A scenario is a TOML document:
//!
//! ```toml
//! [graph]
//! builtin = "trimesh9"          # or: nodes = [...] and edges = [{ a = 0, b = 1 }, ...]
//!
//! [methods]
//! default = "top-down"
//! bottom_up = [3, 5, 6]
//!
//! [params]                      # any omitted value takes its default
//! delta_t_u = 1e-5
//!
//! [run]
//! end_time = 0.2
//! seed = 2020
//! n_runs = 10
//!
//! [output]
//! directory = "out/mixed"
//! formats = ["csv", "plot"]
//! ```
//!
//! Unknown keys are rejected and every error names the key it concerns.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::{InitialVoltages, SimConfig};
use crate::error::{Error, Result};
use crate::graph::{EdgeSpec, NodeKind, TopologySpec};
use crate::router::ControlMethod;

/// Seed shared by the builtin experiments.
pub const BUILTIN_SEED: u64 = 2020;

pub const BUILTIN_NAMES: [&str; 5] = [
    "chain5-topdown",
    "chain5-bottomup",
    "trimesh9-topdown",
    "trimesh9-bottomup",
    "trimesh9-mixed",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Plot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSpec {
    pub directory: PathBuf,
    pub formats: Vec<OutputFormat>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub config: SimConfig,
    pub output: OutputSpec,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    graph: Option<GraphSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    methods: Option<MethodsSection>,
    #[serde(default)]
    params: ParamsSection,
    #[serde(default)]
    run: RunSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    output: Option<OutputSection>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    builtin: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    nodes: Option<Vec<NodeKind>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    edges: Option<Vec<EdgeSpec>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MethodsSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    default: Option<ControlMethod>,
    #[serde(default)]
    bottom_up: Vec<usize>,
    #[serde(default)]
    top_down: Vec<usize>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    v_src: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    capacitance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bit_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    total_bits: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tag_bits: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    switch_resistance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    load_resistance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta_t_u: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    message_latency_ticks: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gate_all_modes: Option<bool>,
    /// Explicit storage voltages, node-id order. Overrides the range.
    #[serde(skip_serializing_if = "Option::is_none")]
    initial_voltages: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    initial_low: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    initial_high: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    end_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_runs: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    directory: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    formats: Option<Vec<OutputFormat>>,
}

fn key_error(key: &str, reason: impl Into<String>) -> Error {
    Error::Scenario {
        key: key.to_string(),
        reason: reason.into(),
    }
}

/// Dotted key at `offset` in a TOML document: the enclosing table header
/// plus the key on that line.
fn key_at(text: &str, offset: usize) -> String {
    let offset = offset.min(text.len());
    let mut table = String::new();
    let mut key = String::new();
    let mut pos = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if trimmed.starts_with('[') {
            table = trimmed.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            key.clear();
        } else if let Some((k, _)) = trimmed.split_once('=') {
            key = k.trim().to_string();
        }
        pos += line.len();
        if pos > offset {
            break;
        }
    }
    match (table.is_empty(), key.is_empty()) {
        (true, _) => key,
        (false, true) => table,
        (false, false) => format!("{table}.{key}"),
    }
}

impl Scenario {
    pub fn builtin(name: &str) -> Option<Self> {
        use ControlMethod::*;
        let (topology, end_time, methods) = match name {
            "chain5-topdown" => (TopologySpec::chain5(), 0.1, vec![TopDown; 5]),
            "chain5-bottomup" => (TopologySpec::chain5(), 0.1, vec![BottomUp; 5]),
            "trimesh9-topdown" => (TopologySpec::trimesh9(), 0.2, vec![TopDown; 9]),
            "trimesh9-bottomup" => (TopologySpec::trimesh9(), 0.2, vec![BottomUp; 9]),
            "trimesh9-mixed" => (TopologySpec::trimesh9(), 0.2, mixed_methods()),
            _ => return None,
        };
        let mut config = SimConfig::with_defaults(topology, methods);
        config.end_time = end_time;
        config.seed = BUILTIN_SEED;
        config.n_runs = 10;
        Some(Self {
            name: name.to_string(),
            config,
            output: OutputSpec {
                directory: PathBuf::from("out").join(name),
                formats: vec![OutputFormat::Csv],
            },
        })
    }

    /// Scenario file text that loads back to this scenario.
    pub fn to_toml(&self) -> String {
        let c = &self.config;
        let (initial_voltages, initial_low, initial_high) = match &c.initial {
            InitialVoltages::Explicit(v) => (Some(v.clone()), None, None),
            InitialVoltages::Uniform { low, high } => (None, Some(*low), Some(*high)),
        };
        let with = |m: ControlMethod| -> Vec<usize> {
            (0..c.methods.len()).filter(|&i| c.methods[i] == m).collect()
        };
        let file = ScenarioFile {
            graph: Some(GraphSection {
                builtin: None,
                nodes: Some(c.topology.nodes.clone()),
                edges: Some(c.topology.edges.clone()),
            }),
            methods: Some(MethodsSection {
                default: Some(ControlMethod::TopDown),
                bottom_up: with(ControlMethod::BottomUp),
                top_down: Vec::new(),
            }),
            params: ParamsSection {
                v_src: Some(c.v_src),
                capacitance: Some(c.capacitance),
                bit_time: Some(c.bit_time),
                total_bits: Some(c.total_bits),
                tag_bits: Some(c.tag_bits),
                switch_resistance: Some(c.switch_resistance),
                load_resistance: Some(c.load_resistance),
                delta_t_u: Some(c.delta_t_u),
                message_latency_ticks: Some(c.message_latency_ticks),
                gate_all_modes: Some(c.gate_all_modes),
                initial_voltages,
                initial_low,
                initial_high,
            },
            run: RunSection {
                end_time: Some(c.end_time),
                seed: Some(c.seed),
                n_runs: Some(c.n_runs),
            },
            output: Some(OutputSection {
                directory: Some(self.output.directory.clone()),
                formats: Some(self.output.formats.clone()),
            }),
        };
        toml::to_string(&file).expect("scenario serializes")
    }

    /// A builtin name, or a path to a scenario file.
    pub fn load(spec: &str) -> Result<Self> {
        if let Some(s) = Self::builtin(spec) {
            return Ok(s);
        }
        let path = Path::new(spec);
        if !path.exists() {
            return Err(key_error(
                "scenario",
                format!(
                    "'{spec}' is neither a file nor a builtin ({})",
                    BUILTIN_NAMES.join(", ")
                ),
            ));
        }
        let text = std::fs::read_to_string(path)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| spec.to_string());
        Self::from_toml(&name, &text)
    }

    pub fn from_toml(name: &str, text: &str) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| {
            let key = e
                .span()
                .map(|span| key_at(text, span.start))
                .unwrap_or_default();
            key_error(&key, e.message())
        })?;
        Self::from_file(name, file)
    }

    fn from_file(name: &str, file: ScenarioFile) -> Result<Self> {
        let graph = file.graph.ok_or_else(|| key_error("graph", "section is required"))?;
        let topology = match (graph.builtin, graph.nodes, graph.edges) {
            (Some(b), None, None) => TopologySpec::builtin(&b).ok_or_else(|| {
                key_error("graph.builtin", format!("unknown topology '{b}' (chain5, trimesh9)"))
            })?,
            (None, Some(nodes), Some(edges)) => TopologySpec { nodes, edges },
            (Some(_), _, _) => {
                return Err(key_error("graph.builtin", "cannot be combined with nodes/edges"))
            }
            (None, None, _) => return Err(key_error("graph.nodes", "missing")),
            (None, _, None) => return Err(key_error("graph.edges", "missing")),
        };
        let n = topology.nodes.len();

        let methods = file.methods.ok_or_else(|| key_error("methods", "section is required"))?;
        let default = methods.default.unwrap_or_else(|| {
            log::info!("methods.default not given; using top-down");
            ControlMethod::TopDown
        });
        let mut assignment = vec![default; n];
        for (key, list, method) in [
            ("methods.bottom_up", &methods.bottom_up, ControlMethod::BottomUp),
            ("methods.top_down", &methods.top_down, ControlMethod::TopDown),
        ] {
            for &node in list {
                if node >= n {
                    return Err(key_error(key, format!("node {node} does not exist")));
                }
                assignment[node] = method;
            }
        }
        if let Some(&node) = methods.bottom_up.iter().find(|n| methods.top_down.contains(n)) {
            return Err(key_error(
                "methods.top_down",
                format!("node {node} is also listed in methods.bottom_up"),
            ));
        }

        let mut config = SimConfig::with_defaults(topology, assignment);
        let p = file.params;
        macro_rules! param {
            ($field:ident) => {
                match p.$field {
                    Some(v) => config.$field = v,
                    None => log::info!(
                        "params.{} not given; using {:?}",
                        stringify!($field),
                        config.$field
                    ),
                }
            };
        }
        param!(v_src);
        param!(capacitance);
        param!(bit_time);
        param!(total_bits);
        param!(tag_bits);
        param!(switch_resistance);
        param!(load_resistance);
        param!(delta_t_u);
        param!(message_latency_ticks);
        param!(gate_all_modes);
        match (p.initial_voltages, p.initial_low, p.initial_high) {
            (Some(v), None, None) => config.initial = InitialVoltages::Explicit(v),
            (Some(_), _, _) => {
                return Err(key_error(
                    "params.initial_voltages",
                    "cannot be combined with initial_low/initial_high",
                ))
            }
            (None, low, high) => {
                config.initial = InitialVoltages::Uniform {
                    low: low.unwrap_or(0.0),
                    high: high.unwrap_or(config.v_src),
                }
            }
        }

        let r = file.run;
        config.end_time = r.end_time.unwrap_or_else(|| {
            log::info!("run.end_time not given; using {} s", config.end_time);
            config.end_time
        });
        config.seed = r.seed.unwrap_or(config.seed);
        config.n_runs = r.n_runs.unwrap_or(config.n_runs);

        let output = match file.output {
            Some(o) => OutputSpec {
                directory: o.directory.unwrap_or_else(|| PathBuf::from("out").join(name)),
                formats: o.formats.unwrap_or_else(|| vec![OutputFormat::Csv]),
            },
            None => OutputSpec {
                directory: PathBuf::from("out").join(name),
                formats: vec![OutputFormat::Csv],
            },
        };

        config.validate().map_err(|e| key_error("params", e.to_string()))?;
        Ok(Self {
            name: name.to_string(),
            config,
            output,
        })
    }
}

/// Top-down on `u0, u1, u2, u4`, bottom-up on `u3, u5, u6`.
pub fn mixed_methods() -> Vec<ControlMethod> {
    use ControlMethod::*;
    vec![
        TopDown, TopDown, TopDown, BottomUp, TopDown, BottomUp, BottomUp, TopDown, TopDown,
    ]
}
