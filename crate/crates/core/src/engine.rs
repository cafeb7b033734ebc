//! Fixed-step simulation loop.
//!
//! One tick is one bit time. Per tick the engine delivers messages sent
//! `latency` ticks earlier, steps every router in node-id order, applies the
//! switch commands, rebuilds the Laplacian for the current switch state and
//! packet phases, records a sample and integrates the storage voltages.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{check_euler_stability, flow_snapshot, step_voltages, VoltageState};
use crate::error::{Error, Result};
use crate::graph::{
    build_graph, weighted_laplacian, Electrical, NetworkGraph, NodeId, NodeKind, PowerPhase,
    TopologySpec,
};
use crate::router::{
    ControlMethod, LocalView, Message, PacketTransmission, RouterState, RouterTiming,
    SwitchAction, Tick,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialVoltages {
    /// One voltage per storage node, in node-id order.
    Explicit(Vec<f64>),
    Uniform { low: f64, high: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub topology: TopologySpec,
    /// Control method of every node, indexed by node id. Entries for sinks
    /// are ignored.
    pub methods: Vec<ControlMethod>,
    pub v_src: f64,
    pub initial: InitialVoltages,
    pub capacitance: f64,
    pub bit_time: f64,
    pub total_bits: u32,
    pub tag_bits: u32,
    pub switch_resistance: f64,
    pub load_resistance: f64,
    pub delta_t_u: f64,
    pub end_time: f64,
    pub seed: u64,
    pub n_runs: usize,
    pub message_latency_ticks: u64,
    pub gate_all_modes: bool,
}

impl SimConfig {
    /// Desk-scale defaults: 10 V source, 1000 uF storages, 3.125 us bits,
    /// 100-bit packets with a 10-bit tag, 1 ohm switches, 50 ohm loads,
    /// 10 us mode dwell, uniform initial voltages on [0, 10] V.
    pub fn with_defaults(topology: TopologySpec, methods: Vec<ControlMethod>) -> Self {
        Self {
            topology,
            methods,
            v_src: 10.0,
            initial: InitialVoltages::Uniform {
                low: 0.0,
                high: 10.0,
            },
            capacitance: 1e-3,
            bit_time: 3.125e-6,
            total_bits: 100,
            tag_bits: 10,
            switch_resistance: 1.0,
            load_resistance: 50.0,
            delta_t_u: 10e-6,
            end_time: 0.1,
            seed: 0,
            n_runs: 10,
            message_latency_ticks: 1,
            gate_all_modes: true,
        }
    }

    pub fn uniform(topology: TopologySpec, method: ControlMethod) -> Self {
        let n = topology.nodes.len();
        Self::with_defaults(topology, vec![method; n])
    }

    pub fn electrical(&self) -> Electrical {
        Electrical {
            source_voltage: self.v_src,
            storage_capacitance: self.capacitance,
            switch_resistance: self.switch_resistance,
            load_resistance: self.load_resistance,
        }
    }

    pub fn timing(&self) -> RouterTiming {
        RouterTiming {
            bit_time: self.bit_time,
            total_bits: self.total_bits,
            tag_bits: self.tag_bits,
            delta_t_u: self.delta_t_u,
            latency_ticks: self.message_latency_ticks,
            gate_all_modes: self.gate_all_modes,
        }
    }

    /// Hex SHA-256 of the canonical TOML form of the configuration.
    pub fn config_hash(&self) -> String {
        let text = toml::to_string(self).expect("configuration serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// Number of integration steps; a trace holds one more sample. An end
    /// time that is not a whole number of bit times is rounded up.
    pub fn tick_count(&self) -> (u64, Option<String>) {
        let ratio = self.end_time / self.bit_time;
        let nearest = ratio.round();
        if (ratio - nearest).abs() <= 1e-6 * ratio.max(1.0) {
            (nearest as u64, None)
        } else {
            let n = ratio.ceil() as u64;
            let warning = format!(
                "end_time {} s is not a multiple of the bit time; rounded up to {} s",
                self.end_time,
                n as f64 * self.bit_time
            );
            (n, Some(warning))
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if self.methods.len() != self.topology.nodes.len() {
            return Err(Error::Config(format!(
                "{} control methods for {} nodes",
                self.methods.len(),
                self.topology.nodes.len()
            )));
        }
        if !(self.v_src > 0.0) {
            return bad("v_src must be positive");
        }
        if !(self.bit_time > 0.0) {
            return bad("bit_time must be positive");
        }
        if !(self.capacitance > 0.0) {
            return bad("capacitance must be positive");
        }
        if !(self.switch_resistance > 0.0 && self.load_resistance >= 0.0) {
            return bad("need switch_resistance > 0 and load_resistance >= 0");
        }
        if self.total_bits == 0 || self.tag_bits > self.total_bits {
            return bad("need 0 <= tag_bits <= total_bits and total_bits > 0");
        }
        if !(self.delta_t_u >= 0.0) {
            return bad("delta_t_u must be non-negative");
        }
        if !(self.end_time >= 0.0) {
            return bad("end_time must be non-negative");
        }
        if self.message_latency_ticks == 0 {
            return bad("message_latency_ticks must be at least 1");
        }
        if self.n_runs == 0 {
            return bad("n_runs must be at least 1");
        }
        match &self.initial {
            InitialVoltages::Explicit(v) => {
                let n_sto = self
                    .topology
                    .nodes
                    .iter()
                    .filter(|k| **k == NodeKind::Storage)
                    .count();
                if v.len() != n_sto {
                    return Err(Error::Config(format!(
                        "{} initial voltages for {} storage nodes",
                        v.len(),
                        n_sto
                    )));
                }
            }
            InitialVoltages::Uniform { low, high } => {
                if !(low <= high) {
                    return bad("initial range needs low <= high");
                }
            }
        }
        Ok(())
    }

    /// Storage voltages (layer order) for `run_index`. Random draws come
    /// from a ChaCha stream keyed by the seed, selected by the run index and
    /// positioned by the node id, so they do not depend on execution order.
    pub fn initial_voltages(&self, graph: &NetworkGraph, run_index: usize) -> Vec<f64> {
        match &self.initial {
            InitialVoltages::Explicit(v) => v.clone(),
            InitialVoltages::Uniform { low, high } => graph
                .nodes_of(NodeKind::Storage)
                .map(|id| {
                    let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                    rng.set_stream(run_index as u64);
                    rng.set_word_pos(id.0 as u128 * 16);
                    low + (high - low) * rng.gen::<f64>()
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransmissionRecord {
    pub tx: PacketTransmission,
    /// Tick at which the sender reopened its switch; `None` when the run
    /// ended mid-packet.
    pub end: Option<Tick>,
}

impl TransmissionRecord {
    pub fn truncated(&self) -> bool {
        self.end.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SwitchEvent {
    pub tick: Tick,
    pub edge: usize,
    pub node: NodeId,
    pub action: SwitchAction,
}

/// Recorded run. Series are indexed `[node or edge][sample]`; sample `k`
/// holds the voltages at `t_k` and the flows of the configuration active on
/// `[t_k, t_k + dt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub run_index: usize,
    pub config_hash: String,
    pub dt: f64,
    pub node_kinds: Vec<NodeKind>,
    pub edge_ends: Vec<(NodeId, NodeId)>,
    pub times: Vec<f64>,
    pub voltages: Vec<Vec<f64>>,
    pub edge_powers: Vec<Vec<f64>>,
    pub edge_currents: Vec<Vec<f64>>,
    pub switch_states: Vec<Vec<bool>>,
    /// Total current supplied by the sources.
    pub source_current: Vec<f64>,
    /// Total current absorbed by the sinks.
    pub sink_current: Vec<f64>,
    pub messages: Vec<Message>,
    pub dropped: Vec<Message>,
    pub violations: Vec<Message>,
    pub protocol_violations: u64,
    pub transmissions: Vec<TransmissionRecord>,
    pub switch_events: Vec<SwitchEvent>,
    pub warnings: Vec<String>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn end_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    /// Index of the sample nearest to `t`.
    pub fn sample_index(&self, t: f64) -> Result<usize> {
        let end = self.end_time();
        if !(t >= 0.0) || t > end + 0.5 * self.dt {
            return Err(Error::TimeOutOfRange {
                t_end: t,
                available: end,
            });
        }
        Ok(((t / self.dt).round() as usize).min(self.len() - 1))
    }

    pub fn edge_index(&self, a: usize, b: usize) -> Option<usize> {
        self.edge_ends
            .iter()
            .position(|&(x, y)| (x.0 == a && y.0 == b) || (x.0 == b && y.0 == a))
    }
}

pub fn run_simulation(config: &SimConfig, run_index: usize) -> Result<Trace> {
    config.validate()?;
    if run_index >= config.n_runs {
        return Err(Error::Config(format!(
            "run index {run_index} out of range for {} runs",
            config.n_runs
        )));
    }
    let mut graph = build_graph(&config.topology, &config.electrical())?;
    let caps = graph.storage_capacitances();
    let dt = config.bit_time;
    let timing = config.timing();

    // densest configuration must be stable
    {
        let mut dense = graph.clone();
        dense.route_all(true);
        let phases = vec![PowerPhase::Payload; dense.edges.len()];
        check_euler_stability(&weighted_laplacian(&dense, &phases), &caps, dt)?;
    }

    let (n_steps, warning) = config.tick_count();
    let n_samples = n_steps as usize + 1;
    let n_nodes = graph.node_count();
    let n_edges = graph.edges.len();

    let mut routers: Vec<Option<RouterState>> = (0..n_nodes)
        .map(|i| {
            let id = NodeId(i);
            (graph.kind(id) != NodeKind::Sink)
                .then(|| RouterState::for_node(&graph, id, config.methods[i], config.capacitance))
        })
        .collect();

    let mut trace = Trace {
        run_index,
        config_hash: config.config_hash(),
        dt,
        node_kinds: graph.nodes.iter().map(|n| n.kind).collect(),
        edge_ends: graph.edges.iter().map(|e| (e.a, e.b)).collect(),
        times: Vec::with_capacity(n_samples),
        voltages: vec![Vec::with_capacity(n_samples); n_nodes],
        edge_powers: vec![Vec::with_capacity(n_samples); n_edges],
        edge_currents: vec![Vec::with_capacity(n_samples); n_edges],
        switch_states: vec![Vec::with_capacity(n_samples); n_edges],
        source_current: Vec::with_capacity(n_samples),
        sink_current: Vec::with_capacity(n_samples),
        messages: Vec::new(),
        dropped: Vec::new(),
        violations: Vec::new(),
        protocol_violations: 0,
        transmissions: Vec::new(),
        switch_events: Vec::new(),
        warnings: warning.into_iter().collect(),
    };

    let mut state = VoltageState::new(&graph, &config.initial_voltages(&graph, run_index));
    // closed flag of the switch at each end of every edge: [a side, b side]
    let mut halves = vec![[false; 2]; n_edges];
    let mut active: Vec<Option<(PacketTransmission, usize)>> = vec![None; n_edges];
    let mut in_flight: VecDeque<(u64, Message)> = VecDeque::new();
    let mut phases = vec![PowerPhase::Payload; n_edges];

    for k in 0..=n_steps {
        let now = Tick(k);
        while in_flight.front().is_some_and(|(due, _)| *due <= k) {
            let (_, msg) = in_flight.pop_front().expect("front checked");
            match routers.get_mut(msg.to.0).and_then(Option::as_mut) {
                Some(router) => router.deliver(msg),
                None => {
                    trace.protocol_violations += 1;
                    trace.violations.push(msg);
                }
            }
        }

        let volts = state.node_voltages(&graph);
        for router in routers.iter_mut().flatten() {
            let view = LocalView {
                own: volts[router.id.0],
                neighbors: router.ports.iter().map(|p| volts[p.neighbor.0]).collect(),
            };
            let out = router.step(&view, now, &timing);
            for msg in out.outbox {
                in_flight.push_back((k + config.message_latency_ticks, msg));
                trace.messages.push(msg);
            }
            for cmd in out.switch_commands {
                let e = &graph.edges[cmd.edge.0];
                let side = usize::from(cmd.node != e.a);
                halves[cmd.edge.0][side] = cmd.action == SwitchAction::Route;
                trace.switch_events.push(SwitchEvent {
                    tick: now,
                    edge: cmd.edge.0,
                    node: cmd.node,
                    action: cmd.action,
                });
            }
            for tx in out.started {
                let e = &graph.edges[tx.edge.0];
                let receiver_side = usize::from(tx.receiver != e.a);
                if !halves[tx.edge.0][receiver_side] || active[tx.edge.0].is_some() {
                    // the peer is not prepared to receive
                    trace.protocol_violations += 1;
                }
                active[tx.edge.0] = Some((tx, trace.transmissions.len()));
                trace.transmissions.push(TransmissionRecord { tx, end: None });
            }
            for tx in out.finished {
                if let Some((_, idx)) = active[tx.edge.0].take() {
                    trace.transmissions[idx].end = Some(now);
                }
            }
            trace.protocol_violations += out.violations.len() as u64;
            trace.violations.extend(out.violations);
            trace.dropped.extend(out.dropped);
        }

        for (e, closed) in halves.iter().enumerate() {
            let routed = closed[0] && closed[1];
            graph.set_routed(crate::graph::EdgeId(e), routed);
            phases[e] = match &active[e] {
                Some((tx, _)) if !tx.in_payload(now) => PowerPhase::Tag,
                _ => PowerPhase::Payload,
            };
        }

        let blocks = weighted_laplacian(&graph, &phases);
        let flow = flow_snapshot(&blocks, &state, &graph);
        trace.times.push(now.seconds(dt));
        for (series, v) in trace.voltages.iter_mut().zip(&volts) {
            series.push(*v);
        }
        for e in 0..n_edges {
            trace.edge_currents[e].push(flow.edge_current[e]);
            trace.edge_powers[e].push(flow.edge_power[e]);
            trace.switch_states[e].push(graph.edges[e].routed);
        }
        trace.source_current.push(flow.i_in.iter().sum());
        trace.sink_current.push(flow.i_out.iter().sum());

        if k < n_steps {
            state = step_voltages(&blocks, &state, &caps, dt)?;
        }
    }

    let truncated = trace.transmissions.iter().filter(|t| t.truncated()).count();
    if truncated > 0 {
        trace
            .warnings
            .push(format!("{truncated} transmission(s) truncated at end of run"));
    }
    Ok(trace)
}

/// Runs every member of the ensemble, in parallel, returned in run order.
pub fn run_ensemble(config: &SimConfig) -> Result<Vec<Trace>> {
    config.validate()?;
    (0..config.n_runs)
        .into_par_iter()
        .map(|run| run_simulation(config, run))
        .collect()
}
