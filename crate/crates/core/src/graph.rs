//! Layered network graph and weighted Laplacian.
//!
//! Nodes fall into three layers: sources (voltage clamped at `v_src`),
//! storages (capacitive routers) and sinks (clamped at 0 V). Edges carry a
//! lumped line resistance; their conductance enters the Laplacian only while
//! the edge is routed and, for switchable edges, only during the payload part
//! of a packet.

use std::collections::VecDeque;
use std::fmt;

use nalgebra::{DMatrix, DMatrixView};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "u{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Source,
    Storage,
    Sink,
}

impl NodeKind {
    /// Position of the layer in the `[sources | storages | sinks]` ordering.
    pub fn layer(self) -> usize {
        match self {
            NodeKind::Source => 0,
            NodeKind::Storage => 1,
            NodeKind::Sink => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NodeKind::Source => "source",
            NodeKind::Storage => "storage",
            NodeKind::Sink => "sink",
        }
    }
}

/// Node weight. Sources and sinks are voltage clamped instead of carrying an
/// infinite capacitance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Capacitance {
    Clamped,
    Farads(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    pub capacitance: Capacitance,
    /// Clamp voltage for sources and sinks; nominal initial voltage otherwise.
    pub voltage: f64,
}

/// Whether an active packet on an edge is in its information tag or its power
/// payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PowerPhase {
    Tag,
    #[default]
    Payload,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    /// Upstream endpoint: lower layer, or lower id within the same layer.
    pub a: NodeId,
    pub b: NodeId,
    pub line_resistance: f64,
    pub switchable: bool,
    pub routed: bool,
    /// True when `b` is a sink.
    pub to_sink: bool,
}

impl Edge {
    /// Conductance of the edge when it conducts.
    pub fn nominal_conductance(&self) -> f64 {
        1.0 / self.line_resistance
    }

    pub fn other(&self, node: NodeId) -> NodeId {
        if node == self.a {
            self.b
        } else {
            self.a
        }
    }

    pub fn touches(&self, node: NodeId) -> bool {
        self.a == node || self.b == node
    }
}

/// Effective conductance of an edge under the current switch state and packet
/// phase.
pub fn edge_weight(edge: &Edge, phase: PowerPhase) -> f64 {
    if !edge.switchable {
        return edge.nominal_conductance();
    }
    match (edge.routed, phase) {
        (true, PowerPhase::Payload) => edge.nominal_conductance(),
        _ => 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub a: usize,
    pub b: usize,
    /// Lumped path resistance in ohms. When absent it is derived from the
    /// switch and load resistances.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resistance: Option<f64>,
}

impl EdgeSpec {
    pub fn new(a: usize, b: usize) -> Self {
        Self {
            a,
            b,
            resistance: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologySpec {
    pub nodes: Vec<NodeKind>,
    pub edges: Vec<EdgeSpec>,
}

impl TopologySpec {
    /// Source `u0`, storages `u1..u3` in a line, sink `u4`.
    pub fn chain5() -> Self {
        use NodeKind::*;
        Self {
            nodes: vec![Source, Storage, Storage, Storage, Sink],
            edges: [(0, 1), (1, 2), (2, 3), (3, 4)]
                .into_iter()
                .map(|(a, b)| EdgeSpec::new(a, b))
                .collect(),
        }
    }

    /// Triangular mesh: source `u0` feeds `u1`; `u1,u2,u3` and the bottom row
    /// `u4,u5,u6` form triangles; `u4` and `u6` drain into sinks `u7`, `u8`.
    pub fn trimesh9() -> Self {
        use NodeKind::*;
        Self {
            nodes: vec![
                Source, Storage, Storage, Storage, Storage, Storage, Storage, Sink, Sink,
            ],
            edges: [
                (0, 1),
                (1, 2),
                (1, 3),
                (2, 3),
                (2, 4),
                (2, 5),
                (3, 5),
                (3, 6),
                (4, 5),
                (5, 6),
                (4, 7),
                (6, 8),
            ]
            .into_iter()
            .map(|(a, b)| EdgeSpec::new(a, b))
            .collect(),
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "chain5" => Some(Self::chain5()),
            "trimesh9" => Some(Self::trimesh9()),
            _ => None,
        }
    }
}

/// Electrical parameters folded into the graph at build time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Electrical {
    pub source_voltage: f64,
    pub storage_capacitance: f64,
    pub switch_resistance: f64,
    pub load_resistance: f64,
}

impl Default for Electrical {
    fn default() -> Self {
        Self {
            source_voltage: 10.0,
            storage_capacitance: 1e-3,
            switch_resistance: 1.0,
            load_resistance: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    /// Node ids grouped as `[sources | storages | sinks]`, ascending id within
    /// each group.
    pub layer_order: Vec<NodeId>,
    layer_sizes: [usize; 3],
    /// Index of each node inside its own layer.
    layer_index: Vec<usize>,
}

/// Builds a graph from a topology description. Switchable edges start
/// unrouted; edges into sinks are permanently routed.
pub fn build_graph(spec: &TopologySpec, elec: &Electrical) -> Result<NetworkGraph> {
    let n = spec.nodes.len();
    for (kind, label) in [
        (NodeKind::Source, "source"),
        (NodeKind::Storage, "storage"),
        (NodeKind::Sink, "sink"),
    ] {
        if !spec.nodes.contains(&kind) {
            return Err(Error::MissingKind(label));
        }
    }
    if !(elec.storage_capacitance > 0.0) {
        let id = spec
            .nodes
            .iter()
            .position(|k| *k == NodeKind::Storage)
            .unwrap_or(0);
        return Err(Error::BadCapacitance(NodeId(id), elec.storage_capacitance));
    }

    let nodes: Vec<Node> = spec
        .nodes
        .iter()
        .enumerate()
        .map(|(i, &kind)| Node {
            id: NodeId(i),
            kind,
            capacitance: match kind {
                NodeKind::Storage => Capacitance::Farads(elec.storage_capacitance),
                _ => Capacitance::Clamped,
            },
            voltage: match kind {
                NodeKind::Source => elec.source_voltage,
                _ => 0.0,
            },
        })
        .collect();

    let mut edges: Vec<Edge> = Vec::with_capacity(spec.edges.len());
    for es in &spec.edges {
        for end in [es.a, es.b] {
            if end >= n {
                return Err(Error::UnknownNode(NodeId(end)));
            }
        }
        if es.a == es.b {
            return Err(Error::SelfLoop(NodeId(es.a)));
        }
        let (ka, kb) = (spec.nodes[es.a], spec.nodes[es.b]);
        let (a, b) = if (ka.layer(), es.a) <= (kb.layer(), es.b) {
            (es.a, es.b)
        } else {
            (es.b, es.a)
        };
        if edges.iter().any(|e| e.a.0 == a && e.b.0 == b) {
            return Err(Error::DuplicateEdge(NodeId(a), NodeId(b)));
        }
        let to_sink = spec.nodes[b] == NodeKind::Sink;
        let resistance = es.resistance.unwrap_or(if to_sink {
            elec.switch_resistance + elec.load_resistance
        } else {
            2.0 * elec.switch_resistance
        });
        if !(resistance > 0.0) || !resistance.is_finite() {
            return Err(Error::BadResistance(NodeId(a), NodeId(b), resistance));
        }
        edges.push(Edge {
            a: NodeId(a),
            b: NodeId(b),
            line_resistance: resistance,
            switchable: !to_sink,
            routed: to_sink,
            to_sink,
        });
    }

    // connectivity over every edge, ignoring switch state
    let mut adj = vec![Vec::new(); n];
    for e in &edges {
        adj[e.a.0].push(e.b.0);
        adj[e.b.0].push(e.a.0);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::Disconnected(NodeId(i)));
    }

    let mut layer_order: Vec<NodeId> = nodes.iter().map(|n| n.id).collect();
    layer_order.sort_by_key(|id| (nodes[id.0].kind.layer(), id.0));
    let mut layer_sizes = [0usize; 3];
    let mut layer_index = vec![0usize; n];
    for id in &layer_order {
        let l = nodes[id.0].kind.layer();
        layer_index[id.0] = layer_sizes[l];
        layer_sizes[l] += 1;
    }

    Ok(NetworkGraph {
        nodes,
        edges,
        layer_order,
        layer_sizes,
        layer_index,
    })
}

impl NetworkGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn kind(&self, id: NodeId) -> NodeKind {
        self.nodes[id.0].kind
    }

    pub fn layer_sizes(&self) -> [usize; 3] {
        self.layer_sizes
    }

    /// Index of `id` inside the vector of its own layer.
    pub fn layer_index(&self, id: NodeId) -> usize {
        self.layer_index[id.0]
    }

    pub fn nodes_of(&self, kind: NodeKind) -> impl Iterator<Item = NodeId> + '_ {
        self.layer_order
            .iter()
            .copied()
            .filter(move |id| self.nodes[id.0].kind == kind)
    }

    /// Switchable edges incident to `id`, ordered by neighbor id.
    pub fn ports(&self, id: NodeId) -> Vec<EdgeId> {
        let mut ports: Vec<EdgeId> = self
            .edges
            .iter()
            .enumerate()
            .filter(|(_, e)| e.switchable && e.touches(id))
            .map(|(i, _)| EdgeId(i))
            .collect();
        ports.sort_by_key(|eid| self.edges[eid.0].other(id));
        ports
    }

    pub fn edge_between(&self, x: NodeId, y: NodeId) -> Option<EdgeId> {
        self.edges
            .iter()
            .position(|e| (e.a == x && e.b == y) || (e.a == y && e.b == x))
            .map(EdgeId)
    }

    pub fn set_routed(&mut self, edge: EdgeId, routed: bool) {
        let e = &mut self.edges[edge.0];
        if e.switchable {
            e.routed = routed;
        }
    }

    /// Sets every switchable edge routed or unrouted.
    pub fn route_all(&mut self, routed: bool) {
        for e in self.edges.iter_mut().filter(|e| e.switchable) {
            e.routed = routed;
        }
    }

    /// Capacitances of the storage layer, in layer order.
    pub fn storage_capacitances(&self) -> Vec<f64> {
        self.nodes_of(NodeKind::Storage)
            .map(|id| match self.nodes[id.0].capacitance {
                Capacitance::Farads(c) => c,
                Capacitance::Clamped => unreachable!("storage nodes carry a capacitance"),
            })
            .collect()
    }

    pub fn source_voltages(&self) -> Vec<f64> {
        self.nodes_of(NodeKind::Source)
            .map(|id| self.nodes[id.0].voltage)
            .collect()
    }

    pub fn edge_label(&self, edge: EdgeId) -> String {
        let e = &self.edges[edge.0];
        format!("{}_{}", e.a.0, e.b.0)
    }
}

/// Weighted Laplacian in node order plus its layer-ordered copy, from which
/// the nine blocks are borrowed.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianBlocks {
    pub full: DMatrix<f64>,
    layered: DMatrix<f64>,
    order: Vec<NodeId>,
    sizes: [usize; 3],
}

impl LaplacianBlocks {
    /// Wraps a matrix that is already in `[sources | storages | sinks]` order.
    pub fn from_layered(layered: DMatrix<f64>, sizes: [usize; 3]) -> Self {
        assert_eq!(layered.nrows(), sizes.iter().sum::<usize>());
        assert!(layered.is_square());
        Self {
            full: layered.clone(),
            order: (0..layered.nrows()).map(NodeId).collect(),
            layered,
            sizes,
        }
    }

    pub fn sizes(&self) -> [usize; 3] {
        self.sizes
    }

    pub fn layer_order(&self) -> &[NodeId] {
        &self.order
    }

    fn offset(&self, layer: NodeKind) -> (usize, usize) {
        let l = layer.layer();
        (self.sizes[..l].iter().sum(), self.sizes[l])
    }

    /// Sub-block `L_rc` for row layer `rows` and column layer `cols`.
    pub fn block(&self, rows: NodeKind, cols: NodeKind) -> DMatrixView<'_, f64> {
        let (r0, nr) = self.offset(rows);
        let (c0, nc) = self.offset(cols);
        self.layered.view((r0, c0), (nr, nc))
    }

    pub fn layered(&self) -> &DMatrix<f64> {
        &self.layered
    }

    /// Reassembles a node-ordered matrix from the nine blocks.
    pub fn reassemble(&self) -> DMatrix<f64> {
        let n = self.order.len();
        let mut out = DMatrix::zeros(n, n);
        let kinds = [NodeKind::Source, NodeKind::Storage, NodeKind::Sink];
        for rk in kinds {
            let (r0, _) = self.offset(rk);
            for ck in kinds {
                let (c0, _) = self.offset(ck);
                let blk = self.block(rk, ck);
                for i in 0..blk.nrows() {
                    for j in 0..blk.ncols() {
                        out[(self.order[r0 + i].0, self.order[c0 + j].0)] = blk[(i, j)];
                    }
                }
            }
        }
        out
    }
}

/// Assembles the weighted Laplacian for the current switch state and per-edge
/// packet phase (`phases[e]` belongs to `graph.edges[e]`).
pub fn weighted_laplacian(graph: &NetworkGraph, phases: &[PowerPhase]) -> LaplacianBlocks {
    let n = graph.node_count();
    let mut full = DMatrix::zeros(n, n);
    for (e, edge) in graph.edges.iter().enumerate() {
        let phase = phases.get(e).copied().unwrap_or_default();
        let w = edge_weight(edge, phase);
        if w == 0.0 {
            continue;
        }
        let (i, j) = (edge.a.0, edge.b.0);
        full[(i, i)] += w;
        full[(j, j)] += w;
        full[(i, j)] -= w;
        full[(j, i)] -= w;
    }
    let order = graph.layer_order.clone();
    let layered = DMatrix::from_fn(n, n, |r, c| full[(order[r].0, order[c].0)]);
    LaplacianBlocks {
        full,
        layered,
        order,
        sizes: graph.layer_sizes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn elec() -> Electrical {
        Electrical::default()
    }

    #[test]
    fn builtin_topologies_have_expected_shape() {
        let chain = build_graph(&TopologySpec::chain5(), &elec()).unwrap();
        assert_eq!(chain.node_count(), 5);
        assert_eq!(chain.edges.len(), 4);
        assert_eq!(chain.layer_sizes(), [1, 3, 1]);

        let mesh = build_graph(&TopologySpec::trimesh9(), &elec()).unwrap();
        assert_eq!(mesh.node_count(), 9);
        assert_eq!(mesh.edges.len(), 12);
        assert_eq!(mesh.layer_sizes(), [1, 6, 2]);
        assert!(mesh.edge_between(NodeId(4), NodeId(5)).is_some());
    }

    #[test]
    fn initial_switch_state() {
        let g = build_graph(&TopologySpec::trimesh9(), &elec()).unwrap();
        for e in &g.edges {
            assert_eq!(e.routed, !e.switchable);
            assert_eq!(e.to_sink, !e.switchable);
        }
    }

    #[test]
    fn rejects_isolated_node() {
        let spec = TopologySpec {
            nodes: vec![NodeKind::Source, NodeKind::Storage, NodeKind::Sink, NodeKind::Storage],
            edges: vec![EdgeSpec::new(0, 1), EdgeSpec::new(1, 2)],
        };
        assert!(matches!(
            build_graph(&spec, &elec()),
            Err(Error::Disconnected(NodeId(3)))
        ));
    }

    #[test]
    fn rejects_malformed_specs() {
        use NodeKind::*;
        let dup = TopologySpec {
            nodes: vec![Source, Storage, Sink],
            edges: vec![EdgeSpec::new(0, 1), EdgeSpec::new(1, 0), EdgeSpec::new(1, 2)],
        };
        assert!(matches!(build_graph(&dup, &elec()), Err(Error::DuplicateEdge(..))));

        let unknown = TopologySpec {
            nodes: vec![Source, Storage, Sink],
            edges: vec![EdgeSpec::new(0, 1), EdgeSpec::new(1, 7)],
        };
        assert!(matches!(
            build_graph(&unknown, &elec()),
            Err(Error::UnknownNode(NodeId(7)))
        ));

        let no_sink = TopologySpec {
            nodes: vec![Source, Storage],
            edges: vec![EdgeSpec::new(0, 1)],
        };
        assert!(matches!(
            build_graph(&no_sink, &elec()),
            Err(Error::MissingKind("sink"))
        ));

        let looped = TopologySpec {
            nodes: vec![Source, Storage, Sink],
            edges: vec![EdgeSpec::new(0, 1), EdgeSpec::new(1, 1), EdgeSpec::new(1, 2)],
        };
        assert!(matches!(build_graph(&looped, &elec()), Err(Error::SelfLoop(_))));
    }

    #[test]
    fn edge_weights_follow_switch_and_phase() {
        let mut g = build_graph(&TopologySpec::chain5(), &elec()).unwrap();
        let src = g.edges[0].clone();
        assert_eq!(edge_weight(&src, PowerPhase::Payload), 0.0);
        g.set_routed(EdgeId(0), true);
        let src = &g.edges[0];
        assert_eq!(src.line_resistance, 2.0);
        assert_eq!(edge_weight(src, PowerPhase::Payload), 0.5);
        assert_eq!(edge_weight(src, PowerPhase::Tag), 0.0);

        let sink = &g.edges[3];
        assert_eq!(sink.line_resistance, 51.0);
        assert!((edge_weight(sink, PowerPhase::Payload) - 0.0196).abs() < 1e-4);
        assert_eq!(
            edge_weight(sink, PowerPhase::Tag),
            edge_weight(sink, PowerPhase::Payload)
        );
        // sink paths cannot be opened
        g.set_routed(EdgeId(3), false);
        assert!(g.edges[3].routed);
    }

    #[test]
    fn edges_are_oriented_downstream() {
        let spec = TopologySpec {
            nodes: vec![NodeKind::Sink, NodeKind::Storage, NodeKind::Source],
            edges: vec![EdgeSpec::new(0, 1), EdgeSpec::new(1, 2)],
        };
        let g = build_graph(&spec, &elec()).unwrap();
        assert_eq!((g.edges[0].a, g.edges[0].b), (NodeId(1), NodeId(0)));
        assert_eq!((g.edges[1].a, g.edges[1].b), (NodeId(2), NodeId(1)));
        assert_eq!(g.layer_order, vec![NodeId(2), NodeId(1), NodeId(0)]);
    }

    #[test]
    fn two_node_laplacian() {
        let spec = TopologySpec {
            nodes: vec![NodeKind::Source, NodeKind::Storage, NodeKind::Sink],
            edges: vec![
                EdgeSpec {
                    a: 0,
                    b: 1,
                    resistance: Some(4.0),
                },
                EdgeSpec::new(1, 2),
            ],
        };
        let mut g = build_graph(&spec, &elec()).unwrap();
        g.set_routed(EdgeId(0), true);
        let l = weighted_laplacian(&g, &[PowerPhase::Payload; 2]);
        assert_eq!(l.full[(0, 0)], 0.25);
        assert_eq!(l.full[(0, 1)], -0.25);
        assert_eq!(l.full[(1, 0)], -0.25);
        assert_eq!(l.full[(1, 1)], 0.25 + 1.0 / 51.0);
    }

    #[test]
    fn unrouted_storage_block_is_diagonal() {
        let g = build_graph(&TopologySpec::trimesh9(), &elec()).unwrap();
        let l = weighted_laplacian(&g, &vec![PowerPhase::Payload; g.edges.len()]);
        let l22 = l.block(NodeKind::Storage, NodeKind::Storage);
        for i in 0..l22.nrows() {
            for j in 0..l22.ncols() {
                if i != j {
                    assert_eq!(l22[(i, j)], 0.0);
                }
            }
        }
        // u4 and u6 are the storages with sink paths
        let diag: Vec<f64> = (0..6).map(|i| l22[(i, i)]).collect();
        assert_eq!(diag[0], 0.0);
        assert_eq!(diag[3], 1.0 / 51.0);
        assert_eq!(diag[4], 0.0);
        assert_eq!(diag[5], 1.0 / 51.0);
        assert_eq!(l.block(NodeKind::Storage, NodeKind::Source).sum(), 0.0);
    }

    #[test]
    fn chain_laplacian_matches_hand_assembly() {
        let mut g = build_graph(&TopologySpec::chain5(), &elec()).unwrap();
        g.route_all(true);
        let l = weighted_laplacian(&g, &[PowerPhase::Payload; 4]);
        let (s, k) = (0.5, 1.0 / 51.0);
        #[rustfmt::skip]
        let expected = DMatrix::from_row_slice(5, 5, &[
             s,  -s,   0.0,  0.0,   0.0,
            -s,  2.0*s, -s,  0.0,   0.0,
             0.0, -s,  2.0*s, -s,   0.0,
             0.0, 0.0, -s,   s + k, -k,
             0.0, 0.0,  0.0, -k,    k,
        ]);
        assert_eq!(l.full, expected);
        assert_eq!(l.reassemble(), l.full);
    }

    #[test]
    fn blocks_tile_permuted_layout() {
        let spec = TopologySpec {
            nodes: vec![NodeKind::Sink, NodeKind::Storage, NodeKind::Source, NodeKind::Storage],
            edges: vec![EdgeSpec::new(0, 1), EdgeSpec::new(1, 2), EdgeSpec::new(2, 3), EdgeSpec::new(1, 3)],
        };
        let mut g = build_graph(&spec, &elec()).unwrap();
        g.route_all(true);
        let l = weighted_laplacian(&g, &[PowerPhase::Payload; 4]);
        assert_eq!(l.reassemble(), l.full);
        let l21 = l.block(NodeKind::Storage, NodeKind::Source);
        assert_eq!(l21.shape(), (2, 1));
        assert_eq!(l21[(0, 0)], -0.5);
        assert_eq!(l21[(1, 0)], -0.5);
    }
}
