//! Consensus power dynamics on the layered network.
//!
//! Only the storage block evolves: `C dv/dt = -L22 v - L21 v_src - L23 v_snk`.
//! Sources and sinks are clamped, so they are excluded from the integrated
//! state. The discrete consensus update `x' = (I - eps C^-1 L) x + eps C^-1 b`
//! is provided as a reference model.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graph::{LaplacianBlocks, NetworkGraph, NodeId, NodeKind};

use NodeKind::{Sink, Source, Storage};

#[derive(Debug, Clone, PartialEq)]
pub struct VoltageState {
    pub v_src: DVector<f64>,
    pub v: DVector<f64>,
    pub v_snk: DVector<f64>,
    pub time: f64,
}

impl VoltageState {
    /// State at `t = 0` with the graph's clamp voltages and the given storage
    /// voltages (layer order).
    pub fn new(graph: &NetworkGraph, storage: &[f64]) -> Self {
        let [_, n_sto, n_snk] = graph.layer_sizes();
        assert_eq!(storage.len(), n_sto, "one initial voltage per storage node");
        Self {
            v_src: DVector::from_vec(graph.source_voltages()),
            v: DVector::from_column_slice(storage),
            v_snk: DVector::zeros(n_snk),
            time: 0.0,
        }
    }

    pub fn voltage_of(&self, graph: &NetworkGraph, id: NodeId) -> f64 {
        let idx = graph.layer_index(id);
        match graph.kind(id) {
            Source => self.v_src[idx],
            Storage => self.v[idx],
            Sink => self.v_snk[idx],
        }
    }

    /// Voltages indexed by node id.
    pub fn node_voltages(&self, graph: &NetworkGraph) -> Vec<f64> {
        (0..graph.node_count())
            .map(|i| self.voltage_of(graph, NodeId(i)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSnapshot {
    /// Current supplied by each source into the network (positive when
    /// supplying).
    pub i_in: Vec<f64>,
    /// Current absorbed by each sink.
    pub i_out: Vec<f64>,
    /// Current on each edge, oriented from `edge.a` to `edge.b`.
    pub edge_current: Vec<f64>,
    /// Power delivered into the downstream end of each edge, signed along the
    /// edge orientation. For sink paths this is the power leaving the storage.
    pub edge_power: Vec<f64>,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusParams {
    pub epsilon: f64,
    pub bias: DVector<f64>,
}

impl ConsensusParams {
    pub fn unbiased(epsilon: f64, n: usize) -> Self {
        Self {
            epsilon,
            bias: DVector::zeros(n),
        }
    }
}

/// Largest `dt * L_ii / c_i` over the storage layer, with the storage index
/// where it occurs.
fn euler_ratio(blocks: &LaplacianBlocks, capacitances: &[f64], dt: f64) -> (usize, f64) {
    let l22 = blocks.block(Storage, Storage);
    (0..l22.nrows())
        .map(|i| (i, dt * l22[(i, i)] / capacitances[i]))
        .fold((0, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best })
}

/// Checks `dt * max_i(L_ii / c_i) < 1` over the storage layer.
pub fn check_euler_stability(
    blocks: &LaplacianBlocks,
    capacitances: &[f64],
    dt: f64,
) -> Result<()> {
    let (idx, ratio) = euler_ratio(blocks, capacitances, dt);
    if ratio >= 1.0 {
        let node = blocks.layer_order()[blocks.sizes()[0] + idx];
        return Err(Error::Unstable { node, ratio });
    }
    Ok(())
}

/// Time derivative of the storage voltages.
pub fn voltage_rate(blocks: &LaplacianBlocks, state: &VoltageState, capacitances: &[f64]) -> DVector<f64> {
    let mut rhs = blocks.block(Storage, Storage) * &state.v;
    rhs += blocks.block(Storage, Source) * &state.v_src;
    rhs += blocks.block(Storage, Sink) * &state.v_snk;
    DVector::from_iterator(
        rhs.len(),
        rhs.iter().zip(capacitances).map(|(r, c)| -r / c),
    )
}

/// One explicit Euler step of the storage voltages.
pub fn step_voltages(
    blocks: &LaplacianBlocks,
    state: &VoltageState,
    capacitances: &[f64],
    dt: f64,
) -> Result<VoltageState> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("time step must be positive, got {dt}")));
    }
    check_euler_stability(blocks, capacitances, dt)?;
    let rate = voltage_rate(blocks, state, capacitances);
    Ok(VoltageState {
        v_src: state.v_src.clone(),
        v: &state.v + rate * dt,
        v_snk: state.v_snk.clone(),
        time: state.time + dt,
    })
}

/// Boundary currents and per-edge current and throughput for the
/// configuration encoded in `blocks`.
pub fn flow_snapshot(
    blocks: &LaplacianBlocks,
    state: &VoltageState,
    graph: &NetworkGraph,
) -> FlowSnapshot {
    let i_in = blocks.block(Source, Source) * &state.v_src
        + blocks.block(Source, Storage) * &state.v
        + blocks.block(Source, Sink) * &state.v_snk;
    let i_out = -(blocks.block(Sink, Source) * &state.v_src
        + blocks.block(Sink, Storage) * &state.v
        + blocks.block(Sink, Sink) * &state.v_snk);

    let volts = state.node_voltages(graph);
    let mut edge_current = Vec::with_capacity(graph.edges.len());
    let mut edge_power = Vec::with_capacity(graph.edges.len());
    for edge in &graph.edges {
        let (a, b) = (edge.a.0, edge.b.0);
        let w = -blocks.full[(a, b)];
        let current = w * (volts[a] - volts[b]);
        let power = if edge.to_sink {
            current * volts[a]
        } else if current >= 0.0 {
            current * volts[b]
        } else {
            current * volts[a]
        };
        edge_current.push(current);
        edge_power.push(power);
    }

    FlowSnapshot {
        i_in: i_in.iter().copied().collect(),
        i_out: i_out.iter().copied().collect(),
        edge_current,
        edge_power,
        time: state.time,
    }
}

/// `1 / max_i(c_i^-1 L_ii)`; infinite when every degree is zero.
pub fn stability_epsilon_bound(laplacian: &DMatrix<f64>, capacitances: &DVector<f64>) -> f64 {
    let worst = (0..laplacian.nrows())
        .map(|i| laplacian[(i, i)] / capacitances[i])
        .fold(0.0_f64, f64::max);
    1.0 / worst
}

/// `(I - eps C^-1 L) x + eps C^-1 b`.
pub fn discrete_consensus_step(
    laplacian: &DMatrix<f64>,
    capacitances: &DVector<f64>,
    x: &DVector<f64>,
    params: &ConsensusParams,
) -> Result<DVector<f64>> {
    let bound = stability_epsilon_bound(laplacian, capacitances);
    if !(params.epsilon > 0.0 && params.epsilon < bound) {
        return Err(Error::EpsilonOutOfBound {
            epsilon: params.epsilon,
            bound,
        });
    }
    let drive = (laplacian * x - &params.bias).component_div(capacitances);
    Ok(x - drive * params.epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, Electrical, EdgeId, EdgeSpec, PowerPhase, TopologySpec};

    /// Source - storage - sink with explicit conductances.
    fn divider(w_src: f64, w_snk: f64) -> LaplacianBlocks {
        let l = DMatrix::from_row_slice(
            3,
            3,
            &[w_src, -w_src, 0.0, -w_src, w_src + w_snk, -w_snk, 0.0, -w_snk, w_snk],
        );
        LaplacianBlocks::from_layered(l, [1, 1, 1])
    }

    fn single_state(v0: f64) -> VoltageState {
        VoltageState {
            v_src: DVector::from_element(1, 10.0),
            v: DVector::from_element(1, v0),
            v_snk: DVector::zeros(1),
            time: 0.0,
        }
    }

    #[test]
    fn isolated_storages_do_not_move() {
        let blocks = LaplacianBlocks::from_layered(DMatrix::zeros(4, 4), [1, 2, 1]);
        let state = VoltageState {
            v_src: DVector::from_element(1, 10.0),
            v: DVector::from_vec(vec![3.0, 7.0]),
            v_snk: DVector::zeros(1),
            time: 0.0,
        };
        let next = step_voltages(&blocks, &state, &[1e-3, 1e-3], 3.125e-6).unwrap();
        assert_eq!(next.v, state.v);
        assert_eq!(next.time, 3.125e-6);
    }

    #[test]
    fn rc_charging_matches_closed_form() {
        let (w, c, dt): (f64, f64, f64) = (0.5, 1e-3, 3.125e-6);
        let blocks = divider(w, 0.0);
        let mut state = single_state(2.0);
        let steps = (0.1 / dt).round() as usize;
        for k in 1..=steps {
            state = step_voltages(&blocks, &state, &[c], dt).unwrap();
            let t = k as f64 * dt;
            let exact = 10.0 + (2.0 - 10.0) * (-t * w / c).exp();
            assert!(((state.v[0] - exact) / exact).abs() < 0.01, "t={t}");
        }
    }

    #[test]
    fn divider_fixed_point() {
        let (ws, wk) = (0.5, 1.0 / 51.0);
        let blocks = divider(ws, wk);
        let mut state = single_state(0.0);
        for _ in 0..200_000 {
            state = step_voltages(&blocks, &state, &[1e-3], 3.125e-6).unwrap();
        }
        let expected = 10.0 * ws / (ws + wk);
        assert!((expected - 9.6226).abs() < 1e-3);
        assert!((state.v[0] - expected).abs() < 1e-6);
    }

    #[test]
    fn unstable_step_names_node() {
        let blocks = divider(0.5, 0.0);
        let err = step_voltages(&blocks, &single_state(0.0), &[1e-6], 3.125e-6).unwrap_err();
        assert!(matches!(err, Error::Unstable { node: NodeId(1), .. }));
    }

    #[test]
    fn open_network_has_no_boundary_current() {
        let g = build_graph(&TopologySpec::chain5(), &Electrical::default()).unwrap();
        let blocks = crate::graph::weighted_laplacian(&g, &[PowerPhase::Payload; 4]);
        let state = VoltageState::new(&g, &[0.0; 3]);
        let flow = flow_snapshot(&blocks, &state, &g);
        assert_eq!(flow.i_in, vec![0.0]);
        assert_eq!(flow.i_out, vec![0.0]);
    }

    #[test]
    fn ohmic_edge_current() {
        let spec = TopologySpec {
            nodes: vec![NodeKind::Source, NodeKind::Storage, NodeKind::Sink],
            edges: vec![EdgeSpec::new(0, 1), EdgeSpec::new(1, 2)],
        };
        let mut g = build_graph(&spec, &Electrical::default()).unwrap();
        g.set_routed(EdgeId(0), true);
        let blocks = crate::graph::weighted_laplacian(&g, &[PowerPhase::Payload; 2]);
        let state = VoltageState::new(&g, &[0.0]);
        let flow = flow_snapshot(&blocks, &state, &g);
        assert_eq!(flow.edge_current[0], 5.0);
        assert_eq!(flow.i_in[0], 5.0);
        // delivered into a 0 V node
        assert_eq!(flow.edge_power[0], 0.0);
    }

    #[test]
    fn epsilon_bound_examples() {
        let l = DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]);
        let c = DVector::from_element(2, 1.0);
        assert_eq!(stability_epsilon_bound(&l, &c), 2.0);
        assert_eq!(stability_epsilon_bound(&l, &(c.clone() * 3.0)), 6.0);

        let x = DVector::from_vec(vec![1.0, 0.0]);
        let err = discrete_consensus_step(&l, &c, &x, &ConsensusParams::unbiased(2.5, 2));
        assert!(matches!(err, Err(Error::EpsilonOutOfBound { .. })));
        assert!(discrete_consensus_step(&l, &c, &x, &ConsensusParams::unbiased(0.0, 2)).is_err());
    }

    #[test]
    fn consensus_keeps_constant_vector() {
        let l = DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0]);
        let c = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let x = DVector::from_element(3, 4.25);
        let next = discrete_consensus_step(&l, &c, &x, &ConsensusParams::unbiased(0.5, 3)).unwrap();
        assert_eq!(next, x);
    }

    #[test]
    fn chain_bound_is_max_over_degree_sums() {
        let mut g = build_graph(&TopologySpec::chain5(), &Electrical::default()).unwrap();
        g.route_all(true);
        let l = crate::graph::weighted_laplacian(&g, &[PowerPhase::Payload; 4]);
        let l22 = l.block(Storage, Storage).clone_owned();
        let caps = DVector::from_element(3, 1e-3);
        // brute force: row sums of |off-diagonal| entries of the full matrix
        let mut worst: f64 = 0.0;
        for id in g.nodes_of(Storage) {
            let deg: f64 = (0..5)
                .filter(|&j| j != id.0)
                .map(|j| -l.full[(id.0, j)])
                .sum();
            worst = worst.max(deg / 1e-3);
        }
        let bound = stability_epsilon_bound(&l22, &caps);
        assert!((bound - 1.0 / worst).abs() < 1e-15);
        assert!((bound - 1e-3).abs() < 1e-15);
    }
}
