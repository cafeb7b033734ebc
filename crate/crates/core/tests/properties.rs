use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use ppn::analysis::{endpoint_distribution, moving_average};
use ppn::dynamics::{
    discrete_consensus_step, flow_snapshot, stability_epsilon_bound, step_voltages,
    ConsensusParams, VoltageState,
};
use ppn::engine::{run_simulation, SimConfig};
use ppn::graph::{
    build_graph, weighted_laplacian, EdgeId, Electrical, NetworkGraph, NodeId, PowerPhase,
    TopologySpec,
};
use ppn::router::{
    ControlMethod, LocalView, Message, MessageKind, Port, RouterState, RouterTiming, Tick,
};

fn mesh() -> NetworkGraph {
    build_graph(&TopologySpec::trimesh9(), &Electrical::default()).unwrap()
}

fn phase(tag: bool) -> PowerPhase {
    if tag {
        PowerPhase::Tag
    } else {
        PowerPhase::Payload
    }
}

/// Applies a routing mask and returns the per-edge phases.
fn configure(graph: &mut NetworkGraph, routed: &[bool], tags: &[bool]) -> Vec<PowerPhase> {
    for (e, &r) in routed.iter().enumerate().take(graph.edges.len()) {
        graph.set_routed(EdgeId(e), r);
    }
    tags.iter().take(graph.edges.len()).map(|&t| phase(t)).collect()
}

/// Components of the graph formed by edges with nonzero weight.
fn conducting_components(graph: &NetworkGraph, phases: &[PowerPhase]) -> usize {
    let n = graph.node_count();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut x = x;
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for (e, edge) in graph.edges.iter().enumerate() {
        let conducts = !edge.switchable || (edge.routed && phases[e] == PowerPhase::Payload);
        if conducts {
            let (a, b) = (find(&mut parent, edge.a.0), find(&mut parent, edge.b.0));
            parent[a] = b;
        }
    }
    (0..n).filter(|&x| find(&mut parent, x) == x).count()
}

const MESH_EDGES: usize = 12;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn laplacian_is_symmetric_psd_with_zero_rows(
        routed in prop::collection::vec(any::<bool>(), MESH_EDGES),
        tags in prop::collection::vec(any::<bool>(), MESH_EDGES),
    ) {
        let mut graph = mesh();
        let phases = configure(&mut graph, &routed, &tags);
        let l = weighted_laplacian(&graph, &phases).layered().clone();
        prop_assert_eq!(&l, &l.transpose());
        for row in l.row_iter() {
            prop_assert!(row.sum().abs() < 1e-12);
        }
        let eig = l.clone().symmetric_eigen().eigenvalues;
        prop_assert!(eig.iter().all(|&x| x > -1e-9), "{eig}");
        let zeros = eig.iter().filter(|x| x.abs() < 1e-9).count();
        prop_assert_eq!(zeros, conducting_components(&graph, &phases));
    }

    #[test]
    fn route_then_unroute_restores_laplacian(
        routed in prop::collection::vec(any::<bool>(), MESH_EDGES),
        edge in 0..MESH_EDGES,
    ) {
        let mut graph = mesh();
        let phases = configure(&mut graph, &routed, &[false; MESH_EDGES]);
        let before = weighted_laplacian(&graph, &phases).layered().clone();
        let was = graph.edges[edge].routed;
        graph.set_routed(EdgeId(edge), !was);
        graph.set_routed(EdgeId(edge), was);
        let after = weighted_laplacian(&graph, &phases).layered().clone();
        prop_assert!(before.iter().zip(after.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn voltages_stay_within_supply_range(
        init in prop::collection::vec(0.0..=10.0f64, 6),
        schedule in prop::collection::vec(prop::collection::vec(any::<bool>(), MESH_EDGES), 1..20),
    ) {
        let mut graph = mesh();
        let caps = graph.storage_capacitances();
        let mut state = VoltageState::new(&graph, &init);
        for routed in &schedule {
            let phases = configure(&mut graph, routed, &[false; MESH_EDGES]);
            let blocks = weighted_laplacian(&graph, &phases);
            for _ in 0..10 {
                state = step_voltages(&blocks, &state, &caps, 3.125e-6).unwrap();
                prop_assert!(state.v.iter().all(|&v| (-1e-12..=10.0 + 1e-12).contains(&v)));
            }
        }
    }

    #[test]
    fn storage_charge_matches_boundary_current(
        init in prop::collection::vec(0.0..=10.0f64, 6),
        routed in prop::collection::vec(any::<bool>(), MESH_EDGES),
    ) {
        let mut graph = mesh();
        let caps = graph.storage_capacitances();
        let phases = configure(&mut graph, &routed, &[false; MESH_EDGES]);
        let blocks = weighted_laplacian(&graph, &phases);
        let state = VoltageState::new(&graph, &init);
        let dt = 3.125e-6;
        let next = step_voltages(&blocks, &state, &caps, dt).unwrap();
        let flows = flow_snapshot(&blocks, &state, &graph);
        let stored: f64 = (0..caps.len()).map(|i| caps[i] * (next.v[i] - state.v[i])).sum();
        let net = dt * (flows.i_in.iter().sum::<f64>() - flows.i_out.iter().sum::<f64>());
        prop_assert!((stored - net).abs() < 1e-12, "{stored} vs {net}");
    }

    #[test]
    fn consensus_extremes_contract(
        weights in prop::collection::vec(0.1..2.0f64, 10),
        caps in prop::collection::vec(0.5..2.0f64, 5),
        x0 in prop::collection::vec(-5.0..5.0f64, 5),
        frac in 0.05..0.95f64,
    ) {
        // complete graph on 5 nodes
        let mut l = DMatrix::zeros(5, 5);
        let mut k = 0;
        for i in 0..5 {
            for j in i + 1..5 {
                l[(i, j)] -= weights[k];
                l[(j, i)] -= weights[k];
                l[(i, i)] += weights[k];
                l[(j, j)] += weights[k];
                k += 1;
            }
        }
        let caps = DVector::from_vec(caps);
        let params = ConsensusParams::unbiased(frac * stability_epsilon_bound(&l, &caps), 5);
        let mut x = DVector::from_vec(x0);
        for _ in 0..50 {
            let next = discrete_consensus_step(&l, &caps, &x, &params).unwrap();
            prop_assert!(next.max() <= x.max() + 1e-12);
            prop_assert!(next.min() >= x.min() - 1e-12);
            x = next;
        }
    }

    #[test]
    fn moving_average_is_linear(
        xs in prop::collection::vec(-10.0..10.0f64, 1..300),
        a in -3.0..3.0f64,
        b in -3.0..3.0f64,
        window in 1e-6..5e-4f64,
    ) {
        let ys: Vec<f64> = xs.iter().map(|x| x.sin() * 4.0).collect();
        let combo: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| a * x + b * y).collect();
        let dt = 3.125e-6;
        let mx = moving_average(&xs, dt, window).unwrap().values;
        let my = moving_average(&ys, dt, window).unwrap().values;
        let mc = moving_average(&combo, dt, window).unwrap().values;
        for k in 0..xs.len() {
            prop_assert!((mc[k] - (a * mx[k] + b * my[k])).abs() < 1e-9);
        }
    }

    #[test]
    fn top_down_never_offers_uphill(
        own in 0.0..10.0f64,
        neighbors in prop::collection::vec(0.0..10.0f64, 1..5),
        queries in prop::collection::vec((0usize..5, 0u64..200), 0..6),
    ) {
        let ports = (0..neighbors.len())
            .map(|i| Port { edge: EdgeId(i), neighbor: NodeId(i + 1), conductance: 0.5 })
            .collect();
        let mut router = RouterState::new(NodeId(0), ControlMethod::TopDown, 1e-3, ports);
        let view = LocalView { own, neighbors: neighbors.clone() };
        let timing = RouterTiming::default();
        for k in 0..400u64 {
            for &(from, at) in &queries {
                if at == k && from < neighbors.len() {
                    router.deliver(Message {
                        kind: MessageKind::Query,
                        from: NodeId(from + 1),
                        to: NodeId(0),
                        sent: Tick(k),
                    });
                }
            }
            let out = router.step(&view, Tick(k), &timing);
            for m in out.outbox.iter().filter(|m| m.kind == MessageKind::Acc) {
                prop_assert!(neighbors[m.to.0 - 1] < own, "Acc to {:?} at {k}", m.to);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn endpoint_extraction_commutes_with_run_order(
        order in Just(vec![0usize, 1, 2]).prop_shuffle(),
        t_frac in 0.2..1.0f64,
    ) {
        let config = SimConfig {
            end_time: 2e-3,
            ..SimConfig::uniform(TopologySpec::chain5(), ControlMethod::TopDown)
        };
        let traces: Vec<_> = (0..3).map(|r| run_simulation(&config, r).unwrap()).collect();
        let shuffled: Vec<_> = order.iter().map(|&i| traces[i].clone()).collect();
        let t_end = t_frac * 2e-3;
        let a = endpoint_distribution(&traces, t_end, 2.5e-4).unwrap();
        let b = endpoint_distribution(&shuffled, t_end, 2.5e-4).unwrap();
        for (pos, &i) in order.iter().enumerate() {
            prop_assert_eq!(&b.voltages[pos], &a.voltages[i]);
            prop_assert_eq!(&b.powers[pos], &a.powers[i]);
        }
        let mut ma: Vec<f64> = a.node_values(2);
        let mut mb: Vec<f64> = b.node_values(2);
        ma.sort_by(f64::total_cmp);
        mb.sort_by(f64::total_cmp);
        prop_assert_eq!(ma, mb);
    }
}
