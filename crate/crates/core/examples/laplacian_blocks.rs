//! Builds the chain, routes its switchable edges one by one and prints the
//! layered Laplacian blocks after each change.

use ppn::graph::{build_graph, weighted_laplacian, EdgeId, Electrical, NodeKind, PowerPhase, TopologySpec};

fn main() -> ppn::Result<()> {
    let mut graph = build_graph(&TopologySpec::chain5(), &Electrical::default())?;
    let payload = vec![PowerPhase::Payload; graph.edges.len()];
    for e in 0..graph.edges.len() {
        let blocks = weighted_laplacian(&graph, &payload);
        println!("routed: {:?}", graph.edges.iter().map(|e| e.routed).collect::<Vec<_>>());
        println!("L22 (storage){}", blocks.block(NodeKind::Storage, NodeKind::Storage));
        println!("L21 (storage x source){}", blocks.block(NodeKind::Storage, NodeKind::Source));
        graph.set_routed(EdgeId(e), true);
    }
    // during the tag bits a routed edge still carries nothing
    let mut tag = payload;
    tag[0] = PowerPhase::Tag;
    let blocks = weighted_laplacian(&graph, &tag);
    println!("edge u0-u1 in its tag phase:{}", blocks.layered());
    Ok(())
}
