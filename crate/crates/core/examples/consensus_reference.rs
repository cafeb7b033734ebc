//! Discrete consensus on the storage layer of the mesh, with every edge
//! routed and the source and sinks cut off. Voltages settle at the
//! capacitance-weighted mean.

use nalgebra::DVector;
use ppn::dynamics::{discrete_consensus_step, stability_epsilon_bound, ConsensusParams};
use ppn::engine::SimConfig;
use ppn::graph::TopologySpec;
use ppn::router::ControlMethod;
use ppn::verify::isolated_storage_laplacian;

fn main() -> ppn::Result<()> {
    let config = SimConfig::uniform(TopologySpec::trimesh9(), ControlMethod::TopDown);
    let l = isolated_storage_laplacian(&config.topology, &config);
    let n = l.nrows();
    let caps = DVector::from_element(n, config.capacitance);
    let mut x = DVector::from_vec(vec![9.0, 1.0, 4.0, 7.0, 0.5, 6.0]);
    let target = x.dot(&caps) / caps.sum();
    let bound = stability_epsilon_bound(&l, &caps);
    let params = ConsensusParams::unbiased(0.5 * bound, n);
    println!("epsilon bound {bound:.3e} s, using {:.3e} s", params.epsilon);
    for k in 0..=60 {
        if k % 10 == 0 {
            let spread = x.max() - x.min();
            println!("iter {k:>3}: spread {spread:.2e}  x = {:.4?}", x.as_slice());
        }
        x = discrete_consensus_step(&l, &caps, &x, &params)?;
    }
    println!("weighted mean {target:.6}");
    Ok(())
}
