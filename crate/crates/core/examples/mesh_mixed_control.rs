//! Mixed control on the mesh. Top-down nodes never answer queries from
//! bottom-up neighbors, so the u4-u5 path stays idle.

use ppn::analysis::{endpoint_distribution, DEFAULT_WINDOW};
use ppn::engine::run_ensemble;
use ppn::router::ControlMethod;
use ppn::scenario::Scenario;

fn main() -> ppn::Result<()> {
    let mut scenario = Scenario::builtin("trimesh9-mixed").expect("builtin");
    scenario.config.n_runs = 3;
    scenario.config.end_time = 0.05;
    let methods = &scenario.config.methods;
    for (i, m) in methods.iter().enumerate().take(7) {
        let tag = if *m == ControlMethod::TopDown { "top-down" } else { "bottom-up" };
        println!("u{i}: {tag}");
    }
    let traces = run_ensemble(&scenario.config)?;
    let dist = endpoint_distribution(&traces, 0.05, DEFAULT_WINDOW)?;
    for i in 1..=6 {
        println!("median v{i} = {:.3} V", dist.node_median(i));
    }
    let e45 = traces[0].edge_index(4, 5).expect("edge u4-u5");
    println!("end-point p45 per run: {:?}", dist.edge_values(e45));
    let dropped: usize = traces.iter().map(|t| t.dropped.len()).sum();
    println!("{dropped} stale requests dropped");
    Ok(())
}
