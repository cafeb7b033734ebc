//! Top-down against bottom-up control on the five-node chain: median
//! storage voltages over a small ensemble.

use ppn::analysis::{endpoint_distribution, DEFAULT_WINDOW};
use ppn::engine::run_ensemble;
use ppn::scenario::Scenario;

fn main() -> ppn::Result<()> {
    for name in ["chain5-topdown", "chain5-bottomup"] {
        let mut scenario = Scenario::builtin(name).expect("builtin");
        scenario.config.n_runs = 4;
        scenario.config.end_time = 0.05;
        let traces = run_ensemble(&scenario.config)?;
        let dist = endpoint_distribution(&traces, 0.05, DEFAULT_WINDOW)?;
        let medians: Vec<String> = (1..=3).map(|i| format!("v{i} {:.3}", dist.node_median(i))).collect();
        let packets: usize = traces.iter().map(|t| t.transmissions.len()).sum();
        println!("{name:>16}: {}  ({packets} packets)", medians.join("  "));
    }
    Ok(())
}
