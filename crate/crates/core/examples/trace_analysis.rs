//! Writes a run to CSV, reads it back and computes moving averages and the
//! end-point distribution from the file.

use std::io::BufReader;

use ppn::analysis::{endpoint_distribution, moving_average};
use ppn::engine::run_simulation;
use ppn::scenario::Scenario;
use ppn::trace_io::{read_trace, write_trace};

fn main() -> ppn::Result<()> {
    let mut scenario = Scenario::builtin("chain5-topdown").expect("builtin");
    scenario.config.end_time = 0.02;
    let trace = run_simulation(&scenario.config, 0)?;

    let mut csv = Vec::new();
    write_trace(&trace, &mut csv)?;
    println!("{} bytes of CSV for {} samples", csv.len(), trace.len());
    let back = read_trace(BufReader::new(csv.as_slice()), "memory".as_ref())?;
    assert_eq!(back.voltages, trace.voltages);

    let window = 1.25e-3;
    let ma = moving_average(&back.voltages[1], back.dt, window)?;
    println!("window of {} samples", ma.window_samples);
    for t in [0.005, 0.01, 0.015, 0.02] {
        let k = back.sample_index(t)?;
        println!("t = {t:<6} v1 = {:.4}  averaged {:.4}", back.voltages[1][k], ma.values[k]);
    }
    let dist = endpoint_distribution(std::slice::from_ref(&back), 0.02, window)?;
    println!("end-point voltages {:.4?}", dist.voltages[0]);
    println!("end-point powers   {:.4?}", dist.powers[0]);
    Ok(())
}
