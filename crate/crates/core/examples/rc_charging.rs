//! Charges one storage through a routed 2 ohm path and compares the Euler
//! integration with the closed-form exponential.

use nalgebra::{DMatrix, DVector};
use ppn::dynamics::{step_voltages, VoltageState};
use ppn::graph::LaplacianBlocks;

fn main() -> ppn::Result<()> {
    let (w, c, dt, v_src, v0) = (0.5, 1e-3, 3.125e-6, 10.0, 2.0);
    // source, storage, and a sink that is not connected
    let l = DMatrix::from_row_slice(3, 3, &[w, -w, 0.0, -w, w, 0.0, 0.0, 0.0, 0.0]);
    let blocks = LaplacianBlocks::from_layered(l, [1, 1, 1]);
    let mut state = VoltageState {
        v_src: DVector::from_element(1, v_src),
        v: DVector::from_element(1, v0),
        v_snk: DVector::zeros(1),
        time: 0.0,
    };
    println!("{:>8} {:>10} {:>10} {:>10}", "t [ms]", "euler", "exact", "rel err");
    for k in 1..=3200 {
        state = step_voltages(&blocks, &state, &[c], dt)?;
        if k % 320 == 0 {
            let exact: f64 = v_src + (v0 - v_src) * (-state.time * w / c).exp();
            println!(
                "{:>8.2} {:>10.6} {:>10.6} {:>10.2e}",
                state.time * 1e3,
                state.v[0],
                exact,
                ((state.v[0] - exact) / exact).abs()
            );
        }
    }
    Ok(())
}
