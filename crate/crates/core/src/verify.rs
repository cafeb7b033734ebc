//! Acceptance checks.
//!
//! Each check returns a [`CriterionResult`]; [`run_all`] runs the builtin
//! experiments once and evaluates every check against them.

use std::collections::HashSet;
use std::fmt;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::analysis::{endpoint_distribution, energy_audit, max_charge_imbalance, DEFAULT_WINDOW};
use crate::dynamics::{
    discrete_consensus_step, stability_epsilon_bound, step_voltages, ConsensusParams,
    VoltageState,
};
use crate::engine::{run_ensemble, SimConfig, Trace};
use crate::error::Result;
use crate::graph::{
    build_graph, weighted_laplacian, EdgeId, LaplacianBlocks, NodeKind, PowerPhase, TopologySpec,
};
use crate::router::{MessageKind, Tick};
use crate::scenario::Scenario;
use crate::trace_io::{write_messages, write_trace};

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CriterionResult {
    fn new(id: u8, name: &'static str, passed: bool, detail: String) -> Self {
        Self {
            id,
            name,
            passed,
            detail,
        }
    }
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {:>2} {}: {}", self.id, self.name, self.detail)
    }
}

/// One builtin ensemble and how long it took to simulate.
#[derive(Debug, Clone)]
pub struct EnsembleRun {
    pub scenario: Scenario,
    pub traces: Vec<Trace>,
    pub elapsed: Duration,
}

#[derive(Debug, Clone)]
pub struct BuiltinRuns {
    pub runs: Vec<EnsembleRun>,
}

impl BuiltinRuns {
    /// Runs every builtin scenario, one ensemble at a time.
    pub fn simulate() -> Result<Self> {
        let runs = crate::scenario::BUILTIN_NAMES
            .iter()
            .map(|name| {
                let scenario = Scenario::builtin(name).expect("builtin exists");
                let start = Instant::now();
                let traces = run_ensemble(&scenario.config)?;
                Ok(EnsembleRun {
                    scenario,
                    traces,
                    elapsed: start.elapsed(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { runs })
    }

    pub fn get(&self, name: &str) -> &EnsembleRun {
        self.runs
            .iter()
            .find(|r| r.scenario.name == name)
            .unwrap_or_else(|| panic!("no builtin run named {name}"))
    }
}

fn fmt_volts(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

/// Random switch and phase configurations of the mesh: symmetry, zero row
/// sums, positive semi-definiteness and the block tiling.
pub fn laplacian_suite(n_configs: usize, seed: u64) -> CriterionResult {
    let start = Instant::now();
    let config = SimConfig::uniform(TopologySpec::trimesh9(), crate::router::ControlMethod::TopDown);
    let mut graph = build_graph(&config.topology, &config.electrical()).expect("builtin graph");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst_asym, mut worst_row, mut min_eig, mut tiling_ok) = (0.0_f64, 0.0_f64, f64::MAX, true);
    for _ in 0..n_configs {
        for e in 0..graph.edges.len() {
            graph.set_routed(EdgeId(e), rng.gen_bool(0.5));
        }
        let phases: Vec<PowerPhase> = (0..graph.edges.len())
            .map(|_| {
                if rng.gen_bool(0.2) {
                    PowerPhase::Tag
                } else {
                    PowerPhase::Payload
                }
            })
            .collect();
        let blocks = weighted_laplacian(&graph, &phases);
        let l = &blocks.full;
        worst_asym = worst_asym.max((l - l.transpose()).abs().max());
        for i in 0..l.nrows() {
            worst_row = worst_row.max(l.row(i).sum().abs());
        }
        let eig = SymmetricEigen::new(l.clone());
        min_eig = min_eig.min(eig.eigenvalues.min());
        tiling_ok &= blocks.reassemble() == *blocks.layered();
        // the layered copy is the full matrix under the layer permutation
        let order = blocks.layer_order();
        for (r, &a) in order.iter().enumerate() {
            for (c, &b) in order.iter().enumerate() {
                tiling_ok &= blocks.layered()[(r, c)] == l[(a.0, b.0)];
            }
        }
    }
    let elapsed = start.elapsed();
    let passed = worst_asym == 0.0
        && worst_row < 1e-12
        && min_eig >= -1e-9
        && tiling_ok
        && elapsed < Duration::from_secs(1);
    CriterionResult::new(
        1,
        "laplacian suite",
        passed,
        format!(
            "{n_configs} configs, max asymmetry {worst_asym:e}, max |row sum| {worst_row:e}, \
             lambda_min {min_eig:e}, tiling {}, {:.3} s",
            if tiling_ok { "exact" } else { "BROKEN" },
            elapsed.as_secs_f64()
        ),
    )
}

/// Storage-only Laplacian of the fully routed mesh: the storage block with
/// the couplings to sources and sinks removed from the diagonal.
pub fn isolated_storage_laplacian(topology: &TopologySpec, config: &SimConfig) -> DMatrix<f64> {
    let mut graph = build_graph(topology, &config.electrical()).expect("valid topology");
    graph.route_all(true);
    let phases = vec![PowerPhase::Payload; graph.edges.len()];
    let blocks = weighted_laplacian(&graph, &phases);
    let mut l = blocks.block(NodeKind::Storage, NodeKind::Storage).into_owned();
    for i in 0..l.nrows() {
        let boundary = l.row(i).sum();
        l[(i, i)] -= boundary;
    }
    l
}

/// Discrete consensus on the isolated storage cluster converges to the
/// capacitance-weighted average.
pub fn consensus_convergence() -> CriterionResult {
    let config = SimConfig::uniform(TopologySpec::trimesh9(), crate::router::ControlMethod::TopDown);
    let l = isolated_storage_laplacian(&config.topology, &config);
    let n = l.nrows();
    let c = DVector::from_iterator(n, (0..n).map(|i| 1e-3 * (1.0 + 0.5 * i as f64)));
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut x = DVector::from_iterator(n, (0..n).map(|_| 10.0 * rng.gen::<f64>()));
    let target = x.dot(&c) / c.sum();
    let bound = stability_epsilon_bound(&l, &c);
    let params = ConsensusParams::unbiased(0.5 * bound, n);
    let limit = 100_000;
    let mut iterations = None;
    for k in 0..=limit {
        if x.iter().all(|v| (v - target).abs() < 1e-6) {
            iterations = Some(k);
            break;
        }
        if k < limit {
            x = discrete_consensus_step(&l, &c, &x, &params).expect("epsilon inside bound");
        }
    }
    let spread = x.iter().map(|v| (v - target).abs()).fold(0.0, f64::max);
    CriterionResult::new(
        2,
        "consensus convergence",
        iterations.is_some(),
        match iterations {
            Some(k) => format!("within 1e-6 of weighted mean {target:.6} after {k} iterations"),
            None => format!("max deviation {spread:e} after {limit} iterations"),
        },
    )
}

/// Single source-storage edge against the closed-form charging curve.
pub fn rc_oracle() -> CriterionResult {
    let config = SimConfig::uniform(TopologySpec::chain5(), crate::router::ControlMethod::TopDown);
    let w = 1.0 / (2.0 * config.switch_resistance);
    let c = config.capacitance;
    let dt = config.bit_time;
    let v0 = 2.0;
    // source, storage and an unconnected sink
    let l = DMatrix::from_row_slice(3, 3, &[w, -w, 0.0, -w, w, 0.0, 0.0, 0.0, 0.0]);
    let blocks = LaplacianBlocks::from_layered(l, [1, 1, 1]);
    let mut state = VoltageState {
        v_src: DVector::from_element(1, config.v_src),
        v: DVector::from_element(1, v0),
        v_snk: DVector::zeros(1),
        time: 0.0,
    };
    let steps = (0.1 / dt).round() as usize;
    let mut worst = 0.0_f64;
    for k in 1..=steps {
        state = step_voltages(&blocks, &state, &[c], dt).expect("stable");
        let t = k as f64 * dt;
        let exact = config.v_src + (v0 - config.v_src) * (-t * w / c).exp();
        worst = worst.max(((state.v[0] - exact) / exact).abs());
    }
    CriterionResult::new(
        3,
        "rc oracle",
        worst < 0.01,
        format!("max relative error {worst:e} over {steps} steps"),
    )
}

pub fn conservation(runs: &BuiltinRuns) -> CriterionResult {
    let (mut charge, mut energy) = (0.0_f64, 0.0_f64);
    let mut count = 0;
    for run in &runs.runs {
        let config = &run.scenario.config;
        let graph = build_graph(&config.topology, &config.electrical()).expect("builtin graph");
        for trace in &run.traces {
            charge = charge.max(max_charge_imbalance(trace, &graph));
            energy = energy.max(energy_audit(trace, &graph, config).relative_residual());
            count += 1;
        }
    }
    CriterionResult::new(
        4,
        "conservation",
        charge < 1e-9 && energy < 1e-6,
        format!("{count} runs, max charge imbalance {charge:e}, max audit residual {energy:e}"),
    )
}

fn endpoint_means(run: &EnsembleRun, nodes: &[usize]) -> Vec<f64> {
    let dist = endpoint_distribution(&run.traces, run.scenario.config.end_time, DEFAULT_WINDOW)
        .expect("end time inside traces");
    nodes.iter().map(|&i| dist.node_mean(i)).collect()
}

pub fn chain_gradient(runs: &BuiltinRuns) -> CriterionResult {
    let run = runs.get("chain5-topdown");
    let v = endpoint_means(run, &[1, 2, 3]);
    let secs = run.elapsed.as_secs_f64();
    CriterionResult::new(
        5,
        "chain gradient",
        v[0] >= v[1] && v[1] >= v[2] && secs < 10.0,
        format!("mean v1..v3 = {} V, ensemble {secs:.2} s", fmt_volts(&v)),
    )
}

pub fn method_gap(runs: &BuiltinRuns) -> CriterionResult {
    let td = endpoint_means(runs.get("chain5-topdown"), &[1, 2, 3]);
    let bu = endpoint_means(runs.get("chain5-bottomup"), &[1, 2, 3]);
    CriterionResult::new(
        6,
        "method gap",
        bu.iter().zip(&td).all(|(b, t)| b <= t),
        format!("bottom-up {} V vs top-down {} V", fmt_volts(&bu), fmt_volts(&td)),
    )
}

pub fn mixed_blocking(runs: &BuiltinRuns) -> CriterionResult {
    let run = runs.get("trimesh9-mixed");
    let dist = endpoint_distribution(&run.traces, run.scenario.config.end_time, DEFAULT_WINDOW)
        .expect("end time inside traces");
    let e = run.traces[0].edge_index(4, 5).expect("mesh has edge (4,5)");
    let endpoint = dist.edge_values(e);
    let zero_runs = endpoint.iter().filter(|p| **p == 0.0).count();
    // transient flow before the voltages settle, reported for context
    let mut early = 0;
    let mut last_nonzero = 0.0_f64;
    for trace in &run.traces {
        if let Some(k) = trace.edge_powers[e].iter().rposition(|p| *p != 0.0) {
            early += 1;
            last_nonzero = last_nonzero.max(trace.times[k]);
        }
    }
    CriterionResult::new(
        7,
        "mixed blocking",
        zero_runs == endpoint.len(),
        format!(
            "end-point p45 exactly 0 in {zero_runs}/{} runs; {early} runs carried p45 \
             earlier, last at {:.2} ms",
            endpoint.len(),
            last_nonzero * 1e3
        ),
    )
}

pub fn mixed_bias(runs: &BuiltinRuns) -> CriterionResult {
    let run = runs.get("trimesh9-mixed");
    let dist = endpoint_distribution(&run.traces, run.scenario.config.end_time, DEFAULT_WINDOW)
        .expect("end time inside traces");
    let m: Vec<f64> = (0..dist.node_kinds.len()).map(|i| dist.node_median(i)).collect();
    CriterionResult::new(
        8,
        "mixed bias",
        m[6] > m[4] && m[3] > m[2],
        format!(
            "median v6 {:.4} vs v4 {:.4}, v3 {:.4} vs v2 {:.4}",
            m[6], m[4], m[3], m[2]
        ),
    )
}

/// Problems found in one trace: Start/End bracketing and the length of every
/// routed interval on a switchable edge.
pub fn protocol_audit(trace: &Trace, config: &SimConfig) -> Vec<String> {
    let mut problems = Vec::new();
    let latency = config.message_latency_ticks;
    let bits = u64::from(config.total_bits);
    let sent: HashSet<(MessageKind, usize, usize, u64)> = trace
        .messages
        .iter()
        .map(|m| (m.kind, m.from.0, m.to.0, m.sent.0))
        .collect();
    for rec in &trace.transmissions {
        let tx = rec.tx;
        let start_key = (
            MessageKind::Start,
            tx.receiver.0,
            tx.sender.0,
            tx.start.0.saturating_sub(latency),
        );
        if !sent.contains(&start_key) {
            problems.push(format!("transmission {}->{} at tick {} has no Start", tx.sender, tx.receiver, tx.start.0));
        }
        if let Some(Tick(end)) = rec.end {
            if !sent.contains(&(MessageKind::End, tx.sender.0, tx.receiver.0, end)) {
                problems.push(format!("transmission {}->{} ending at tick {end} has no End", tx.sender, tx.receiver));
            }
            if end - tx.start.0 != bits {
                problems.push(format!("transmission {}->{} lasted {} ticks", tx.sender, tx.receiver, end - tx.start.0));
            }
        }
    }
    let n = trace.len();
    for (e, &(a, b)) in trace.edge_ends.iter().enumerate() {
        if trace.node_kinds[a.0] == NodeKind::Sink || trace.node_kinds[b.0] == NodeKind::Sink {
            continue;
        }
        let states = &trace.switch_states[e];
        let mut k = 0;
        while k < n {
            if !states[k] {
                k += 1;
                continue;
            }
            let begin = k;
            while k < n && states[k] {
                k += 1;
            }
            let len = (k - begin) as u64;
            let started = trace
                .transmissions
                .iter()
                .find(|r| r.tx.edge.0 == e && r.tx.start.0 == begin as u64);
            match started {
                None => problems.push(format!("edge {e} routed at tick {begin} without a transmission")),
                Some(r) if k == n && r.truncated() && len <= bits => {}
                Some(_) if len != bits => {
                    problems.push(format!("edge {e} routed for {len} ticks from tick {begin}"))
                }
                Some(_) => {}
            }
        }
    }
    problems
}

pub fn protocol_safety(runs: &BuiltinRuns) -> CriterionResult {
    let mut violations = 0;
    let mut problems = Vec::new();
    let mut transmissions = 0;
    let mut truncated = 0;
    for run in &runs.runs {
        for trace in &run.traces {
            violations += trace.protocol_violations;
            transmissions += trace.transmissions.len();
            truncated += trace.transmissions.iter().filter(|r| r.truncated()).count();
            problems.extend(
                protocol_audit(trace, &run.scenario.config)
                    .into_iter()
                    .map(|p| format!("{} run {}: {p}", run.scenario.name, trace.run_index)),
            );
        }
    }
    let mut detail = format!(
        "{violations} violations, {transmissions} transmissions ({truncated} truncated at end), \
         {} bracketing/length problems",
        problems.len()
    );
    if let Some(first) = problems.first() {
        detail.push_str(&format!("; first: {first}"));
    }
    CriterionResult::new(9, "protocol safety", violations == 0 && problems.is_empty(), detail)
}

/// SHA-256 over the trace file and message log of every run.
pub fn ensemble_digest(traces: &[Trace]) -> String {
    let mut hasher = Sha256::new();
    for trace in traces {
        let mut buf = Vec::new();
        write_trace(trace, &mut buf).expect("in-memory write");
        write_messages(trace, &mut buf).expect("in-memory write");
        hasher.update(&buf);
    }
    hex::encode(hasher.finalize())
}

pub fn determinism(runs: &BuiltinRuns) -> Result<CriterionResult> {
    let first = runs.get("trimesh9-mixed");
    let again = run_ensemble(&first.scenario.config)?;
    let (a, b) = (ensemble_digest(&first.traces), ensemble_digest(&again));
    let hash_same = first
        .traces
        .iter()
        .zip(&again)
        .all(|(x, y)| x.config_hash == y.config_hash);
    Ok(CriterionResult::new(
        10,
        "determinism",
        a == b && hash_same,
        format!("trace digest {}... {}", &a[..16], if a == b { "repeated" } else { "CHANGED" }),
    ))
}

pub fn run_all() -> Result<Vec<CriterionResult>> {
    let mut results = vec![laplacian_suite(100, 1), consensus_convergence(), rc_oracle()];
    let runs = BuiltinRuns::simulate()?;
    results.push(conservation(&runs));
    results.push(chain_gradient(&runs));
    results.push(method_gap(&runs));
    results.push(mixed_blocking(&runs));
    results.push(mixed_bias(&runs));
    results.push(protocol_safety(&runs));
    results.push(determinism(&runs)?);
    Ok(results)
}
