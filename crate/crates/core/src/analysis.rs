//! Post-processing of traces: trailing moving averages, end-point
//! distributions over an ensemble, and charge/energy bookkeeping.

use crate::engine::{SimConfig, Trace};
use crate::error::{Error, Result};
use crate::graph::{NetworkGraph, NodeId, NodeKind};

/// Window used for the plotted averages, in seconds.
pub const DEFAULT_WINDOW: f64 = 1.25e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct MovingAverageSeries {
    pub window: f64,
    /// Window length in samples (at least 1).
    pub window_samples: usize,
    pub values: Vec<f64>,
}

pub fn window_samples(window: f64, dt: f64) -> usize {
    ((window / dt + 1e-9).floor() as usize).max(1)
}

/// Trailing moving average; the first samples average whatever is
/// available.
pub fn moving_average(series: &[f64], dt: f64, window: f64) -> Result<MovingAverageSeries> {
    if series.is_empty() {
        return Err(Error::EmptySeries);
    }
    if !(window > 0.0) {
        return Err(Error::Config(format!("window must be positive, got {window}")));
    }
    let m = window_samples(window, dt);
    let mut values = Vec::with_capacity(series.len());
    let mut sum = 0.0;
    for (k, x) in series.iter().enumerate() {
        sum += x;
        if k >= m {
            sum -= series[k - m];
        }
        values.push(sum / (k + 1).min(m) as f64);
    }
    Ok(MovingAverageSeries {
        window,
        window_samples: m,
        values,
    })
}

/// Mean of the `m` samples ending at `idx` (fewer near the start).
fn trailing_mean(series: &[f64], idx: usize, m: usize) -> f64 {
    let lo = (idx + 1).saturating_sub(m);
    series[lo..=idx].iter().sum::<f64>() / (idx + 1 - lo) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndpointDistribution {
    pub t_end: f64,
    pub window: f64,
    pub node_kinds: Vec<NodeKind>,
    pub edge_ends: Vec<(NodeId, NodeId)>,
    /// `[run][node]` averaged voltage at `t_end`.
    pub voltages: Vec<Vec<f64>>,
    /// `[run][edge]` averaged throughput at `t_end`.
    pub powers: Vec<Vec<f64>>,
}

impl EndpointDistribution {
    pub fn node_values(&self, node: usize) -> Vec<f64> {
        self.voltages.iter().map(|run| run[node]).collect()
    }

    pub fn edge_values(&self, edge: usize) -> Vec<f64> {
        self.powers.iter().map(|run| run[edge]).collect()
    }

    pub fn node_mean(&self, node: usize) -> f64 {
        mean(&self.node_values(node))
    }

    pub fn node_median(&self, node: usize) -> f64 {
        median(&self.node_values(node))
    }
}

pub fn endpoint_distribution(
    traces: &[Trace],
    t_end: f64,
    window: f64,
) -> Result<EndpointDistribution> {
    let first = traces.first().ok_or(Error::EmptySeries)?;
    if !(window > 0.0) {
        return Err(Error::Config(format!("window must be positive, got {window}")));
    }
    let mut voltages = Vec::with_capacity(traces.len());
    let mut powers = Vec::with_capacity(traces.len());
    for trace in traces {
        let idx = trace.sample_index(t_end)?;
        let m = window_samples(window, trace.dt);
        voltages.push(
            trace
                .voltages
                .iter()
                .map(|s| trailing_mean(s, idx, m))
                .collect(),
        );
        powers.push(
            trace
                .edge_powers
                .iter()
                .map(|s| trailing_mean(s, idx, m))
                .collect(),
        );
    }
    Ok(EndpointDistribution {
        t_end,
        window,
        node_kinds: first.node_kinds.clone(),
        edge_ends: first.edge_ends.clone(),
        voltages,
        powers,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AuditReport {
    /// Energy drawn from the sources, J.
    pub supplied: f64,
    /// Change of the energy held in storage capacitors, J.
    pub stored_delta: f64,
    /// Dissipated on switchable paths, J.
    pub dissipated: f64,
    /// Delivered into the sink paths (switch plus load), J.
    pub delivered: f64,
    pub residual: f64,
}

impl AuditReport {
    /// Residual relative to the largest energy flow in the report.
    pub fn relative_residual(&self) -> f64 {
        let scale = self
            .supplied
            .abs()
            .max(self.stored_delta.abs())
            .max(self.dissipated.abs() + self.delivered.abs());
        if scale == 0.0 {
            0.0
        } else {
            self.residual.abs() / scale
        }
    }
}

/// Energy balance of a run. Edge currents are constant over each step, so
/// edge and capacitor energies use the mean of the voltages at both ends of
/// the step.
pub fn energy_audit(trace: &Trace, graph: &NetworkGraph, config: &SimConfig) -> AuditReport {
    let n = trace.len();
    if n < 2 {
        return AuditReport::default();
    }
    let dt = trace.dt;
    let mut report = AuditReport::default();
    for k in 0..n - 1 {
        report.supplied += dt * config.v_src * trace.source_current[k];
        for (e, edge) in graph.edges.iter().enumerate() {
            let (a, b) = (edge.a.0, edge.b.0);
            let drop = 0.5
                * ((trace.voltages[a][k] + trace.voltages[a][k + 1])
                    - (trace.voltages[b][k] + trace.voltages[b][k + 1]));
            let energy = dt * trace.edge_currents[e][k] * drop;
            if edge.to_sink {
                report.delivered += energy;
            } else {
                report.dissipated += energy;
            }
        }
    }
    let caps = graph.storage_capacitances();
    for (id, c) in graph.nodes_of(NodeKind::Storage).zip(caps) {
        let s = &trace.voltages[id.0];
        report.stored_delta += 0.5 * c * (s[n - 1] * s[n - 1] - s[0] * s[0]);
    }
    report.residual =
        report.supplied - report.stored_delta - report.dissipated - report.delivered;
    report
}

/// Largest per-step mismatch between the charge entering the storage layer
/// and the boundary currents, relative to the currents involved.
pub fn max_charge_imbalance(trace: &Trace, graph: &NetworkGraph) -> f64 {
    let caps = graph.storage_capacitances();
    let storages: Vec<NodeId> = graph.nodes_of(NodeKind::Storage).collect();
    let mut worst: f64 = 0.0;
    for k in 0..trace.len().saturating_sub(1) {
        let mut stored = 0.0;
        let mut scale = trace.source_current[k].abs() + trace.sink_current[k].abs();
        for (id, c) in storages.iter().zip(&caps) {
            let s = &trace.voltages[id.0];
            let flow = c * (s[k + 1] - s[k]) / trace.dt;
            stored += flow;
            scale += flow.abs();
        }
        let err = (stored - (trace.source_current[k] - trace.sink_current[k])).abs();
        if scale > 0.0 {
            worst = worst.max(err / scale);
        }
    }
    worst
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_series_is_unchanged() {
        let ma = moving_average(&[2.5; 50], 1.0, 7.0).unwrap();
        assert!(ma.values.iter().all(|&v| v == 2.5));
    }

    #[test]
    fn impulse_spreads_over_window() {
        let (k, m) = (5usize, 4usize);
        let mut x = vec![0.0; 20];
        x[k] = 1.0;
        let ma = moving_average(&x, 0.5, m as f64 * 0.5).unwrap();
        // direct convolution with a length-m box, partial windows at the start
        for i in 0..x.len() {
            let lo = (i + 1).saturating_sub(m);
            let direct: f64 = x[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64;
            assert!((ma.values[i] - direct).abs() < 1e-15);
            let expected = if (k..k + m).contains(&i) { 0.25 } else { 0.0 };
            assert!((ma.values[i] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn sub_sample_window_is_identity() {
        let x = [1.0, 4.0, -2.0, 8.0];
        let ma = moving_average(&x, 1.0, 0.3).unwrap();
        assert_eq!(ma.window_samples, 1);
        assert_eq!(ma.values, x);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(moving_average(&[], 1.0, 1.0), Err(Error::EmptySeries)));
        assert!(moving_average(&[1.0], 1.0, 0.0).is_err());
    }

    #[test]
    fn statistics() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(mean(&[1.0, 2.0, 3.0]), 2.0);
        assert!((variance(&[1.0, 3.0]) - 1.0).abs() < 1e-15);
    }
}
