//! Columnar trace files.
//!
//! A trace file is comma-separated text preceded by `#` header lines:
//!
//! ```text
//! # ppn-trace 1
//! # config_hash <hex>
//! # run_index 0
//! # dt 0.000003125
//! # protocol_violations 0
//! # nodes source storage storage storage sink
//! # edges 0-1 1-2 2-3 3-4
//! # units time:s v_*:V p_*:W i_*:A s_*:routed(0/1) i_in:A i_out:A
//! time,v_u0,...,p_u0-u1,i_u0-u1,s_u0-u1,...,i_in,i_out
//! ```
//!
//! Floats use Rust's shortest round-trip formatting, so reading a file back
//! reproduces every sample bit for bit. Message logs and transmission lists
//! go to separate files.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::engine::{Trace, TransmissionRecord};
use crate::error::{Error, Result};
use crate::graph::{NodeId, NodeKind};
use crate::router::{Message, Tick};

pub const FORMAT_VERSION: u32 = 1;

fn kind_name(kind: NodeKind) -> &'static str {
    kind.name()
}

fn parse_kind(s: &str) -> Option<NodeKind> {
    match s {
        "source" => Some(NodeKind::Source),
        "storage" => Some(NodeKind::Storage),
        "sink" => Some(NodeKind::Sink),
        _ => None,
    }
}

pub fn column_names(trace: &Trace) -> Vec<String> {
    let mut cols = vec!["time".to_string()];
    cols.extend((0..trace.node_kinds.len()).map(|i| format!("v_u{i}")));
    for (a, b) in &trace.edge_ends {
        cols.push(format!("p_u{}-u{}", a.0, b.0));
        cols.push(format!("i_u{}-u{}", a.0, b.0));
        cols.push(format!("s_u{}-u{}", a.0, b.0));
    }
    cols.push("i_in".to_string());
    cols.push("i_out".to_string());
    cols
}

pub fn write_trace<W: Write>(trace: &Trace, out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "# ppn-trace {FORMAT_VERSION}")?;
    writeln!(w, "# config_hash {}", trace.config_hash)?;
    writeln!(w, "# run_index {}", trace.run_index)?;
    writeln!(w, "# dt {}", trace.dt)?;
    writeln!(w, "# protocol_violations {}", trace.protocol_violations)?;
    let kinds: Vec<&str> = trace.node_kinds.iter().map(|k| kind_name(*k)).collect();
    writeln!(w, "# nodes {}", kinds.join(" "))?;
    let edges: Vec<String> = trace
        .edge_ends
        .iter()
        .map(|(a, b)| format!("{}-{}", a.0, b.0))
        .collect();
    writeln!(w, "# edges {}", edges.join(" "))?;
    writeln!(
        w,
        "# units time:s v_*:V p_*:W i_*:A s_*:routed(0/1) i_in:A i_out:A"
    )?;
    writeln!(w, "{}", column_names(trace).join(","))?;
    let mut line = String::new();
    for k in 0..trace.len() {
        line.clear();
        write!(line, "{}", trace.times[k]).unwrap();
        for series in &trace.voltages {
            write!(line, ",{}", series[k]).unwrap();
        }
        for e in 0..trace.edge_ends.len() {
            write!(
                line,
                ",{},{},{}",
                trace.edge_powers[e][k],
                trace.edge_currents[e][k],
                u8::from(trace.switch_states[e][k])
            )
            .unwrap();
        }
        write!(line, ",{},{}", trace.source_current[k], trace.sink_current[k]).unwrap();
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_file(trace: &Trace, path: &Path) -> Result<()> {
    write_trace(trace, File::create(path)?)
}

/// Reads a trace written by [`write_trace`]. Message logs and transmission
/// lists are not part of the file and come back empty.
pub fn read_trace<R: BufRead>(input: R, path: &Path) -> Result<Trace> {
    let bad = |reason: String| Error::Trace {
        path: path.to_path_buf(),
        reason,
    };
    let mut trace = Trace {
        run_index: 0,
        config_hash: String::new(),
        dt: 0.0,
        node_kinds: Vec::new(),
        edge_ends: Vec::new(),
        times: Vec::new(),
        voltages: Vec::new(),
        edge_powers: Vec::new(),
        edge_currents: Vec::new(),
        switch_states: Vec::new(),
        source_current: Vec::new(),
        sink_current: Vec::new(),
        messages: Vec::new(),
        dropped: Vec::new(),
        violations: Vec::new(),
        protocol_violations: 0,
        transmissions: Vec::new(),
        switch_events: Vec::new(),
        warnings: Vec::new(),
    };
    let mut lines = input.lines();
    let mut version = None;
    let mut columns: Option<Vec<String>> = None;
    for line in lines.by_ref() {
        let line = line?;
        let Some(header) = line.strip_prefix("# ") else {
            columns = Some(line.split(',').map(str::to_string).collect());
            break;
        };
        let (key, value) = header.split_once(' ').unwrap_or((header, ""));
        let num_err = |e: &dyn std::fmt::Display| bad(format!("header {key}: {e}"));
        match key {
            "ppn-trace" => version = Some(value.parse::<u32>().map_err(|e| num_err(&e))?),
            "config_hash" => trace.config_hash = value.to_string(),
            "run_index" => trace.run_index = value.parse().map_err(|e| num_err(&e))?,
            "dt" => trace.dt = value.parse().map_err(|e| num_err(&e))?,
            "protocol_violations" => {
                trace.protocol_violations = value.parse().map_err(|e| num_err(&e))?
            }
            "nodes" => {
                trace.node_kinds = value
                    .split_whitespace()
                    .map(|s| parse_kind(s).ok_or_else(|| bad(format!("unknown node kind '{s}'"))))
                    .collect::<Result<_>>()?
            }
            "edges" => {
                trace.edge_ends = value
                    .split_whitespace()
                    .map(|s| {
                        let (a, b) = s
                            .split_once('-')
                            .ok_or_else(|| bad(format!("bad edge '{s}'")))?;
                        let a = a.parse().map_err(|e| num_err(&e))?;
                        let b = b.parse().map_err(|e| num_err(&e))?;
                        Ok((NodeId(a), NodeId(b)))
                    })
                    .collect::<Result<_>>()?
            }
            _ => {}
        }
    }
    match version {
        Some(FORMAT_VERSION) => {}
        Some(v) => return Err(bad(format!("unsupported format version {v}"))),
        None => return Err(bad("missing format header".into())),
    }
    let columns = columns.ok_or_else(|| bad("missing column header".into()))?;
    if columns != column_names(&trace) {
        return Err(bad("column header does not match the node and edge lists".into()));
    }
    let (n, m) = (trace.node_kinds.len(), trace.edge_ends.len());
    trace.voltages = vec![Vec::new(); n];
    trace.edge_powers = vec![Vec::new(); m];
    trace.edge_currents = vec![Vec::new(); m];
    trace.switch_states = vec![Vec::new(); m];
    for (row, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            return Err(bad(format!(
                "row {row}: {} fields, expected {}",
                fields.len(),
                columns.len()
            )));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .parse()
                .map_err(|_| bad(format!("row {row}, column {}: '{}'", columns[i], fields[i])))
        };
        trace.times.push(num(0)?);
        for i in 0..n {
            trace.voltages[i].push(num(1 + i)?);
        }
        for e in 0..m {
            let base = 1 + n + 3 * e;
            trace.edge_powers[e].push(num(base)?);
            trace.edge_currents[e].push(num(base + 1)?);
            trace.switch_states[e].push(num(base + 2)? != 0.0);
        }
        trace.source_current.push(num(1 + n + 3 * m)?);
        trace.sink_current.push(num(2 + n + 3 * m)?);
    }
    Ok(trace)
}

pub fn read_trace_file(path: &Path) -> Result<Trace> {
    read_trace(BufReader::new(File::open(path)?), path)
}

/// Message log: every sent message, then stale drops and protocol
/// violations, one per line.
pub fn write_messages<W: Write>(trace: &Trace, out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "# config_hash {}", trace.config_hash)?;
    writeln!(w, "event,tick,kind,from,to")?;
    for (event, list) in [
        ("sent", &trace.messages),
        ("dropped", &trace.dropped),
        ("violation", &trace.violations),
    ] {
        for m in list {
            writeln!(w, "{event},{},{},{},{}", m.sent.0, m.kind.name(), m.from.0, m.to.0)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_messages<R: BufRead>(input: R, path: &Path) -> Result<Vec<(String, Message)>> {
    let bad = |reason: String| Error::Trace {
        path: path.to_path_buf(),
        reason,
    };
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.starts_with('#') || line.starts_with("event,") || line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad(format!("line {}: expected 5 fields", i + 1)));
        }
        let int = |s: &str| -> Result<u64> {
            s.parse()
                .map_err(|_| bad(format!("line {}: bad integer '{s}'", i + 1)))
        };
        let kind = crate::router::MessageKind::parse(f[2])
            .ok_or_else(|| bad(format!("line {}: unknown message '{}'", i + 1, f[2])))?;
        out.push((
            f[0].to_string(),
            Message {
                kind,
                from: NodeId(int(f[3])? as usize),
                to: NodeId(int(f[4])? as usize),
                sent: Tick(int(f[1])?),
            },
        ));
    }
    Ok(out)
}

pub fn write_transmissions<W: Write>(records: &[TransmissionRecord], out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "sender,receiver,edge,start_tick,end_tick,truncated")?;
    for r in records {
        let end = r.end.map(|t| t.0.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.tx.sender.0,
            r.tx.receiver.0,
            r.tx.edge.0,
            r.tx.start.0,
            end,
            u8::from(r.truncated())
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run_simulation, SimConfig};
    use crate::graph::TopologySpec;
    use crate::router::ControlMethod;

    fn short_trace() -> Trace {
        let mut c = SimConfig::uniform(TopologySpec::chain5(), ControlMethod::BottomUp);
        c.end_time = 2e-3;
        c.seed = 7;
        run_simulation(&c, 3).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let trace = short_trace();
        let mut buf = Vec::new();
        write_trace(&trace, &mut buf).unwrap();
        let back = read_trace(&buf[..], Path::new("mem")).unwrap();
        assert_eq!(back.config_hash, trace.config_hash);
        assert_eq!(back.run_index, 3);
        assert_eq!(back.dt, trace.dt);
        assert_eq!(back.node_kinds, trace.node_kinds);
        assert_eq!(back.edge_ends, trace.edge_ends);
        assert_eq!(back.times, trace.times);
        assert_eq!(back.voltages, trace.voltages);
        assert_eq!(back.edge_powers, trace.edge_powers);
        assert_eq!(back.edge_currents, trace.edge_currents);
        assert_eq!(back.switch_states, trace.switch_states);
        assert_eq!(back.source_current, trace.source_current);
        assert_eq!(back.sink_current, trace.sink_current);
    }

    #[test]
    fn message_log_round_trip() {
        let trace = short_trace();
        let mut buf = Vec::new();
        write_messages(&trace, &mut buf).unwrap();
        let back = read_messages(&buf[..], Path::new("mem")).unwrap();
        let sent: Vec<Message> = back
            .iter()
            .filter(|(e, _)| e == "sent")
            .map(|(_, m)| *m)
            .collect();
        assert_eq!(sent, trace.messages);
        assert_eq!(back.len(), trace.messages.len() + trace.dropped.len());
    }

    #[test]
    fn rejects_damaged_files() {
        let trace = short_trace();
        let mut buf = Vec::new();
        write_trace(&trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();

        let truncated_row = text.trim_end().rsplit_once(',').unwrap().0.to_string();
        let err = read_trace(truncated_row.as_bytes(), Path::new("x.csv")).unwrap_err();
        assert!(err.to_string().contains("x.csv"), "{err}");

        let no_header = text.replacen("# ppn-trace 1\n", "", 1);
        assert!(read_trace(no_header.as_bytes(), Path::new("x")).is_err());

        let garbage = text.replacen("\n0,", "\nzero,", 1);
        assert!(read_trace(garbage.as_bytes(), Path::new("x")).is_err());
    }

    #[test]
    fn header_only_trace() {
        let mut trace = short_trace();
        for s in trace.voltages.iter_mut() {
            s.clear();
        }
        for e in 0..trace.edge_ends.len() {
            trace.edge_powers[e].clear();
            trace.edge_currents[e].clear();
            trace.switch_states[e].clear();
        }
        trace.times.clear();
        trace.source_current.clear();
        trace.sink_current.clear();
        let mut buf = Vec::new();
        write_trace(&trace, &mut buf).unwrap();
        let back = read_trace(&buf[..], Path::new("mem")).unwrap();
        assert!(back.is_empty());
    }
}
