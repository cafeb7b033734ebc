//! Per-node router automaton.
//!
//! Each router runs the same loop: `Initialize` (dwell for `delta_t_u`), a
//! termination pass over its ports, `Evaluate`, then either a storing or a
//! forwarding pass, and back to `Initialize`. Transmissions are negotiated
//! with four messages:
//!
//! ```text
//! bottom-up:  receiver --Query-->  sender
//!             receiver <--Acc---   sender
//!             receiver --Start-->  sender   (sender starts the packet)
//!             receiver <--End---   sender   (after total_bits bit times)
//! top-down:   the sender opens with an unsolicited Acc
//! ```
//!
//! A router sees only its own state, its inbox and the voltages of adjacent
//! nodes ([`LocalView`]).

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeId, NetworkGraph, NodeId, NodeKind};

/// Simulation time in bit times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Tick(pub u64);

impl Tick {
    pub fn seconds(self, bit_time: f64) -> f64 {
        self.0 as f64 * bit_time
    }

    fn since(self, earlier: Tick) -> u64 {
        self.0.saturating_sub(earlier.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ControlMethod {
    #[serde(rename = "bottom-up", alias = "bottomup", alias = "BottomUp")]
    BottomUp,
    #[serde(rename = "top-down", alias = "topdown", alias = "TopDown")]
    TopDown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MessageKind {
    Query,
    Acc,
    Start,
    End,
}

impl MessageKind {
    pub fn name(self) -> &'static str {
        match self {
            MessageKind::Query => "query",
            MessageKind::Acc => "acc",
            MessageKind::Start => "start",
            MessageKind::End => "end",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "query" => Some(Self::Query),
            "acc" => Some(Self::Acc),
            "start" => Some(Self::Start),
            "end" => Some(Self::End),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Message {
    pub kind: MessageKind,
    pub from: NodeId,
    pub to: NodeId,
    pub sent: Tick,
}

impl Message {
    pub fn sent_at(&self, bit_time: f64) -> f64 {
        self.sent.seconds(bit_time)
    }
}

/// Timing parameters shared by every router.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RouterTiming {
    pub bit_time: f64,
    pub total_bits: u32,
    pub tag_bits: u32,
    /// Minimum time spent in a mode before leaving it.
    pub delta_t_u: f64,
    pub latency_ticks: u64,
    /// Apply the `delta_t_u` dwell to every mode transition; when false only
    /// `Initialize` waits.
    pub gate_all_modes: bool,
}

impl Default for RouterTiming {
    fn default() -> Self {
        Self {
            bit_time: 3.125e-6,
            total_bits: 100,
            tag_bits: 10,
            delta_t_u: 10e-6,
            latency_ticks: 1,
            gate_all_modes: true,
        }
    }
}

impl RouterTiming {
    pub fn packet_duration(&self) -> f64 {
        self.total_bits as f64 * self.bit_time
    }

    /// Query/Acc messages older than one full automaton cycle are dropped.
    pub fn stale_age(&self) -> f64 {
        3.0 * self.delta_t_u + self.packet_duration()
    }

    fn is_stale(&self, msg: &Message, now: Tick) -> bool {
        now.since(msg.sent) as f64 * self.bit_time > self.stale_age()
    }

    /// An offered Acc is abandoned once any Start it could still provoke has
    /// certainly arrived.
    fn offer_expired(&self, sent: Tick, now: Tick) -> bool {
        now.since(sent) as f64 * self.bit_time
            > self.stale_age() + (2 * self.latency_ticks) as f64 * self.bit_time
    }

    fn dwelled(&self, entry: Tick, now: Tick) -> bool {
        now.since(entry) as f64 * self.bit_time >= self.delta_t_u
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketTransmission {
    pub sender: NodeId,
    pub receiver: NodeId,
    pub edge: EdgeId,
    pub start: Tick,
    pub total_bits: u32,
    pub tag_bits: u32,
}

impl PacketTransmission {
    pub fn end(&self) -> Tick {
        Tick(self.start.0 + self.total_bits as u64)
    }

    /// Bit index being sent during tick `now`, if the packet is on the line.
    pub fn bit_at(&self, now: Tick) -> Option<u32> {
        (now >= self.start && now < self.end()).then(|| (now.0 - self.start.0) as u32)
    }

    pub fn in_payload(&self, now: Tick) -> bool {
        self.bit_at(now).is_some_and(|b| b >= self.tag_bits)
    }

    pub fn start_time(&self, bit_time: f64) -> f64 {
        self.start.seconds(bit_time)
    }

    pub fn duration(&self, bit_time: f64) -> f64 {
        self.total_bits as f64 * bit_time
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RouterMode {
    Initialize,
    TerminationCheck { port: usize },
    Evaluate,
    StoringLoop { port: usize },
    ForwardingLoop { port: usize, target: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PortStatus {
    Idle,
    /// Query sent this cycle.
    AwaitingAcc,
    /// Acc sent at the given tick; waiting for the peer's Start.
    AwaitingStart { acc_sent: Tick },
    Sending(PacketTransmission),
    Receiving(PacketTransmission),
}

impl PortStatus {
    fn is_free(&self) -> bool {
        matches!(self, PortStatus::Idle | PortStatus::AwaitingAcc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Port {
    pub edge: EdgeId,
    pub neighbor: NodeId,
    /// Conductance of the path when routed.
    pub conductance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwitchAction {
    Route,
    Unroute,
}

/// Closes or opens this node's half of the switch pair on an edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SwitchCommand {
    pub edge: EdgeId,
    pub node: NodeId,
    pub action: SwitchAction,
}

/// Everything a router may observe about the network: its own voltage and
/// the voltages at the far end of each port.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalView {
    pub own: f64,
    pub neighbors: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepOutput {
    pub outbox: Vec<Message>,
    pub switch_commands: Vec<SwitchCommand>,
    /// Query/Acc messages dropped as stale.
    pub dropped: Vec<Message>,
    /// Messages discarded because they were illegal for the port status.
    pub violations: Vec<Message>,
    pub started: Vec<PacketTransmission>,
    pub finished: Vec<PacketTransmission>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    /// `C^-1 w (v_target - v_own)`; non-negative means store, negative
    /// means forward.
    pub g: f64,
    pub target: NodeId,
}

impl Evaluation {
    pub fn wants_to_store(&self) -> bool {
        self.g >= 0.0
    }
}

/// Picks the neighbor with the largest `w |v_j - v_own|` (ties to the
/// smallest id) and returns the signed drive toward it.
///
/// `neighbors` holds `(id, voltage, nominal conductance)`.
pub fn evaluate(
    own_voltage: f64,
    neighbors: &[(NodeId, f64, f64)],
    capacitance: f64,
) -> Result<Evaluation> {
    let mut best: Option<(NodeId, f64, f64)> = None;
    for &(id, v, w) in neighbors {
        let score = w * (v - own_voltage).abs();
        best = match best {
            Some((bid, bscore, bdrive))
                if bscore > score || (bscore == score && bid < id) =>
            {
                Some((bid, bscore, bdrive))
            }
            _ => Some((id, score, w * (v - own_voltage))),
        };
    }
    let (target, _, drive) = best.ok_or(Error::NoNeighbors)?;
    Ok(Evaluation {
        g: drive / capacitance,
        target,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouterState {
    pub id: NodeId,
    pub method: ControlMethod,
    /// Capacitance used by the evaluation function. Sources use the nominal
    /// storage capacitance; only the sign of `g` matters for them.
    pub capacitance: f64,
    pub mode: RouterMode,
    pub mode_entry: Tick,
    pub ports: Vec<Port>,
    pub status: Vec<PortStatus>,
    pub inbox: VecDeque<Message>,
    pub violation_count: u64,
}

impl RouterState {
    pub fn new(id: NodeId, method: ControlMethod, capacitance: f64, ports: Vec<Port>) -> Self {
        let status = vec![PortStatus::Idle; ports.len()];
        Self {
            id,
            method,
            capacitance,
            mode: RouterMode::Initialize,
            mode_entry: Tick(0),
            ports,
            status,
            inbox: VecDeque::new(),
            violation_count: 0,
        }
    }

    /// Router for a source or storage node of `graph`, ports ordered by
    /// neighbor id.
    pub fn for_node(
        graph: &NetworkGraph,
        id: NodeId,
        method: ControlMethod,
        nominal_capacitance: f64,
    ) -> Self {
        assert_ne!(graph.kind(id), NodeKind::Sink, "sinks carry no router");
        let capacitance = match graph.nodes[id.0].capacitance {
            crate::graph::Capacitance::Farads(c) => c,
            crate::graph::Capacitance::Clamped => nominal_capacitance,
        };
        let ports = graph
            .ports(id)
            .into_iter()
            .map(|edge| {
                let e = &graph.edges[edge.0];
                Port {
                    edge,
                    neighbor: e.other(id),
                    conductance: e.nominal_conductance(),
                }
            })
            .collect();
        Self::new(id, method, capacitance, ports)
    }

    pub fn deliver(&mut self, msg: Message) {
        self.inbox.push_back(msg);
    }

    pub fn port_of(&self, node: NodeId) -> Option<usize> {
        self.ports.iter().position(|p| p.neighbor == node)
    }

    /// The transmission this node is currently sending on `port`, if any.
    pub fn sending_on(&self, port: usize) -> Option<&PacketTransmission> {
        match &self.status[port] {
            PortStatus::Sending(tx) => Some(tx),
            _ => None,
        }
    }

    fn inbound_active(&self) -> bool {
        self.status
            .iter()
            .any(|s| matches!(s, PortStatus::Receiving(_)))
    }

    fn outbound_active(&self) -> bool {
        self.status
            .iter()
            .any(|s| matches!(s, PortStatus::AwaitingStart { .. } | PortStatus::Sending(_)))
    }

    fn enter(&mut self, mode: RouterMode, now: Tick) {
        if mode == RouterMode::Initialize {
            for s in self.status.iter_mut() {
                if *s == PortStatus::AwaitingAcc {
                    *s = PortStatus::Idle;
                }
            }
        }
        self.mode = mode;
        self.mode_entry = now;
    }

    fn may_leave(&self, timing: &RouterTiming, now: Tick) -> bool {
        !timing.gate_all_modes || timing.dwelled(self.mode_entry, now)
    }

    /// Removes and returns the oldest message of `kind` from `port`'s peer.
    fn take(&mut self, port: usize, kind: MessageKind) -> Option<Message> {
        let peer = self.ports[port].neighbor;
        let idx = self
            .inbox
            .iter()
            .position(|m| m.kind == kind && m.from == peer)?;
        self.inbox.remove(idx)
    }

    fn send(&self, out: &mut StepOutput, kind: MessageKind, port: usize, now: Tick) {
        out.outbox.push(Message {
            kind,
            from: self.id,
            to: self.ports[port].neighbor,
            sent: now,
        });
    }

    fn switch(&self, out: &mut StepOutput, port: usize, action: SwitchAction) {
        out.switch_commands.push(SwitchCommand {
            edge: self.ports[port].edge,
            node: self.id,
            action,
        });
    }

    /// Advances the automaton by one tick.
    pub fn step(&mut self, view: &LocalView, now: Tick, timing: &RouterTiming) -> StepOutput {
        debug_assert_eq!(view.neighbors.len(), self.ports.len());
        let mut out = StepOutput::default();
        self.screen_inbox(now, timing, &mut out);
        self.finish_packets(now, &mut out);
        self.serve_starts(now, timing, &mut out);
        for s in self.status.iter_mut() {
            if let PortStatus::AwaitingStart { acc_sent } = *s {
                if timing.offer_expired(acc_sent, now) {
                    *s = PortStatus::Idle;
                }
            }
        }

        let n = self.ports.len();
        match self.mode {
            RouterMode::Initialize => {
                if timing.dwelled(self.mode_entry, now) {
                    if n == 0 {
                        self.enter(RouterMode::Initialize, now);
                    } else {
                        self.enter(RouterMode::TerminationCheck { port: 0 }, now);
                    }
                }
            }
            RouterMode::TerminationCheck { port } => {
                while let Some(end) = self.take(port, MessageKind::End) {
                    if let PortStatus::Receiving(_) = self.status[port] {
                        self.status[port] = PortStatus::Idle;
                        self.switch(&mut out, port, SwitchAction::Unroute);
                    } else {
                        self.violation(end, &mut out);
                    }
                }
                if port + 1 < n {
                    self.mode = RouterMode::TerminationCheck { port: port + 1 };
                } else if self.may_leave(timing, now) {
                    self.enter(RouterMode::Evaluate, now);
                }
            }
            RouterMode::Evaluate => {
                if self.may_leave(timing, now) {
                    self.evaluate_and_branch(view, now, &mut out);
                }
            }
            RouterMode::StoringLoop { port } => {
                if !self.inbound_active() && self.status[port].is_free() {
                    if let Some(acc) = self.take(port, MessageKind::Acc) {
                        let tx = PacketTransmission {
                            sender: acc.from,
                            receiver: self.id,
                            edge: self.ports[port].edge,
                            start: Tick(now.0 + timing.latency_ticks),
                            total_bits: timing.total_bits,
                            tag_bits: timing.tag_bits,
                        };
                        self.send(&mut out, MessageKind::Start, port, now);
                        self.switch(&mut out, port, SwitchAction::Route);
                        self.status[port] = PortStatus::Receiving(tx);
                    }
                }
                self.advance_loop(port, n, None, timing, now);
            }
            RouterMode::ForwardingLoop { port, target } => {
                if !self.outbound_active() && self.status[port].is_free() {
                    // packets only flow downhill
                    let downhill = view.neighbors[port] < view.own;
                    let offer = match self.method {
                        // a request from an uphill peer stays queued until it
                        // can be served or goes stale
                        ControlMethod::BottomUp if downhill => {
                            let requested = self.take(port, MessageKind::Query).is_some();
                            // one answer covers every pending request from this peer
                            while self.take(port, MessageKind::Query).is_some() {}
                            requested
                        }
                        ControlMethod::BottomUp => false,
                        // queries are not answered; they age out of the inbox
                        ControlMethod::TopDown => port == target && downhill,
                    };
                    if offer {
                        self.send(&mut out, MessageKind::Acc, port, now);
                        self.status[port] = PortStatus::AwaitingStart { acc_sent: now };
                    }
                }
                self.advance_loop(port, n, Some(target), timing, now);
            }
        }
        out
    }

    fn advance_loop(
        &mut self,
        port: usize,
        n: usize,
        target: Option<usize>,
        timing: &RouterTiming,
        now: Tick,
    ) {
        if port + 1 < n {
            self.mode = match target {
                Some(target) => RouterMode::ForwardingLoop {
                    port: port + 1,
                    target,
                },
                None => RouterMode::StoringLoop { port: port + 1 },
            };
        } else if self.may_leave(timing, now) {
            self.enter(RouterMode::Initialize, now);
        }
    }

    fn evaluate_and_branch(&mut self, view: &LocalView, now: Tick, out: &mut StepOutput) {
        // ports engaged in a transmission are skipped
        let candidates: Vec<(NodeId, f64, f64)> = self
            .ports
            .iter()
            .zip(&self.status)
            .zip(&view.neighbors)
            .filter(|((_, s), _)| s.is_free())
            .map(|((p, _), &v)| (p.neighbor, v, p.conductance))
            .collect();
        let Ok(eval) = evaluate(view.own, &candidates, self.capacitance) else {
            self.enter(RouterMode::Initialize, now);
            return;
        };
        if eval.wants_to_store() {
            if self.method == ControlMethod::BottomUp && !self.inbound_active() {
                for port in 0..self.ports.len() {
                    if self.status[port].is_free() {
                        self.send(out, MessageKind::Query, port, now);
                        self.status[port] = PortStatus::AwaitingAcc;
                    }
                }
            }
            self.enter(RouterMode::StoringLoop { port: 0 }, now);
        } else {
            let target = self
                .port_of(eval.target)
                .expect("evaluation target is a port");
            self.enter(RouterMode::ForwardingLoop { port: 0, target }, now);
        }
    }

    fn violation(&mut self, msg: Message, out: &mut StepOutput) {
        self.violation_count += 1;
        out.violations.push(msg);
    }

    /// Drops stale offers and messages from non-adjacent senders.
    fn screen_inbox(&mut self, now: Tick, timing: &RouterTiming, out: &mut StepOutput) {
        let mut kept = VecDeque::with_capacity(self.inbox.len());
        while let Some(msg) = self.inbox.pop_front() {
            if msg.to != self.id || self.port_of(msg.from).is_none() {
                self.violation(msg, out);
            } else if matches!(msg.kind, MessageKind::Query | MessageKind::Acc)
                && timing.is_stale(&msg, now)
            {
                out.dropped.push(msg);
            } else {
                kept.push_back(msg);
            }
        }
        self.inbox = kept;
    }

    fn finish_packets(&mut self, now: Tick, out: &mut StepOutput) {
        for port in 0..self.ports.len() {
            if let PortStatus::Sending(tx) = self.status[port] {
                if now >= tx.end() {
                    self.send(out, MessageKind::End, port, now);
                    self.switch(out, port, SwitchAction::Unroute);
                    self.status[port] = PortStatus::Idle;
                    out.finished.push(tx);
                }
            }
        }
    }

    fn serve_starts(&mut self, now: Tick, timing: &RouterTiming, out: &mut StepOutput) {
        let mut rest = VecDeque::with_capacity(self.inbox.len());
        while let Some(msg) = self.inbox.pop_front() {
            if msg.kind != MessageKind::Start {
                rest.push_back(msg);
                continue;
            }
            let port = self.port_of(msg.from).expect("sender screened as adjacent");
            if let PortStatus::AwaitingStart { .. } = self.status[port] {
                let tx = PacketTransmission {
                    sender: self.id,
                    receiver: msg.from,
                    edge: self.ports[port].edge,
                    start: now,
                    total_bits: timing.total_bits,
                    tag_bits: timing.tag_bits,
                };
                self.status[port] = PortStatus::Sending(tx);
                self.switch(out, port, SwitchAction::Route);
                out.started.push(tx);
            } else {
                self.violation(msg, out);
            }
        }
        self.inbox = rest;
    }
}
