//! Packet-level discrete-event simulation of a dumbbell: `n_flows` TCP Reno
//! senders share one RED-managed bottleneck of `link_capacity` packets/s.
//!
//! Senders inject straight into the bottleneck queue. A packet finishing
//! service reaches the sink `prop_delay` later, and the sink's cumulative
//! ACK returns after another `prop_delay`. The ACK path is loss-free.

mod metrics;
mod queue;

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use metrics::{collect_metrics, EventKind, EventLog, LogEntry, SimSummary};
pub use queue::{EnqueueOutcome, Packet, RedQueue};

use crate::error::{Error, Result};
use crate::red::RedParams;
use crate::rng::{substream, Domain, SimRng};
use crate::series::TimeSeries;
use crate::tcp::{rto_duration, Reaction, RtoPolicy, TcpFlowState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TcpSettings {
    pub initial_window: f64,
    pub initial_ssthresh: f64,
    /// Timer value before the first RTT sample.
    pub initial_rto: f64,
    pub rto: RtoPolicy,
    /// Each flow starts at a uniform time in `[0, start_jitter)`, drawn from
    /// its own random stream.
    pub start_jitter: f64,
}

impl Default for TcpSettings {
    fn default() -> Self {
        Self {
            initial_window: 1.0,
            initial_ssthresh: 64.0,
            initial_rto: 1.0,
            rto: RtoPolicy::default(),
            start_jitter: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesConfig {
    pub n_flows: u32,
    /// Bottleneck service rate, packets/s.
    pub link_capacity: f64,
    /// One-way propagation delay, s.
    pub prop_delay: f64,
    pub buffer_capacity: u32,
    pub red: RedParams,
    pub sim_duration: f64,
    pub seed: u64,
    pub sample_interval: f64,
    pub tcp: TcpSettings,
}

impl DesConfig {
    /// Checks every invariant and returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut problems = Vec::new();
        if self.n_flows == 0 {
            problems.push("n_flows must be >= 1".to_string());
        }
        for (name, v) in [
            ("link_capacity", self.link_capacity),
            ("prop_delay", self.prop_delay),
            ("sim_duration", self.sim_duration),
            ("sample_interval", self.sample_interval),
            ("tcp.initial_rto", self.tcp.initial_rto),
            ("tcp.rto.k", self.tcp.rto.k),
        ] {
            if !(v.is_finite() && v > 0.0) {
                problems.push(format!("{name} must be finite and > 0 (got {v})"));
            }
        }
        if self.buffer_capacity == 0 {
            problems.push("buffer_capacity must be >= 1".to_string());
        }
        if !(self.tcp.start_jitter >= 0.0 && self.tcp.start_jitter.is_finite()) {
            problems.push("tcp.start_jitter must be finite and >= 0".to_string());
        }
        if !(self.tcp.initial_window >= 1.0) {
            problems.push("tcp.initial_window must be >= 1".to_string());
        }
        if let Err(e) = self.red.validate() {
            problems.push(e.to_string());
        }
        if !problems.is_empty() {
            return Err(Error::InvalidParams(problems.join("; ")));
        }
        let mut warnings = Vec::new();
        if (self.buffer_capacity as f64) < self.red.q_max {
            warnings.push(format!(
                "buffer_capacity {} is below q_max {}; tail drops will pre-empt RED",
                self.buffer_capacity, self.red.q_max
            ));
        }
        Ok(warnings)
    }
}

#[derive(Debug, Clone)]
pub struct DesOutput {
    pub series: TimeSeries,
    pub summary: SimSummary,
    pub log: EventLog,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
struct Scheduled {
    time: f64,
    kind: EventKind,
    flow_id: u32,
    seq: u64,
    /// Insertion counter; only breaks ties between otherwise identical keys.
    order: u64,
}

impl Scheduled {
    fn key(&self) -> (f64, EventKind, u32, u64, u64) {
        (self.time, self.kind, self.flow_id, self.seq, self.order)
    }
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // Reversed: BinaryHeap is a max-heap and we pop the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, b) = (self.key(), other.key());
        b.0.total_cmp(&a.0)
            .then(b.1.cmp(&a.1))
            .then(b.2.cmp(&a.2))
            .then(b.3.cmp(&a.3))
            .then(b.4.cmp(&a.4))
    }
}

struct Sender {
    tcp: TcpFlowState,
    /// Latest transmission time of each outstanding segment, indexed from
    /// `tcp.highest_acked`.
    send_times: VecDeque<f64>,
    srtt: Option<f64>,
    timer_generation: u64,
    timer_armed: bool,
}

#[derive(Default)]
struct Receiver {
    next_expected: u64,
    out_of_order: BTreeSet<u64>,
}

impl Receiver {
    fn deliver(&mut self, seq: u64) -> u64 {
        if seq == self.next_expected {
            self.next_expected += 1;
            while self.out_of_order.remove(&self.next_expected) {
                self.next_expected += 1;
            }
        } else if seq > self.next_expected {
            self.out_of_order.insert(seq);
        }
        self.next_expected
    }
}

struct Engine<'a> {
    cfg: &'a DesConfig,
    now: f64,
    heap: BinaryHeap<Scheduled>,
    order: u64,
    queue: RedQueue,
    queue_rng: SimRng,
    senders: Vec<Sender>,
    receivers: Vec<Receiver>,
    in_transit: u64,
    drops_red: u64,
    drops_tail: u64,
    log: EventLog,
    series: TimeSeries,
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a DesConfig) -> Self {
        let mut names = vec!["q".to_string(), "q_hat".to_string(), "p".to_string()];
        names.extend((0..cfg.n_flows).map(|i| format!("cwnd_{i}")));
        names.push("drops_red_cum".into());
        names.push("drops_tail_cum".into());
        let senders = (0..cfg.n_flows)
            .map(|_| Sender {
                tcp: TcpFlowState::new(
                    cfg.tcp.initial_window,
                    cfg.tcp.initial_ssthresh,
                    cfg.tcp.initial_rto,
                ),
                send_times: VecDeque::new(),
                srtt: None,
                timer_generation: 0,
                timer_armed: false,
            })
            .collect();
        Self {
            cfg,
            now: 0.0,
            heap: BinaryHeap::new(),
            order: 0,
            queue: RedQueue::new(cfg.red, cfg.buffer_capacity as usize),
            queue_rng: substream(cfg.seed, Domain::DesQueue, 0),
            senders,
            receivers: (0..cfg.n_flows).map(|_| Receiver::default()).collect(),
            in_transit: 0,
            drops_red: 0,
            drops_tail: 0,
            log: EventLog::default(),
            series: TimeSeries::new(names),
        }
    }

    fn schedule(&mut self, time: f64, kind: EventKind, flow_id: u32, seq: u64) {
        self.order += 1;
        self.heap.push(Scheduled {
            time,
            kind,
            flow_id,
            seq,
            order: self.order,
        });
    }

    fn record(&mut self, ev: &Scheduled, outcome: Option<EnqueueOutcome>, rtt_sample: Option<f64>) {
        self.log.entries.push(LogEntry {
            time: ev.time,
            kind: ev.kind,
            flow_id: ev.flow_id,
            seq: ev.seq,
            q: self.queue.len() as u32,
            q_hat: self.queue.q_hat(),
            outcome,
            rtt_sample,
        });
    }

    fn transmit(&mut self, flow: u32, seq: u64) {
        let now = self.now;
        let s = &mut self.senders[flow as usize];
        let idx = (seq - s.tcp.highest_acked) as usize;
        if idx < s.send_times.len() {
            s.send_times[idx] = now;
        } else {
            s.send_times.push_back(now);
        }
        if !s.timer_armed {
            self.arm_timer(flow);
        }
        self.schedule(now, EventKind::PacketArrivalAtQueue, flow, seq);
    }

    fn arm_timer(&mut self, flow: u32) {
        let s = &mut self.senders[flow as usize];
        s.timer_generation += 1;
        s.timer_armed = true;
        let (at, generation) = (self.now + s.tcp.rto, s.timer_generation);
        self.schedule(at, EventKind::RtoExpiry, flow, generation);
    }

    fn disarm_timer(&mut self, flow: u32) {
        let s = &mut self.senders[flow as usize];
        s.timer_generation += 1;
        s.timer_armed = false;
    }

    fn pump(&mut self, flow: u32) {
        loop {
            let s = &mut self.senders[flow as usize];
            if s.tcp.can_send() == 0 {
                break;
            }
            let (next, seq) = s.tcp.on_send();
            s.tcp = next;
            self.transmit(flow, seq);
        }
    }

    fn sample(&mut self) {
        let mut row = vec![
            self.queue.len() as f64,
            self.queue.q_hat(),
            self.queue.last_drop_probability(),
        ];
        row.extend(self.senders.iter().map(|s| s.tcp.cwnd));
        row.push(self.drops_red as f64);
        row.push(self.drops_tail as f64);
        self.series.push(self.now, &row);
    }

    fn run(mut self) -> Result<(TimeSeries, EventLog, u64)> {
        let cfg = self.cfg;
        self.schedule(0.0, EventKind::Sample, 0, 0);
        for f in 0..cfg.n_flows {
            let mut rng = substream(cfg.seed, Domain::DesFlow, f);
            let start = cfg.tcp.start_jitter * rng.random::<f64>();
            self.schedule(start, EventKind::FlowStart, f, 0);
        }
        while let Some(ev) = self.heap.pop() {
            if ev.time > cfg.sim_duration {
                self.heap.push(ev);
                break;
            }
            debug_assert!(ev.time >= self.now);
            self.now = ev.time;
            match ev.kind {
                EventKind::PacketArrivalAtQueue => {
                    let was_idle = self.queue.is_empty();
                    let packet = Packet {
                        flow_id: ev.flow_id,
                        seq: ev.seq,
                    };
                    let outcome = self.queue.enqueue_arrival(packet, &mut self.queue_rng);
                    match outcome {
                        EnqueueOutcome::Accepted if was_idle => {
                            self.schedule(
                                self.now + 1.0 / cfg.link_capacity,
                                EventKind::ServiceComplete,
                                0,
                                0,
                            );
                        }
                        EnqueueOutcome::Accepted => {}
                        EnqueueOutcome::DroppedRed => self.drops_red += 1,
                        EnqueueOutcome::DroppedTail => self.drops_tail += 1,
                    }
                    self.record(&ev, Some(outcome), None);
                }
                EventKind::ServiceComplete => {
                    let (packet, next) = self
                        .queue
                        .service_complete(self.now, cfg.link_capacity)
                        .ok_or_else(|| Error::Integration {
                            t: self.now,
                            reason: "service completion on an empty queue".into(),
                        })?;
                    if let Some(at) = next {
                        self.schedule(at, EventKind::ServiceComplete, 0, 0);
                    }
                    self.in_transit += 1;
                    self.schedule(
                        self.now + cfg.prop_delay,
                        EventKind::DeliveryAtSink,
                        packet.flow_id,
                        packet.seq,
                    );
                    self.record(&ev, None, None);
                }
                EventKind::DeliveryAtSink => {
                    self.in_transit -= 1;
                    let ack = self.receivers[ev.flow_id as usize].deliver(ev.seq);
                    self.schedule(
                        self.now + cfg.prop_delay,
                        EventKind::AckArrivalAtSource,
                        ev.flow_id,
                        ack,
                    );
                    self.record(&ev, None, None);
                }
                EventKind::AckArrivalAtSource => {
                    let rtt = self.on_ack(ev.flow_id, ev.seq);
                    self.record(&ev, None, rtt);
                }
                EventKind::RtoExpiry => {
                    let s = &self.senders[ev.flow_id as usize];
                    if !s.timer_armed || s.timer_generation != ev.seq {
                        continue;
                    }
                    let (next, reaction) = s.tcp.on_timeout();
                    self.senders[ev.flow_id as usize].tcp = next;
                    self.arm_timer(ev.flow_id);
                    if let Reaction::Retransmit(seq) = reaction {
                        self.transmit(ev.flow_id, seq);
                    }
                    self.pump(ev.flow_id);
                    self.record(&ev, None, None);
                }
                EventKind::FlowStart => {
                    self.pump(ev.flow_id);
                    self.record(&ev, None, None);
                }
                EventKind::Sample => {
                    self.sample();
                    self.schedule(self.now + cfg.sample_interval, EventKind::Sample, 0, 0);
                    self.record(&ev, None, None);
                }
            }
        }
        self.log.finished_at = Some(cfg.sim_duration);
        let resident = self.queue.len() as u64 + self.in_transit;
        Ok((self.series, self.log, resident))
    }

    fn on_ack(&mut self, flow: u32, ack: u64) -> Option<f64> {
        let now = self.now;
        let policy = self.cfg.tcp.rto;
        let s = &mut self.senders[flow as usize];
        if ack > s.tcp.highest_acked {
            let newly = (ack - s.tcp.highest_acked) as usize;
            let sent_at = s.send_times.get(newly - 1).copied();
            s.send_times.drain(..newly.min(s.send_times.len()));
            let (next, _) = s.tcp.on_ack(ack);
            s.tcp = next;
            let sample = sent_at.map(|t0| now - t0);
            if let Some(r) = sample {
                let srtt = match s.srtt {
                    None => r,
                    Some(prev) => 0.875 * prev + 0.125 * r,
                };
                s.srtt = Some(srtt);
                s.tcp.rto = rto_duration(srtt, &policy);
            }
            if s.tcp.in_flight > 0 {
                self.arm_timer(flow);
            } else {
                self.disarm_timer(flow);
            }
            self.pump(flow);
            sample
        } else {
            if ack == s.tcp.highest_acked && s.tcp.in_flight > 0 {
                let (next, reaction) = s.tcp.on_dupack();
                s.tcp = next;
                if let Reaction::Retransmit(seq) = reaction {
                    self.transmit(flow, seq);
                }
            }
            None
        }
    }
}

/// Run the dumbbell to `sim_duration`. Output is bit-identical for
/// identical configurations.
pub fn simulate_dumbbell(config: &DesConfig) -> Result<DesOutput> {
    let warnings = config.validate()?;
    let (series, log, resident) = Engine::new(config).run()?;
    let summary = collect_metrics(&log)?;
    if summary.resident != resident {
        return Err(Error::Integration {
            t: config.sim_duration,
            reason: format!(
                "packet accounting mismatch: log implies {} resident, engine holds {resident}",
                summary.resident
            ),
        });
    }
    Ok(DesOutput {
        series,
        summary,
        log,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn reference(seed: u64) -> DesConfig {
        DesConfig {
            n_flows: 4,
            link_capacity: 100.0,
            prop_delay: 0.05,
            buffer_capacity: 50,
            red: RedParams::for_capacity(5.0, 15.0, 0.1, 100.0).unwrap(),
            sim_duration: 60.0,
            seed,
            sample_interval: 0.1,
            tcp: TcpSettings::default(),
        }
    }

    #[test]
    fn invalid_config_rejected_up_front() {
        let mut c = reference(1);
        c.n_flows = 0;
        c.link_capacity = -1.0;
        let err = simulate_dumbbell(&c).unwrap_err().to_string();
        assert!(err.contains("n_flows") && err.contains("link_capacity"), "{err}");
    }

    #[test]
    fn small_buffer_warns() {
        let mut c = reference(1);
        c.buffer_capacity = 10;
        c.sim_duration = 1.0;
        let out = simulate_dumbbell(&c).unwrap();
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn lossless_single_flow() {
        let c = DesConfig {
            n_flows: 1,
            link_capacity: 1e5,
            prop_delay: 0.05,
            buffer_capacity: 1_000_000,
            red: RedParams::new(1e6, 2e6, 1e-9, 0.002).unwrap(),
            sim_duration: 1.0,
            seed: 5,
            sample_interval: 0.01,
            tcp: TcpSettings {
                initial_ssthresh: 1e6,
                ..TcpSettings::default()
            },
        };
        let out = simulate_dumbbell(&c).unwrap();
        let s = out.summary;
        assert_eq!(s.dropped_red + s.dropped_tail, 0);
        assert_eq!(s.delivered, s.sent - s.resident);
        assert!(s.sent > 500, "{}", s.sent);
    }

    #[test]
    fn deterministic_replay() {
        let mut c = reference(99);
        c.sim_duration = 20.0;
        let a = simulate_dumbbell(&c).unwrap();
        let b = simulate_dumbbell(&c).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.series.to_csv_string(), b.series.to_csv_string());
        c.seed = 100;
        let d = simulate_dumbbell(&c).unwrap();
        assert_ne!(a.log, d.log);
    }

    #[test]
    fn reference_run_invariants() {
        let out = simulate_dumbbell(&reference(7)).unwrap();
        let s = out.summary;
        assert!(s.conserved(), "{s:?}");
        assert!(s.dropped_red > 0);
        let mut last = 0.0;
        for e in &out.log.entries {
            assert!(e.time >= last);
            assert!(e.q <= 50);
            last = e.time;
        }
        // header contract
        let header = out.series.to_csv_string().lines().next().unwrap().to_string();
        assert_eq!(header, "t,q,q_hat,p,cwnd_0,cwnd_1,cwnd_2,cwnd_3,drops_red_cum,drops_tail_cum");
    }

    #[test]
    fn q_hat_matches_independent_replay() {
        let mut c = reference(3);
        c.sim_duration = 30.0;
        let out = simulate_dumbbell(&c).unwrap();
        let mut q_hat = 0.0f64;
        for e in out
            .log
            .entries
            .iter()
            .filter(|e| e.kind == EventKind::PacketArrivalAtQueue)
        {
            let accepted = e.outcome == Some(EnqueueOutcome::Accepted);
            let q_before = e.q as f64 - if accepted { 1.0 } else { 0.0 };
            q_hat = (1.0 - c.red.w_q) * q_hat + c.red.w_q * q_before;
            assert!((q_hat - e.q_hat).abs() <= 1e-9 * q_hat.max(1.0));
        }
    }

    #[test]
    fn no_red_drops_when_thresholds_unreachable() {
        let mut c = reference(4);
        c.red = RedParams::new(1e9, 2e9, 1e-9, c.red.w_q).unwrap();
        c.buffer_capacity = 1_000_000;
        c.sim_duration = 10.0;
        let out = simulate_dumbbell(&c).unwrap();
        assert_eq!(out.summary.dropped_red, 0);
        assert_eq!(out.summary.dropped_tail, 0);
    }

    #[test]
    fn service_timing() {
        // Saturated link: deliveries are spaced exactly 1/C apart.
        let out = simulate_dumbbell(&reference(8)).unwrap();
        let times: Vec<f64> = out
            .log
            .entries
            .iter()
            .filter(|e| e.kind == EventKind::ServiceComplete)
            .map(|e| e.time)
            .collect();
        let min_gap = times
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min);
        assert!((min_gap - 0.01).abs() < 1e-9, "{min_gap}");
    }

    #[test]
    fn first_packet_delay_composition() {
        let mut c = reference(2);
        c.n_flows = 1;
        c.sim_duration = 0.5;
        c.tcp.start_jitter = 0.0;
        let out = simulate_dumbbell(&c).unwrap();
        let first = |k: EventKind| out.log.entries.iter().find(|e| e.kind == k).unwrap().time;
        assert!((first(EventKind::DeliveryAtSink) - (0.01 + 0.05)).abs() < 1e-12);
        assert!((first(EventKind::AckArrivalAtSource) - (0.01 + 0.1)).abs() < 1e-12);
    }
}
