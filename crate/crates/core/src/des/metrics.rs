use serde::{Deserialize, Serialize};

use super::queue::EnqueueOutcome;
use crate::error::{Error, Result};

/// Event kinds in tie-break order: simultaneous events are processed by
/// `(kind, flow_id, seq)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    FlowStart,
    PacketArrivalAtQueue,
    ServiceComplete,
    DeliveryAtSink,
    AckArrivalAtSource,
    RtoExpiry,
    Sample,
}

/// One processed event together with the queue state right after it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub time: f64,
    pub kind: EventKind,
    pub flow_id: u32,
    /// Data sequence number; for ACK events the cumulative ACK value, for
    /// timer events the timer generation.
    pub seq: u64,
    pub q: u32,
    pub q_hat: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<EnqueueOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rtt_sample: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub entries: Vec<LogEntry>,
    /// Set when the run reached its horizon; `None` marks a truncated log.
    pub finished_at: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub sent: u64,
    pub delivered: u64,
    pub dropped_red: u64,
    pub dropped_tail: u64,
    pub resident: u64,
    pub mean_q: f64,
    pub mean_q_hat: f64,
    pub drop_fraction: f64,
    pub throughput: f64,
    pub mean_rtt: f64,
}

impl SimSummary {
    pub fn conserved(&self) -> bool {
        self.sent == self.delivered + self.dropped_red + self.dropped_tail + self.resident
    }
}

/// Aggregate a complete event log. `mean_q` and `mean_q_hat` are time
/// averages of the piecewise-constant state over `[0, finished_at]`;
/// `resident` counts accepted packets that have not reached the sink.
pub fn collect_metrics(log: &EventLog) -> Result<SimSummary> {
    if log.entries.is_empty() {
        return Ok(SimSummary::default());
    }
    let end = log
        .finished_at
        .ok_or_else(|| Error::TruncatedLog("log has no end-of-run marker".into()))?;
    let mut s = SimSummary::default();
    let mut accepted = 0u64;
    let (mut q_area, mut q_hat_area) = (0.0, 0.0);
    let (mut prev_t, mut prev_q, mut prev_q_hat) = (0.0, 0.0, 0.0);
    let (mut rtt_sum, mut rtt_n) = (0.0, 0u64);
    for e in &log.entries {
        if e.time < prev_t || e.time > end {
            return Err(Error::TruncatedLog(format!(
                "event at t = {} out of order (previous {prev_t}, end {end})",
                e.time
            )));
        }
        q_area += prev_q * (e.time - prev_t);
        q_hat_area += prev_q_hat * (e.time - prev_t);
        prev_t = e.time;
        prev_q = e.q as f64;
        prev_q_hat = e.q_hat;
        match e.kind {
            EventKind::PacketArrivalAtQueue => {
                s.sent += 1;
                match e.outcome {
                    Some(EnqueueOutcome::Accepted) => accepted += 1,
                    Some(EnqueueOutcome::DroppedRed) => s.dropped_red += 1,
                    Some(EnqueueOutcome::DroppedTail) => s.dropped_tail += 1,
                    None => {
                        return Err(Error::TruncatedLog(format!(
                            "arrival at t = {} has no enqueue outcome",
                            e.time
                        )))
                    }
                }
            }
            EventKind::DeliveryAtSink => s.delivered += 1,
            EventKind::AckArrivalAtSource => {
                if let Some(r) = e.rtt_sample {
                    rtt_sum += r;
                    rtt_n += 1;
                }
            }
            _ => {}
        }
    }
    q_area += prev_q * (end - prev_t);
    q_hat_area += prev_q_hat * (end - prev_t);
    s.resident = accepted.checked_sub(s.delivered).ok_or_else(|| {
        Error::TruncatedLog("more deliveries than accepted packets".into())
    })?;
    if end > 0.0 {
        s.mean_q = q_area / end;
        s.mean_q_hat = q_hat_area / end;
        s.throughput = s.delivered as f64 / end;
    }
    if s.sent > 0 {
        s.drop_fraction = (s.dropped_red + s.dropped_tail) as f64 / s.sent as f64;
    }
    if rtt_n > 0 {
        s.mean_rtt = rtt_sum / rtt_n as f64;
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(time: f64, kind: EventKind, q: u32, outcome: Option<EnqueueOutcome>) -> LogEntry {
        LogEntry {
            time,
            kind,
            flow_id: 0,
            seq: 0,
            q,
            q_hat: 0.0,
            outcome,
            rtt_sample: None,
        }
    }

    #[test]
    fn empty_log_is_zero() {
        let s = collect_metrics(&EventLog::default()).unwrap();
        assert_eq!(s, SimSummary::default());
    }

    #[test]
    fn lossless_log() {
        let mut entries = Vec::new();
        for i in 0..10 {
            let t = i as f64;
            entries.push(entry(t, EventKind::PacketArrivalAtQueue, 1, Some(EnqueueOutcome::Accepted)));
            entries.push(entry(t + 0.5, EventKind::ServiceComplete, 0, None));
            entries.push(entry(t + 0.6, EventKind::DeliveryAtSink, 0, None));
        }
        let log = EventLog {
            entries,
            finished_at: Some(10.0),
        };
        let s = collect_metrics(&log).unwrap();
        assert_eq!((s.sent, s.delivered, s.resident), (10, 10, 0));
        assert_eq!(s.drop_fraction, 0.0);
        // queue holds one packet for half of every second
        assert!((s.mean_q - 0.5).abs() < 1e-12);
        assert!(s.conserved());
    }

    #[test]
    fn hand_built_log_with_drops() {
        use EnqueueOutcome::*;
        let outcomes = [Accepted, DroppedRed, Accepted, DroppedTail, DroppedRed, Accepted];
        let mut entries: Vec<LogEntry> = outcomes
            .iter()
            .enumerate()
            .map(|(i, &o)| entry(i as f64 * 0.1, EventKind::PacketArrivalAtQueue, 1, Some(o)))
            .collect();
        entries.push(entry(0.7, EventKind::DeliveryAtSink, 1, None));
        entries.push(entry(0.8, EventKind::DeliveryAtSink, 1, None));
        let log = EventLog {
            entries,
            finished_at: Some(1.0),
        };
        let s = collect_metrics(&log).unwrap();
        assert_eq!(s.sent, 6);
        assert_eq!(s.dropped_red, 2);
        assert_eq!(s.dropped_tail, 1);
        assert_eq!(s.delivered, 2);
        assert_eq!(s.resident, 1);
        assert!((s.drop_fraction - 0.5).abs() < 1e-15);
        assert!(s.conserved());
    }

    #[test]
    fn truncated_log_rejected() {
        let log = EventLog {
            entries: vec![entry(0.0, EventKind::Sample, 0, None)],
            finished_at: None,
        };
        assert!(matches!(collect_metrics(&log), Err(Error::TruncatedLog(_))));
        let log = EventLog {
            entries: vec![
                entry(1.0, EventKind::Sample, 0, None),
                entry(0.5, EventKind::Sample, 0, None),
            ],
            finished_at: Some(2.0),
        };
        assert!(collect_metrics(&log).is_err());
    }
}
