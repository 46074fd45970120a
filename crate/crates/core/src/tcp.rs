//! TCP Reno sender congestion control as pure state transitions.
//!
//! The window is kept as a real number and floored only when deciding how
//! many segments may be injected. Fast recovery has no window inflation:
//! the halved window is held until an ACK covering the retransmission
//! arrives. A timeout always wins over fast recovery.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TcpPhase {
    SlowStart,
    CongestionAvoidance,
    /// Entered by fast retransmit on the third duplicate ACK.
    FastRecovery,
}

impl TcpPhase {
    pub fn as_str(self) -> &'static str {
        match self {
            TcpPhase::SlowStart => "slow_start",
            TcpPhase::CongestionAvoidance => "congestion_avoidance",
            TcpPhase::FastRecovery => "fast_recovery",
        }
    }

    /// Whether `self -> to` is an edge of the Reno phase graph. Timeouts are
    /// allowed from every phase, including a self-loop on slow start.
    pub fn may_transition_to(self, to: TcpPhase) -> bool {
        use TcpPhase::*;
        matches!(
            (self, to),
            (SlowStart, CongestionAvoidance)
                | (SlowStart, FastRecovery)
                | (CongestionAvoidance, FastRecovery)
                | (FastRecovery, CongestionAvoidance)
                | (_, SlowStart)
        )
    }
}

impl std::fmt::Display for TcpPhase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const MIN_CWND: f64 = 1.0;
pub const MIN_SSTHRESH: f64 = 2.0;
pub const DUPACK_THRESHOLD: u32 = 3;

/// Retransmission timer policy: `max(rto_min, k * srtt)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RtoPolicy {
    pub k: f64,
    pub rto_min: f64,
}

impl Default for RtoPolicy {
    fn default() -> Self {
        Self {
            k: 4.0,
            rto_min: 0.2,
        }
    }
}

pub fn rto_duration(srtt: f64, policy: &RtoPolicy) -> f64 {
    (policy.k * srtt).max(policy.rto_min)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TcpFlowState {
    pub cwnd: f64,
    pub ssthresh: f64,
    pub phase: TcpPhase,
    /// Next new sequence number to send.
    pub next_seq: u64,
    /// Cumulative ACK: every segment below this has been received.
    pub highest_acked: u64,
    pub dupack_count: u32,
    /// Sent but not yet cumulatively acknowledged (`next_seq - highest_acked`).
    pub in_flight: u64,
    pub rto: f64,
    pub initial_window: f64,
}

/// What the sender has to do after processing an input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reaction {
    None,
    /// Resend this sequence number.
    Retransmit(u64),
    /// The ACK did not advance the cumulative point; state unchanged.
    Stale,
}

impl TcpFlowState {
    pub fn new(initial_window: f64, initial_ssthresh: f64, rto: f64) -> Self {
        Self {
            cwnd: initial_window.max(MIN_CWND),
            ssthresh: initial_ssthresh.max(MIN_SSTHRESH),
            phase: TcpPhase::SlowStart,
            next_seq: 0,
            highest_acked: 0,
            dupack_count: 0,
            in_flight: 0,
            rto,
            initial_window: initial_window.max(MIN_CWND),
        }
    }

    /// Segments the window allows to inject now.
    pub fn can_send(&self) -> u64 {
        let window = self.cwnd.floor() as u64;
        window.saturating_sub(self.in_flight)
    }

    /// Record the transmission of a new segment; returns its sequence number.
    pub fn on_send(&self) -> (Self, u64) {
        let mut next = *self;
        let seq = next.next_seq;
        next.next_seq += 1;
        next.in_flight = next.next_seq - next.highest_acked;
        (next, seq)
    }

    /// Cumulative ACK `acked_seq` (next expected sequence at the receiver).
    pub fn on_ack(&self, acked_seq: u64) -> (Self, Reaction) {
        if acked_seq <= self.highest_acked {
            return (*self, Reaction::Stale);
        }
        let mut next = *self;
        next.highest_acked = acked_seq.min(next.next_seq);
        next.in_flight = next.next_seq - next.highest_acked;
        next.dupack_count = 0;
        match next.phase {
            TcpPhase::SlowStart => {
                next.cwnd += 1.0;
                if next.cwnd >= next.ssthresh {
                    next.phase = TcpPhase::CongestionAvoidance;
                }
            }
            TcpPhase::CongestionAvoidance => {
                next.cwnd += 1.0 / next.cwnd;
            }
            TcpPhase::FastRecovery => {
                next.cwnd = next.ssthresh;
                next.phase = TcpPhase::CongestionAvoidance;
            }
        }
        (next, Reaction::None)
    }

    /// Duplicate ACK. The third one triggers fast retransmit and halves the
    /// window; further duplicates during recovery are ignored.
    pub fn on_dupack(&self) -> (Self, Reaction) {
        if self.phase == TcpPhase::FastRecovery {
            return (*self, Reaction::None);
        }
        let mut next = *self;
        next.dupack_count = (next.dupack_count + 1).min(DUPACK_THRESHOLD);
        if next.dupack_count < DUPACK_THRESHOLD {
            return (next, Reaction::None);
        }
        let half = next.cwnd / 2.0;
        next.ssthresh = half.max(MIN_SSTHRESH);
        next.cwnd = half.max(MIN_CWND);
        next.phase = TcpPhase::FastRecovery;
        (next, Reaction::Retransmit(next.highest_acked))
    }

    /// Retransmission timer expiry.
    pub fn on_timeout(&self) -> (Self, Reaction) {
        let mut next = *self;
        next.ssthresh = (next.cwnd / 2.0).max(MIN_SSTHRESH);
        next.cwnd = next.initial_window;
        next.phase = TcpPhase::SlowStart;
        next.dupack_count = 0;
        let reaction = if next.in_flight > 0 {
            Reaction::Retransmit(next.highest_acked)
        } else {
            Reaction::None
        };
        (next, reaction)
    }
}
