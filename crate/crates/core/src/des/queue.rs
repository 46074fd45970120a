use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::red::{drop_decision, drop_probability, ewma_update, RedParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Packet {
    pub flow_id: u32,
    pub seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnqueueOutcome {
    Accepted,
    DroppedRed,
    DroppedTail,
}

/// FIFO bottleneck buffer managed by RED, with a hard tail-drop limit.
///
/// `len()` counts every packet in the system, including the one being
/// transmitted.
#[derive(Debug, Clone)]
pub struct RedQueue {
    packets: VecDeque<Packet>,
    capacity: usize,
    red: RedParams,
    q_hat: f64,
    last_p: f64,
}

impl RedQueue {
    pub fn new(red: RedParams, capacity: usize) -> Self {
        Self {
            packets: VecDeque::with_capacity(capacity),
            capacity,
            red,
            q_hat: 0.0,
            last_p: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    pub fn q_hat(&self) -> f64 {
        self.q_hat
    }

    /// Drop probability computed at the most recent arrival.
    pub fn last_drop_probability(&self) -> f64 {
        self.last_p
    }

    /// RED admission. The average is refreshed from the pre-arrival queue
    /// length, then one Bernoulli draw decides an early drop; surviving
    /// packets hit the tail-drop limit only when the buffer is full.
    pub fn enqueue_arrival<R: Rng + ?Sized>(&mut self, packet: Packet, rng: &mut R) -> EnqueueOutcome {
        let q = self.packets.len() as f64;
        // w_q was validated with the params, so the update cannot fail.
        self.q_hat = ewma_update(self.q_hat, q, self.red.w_q).expect("validated RED weight");
        let p = drop_probability(self.q_hat, &self.red);
        self.last_p = p;
        if drop_decision(p, rng).expect("drop function stays in [0, 1]") {
            EnqueueOutcome::DroppedRed
        } else if self.packets.len() >= self.capacity {
            EnqueueOutcome::DroppedTail
        } else {
            self.packets.push_back(packet);
            EnqueueOutcome::Accepted
        }
    }

    /// Head-of-line packet finishes transmission at `now`. Returns it along
    /// with the completion time of the next one, if the queue is still busy.
    pub fn service_complete(&mut self, now: f64, link_capacity: f64) -> Option<(Packet, Option<f64>)> {
        let head = self.packets.pop_front()?;
        let next = (!self.packets.is_empty()).then(|| now + 1.0 / link_capacity);
        Some((head, next))
    }
}
