//! Shared link, RED and load parameters, mapped onto each model.

use serde::{Deserialize, Serialize};

use crate::des::{DesConfig, TcpSettings};
use crate::error::Result;
use crate::fluid::{DiffusionMode, FluidParams, JumpMode};
use crate::hybrid::HybridParams;
use crate::red::{ewma_weight, RedParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// Bottleneck service rate, packets/s.
    pub capacity: f64,
    /// Propagation round-trip time, s.
    pub prop_rtt: f64,
    /// Competing flows (packet-level model only).
    pub n_flows: u32,
    /// Buffer size, packets.
    pub buffer: u32,
    pub q_min: f64,
    pub q_max: f64,
    pub p_max: f64,
    /// EWMA weight; derived from `capacity` when absent.
    pub w_q: Option<f64>,
}

impl Scenario {
    /// Four flows over a 100 pkt/s link with 100 ms propagation RTT and
    /// RED(5, 15, 0.1) in a 50-packet buffer.
    pub fn reference() -> Self {
        Self {
            capacity: 100.0,
            prop_rtt: 0.1,
            n_flows: 4,
            buffer: 50,
            q_min: 5.0,
            q_max: 15.0,
            p_max: 0.1,
            w_q: None,
        }
    }

    pub fn red(&self) -> Result<RedParams> {
        let w_q = match self.w_q {
            Some(w) => w,
            None => ewma_weight(self.capacity)?,
        };
        RedParams::new(self.q_min, self.q_max, self.p_max, w_q)
    }

    pub fn fluid(&self) -> Result<FluidParams> {
        let p = FluidParams {
            capacity: self.capacity,
            red: self.red()?,
            prop_rtt: self.prop_rtt,
            diffusion: DiffusionMode::SumRates,
            jumps: JumpMode::Poisson,
            w_floor: 1.0,
            buffer: self.buffer as f64,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn hybrid(&self) -> Result<HybridParams> {
        let p = HybridParams::new(self.fluid()?);
        p.validate()?;
        Ok(p)
    }

    /// Packet-level configuration; the one-way delay is half the RTT.
    pub fn des(&self, duration: f64, seed: u64, sample_interval: f64) -> Result<DesConfig> {
        let c = DesConfig {
            n_flows: self.n_flows,
            link_capacity: self.capacity,
            prop_delay: 0.5 * self.prop_rtt,
            buffer_capacity: self.buffer,
            red: self.red()?,
            sim_duration: duration,
            seed,
            sample_interval,
            tcp: TcpSettings::default(),
        };
        c.validate()?;
        Ok(c)
    }
}
