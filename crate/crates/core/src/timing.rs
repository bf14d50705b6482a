//! Phase timing: measured wall time and a deterministic cost model.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which timings are reported as the run's round times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockKind {
    /// Derived from counted work and traffic; identical across repeat runs.
    Modeled,
    /// Measured with a monotonic clock.
    Wall,
}

impl FromStr for ClockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "modeled" => Ok(ClockKind::Modeled),
            "wall" => Ok(ClockKind::Wall),
            _ => Err(Error::Config(format!("unknown clock {s:?}; expected modeled or wall"))),
        }
    }
}

/// Costs of compute and of one pipelined call to the embedding server.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Nanoseconds per multiply-add.
    pub flop_ns: f64,
    /// Round-trip latency of one pipelined call, microseconds.
    pub rtt_us: f64,
    /// Link bandwidth, gigabits per second.
    pub gbps: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel { flop_ns: 1.0, rtt_us: 200.0, gbps: 1.0 }
    }
}

impl CostModel {
    pub fn compute_ms(&self, flops: u64) -> f64 {
        flops as f64 * self.flop_ns * 1e-6
    }

    pub fn traffic_ms(&self, t: &Traffic) -> f64 {
        t.calls as f64 * self.rtt_us * 1e-3 + t.bytes as f64 * 8.0 / (self.gbps * 1e9) * 1e3
    }
}

/// Client-side traffic counters. A call is one pipelined batch of requests.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Traffic {
    pub calls: u64,
    pub requests: u64,
    /// Framed bytes in both directions.
    pub bytes: u64,
}

impl Traffic {
    pub fn since(&self, earlier: &Traffic) -> Traffic {
        Traffic {
            calls: self.calls - earlier.calls,
            requests: self.requests - earlier.requests,
            bytes: self.bytes - earlier.bytes,
        }
    }
}

/// Per-client phase durations of one round, in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub pull_ms: f64,
    pub train_ms: f64,
    pub push_ms: f64,
}

impl PhaseTimes {
    pub fn total_ms(&self) -> f64 {
        self.pull_ms + self.train_ms + self.push_ms
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cost_arithmetic() {
        let c = CostModel { flop_ns: 2.0, rtt_us: 100.0, gbps: 1.0 };
        assert_eq!(c.compute_ms(1_000_000), 2.0);
        // 125 000 bytes = 1 ms at 1 Gbit/s, plus 2 round trips
        let t = Traffic { calls: 2, requests: 5, bytes: 125_000 };
        assert!((c.traffic_ms(&t) - 1.2).abs() < 1e-12);
        assert_eq!(t.since(&Traffic { calls: 1, requests: 1, bytes: 0 }).calls, 1);
        assert_eq!("WALL".parse::<ClockKind>().unwrap(), ClockKind::Wall);
    }
}
