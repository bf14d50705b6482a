//! Session configuration. Serialized as flat JSON; every field is optional
//! in a file and falls back to its default.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::LayerKind;
use crate::scoring::PruneConfig;
use crate::timing::{ClockKind, CostModel};

/// The seven training strategies.
#[allow(clippy::upper_case_acronyms)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    /// Default federated training, no embedding exchange.
    D,
    /// Full embedding exchange.
    E,
    /// E with the push overlapped with the last epoch.
    O,
    /// E with uniform retention pruning.
    P,
    OP,
    /// OP, prefetching only the best-scoring pull nodes.
    OPP,
    /// Overlap with top-f scored pruning.
    OPG,
}

/// How the pull candidates are cut down before expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pruning {
    /// No remote nodes at all.
    Drop,
    Full,
    Retention,
    TopScored,
}

impl Strategy {
    pub const ALL: [Strategy; 7] =
        [Strategy::D, Strategy::E, Strategy::O, Strategy::P, Strategy::OP, Strategy::OPP, Strategy::OPG];

    pub fn overlaps(self) -> bool {
        matches!(self, Strategy::O | Strategy::OP | Strategy::OPP | Strategy::OPG)
    }

    pub fn pruning(self) -> Pruning {
        match self {
            Strategy::D => Pruning::Drop,
            Strategy::E | Strategy::O => Pruning::Full,
            Strategy::P | Strategy::OP | Strategy::OPP => Pruning::Retention,
            Strategy::OPG => Pruning::TopScored,
        }
    }

    pub fn prefetches(self) -> bool {
        self == Strategy::OPP
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::D => "D",
            Strategy::E => "E",
            Strategy::O => "O",
            Strategy::P => "P",
            Strategy::OP => "OP",
            Strategy::OPP => "OPP",
            Strategy::OPG => "OPG",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?}; expected one of D, E, O, P, OP, OPP, OPG")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    Inproc,
    Tcp,
}

impl FromStr for TransportKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "inproc" => Ok(TransportKind::Inproc),
            "tcp" => Ok(TransportKind::Tcp),
            _ => Err(Error::Config(format!("unknown transport {s:?}; expected inproc or tcp"))),
        }
    }
}

/// Score used by scored pruning and prefetch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Frequency,
    Degree,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FedAvgWeighting {
    /// Proportional to each client's number of training vertices.
    Samples,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub strategy: Strategy,
    pub rounds: usize,
    pub clients: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub fanout: usize,
    pub layers: usize,
    pub hidden: usize,
    pub lr: f64,
    pub seed: u64,
    pub model: LayerKind,
    /// Per-boundary-vertex retention limit; `null` keeps every remote neighbour.
    pub retention: Option<usize>,
    pub score_frac: f64,
    pub prefetch_frac: f64,
    pub score_kind: ScoreKind,
    pub fedavg: FedAvgWeighting,
    /// Fanout for the push-phase forward pass; `null` uses full neighbourhoods.
    pub push_fanout: Option<usize>,
    pub transport: TransportKind,
    /// Listen address of the embedding server started for a TCP run.
    pub bind: String,
    /// Address of an already running embedding server (TCP only).
    pub server: Option<String>,
    /// `null` picks `modeled` for inproc and `wall` for tcp.
    pub clock: Option<ClockKind>,
    pub flop_ns: f64,
    pub rtt_us: f64,
    pub gbps: f64,
    pub partition_slack: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let cost = CostModel::default();
        TrainConfig {
            strategy: Strategy::E,
            rounds: 50,
            clients: 4,
            epochs: 3,
            batch_size: 64,
            fanout: 5,
            layers: 3,
            hidden: 32,
            lr: 0.001,
            seed: 0,
            model: LayerKind::GraphConv,
            retention: Some(4),
            score_frac: 0.25,
            prefetch_frac: 0.25,
            score_kind: ScoreKind::Frequency,
            fedavg: FedAvgWeighting::Samples,
            push_fanout: None,
            transport: TransportKind::Inproc,
            bind: "127.0.0.1:0".into(),
            server: None,
            clock: None,
            flop_ns: cost.flop_ns,
            rtt_us: cost.rtt_us,
            gbps: cost.gbps,
            partition_slack: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("fanout", self.fanout),
            ("layers", self.layers),
            ("hidden", self.hidden),
            ("clients", self.clients),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.layers < 2 && self.strategy != Strategy::D {
            return Err(Error::Config("embedding exchange needs at least 2 layers".into()));
        }
        if self.strategy.overlaps() && self.epochs < 2 {
            return Err(Error::Config(format!(
                "strategy {} overlaps the push with the last epoch and needs epochs >= 2",
                self.strategy
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.push_fanout == Some(0) {
            return Err(Error::Config("push_fanout must be at least 1".into()));
        }
        if self.server.is_some() && self.transport != TransportKind::Tcp {
            return Err(Error::Config("an external server needs the tcp transport".into()));
        }
        for (name, v) in [("flop_ns", self.flop_ns), ("rtt_us", self.rtt_us)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and non-negative")));
            }
        }
        if !(self.gbps > 0.0 && self.gbps.is_finite()) {
            return Err(Error::Config("gbps must be positive".into()));
        }
        if self.partition_slack.is_nan() || self.partition_slack < 0.0 {
            return Err(Error::Config("partition_slack must be non-negative".into()));
        }
        self.prune().validate()
    }

    pub fn prune(&self) -> PruneConfig {
        PruneConfig {
            retention_limit: self.retention,
            score_fraction: self.score_frac,
            prefetch_fraction: self.prefetch_frac,
        }
    }

    pub fn cost_model(&self) -> CostModel {
        CostModel { flop_ns: self.flop_ns, rtt_us: self.rtt_us, gbps: self.gbps }
    }

    pub fn clock_kind(&self) -> ClockKind {
        self.clock.unwrap_or(match self.transport {
            TransportKind::Inproc => ClockKind::Modeled,
            TransportKind::Tcp => ClockKind::Wall,
        })
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
