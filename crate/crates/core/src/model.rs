use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{positive, probability_below_one, ParamError};

pub type EntityId = u32;
pub type UpdateId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateKind {
    /// First-responder status sent towards the remote agent.
    UplinkStatus,
    /// Feedback or warning sent by the remote agent towards a first responder.
    DownlinkFeedback,
    /// Short data from a background terminal; loads the control channel.
    Background,
    /// Voice call set-up signalling; loads the control channel.
    CallSetup,
}

/// One status message. The generation time travels with every copy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Update {
    id: UpdateId,
    source: EntityId,
    gen_time: f64,
    n_fragments: u32,
    bytes: u32,
    kind: UpdateKind,
}

impl Update {
    pub fn new(id: UpdateId, source: EntityId, gen_time: f64, kind: UpdateKind) -> Self {
        Self {
            id,
            source,
            gen_time,
            n_fragments: 1,
            bytes: 1,
            kind,
        }
    }

    pub fn with_fragments(mut self, n_fragments: u32) -> Self {
        assert!(n_fragments >= 1, "an update has at least one fragment");
        self.n_fragments = n_fragments;
        self
    }

    pub fn with_bytes(mut self, bytes: u32) -> Self {
        assert!(bytes >= 1, "an update carries at least one byte");
        self.bytes = bytes;
        self
    }

    pub fn id(&self) -> UpdateId {
        self.id
    }

    pub fn source(&self) -> EntityId {
        self.source
    }

    pub fn gen_time(&self) -> f64 {
        self.gen_time
    }

    pub fn n_fragments(&self) -> u32 {
        self.n_fragments
    }

    pub fn bytes(&self) -> u32 {
        self.bytes
    }

    pub fn kind(&self) -> UpdateKind {
        self.kind
    }
}

/// Packet-management policy at a transmitter buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Discipline {
    /// Unbounded first-come first-served buffer.
    #[serde(rename = "FCFS")]
    Fcfs,
    /// Single buffer; arrivals while busy are discarded; no retransmission.
    #[serde(rename = "NPR")]
    Npr,
    /// Single buffer; arrivals preempt the update in service; no retransmission.
    #[serde(rename = "PR")]
    Pr,
    /// Single buffer; arrivals preempt; failures are retransmitted until
    /// delivered or preempted.
    #[serde(rename = "PRRT", alias = "PR-RT")]
    Prrt,
    /// One in service plus one waiting; an arrival replaces the waiting update.
    #[serde(rename = "REPLACE2")]
    Replace2,
}

impl Discipline {
    pub const ALL: [Discipline; 5] = [
        Discipline::Fcfs,
        Discipline::Npr,
        Discipline::Pr,
        Discipline::Prrt,
        Discipline::Replace2,
    ];

    /// Total buffer capacity including the update in service; `None` is unbounded.
    pub fn capacity(self) -> Option<usize> {
        match self {
            Discipline::Fcfs => None,
            Discipline::Npr | Discipline::Pr | Discipline::Prrt => Some(1),
            Discipline::Replace2 => Some(2),
        }
    }

    pub fn preempts(self) -> bool {
        matches!(self, Discipline::Pr | Discipline::Prrt)
    }

    pub fn retransmits_until_preempted(self) -> bool {
        self == Discipline::Prrt
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Discipline::Fcfs => "FCFS",
            Discipline::Npr => "NPR",
            Discipline::Pr => "PR",
            Discipline::Prrt => "PRRT",
            Discipline::Replace2 => "REPLACE2",
        }
    }
}

impl fmt::Display for Discipline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown discipline `{0}` (expected FCFS, NPR, PR, PRRT or REPLACE2)")]
pub struct UnknownDiscipline(pub String);

impl FromStr for Discipline {
    type Err = UnknownDiscipline;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "FCFS" => Ok(Discipline::Fcfs),
            "NPR" => Ok(Discipline::Npr),
            "PR" => Ok(Discipline::Pr),
            "PRRT" | "PR-RT" => Ok(Discipline::Prrt),
            "REPLACE2" => Ok(Discipline::Replace2),
            _ => Err(UnknownDiscipline(s.to_string())),
        }
    }
}

/// Parameters of the single-source abstract model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Update generation rate (updates/s).
    pub lambda_f: f64,
    /// Deterministic fragment service time (s).
    pub mu: f64,
    /// Per-transmission failure probability.
    pub alpha: f64,
    pub discipline: Discipline,
}

impl ModelParams {
    pub fn new(lambda_f: f64, mu: f64, alpha: f64, discipline: Discipline) -> Result<Self, ParamError> {
        let p = Self {
            lambda_f,
            mu,
            alpha,
            discipline,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        positive("lambda_f", self.lambda_f)?;
        positive("mu", self.mu)?;
        probability_below_one("alpha", self.alpha)?;
        Ok(())
    }

    pub fn with_discipline(self, discipline: Discipline) -> Self {
        Self { discipline, ..self }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discipline_names_round_trip() {
        for d in Discipline::ALL {
            assert_eq!(d.as_str().parse::<Discipline>().unwrap(), d);
        }
        assert_eq!("pr-rt".parse::<Discipline>().unwrap(), Discipline::Prrt);
        assert!("LIFO".parse::<Discipline>().is_err());
    }

    #[test]
    fn capacities() {
        assert_eq!(Discipline::Fcfs.capacity(), None);
        assert_eq!(Discipline::Pr.capacity(), Some(1));
        assert_eq!(Discipline::Replace2.capacity(), Some(2));
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::new(0.5, 1.0, 0.1, Discipline::Pr).is_ok());
        assert!(ModelParams::new(0.0, 1.0, 0.1, Discipline::Pr).is_err());
        assert!(ModelParams::new(0.5, -1.0, 0.1, Discipline::Pr).is_err());
        assert!(ModelParams::new(0.5, 1.0, 1.0, Discipline::Pr).is_err());
        assert!(ModelParams::new(0.5, 1.0, -0.1, Discipline::Pr).is_err());
    }
}
