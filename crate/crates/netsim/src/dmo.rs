//! Direct-mode MAC: channel occupancy, the slot schedule of one SDS round,
//! and the per-terminal state kept by the network model.
//!
//! A round occupies the channel for `dsb_frames` frames of synchronization
//! bursts (the first fragment rides in them), one frame per further fragment,
//! and one frame for the dual-slot ACK.

use tetra_aoi_core::des::Handle;
use tetra_aoi_core::queue::QueueState;
use tetra_aoi_core::time::{Slot, SLOTS_PER_FRAME};
use tetra_aoi_core::{Discipline, EntityId, RngStream};

use crate::config::DmoParams;

/// Slots from the first DSB to the end of the last fragment.
pub fn data_slots(p: &DmoParams, n_fragments: u32) -> u64 {
    SLOTS_PER_FRAME * u64::from(p.dsb_frames + n_fragments - 1)
}

/// Slots the channel stays busy for one round, ACK frame included.
pub fn occupancy_slots(p: &DmoParams, n_fragments: u32) -> u64 {
    data_slots(p, n_fragments) + SLOTS_PER_FRAME
}

/// Slots from the start of a round to the DT316 expiry.
pub fn timeout_slots(p: &DmoParams, n_fragments: u32) -> u64 {
    data_slots(p, n_fragments) + SLOTS_PER_FRAME * u64::from(p.dt316)
}

/// The ACK is sent in slots 1 and 3 of the frame after the last fragment;
/// the sender needs one copy.
pub fn ack_copies(rng: &mut RngStream, alpha: f64) -> (bool, bool) {
    let first = !rng.bernoulli(alpha);
    let second = !rng.bernoulli(alpha);
    (first, second)
}

/// Whole-message retransmissions allowed after the first round; `None` is unlimited.
pub fn retx_limit(discipline: Discipline, p: &DmoParams) -> Option<u32> {
    match discipline {
        Discipline::Pr | Discipline::Npr => Some(0),
        Discipline::Prrt => None,
        Discipline::Fcfs | Discipline::Replace2 => Some(p.dn316),
    }
}

#[derive(Debug, Clone, Default)]
pub struct DmoChannel {
    /// First slot at which the channel is free again.
    pub busy_until: Slot,
    /// Rounds starting in the slot being resolved: (terminal index, token).
    pub starters: Vec<(usize, u64)>,
    pub resolve_at: Option<Slot>,
    pub waiters: Vec<(usize, u64)>,
    pub free_event_at: Option<Slot>,
    pub last_master_end: Slot,
    /// Masters established while a previous master still held the channel.
    pub overlaps: u64,
}

impl DmoChannel {
    pub fn is_busy(&self, now: Slot) -> bool {
        self.busy_until > now
    }

    /// Records a master holding the channel over `[start, end)`.
    pub fn occupy(&mut self, start: Slot, end: Slot, exclusive: bool) {
        if exclusive {
            if start < self.last_master_end {
                self.overlaps += 1;
            }
            self.last_master_end = end;
        }
        self.busy_until = self.busy_until.max(end);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DmoPhase {
    Idle,
    Backoff,
    WaitingFree,
    AwaitAck,
}

#[derive(Debug, Clone)]
pub struct DmoMs {
    pub entity: EntityId,
    pub channel: usize,
    pub buffer: QueueState,
    pub phase: DmoPhase,
    pub token: u64,
    pub round: u32,
    pub retx_limit: Option<u32>,
    pub timeout: Option<Handle>,
    pub backoff_rng: RngStream,
    pub channel_rng: RngStream,
}

impl DmoMs {
    pub fn may_retransmit(&self) -> bool {
        self.retx_limit.is_none_or(|l| self.round < l)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tetra_aoi_core::StreamId;

    #[test]
    fn default_round_schedule() {
        let p = DmoParams::default();
        // Two DSB frames carry the only fragment, then one ACK frame.
        assert_eq!(data_slots(&p, 1), 8);
        assert_eq!(occupancy_slots(&p, 1), 12);
        assert_eq!(timeout_slots(&p, 1), 16);
        assert_eq!(occupancy_slots(&p, 3), 20);
    }

    #[test]
    fn ack_needs_one_copy() {
        let mut r = RngStream::new(7, StreamId(1));
        assert_eq!(ack_copies(&mut r, 0.0), (true, true));
        assert_eq!(ack_copies(&mut r, 1.0), (false, false));
        let n = 200_000;
        let lost = (0..n)
            .filter(|_| {
                let (a, b) = ack_copies(&mut r, 0.3);
                !a && !b
            })
            .count();
        let p = lost as f64 / n as f64;
        assert!((p - 0.09).abs() < 0.003, "{p}");
    }

    #[test]
    fn exclusivity_is_tracked() {
        let mut c = DmoChannel::default();
        c.occupy(0, 12, true);
        assert!(c.is_busy(11));
        assert!(!c.is_busy(12));
        c.occupy(12, 24, true);
        assert_eq!(c.overlaps, 0);
        c.occupy(20, 30, true);
        assert_eq!(c.overlaps, 1);
    }

    #[test]
    fn limits_per_discipline() {
        let p = DmoParams::default();
        assert_eq!(retx_limit(Discipline::Pr, &p), Some(0));
        assert_eq!(retx_limit(Discipline::Prrt, &p), None);
        assert_eq!(retx_limit(Discipline::Fcfs, &p), Some(3));
    }
}
