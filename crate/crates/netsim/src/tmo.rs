//! Trunked-mode MAC: access opportunities, slot arbitration, reserved-slot
//! bookkeeping and the per-terminal state kept by the network model.
//!
//! Random access uses slot 0 (the MCCH) of every frame except the control
//! frame. Downlink PDUs for frame `f` go out in slot 2 of that frame.

use std::collections::BTreeSet;

use tetra_aoi_core::des::Handle;
use tetra_aoi_core::queue::QueueState;
use tetra_aoi_core::time::{first_slot_of_frame, frame_of, is_control_frame, Slot};
use tetra_aoi_core::{Discipline, EntityId, RngStream};

use crate::config::TmoParams;

/// Slot offset of downlink PDUs within a frame.
pub const DOWNLINK_SLOT: u64 = 2;
/// Slot offset at which a terminal gives up waiting for an ACK.
pub const TIMEOUT_SLOT: u64 = 3;

pub fn is_access_frame(frame: u64) -> bool {
    !is_control_frame(frame)
}

fn next_access_frame_after(frame: u64) -> u64 {
    let mut f = frame + 1;
    while !is_access_frame(f) {
        f += 1;
    }
    f
}

/// Slot of the next random-access opportunity.
///
/// A first attempt takes the earliest opportunity strictly after `now`. A
/// retry picks uniformly among the next `wt` opportunities after `now`.
pub fn next_access_opportunity(now: Slot, rng: &mut RngStream, retry: bool, wt: u32) -> Slot {
    // The opportunity of frame(now) lies at or before now.
    let mut f = next_access_frame_after(frame_of(now));
    if retry && wt > 1 {
        for _ in 0..rng.below(u64::from(wt)) {
            f = next_access_frame_after(f);
        }
    }
    first_slot_of_frame(f)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotOutcome {
    Empty,
    Success,
    ChannelError,
    Collision(usize),
}

/// Arbitration of one access slot: two or more bursts collide, a lone burst
/// survives the channel with probability `1 - alpha`.
pub fn arbitrate_slot(n_tx: usize, rng: &mut RngStream, alpha: f64) -> SlotOutcome {
    match n_tx {
        0 => SlotOutcome::Empty,
        1 if rng.bernoulli(alpha) => SlotOutcome::ChannelError,
        1 => SlotOutcome::Success,
        n => SlotOutcome::Collision(n),
    }
}

/// Whole-message retransmission rounds allowed after the first; `None` is unlimited.
pub fn retx_limit(discipline: Discipline, p: &TmoParams) -> Option<u32> {
    match discipline {
        Discipline::Pr | Discipline::Npr => Some(0),
        Discipline::Prrt => None,
        Discipline::Fcfs | Discipline::Replace2 => Some(p.sds_retx_limit),
    }
}

/// Uplink MCCH frames reserved for granted fragments.
#[derive(Debug, Clone, Default)]
pub struct Reservations {
    frames: BTreeSet<u64>,
}

impl Reservations {
    /// Reserves the earliest `n` free access frames at or after `from`.
    pub fn reserve(&mut self, n: u32, from: u64) -> Vec<u64> {
        let mut out = Vec::with_capacity(n as usize);
        let mut f = from;
        while out.len() < n as usize {
            if is_access_frame(f) && !self.frames.contains(&f) {
                self.frames.insert(f);
                out.push(f);
            }
            f += 1;
        }
        out
    }

    pub fn is_reserved(&self, frame: u64) -> bool {
        self.frames.contains(&frame)
    }

    /// Forgets reservations before `frame`.
    pub fn prune(&mut self, frame: u64) {
        self.frames = self.frames.split_off(&frame);
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TmoPhase {
    Idle,
    AwaitOpportunity { attempt: u32, frame: u64 },
    AwaitGrant { attempt: u32, frame: u64 },
    Reserved { remaining: u32 },
    AwaitAck { last_frame: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    FirstResponder,
    Background,
    Gateway,
}

/// A terminal attached to the trunked network.
#[derive(Debug, Clone)]
pub struct TmoMs {
    pub entity: EntityId,
    pub role: Role,
    pub buffer: QueueState,
    pub phase: TmoPhase,
    /// Bumped whenever the current procedure is abandoned; stale events are ignored.
    pub token: u64,
    pub round: u32,
    pub retx_limit: Option<u32>,
    pub exchanges_left: u32,
    pub timeout: Option<Handle>,
    pub access_rng: RngStream,
    pub channel_rng: RngStream,
}

impl TmoMs {
    pub fn may_retransmit(&self) -> bool {
        self.retx_limit.is_none_or(|l| self.round < l)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tetra_aoi_core::time::{frame_in_multiframe, slot_in_frame};
    use tetra_aoi_core::StreamId;

    fn rng() -> RngStream {
        RngStream::new(42, StreamId(3))
    }

    #[test]
    fn first_attempt_skips_control_frame() {
        // Frame 16, slot 2.
        let now = 16 * 4 + 2;
        let s = next_access_opportunity(now, &mut rng(), false, 4);
        assert_eq!(s, 18 * 4);
    }

    #[test]
    fn opportunity_is_strictly_after_now() {
        assert_eq!(next_access_opportunity(0, &mut rng(), false, 4), 4);
        assert_eq!(next_access_opportunity(3, &mut rng(), false, 4), 4);
        assert_eq!(next_access_opportunity(4, &mut rng(), false, 4), 8);
    }

    #[test]
    fn wt_one_retry_is_deterministic() {
        let mut r = rng();
        for now in 0..500 {
            assert_eq!(
                next_access_opportunity(now, &mut r, true, 1),
                next_access_opportunity(now, &mut rng(), false, 1)
            );
        }
    }

    #[test]
    fn retry_window_is_uniform_and_reproducible() {
        let now = 5;
        let mut counts = [0u32; 16];
        let mut r = rng();
        for _ in 0..15_000 {
            let s = next_access_opportunity(now, &mut r, true, 15);
            let f = frame_of(s);
            assert!((2..=17).contains(&f) && f != 17, "{f}");
            assert_eq!(slot_in_frame(s), 0);
            counts[(f - 2) as usize] += 1;
        }
        // Frames 2..=16 and 18 are the 15 opportunities; index 15 (frame 17) stays empty.
        assert_eq!(counts[15], 0);
        assert!(counts[..15].iter().all(|&c| (900..1100).contains(&c)), "{counts:?}");
        let a: Vec<_> = (0..20).map(|_| next_access_opportunity(now, &mut rng(), true, 15)).collect();
        let b: Vec<_> = (0..20).map(|_| next_access_opportunity(now, &mut rng(), true, 15)).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn never_lands_on_control_frame() {
        let mut r = rng();
        for now in 0..2_000 {
            for retry in [false, true] {
                let s = next_access_opportunity(now, &mut r, retry, 15);
                assert!(frame_in_multiframe(frame_of(s)) != 17);
                assert!(s > now);
            }
        }
    }

    #[test]
    fn arbitration() {
        let mut r = rng();
        assert_eq!(arbitrate_slot(0, &mut r, 0.5), SlotOutcome::Empty);
        assert_eq!(arbitrate_slot(2, &mut r, 0.0), SlotOutcome::Collision(2));
        assert_eq!(arbitrate_slot(1, &mut r, 0.0), SlotOutcome::Success);
        assert_eq!(arbitrate_slot(1, &mut r, 1.0), SlotOutcome::ChannelError);
    }

    #[test]
    fn reservations_do_not_overlap() {
        let mut res = Reservations::default();
        let a = res.reserve(3, 15);
        let b = res.reserve(2, 15);
        assert_eq!(a, vec![15, 16, 18]);
        assert_eq!(b, vec![19, 20]);
        res.prune(19);
        assert_eq!(res.len(), 2);
        assert!(!res.is_reserved(15));
    }
}
