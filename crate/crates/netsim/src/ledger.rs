//! Fate of every first-responder update, from generation to delivery or loss.
//!
//! Exactly one entity holds a pending update at a time. A loss is booked only
//! when reported by the current holder, so a terminal giving up on an update
//! the base station or gateway already has does not count as a drop.

use std::collections::HashMap;

use tetra_aoi_core::metrics::{LossCause, LossCounters};
use tetra_aoi_core::{EntityId, UpdateId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fate {
    Pending { holder: EntityId },
    Delivered,
    Lost(LossCause),
}

#[derive(Debug, Clone, Default)]
pub struct Ledger {
    fates: HashMap<UpdateId, Fate>,
    generated: u64,
    delivered: u64,
    pending: u64,
    losses: LossCounters,
}

impl Ledger {
    pub fn register(&mut self, id: UpdateId, holder: EntityId) {
        let prev = self.fates.insert(id, Fate::Pending { holder });
        assert!(prev.is_none(), "update {id} registered twice");
        self.generated += 1;
        self.pending += 1;
    }

    pub fn fate(&self, id: UpdateId) -> Option<Fate> {
        self.fates.get(&id).copied()
    }

    pub fn is_tracked(&self, id: UpdateId) -> bool {
        self.fates.contains_key(&id)
    }

    /// Books a loss if `holder` still holds the update.
    pub fn drop_by(&mut self, id: UpdateId, holder: EntityId, cause: LossCause) -> bool {
        match self.fates.get_mut(&id) {
            Some(f @ Fate::Pending { .. }) if *f == (Fate::Pending { holder }) => {
                *f = Fate::Lost(cause);
                self.pending -= 1;
                self.losses.record(cause);
                true
            }
            _ => false,
        }
    }

    /// Moves custody from `from` to `to`. False for duplicates and for
    /// updates `from` no longer holds.
    pub fn hand_off(&mut self, id: UpdateId, from: EntityId, to: EntityId) -> bool {
        match self.fates.get_mut(&id) {
            Some(f) if *f == (Fate::Pending { holder: from }) => {
                *f = Fate::Pending { holder: to };
                true
            }
            _ => false,
        }
    }

    /// Marks a pending update delivered. False for duplicates and lost updates.
    pub fn deliver(&mut self, id: UpdateId) -> bool {
        match self.fates.get_mut(&id) {
            Some(f @ Fate::Pending { .. }) => {
                *f = Fate::Delivered;
                self.pending -= 1;
                self.delivered += 1;
                true
            }
            _ => false,
        }
    }

    pub fn generated(&self) -> u64 {
        self.generated
    }

    pub fn delivered(&self) -> u64 {
        self.delivered
    }

    pub fn in_flight(&self) -> u64 {
        self.pending
    }

    pub fn losses(&self) -> LossCounters {
        self.losses
    }
}
