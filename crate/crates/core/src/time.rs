//! TDMA time base.
//!
//! Protocol time is an absolute slot counter. Four slots make a frame and 18
//! frames make a multiframe; the last frame of every multiframe carries
//! control signalling only. Seconds are a derived view.

use serde::{Deserialize, Serialize};

use crate::error::{positive, ParamError};

pub type Slot = u64;

pub const SLOTS_PER_FRAME: u64 = 4;
pub const FRAMES_PER_MULTIFRAME: u64 = 18;
/// Zero-based index of the control frame within a multiframe.
pub const CONTROL_FRAME: u64 = FRAMES_PER_MULTIFRAME - 1;
pub const SLOTS_PER_MULTIFRAME: u64 = SLOTS_PER_FRAME * FRAMES_PER_MULTIFRAME;
pub const DEFAULT_FRAME_DUR_MS: f64 = 57.67;

#[inline]
pub fn frame_of(slot: Slot) -> u64 {
    slot / SLOTS_PER_FRAME
}

#[inline]
pub fn slot_in_frame(slot: Slot) -> u64 {
    slot % SLOTS_PER_FRAME
}

#[inline]
pub fn frame_in_multiframe(frame: u64) -> u64 {
    frame % FRAMES_PER_MULTIFRAME
}

#[inline]
pub fn is_control_frame(frame: u64) -> bool {
    frame_in_multiframe(frame) == CONTROL_FRAME
}

#[inline]
pub fn first_slot_of_frame(frame: u64) -> Slot {
    frame * SLOTS_PER_FRAME
}

/// Multiframe / frame / slot decomposition of an absolute slot index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotCoords {
    pub multiframe: u64,
    pub frame_in_multiframe: u8,
    pub slot_in_frame: u8,
}

impl SlotCoords {
    pub fn of(abs_slot: Slot) -> Self {
        let frame = frame_of(abs_slot);
        Self {
            multiframe: frame / FRAMES_PER_MULTIFRAME,
            frame_in_multiframe: frame_in_multiframe(frame) as u8,
            slot_in_frame: slot_in_frame(abs_slot) as u8,
        }
    }

    pub fn abs_slot(&self) -> Slot {
        (self.multiframe * FRAMES_PER_MULTIFRAME + u64::from(self.frame_in_multiframe))
            * SLOTS_PER_FRAME
            + u64::from(self.slot_in_frame)
    }
}

/// Monotone slot clock with a configurable frame duration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotClock {
    abs_slot: Slot,
    frame_dur_ms: f64,
}

impl Default for SlotClock {
    fn default() -> Self {
        Self {
            abs_slot: 0,
            frame_dur_ms: DEFAULT_FRAME_DUR_MS,
        }
    }
}

impl SlotClock {
    pub fn new(frame_dur_ms: f64) -> Result<Self, ParamError> {
        Ok(Self {
            abs_slot: 0,
            frame_dur_ms: positive("frame_dur_ms", frame_dur_ms)?,
        })
    }

    pub fn abs_slot(&self) -> Slot {
        self.abs_slot
    }

    pub fn frame_dur_ms(&self) -> f64 {
        self.frame_dur_ms
    }

    pub fn frame(&self) -> u64 {
        frame_of(self.abs_slot)
    }

    pub fn slot_in_frame(&self) -> u64 {
        slot_in_frame(self.abs_slot)
    }

    pub fn frame_in_multiframe(&self) -> u64 {
        frame_in_multiframe(self.frame())
    }

    pub fn coords(&self) -> SlotCoords {
        SlotCoords::of(self.abs_slot)
    }

    /// Moves the clock forward. Panics if `slot` lies in the past.
    pub fn advance_to(&mut self, slot: Slot) {
        assert!(
            slot >= self.abs_slot,
            "slot clock moved backwards: {} -> {}",
            self.abs_slot,
            slot
        );
        self.abs_slot = slot;
    }

    pub fn slot_duration_s(&self) -> f64 {
        self.frame_dur_ms / SLOTS_PER_FRAME as f64 / 1000.0
    }

    pub fn frame_duration_s(&self) -> f64 {
        self.frame_dur_ms / 1000.0
    }

    pub fn slot_to_seconds(&self, abs_slot: Slot) -> f64 {
        abs_slot as f64 * self.frame_dur_ms / SLOTS_PER_FRAME as f64 / 1000.0
    }

    pub fn now_seconds(&self) -> f64 {
        self.slot_to_seconds(self.abs_slot)
    }

    /// First slot boundary at or after `t` seconds.
    pub fn seconds_to_slot_ceil(&self, t: f64) -> Slot {
        debug_assert!(t >= 0.0);
        let slots = t / self.slot_duration_s();
        let s = slots.ceil() as Slot;
        // Guard against `slots` landing a hair above an integer from rounding.
        if s > 0 && self.slot_to_seconds(s - 1) >= t {
            s - 1
        } else {
            s
        }
    }
}
