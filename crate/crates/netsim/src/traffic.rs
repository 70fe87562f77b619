//! Poisson traffic sources.

use tetra_aoi_core::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stream {
    /// First-responder status updates.
    Status,
    /// Background short-data messages.
    BackgroundSds,
    /// Background voice calls.
    Voice,
    /// Feedback from the remote agent.
    Feedback,
}

/// Poisson arrival process with a pre-drawn next arrival time.
#[derive(Debug, Clone)]
pub struct Poisson {
    rate: f64,
    next: Option<f64>,
    rng: RngStream,
    emitted: u64,
}

impl Poisson {
    /// A zero rate yields a source that never fires.
    pub fn new(rate: f64, mut rng: RngStream) -> Self {
        let next = (rate > 0.0).then(|| rng.exp(rate).expect("positive rate"));
        Self {
            rate,
            next,
            rng,
            emitted: 0,
        }
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn peek(&self) -> Option<f64> {
        self.next
    }

    pub fn emitted(&self) -> u64 {
        self.emitted
    }

    /// Returns the pending arrival time and draws the following one.
    pub fn advance(&mut self) -> Option<f64> {
        let t = self.next?;
        self.next = Some(t + self.rng.exp(self.rate).expect("positive rate"));
        self.emitted += 1;
        Some(t)
    }
}
