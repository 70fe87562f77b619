//! Peak-age bookkeeping, loss accounting and batch-means statistics.

use std::collections::BTreeMap;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::model::EntityId;

pub const DEFAULT_BATCHES: usize = 30;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("source {entity}: delivery at {now} precedes generation at {gen_time}")]
    DeliveryBeforeGeneration { entity: EntityId, gen_time: f64, now: f64 },
    #[error("source {entity}: delivery at {now} precedes previous delivery at {previous}")]
    DeliveryOrder { entity: EntityId, previous: f64, now: f64 },
    #[error("source {entity}: peak age {via_interdeparture} (interdeparture + span) disagrees with {via_age} (age of predecessor)")]
    PathMismatch {
        entity: EntityId,
        via_interdeparture: f64,
        via_age: f64,
    },
    #[error("conservation violated: generated {generated} != delivered {delivered} + lost {lost} + in flight {in_flight}")]
    Conservation {
        generated: u64,
        delivered: u64,
        lost: u64,
        in_flight: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LossCause {
    /// Transmission failed and was not (or no longer) retried.
    Channel,
    /// Preempted by a newer update.
    Preempt,
    /// Replaced while waiting in a two-slot buffer.
    Replace,
    /// Discarded on arrival because the transmitter was busy.
    Busy,
    /// Random access attempts exhausted.
    AccessFail,
}

impl LossCause {
    pub const ALL: [LossCause; 5] = [
        LossCause::Channel,
        LossCause::Preempt,
        LossCause::Replace,
        LossCause::Busy,
        LossCause::AccessFail,
    ];
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LossCounters {
    pub channel: u64,
    pub preempt: u64,
    pub replace: u64,
    pub busy: u64,
    pub access_fail: u64,
}

impl LossCounters {
    pub fn record(&mut self, cause: LossCause) {
        *self.get_mut(cause) += 1;
    }

    pub fn get(&self, cause: LossCause) -> u64 {
        match cause {
            LossCause::Channel => self.channel,
            LossCause::Preempt => self.preempt,
            LossCause::Replace => self.replace,
            LossCause::Busy => self.busy,
            LossCause::AccessFail => self.access_fail,
        }
    }

    fn get_mut(&mut self, cause: LossCause) -> &mut u64 {
        match cause {
            LossCause::Channel => &mut self.channel,
            LossCause::Preempt => &mut self.preempt,
            LossCause::Replace => &mut self.replace,
            LossCause::Busy => &mut self.busy,
            LossCause::AccessFail => &mut self.access_fail,
        }
    }

    pub fn total(&self) -> u64 {
        self.channel + self.preempt + self.replace + self.busy + self.access_fail
    }

    pub fn merge(&mut self, other: &LossCounters) {
        for c in LossCause::ALL {
            *self.get_mut(c) += other.get(c);
        }
    }
}

/// Mean with a batch-means 95% confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    /// Standard error of the mean from the batch means.
    pub std_error: f64,
    /// Half-width of the 95% Student-t interval.
    pub ci95: f64,
    pub n_samples: usize,
    pub n_batches: usize,
    /// Set when there were fewer samples than batches; the interval is then infinite.
    pub flagged: bool,
}

impl Summary {
    /// `|mean - x| <= k * std_error`.
    pub fn covers(&self, x: f64, k_sigma: f64) -> bool {
        (self.mean - x).abs() <= k_sigma * self.std_error
    }

    pub fn z_score(&self, x: f64) -> f64 {
        (self.mean - x) / self.std_error
    }
}

pub fn summarize(samples: &[f64], n_batches: usize) -> Summary {
    assert!(n_batches >= 2, "need at least two batches");
    let n = samples.len();
    if n == 0 {
        return Summary {
            mean: f64::NAN,
            std_error: f64::INFINITY,
            ci95: f64::INFINITY,
            n_samples: 0,
            n_batches,
            flagged: true,
        };
    }
    // Shift by the first sample so constant input gives exactly zero spread.
    let x0 = samples[0];
    let mean = x0 + samples.iter().map(|x| x - x0).sum::<f64>() / n as f64;
    if n < n_batches {
        return Summary {
            mean,
            std_error: f64::INFINITY,
            ci95: f64::INFINITY,
            n_samples: n,
            n_batches,
            flagged: true,
        };
    }
    let base = n / n_batches;
    let extra = n % n_batches;
    let mut batch_means = Vec::with_capacity(n_batches);
    let mut start = 0;
    for b in 0..n_batches {
        let len = base + usize::from(b < extra);
        let chunk = &samples[start..start + len];
        batch_means.push(chunk.iter().map(|x| x - x0).sum::<f64>() / len as f64);
        start += len;
    }
    let k = n_batches as f64;
    let bm = batch_means.iter().sum::<f64>() / k;
    let var = batch_means.iter().map(|m| (m - bm).powi(2)).sum::<f64>() / (k - 1.0);
    let std_error = (var / k).sqrt();
    Summary {
        mean,
        std_error,
        ci95: t_quantile_975(n_batches - 1) * std_error,
        n_samples: n,
        n_batches,
        flagged: false,
    }
}

fn t_quantile_975(dof: usize) -> f64 {
    StudentsT::new(0.0, 1.0, dof as f64)
        .expect("valid Student-t")
        .inverse_cdf(0.975)
}

/// Number of leading samples discarded as initial transient.
pub fn warmup_len(n: usize) -> usize {
    n.div_ceil(100).max(100)
}

#[derive(Debug, Clone, Copy, Default)]
struct SourceTrack {
    last_gen: f64,
    last_delivery: f64,
    last_span: f64,
    initialized: bool,
    deliveries: u64,
    stale: u64,
}

/// What [`AoiTracker::record_delivery`] did with a delivery.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeliveryRecord {
    /// Peak age just before this delivery; `None` for the first delivery of a
    /// source and for stale deliveries.
    pub paoi: Option<f64>,
    /// The update was older than one already delivered for this source.
    pub stale: bool,
}

/// Per-source age tracking at a receiver.
#[derive(Debug, Clone)]
pub struct AoiTracker {
    sources: BTreeMap<EntityId, SourceTrack>,
    samples: Vec<(EntityId, f64)>,
    stale: u64,
    span_tolerance: f64,
}

impl Default for AoiTracker {
    fn default() -> Self {
        Self::new()
    }
}

impl AoiTracker {
    pub fn new() -> Self {
        Self {
            sources: BTreeMap::new(),
            samples: Vec::new(),
            stale: 0,
            span_tolerance: 1e-9,
        }
    }

    /// Records the delivery at `now` of an update generated at `gen_time` whose
    /// realized service span was `service_span`.
    ///
    /// The peak age is computed as `(now - previous delivery) + previous span`
    /// and as `now - previous generation time`; the two must agree.
    pub fn record_delivery(
        &mut self,
        source: EntityId,
        gen_time: f64,
        now: f64,
        service_span: f64,
    ) -> Result<DeliveryRecord, MetricsError> {
        if now < gen_time {
            return Err(MetricsError::DeliveryBeforeGeneration { entity: source, gen_time, now });
        }
        let track = self.sources.entry(source).or_default();
        if !track.initialized {
            *track = SourceTrack {
                last_gen: gen_time,
                last_delivery: now,
                last_span: service_span,
                initialized: true,
                deliveries: 1,
                stale: 0,
            };
            return Ok(DeliveryRecord {
                paoi: None,
                stale: false,
            });
        }
        if now < track.last_delivery {
            return Err(MetricsError::DeliveryOrder {
                entity: source,
                previous: track.last_delivery,
                now,
            });
        }
        if gen_time <= track.last_gen {
            track.stale += 1;
            track.deliveries += 1;
            self.stale += 1;
            return Ok(DeliveryRecord {
                paoi: None,
                stale: true,
            });
        }
        let via_interdeparture = (now - track.last_delivery) + track.last_span;
        let via_age = now - track.last_gen;
        if (via_interdeparture - via_age).abs() > self.span_tolerance * via_age.abs().max(1.0) {
            return Err(MetricsError::PathMismatch {
                entity: source,
                via_interdeparture,
                via_age,
            });
        }
        track.last_gen = gen_time;
        track.last_delivery = now;
        track.last_span = service_span;
        track.deliveries += 1;
        self.samples.push((source, via_age));
        Ok(DeliveryRecord {
            paoi: Some(via_age),
            stale: false,
        })
    }

    pub fn stale(&self) -> u64 {
        self.stale
    }

    pub fn deliveries(&self) -> u64 {
        self.sources.values().map(|s| s.deliveries).sum()
    }

    /// All peak-age samples in delivery order.
    pub fn samples(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.1)
    }

    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }

    /// Summary of the samples after discarding `warmup` leading samples.
    pub fn summary(&self, warmup: usize, n_batches: usize) -> (Summary, Vec<SourceSummary>) {
        let kept = &self.samples[warmup.min(self.samples.len())..];
        let values: Vec<f64> = kept.iter().map(|s| s.1).collect();
        let mut per: BTreeMap<EntityId, (u64, f64)> = BTreeMap::new();
        for &(src, a) in kept {
            let e = per.entry(src).or_default();
            e.0 += 1;
            e.1 += a;
        }
        let per_source = self
            .sources
            .iter()
            .map(|(&source, t)| {
                let (n, sum) = per.get(&source).copied().unwrap_or_default();
                SourceSummary {
                    source,
                    deliveries: t.deliveries,
                    samples: n,
                    mean_paoi: if n > 0 { sum / n as f64 } else { f64::NAN },
                }
            })
            .collect();
        (summarize(&values, n_batches), per_source)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SourceSummary {
    pub source: EntityId,
    pub deliveries: u64,
    pub samples: u64,
    pub mean_paoi: f64,
}

/// Loss ratio by cause, each as a fraction of resolved (non in-flight) updates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PlrBreakdown {
    pub channel: f64,
    pub preempt: f64,
    pub replace: f64,
    pub busy: f64,
    pub access_fail: f64,
}

impl PlrBreakdown {
    pub fn sum(&self) -> f64 {
        self.channel + self.preempt + self.replace + self.busy + self.access_fail
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub mean_paoi: Summary,
    pub generated: u64,
    pub delivered: u64,
    pub in_flight: u64,
    pub losses: LossCounters,
    /// Deliveries excluded from the peak-age samples because a fresher update
    /// of the same source had already arrived.
    pub stale: u64,
    pub warmup_discarded: usize,
    pub per_source: Vec<SourceSummary>,
    /// Set when the run stopped on its event budget before its target.
    pub truncated: bool,
}

impl RunResult {
    pub fn from_tracker(
        tracker: &AoiTracker,
        generated: u64,
        delivered: u64,
        in_flight: u64,
        losses: LossCounters,
        n_batches: usize,
    ) -> Self {
        let warmup = warmup_len(tracker.sample_count()).min(tracker.sample_count());
        let (mean_paoi, per_source) = tracker.summary(warmup, n_batches);
        Self {
            mean_paoi,
            generated,
            delivered,
            in_flight,
            losses,
            stale: tracker.stale(),
            warmup_discarded: warmup,
            per_source,
            truncated: false,
        }
    }

    fn resolved(&self) -> u64 {
        self.generated.saturating_sub(self.in_flight)
    }

    pub fn plr(&self) -> f64 {
        match self.resolved() {
            0 => 0.0,
            r => self.losses.total() as f64 / r as f64,
        }
    }

    pub fn plr_breakdown(&self) -> PlrBreakdown {
        let r = self.resolved();
        if r == 0 {
            return PlrBreakdown::default();
        }
        let f = |c| self.losses.get(c) as f64 / r as f64;
        PlrBreakdown {
            channel: f(LossCause::Channel),
            preempt: f(LossCause::Preempt),
            replace: f(LossCause::Replace),
            busy: f(LossCause::Busy),
            access_fail: f(LossCause::AccessFail),
        }
    }

    pub fn check_conservation(&self) -> Result<(), MetricsError> {
        let lost = self.losses.total();
        if self.generated == self.delivered + lost + self.in_flight {
            Ok(())
        } else {
            Err(MetricsError::Conservation {
                generated: self.generated,
                delivered: self.delivered,
                lost,
                in_flight: self.in_flight,
            })
        }
    }
}
