//! Monte-Carlo simulation of the abstract single-server model: Poisson
//! updates, deterministic service `mu`, and an independent failure with
//! probability `alpha` at the end of every service round.
//!
//! Preemption happens only at arrival instants. Under PR-RT a failed round
//! restarts immediately with a fresh `mu`. Every other discipline treats a
//! failure as a terminal channel loss.

use std::collections::VecDeque;

use serde::Serialize;
use thiserror::Error;

use crate::des::{Engine, Event, EventKind, Handle, Model, Seconds, StopRule};
use crate::error::ParamError;
use crate::metrics::{AoiTracker, LossCause, LossCounters, MetricsError, RunResult, DEFAULT_BATCHES};
use crate::model::{Discipline, ModelParams, Update, UpdateKind};
use crate::rng::{Purpose, RngStream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InService {
    pub update: Update,
    pub started: f64,
    pub ends: f64,
    pub attempts: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ArrivalOutcome {
    /// The server was idle; service started.
    Started,
    /// Appended to the waiting line.
    Enqueued,
    /// Took the waiting place of an older update, which was dropped.
    ReplacedWaiting,
    /// Took over the server from the update in service, which was dropped.
    PreemptedServer,
    /// Discarded because the server was busy.
    DroppedBusy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Delivery {
    pub update: Update,
    pub time: f64,
    /// Time from generation to delivery: queueing wait plus all service rounds.
    pub service_span: f64,
    pub attempts: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ServiceEndOutcome {
    Delivered(Delivery),
    /// The round failed and the same update restarted service.
    Retransmitting,
    /// The round failed and the update was dropped.
    Lost,
}

/// Single-server buffer state under one discipline.
#[derive(Debug, Clone)]
pub struct QueueState {
    discipline: Discipline,
    server: Option<InService>,
    waiting: VecDeque<Update>,
    pub losses: LossCounters,
    pub arrivals: u64,
    pub deliveries: u64,
}

impl QueueState {
    pub fn new(discipline: Discipline) -> Self {
        Self {
            discipline,
            server: None,
            waiting: VecDeque::new(),
            losses: LossCounters::default(),
            arrivals: 0,
            deliveries: 0,
        }
    }

    pub fn discipline(&self) -> Discipline {
        self.discipline
    }

    pub fn server(&self) -> Option<&InService> {
        self.server.as_ref()
    }

    pub fn waiting(&self) -> &VecDeque<Update> {
        &self.waiting
    }

    pub fn in_system(&self) -> usize {
        usize::from(self.server.is_some()) + self.waiting.len()
    }

    fn start(&mut self, update: Update, now: f64, mu: f64) {
        self.server = Some(InService {
            update,
            started: now,
            ends: now + mu,
            attempts: 1,
        });
    }

    pub fn step_arrival(&mut self, update: Update, now: f64, mu: f64) -> ArrivalOutcome {
        self.arrivals += 1;
        if self.server.is_none() {
            debug_assert!(self.waiting.is_empty());
            self.start(update, now, mu);
            return ArrivalOutcome::Started;
        }
        match self.discipline {
            Discipline::Fcfs => {
                self.waiting.push_back(update);
                ArrivalOutcome::Enqueued
            }
            Discipline::Npr => {
                self.losses.record(LossCause::Busy);
                ArrivalOutcome::DroppedBusy
            }
            Discipline::Pr | Discipline::Prrt => {
                self.losses.record(LossCause::Preempt);
                self.start(update, now, mu);
                ArrivalOutcome::PreemptedServer
            }
            Discipline::Replace2 => {
                if self.waiting.is_empty() {
                    self.waiting.push_back(update);
                    ArrivalOutcome::Enqueued
                } else {
                    self.losses.record(LossCause::Replace);
                    self.waiting[0] = update;
                    ArrivalOutcome::ReplacedWaiting
                }
            }
        }
    }

    /// Frees the server without a channel draw and admits the next waiting
    /// update at `now`. Returns the update that was in service.
    pub fn release(&mut self, now: f64) -> Option<Update> {
        let done = self.server.take()?;
        if let Some(next) = self.waiting.pop_front() {
            self.start(next, now, 0.0);
        }
        Some(done.update)
    }

    /// Ends the current service round at `now`. Panics if the server is idle.
    pub fn step_service_end(&mut self, now: f64, mu: f64, rng: &mut RngStream, alpha: f64) -> ServiceEndOutcome {
        let current = self.server.take().expect("service end while idle");
        let outcome = if rng.bernoulli(alpha) {
            if self.discipline.retransmits_until_preempted() {
                self.server = Some(InService {
                    ends: now + mu,
                    attempts: current.attempts + 1,
                    ..current
                });
                return ServiceEndOutcome::Retransmitting;
            }
            self.losses.record(LossCause::Channel);
            ServiceEndOutcome::Lost
        } else {
            self.deliveries += 1;
            let wait = current.started - current.update.gen_time();
            ServiceEndOutcome::Delivered(Delivery {
                update: current.update,
                time: now,
                service_span: wait + f64::from(current.attempts) * mu,
                attempts: current.attempts,
            })
        };
        if let Some(next) = self.waiting.pop_front() {
            self.start(next, now, mu);
        }
        outcome
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AbstractRunConfig {
    pub n_deliveries: u64,
    pub seed: u64,
    /// Event budget; `None` picks a generous bound from `n_deliveries`.
    pub max_events: Option<u64>,
    pub n_batches: usize,
}

impl AbstractRunConfig {
    pub fn new(n_deliveries: u64, seed: u64) -> Self {
        Self {
            n_deliveries,
            seed,
            max_events: None,
            n_batches: DEFAULT_BATCHES,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AbstractRun {
    pub result: RunResult,
    /// Mean generation-to-delivery span of delivered updates.
    pub mean_service_span: f64,
    /// Mean number of service rounds per delivered update.
    pub mean_attempts: f64,
    /// Deliveries whose generation time precedes that of an earlier delivery.
    pub out_of_order: u64,
    pub events: u64,
}

#[derive(Debug, Error)]
pub enum QueueError {
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("n_deliveries must be at least 1")]
    NoDeliveries,
    #[error("event budget exhausted after {} deliveries", partial.result.delivered)]
    Truncated { partial: Box<AbstractRun> },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("scheduler: {0}")]
    Des(#[from] crate::des::DesError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum QueueEvent {
    Arrival,
    ServiceEnd,
}

impl EventKind for QueueEvent {
    fn kind(&self) -> &'static str {
        match self {
            QueueEvent::Arrival => "ARRIVAL",
            QueueEvent::ServiceEnd => "SERVICE_END",
        }
    }
}

struct AbstractModel {
    params: ModelParams,
    target: u64,
    state: QueueState,
    arrivals: RngStream,
    channel: RngStream,
    tracker: AoiTracker,
    next_id: u64,
    service_handle: Option<Handle>,
    span_sum: f64,
    attempts_sum: u64,
    last_gen_delivered: f64,
    out_of_order: u64,
    error: Option<QueueError>,
}

impl AbstractModel {
    fn schedule_service_end(&mut self, engine: &mut Engine<Seconds, QueueEvent>) -> Result<(), QueueError> {
        if let Some(s) = self.state.server() {
            self.service_handle = Some(engine.schedule(Seconds(s.ends), 0, QueueEvent::ServiceEnd)?);
        }
        Ok(())
    }

    fn on_arrival(&mut self, engine: &mut Engine<Seconds, QueueEvent>) -> Result<(), QueueError> {
        let now = engine.now().0;
        let update = Update::new(self.next_id, 0, now, UpdateKind::UplinkStatus);
        self.next_id += 1;
        match self.state.step_arrival(update, now, self.params.mu) {
            ArrivalOutcome::Started => self.schedule_service_end(engine)?,
            ArrivalOutcome::PreemptedServer => {
                if let Some(h) = self.service_handle.take() {
                    engine.cancel(h);
                }
                self.schedule_service_end(engine)?;
            }
            ArrivalOutcome::Enqueued | ArrivalOutcome::ReplacedWaiting | ArrivalOutcome::DroppedBusy => {}
        }
        let gap = self.arrivals.exp(self.params.lambda_f)?;
        engine.schedule(Seconds(now + gap), 0, QueueEvent::Arrival)?;
        Ok(())
    }

    fn on_service_end(&mut self, engine: &mut Engine<Seconds, QueueEvent>) -> Result<(), QueueError> {
        let now = engine.now().0;
        self.service_handle = None;
        let outcome = self
            .state
            .step_service_end(now, self.params.mu, &mut self.channel, self.params.alpha);
        if let ServiceEndOutcome::Delivered(d) = outcome {
            let gen = d.update.gen_time();
            if gen < self.last_gen_delivered {
                self.out_of_order += 1;
            }
            self.last_gen_delivered = self.last_gen_delivered.max(gen);
            self.span_sum += d.service_span;
            self.attempts_sum += u64::from(d.attempts);
            self.tracker.record_delivery(0, gen, now, d.service_span)?;
        }
        self.schedule_service_end(engine)
    }
}

impl Model<Seconds, QueueEvent> for AbstractModel {
    fn handle(&mut self, engine: &mut Engine<Seconds, QueueEvent>, event: Event<Seconds, QueueEvent>) {
        if self.error.is_some() {
            return;
        }
        let r = match event.payload {
            QueueEvent::Arrival => self.on_arrival(engine),
            QueueEvent::ServiceEnd => self.on_service_end(engine),
        };
        if let Err(e) = r {
            self.error = Some(e);
        }
    }

    fn is_done(&self) -> bool {
        self.error.is_some() || self.state.deliveries >= self.target
    }
}

/// Runs the abstract model until `n_deliveries` updates have been delivered.
pub fn simulate_abstract(params: &ModelParams, config: &AbstractRunConfig) -> Result<AbstractRun, QueueError> {
    params.validate()?;
    if config.n_deliveries == 0 {
        return Err(QueueError::NoDeliveries);
    }
    let mut model = AbstractModel {
        params: *params,
        target: config.n_deliveries,
        state: QueueState::new(params.discipline),
        arrivals: RngStream::for_entity(config.seed, 0, Purpose::Arrivals),
        channel: RngStream::for_entity(config.seed, 0, Purpose::Channel),
        tracker: AoiTracker::new(),
        next_id: 0,
        service_handle: None,
        span_sum: 0.0,
        attempts_sum: 0,
        last_gen_delivered: f64::NEG_INFINITY,
        out_of_order: 0,
        error: None,
    };
    let mut engine: Engine<Seconds, QueueEvent> = Engine::new(Seconds(0.0));
    let first = model.arrivals.exp(params.lambda_f)?;
    engine.schedule(Seconds(first), 0, QueueEvent::Arrival)?;

    // Each delivery needs at least one arrival and one service end; the
    // budget covers very lossy or heavily preempted configurations.
    let budget = config
        .max_events
        .unwrap_or_else(|| config.n_deliveries.saturating_mul(10_000).max(1_000_000));
    let stats = engine.run_until(&mut model, &StopRule::default().with_max_events(budget))?;
    if let Some(e) = model.error.take() {
        return Err(e);
    }

    let state = &model.state;
    let mut result = RunResult::from_tracker(
        &model.tracker,
        state.arrivals,
        state.deliveries,
        state.in_system() as u64,
        state.losses,
        config.n_batches,
    );
    let delivered = state.deliveries.max(1) as f64;
    result.truncated = state.deliveries < config.n_deliveries;
    let run = AbstractRun {
        mean_service_span: model.span_sum / delivered,
        mean_attempts: model.attempts_sum as f64 / delivered,
        out_of_order: model.out_of_order,
        events: stats.events,
        result,
    };
    if run.result.truncated {
        return Err(QueueError::Truncated { partial: Box::new(run) });
    }
    Ok(run)
}
