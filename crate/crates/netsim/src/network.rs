//! Slot-level simulation of the trunked and direct-mode scenarios.
//!
//! Entity ids: first responders `0..n_f`, background terminals
//! `n_f..n_f + n_c`, the remote agent (behind the base station) `n_f + n_c`,
//! and in direct mode the gateway `n_f + n_c + 1`.

use std::collections::{HashMap, HashSet, VecDeque};
use std::io::Write;

use serde::Serialize;
use tetra_aoi_core::des::{DesError, Engine, Event, EventKind, Model, StopReason, StopRule};
use tetra_aoi_core::metrics::{AoiTracker, LossCause, LossCounters, MetricsError, RunResult, DEFAULT_BATCHES};
use tetra_aoi_core::queue::{ArrivalOutcome, QueueState};
use tetra_aoi_core::time::{first_slot_of_frame, frame_of, is_control_frame, Slot};
use tetra_aoi_core::{Discipline, EntityId, Purpose, RngStream, SlotClock, Update, UpdateId, UpdateKind};
use thiserror::Error;

use crate::config::{ConfigError, Mode, ScenarioConfig};
use crate::dmo::{self, DmoChannel, DmoMs, DmoPhase};
use crate::ledger::Ledger;
use crate::tmo::{self, arbitrate_slot, next_access_opportunity, Reservations, Role, SlotOutcome, TmoMs, TmoPhase};
use crate::traffic::{Poisson, Stream};

const DEFAULT_MAX_EVENTS: u64 = 2_000_000_000;

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("scheduler: {0}")]
    Des(#[from] DesError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("event budget exhausted after {events} events at t = {at:.3} s")]
    Truncated { events: u64, at: f64 },
    #[error("trace output: {0}")]
    Trace(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum NetEvent {
    Traffic { stream: Stream, index: usize },
    AccessTx { ms: usize, token: u64 },
    Resolve { frame: u64 },
    MacResult { ms: usize, token: u64, frame: u64, grant: Option<Vec<u64>> },
    FragTx { ms: usize, token: u64, last: bool },
    Ack { ms: usize, token: u64, update: Update, access_frame: u64 },
    AckTimeout { ms: usize, token: u64 },
    CallEnd { ms: usize },
    FeedbackBurst,
    DmoStart { fr: usize, token: u64 },
    DmoResolve { channel: usize },
    DmoRx { fr: usize, token: u64, update: Update },
    DmoAck { fr: usize, token: u64, received: bool },
    DmoTimeout { fr: usize, token: u64 },
    ChannelFree { channel: usize },
}

impl EventKind for NetEvent {
    fn kind(&self) -> &'static str {
        match self {
            NetEvent::Traffic { .. } => "GEN",
            NetEvent::AccessTx { .. } => "ACCESS",
            NetEvent::Resolve { .. } => "ARBITRATE",
            NetEvent::MacResult { .. } => "RESOURCE",
            NetEvent::FragTx { .. } => "FRAG",
            NetEvent::Ack { .. } => "ACK",
            NetEvent::AckTimeout { .. } => "ACK_TIMEOUT",
            NetEvent::CallEnd { .. } => "CALL_END",
            NetEvent::FeedbackBurst => "FEEDBACK",
            NetEvent::DmoStart { .. } => "DSB",
            NetEvent::DmoResolve { .. } => "DMO_ARBITRATE",
            NetEvent::DmoRx { .. } => "FRAG",
            NetEvent::DmoAck { .. } => "DMO_ACK",
            NetEvent::DmoTimeout { .. } => "DT316",
            NetEvent::ChannelFree { .. } => "CHANNEL_FREE",
        }
    }
}

/// MAC-level counters of one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MacStats {
    /// MAC-ACCESS bursts sent by all terminals.
    pub access_tx: u64,
    pub fr_access_tx: u64,
    pub fr_access_failed: u64,
    /// Access slots in which at least one burst was sent.
    pub access_slots_used: u64,
    pub access_collisions: u64,
    pub collided_tx: u64,
    pub access_errors: u64,
    /// Messages abandoned after `nu` failed attempts.
    pub access_failures: u64,
    /// Access attempts pushed back because the frame was reserved.
    pub deferred_access: u64,
    pub control_frame_tx: u64,
    pub max_attempt: u32,
    pub reserved_overlaps: u64,
    pub fragments: u64,
    pub fragment_errors: u64,
    pub acks_lost: u64,
    pub ack_timeouts: u64,
    /// First-responder transmission rounds (random access through ACK).
    pub fr_rounds: u64,
    pub fr_rounds_failed: u64,
    pub calls_started: u64,
    pub calls_ended: u64,
    pub calls_failed: u64,
    pub bg_generated: u64,
    pub bg_delivered: u64,
    pub bg_lost: u64,
    pub feedback_bursts: u64,
    pub dmo_resolves: u64,
    pub dmo_starts: u64,
    pub dmo_collisions: u64,
    pub dmo_aborted: u64,
    pub dmo_duplicates: u64,
    pub dmo_acks_lost: u64,
    pub relay_enqueued: u64,
    pub master_overlaps: u64,
    /// Slots from the successful access burst to delivery, first responders only.
    pub pipeline_min: Option<u64>,
    pub pipeline_max: Option<u64>,
}

impl MacStats {
    pub fn access_collision_rate(&self) -> f64 {
        ratio(self.access_collisions, self.access_slots_used)
    }

    pub fn dmo_collision_rate(&self) -> f64 {
        ratio(self.dmo_collisions, self.dmo_resolves)
    }

    /// Fraction of first-responder transmission rounds that did not end in
    /// an acknowledged delivery; the protocol counterpart of `alpha`.
    pub fn alpha_emergent(&self) -> f64 {
        ratio(self.fr_rounds_failed, self.fr_rounds)
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StreamCounts {
    pub status: u64,
    pub background_sds: u64,
    pub voice: u64,
    pub feedback: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetRunResult {
    pub mode: Mode,
    pub setting: Option<u8>,
    pub fr_discipline: Discipline,
    pub gw_discipline: Option<Discipline>,
    pub entities: usize,
    /// First responder to remote agent.
    pub uplink: RunResult,
    /// Remote agent to first responder (to the gateway in direct mode).
    pub feedback: RunResult,
    pub mac: MacStats,
    /// Mean generation-to-delivery time of delivered status updates.
    pub mean_latency: f64,
    pub generated: StreamCounts,
    pub end_time: f64,
    pub events: u64,
}

#[derive(Debug, Clone)]
struct Reception {
    token: u64,
    update: Update,
    access_frame: u64,
    remaining: u32,
    ok: bool,
}

type AccessBurst = (usize, u64, Update);

struct Network {
    cfg: ScenarioConfig,
    clock: SlotClock,
    agent: EntityId,
    tmo: Vec<TmoMs>,
    call_rng: Vec<RngStream>,
    bg_base: usize,
    gateway: Option<usize>,
    dmo: Vec<DmoMs>,
    channels: Vec<DmoChannel>,
    status: Vec<Poisson>,
    bg_sds: Vec<Poisson>,
    voice: Vec<Poisson>,
    feedback: Poisson,
    fb_target_rng: RngStream,
    bs_rng: RngStream,
    /// Frame of the pending access slot and its (terminal, token, update) bursts.
    access_slot: Option<(u64, Vec<AccessBurst>)>,
    reservations: Reservations,
    receptions: HashMap<usize, Reception>,
    fb_queue: VecDeque<Update>,
    fb_burst_scheduled: bool,
    fb_generated: u64,
    fb_delivered: u64,
    ledger: Ledger,
    uplink: AoiTracker,
    fb_tracker: AoiTracker,
    bg_seen: HashSet<UpdateId>,
    next_id: UpdateId,
    mac: MacStats,
    latency_sum: f64,
    error: Option<NetError>,
}

type Eng = Engine<Slot, NetEvent>;
type Res = Result<(), NetError>;

impl Network {
    fn build(cfg: &ScenarioConfig) -> Result<Self, NetError> {
        cfg.validate()?;
        let seed = cfg.seed;
        let n_f = cfg.n_f as usize;
        let n_c = cfg.n_c as usize;
        let agent = (n_f + n_c) as EntityId;
        let fr_d = cfg.fr_discipline();

        let tmo_ms = |entity: EntityId, role: Role, d: Discipline| TmoMs {
            entity,
            role,
            buffer: QueueState::new(d),
            phase: TmoPhase::Idle,
            token: 0,
            round: 0,
            retx_limit: tmo::retx_limit(d, &cfg.tmo),
            exchanges_left: 0,
            timeout: None,
            access_rng: RngStream::for_entity(seed, entity, Purpose::Access),
            channel_rng: RngStream::for_entity(seed, entity, Purpose::Channel),
        };

        let mut tmo = Vec::new();
        let mut dmo = Vec::new();
        let mut gateway = None;
        match cfg.mode {
            Mode::Tmo => {
                for i in 0..n_f {
                    tmo.push(tmo_ms(i as EntityId, Role::FirstResponder, fr_d));
                }
            }
            Mode::Dmo => {
                let gw_d = cfg.gw_discipline().expect("direct mode has a gateway discipline");
                gateway = Some(tmo.len());
                tmo.push(tmo_ms(agent + 1, Role::Gateway, gw_d));
                for i in 0..n_f {
                    let e = i as EntityId;
                    dmo.push(DmoMs {
                        entity: e,
                        channel: i % cfg.dmo.channels as usize,
                        buffer: QueueState::new(fr_d),
                        phase: DmoPhase::Idle,
                        token: 0,
                        round: 0,
                        retx_limit: dmo::retx_limit(fr_d, &cfg.dmo),
                        timeout: None,
                        backoff_rng: RngStream::for_entity(seed, e, Purpose::Backoff),
                        channel_rng: RngStream::for_entity(seed, e, Purpose::Channel),
                    });
                }
            }
        }
        let bg_base = tmo.len();
        let mut bg_sds = Vec::with_capacity(n_c);
        let mut voice = Vec::with_capacity(n_c);
        for j in 0..n_c {
            let e = (n_f + j) as EntityId;
            tmo.push(tmo_ms(e, Role::Background, cfg.bg_discipline));
            bg_sds.push(Poisson::new(cfg.lambda_c, RngStream::for_entity(seed, e, Purpose::Arrivals)));
            voice.push(Poisson::new(cfg.lambda_voice, RngStream::for_entity(seed, e, Purpose::VoiceCalls)));
        }
        let call_rng = tmo
            .iter()
            .map(|m| RngStream::for_entity(seed, m.entity, Purpose::CallDuration))
            .collect();
        let status = (0..n_f)
            .map(|i| Poisson::new(cfg.lambda_f, RngStream::for_entity(seed, i as EntityId, Purpose::Arrivals)))
            .collect();

        Ok(Self {
            cfg: cfg.clone(),
            clock: SlotClock::new(cfg.frame_dur_ms).map_err(|e| ConfigError::invalid("frame_dur_ms", e.to_string()))?,
            agent,
            tmo,
            call_rng,
            bg_base,
            gateway,
            dmo,
            channels: vec![DmoChannel::default(); cfg.dmo.channels as usize],
            status,
            bg_sds,
            voice,
            feedback: Poisson::new(cfg.feedback_rate(), RngStream::for_entity(seed, agent, Purpose::Feedback)),
            fb_target_rng: RngStream::for_entity(seed, agent, Purpose::Target),
            bs_rng: RngStream::for_entity(seed, agent, Purpose::Channel),
            access_slot: None,
            reservations: Reservations::default(),
            receptions: HashMap::new(),
            fb_queue: VecDeque::new(),
            fb_burst_scheduled: false,
            fb_generated: 0,
            fb_delivered: 0,
            ledger: Ledger::default(),
            uplink: AoiTracker::new(),
            fb_tracker: AoiTracker::new(),
            bg_seen: HashSet::new(),
            next_id: 0,
            mac: MacStats::default(),
            latency_sum: 0.0,
            error: None,
        })
    }

    fn source(&mut self, stream: Stream, index: usize) -> &mut Poisson {
        match stream {
            Stream::Status => &mut self.status[index],
            Stream::BackgroundSds => &mut self.bg_sds[index],
            Stream::Voice => &mut self.voice[index],
            Stream::Feedback => &mut self.feedback,
        }
    }

    fn stream_target(&self, stream: Stream, index: usize) -> EntityId {
        match stream {
            Stream::Status => index as EntityId,
            Stream::BackgroundSds | Stream::Voice => self.cfg.n_f + index as EntityId,
            Stream::Feedback => self.agent,
        }
    }

    fn schedule_next_arrival(&mut self, eng: &mut Eng, stream: Stream, index: usize) -> Res {
        if let Some(t) = self.source(stream, index).peek() {
            let slot = self.clock.seconds_to_slot_ceil(t);
            let target = self.stream_target(stream, index);
            eng.schedule(slot, target, NetEvent::Traffic { stream, index })?;
        }
        Ok(())
    }

    fn prime(&mut self, eng: &mut Eng) -> Res {
        for i in 0..self.status.len() {
            self.schedule_next_arrival(eng, Stream::Status, i)?;
        }
        for j in 0..self.bg_sds.len() {
            self.schedule_next_arrival(eng, Stream::BackgroundSds, j)?;
            self.schedule_next_arrival(eng, Stream::Voice, j)?;
        }
        self.schedule_next_arrival(eng, Stream::Feedback, 0)
    }

    fn new_update(&mut self, source: EntityId, gen_time: f64, kind: UpdateKind) -> Update {
        let id = self.next_id;
        self.next_id += 1;
        Update::new(id, source, gen_time, kind)
    }

    fn now_s(&self, eng: &Eng) -> f64 {
        self.clock.slot_to_seconds(eng.now())
    }

    fn dispatch(&mut self, eng: &mut Eng, ev: NetEvent) -> Res {
        match ev {
            NetEvent::Traffic { stream, index } => self.on_traffic(eng, stream, index),
            NetEvent::AccessTx { ms, token } => self.on_access_tx(eng, ms, token),
            NetEvent::Resolve { frame } => self.on_resolve(eng, frame),
            NetEvent::MacResult {
                ms,
                token,
                frame,
                grant,
            } => self.on_mac_result(eng, ms, token, frame, grant),
            NetEvent::FragTx { ms, token, last } => self.on_frag_tx(eng, ms, token, last),
            NetEvent::Ack {
                ms,
                token,
                update,
                access_frame,
            } => self.on_ack(eng, ms, token, update, access_frame),
            NetEvent::AckTimeout { ms, token } => self.on_ack_timeout(eng, ms, token),
            NetEvent::CallEnd { .. } => {
                self.mac.calls_ended += 1;
                Ok(())
            }
            NetEvent::FeedbackBurst => self.on_feedback_burst(eng),
            NetEvent::DmoStart { fr, token } => self.on_dmo_start(eng, fr, token),
            NetEvent::DmoResolve { channel } => self.on_dmo_resolve(eng, channel),
            NetEvent::DmoRx { fr, token, update } => self.on_dmo_rx(eng, fr, token, update),
            NetEvent::DmoAck { fr, token, received } => self.on_dmo_ack(eng, fr, token, received),
            NetEvent::DmoTimeout { fr, token } => self.on_dmo_timeout(eng, fr, token),
            NetEvent::ChannelFree { channel } => self.on_channel_free(eng, channel),
        }
    }

    // ---- traffic ----

    fn on_traffic(&mut self, eng: &mut Eng, stream: Stream, index: usize) -> Res {
        let gen_time = self.source(stream, index).advance().expect("scheduled source has an arrival");
        match stream {
            Stream::Status => {
                let u = self
                    .new_update(index as EntityId, gen_time, UpdateKind::UplinkStatus)
                    .with_fragments(self.cfg.n_fragments);
                self.ledger.register(u.id(), index as EntityId);
                match self.cfg.mode {
                    Mode::Tmo => self.on_update_arrival(eng, index, u)?,
                    Mode::Dmo => self.dmo_arrival(eng, index, u)?,
                }
            }
            Stream::BackgroundSds => {
                self.mac.bg_generated += 1;
                let e = self.stream_target(stream, index);
                let u = self.new_update(e, gen_time, UpdateKind::Background);
                self.on_update_arrival(eng, self.bg_base + index, u)?;
            }
            Stream::Voice => {
                let e = self.stream_target(stream, index);
                let u = self.new_update(e, gen_time, UpdateKind::CallSetup);
                self.on_update_arrival(eng, self.bg_base + index, u)?;
            }
            Stream::Feedback => {
                let target = self.fb_target_rng.below(u64::from(self.cfg.n_f)) as EntityId;
                let u = self.new_update(target, gen_time, UpdateKind::DownlinkFeedback);
                self.fb_generated += 1;
                self.fb_queue.push_back(u);
                self.schedule_feedback_burst(eng)?;
            }
        }
        self.schedule_next_arrival(eng, stream, index)
    }

    // ---- trunked mode ----

    /// A new message reaches terminal `m`'s buffer.
    fn on_update_arrival(&mut self, eng: &mut Eng, m: usize, update: Update) -> Res {
        let now_s = self.now_s(eng);
        let ms = &mut self.tmo[m];
        let entity = ms.entity;
        let prev_server = ms.buffer.server().map(|s| s.update.id());
        let prev_waiting = ms.buffer.waiting().front().map(|u| u.id());
        match ms.buffer.step_arrival(update, now_s, 0.0) {
            ArrivalOutcome::Started => self.tmo_begin_head(eng, m)?,
            ArrivalOutcome::Enqueued => {}
            ArrivalOutcome::ReplacedWaiting => {
                let old = prev_waiting.expect("replaced a waiting update");
                self.ledger.drop_by(old, entity, LossCause::Replace);
            }
            ArrivalOutcome::PreemptedServer => {
                let old = prev_server.expect("preempted an update in service");
                self.ledger.drop_by(old, entity, LossCause::Preempt);
                self.tmo_begin_head(eng, m)?;
            }
            ArrivalOutcome::DroppedBusy => {
                self.ledger.drop_by(update.id(), entity, LossCause::Busy);
            }
        }
        Ok(())
    }

    fn tmo_begin_head(&mut self, eng: &mut Eng, m: usize) -> Res {
        let setup = self.cfg.tmo.voice_setup_exchanges;
        let ms = &mut self.tmo[m];
        ms.token += 1;
        ms.round = 0;
        if let Some(h) = ms.timeout.take() {
            eng.cancel(h);
        }
        match ms.buffer.server().map(|s| s.update.kind()) {
            None => {
                ms.phase = TmoPhase::Idle;
                Ok(())
            }
            Some(kind) => {
                ms.exchanges_left = if kind == UpdateKind::CallSetup { setup } else { 0 };
                self.tmo_start_round(eng, m, 1, false)
            }
        }
    }

    fn tmo_start_round(&mut self, eng: &mut Eng, m: usize, attempt: u32, retry: bool) -> Res {
        let wt = self.cfg.tmo.wt;
        let ms = &mut self.tmo[m];
        let slot = next_access_opportunity(eng.now(), &mut ms.access_rng, retry, wt);
        ms.phase = TmoPhase::AwaitOpportunity {
            attempt,
            frame: frame_of(slot),
        };
        eng.schedule(slot, ms.entity, NetEvent::AccessTx { ms: m, token: ms.token })?;
        Ok(())
    }

    fn on_access_tx(&mut self, eng: &mut Eng, m: usize, token: u64) -> Res {
        let now = eng.now();
        let frame = frame_of(now);
        let wt = self.cfg.tmo.wt;
        let ms = &mut self.tmo[m];
        if ms.token != token {
            return Ok(());
        }
        let TmoPhase::AwaitOpportunity { attempt, .. } = ms.phase else {
            return Ok(());
        };
        if self.reservations.is_reserved(frame) {
            self.mac.deferred_access += 1;
            let slot = next_access_opportunity(now, &mut ms.access_rng, false, wt);
            ms.phase = TmoPhase::AwaitOpportunity {
                attempt,
                frame: frame_of(slot),
            };
            eng.schedule(slot, ms.entity, NetEvent::AccessTx { ms: m, token })?;
            return Ok(());
        }
        if is_control_frame(frame) {
            self.mac.control_frame_tx += 1;
        }
        let update = ms.buffer.server().expect("active terminal holds an update").update;
        ms.phase = TmoPhase::AwaitGrant { attempt, frame };
        self.mac.access_tx += 1;
        if ms.role == Role::FirstResponder {
            self.mac.fr_access_tx += 1;
        }
        self.mac.max_attempt = self.mac.max_attempt.max(attempt);
        match &mut self.access_slot {
            Some((f, txs)) if *f == frame => txs.push((m, token, update)),
            _ => {
                self.access_slot = Some((frame, vec![(m, token, update)]));
                eng.schedule(now + 1, self.agent, NetEvent::Resolve { frame })?;
            }
        }
        Ok(())
    }

    fn on_resolve(&mut self, eng: &mut Eng, frame: u64) -> Res {
        let Some((f, txs)) = self.access_slot.take() else {
            return Ok(());
        };
        debug_assert_eq!(f, frame);
        self.reservations.prune(frame);
        self.mac.access_slots_used += 1;
        let result_slot = first_slot_of_frame(frame + 1) + tmo::DOWNLINK_SLOT;
        let alpha = self.cfg.alpha_ch;
        let first = txs[0].0;
        let outcome = arbitrate_slot(txs.len(), &mut self.tmo[first].channel_rng, alpha);
        match outcome {
            SlotOutcome::Success => {
                let (m, token, update) = txs[0];
                let n = match update.kind() {
                    UpdateKind::CallSetup => 1,
                    _ => update.n_fragments(),
                };
                let before = self.reservations.len();
                let frames = self.reservations.reserve(n - 1, frame + 2);
                if self.reservations.len() != before + frames.len() {
                    self.mac.reserved_overlaps += 1;
                }
                // The grant goes out ahead of the ACK sharing its downlink slot.
                let e = self.tmo[m].entity;
                eng.schedule(
                    result_slot,
                    e,
                    NetEvent::MacResult {
                        ms: m,
                        token,
                        frame,
                        grant: Some(frames.clone()),
                    },
                )?;
                if update.kind() != UpdateKind::CallSetup {
                    if frames.is_empty() {
                        self.bs_complete(eng, m, token, update, frame, frame)?;
                    } else {
                        self.receptions.insert(
                            m,
                            Reception {
                                token,
                                update,
                                access_frame: frame,
                                remaining: n - 1,
                                ok: true,
                            },
                        );
                    }
                }
            }
            SlotOutcome::ChannelError | SlotOutcome::Collision(_) => {
                if let SlotOutcome::Collision(n) = outcome {
                    self.mac.access_collisions += 1;
                    self.mac.collided_tx += n as u64;
                } else {
                    self.mac.access_errors += 1;
                }
                for (m, token, _) in txs {
                    let e = self.tmo[m].entity;
                    eng.schedule(
                        result_slot,
                        e,
                        NetEvent::MacResult {
                            ms: m,
                            token,
                            frame,
                            grant: None,
                        },
                    )?;
                }
            }
            SlotOutcome::Empty => {}
        }
        Ok(())
    }

    /// The base station holds every fragment of a message: it forwards it to
    /// the agent and acknowledges in the next downlink frame.
    fn bs_complete(&mut self, eng: &mut Eng, m: usize, token: u64, update: Update, access_frame: u64, last: u64) -> Res {
        let entity = self.tmo[m].entity;
        self.ledger.hand_off(update.id(), entity, self.agent);
        eng.schedule(
            first_slot_of_frame(last + 1) + tmo::DOWNLINK_SLOT,
            entity,
            NetEvent::Ack {
                ms: m,
                token,
                update,
                access_frame,
            },
        )?;
        Ok(())
    }

    fn on_mac_result(&mut self, eng: &mut Eng, m: usize, token: u64, frame: u64, grant: Option<Vec<u64>>) -> Res {
        let nu = self.cfg.tmo.nu;
        let ack_timeout = u64::from(self.cfg.tmo.ack_timeout_frames);
        let ms = &mut self.tmo[m];
        if ms.token != token {
            return Ok(());
        }
        let TmoPhase::AwaitGrant { attempt, .. } = ms.phase else {
            return Ok(());
        };
        let entity = ms.entity;
        match grant {
            Some(frames) => {
                let update = ms.buffer.server().expect("granted terminal holds an update").update;
                if update.kind() == UpdateKind::CallSetup {
                    ms.exchanges_left = ms.exchanges_left.saturating_sub(1);
                    if ms.exchanges_left > 0 {
                        return self.tmo_start_round(eng, m, 1, false);
                    }
                    self.mac.calls_started += 1;
                    let [lo, hi] = self.cfg.call_dur;
                    let end = self.now_s(eng) + self.call_rng[m].uniform(lo, hi);
                    let slot = self.clock.seconds_to_slot_ceil(end);
                    eng.schedule(slot, entity, NetEvent::CallEnd { ms: m })?;
                    return self.tmo_finish(eng, m, None);
                }
                if frames.is_empty() {
                    self.await_ack(eng, m, frame, ack_timeout)?;
                } else {
                    ms.phase = TmoPhase::Reserved {
                        remaining: frames.len() as u32,
                    };
                    let n = frames.len();
                    for (k, h) in frames.into_iter().enumerate() {
                        eng.schedule(
                            first_slot_of_frame(h),
                            entity,
                            NetEvent::FragTx {
                                ms: m,
                                token,
                                last: k + 1 == n,
                            },
                        )?;
                    }
                }
            }
            None => {
                if ms.role == Role::FirstResponder {
                    self.mac.fr_access_failed += 1;
                }
                if attempt < nu {
                    return self.tmo_start_round(eng, m, attempt + 1, true);
                }
                self.mac.access_failures += 1;
                eng.trace(entity, "FAIL");
                self.round_end(m, false);
                return self.tmo_finish(eng, m, Some(LossCause::AccessFail));
            }
        }
        Ok(())
    }

    fn await_ack(&mut self, eng: &mut Eng, m: usize, last_frame: u64, ack_timeout: u64) -> Res {
        let ms = &mut self.tmo[m];
        ms.phase = TmoPhase::AwaitAck { last_frame };
        let h = eng.schedule(
            first_slot_of_frame(last_frame + ack_timeout) + tmo::TIMEOUT_SLOT,
            ms.entity,
            NetEvent::AckTimeout { ms: m, token: ms.token },
        )?;
        ms.timeout = Some(h);
        Ok(())
    }

    fn on_frag_tx(&mut self, eng: &mut Eng, m: usize, token: u64, last: bool) -> Res {
        let frame = frame_of(eng.now());
        let alpha = self.cfg.alpha_ch;
        let ack_timeout = u64::from(self.cfg.tmo.ack_timeout_frames);
        let ms = &mut self.tmo[m];
        if ms.token != token {
            return Ok(());
        }
        let err = ms.channel_rng.bernoulli(alpha);
        self.mac.fragments += 1;
        if err {
            self.mac.fragment_errors += 1;
        }
        if let Some(r) = self.receptions.get_mut(&m) {
            if r.token == token {
                r.ok &= !err;
                r.remaining = r.remaining.saturating_sub(1);
            }
        }
        if let TmoPhase::Reserved { remaining } = &mut ms.phase {
            *remaining = remaining.saturating_sub(1);
        }
        if !last {
            return Ok(());
        }
        self.await_ack(eng, m, frame, ack_timeout)?;
        if let Some(r) = self.receptions.remove(&m) {
            if r.token == token && r.ok && r.remaining == 0 {
                self.bs_complete(eng, m, token, r.update, r.access_frame, frame)?;
            }
        }
        Ok(())
    }

    fn on_ack(&mut self, eng: &mut Eng, m: usize, token: u64, update: Update, access_frame: u64) -> Res {
        self.bs_deliver(eng, update, access_frame)?;
        let alpha = self.cfg.alpha_ch;
        let ms = &mut self.tmo[m];
        if ms.channel_rng.bernoulli(alpha) {
            self.mac.acks_lost += 1;
            return Ok(());
        }
        if ms.token != token || !matches!(ms.phase, TmoPhase::AwaitAck { .. }) {
            return Ok(());
        }
        if let Some(h) = ms.timeout.take() {
            eng.cancel(h);
        }
        self.round_end(m, true);
        self.tmo_finish(eng, m, None)
    }

    fn bs_deliver(&mut self, eng: &mut Eng, update: Update, access_frame: u64) -> Res {
        match update.kind() {
            UpdateKind::UplinkStatus => {
                if self.ledger.deliver(update.id()) {
                    let now = eng.now();
                    let now_s = self.clock.slot_to_seconds(now);
                    let gen = update.gen_time();
                    self.uplink.record_delivery(update.source(), gen, now_s, now_s - gen)?;
                    self.latency_sum += now_s - gen;
                    if self.cfg.mode == Mode::Tmo {
                        let pipe = now - first_slot_of_frame(access_frame);
                        self.mac.pipeline_min = Some(self.mac.pipeline_min.map_or(pipe, |p| p.min(pipe)));
                        self.mac.pipeline_max = Some(self.mac.pipeline_max.map_or(pipe, |p| p.max(pipe)));
                    }
                }
            }
            UpdateKind::Background => {
                if self.bg_seen.insert(update.id()) {
                    self.mac.bg_delivered += 1;
                }
            }
            UpdateKind::DownlinkFeedback | UpdateKind::CallSetup => {}
        }
        Ok(())
    }

    fn on_ack_timeout(&mut self, eng: &mut Eng, m: usize, token: u64) -> Res {
        let ms = &mut self.tmo[m];
        if ms.token != token {
            return Ok(());
        }
        ms.timeout = None;
        self.mac.ack_timeouts += 1;
        self.round_end(m, false);
        let ms = &mut self.tmo[m];
        if ms.may_retransmit() {
            ms.round += 1;
            self.tmo_start_round(eng, m, 1, false)
        } else {
            eng.trace(ms.entity, "FAIL");
            self.tmo_finish(eng, m, Some(LossCause::Channel))
        }
    }

    fn round_end(&mut self, m: usize, ok: bool) {
        if self.tmo[m].role == Role::FirstResponder {
            self.mac.fr_rounds += 1;
            if !ok {
                self.mac.fr_rounds_failed += 1;
            }
        }
    }

    /// Ends the current message of terminal `m` and moves to the next one.
    fn tmo_finish(&mut self, eng: &mut Eng, m: usize, cause: Option<LossCause>) -> Res {
        let now_s = self.now_s(eng);
        let ms = &mut self.tmo[m];
        let entity = ms.entity;
        let done = ms.buffer.release(now_s);
        if let (Some(u), Some(cause)) = (done, cause) {
            match u.kind() {
                UpdateKind::Background => self.mac.bg_lost += 1,
                UpdateKind::CallSetup => self.mac.calls_failed += 1,
                _ => {
                    self.ledger.drop_by(u.id(), entity, cause);
                }
            }
        }
        self.tmo_begin_head(eng, m)
    }

    // ---- feedback ----

    fn schedule_feedback_burst(&mut self, eng: &mut Eng) -> Res {
        if !self.fb_burst_scheduled && !self.fb_queue.is_empty() {
            let slot = first_slot_of_frame(frame_of(eng.now()) + 1) + 3;
            eng.schedule(slot, self.agent, NetEvent::FeedbackBurst)?;
            self.fb_burst_scheduled = true;
        }
        Ok(())
    }

    fn on_feedback_burst(&mut self, eng: &mut Eng) -> Res {
        self.fb_burst_scheduled = false;
        if let Some(u) = self.fb_queue.front().copied() {
            self.mac.feedback_bursts += 1;
            if !self.bs_rng.bernoulli(self.cfg.alpha_ch) {
                self.fb_queue.pop_front();
                self.fb_delivered += 1;
                let now_s = self.now_s(eng);
                let gen = u.gen_time();
                self.fb_tracker.record_delivery(u.source(), gen, now_s, now_s - gen)?;
            }
        }
        self.schedule_feedback_burst(eng)
    }

    // ---- direct mode ----

    fn dmo_arrival(&mut self, eng: &mut Eng, i: usize, update: Update) -> Res {
        let now_s = self.now_s(eng);
        let ms = &mut self.dmo[i];
        let entity = ms.entity;
        let prev_server = ms.buffer.server().map(|s| s.update.id());
        let prev_waiting = ms.buffer.waiting().front().map(|u| u.id());
        match ms.buffer.step_arrival(update, now_s, 0.0) {
            ArrivalOutcome::Started => self.dmo_begin_head(eng, i)?,
            ArrivalOutcome::Enqueued => {}
            ArrivalOutcome::ReplacedWaiting => {
                self.ledger
                    .drop_by(prev_waiting.expect("replaced a waiting update"), entity, LossCause::Replace);
            }
            ArrivalOutcome::PreemptedServer => {
                let old = prev_server.expect("preempted an update in service");
                self.ledger.drop_by(old, entity, LossCause::Preempt);
                self.dmo_begin_head(eng, i)?;
            }
            ArrivalOutcome::DroppedBusy => {
                self.ledger.drop_by(update.id(), entity, LossCause::Busy);
            }
        }
        Ok(())
    }

    fn dmo_begin_head(&mut self, eng: &mut Eng, i: usize) -> Res {
        let ms = &mut self.dmo[i];
        ms.token += 1;
        ms.round = 0;
        if let Some(h) = ms.timeout.take() {
            eng.cancel(h);
        }
        if ms.buffer.server().is_some() {
            self.dmo_schedule_start(eng, i)
        } else {
            ms.phase = DmoPhase::Idle;
            Ok(())
        }
    }

    /// Draws a start slot in `now + 1 ..= now + backoff_slots`.
    fn dmo_schedule_start(&mut self, eng: &mut Eng, i: usize) -> Res {
        let b = u64::from(self.cfg.dmo.backoff_slots);
        let ms = &mut self.dmo[i];
        let start = eng.now() + 1 + ms.backoff_rng.below(b);
        ms.phase = DmoPhase::Backoff;
        eng.schedule(start, ms.entity, NetEvent::DmoStart { fr: i, token: ms.token })?;
        Ok(())
    }

    fn ensure_free_event(&mut self, eng: &mut Eng, c: usize) -> Res {
        let ch = &mut self.channels[c];
        if ch.free_event_at != Some(ch.busy_until) {
            ch.free_event_at = Some(ch.busy_until);
            eng.schedule(ch.busy_until, self.agent, NetEvent::ChannelFree { channel: c })?;
        }
        Ok(())
    }

    fn on_dmo_start(&mut self, eng: &mut Eng, i: usize, token: u64) -> Res {
        let now = eng.now();
        let ms = &mut self.dmo[i];
        if ms.token != token {
            return Ok(());
        }
        let c = ms.channel;
        let ch = &mut self.channels[c];
        if ch.is_busy(now) {
            ms.phase = DmoPhase::WaitingFree;
            ch.waiters.push((i, token));
            return self.ensure_free_event(eng, c);
        }
        ch.starters.push((i, token));
        if ch.resolve_at != Some(now) {
            ch.resolve_at = Some(now);
            eng.schedule(now, self.agent, NetEvent::DmoResolve { channel: c })?;
        }
        Ok(())
    }

    fn on_dmo_resolve(&mut self, eng: &mut Eng, c: usize) -> Res {
        let now = eng.now();
        let p = self.cfg.dmo.clone();
        let alpha = self.cfg.alpha_dmo();
        let ch = &mut self.channels[c];
        ch.resolve_at = None;
        let starters: Vec<(usize, u64)> = std::mem::take(&mut ch.starters)
            .into_iter()
            .filter(|&(i, tok)| self.dmo[i].token == tok)
            .collect();
        if starters.is_empty() {
            return Ok(());
        }
        self.mac.dmo_resolves += 1;
        self.mac.dmo_starts += starters.len() as u64;
        let frags = |ms: &DmoMs| ms.buffer.server().expect("starter holds an update").update.n_fragments();
        if let [(i, token)] = starters[..] {
            let ms = &mut self.dmo[i];
            let update = ms.buffer.server().expect("starter holds an update").update;
            let n = update.n_fragments();
            let mut ok = true;
            for _ in 0..n {
                if ms.channel_rng.bernoulli(alpha) {
                    ok = false;
                }
            }
            self.channels[c].occupy(now, now + dmo::occupancy_slots(&p, n), true);
            if ok {
                eng.schedule(
                    now + dmo::data_slots(&p, n),
                    ms.entity,
                    NetEvent::DmoRx { fr: i, token, update },
                )?;
            }
            eng.schedule(
                now + dmo::occupancy_slots(&p, n),
                ms.entity,
                NetEvent::DmoAck {
                    fr: i,
                    token,
                    received: ok,
                },
            )?;
        } else {
            self.mac.dmo_collisions += 1;
            let occ = starters
                .iter()
                .map(|&(i, _)| dmo::occupancy_slots(&p, frags(&self.dmo[i])))
                .max()
                .unwrap_or(0);
            self.channels[c].occupy(now, now + occ, false);
        }
        for &(i, token) in &starters {
            let n = frags(&self.dmo[i]);
            let ms = &mut self.dmo[i];
            ms.phase = DmoPhase::AwaitAck;
            let h = eng.schedule(now + dmo::timeout_slots(&p, n), ms.entity, NetEvent::DmoTimeout { fr: i, token })?;
            ms.timeout = Some(h);
        }
        self.mac.master_overlaps = self.channels.iter().map(|c| c.overlaps).sum();
        self.ensure_free_event(eng, c)
    }

    /// The gateway holds a complete message from first responder `i`.
    fn on_dmo_rx(&mut self, eng: &mut Eng, i: usize, token: u64, update: Update) -> Res {
        if self.dmo[i].token != token {
            self.mac.dmo_aborted += 1;
            return Ok(());
        }
        self.gateway_relay(eng, i, update)
    }

    fn gateway_relay(&mut self, eng: &mut Eng, i: usize, update: Update) -> Res {
        let gw = self.gateway.expect("direct mode has a gateway");
        let gw_entity = self.tmo[gw].entity;
        if !self.ledger.hand_off(update.id(), self.dmo[i].entity, gw_entity) {
            self.mac.dmo_duplicates += 1;
            return Ok(());
        }
        self.mac.relay_enqueued += 1;
        eng.trace(gw_entity, "RELAY");
        let relayed = update.with_fragments(self.cfg.dmo.relay_fragments);
        self.on_update_arrival(eng, gw, relayed)
    }

    fn on_dmo_ack(&mut self, eng: &mut Eng, i: usize, token: u64, received: bool) -> Res {
        if !received {
            return Ok(());
        }
        let alpha = self.cfg.alpha_dmo();
        let gw_entity = self.tmo[self.gateway.expect("direct mode has a gateway")].entity;
        let ms = &mut self.dmo[i];
        let (a1, a3) = dmo::ack_copies(&mut ms.channel_rng, alpha);
        if a1 {
            eng.trace(gw_entity, "ACK1");
        }
        if a3 {
            eng.trace(gw_entity, "ACK3");
        }
        if ms.token != token {
            return Ok(());
        }
        if !(a1 || a3) {
            self.mac.dmo_acks_lost += 1;
            return Ok(());
        }
        if let Some(h) = ms.timeout.take() {
            eng.cancel(h);
        }
        self.mac.fr_rounds += 1;
        self.dmo_finish(eng, i, None)
    }

    fn on_dmo_timeout(&mut self, eng: &mut Eng, i: usize, token: u64) -> Res {
        let ms = &mut self.dmo[i];
        if ms.token != token {
            return Ok(());
        }
        ms.timeout = None;
        self.mac.fr_rounds += 1;
        self.mac.fr_rounds_failed += 1;
        if ms.may_retransmit() {
            ms.round += 1;
            self.dmo_schedule_start(eng, i)
        } else {
            eng.trace(ms.entity, "FAIL");
            self.dmo_finish(eng, i, Some(LossCause::Channel))
        }
    }

    fn dmo_finish(&mut self, eng: &mut Eng, i: usize, cause: Option<LossCause>) -> Res {
        let now_s = self.now_s(eng);
        let ms = &mut self.dmo[i];
        let entity = ms.entity;
        if let (Some(u), Some(cause)) = (ms.buffer.release(now_s), cause) {
            self.ledger.drop_by(u.id(), entity, cause);
        }
        self.dmo_begin_head(eng, i)
    }

    fn on_channel_free(&mut self, eng: &mut Eng, c: usize) -> Res {
        let now = eng.now();
        if self.channels[c].is_busy(now) {
            return self.ensure_free_event(eng, c);
        }
        let ch = &mut self.channels[c];
        ch.free_event_at = None;
        for (i, token) in std::mem::take(&mut ch.waiters) {
            if self.dmo[i].token == token && self.dmo[i].phase == DmoPhase::WaitingFree {
                self.dmo_schedule_start(eng, i)?;
            }
        }
        Ok(())
    }

    fn finish(self, events: u64, end: Slot) -> Result<NetRunResult, NetError> {
        let l = &self.ledger;
        let uplink = RunResult::from_tracker(
            &self.uplink,
            l.generated(),
            l.delivered(),
            l.in_flight(),
            l.losses(),
            DEFAULT_BATCHES,
        );
        uplink.check_conservation()?;
        let feedback = RunResult::from_tracker(
            &self.fb_tracker,
            self.fb_generated,
            self.fb_delivered,
            self.fb_queue.len() as u64,
            LossCounters::default(),
            DEFAULT_BATCHES,
        );
        feedback.check_conservation()?;
        let generated = StreamCounts {
            status: self.status.iter().map(Poisson::emitted).sum(),
            background_sds: self.bg_sds.iter().map(Poisson::emitted).sum(),
            voice: self.voice.iter().map(Poisson::emitted).sum(),
            feedback: self.feedback.emitted(),
        };
        let mean_latency = if l.delivered() == 0 {
            0.0
        } else {
            self.latency_sum / l.delivered() as f64
        };
        Ok(NetRunResult {
            mode: self.cfg.mode,
            setting: self.cfg.setting(),
            fr_discipline: self.cfg.fr_discipline(),
            gw_discipline: self.cfg.gw_discipline(),
            entities: self.cfg.entity_count(),
            uplink,
            feedback,
            mac: self.mac,
            mean_latency,
            generated,
            end_time: self.clock.slot_to_seconds(end),
            events,
        })
    }
}

impl Model<Slot, NetEvent> for Network {
    fn handle(&mut self, engine: &mut Eng, event: Event<Slot, NetEvent>) {
        if self.error.is_some() {
            return;
        }
        if let Err(e) = self.dispatch(engine, event.payload) {
            self.error = Some(e);
        }
    }

    fn is_done(&self) -> bool {
        self.error.is_some()
    }
}

/// Runs one scenario to its horizon.
pub fn run(cfg: &ScenarioConfig) -> Result<NetRunResult, NetError> {
    run_traced(cfg, None)
}

/// Runs one scenario, writing one trace line per event to `trace` if given.
pub fn run_traced(cfg: &ScenarioConfig, trace: Option<Box<dyn Write + Send>>) -> Result<NetRunResult, NetError> {
    let mut net = Network::build(cfg)?;
    let mut eng: Eng = Engine::new(0);
    if let Some(t) = trace {
        eng.set_trace(t);
    }
    net.prime(&mut eng)?;
    let horizon = net.clock.seconds_to_slot_ceil(cfg.horizon);
    let rule = StopRule::horizon(horizon).with_max_events(cfg.max_events.unwrap_or(DEFAULT_MAX_EVENTS));
    let stats = eng.run_until(&mut net, &rule)?;
    if let Some(mut t) = eng.take_trace() {
        t.flush()?;
    }
    if let Some(e) = net.error.take() {
        return Err(e);
    }
    if stats.stop == StopReason::EventBudget {
        return Err(NetError::Truncated {
            events: stats.events,
            at: net.clock.slot_to_seconds(stats.end_time),
        });
    }
    net.finish(stats.events, stats.end_time)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn handles_are_distinct_per_event() {
        // Handle is opaque; make sure cancelling a stale timeout is harmless.
        let mut eng: Eng = Engine::new(0);
        let h = eng.schedule(5, 0, NetEvent::FeedbackBurst).unwrap();
        assert!(eng.cancel(h));
        assert!(!eng.cancel(h));
    }
}
