//! Deterministic per-node protocol state machines.
//!
//! Every node runs the same machine; the sending and receiving roles differ
//! only in how they are triggered. A step consumes one timestamped event and
//! returns the successor state plus an ordered list of actions for the
//! surrounding simulator: frame transmissions (with a start offset relative
//! to the event time), timer requests, surface phase control,
//! payload delivery and transfer aborts.
//!
//! Steps are pure: identical (state, event) pairs always produce identical
//! results. Backoff randomness comes from a per-node xorshift generator
//! embedded in the node state, so it is part of the input.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::frame::{duration_field_us, nav_duration, Addr, Frame};
use crate::mac::{LinkMode, MacTimings};

/// Simulation timestamps and durations, in integer microseconds.
pub type SimTimeUs = u64;

/// Scenario-wide protocol parameters shared by every node.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    pub timings: MacTimings,
    /// Reflective-link utilization efficiency scaling payload airtime.
    pub eta: f64,
    /// Failed attempts tolerated before a transfer is abandoned.
    pub retry_limit: u8,
    /// Initial backoff window W, in slots.
    pub initial_window: u32,
    /// Maximum backoff stage n; the window saturates at 2^n * W.
    pub max_backoff_stage: u8,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            timings: MacTimings::default(),
            eta: 0.5,
            retry_limit: 7,
            initial_window: 32,
            max_backoff_stage: 3,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        self.timings.validate()?;
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::Config(format!("eta must be > 0, got {}", self.eta)));
        }
        if self.retry_limit == 0 {
            return Err(Error::Config("retry limit must be >= 1".into()));
        }
        if self.initial_window == 0 {
            return Err(Error::Config("initial window must be >= 1".into()));
        }
        Ok(())
    }

    /// Airtime of a data frame: headers at the base rate plus the payload,
    /// scaled by the link efficiency on reflective paths.
    pub fn data_airtime_us(&self, payload_bits: u64, link: LinkMode) -> f64 {
        let header = self.timings.header_airtime_us();
        let payload = crate::mac::frame_airtime(payload_bits, self.timings.base_rate_bps);
        match link {
            LinkMode::Conventional => header + payload,
            LinkMode::Ris => header + payload / self.eta,
        }
    }

    fn rrts_us(&self) -> u64 {
        self.timings.rrts_airtime_us().ceil() as u64
    }

    fn rcts_us(&self) -> u64 {
        self.timings.rcts_airtime_us().ceil() as u64
    }

    fn ack_us(&self) -> u64 {
        self.timings.ack_airtime_us().ceil() as u64
    }

    fn sifs(&self) -> u64 {
        self.timings.sifs_us
    }

    fn difs(&self) -> u64 {
        self.timings.difs_us
    }

    fn slot(&self) -> u64 {
        self.timings.slot_us
    }
}

/// Timer classes a node can request from the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimerKind {
    /// Response window for the frame the node is waiting on.
    Response,
    /// Relay-side reflective-link lifetime.
    RisLink,
}

/// Input alphabet of the state machines.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEvent {
    pub at_us: SimTimeUs,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    /// Upper layer hands down a payload for `destination`.
    SendRequest { destination: Addr, payload_bits: u64 },
    /// A frame was decoded at this node (addressed or overheard).
    FrameRx { frame: Frame },
    /// A previously requested timer fired.
    TimerExpired { kind: TimerKind, expiry_us: SimTimeUs },
    /// Carrier sense: the medium turned busy at this node.
    MediumBusy,
    /// Carrier sense: the medium turned idle at this node.
    MediumIdle,
    /// One idle, NAV-clear backoff slot elapsed.
    BackoffSlot,
    /// The simulator indicates the node's own transmission was corrupted.
    CollisionIndication,
}

/// Output alphabet of the state machines.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    /// Start transmitting `frame` at event time plus `start_offset_us`.
    TransmitFrame {
        frame: Frame,
        start_offset_us: u64,
        link: LinkMode,
    },
    SetTimer {
        kind: TimerKind,
        expiry_us: SimTimeUs,
    },
    /// Configure the surface to join `from` and `to`.
    AdjustRisPhase { from: Addr, to: Addr },
    /// Tear the configured surface link down.
    ReleaseRisLink,
    /// Hand a received payload to the upper layer.
    DeliverPayload { bits: u64, from: Addr },
    /// The transfer toward `destination` was abandoned.
    AbortTransfer {
        destination: Addr,
        failed_attempts: u8,
    },
}

/// Protocol situation of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoleState {
    Idle,
    /// Counting down slots before (re)transmitting the pending frame.
    Backoff,
    /// Sent a reservation, waiting for the clear-to-send (or the forwarded
    /// copy of the reservation).
    AwaitRCts,
    /// Own data frame is in flight.
    TxData,
    /// Data sent, waiting for the acknowledgment.
    AwaitAck,
    /// Replied with a clear-to-send, waiting for the data frame.
    AwaitData,
    /// Forwarded a reservation over the surface, waiting for the
    /// destination's clear-to-send.
    RelayAwaitRCts,
    /// Surface link live; the relay listens passively until its timer fires.
    RelayRisActive,
    /// Store-and-forward leg: acknowledged received data and re-entered the
    /// sending flow toward the next hop.
    RelayStoreForward,
}

/// What to do once a backoff countdown reaches zero.
#[derive(Debug, Clone, PartialEq)]
struct PendingTx {
    frame: Frame,
    link: LinkMode,
    after: RoleState,
}

/// Per-node machine state.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub node_id: Addr,
    pub role_state: RoleState,
    /// Virtual carrier sense: transmissions defer until this time.
    pub nav_expiry_us: SimTimeUs,
    /// Slots remaining before the pending transmission.
    pub backoff_counter: u32,
    /// Current backoff stage, capped at the configured maximum.
    pub backoff_stage: u8,
    /// Failed attempts of the current operation.
    pub retry_counter: u8,
    /// Set exactly while the node holds a live surface link.
    pub ris_link_timer_expiry_us: Option<SimTimeUs>,
    /// Whether this node's surface may serve relay requests.
    pub ris_available: bool,
    /// Static next-hop map, destination to neighbor.
    pub routing: BTreeMap<Addr, Addr>,
    /// Payload size of the transfer in progress.
    pub pending_payload_bits: u64,
    /// Times the 16-bit duration field saturated; diagnostic.
    pub clamped_durations: u32,

    // Bookkeeping for the transfer in progress.
    destination: Option<Addr>,
    next_hop: Option<Addr>,
    /// Peer of the current receive exchange (previous hop).
    peer: Option<Addr>,
    /// Relay bookkeeping: who the surface joins.
    relay_from: Option<Addr>,
    relay_to: Option<Addr>,
    /// Surface currently configured (phase adjusted, not yet released).
    ris_engaged: bool,
    /// The one response timer considered live; anything else is stale.
    awaiting: Option<(TimerKind, SimTimeUs)>,
    pending_tx: Option<PendingTx>,
    medium_busy: bool,
    rng_state: u64,
}

impl NodeState {
    pub fn new(node_id: Addr, ris_available: bool, routing: BTreeMap<Addr, Addr>, seed: u64) -> Self {
        // splitmix64 scrambles the seed so per-node streams decorrelate even
        // for adjacent ids.
        let mut z = seed ^ node_id.value().wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        NodeState {
            node_id,
            role_state: RoleState::Idle,
            nav_expiry_us: 0,
            backoff_counter: 0,
            backoff_stage: 0,
            retry_counter: 0,
            ris_link_timer_expiry_us: None,
            ris_available,
            routing,
            pending_payload_bits: 0,
            clamped_durations: 0,
            destination: None,
            next_hop: None,
            peer: None,
            relay_from: None,
            relay_to: None,
            ris_engaged: false,
            awaiting: None,
            pending_tx: None,
            medium_busy: false,
            rng_state: if z == 0 { 0x1234_5678_9ABC_DEF0 } else { z },
        }
    }

    pub fn is_idle(&self) -> bool {
        self.role_state == RoleState::Idle
    }

    pub fn in_backoff(&self) -> bool {
        self.role_state == RoleState::Backoff
    }

    pub fn nav_clear(&self, now: SimTimeUs) -> bool {
        now >= self.nav_expiry_us
    }

    pub fn medium_busy(&self) -> bool {
        self.medium_busy
    }

    /// Contention window at the current stage: min(2^stage * W, 2^n * W).
    pub fn contention_window(&self, cfg: &ProtocolConfig) -> u32 {
        let stage = self.backoff_stage.min(cfg.max_backoff_stage);
        cfg.initial_window.saturating_mul(1 << stage)
    }

    fn next_random(&mut self) -> u64 {
        let mut x = self.rng_state;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.rng_state = x;
        x
    }

    fn draw_backoff(&mut self, cfg: &ProtocolConfig) -> u32 {
        let window = self.contention_window(cfg).max(1);
        (self.next_random() % window as u64) as u32
    }

    fn duration_field(&mut self, us: f64) -> u16 {
        let (value, clamped) = duration_field_us(us);
        if clamped {
            self.clamped_durations += 1;
        }
        value
    }

    fn clear_transfer(&mut self) {
        self.destination = None;
        self.next_hop = None;
        self.peer = None;
        self.relay_from = None;
        self.relay_to = None;
        self.pending_payload_bits = 0;
        self.pending_tx = None;
        self.awaiting = None;
        self.retry_counter = 0;
        self.backoff_stage = 0;
        self.backoff_counter = 0;
    }
}

/// NAV shortening rule for an overheard data-frame header while the NAV is
/// already running: the remainder drops to the advertised data duration when
/// that is shorter, and never grows.
pub fn apply_nav_min_rule(
    state: &NodeState,
    data_frame_duration_us: u64,
    now: SimTimeUs,
) -> NodeState {
    let mut next = state.clone();
    let remainder = state.nav_expiry_us.saturating_sub(now);
    let new_remainder = remainder.min(data_frame_duration_us);
    next.nav_expiry_us = now + new_remainder;
    next
}

/// Full dispatch for one node: routes the event to the sending-role or
/// receiving-role transition function and falls back to virtual carrier
/// sensing for frames that are merely overheard.
pub fn node_step(
    state: &NodeState,
    cfg: &ProtocolConfig,
    event: &NodeEvent,
) -> Result<(NodeState, Vec<Action>)> {
    let now = event.at_us;
    match &event.kind {
        EventKind::SendRequest { .. } => sender_step(state, cfg, event),
        EventKind::MediumBusy => {
            let mut next = state.clone();
            next.medium_busy = true;
            Ok((next, Vec::new()))
        }
        EventKind::MediumIdle => {
            let mut next = state.clone();
            next.medium_busy = false;
            if next.role_state == RoleState::TxData {
                next.role_state = RoleState::AwaitAck;
            }
            Ok((next, Vec::new()))
        }
        EventKind::BackoffSlot => {
            if state.role_state != RoleState::Backoff {
                return Ok((state.clone(), Vec::new()));
            }
            match state.pending_tx.as_ref().map(|p| p.after) {
                Some(RoleState::AwaitData) => receiver_step(state, cfg, event),
                _ => sender_step(state, cfg, event),
            }
        }
        EventKind::TimerExpired { kind, expiry_us } => {
            if state.awaiting != Some((*kind, *expiry_us)) {
                // Stale timer from a superseded wait.
                return Ok((state.clone(), Vec::new()));
            }
            match (*kind, state.role_state) {
                (TimerKind::RisLink, _) => receiver_step(state, cfg, event),
                (_, RoleState::AwaitData | RoleState::RelayAwaitRCts | RoleState::RelayRisActive) => {
                    receiver_step(state, cfg, event)
                }
                _ => sender_step(state, cfg, event),
            }
        }
        EventKind::CollisionIndication => sender_step(state, cfg, event),
        EventKind::FrameRx { frame } => {
            let addressed = frame.receiver() == state.node_id;
            if addressed {
                match frame {
                    Frame::RRts { .. } => receiver_step(state, cfg, event),
                    Frame::RCts { .. } | Frame::Ack { .. } => sender_step(state, cfg, event),
                    Frame::Data { .. } => receiver_step(state, cfg, event),
                }
            } else {
                // Own forwarded reservation coming back: sender-side restart.
                if let Frame::RRts { transmitter, .. } = frame {
                    if *transmitter == state.node_id && state.role_state == RoleState::AwaitRCts {
                        return sender_step(state, cfg, event);
                    }
                }
                // Relay watching for the destination's clear-to-send.
                if let Frame::RCts { sender, .. } = frame {
                    if state.role_state == RoleState::RelayAwaitRCts
                        && Some(*sender) == state.relay_to
                    {
                        return receiver_step(state, cfg, event);
                    }
                }
                Ok((overhear(state, cfg, frame, now), Vec::new()))
            }
        }
    }
}

/// Virtual carrier sensing on an overheard frame.
fn overhear(state: &NodeState, cfg: &ProtocolConfig, frame: &Frame, now: SimTimeUs) -> NodeState {
    match frame {
        Frame::Data { duration_us, .. } => {
            if state.nav_expiry_us > now {
                apply_nav_min_rule(state, *duration_us as u64, now)
            } else {
                let mut next = state.clone();
                next.nav_expiry_us = now + nav_duration(frame, &cfg.timings).ceil() as u64;
                next
            }
        }
        _ => {
            let mut next = state.clone();
            let until = now + nav_duration(frame, &cfg.timings).ceil() as u64;
            next.nav_expiry_us = next.nav_expiry_us.max(until);
            next
        }
    }
}

fn rrts_frame(state: &mut NodeState, cfg: &ProtocolConfig, next_hop: Addr, destination: Addr) -> Frame {
    let airtime = cfg.data_airtime_us(state.pending_payload_bits, LinkMode::Conventional);
    Frame::RRts {
        duration_us: state.duration_field(airtime),
        receiver: next_hop,
        destination,
        transmitter: state.node_id,
        via_ris: false,
    }
}

/// Arms the transmission either immediately (offset DIFS) or behind a fresh
/// backoff countdown, depending on carrier state.
fn arm_transmission(
    state: &mut NodeState,
    cfg: &ProtocolConfig,
    pending: PendingTx,
    now: SimTimeUs,
    actions: &mut Vec<Action>,
) {
    if !state.medium_busy && state.nav_clear(now) && state.backoff_counter == 0 {
        emit_pending(state, cfg, pending, now, cfg.difs(), actions);
    } else {
        state.backoff_counter = state.draw_backoff(cfg);
        state.pending_tx = Some(pending);
        state.role_state = RoleState::Backoff;
        if state.backoff_counter == 0 {
            // Zero draw: transmit at the first eligible slot; the simulator
            // delivers one BackoffSlot once the medium has been idle a slot.
            state.backoff_counter = 1;
        }
    }
}

/// Emits a pending transmission and the response timer that guards it.
fn emit_pending(
    state: &mut NodeState,
    cfg: &ProtocolConfig,
    pending: PendingTx,
    now: SimTimeUs,
    start_offset_us: u64,
    actions: &mut Vec<Action>,
) {
    let airtime = match &pending.frame {
        Frame::RRts { .. } => cfg.rrts_us(),
        Frame::RCts { .. } => cfg.rcts_us(),
        Frame::Ack { .. } => cfg.ack_us(),
        Frame::Data { payload_bits, .. } => {
            cfg.data_airtime_us(*payload_bits, pending.link).ceil() as u64
        }
    };
    let end = now + start_offset_us + airtime;
    let expiry = match pending.after {
        RoleState::AwaitRCts | RoleState::RelayStoreForward | RoleState::RelayAwaitRCts => {
            // Either the clear-to-send or a forwarded reservation may come
            // first; wait long enough for the longer of the two.
            end + cfg.sifs() + cfg.rrts_us().max(cfg.rcts_us()) + cfg.slot()
        }
        RoleState::AwaitData => {
            let data = cfg
                .data_airtime_us(state.pending_payload_bits, LinkMode::Conventional)
                .ceil() as u64;
            // The peer's expected data airtime was recorded when the
            // clear-to-send was built; fall back to the conventional figure.
            let expected = state.expected_data_us().unwrap_or(data);
            end + cfg.sifs() + expected + cfg.slot()
        }
        RoleState::AwaitAck | RoleState::TxData => end + cfg.sifs() + cfg.ack_us() + cfg.slot(),
        RoleState::Idle | RoleState::Backoff | RoleState::RelayRisActive => end,
    };
    actions.push(Action::TransmitFrame {
        frame: pending.frame.clone(),
        start_offset_us,
        link: pending.link,
    });
    actions.push(Action::SetTimer {
        kind: TimerKind::Response,
        expiry_us: expiry,
    });
    state.awaiting = Some((TimerKind::Response, expiry));
    state.pending_tx = Some(pending.clone());
    state.role_state = pending.after;
}

impl NodeState {
    /// Expected airtime of the data frame this node is waiting for, recorded
    /// in the duration field of the clear-to-send it last built.
    fn expected_data_us(&self) -> Option<u64> {
        self.pending_tx.as_ref().and_then(|p| match &p.frame {
            Frame::RCts { duration_us, .. } => Some(*duration_us as u64),
            _ => None,
        })
    }
}

/// One failed attempt: count it, abort past the limit, otherwise widen the
/// window and back off before retrying the pending transmission.
fn register_failure(
    state: &mut NodeState,
    cfg: &ProtocolConfig,
    actions: &mut Vec<Action>,
) {
    state.retry_counter += 1;
    state.awaiting = None;
    if state.retry_counter >= cfg.retry_limit {
        let destination = state.destination.unwrap_or(state.node_id);
        actions.push(Action::AbortTransfer {
            destination,
            failed_attempts: state.retry_counter,
        });
        if state.ris_engaged {
            actions.push(Action::ReleaseRisLink);
            state.ris_engaged = false;
        }
        state.ris_link_timer_expiry_us = None;
        state.clear_transfer();
        state.role_state = RoleState::Idle;
        return;
    }
    state.backoff_stage = (state.backoff_stage + 1).min(cfg.max_backoff_stage);
    state.backoff_counter = state.draw_backoff(cfg).max(1);
    state.role_state = RoleState::Backoff;
}

/// Sending-node transition function.
pub fn sender_step(
    state: &NodeState,
    cfg: &ProtocolConfig,
    event: &NodeEvent,
) -> Result<(NodeState, Vec<Action>)> {
    let now = event.at_us;
    let mut next = state.clone();
    let mut actions = Vec::new();

    match (&state.role_state, &event.kind) {
        (RoleState::Idle, EventKind::SendRequest { destination, payload_bits }) => {
            let next_hop = *next.routing.get(destination).ok_or_else(|| {
                Error::ProtocolViolation(format!(
                    "node {} has no route toward {destination}",
                    state.node_id
                ))
            })?;
            next.clear_transfer();
            next.destination = Some(*destination);
            next.next_hop = Some(next_hop);
            next.pending_payload_bits = *payload_bits;
            let frame = rrts_frame(&mut next, cfg, next_hop, *destination);
            let pending = PendingTx {
                frame,
                link: LinkMode::Conventional,
                after: RoleState::AwaitRCts,
            };
            arm_transmission(&mut next, cfg, pending, now, &mut actions);
        }
        (_, EventKind::SendRequest { .. }) => {
            return Err(Error::ProtocolViolation(format!(
                "node {} got a send request while {:?}",
                state.node_id, state.role_state
            )));
        }

        (RoleState::Backoff, EventKind::BackoffSlot) => {
            if next.backoff_counter > 0 {
                next.backoff_counter -= 1;
            }
            if next.backoff_counter == 0 {
                let pending = next.pending_tx.take().ok_or_else(|| {
                    Error::ProtocolViolation(format!(
                        "node {} finished backoff with nothing to send",
                        state.node_id
                    ))
                })?;
                emit_pending(&mut next, cfg, pending, now, 0, &mut actions);
            }
        }

        (RoleState::AwaitRCts | RoleState::RelayStoreForward, EventKind::FrameRx { frame }) => {
            match frame {
                Frame::RCts {
                    receiver,
                    sender,
                    via_ris,
                    duration_us,
                } if *receiver == state.node_id => {
                    // Clear-to-send: address the data to its sender when the
                    // reservation's destination is beyond the next hop
                    // (reflective shortcut), otherwise to the next hop.
                    let destination = next.destination.ok_or_else(|| {
                        Error::ProtocolViolation("clear-to-send without a transfer".into())
                    })?;
                    let next_hop = next.next_hop.unwrap_or(*sender);
                    let data_target = if destination != next_hop { *sender } else { next_hop };
                    let link = if *via_ris { LinkMode::Ris } else { LinkMode::Conventional };
                    let airtime = cfg.data_airtime_us(next.pending_payload_bits, link);
                    let advertised = next.duration_field(airtime + 2.0 * cfg.sifs() as f64);
                    let data = Frame::Data {
                        duration_us: advertised,
                        receiver: data_target,
                        destination,
                        transmitter: state.node_id,
                        payload_bits: next.pending_payload_bits,
                    };
                    let _ = duration_us;
                    let pending = PendingTx {
                        frame: data,
                        link,
                        after: RoleState::TxData,
                    };
                    emit_pending(&mut next, cfg, pending, now, cfg.sifs(), &mut actions);
                }
                Frame::RRts { transmitter, .. }
                    if *transmitter == state.node_id && *transmitter != frame.receiver() =>
                {
                    // Own reservation forwarded by the relay: keep waiting,
                    // restarting the clear-to-send window.
                    let expiry = now + cfg.sifs() + cfg.rcts_us() + cfg.slot();
                    actions.push(Action::SetTimer {
                        kind: TimerKind::Response,
                        expiry_us: expiry,
                    });
                    next.awaiting = Some((TimerKind::Response, expiry));
                }
                Frame::RRts { .. } => {
                    // Someone else wants this node mid-transfer; stay silent.
                }
                _ => {
                    return Err(Error::ProtocolViolation(format!(
                        "node {} cannot accept {} while {:?}",
                        state.node_id,
                        frame.variant_name(),
                        state.role_state
                    )));
                }
            }
        }

        (RoleState::TxData | RoleState::AwaitAck, EventKind::FrameRx { frame }) => match frame {
            Frame::Ack { receiver, .. } if *receiver == state.node_id => {
                next.clear_transfer();
                next.role_state = RoleState::Idle;
            }
            Frame::RRts { .. } => {}
            _ => {
                return Err(Error::ProtocolViolation(format!(
                    "node {} cannot accept {} while {:?}",
                    state.node_id,
                    frame.variant_name(),
                    state.role_state
                )));
            }
        },

        (
            RoleState::AwaitRCts | RoleState::RelayStoreForward | RoleState::TxData | RoleState::AwaitAck,
            EventKind::TimerExpired { .. },
        )
        | (
            RoleState::AwaitRCts
            | RoleState::RelayStoreForward
            | RoleState::TxData
            | RoleState::AwaitAck
            | RoleState::Backoff,
            EventKind::CollisionIndication,
        ) => {
            // The response never came (or the attempt demonstrably
            // collided): rebuild the reservation and retry from contention.
            let destination = next.destination.ok_or_else(|| {
                Error::ProtocolViolation("failure without a transfer in progress".into())
            })?;
            let next_hop = next.next_hop.ok_or_else(|| {
                Error::ProtocolViolation("failure without a next hop".into())
            })?;
            let frame = rrts_frame(&mut next, cfg, next_hop, destination);
            next.pending_tx = Some(PendingTx {
                frame,
                link: LinkMode::Conventional,
                after: RoleState::AwaitRCts,
            });
            register_failure(&mut next, cfg, &mut actions);
        }

        (RoleState::Idle, EventKind::FrameRx { frame }) => match frame {
            Frame::RCts { .. } | Frame::Ack { .. } | Frame::Data { .. } => {
                return Err(Error::ProtocolViolation(format!(
                    "idle node {} got an unsolicited {}",
                    state.node_id,
                    frame.variant_name()
                )));
            }
            Frame::RRts { .. } => {}
        },

        // Inert combinations: stale timers, slots outside backoff.
        _ => {}
    }

    Ok((next, actions))
}

/// Receiving-node transition function.
pub fn receiver_step(
    state: &NodeState,
    cfg: &ProtocolConfig,
    event: &NodeEvent,
) -> Result<(NodeState, Vec<Action>)> {
    let now = event.at_us;
    let mut next = state.clone();
    let mut actions = Vec::new();

    match (&state.role_state, &event.kind) {
        (RoleState::Idle, EventKind::FrameRx { frame }) => {
            if let Frame::RRts {
                duration_us,
                receiver,
                destination,
                transmitter,
                via_ris,
            } = frame
            {
                if *receiver != state.node_id {
                    return Ok((next, actions));
                }
                next.clear_transfer();
                next.peer = Some(*transmitter);
                if destination == &state.node_id {
                    reply_clear_to_send(
                        &mut next,
                        cfg,
                        *transmitter,
                        *duration_us,
                        *via_ris,
                        now,
                        &mut actions,
                    );
                } else if state.ris_available {
                    // Relay with a working surface: configure it and forward
                    // the reservation toward the next hop, keeping the
                    // original transmitter so the destination can answer the
                    // source directly.
                    let hop = *next.routing.get(destination).ok_or_else(|| {
                        Error::ProtocolViolation(format!(
                            "relay {} has no route toward {destination}",
                            state.node_id
                        ))
                    })?;
                    next.relay_from = Some(*transmitter);
                    next.relay_to = Some(hop);
                    next.destination = Some(*destination);
                    next.ris_engaged = true;
                    actions.push(Action::AdjustRisPhase {
                        from: *transmitter,
                        to: hop,
                    });
                    let forward = Frame::RRts {
                        duration_us: *duration_us,
                        receiver: hop,
                        destination: *destination,
                        transmitter: *transmitter,
                        via_ris: true,
                    };
                    let pending = PendingTx {
                        frame: forward,
                        link: LinkMode::Conventional,
                        after: RoleState::RelayAwaitRCts,
                    };
                    emit_pending(&mut next, cfg, pending, now, cfg.sifs(), &mut actions);
                } else {
                    // Surface unavailable: accept the data conventionally and
                    // forward it later as a sending node.
                    next.destination = Some(*destination);
                    reply_clear_to_send(
                        &mut next,
                        cfg,
                        *transmitter,
                        *duration_us,
                        false,
                        now,
                        &mut actions,
                    );
                }
            }
        }

        (RoleState::AwaitData, EventKind::FrameRx { frame }) => match frame {
            Frame::Data {
                receiver,
                destination,
                transmitter,
                payload_bits,
                ..
            } if *receiver == state.node_id => {
                // The acknowledgment travels back over whatever path the
                // exchange was negotiated on (recorded in our clear-to-send).
                let exchange_link = match state.pending_tx.as_ref().map(|p| &p.frame) {
                    Some(Frame::RCts { via_ris: true, .. }) => LinkMode::Ris,
                    _ => LinkMode::Conventional,
                };
                let ack = Frame::Ack {
                    duration_us: 0,
                    receiver: *transmitter,
                    transmitter: state.node_id,
                };
                actions.push(Action::TransmitFrame {
                    frame: ack,
                    start_offset_us: cfg.sifs(),
                    link: exchange_link,
                });
                next.awaiting = None;
                if destination == &state.node_id {
                    actions.push(Action::DeliverPayload {
                        bits: *payload_bits,
                        from: *transmitter,
                    });
                    next.clear_transfer();
                    next.role_state = RoleState::Idle;
                } else {
                    // Store-and-forward: acknowledge, then act as a sending
                    // node toward the next hop once the acknowledgment and a
                    // DIFS have passed.
                    let hop = *next.routing.get(destination).ok_or_else(|| {
                        Error::ProtocolViolation(format!(
                            "store-and-forward relay {} has no route toward {destination}",
                            state.node_id
                        ))
                    })?;
                    next.destination = Some(*destination);
                    next.next_hop = Some(hop);
                    next.pending_payload_bits = *payload_bits;
                    next.retry_counter = 0;
                    next.backoff_stage = 0;
                    let rrts = rrts_frame(&mut next, cfg, hop, *destination);
                    let pending = PendingTx {
                        frame: rrts,
                        link: LinkMode::Conventional,
                        after: RoleState::RelayStoreForward,
                    };
                    let offset = cfg.sifs() + cfg.ack_us() + cfg.difs();
                    emit_pending(&mut next, cfg, pending, now, offset, &mut actions);
                }
            }
            Frame::RRts {
                receiver,
                transmitter,
                duration_us,
                via_ris,
                ..
            } if *receiver == state.node_id && Some(*transmitter) == state.peer => {
                // The previous hop repeated its reservation (our
                // clear-to-send was lost): answer it again.
                reply_clear_to_send(
                    &mut next,
                    cfg,
                    *transmitter,
                    *duration_us,
                    *via_ris,
                    now,
                    &mut actions,
                );
            }
            Frame::RRts { .. } => {}
            _ => {
                return Err(Error::ProtocolViolation(format!(
                    "node {} cannot accept {} while awaiting data",
                    state.node_id,
                    frame.variant_name()
                )));
            }
        },

        (RoleState::AwaitData, EventKind::TimerExpired { .. }) => {
            // Data never arrived: back off, then repeat the clear-to-send.
            register_failure(&mut next, cfg, &mut actions);
        }

        (RoleState::Backoff, EventKind::BackoffSlot) => {
            if next.backoff_counter > 0 {
                next.backoff_counter -= 1;
            }
            if next.backoff_counter == 0 {
                let pending = next.pending_tx.take().ok_or_else(|| {
                    Error::ProtocolViolation(format!(
                        "node {} finished backoff with nothing to send",
                        state.node_id
                    ))
                })?;
                emit_pending(&mut next, cfg, pending, now, 0, &mut actions);
            }
        }

        (RoleState::RelayAwaitRCts, EventKind::FrameRx { frame }) => match frame {
            Frame::RCts {
                sender,
                duration_us,
                ..
            } if Some(*sender) == state.relay_to => {
                // The destination accepted: hold the surface through the
                // advertised data frame and its acknowledgment.
                let expiry =
                    now + cfg.sifs() + *duration_us as u64 + cfg.sifs() + cfg.ack_us() + cfg.slot();
                next.ris_link_timer_expiry_us = Some(expiry);
                next.awaiting = Some((TimerKind::RisLink, expiry));
                actions.push(Action::SetTimer {
                    kind: TimerKind::RisLink,
                    expiry_us: expiry,
                });
                next.role_state = RoleState::RelayRisActive;
            }
            _ => {}
        },

        (RoleState::RelayAwaitRCts, EventKind::TimerExpired { .. }) => {
            // No clear-to-send from the destination: back off and re-forward.
            register_failure(&mut next, cfg, &mut actions);
        }

        (RoleState::RelayRisActive, EventKind::TimerExpired { kind, .. }) => {
            if *kind == TimerKind::RisLink {
                actions.push(Action::ReleaseRisLink);
                next.ris_engaged = false;
                next.ris_link_timer_expiry_us = None;
                next.clear_transfer();
                next.role_state = RoleState::Idle;
            }
        }

        // A passively listening relay ignores all traffic; an idle or busy
        // receiver ignores frames that concern other exchanges.
        (RoleState::RelayRisActive, EventKind::FrameRx { .. }) => {}

        _ => {}
    }

    Ok((next, actions))
}

/// Builds and schedules the clear-to-send reply for an accepted reservation,
/// advertising the expected data airtime in the duration field.
fn reply_clear_to_send(
    state: &mut NodeState,
    cfg: &ProtocolConfig,
    previous_hop: Addr,
    rrts_duration_us: u16,
    via_ris: bool,
    now: SimTimeUs,
    actions: &mut Vec<Action>,
) {
    let header = cfg.timings.header_airtime_us();
    let conventional_payload = (rrts_duration_us as f64 - header).max(0.0);
    let expected_data = if via_ris {
        header + conventional_payload / cfg.eta
    } else {
        rrts_duration_us as f64
    };
    let advertised = state.duration_field(expected_data);
    let rcts = Frame::RCts {
        duration_us: advertised,
        receiver: previous_hop,
        sender: state.node_id,
        via_ris,
    };
    let pending = PendingTx {
        frame: rcts,
        link: if via_ris { LinkMode::Ris } else { LinkMode::Conventional },
        after: RoleState::AwaitData,
    };
    emit_pending(state, cfg, pending, now, cfg.sifs(), actions);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn addr(v: u64) -> Addr {
        Addr::new(v).unwrap()
    }

    fn route(pairs: &[(u64, u64)]) -> BTreeMap<Addr, Addr> {
        pairs
            .iter()
            .map(|&(d, h)| (addr(d), addr(h)))
            .collect()
    }

    fn cfg() -> ProtocolConfig {
        ProtocolConfig::default()
    }

    fn ev(at_us: SimTimeUs, kind: EventKind) -> NodeEvent {
        NodeEvent { at_us, kind }
    }

    const S: u64 = 0xA;
    const R: u64 = 0xB;
    const D: u64 = 0xD;

    fn fresh_sender() -> NodeState {
        NodeState::new(addr(S), true, route(&[(D, R)]), 1)
    }

    fn started_sender() -> (NodeState, Vec<Action>) {
        let state = fresh_sender();
        node_step(
            &state,
            &cfg(),
            &ev(
                0,
                EventKind::SendRequest {
                    destination: addr(D),
                    payload_bits: 8_000,
                },
            ),
        )
        .unwrap()
    }

    #[test]
    fn idle_send_request_emits_reservation() {
        let (state, actions) = started_sender();
        assert_eq!(state.role_state, RoleState::AwaitRCts);
        match &actions[0] {
            Action::TransmitFrame {
                frame: Frame::RRts {
                    receiver,
                    destination,
                    transmitter,
                    via_ris,
                    duration_us,
                },
                start_offset_us,
                ..
            } => {
                assert_eq!(receiver, &addr(R));
                assert_eq!(destination, &addr(D));
                assert_eq!(transmitter, &addr(S));
                assert!(!via_ris);
                // Conventional data airtime: 400 us headers + 8000 us payload.
                assert_eq!(*duration_us, 8_400);
                assert_eq!(*start_offset_us, 128);
            }
            other => panic!("expected a reservation, got {other:?}"),
        }
        assert!(matches!(actions[1], Action::SetTimer { kind: TimerKind::Response, .. }));
    }

    #[test]
    fn send_request_defers_when_medium_busy() {
        let state = fresh_sender();
        let (busy, _) = node_step(&state, &cfg(), &ev(0, EventKind::MediumBusy)).unwrap();
        let (next, actions) = node_step(
            &busy,
            &cfg(),
            &ev(
                5,
                EventKind::SendRequest {
                    destination: addr(D),
                    payload_bits: 8_000,
                },
            ),
        )
        .unwrap();
        assert_eq!(next.role_state, RoleState::Backoff);
        assert!(actions.is_empty());
        assert!(next.backoff_counter >= 1);
        assert!(next.backoff_counter <= 32);
    }

    #[test]
    fn inert_event_is_identity() {
        let state = fresh_sender();
        let (next, actions) = node_step(
            &state,
            &cfg(),
            &ev(
                100,
                EventKind::TimerExpired {
                    kind: TimerKind::Response,
                    expiry_us: 100,
                },
            ),
        )
        .unwrap();
        assert_eq!(next, state);
        assert!(actions.is_empty());
    }

    #[test]
    fn determinism_of_steps() {
        let (state, _) = started_sender();
        let event = ev(
            500,
            EventKind::FrameRx {
                frame: Frame::RCts {
                    duration_us: 16_400,
                    receiver: addr(S),
                    sender: addr(D),
                    via_ris: true,
                },
            },
        );
        let a = node_step(&state, &cfg(), &event).unwrap();
        let b = node_step(&state, &cfg(), &event).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn clear_to_send_from_beyond_next_hop_redirects_data() {
        // Reservation destination D, next hop R: the clear-to-send arrives
        // from D itself, so the data goes straight to D over the surface.
        let (state, _) = started_sender();
        let (next, actions) = node_step(
            &state,
            &cfg(),
            &ev(
                700,
                EventKind::FrameRx {
                    frame: Frame::RCts {
                        duration_us: 16_400,
                        receiver: addr(S),
                        sender: addr(D),
                        via_ris: true,
                    },
                },
            ),
        )
        .unwrap();
        assert_eq!(next.role_state, RoleState::TxData);
        match &actions[0] {
            Action::TransmitFrame {
                frame:
                    Frame::Data {
                        receiver,
                        destination,
                        transmitter,
                        duration_us,
                        ..
                    },
                start_offset_us,
                link,
            } => {
                assert_eq!(receiver, &addr(D));
                assert_eq!(destination, &addr(D));
                assert_eq!(transmitter, &addr(S));
                assert_eq!(*start_offset_us, 28);
                assert_eq!(*link, LinkMode::Ris);
                // 16400 us reflective airtime plus two SIFS.
                assert_eq!(*duration_us, 16_456);
            }
            other => panic!("expected data transmission, got {other:?}"),
        }
    }

    #[test]
    fn clear_to_send_from_next_hop_keeps_data_on_next_hop() {
        let (state, _) = started_sender();
        let (next, actions) = node_step(
            &state,
            &cfg(),
            &ev(
                700,
                EventKind::FrameRx {
                    frame: Frame::RCts {
                        duration_us: 8_400,
                        receiver: addr(S),
                        sender: addr(R),
                        via_ris: false,
                    },
                },
            ),
        )
        .unwrap();
        assert_eq!(next.role_state, RoleState::TxData);
        match &actions[0] {
            Action::TransmitFrame {
                frame: Frame::Data { receiver, .. },
                link,
                ..
            } => {
                assert_eq!(receiver, &addr(R));
                assert_eq!(*link, LinkMode::Conventional);
            }
            other => panic!("expected data transmission, got {other:?}"),
        }
    }

    #[test]
    fn own_forwarded_reservation_restarts_wait() {
        let (state, _) = started_sender();
        let forwarded = Frame::RRts {
            duration_us: 8_400,
            receiver: addr(D),
            destination: addr(D),
            transmitter: addr(S),
            via_ris: true,
        };
        let (next, actions) = node_step(
            &state,
            &cfg(),
            &ev(444, EventKind::FrameRx { frame: forwarded }),
        )
        .unwrap();
        assert_eq!(next.role_state, RoleState::AwaitRCts);
        match &actions[0] {
            Action::SetTimer { kind: TimerKind::Response, expiry_us } => {
                // SIFS + clear-to-send airtime + one slot of slack.
                assert_eq!(*expiry_us, 444 + 28 + 160 + 50);
            }
            other => panic!("expected a timer restart, got {other:?}"),
        }
    }

    #[test]
    fn ack_completes_transfer() {
        let (state, actions) = started_sender();
        let _ = actions;
        let (state, _) = node_step(
            &state,
            &cfg(),
            &ev(
                700,
                EventKind::FrameRx {
                    frame: Frame::RCts {
                        duration_us: 16_400,
                        receiver: addr(S),
                        sender: addr(D),
                        via_ris: true,
                    },
                },
            ),
        )
        .unwrap();
        let (state, _) = node_step(&state, &cfg(), &ev(17_150, EventKind::MediumIdle)).unwrap();
        assert_eq!(state.role_state, RoleState::AwaitAck);
        let (state, actions) = node_step(
            &state,
            &cfg(),
            &ev(
                17_400,
                EventKind::FrameRx {
                    frame: Frame::Ack {
                        duration_us: 0,
                        receiver: addr(S),
                        transmitter: addr(D),
                    },
                },
            ),
        )
        .unwrap();
        assert_eq!(state.role_state, RoleState::Idle);
        assert!(actions.is_empty());
        assert_eq!(state.retry_counter, 0);
    }

    #[test]
    fn abort_after_exactly_retry_limit_failures() {
        let config = cfg();
        let (mut state, _) = started_sender();
        let mut failures = 0u32;
        let mut aborted = false;
        let mut now = 1_000;
        'outer: for _ in 0..64 {
            // Time the response window out.
            let (kind, expiry) = state.awaiting.expect("a wait must be armed");
            let (s, actions) =
                node_step(&state, &config, &ev(expiry.max(now), EventKind::TimerExpired { kind, expiry_us: expiry }))
                    .unwrap();
            state = s;
            failures += 1;
            now = expiry + 1;
            for action in &actions {
                if let Action::AbortTransfer { failed_attempts, .. } = action {
                    assert_eq!(*failed_attempts as u32, failures);
                    assert_eq!(failures, config.retry_limit as u32);
                    aborted = true;
                    break 'outer;
                }
            }
            // Drain the backoff countdown to retransmit.
            while state.role_state == RoleState::Backoff {
                let (s, _) = node_step(&state, &config, &ev(now, EventKind::BackoffSlot)).unwrap();
                state = s;
                now += config.timings.slot_us;
            }
            assert_eq!(state.role_state, RoleState::AwaitRCts);
        }
        assert!(aborted, "transfer never aborted");
        assert_eq!(state.role_state, RoleState::Idle);
    }

    #[test]
    fn backoff_window_doubles_then_saturates() {
        let config = cfg();
        let mut state = fresh_sender();
        state.destination = Some(addr(D));
        state.next_hop = Some(addr(R));
        assert_eq!(state.contention_window(&config), 32);
        state.backoff_stage = 1;
        assert_eq!(state.contention_window(&config), 64);
        state.backoff_stage = 3;
        assert_eq!(state.contention_window(&config), 256);
        state.backoff_stage = 7; // beyond the cap
        assert_eq!(state.contention_window(&config), 256);
    }

    #[test]
    fn destination_replies_clear_to_send_after_sifs() {
        let dest = NodeState::new(addr(D), true, route(&[]), 3);
        let rrts = Frame::RRts {
            duration_us: 8_400,
            receiver: addr(D),
            destination: addr(D),
            transmitter: addr(S),
            via_ris: true,
        };
        let (next, actions) = node_step(
            &dest,
            &cfg(),
            &ev(436, EventKind::FrameRx { frame: rrts }),
        )
        .unwrap();
        assert_eq!(next.role_state, RoleState::AwaitData);
        match &actions[0] {
            Action::TransmitFrame {
                frame: Frame::RCts {
                    receiver,
                    sender,
                    via_ris,
                    duration_us,
                },
                start_offset_us,
                ..
            } => {
                assert_eq!(receiver, &addr(S));
                assert_eq!(sender, &addr(D));
                assert!(*via_ris);
                assert_eq!(*start_offset_us, 28);
                // 400 us headers + 8000/0.5 us reflective payload.
                assert_eq!(*duration_us, 16_400);
            }
            other => panic!("expected a clear-to-send, got {other:?}"),
        }
    }

    #[test]
    fn relay_forwards_and_configures_surface() {
        let relay = NodeState::new(addr(R), true, route(&[(D, D)]), 5);
        let rrts = Frame::RRts {
            duration_us: 8_400,
            receiver: addr(R),
            destination: addr(D),
            transmitter: addr(S),
            via_ris: false,
        };
        let (next, actions) = node_step(
            &relay,
            &cfg(),
            &ev(208, EventKind::FrameRx { frame: rrts }),
        )
        .unwrap();
        assert_eq!(next.role_state, RoleState::RelayAwaitRCts);
        assert!(matches!(
            actions[0],
            Action::AdjustRisPhase { from, to } if from == addr(S) && to == addr(D)
        ));
        match &actions[1] {
            Action::TransmitFrame {
                frame: Frame::RRts {
                    receiver,
                    destination,
                    transmitter,
                    via_ris,
                    ..
                },
                start_offset_us,
                ..
            } => {
                assert_eq!(receiver, &addr(D));
                assert_eq!(destination, &addr(D));
                // The original transmitter is preserved.
                assert_eq!(transmitter, &addr(S));
                assert!(*via_ris);
                assert_eq!(*start_offset_us, 28);
            }
            other => panic!("expected a forwarded reservation, got {other:?}"),
        }
    }

    #[test]
    fn relay_sets_link_timer_from_observed_clear_to_send() {
        let relay = NodeState::new(addr(R), true, route(&[(D, D)]), 5);
        let rrts = Frame::RRts {
            duration_us: 8_400,
            receiver: addr(R),
            destination: addr(D),
            transmitter: addr(S),
            via_ris: false,
        };
        let (relay, _) = node_step(&relay, &cfg(), &ev(208, EventKind::FrameRx { frame: rrts })).unwrap();
        // Clear-to-send addressed to the source, overheard by the relay.
        let rcts = Frame::RCts {
            duration_us: 16_400,
            receiver: addr(S),
            sender: addr(D),
            via_ris: true,
        };
        let (relay, actions) =
            node_step(&relay, &cfg(), &ev(660, EventKind::FrameRx { frame: rcts })).unwrap();
        assert_eq!(relay.role_state, RoleState::RelayRisActive);
        let expected_expiry = 660 + 28 + 16_400 + 28 + 240 + 50;
        assert_eq!(relay.ris_link_timer_expiry_us, Some(expected_expiry));
        assert!(actions.iter().any(|a| matches!(
            a,
            Action::SetTimer { kind: TimerKind::RisLink, expiry_us } if *expiry_us == expected_expiry
        )));
    }

    #[test]
    fn passive_relay_emits_nothing_until_timer_releases_link() {
        let relay = NodeState::new(addr(R), true, route(&[(D, D)]), 5);
        let rrts = Frame::RRts {
            duration_us: 8_400,
            receiver: addr(R),
            destination: addr(D),
            transmitter: addr(S),
            via_ris: false,
        };
        let (relay, _) = node_step(&relay, &cfg(), &ev(208, EventKind::FrameRx { frame: rrts })).unwrap();
        let rcts = Frame::RCts {
            duration_us: 16_400,
            receiver: addr(S),
            sender: addr(D),
            via_ris: true,
        };
        let (mut relay, _) = node_step(&relay, &cfg(), &ev(660, EventKind::FrameRx { frame: rcts })).unwrap();

        // Every frame of the ongoing exchange leaves the relay silent.
        let data = Frame::Data {
            duration_us: 16_456,
            receiver: addr(D),
            destination: addr(D),
            transmitter: addr(S),
            payload_bits: 8_000,
        };
        let ack = Frame::Ack {
            duration_us: 0,
            receiver: addr(S),
            transmitter: addr(D),
        };
        for frame in [data, ack] {
            let (next, actions) =
                node_step(&relay, &cfg(), &ev(1_000, EventKind::FrameRx { frame })).unwrap();
            assert!(
                actions.iter().all(|a| !matches!(a, Action::TransmitFrame { .. })),
                "passive relay transmitted"
            );
            relay = next;
        }

        let expiry = relay.ris_link_timer_expiry_us.unwrap();
        let (relay, actions) = node_step(
            &relay,
            &cfg(),
            &ev(expiry, EventKind::TimerExpired { kind: TimerKind::RisLink, expiry_us: expiry }),
        )
        .unwrap();
        assert_eq!(relay.role_state, RoleState::Idle);
        assert_eq!(relay.ris_link_timer_expiry_us, None);
        assert!(actions.contains(&Action::ReleaseRisLink));
    }

    #[test]
    fn relay_without_surface_goes_store_and_forward() {
        let relay = NodeState::new(addr(R), false, route(&[(D, D)]), 5);
        let rrts = Frame::RRts {
            duration_us: 8_400,
            receiver: addr(R),
            destination: addr(D),
            transmitter: addr(S),
            via_ris: false,
        };
        let (relay, actions) =
            node_step(&relay, &cfg(), &ev(208, EventKind::FrameRx { frame: rrts })).unwrap();
        assert_eq!(relay.role_state, RoleState::AwaitData);
        match &actions[0] {
            Action::TransmitFrame {
                frame: Frame::RCts {
                    receiver, sender, via_ris, ..
                },
                ..
            } => {
                assert_eq!(receiver, &addr(S));
                assert_eq!(sender, &addr(R));
                assert!(!via_ris);
            }
            other => panic!("expected a clear-to-send, got {other:?}"),
        }

        // Data arrives for D: acknowledge and re-enter the sending flow.
        let data = Frame::Data {
            duration_us: 8_456,
            receiver: addr(R),
            destination: addr(D),
            transmitter: addr(S),
            payload_bits: 8_000,
        };
        let (relay, actions) =
            node_step(&relay, &cfg(), &ev(9_000, EventKind::FrameRx { frame: data })).unwrap();
        assert_eq!(relay.role_state, RoleState::RelayStoreForward);
        assert!(matches!(
            &actions[0],
            Action::TransmitFrame { frame: Frame::Ack { receiver, .. }, start_offset_us: 28, .. }
                if *receiver == addr(S)
        ));
        match &actions[1] {
            Action::TransmitFrame {
                frame: Frame::RRts { receiver, transmitter, .. },
                start_offset_us,
                ..
            } => {
                assert_eq!(receiver, &addr(D));
                assert_eq!(transmitter, &addr(R));
                // SIFS + acknowledgment airtime + DIFS.
                assert_eq!(*start_offset_us, 28 + 240 + 128);
            }
            other => panic!("expected the forward-leg reservation, got {other:?}"),
        }
        assert!(!actions.iter().any(|a| matches!(a, Action::DeliverPayload { .. })));
    }

    #[test]
    fn destination_delivers_payload() {
        let dest = NodeState::new(addr(D), true, route(&[]), 3);
        let rrts = Frame::RRts {
            duration_us: 8_400,
            receiver: addr(D),
            destination: addr(D),
            transmitter: addr(S),
            via_ris: true,
        };
        let (dest, _) = node_step(&dest, &cfg(), &ev(436, EventKind::FrameRx { frame: rrts })).unwrap();
        let data = Frame::Data {
            duration_us: 16_456,
            receiver: addr(D),
            destination: addr(D),
            transmitter: addr(S),
            payload_bits: 8_000,
        };
        let (dest, actions) =
            node_step(&dest, &cfg(), &ev(17_100, EventKind::FrameRx { frame: data })).unwrap();
        assert_eq!(dest.role_state, RoleState::Idle);
        assert!(actions.iter().any(|a| matches!(
            a,
            Action::DeliverPayload { bits: 8_000, from } if *from == addr(S)
        )));
    }

    #[test]
    fn nav_min_rule_only_shrinks() {
        let mut state = fresh_sender();
        state.nav_expiry_us = 10_000;
        let shrunk = apply_nav_min_rule(&state, 8_456, 1_000);
        assert_eq!(shrunk.nav_expiry_us, 1_000 + 8_456);
        let state_short = apply_nav_min_rule(&state, 8_456, 9_950);
        assert_eq!(state_short.nav_expiry_us, 10_000);
        let equal = apply_nav_min_rule(&state, 9_000, 1_000);
        assert_eq!(equal.nav_expiry_us, 10_000);
    }

    #[test]
    fn overheard_frames_load_the_nav() {
        let state = fresh_sender();
        let t = cfg();
        // Reservation for somebody else, destination beyond the receiver.
        let rrts = Frame::RRts {
            duration_us: 8_400,
            receiver: addr(R),
            destination: addr(D),
            transmitter: addr(0xE),
            via_ris: false,
        };
        let (state, actions) =
            node_step(&state, &t, &ev(300, EventKind::FrameRx { frame: rrts })).unwrap();
        assert!(actions.is_empty());
        assert_eq!(state.nav_expiry_us, 300 + 424);

        // An overheard data frame while the NAV runs applies the min rule.
        let data = Frame::Data {
            duration_us: 100,
            receiver: addr(R),
            destination: addr(D),
            transmitter: addr(0xE),
            payload_bits: 64,
        };
        let (state, _) = node_step(&state, &t, &ev(310, EventKind::FrameRx { frame: data })).unwrap();
        assert_eq!(state.nav_expiry_us, 310 + 100);
    }

    #[test]
    fn unsolicited_addressed_frames_are_violations() {
        let state = fresh_sender();
        let ack = Frame::Ack {
            duration_us: 0,
            receiver: addr(S),
            transmitter: addr(D),
        };
        let err = node_step(&state, &cfg(), &ev(0, EventKind::FrameRx { frame: ack }));
        assert!(matches!(err, Err(Error::ProtocolViolation(_))));

        // And mid-transfer send requests are refused with the state intact.
        let (started, _) = started_sender();
        let err = node_step(
            &started,
            &cfg(),
            &ev(
                10,
                EventKind::SendRequest {
                    destination: addr(D),
                    payload_bits: 1,
                },
            ),
        );
        assert!(matches!(err, Err(Error::ProtocolViolation(_))));
    }

    #[test]
    fn duration_clamp_is_counted() {
        let mut config = cfg();
        config.eta = 0.05; // reflective payload time far beyond the field
        let dest = NodeState::new(addr(D), true, route(&[]), 3);
        let rrts = Frame::RRts {
            duration_us: 8_400,
            receiver: addr(D),
            destination: addr(D),
            transmitter: addr(S),
            via_ris: true,
        };
        let (dest, actions) =
            node_step(&dest, &config, &ev(436, EventKind::FrameRx { frame: rrts })).unwrap();
        assert_eq!(dest.clamped_durations, 1);
        match &actions[0] {
            Action::TransmitFrame { frame: Frame::RCts { duration_us, .. }, .. } => {
                assert_eq!(*duration_us, u16::MAX);
            }
            other => panic!("expected a clear-to-send, got {other:?}"),
        }
    }
}
