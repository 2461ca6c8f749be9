//! Deterministic discrete-event simulation.
//!
//! Two engines share the event-queue machinery:
//!
//! - [`run_simulation`]: the slotted contention engine. It simulates the
//!   renewal process behind the closed-form model (per-slot transmission
//!   decisions, per-hop collision windows, full-success cycles) and is the
//!   cross-validation target for the analytic throughput expressions.
//! - [`protocol::run_protocol_simulation`]: the full-protocol engine. It
//!   drives the per-node state machines over a shared medium with
//!   per-neighborhood carrier sensing, reflective-link reachability and
//!   collision-by-overlap semantics.
//!
//! Both are bit-reproducible for a fixed seed: events are ordered by
//! (time, sequence) and every random draw comes from one seeded generator.

pub mod protocol;

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::mac::{
    bianchi_transmission_probability, multihop_collision_time_us, multihop_success_time_us,
    multihop_success_time_conventional_us, ris_transmission_time, timing_set_conventional,
    timing_set_ris, LinkMode, MacTimings,
};

/// Queue entry. Events leave the queue in (time, sequence) order; the
/// sequence is a unique monotone tiebreaker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimEvent<K> {
    pub time_us: u64,
    pub sequence: u64,
    pub kind: K,
}

impl<K: Eq> Ord for SimEvent<K> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.time_us, self.sequence).cmp(&(other.time_us, other.sequence))
    }
}

impl<K: Eq> PartialOrd for SimEvent<K> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Min-queue over (time, sequence).
#[derive(Debug)]
pub struct EventQueue<K: Eq> {
    heap: BinaryHeap<Reverse<SimEvent<K>>>,
    next_sequence: u64,
}

impl<K: Eq> EventQueue<K> {
    pub fn new() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            next_sequence: 0,
        }
    }

    pub fn push(&mut self, time_us: u64, kind: K) {
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.heap.push(Reverse(SimEvent {
            time_us,
            sequence,
            kind,
        }));
    }

    pub fn pop(&mut self) -> Option<SimEvent<K>> {
        self.heap.pop().map(|Reverse(e)| e)
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }
}

impl<K: Eq> Default for EventQueue<K> {
    fn default() -> Self {
        EventQueue::new()
    }
}

/// One line of simulator trace output.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub time_us: u64,
    /// Node identifier; zero for engine-level records.
    pub node: u64,
    pub kind: &'static str,
    pub frame: Option<Frame>,
}

/// Writes trace records as tab-separated lines:
/// time_us, node, event kind, frame variant, addresses.
pub fn write_trace<W: Write>(records: &[TraceRecord], out: &mut W) -> std::io::Result<()> {
    for r in records {
        let (variant, addresses) = match &r.frame {
            Some(f) => (f.variant_name(), frame_addresses(f)),
            None => ("-", String::from("-")),
        };
        writeln!(
            out,
            "{}\t{:012x}\t{}\t{}\t{}",
            r.time_us, r.node, r.kind, variant, addresses
        )?;
    }
    Ok(())
}

fn frame_addresses(frame: &Frame) -> String {
    match frame {
        Frame::RRts {
            receiver,
            destination,
            transmitter,
            ..
        } => format!("ra={receiver} da={destination} ta={transmitter}"),
        Frame::RCts { receiver, sender, .. } => format!("ra={receiver} sa={sender}"),
        Frame::Data {
            receiver,
            destination,
            transmitter,
            ..
        } => format!("ra={receiver} da={destination} ta={transmitter}"),
        Frame::Ack {
            receiver,
            transmitter,
            ..
        } => format!("ra={receiver} ta={transmitter}"),
    }
}

/// Contention population of a chain scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Topology {
    /// Contenders at the relay, including the source (L).
    pub first_hop_contenders: u32,
    /// Contenders at the destination, including the relay (K).
    pub later_hop_contenders: u32,
    /// Hops end to end (m).
    pub hops: u32,
    /// Every contender regenerates a payload as soon as its attempt ends.
    pub saturation: bool,
}

impl Topology {
    pub fn dual_hop(first_hop_contenders: u32, later_hop_contenders: u32) -> Self {
        Topology {
            first_hop_contenders,
            later_hop_contenders,
            hops: 2,
            saturation: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.first_hop_contenders < 1 || self.later_hop_contenders < 1 {
            return Err(Error::Config("contender counts must be >= 1".into()));
        }
        if self.hops < 1 {
            return Err(Error::Config("hop count must be >= 1".into()));
        }
        Ok(())
    }
}

/// How contenders decide to transmit in a slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BackoffMode {
    /// Independent per-slot coin flips with probability `p`.
    PPersistent { p: f64 },
    /// First-hop contenders run binary exponential backoff with initial
    /// window `w` and maximum stage `n`; later-hop contenders use the
    /// per-slot probability the same (w, n) imply at their population via the
    /// random-access fixed point.
    Exponential { w: u32, n: u32 },
}

/// Counters accumulated by a run.
///
/// For slotted runs the time ledger is exact:
/// `idle_slots * slot + collision_time_us + success_count * t_success =
/// elapsed_us`. The protocol engine reports wall-clock `elapsed_us` and event
/// counts but does not partition time into slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SimMetrics {
    pub delivered_payload_bits: u64,
    pub elapsed_us: u64,
    pub success_count: u64,
    pub collision_count_hop1: u64,
    /// Collisions at any later hop (exactly hop 2 for dual-hop runs).
    pub collision_count_hop2: u64,
    pub idle_slots: u64,
    /// Total time burned in collision cycles.
    pub collision_time_us: u64,
    /// First-hop decision slots processed.
    pub slots: u64,
    /// Slots in which exactly one first-hop contender transmitted.
    pub first_hop_wins: u64,
    /// First-hop wins that proceeded to a second-hop decision.
    pub second_hop_attempts: u64,
    /// Second-hop decisions that came out clean.
    pub second_hop_passes: u64,
}

impl SimMetrics {
    /// Delivered payload bits per second of simulated time.
    pub fn throughput_bps(&self) -> f64 {
        if self.elapsed_us == 0 {
            return 0.0;
        }
        self.delivered_payload_bits as f64 / self.elapsed_us as f64 * 1e6
    }
}

/// Empirical slot-outcome fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventFractions {
    pub idle: f64,
    pub success1: f64,
    pub collision1: f64,
    pub success2: f64,
    pub collision2: f64,
}

/// Empirical counterparts of the contention probabilities, from slot outcome
/// counts.
pub fn measure_event_fractions(metrics: &SimMetrics) -> Result<EventFractions> {
    let stage1 = metrics.idle_slots + metrics.collision_count_hop1 + metrics.first_hop_wins;
    if stage1 == 0 {
        return Err(Error::Domain("no slots were observed".into()));
    }
    let stage1 = stage1 as f64;
    let idle = metrics.idle_slots as f64 / stage1;
    let success1 = metrics.first_hop_wins as f64 / stage1;
    let collision1 = metrics.collision_count_hop1 as f64 / stage1;
    let (success2, collision2) = if metrics.second_hop_attempts == 0 {
        (1.0, 0.0)
    } else {
        let attempts = metrics.second_hop_attempts as f64;
        let passes = metrics.second_hop_passes as f64 / attempts;
        (passes, 1.0 - passes)
    };
    Ok(EventFractions {
        idle,
        success1,
        collision1,
        success2,
        collision2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SlotKind {
    Boundary,
}

/// Slotted contention run over `slots` first-hop decision slots.
///
/// Each slot either stays idle (one slot time), dies in a first-hop collision,
/// or promotes a single winner through the later hops, any of which may
/// collide; a fully successful cycle delivers the payload and occupies the
/// mode's success time. Durations are quantized to whole microseconds.
#[allow(clippy::too_many_arguments)]
pub fn run_simulation(
    topology: &Topology,
    timings: &MacTimings,
    mode: LinkMode,
    backoff: BackoffMode,
    eta: f64,
    slots: u64,
    seed: u64,
    mut trace: Option<&mut Vec<TraceRecord>>,
) -> Result<SimMetrics> {
    topology.validate()?;
    timings.validate()?;
    if slots == 0 {
        return Err(Error::Config("slot budget must be >= 1".into()));
    }

    let t_ris = ris_transmission_time(timings.payload_airtime_us(), eta)?;
    let ris = timing_set_ris(timings, t_ris)?;
    let conv = timing_set_conventional(timings);
    let t_success = match mode {
        LinkMode::Ris => multihop_success_time_us(topology.hops, &ris, &conv),
        LinkMode::Conventional => multihop_success_time_conventional_us(topology.hops, &conv),
    }
    .ceil() as u64;
    let t_collision: Vec<u64> = (1..=topology.hops)
        .map(|hop| multihop_collision_time_us(hop, mode, &ris, &conv).ceil() as u64)
        .collect();
    let slot_us = timings.slot_us;

    let l = topology.first_hop_contenders as usize;
    let k_minus_1 = topology.later_hop_contenders as usize - 1;

    // Per-contender decision state.
    let (p1, p_later, mut counters, mut stages, w, n) = match backoff {
        BackoffMode::PPersistent { p } => {
            if !(0.0..=1.0).contains(&p) || p.is_nan() {
                return Err(Error::Config(format!("p must lie in [0, 1], got {p}")));
            }
            (p, p, Vec::new(), Vec::new(), 0u32, 0u8)
        }
        BackoffMode::Exponential { w, n } => {
            let p_later = if topology.later_hop_contenders > 1 {
                bianchi_transmission_probability(w, n, topology.later_hop_contenders)?
            } else {
                0.0
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_C0DE);
            let counters: Vec<u32> = (0..l).map(|_| rng.random_range(0..w.max(1))).collect();
            (
                0.0,
                p_later,
                counters,
                vec![0u8; l],
                w.max(1),
                n.min(31) as u8,
            )
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut queue: EventQueue<SlotKind> = EventQueue::new();
    queue.push(0, SlotKind::Boundary);

    let mut metrics = SimMetrics::default();
    let mut transmitters: Vec<usize> = Vec::with_capacity(l);

    while metrics.slots < slots {
        let event = queue
            .pop()
            .ok_or_else(|| Error::Stalled("event queue drained before the slot budget".into()))?;
        let now = event.time_us;

        // First-hop decisions.
        transmitters.clear();
        match backoff {
            BackoffMode::PPersistent { .. } => {
                for i in 0..l {
                    if rng.random::<f64>() < p1 {
                        transmitters.push(i);
                    }
                }
            }
            BackoffMode::Exponential { .. } => {
                for (i, c) in counters.iter().enumerate() {
                    if *c == 0 {
                        transmitters.push(i);
                    }
                }
            }
        }

        let advance;
        match transmitters.len() {
            0 => {
                metrics.idle_slots += 1;
                advance = slot_us;
                if let BackoffMode::Exponential { .. } = backoff {
                    for c in counters.iter_mut() {
                        if *c > 0 {
                            *c -= 1;
                        }
                    }
                }
                push_trace(&mut trace, now, 0, "slot-idle", None);
            }
            1 => {
                metrics.first_hop_wins += 1;
                let winner = transmitters[0];
                // Later hops: the established chain transmits for sure; the
                // destination-side contenders may stomp on any hop.
                let mut failed_hop = None;
                for hop in 2..=topology.hops {
                    if hop == 2 {
                        metrics.second_hop_attempts += 1;
                    }
                    let mut interfered = false;
                    for _ in 0..k_minus_1 {
                        if rng.random::<f64>() < p_later {
                            interfered = true;
                        }
                    }
                    if interfered {
                        failed_hop = Some(hop);
                        break;
                    }
                    if hop == 2 {
                        metrics.second_hop_passes += 1;
                    }
                }
                if topology.hops == 1 {
                    // Degenerate single hop: the win is the delivery.
                }
                match failed_hop {
                    None => {
                        metrics.success_count += 1;
                        metrics.delivered_payload_bits += timings.payload_bits;
                        advance = t_success;
                        if let BackoffMode::Exponential { .. } = backoff {
                            stages[winner] = 0;
                            counters[winner] = rng.random_range(0..w);
                        }
                        push_trace(&mut trace, now, winner as u64 + 1, "slot-success", None);
                    }
                    Some(hop) => {
                        metrics.collision_count_hop2 += 1;
                        advance = t_collision[hop as usize - 1];
                        metrics.collision_time_us += advance;
                        if let BackoffMode::Exponential { .. } = backoff {
                            stages[winner] = (stages[winner] + 1).min(n);
                            counters[winner] =
                                rng.random_range(0..w.saturating_mul(1 << stages[winner]));
                        }
                        push_trace(&mut trace, now, winner as u64 + 1, "slot-collision-later", None);
                    }
                }
            }
            _ => {
                metrics.collision_count_hop1 += 1;
                advance = t_collision[0];
                metrics.collision_time_us += advance;
                if let BackoffMode::Exponential { .. } = backoff {
                    for &i in &transmitters {
                        stages[i] = (stages[i] + 1).min(n);
                        counters[i] = rng.random_range(0..w.saturating_mul(1 << stages[i]));
                    }
                }
                push_trace(&mut trace, now, 0, "slot-collision-first", None);
            }
        }

        metrics.slots += 1;
        metrics.elapsed_us = now + advance;
        queue.push(now + advance, SlotKind::Boundary);
    }

    Ok(metrics)
}

fn push_trace(
    trace: &mut Option<&mut Vec<TraceRecord>>,
    time_us: u64,
    node: u64,
    kind: &'static str,
    frame: Option<Frame>,
) {
    if let Some(records) = trace.as_deref_mut() {
        records.push(TraceRecord {
            time_us,
            node,
            kind,
            frame,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mac::{
        contention_probabilities, dual_hop_throughput, multihop_throughput, ContentionConfig,
    };

    fn default_run(
        l: u32,
        k: u32,
        p: f64,
        mode: LinkMode,
        slots: u64,
        seed: u64,
    ) -> SimMetrics {
        let topology = Topology::dual_hop(l, k);
        run_simulation(
            &topology,
            &MacTimings::default(),
            mode,
            BackoffMode::PPersistent { p },
            0.5,
            slots,
            seed,
            None,
        )
        .unwrap()
    }

    #[test]
    fn lone_chain_is_back_to_back_successes() {
        let m = default_run(1, 1, 1.0, LinkMode::Conventional, 1_000, 1);
        assert_eq!(m.success_count, 1_000);
        assert_eq!(m.collision_count_hop1, 0);
        assert_eq!(m.idle_slots, 0);
        assert_eq!(m.elapsed_us, 1_000 * 18_440);
        let expected = 8_000.0 / 18_440.0 * 1e6;
        assert!((m.throughput_bps() - expected).abs() < 1e-6);
    }

    #[test]
    fn certain_collision_with_two_always_on_contenders() {
        let m = default_run(2, 2, 1.0, LinkMode::Ris, 500, 3);
        assert_eq!(m.collision_count_hop1, 500);
        assert_eq!(m.success_count, 0);
        let fr = measure_event_fractions(&m).unwrap();
        assert_eq!(fr.collision1, 1.0);
    }

    #[test]
    fn zero_probability_idles_forever() {
        let m = default_run(5, 6, 0.0, LinkMode::Ris, 2_000, 4);
        assert_eq!(m.idle_slots, 2_000);
        let fr = measure_event_fractions(&m).unwrap();
        assert_eq!(fr.idle, 1.0);
        assert_eq!(m.throughput_bps(), 0.0);
    }

    #[test]
    fn conservation_ledger_is_exact() {
        for seed in [1u64, 2, 3] {
            let m = default_run(5, 6, 0.1, LinkMode::Ris, 50_000, seed);
            let ledger = m.idle_slots * 50 + m.collision_time_us + m.success_count * 17_456;
            assert_eq!(ledger, m.elapsed_us);
        }
    }

    #[test]
    fn reproducible_and_seed_sensitive() {
        let a = default_run(5, 6, 0.1, LinkMode::Ris, 20_000, 42);
        let b = default_run(5, 6, 0.1, LinkMode::Ris, 20_000, 42);
        assert_eq!(a, b);
        let c = default_run(5, 6, 0.1, LinkMode::Ris, 20_000, 43);
        assert_ne!(a, c);
    }

    #[test]
    fn converges_to_analytic_dual_hop() {
        let t = MacTimings::default();
        let cfg = ContentionConfig::new(0.1, 5, 6, 2).unwrap();
        let pr = contention_probabilities(&cfg);
        let t_ris = ris_transmission_time(t.payload_airtime_us(), 0.5).unwrap();
        let ris = timing_set_ris(&t, t_ris).unwrap();
        let conv = timing_set_conventional(&t);
        for (set, mode) in [(&ris, LinkMode::Ris), (&conv, LinkMode::Conventional)] {
            let analytic = dual_hop_throughput(&pr, set, &t).throughput_bps;
            let m = default_run(5, 6, 0.1, mode, 1_000_000, 7);
            let rel = (m.throughput_bps() - analytic).abs() / analytic;
            assert!(rel < 0.05, "{mode}: sim {} vs analytic {analytic}", m.throughput_bps());
        }
    }

    #[test]
    fn converges_to_analytic_multihop() {
        let t = MacTimings::default();
        let cfg = ContentionConfig::new(0.1, 5, 6, 4).unwrap();
        let t_ris = ris_transmission_time(t.payload_airtime_us(), 0.5).unwrap();
        let ris = timing_set_ris(&t, t_ris).unwrap();
        let conv = timing_set_conventional(&t);
        let analytic = multihop_throughput(&cfg, &ris, &conv, &t, LinkMode::Ris).throughput_bps;
        let topology = Topology {
            first_hop_contenders: 5,
            later_hop_contenders: 6,
            hops: 4,
            saturation: true,
        };
        let m = run_simulation(
            &topology,
            &t,
            LinkMode::Ris,
            BackoffMode::PPersistent { p: 0.1 },
            0.5,
            1_000_000,
            11,
            None,
        )
        .unwrap();
        let rel = (m.throughput_bps() - analytic).abs() / analytic;
        assert!(rel < 0.05, "sim {} vs analytic {analytic}", m.throughput_bps());
    }

    #[test]
    fn event_fractions_match_contention_probabilities() {
        let cfg = ContentionConfig::new(0.1, 5, 6, 2).unwrap();
        let pr = contention_probabilities(&cfg);
        let m = default_run(5, 6, 0.1, LinkMode::Ris, 1_000_000, 13);
        let fr = measure_event_fractions(&m).unwrap();
        let n1 = (m.idle_slots + m.collision_count_hop1 + m.first_hop_wins) as f64;
        let n2 = m.second_hop_attempts as f64;
        let se = |p: f64, n: f64| (p * (1.0 - p) / n).sqrt();
        assert!((fr.idle - pr.idle).abs() < 3.0 * se(pr.idle, n1));
        assert!((fr.success1 - pr.success1).abs() < 3.0 * se(pr.success1, n1));
        assert!((fr.collision1 - pr.collision1).abs() < 3.0 * se(pr.collision1, n1));
        assert!((fr.success2 - pr.success2).abs() < 3.0 * se(pr.success2, n2));
        assert!((fr.collision2 - pr.collision2).abs() < 3.0 * se(pr.collision2, n2));
    }

    #[test]
    fn empty_metrics_cannot_be_measured() {
        let m = SimMetrics::default();
        assert!(measure_event_fractions(&m).is_err());
    }

    #[test]
    fn exponential_mode_runs_and_balances() {
        let topology = Topology::dual_hop(5, 6);
        let m = run_simulation(
            &topology,
            &MacTimings::default(),
            LinkMode::Ris,
            BackoffMode::Exponential { w: 32, n: 3 },
            0.5,
            200_000,
            21,
            None,
        )
        .unwrap();
        assert!(m.success_count > 0);
        let ledger = m.idle_slots * 50 + m.collision_time_us + m.success_count * 17_456;
        assert_eq!(ledger, m.elapsed_us);
        // With one contender per stage there is no contention at all.
        let solo = run_simulation(
            &Topology::dual_hop(1, 1),
            &MacTimings::default(),
            LinkMode::Ris,
            BackoffMode::Exponential { w: 32, n: 3 },
            0.5,
            5_000,
            22,
            None,
        )
        .unwrap();
        assert_eq!(solo.collision_count_hop1 + solo.collision_count_hop2, 0);
    }

    #[test]
    fn exponential_tracks_fixed_point_prediction() {
        // The W -> p mapping puts the slotted run in the neighborhood of the
        // analytic curve evaluated at the fixed-point probability.
        let t = MacTimings::default();
        let p = bianchi_transmission_probability(32, 3, 5).unwrap();
        let cfg = ContentionConfig::new(p, 5, 6, 2).unwrap();
        let pr = contention_probabilities(&cfg);
        let t_ris = ris_transmission_time(t.payload_airtime_us(), 0.5).unwrap();
        let ris = timing_set_ris(&t, t_ris).unwrap();
        let analytic = dual_hop_throughput(&pr, &ris, &t).throughput_bps;
        let m = run_simulation(
            &Topology::dual_hop(5, 6),
            &t,
            LinkMode::Ris,
            BackoffMode::Exponential { w: 32, n: 3 },
            0.5,
            500_000,
            23,
            None,
        )
        .unwrap();
        let rel = (m.throughput_bps() - analytic).abs() / analytic;
        assert!(rel < 0.15, "sim {} vs fixed-point analytic {analytic}", m.throughput_bps());
    }

    #[test]
    fn trace_records_cover_every_slot() {
        let mut records = Vec::new();
        let topology = Topology::dual_hop(3, 3);
        run_simulation(
            &topology,
            &MacTimings::default(),
            LinkMode::Ris,
            BackoffMode::PPersistent { p: 0.2 },
            0.5,
            500,
            5,
            Some(&mut records),
        )
        .unwrap();
        assert_eq!(records.len(), 500);
        let mut out = Vec::new();
        write_trace(&records, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 500);
        assert!(text.lines().all(|l| l.split('\t').count() == 5));
    }

    #[test]
    fn queue_orders_by_time_then_sequence() {
        let mut q: EventQueue<u32> = EventQueue::new();
        q.push(10, 1);
        q.push(5, 2);
        q.push(10, 3);
        let order: Vec<(u64, u32)> = std::iter::from_fn(|| q.pop().map(|e| (e.time_us, e.kind)))
            .collect();
        assert_eq!(order, vec![(5, 2), (10, 1), (10, 3)]);
    }
}
