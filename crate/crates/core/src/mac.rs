//! Closed-form saturation-throughput model for the RIS-DCF dual-hop access
//! scheme and its m-hop extension.
//!
//! The medium is modeled as a renewal process over contention slots: each
//! cycle is either an idle slot, a first-hop collision, or a first-hop win
//! followed by further per-hop contention stages. Timing aggregates come from
//! the frame lengths and interframe spaces in [`MacTimings`]; contention
//! probabilities come from a two-stage p-persistent CSMA abstraction.

use crate::error::{Error, Result};

/// Whether a relay hop rides the reflective link or a conventional
/// store-and-forward channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LinkMode {
    Ris,
    Conventional,
}

impl std::fmt::Display for LinkMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LinkMode::Ris => write!(f, "ris"),
            LinkMode::Conventional => write!(f, "conventional"),
        }
    }
}

/// Frame lengths, interframe spaces and the base rate; the source of all
/// airtime arithmetic.
///
/// All times derived from integer bit counts at the default 1 Mbps base rate
/// are exactly representable, so downstream aggregates are bit-stable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MacTimings {
    pub rrts_bits: u64,
    pub rcts_bits: u64,
    pub ack_bits: u64,
    pub phy_header_bits: u64,
    pub mac_header_bits: u64,
    pub base_rate_bps: u64,
    pub sifs_us: u64,
    pub difs_us: u64,
    pub slot_us: u64,
    /// Packet payload E in bits.
    pub payload_bits: u64,
}

impl Default for MacTimings {
    /// 1 Mbps base rate, 208/160/240-bit control frames, 128+272-bit headers,
    /// 28/128/50 us SIFS/DIFS/slot, 1000-byte payload.
    fn default() -> Self {
        MacTimings {
            rrts_bits: 208,
            rcts_bits: 160,
            ack_bits: 240,
            phy_header_bits: 128,
            mac_header_bits: 272,
            base_rate_bps: 1_000_000,
            sifs_us: 28,
            difs_us: 128,
            slot_us: 50,
            payload_bits: 8_000,
        }
    }
}

impl MacTimings {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("rrts_bits", self.rrts_bits),
            ("rcts_bits", self.rcts_bits),
            ("ack_bits", self.ack_bits),
            ("phy_header_bits", self.phy_header_bits),
            ("mac_header_bits", self.mac_header_bits),
            ("base_rate_bps", self.base_rate_bps),
            ("sifs_us", self.sifs_us),
            ("difs_us", self.difs_us),
            ("slot_us", self.slot_us),
            ("payload_bits", self.payload_bits),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be strictly positive")));
            }
        }
        Ok(())
    }

    pub fn rrts_airtime_us(&self) -> f64 {
        frame_airtime(self.rrts_bits, self.base_rate_bps)
    }

    pub fn rcts_airtime_us(&self) -> f64 {
        frame_airtime(self.rcts_bits, self.base_rate_bps)
    }

    pub fn ack_airtime_us(&self) -> f64 {
        frame_airtime(self.ack_bits, self.base_rate_bps)
    }

    /// Airtime H of the PHY plus MAC headers, sent at the base rate even on
    /// reflective links (only the payload is scaled by the link efficiency).
    pub fn header_airtime_us(&self) -> f64 {
        frame_airtime(self.phy_header_bits + self.mac_header_bits, self.base_rate_bps)
    }

    /// Airtime of the payload E over a conventional channel.
    pub fn payload_airtime_us(&self) -> f64 {
        frame_airtime(self.payload_bits, self.base_rate_bps)
    }
}

/// Airtime of `bits` at `rate_bps`, in microseconds.
///
/// Computed as an exact integer numerator over an integer rate, so any result
/// that is an integer number of microseconds is exact in `f64`.
pub fn frame_airtime(bits: u64, rate_bps: u64) -> f64 {
    (bits as u128 * 1_000_000) as f64 / rate_bps as f64
}

/// Per-slot transmission probability and contender counts for the dual-hop
/// access model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContentionConfig {
    /// Per-slot transmission probability, shared by every contender.
    pub p: f64,
    /// Contenders at the relay, including the source node (L).
    pub first_hop_contenders: u32,
    /// Contenders at the destination, including the relay (K).
    pub later_hop_contenders: u32,
    /// Number of hops end to end (m).
    pub hops: u32,
}

impl ContentionConfig {
    pub fn new(p: f64, first_hop: u32, later_hops: u32, hops: u32) -> Result<Self> {
        let cfg = ContentionConfig {
            p,
            first_hop_contenders: first_hop,
            later_hop_contenders: later_hops,
            hops,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) || self.p.is_nan() {
            return Err(Error::Domain(format!("p must lie in [0, 1], got {}", self.p)));
        }
        if self.first_hop_contenders < 1 {
            return Err(Error::Domain("first-hop contender count must be >= 1".into()));
        }
        if self.later_hop_contenders < 1 {
            return Err(Error::Domain("later-hop contender count must be >= 1".into()));
        }
        if self.hops < 1 {
            return Err(Error::Domain("hop count must be >= 1".into()));
        }
        Ok(())
    }
}

/// Slot-outcome probabilities of the two contention stages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContentionProbabilities {
    /// Nobody transmits in a first-hop slot.
    pub idle: f64,
    /// Exactly one of the L first-hop contenders transmits.
    pub success1: f64,
    /// Two or more first-hop contenders transmit.
    pub collision1: f64,
    /// None of the K-1 other later-hop contenders interferes with the forward.
    pub success2: f64,
    /// At least one later-hop contender interferes.
    pub collision2: f64,
}

/// Slot-outcome probabilities for a [`ContentionConfig`].
pub fn contention_probabilities(cfg: &ContentionConfig) -> ContentionProbabilities {
    let p = cfg.p;
    let l = cfg.first_hop_contenders;
    let k = cfg.later_hop_contenders;
    let idle = (1.0 - p).powi(l as i32);
    let success1 = l as f64 * p * (1.0 - p).powi(l as i32 - 1);
    let collision1 = 1.0 - success1 - idle;
    let success2 = (1.0 - p).powi(k as i32 - 1);
    let collision2 = 1.0 - success2;
    ContentionProbabilities {
        idle,
        success1,
        collision1,
        success2,
        collision2,
    }
}

/// Cycle-duration aggregates for one link mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingSet {
    /// Total time of a fully successful dual-hop transfer.
    pub t_success_us: f64,
    /// Time lost to a collision during the first reservation frame.
    pub t_collision1_us: f64,
    /// Time lost to a collision during the forwarded reservation frame.
    pub t_collision2_us: f64,
    pub mode: LinkMode,
}

/// Payload transmission time over the reflective link: the conventional
/// payload airtime divided by the link efficiency.
pub fn ris_transmission_time(t_data_us: f64, eta: f64) -> Result<f64> {
    if !(t_data_us > 0.0) || !t_data_us.is_finite() {
        return Err(Error::Domain(format!(
            "payload airtime must be positive and finite, got {t_data_us}"
        )));
    }
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::Domain(format!("efficiency must be > 0, got {eta}")));
    }
    Ok(t_data_us / eta)
}

/// Cycle durations for a reflective dual hop carrying the payload in
/// `t_ris_us` microseconds.
pub fn timing_set_ris(t: &MacTimings, t_ris_us: f64) -> Result<TimingSet> {
    if !t_ris_us.is_finite() || t_ris_us < 0.0 {
        return Err(Error::Domain(format!(
            "reflective payload time must be finite and >= 0, got {t_ris_us}"
        )));
    }
    let rrts = t.rrts_airtime_us();
    let rcts = t.rcts_airtime_us();
    let ack = t.ack_airtime_us();
    let sifs = t.sifs_us as f64;
    let difs = t.difs_us as f64;
    let header = t.header_airtime_us();
    // First reservation, SIFS, forwarded reservation, SIFS, clear-to-send,
    // SIFS, headers plus payload, SIFS, acknowledgment, DIFS.
    let t_success = rrts + sifs + rrts + sifs + rcts + sifs + header + t_ris_us + sifs + ack + difs;
    let t_collision1 = rrts + difs;
    let t_collision2 = rrts + sifs + rrts + difs;
    Ok(TimingSet {
        t_success_us: t_success,
        t_collision1_us: t_collision1,
        t_collision2_us: t_collision2,
        mode: LinkMode::Ris,
    })
}

/// Cycle durations for two consecutive conventional store-and-forward hops.
pub fn timing_set_conventional(t: &MacTimings) -> TimingSet {
    let rrts = t.rrts_airtime_us();
    let rcts = t.rcts_airtime_us();
    let ack = t.ack_airtime_us();
    let sifs = t.sifs_us as f64;
    let difs = t.difs_us as f64;
    let header = t.header_airtime_us();
    let single_hop =
        rrts + sifs + rcts + sifs + header + t.payload_airtime_us() + sifs + ack + difs;
    TimingSet {
        t_success_us: 2.0 * single_hop,
        t_collision1_us: rrts + difs,
        t_collision2_us: rrts + difs,
        mode: LinkMode::Conventional,
    }
}

/// Per-term breakdown of the renewal-cycle denominator, in microseconds of
/// expected time per cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct DenominatorTerms {
    /// Idle-slot term.
    pub idle_us: f64,
    /// One collision term per hop, in hop order.
    pub collision_us: Vec<f64>,
    /// Full-success term.
    pub success_us: f64,
}

impl DenominatorTerms {
    pub fn total_us(&self) -> f64 {
        let mut total = self.idle_us;
        for term in &self.collision_us {
            total += term;
        }
        total + self.success_us
    }
}

/// Saturation throughput together with the quantities that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ThroughputResult {
    /// Delivered payload bits per second of channel time.
    pub throughput_bps: f64,
    pub probabilities: ContentionProbabilities,
    pub denominator_terms_us: DenominatorTerms,
    pub mode: LinkMode,
}

/// Renewal-cycle throughput over an arbitrary hop chain.
///
/// `hop_terms` lists, per hop, the success probability, the collision
/// probability and the collision cycle time; `t_success_us` is the cycle time
/// when every hop succeeds. The single shared idle term charges one empty
/// slot weighted by the first-hop idle probability.
fn renewal_throughput(
    probs: ContentionProbabilities,
    hop_terms: &[(f64, f64, f64)],
    t_success_us: f64,
    slot_us: f64,
    payload_bits: u64,
    mode: LinkMode,
) -> ThroughputResult {
    let idle_term = probs.idle * slot_us;
    let mut collision_terms = Vec::with_capacity(hop_terms.len());
    let mut reach = 1.0; // probability of reaching the current hop
    for &(p_success, p_collision, t_collision) in hop_terms {
        collision_terms.push(reach * p_collision * t_collision);
        reach *= p_success;
    }
    let success_term = reach * t_success_us;
    let terms = DenominatorTerms {
        idle_us: idle_term,
        collision_us: collision_terms,
        success_us: success_term,
    };
    let numerator_bits = reach * payload_bits as f64;
    // Bits per microsecond, scaled to bits per second.
    let throughput_bps = numerator_bits / terms.total_us() * 1e6;
    ThroughputResult {
        throughput_bps,
        probabilities: probs,
        denominator_terms_us: terms,
        mode,
    }
}

/// End-to-end saturation throughput of the dual-hop access model.
pub fn dual_hop_throughput(
    probs: &ContentionProbabilities,
    times: &TimingSet,
    t: &MacTimings,
) -> ThroughputResult {
    let hop_terms = [
        (probs.success1, probs.collision1, times.t_collision1_us),
        (probs.success2, probs.collision2, times.t_collision2_us),
    ];
    renewal_throughput(
        *probs,
        &hop_terms,
        times.t_success_us,
        t.slot_us as f64,
        t.payload_bits,
        times.mode,
    )
}

/// Ratio of reflective-link to conventional saturation throughput.
pub fn throughput_gain(s_ris_bps: f64, s_conv_bps: f64) -> Result<f64> {
    if s_conv_bps == 0.0 {
        return Err(Error::DivideByZero("conventional throughput is zero"));
    }
    Ok(s_ris_bps / s_conv_bps)
}

/// Total success time of an m-hop chain when every reflective pairing is
/// available: even hop counts ride the reflective link in pairs; an odd hop
/// count leaves one trailing conventional hop, costing half a conventional
/// dual-hop cycle.
pub fn multihop_success_time_us(hops: u32, ris: &TimingSet, conv: &TimingSet) -> f64 {
    if hops % 2 == 0 {
        (hops / 2) as f64 * ris.t_success_us
    } else {
        ((hops - 1) / 2) as f64 * ris.t_success_us + conv.t_success_us / 2.0
    }
}

/// Total success time of an m-hop chain over conventional links only: m
/// single-hop cycles of half a conventional dual-hop cycle each.
pub fn multihop_success_time_conventional_us(hops: u32, conv: &TimingSet) -> f64 {
    hops as f64 * (conv.t_success_us / 2.0)
}

/// Time lost when a collision occurs during hop `hop_index` (1-based).
///
/// On the reflective chain, odd hops collide during a fresh reservation and
/// even hops during a forwarded one; conventional chains always lose a single
/// reservation frame plus DIFS.
pub fn multihop_collision_time_us(
    hop_index: u32,
    mode: LinkMode,
    ris: &TimingSet,
    conv: &TimingSet,
) -> f64 {
    match mode {
        LinkMode::Ris => {
            if hop_index % 2 == 0 {
                ris.t_collision2_us
            } else {
                ris.t_collision1_us
            }
        }
        LinkMode::Conventional => conv.t_collision1_us,
    }
}

/// End-to-end saturation throughput of an m-hop chain.
///
/// Hop 1 uses the first-hop contention probabilities; every later hop uses
/// the later-hop ones. The idle term charges one slot weighted by the
/// first-hop idle probability only. At m = 2 this reduces exactly to
/// [`dual_hop_throughput`].
pub fn multihop_throughput(
    cfg: &ContentionConfig,
    ris: &TimingSet,
    conv: &TimingSet,
    t: &MacTimings,
    mode: LinkMode,
) -> ThroughputResult {
    let probs = contention_probabilities(cfg);
    let mut hop_terms = Vec::with_capacity(cfg.hops as usize);
    for hop in 1..=cfg.hops {
        let (p_success, p_collision) = if hop == 1 {
            (probs.success1, probs.collision1)
        } else {
            (probs.success2, probs.collision2)
        };
        let t_collision = multihop_collision_time_us(hop, mode, ris, conv);
        hop_terms.push((p_success, p_collision, t_collision));
    }
    let t_success = match mode {
        LinkMode::Ris => multihop_success_time_us(cfg.hops, ris, conv),
        LinkMode::Conventional => multihop_success_time_conventional_us(cfg.hops, conv),
    };
    renewal_throughput(
        probs,
        &hop_terms,
        t_success,
        t.slot_us as f64,
        t.payload_bits,
        mode,
    )
}

/// Per-slot transmission probability implied by an initial backoff window
/// `w`, maximum backoff stage `n` and a saturated contender count, via the
/// coupled random-access fixed point
///
/// ```text
/// tau = 2(1-2q) / ((1-2q)(w+1) + q w (1-(2q)^n)),   q = 1-(1-tau)^(contenders-1)
/// ```
///
/// solved by damped iteration to |delta tau| < 1e-9 (at most 1e4 steps).
pub fn bianchi_transmission_probability(w: u32, n: u32, contenders: u32) -> Result<f64> {
    if w < 1 {
        return Err(Error::Domain("initial window must be >= 1".into()));
    }
    if contenders < 1 {
        return Err(Error::Domain("contender count must be >= 1".into()));
    }
    let w = w as f64;
    let n = n as i32;
    let tau_of = |q: f64| -> f64 {
        let denom = (1.0 - 2.0 * q) * (w + 1.0) + q * w * (1.0 - (2.0 * q).powi(n));
        if denom.abs() < 1e-300 {
            return 0.0;
        }
        (2.0 * (1.0 - 2.0 * q) / denom).clamp(0.0, 1.0)
    };
    let mut tau = (2.0 / (w + 1.0)).clamp(0.0, 1.0);
    for _ in 0..10_000 {
        let q = 1.0 - (1.0 - tau).powi(contenders as i32 - 1);
        let next = 0.5 * tau + 0.5 * tau_of(q);
        let delta = (next - tau).abs();
        tau = next;
        if delta < 1e-9 {
            let q = 1.0 - (1.0 - tau).powi(contenders as i32 - 1);
            let residual = (tau - tau_of(q)).abs();
            if residual > 1e-6 {
                return Err(Error::NonConvergence(format!(
                    "fixed point residual {residual:.3e} at tau={tau:.6e} (w={w}, n={n}, contenders={contenders})"
                )));
            }
            return Ok(tau);
        }
    }
    Err(Error::NonConvergence(format!(
        "no fixed point after 1e4 iterations (w={w}, n={n}, contenders={contenders}, last tau={tau:.6e})"
    )))
}
