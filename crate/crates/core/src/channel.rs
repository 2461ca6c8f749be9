//! Physical-layer channel model: free-space path loss, Nakagami-m fading,
//! conventional and reflective-link SNR, Monte-Carlo ergodic rates and the
//! reflective-link utilization efficiency.
//!
//! All stochastic estimators draw from per-sample counter-derived streams of
//! a seeded ChaCha generator, so results are bit-reproducible for a fixed
//! seed and remain coupled (common random numbers) across element counts and
//! across the reflective/conventional comparison.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT_M_PER_S: f64 = 299_792_458.0;

/// Physical constants for one link scenario.
///
/// Powers are supplied in dBm and converted to a linear SNR scale once at
/// construction; all internal math runs in linear units.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelParams {
    frequency_hz: f64,
    distance_m: f64,
    nakagami_m: f64,
    nakagami_omega: f64,
    noise_power_dbm: f64,
    transmit_power_dbm: f64,
    num_elements: usize,
    /// Transmit-to-noise power ratio, linear.
    snr_scale: f64,
}

impl ChannelParams {
    pub fn new(
        frequency_hz: f64,
        distance_m: f64,
        nakagami_m: f64,
        nakagami_omega: f64,
        noise_power_dbm: f64,
        transmit_power_dbm: f64,
        num_elements: usize,
    ) -> Result<Self> {
        if !(frequency_hz > 0.0) || !frequency_hz.is_finite() {
            return Err(Error::Domain(format!(
                "frequency must be positive, got {frequency_hz}"
            )));
        }
        if !(distance_m > 0.0) || !distance_m.is_finite() {
            return Err(Error::Domain(format!(
                "distance must be positive, got {distance_m}"
            )));
        }
        if !(nakagami_m >= 0.5) || !nakagami_m.is_finite() {
            return Err(Error::Domain(format!(
                "fading shape must be >= 0.5, got {nakagami_m}"
            )));
        }
        if !(nakagami_omega > 0.0) || !nakagami_omega.is_finite() {
            return Err(Error::Domain(format!(
                "fading spread must be positive, got {nakagami_omega}"
            )));
        }
        if !noise_power_dbm.is_finite() || !transmit_power_dbm.is_finite() {
            return Err(Error::Domain("powers must be finite dBm values".into()));
        }
        if num_elements == 0 {
            return Err(Error::Domain("element count must be positive".into()));
        }
        let wavelength = SPEED_OF_LIGHT_M_PER_S / frequency_hz;
        // Far-field check: the element panel must be small next to the hop.
        let far_field_floor = 10.0 * num_elements as f64 * wavelength;
        if distance_m < far_field_floor {
            return Err(Error::Domain(format!(
                "far-field condition violated: distance {distance_m} m < {far_field_floor} m \
                 (10 * {num_elements} elements * {wavelength:.4} m wavelength)"
            )));
        }
        let snr_scale = 10f64.powf((transmit_power_dbm - noise_power_dbm) / 10.0);
        Ok(ChannelParams {
            frequency_hz,
            distance_m,
            nakagami_m,
            nakagami_omega,
            noise_power_dbm,
            transmit_power_dbm,
            num_elements,
            snr_scale,
        })
    }

    /// 5.8 GHz carrier over 1000 m hops, Nakagami shape 2.5 with unit spread,
    /// -85 dBm noise, 0 dBm transmit power, 16 reflective elements.
    pub fn default_profile() -> Self {
        ChannelParams::new(5.8e9, 1_000.0, 2.5, 1.0, -85.0, 0.0, 16)
            .expect("default profile is valid")
    }

    pub fn frequency_hz(&self) -> f64 {
        self.frequency_hz
    }

    pub fn distance_m(&self) -> f64 {
        self.distance_m
    }

    pub fn nakagami_m(&self) -> f64 {
        self.nakagami_m
    }

    pub fn nakagami_omega(&self) -> f64 {
        self.nakagami_omega
    }

    pub fn noise_power_dbm(&self) -> f64 {
        self.noise_power_dbm
    }

    pub fn transmit_power_dbm(&self) -> f64 {
        self.transmit_power_dbm
    }

    pub fn num_elements(&self) -> usize {
        self.num_elements
    }

    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT_M_PER_S / self.frequency_hz
    }

    /// Linear transmit-to-noise power ratio, fixed at construction.
    pub fn snr_scale(&self) -> f64 {
        self.snr_scale
    }

    /// Convenience copy with a different transmit power.
    pub fn with_transmit_power_dbm(&self, dbm: f64) -> Result<Self> {
        ChannelParams::new(
            self.frequency_hz,
            self.distance_m,
            self.nakagami_m,
            self.nakagami_omega,
            self.noise_power_dbm,
            dbm,
            self.num_elements,
        )
    }

    /// Convenience copy with a different element count.
    pub fn with_num_elements(&self, n: usize) -> Result<Self> {
        ChannelParams::new(
            self.frequency_hz,
            self.distance_m,
            self.nakagami_m,
            self.nakagami_omega,
            self.noise_power_dbm,
            self.transmit_power_dbm,
            n,
        )
    }
}

/// One draw of every fading coefficient the SNR expressions consume.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// Fading magnitude of the direct (conventional) link.
    pub direct_gain: f64,
    /// Per-element fading magnitudes, source to surface.
    pub sr_gains: Vec<f64>,
    /// Per-element fading magnitudes, surface to destination.
    pub rd_gains: Vec<f64>,
    /// Per-element incident phases.
    pub sr_phases: Vec<f64>,
    /// Per-element departing phases.
    pub rd_phases: Vec<f64>,
    /// Per-element programmable phase shifts.
    pub ris_phases: Vec<f64>,
}

impl ChannelRealization {
    /// Checks list lengths against the element count and all gains for
    /// finiteness and nonnegativity.
    pub fn validate(&self, num_elements: usize) -> Result<()> {
        let lists = [
            ("sr_gains", self.sr_gains.len()),
            ("rd_gains", self.rd_gains.len()),
            ("sr_phases", self.sr_phases.len()),
            ("rd_phases", self.rd_phases.len()),
            ("ris_phases", self.ris_phases.len()),
        ];
        for (name, len) in lists {
            if len != num_elements {
                return Err(Error::Shape(format!(
                    "{name} has {len} entries, expected {num_elements}"
                )));
            }
        }
        let gain_ok = |g: &f64| g.is_finite() && *g >= 0.0;
        if !gain_ok(&self.direct_gain)
            || !self.sr_gains.iter().all(|g| gain_ok(g))
            || !self.rd_gains.iter().all(|g| gain_ok(g))
        {
            return Err(Error::Domain(
                "fading magnitudes must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Draws a full realization: Nakagami magnitudes, uniform link phases and
    /// matched programmable phases that cancel the composite link phase.
    pub fn sample<R: Rng + ?Sized>(params: &ChannelParams, rng: &mut R) -> Result<Self> {
        let sampler = NakagamiSampler::new(params.nakagami_m, params.nakagami_omega)?;
        let n = params.num_elements;
        let direct_gain = sampler.sample(rng);
        let mut sr_gains = Vec::with_capacity(n);
        let mut rd_gains = Vec::with_capacity(n);
        let mut sr_phases = Vec::with_capacity(n);
        let mut rd_phases = Vec::with_capacity(n);
        let mut ris_phases = Vec::with_capacity(n);
        let tau = 2.0 * std::f64::consts::PI;
        for _ in 0..n {
            sr_gains.push(sampler.sample(rng));
            rd_gains.push(sampler.sample(rng));
            let phi = rng.random::<f64>() * tau;
            let omega = rng.random::<f64>() * tau;
            sr_phases.push(phi);
            rd_phases.push(omega);
            ris_phases.push((tau - (phi + omega) % tau) % tau);
        }
        Ok(ChannelRealization {
            direct_gain,
            sr_gains,
            rd_gains,
            sr_phases,
            rd_phases,
            ris_phases,
        })
    }
}

/// Free-space path-loss amplitude: wavelength over (4 pi distance).
pub fn path_loss_amplitude(wavelength_m: f64, distance_m: f64) -> Result<f64> {
    if !(wavelength_m > 0.0) || !wavelength_m.is_finite() {
        return Err(Error::Domain(format!(
            "wavelength must be positive, got {wavelength_m}"
        )));
    }
    if !(distance_m > 0.0) || !distance_m.is_finite() {
        return Err(Error::Domain(format!(
            "distance must be positive, got {distance_m}"
        )));
    }
    Ok(wavelength_m / (4.0 * std::f64::consts::PI * distance_m))
}

/// Reusable Nakagami-m magnitude sampler: the square root of a
/// Gamma(m, omega/m) variate.
#[derive(Debug, Clone)]
pub struct NakagamiSampler {
    gamma: Gamma<f64>,
}

impl NakagamiSampler {
    pub fn new(m: f64, omega: f64) -> Result<Self> {
        if !(m >= 0.5) || !m.is_finite() {
            return Err(Error::Domain(format!("shape must be >= 0.5, got {m}")));
        }
        if !(omega > 0.0) || !omega.is_finite() {
            return Err(Error::Domain(format!("spread must be positive, got {omega}")));
        }
        let gamma = Gamma::new(m, omega / m)
            .map_err(|e| Error::Domain(format!("gamma distribution: {e}")))?;
        Ok(NakagamiSampler { gamma })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.gamma.sample(rng).sqrt()
    }
}

/// One Nakagami-m fading magnitude draw.
pub fn sample_nakagami_magnitude<R: Rng + ?Sized>(m: f64, omega: f64, rng: &mut R) -> Result<f64> {
    Ok(NakagamiSampler::new(m, omega)?.sample(rng))
}

/// SNR of the conventional line-of-sight link for one fading draw.
pub fn snr_conventional(params: &ChannelParams, direct_gain: f64) -> Result<f64> {
    if !direct_gain.is_finite() || direct_gain < 0.0 {
        return Err(Error::Domain(format!(
            "fading magnitude must be finite and nonnegative, got {direct_gain}"
        )));
    }
    let amp = path_loss_amplitude(params.wavelength_m(), params.distance_m)?;
    Ok(params.snr_scale * (amp * direct_gain).powi(2))
}

/// SNR of the reflective link for arbitrary programmable phases: coherent sum
/// of the per-element cascades, each attenuated by both hop distances.
pub fn snr_ris_general(params: &ChannelParams, real: &ChannelRealization) -> Result<f64> {
    real.validate(params.num_elements)?;
    let d2 = params.distance_m * params.distance_m;
    let mut sum = Complex64::new(0.0, 0.0);
    for i in 0..params.num_elements {
        let amplitude = real.sr_gains[i] * real.rd_gains[i] / d2;
        let phase = real.sr_phases[i] + real.rd_phases[i] + real.ris_phases[i];
        sum += Complex64::from_polar(amplitude, phase);
    }
    let lam_over_4pi = params.wavelength_m() / (4.0 * std::f64::consts::PI);
    Ok(params.snr_scale * lam_over_4pi.powi(4) * sum.norm_sqr())
}

/// SNR of the reflective link under ideal phase matching, where every
/// element's programmable shift cancels its composite link phase and the
/// cascades add coherently.
pub fn snr_ris_matched(params: &ChannelParams, real: &ChannelRealization) -> Result<f64> {
    real.validate(params.num_elements)?;
    let mut sum = 0.0;
    for i in 0..params.num_elements {
        sum += real.sr_gains[i] * real.rd_gains[i];
    }
    let amp = path_loss_amplitude(params.wavelength_m(), params.distance_m)?;
    Ok(params.snr_scale * amp.powi(4) * sum * sum)
}

/// Which link's ergodic rate a Monte-Carlo estimate targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateMode {
    Conventional,
    RisMatched,
}

/// Per-sample generator stream: the sample index selects an independent
/// counter stream of the seeded generator, so estimates with the same seed
/// share draws sample-for-sample regardless of how many samples or elements
/// other estimates consumed.
fn sample_stream(seed: u64, sample: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sample.wrapping_add(1));
    rng
}

/// Draws one coupled (conventional, matched-reflective) SNR pair.
///
/// The direct-link magnitude is drawn first, then the per-element cascade
/// pairs in element order, so estimates over a smaller element count see a
/// prefix of the draws made for a larger one.
fn snr_pair<R: Rng + ?Sized>(
    params: &ChannelParams,
    sampler: &NakagamiSampler,
    rng: &mut R,
) -> (f64, f64) {
    let direct = sampler.sample(rng);
    let mut cascade_sum = 0.0;
    for _ in 0..params.num_elements {
        let sr = sampler.sample(rng);
        let rd = sampler.sample(rng);
        cascade_sum += sr * rd;
    }
    let amp = params.wavelength_m() / (4.0 * std::f64::consts::PI * params.distance_m);
    let snr_conv = params.snr_scale * (amp * direct).powi(2);
    let snr_ris = params.snr_scale * amp.powi(4) * cascade_sum * cascade_sum;
    (snr_conv, snr_ris)
}

fn rate_of(snr: f64) -> f64 {
    // log2(1 + snr) via ln_1p: the reflective SNR can sit many orders of
    // magnitude below 1.
    snr.ln_1p() / std::f64::consts::LN_2
}

/// Monte-Carlo ergodic achievable rate in bits/s/Hz. Deterministic for a
/// fixed seed.
pub fn ergodic_rate(
    params: &ChannelParams,
    mode: RateMode,
    num_samples: u64,
    seed: u64,
) -> Result<f64> {
    ergodic_rate_with_se(params, mode, num_samples, seed).map(|(mean, _)| mean)
}

/// Monte-Carlo ergodic rate plus its standard error.
pub fn ergodic_rate_with_se(
    params: &ChannelParams,
    mode: RateMode,
    num_samples: u64,
    seed: u64,
) -> Result<(f64, f64)> {
    if num_samples == 0 {
        return Err(Error::Domain("sample count must be >= 1".into()));
    }
    let sampler = NakagamiSampler::new(params.nakagami_m, params.nakagami_omega)?;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for i in 0..num_samples {
        let mut rng = sample_stream(seed, i);
        let (snr_conv, snr_ris) = snr_pair(params, &sampler, &mut rng);
        let rate = match mode {
            RateMode::Conventional => rate_of(snr_conv),
            RateMode::RisMatched => rate_of(snr_ris),
        };
        sum += rate;
        sum_sq += rate * rate;
    }
    let n = num_samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    let se = if num_samples > 1 {
        (var / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok((mean, se))
}

/// Ratio of two ergodic-rate estimates computed from the same coupled draws.
fn rate_ratio(
    params: &ChannelParams,
    numerator: RateMode,
    denominator: RateMode,
    num_samples: u64,
    seed: u64,
) -> Result<f64> {
    if num_samples == 0 {
        return Err(Error::Domain("sample count must be >= 1".into()));
    }
    let sampler = NakagamiSampler::new(params.nakagami_m, params.nakagami_omega)?;
    let pick = |pair: (f64, f64), mode: RateMode| match mode {
        RateMode::Conventional => rate_of(pair.0),
        RateMode::RisMatched => rate_of(pair.1),
    };
    let mut num_sum = 0.0;
    let mut den_sum = 0.0;
    for i in 0..num_samples {
        let mut rng = sample_stream(seed, i);
        let pair = snr_pair(params, &sampler, &mut rng);
        num_sum += pick(pair, numerator);
        den_sum += pick(pair, denominator);
    }
    if den_sum == 0.0 {
        return Err(Error::DivideByZero("denominator rate estimate is zero"));
    }
    Ok(num_sum / den_sum)
}

/// Utilization efficiency of the reflective channel: the ratio of its ergodic
/// rate to the conventional link's, estimated with common random numbers per
/// element draw.
pub fn ris_efficiency(params: &ChannelParams, num_samples: u64, seed: u64) -> Result<f64> {
    rate_ratio(
        params,
        RateMode::RisMatched,
        RateMode::Conventional,
        num_samples,
        seed,
    )
}

#[cfg(test)]
pub(crate) fn rate_ratio_for_tests(
    params: &ChannelParams,
    numerator: RateMode,
    denominator: RateMode,
    num_samples: u64,
    seed: u64,
) -> Result<f64> {
    rate_ratio(params, numerator, denominator, num_samples, seed)
}
