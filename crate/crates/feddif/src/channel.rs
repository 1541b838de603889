//! Simulated wireless layer.
//!
//! Log-distance pathloss plus Rayleigh block fading gives each link a channel
//! coefficient `g = sqrt(beta) * h`; spectral efficiency is `log2(1 + SNR)`.
//! A model of `S` bits then costs a bandwidth-time product of `S / gamma`,
//! which sub-frame accounting converts into the scheduler's cost unit. Links
//! are gated by a minimum spectral efficiency and by a 5% outage-probability
//! ceiling before they may carry a model.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Scheduling ceiling on the link outage probability.
pub const OUTAGE_MAX: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("link unusable: spectral efficiency {gamma} is not positive")]
    LinkUnusable { gamma: f64 },
}

/// Radio parameters. Defaults follow 3GPP numerology 0 (15 kHz subcarriers,
/// 1 ms sub-frames, 180 kHz resource blocks) in a 250 m cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioConfig {
    /// Reference pathloss gain at `d0`, in dB (any sign).
    pub beta0_db: f64,
    /// Pathloss exponent.
    pub kappa: f64,
    /// Reference distance in meters.
    pub d0: f64,
    /// Noise power spectral density in W/Hz.
    pub noise_psd: f64,
    /// Transmit power in W.
    pub tx_power: f64,
    /// Deployment disk radius in meters.
    pub cell_radius: f64,
    /// Subcarrier spacing in Hz.
    pub subcarrier_spacing: f64,
    /// Sub-frame duration in seconds.
    pub subframe_duration: f64,
    /// Resource-block bandwidth in Hz; also the per-link allocation unit and
    /// the noise bandwidth.
    pub rb_bandwidth: f64,
    /// Total bandwidth budget per diffusion round, in Hz. Budgets compare
    /// against bandwidth-time products over a 1 s scheduling window, so this
    /// doubles as the Hz*s budget.
    pub total_bandwidth: f64,
    /// Bandwidth each active background user (CUE) reserves, in Hz.
    pub cue_bandwidth: f64,
    /// Rate term `R` of the outage formula `1 - exp(-(2^R - 1) / SNR)`.
    /// `None` uses the configured minimum tolerable spectral efficiency.
    pub outage_rate_product: Option<f64>,
}

impl Default for RadioConfig {
    fn default() -> Self {
        Self {
            beta0_db: -40.0,
            kappa: 3.5,
            d0: 1.0,
            noise_psd: 3.98e-21, // -174 dBm/Hz
            tx_power: 0.2,       // 23 dBm
            cell_radius: 250.0,
            subcarrier_spacing: 15e3,
            subframe_duration: 1e-3,
            rb_bandwidth: 180e3,
            total_bandwidth: 10e6,
            cue_bandwidth: 180e3,
            outage_rate_product: None,
        }
    }
}

impl RadioConfig {
    /// Noise power over one resource block.
    pub fn noise_power(&self) -> f64 {
        self.noise_psd * self.rb_bandwidth
    }
}

/// Everything needed to rate one link: large-scale gain, fading draw, the
/// combined coefficient, post-fading SNR and spectral efficiency.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkState {
    pub distance: f64,
    /// Large-scale power gain (linear).
    pub beta: f64,
    /// Small-scale fading coefficient.
    pub h: Complex64,
    /// Combined channel coefficient `g = sqrt(beta) * h`.
    pub g: Complex64,
    /// `|g|^2 * p / sigma^2`.
    pub snr: f64,
    /// `log2(1 + snr)`, in bits/s/Hz.
    pub spectral_eff: f64,
}

impl LinkState {
    /// Rates a link of the given length under a fading draw.
    pub fn build(distance: f64, h: Complex64, cfg: &RadioConfig) -> Self {
        let beta = large_scale_gain(distance, cfg);
        let g = beta.sqrt() * h;
        let snr = g.norm_sqr() * cfg.tx_power / cfg.noise_power();
        LinkState {
            distance,
            beta,
            h,
            g,
            snr,
            spectral_eff: spectral_efficiency_from_snr(snr),
        }
    }
}

/// Linear large-scale power gain at `distance`:
/// `beta0_db - 10 * kappa * log10(d / d0)`, converted from dB.
///
/// Distances below the reference distance (co-located devices) clamp to `d0`.
pub fn large_scale_gain(distance: f64, cfg: &RadioConfig) -> f64 {
    let d = distance.max(cfg.d0);
    let db = cfg.beta0_db - 10.0 * cfg.kappa * (d / cfg.d0).log10();
    10f64.powf(db / 10.0)
}

/// One Rayleigh fading draw, `h ~ CN(0, 1)`: real and imaginary parts are
/// i.i.d. normal with variance 1/2, so `E[|h|^2] = 1`.
pub fn sample_fading<R: Rng>(rng: &mut R) -> Complex64 {
    let comp = Normal::new(0.0, std::f64::consts::FRAC_1_SQRT_2).expect("valid std dev");
    Complex64::new(comp.sample(rng), comp.sample(rng))
}

/// Spectral efficiency of a link, `log2(1 + snr)` bits/s/Hz.
pub fn spectral_efficiency(link: &LinkState) -> f64 {
    spectral_efficiency_from_snr(link.snr)
}

fn spectral_efficiency_from_snr(snr: f64) -> f64 {
    (1.0 + snr).log2()
}

/// Bandwidth-time product needed to move `model_bits` over a link of
/// spectral efficiency `gamma`: `S / gamma`, in Hz*s.
pub fn required_resource(model_bits: u64, gamma: f64) -> Result<f64, ChannelError> {
    if gamma <= 0.0 {
        return Err(ChannelError::LinkUnusable { gamma });
    }
    Ok(model_bits as f64 / gamma)
}

/// Number of sub-frames a transmission occupies when granted `allocated_bw`:
/// `ceil(resource / (allocated_bw * subframe_duration))`.
pub fn subframe_count(resource: f64, allocated_bw: f64, cfg: &RadioConfig) -> u64 {
    assert!(allocated_bw > 0.0, "allocated bandwidth must be positive");
    assert!(resource >= 0.0);
    if resource == 0.0 {
        return 0;
    }
    let capacity = allocated_bw * cfg.subframe_duration;
    let ratio = resource / capacity;
    // Snap near-integer ratios so an exactly full sub-frame stays one frame.
    let count = if (ratio - ratio.round()).abs() < 1e-9 {
        ratio.round() as u64
    } else {
        ratio.ceil() as u64
    };
    count.max(1)
}

/// Outage probability of a Rayleigh link at rate term `R`:
/// `1 - exp(-(2^R - 1) / snr)`.
pub fn outage_probability(rate_product: f64, snr: f64) -> f64 {
    assert!(snr > 0.0, "outage is defined for positive SNR");
    1.0 - (-(2f64.powf(rate_product) - 1.0) / snr).exp()
}

/// Scheduling gate: a link may carry a model only if its spectral efficiency
/// meets the minimum tolerable QoS and its outage probability stays within
/// [`OUTAGE_MAX`].
pub fn gate_link(link: &LinkState, gamma_min: f64, rate_product: f64) -> bool {
    if link.spectral_eff < gamma_min {
        return false;
    }
    link.snr > 0.0 && outage_probability(rate_product, link.snr) <= OUTAGE_MAX
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cfg() -> RadioConfig {
        RadioConfig::default()
    }

    #[test]
    fn gain_at_reference_distance() {
        let c = RadioConfig {
            beta0_db: -40.0,
            ..cfg()
        };
        assert_relative_eq!(large_scale_gain(c.d0, &c), 1e-4, epsilon = 1e-16);
    }

    #[test]
    fn gain_hand_example() {
        // kappa = 3, d = 10 d0, beta0 = 0 dB -> -30 dB -> 1e-3 linear.
        let c = RadioConfig {
            beta0_db: 0.0,
            kappa: 3.0,
            ..cfg()
        };
        assert_relative_eq!(large_scale_gain(10.0 * c.d0, &c), 1e-3, epsilon = 1e-12);
    }

    #[test]
    fn gain_clamps_below_reference() {
        let c = cfg();
        assert_eq!(large_scale_gain(0.0, &c), large_scale_gain(c.d0, &c));
    }

    #[test]
    fn fading_unit_mean_power_and_exponential_law() {
        let mut rng = stream(5, Domain::Fading, 0, 0);
        let n = 100_000;
        let mut mean_power = 0.0;
        let mut below_one = 0usize;
        for _ in 0..n {
            let h = sample_fading(&mut rng);
            let p = h.norm_sqr();
            mean_power += p;
            if p <= 1.0 {
                below_one += 1;
            }
        }
        mean_power /= n as f64;
        assert!((0.99..=1.01).contains(&mean_power), "E|h|^2 = {mean_power}");
        // |h|^2 ~ Exp(1): CDF(1) = 1 - e^-1.
        let cdf = below_one as f64 / n as f64;
        assert!((cdf - (1.0 - (-1.0f64).exp())).abs() < 0.01, "cdf(1) = {cdf}");
    }

    #[test]
    fn fading_is_deterministic_per_seed() {
        let a = sample_fading(&mut stream(5, Domain::Fading, 1, 2));
        let b = sample_fading(&mut stream(5, Domain::Fading, 1, 2));
        assert_eq!(a, b);
    }

    #[test]
    fn spectral_efficiency_known_points() {
        let c = cfg();
        let mut link = LinkState::build(10.0, Complex64::new(1.0, 0.0), &c);
        for (snr, gamma) in [(3.0, 2.0), (0.0, 0.0), (1.0, 1.0)] {
            link.snr = snr;
            assert_relative_eq!(
                spectral_efficiency_from_snr(snr),
                gamma,
                epsilon = 1e-12
            );
            link.spectral_eff = spectral_efficiency(&link);
            assert_relative_eq!(link.spectral_eff, gamma, epsilon = 1e-12);
        }
    }

    #[test]
    fn link_state_invariants() {
        let c = cfg();
        let mut rng = stream(6, Domain::Fading, 0, 0);
        for _ in 0..100 {
            let d: f64 = rng.random_range(1.0..500.0);
            let link = LinkState::build(d, sample_fading(&mut rng), &c);
            assert!((link.g.norm_sqr() - link.beta * link.h.norm_sqr()).abs() < 1e-9);
            assert!((link.spectral_eff - (1.0 + link.snr).log2()).abs() < 1e-9);
        }
    }

    #[test]
    fn required_resource_examples() {
        assert_relative_eq!(required_resource(1_000_000, 2.0).unwrap(), 5e5);
        assert_eq!(required_resource(0, 1.0).unwrap(), 0.0);
        let r1 = required_resource(5000, 1.5).unwrap();
        let r2 = required_resource(5000, 3.0).unwrap();
        assert_relative_eq!(r1, 2.0 * r2, epsilon = 1e-12);
        assert!(required_resource(10, 0.0).is_err());
        assert!(required_resource(10, -1.0).is_err());
    }

    #[test]
    fn subframe_count_examples() {
        let c = cfg();
        // 5e5 Hz*s over one 180 kHz resource block at 1 ms sub-frames.
        assert_eq!(subframe_count(5e5, 180e3, &c), 2778);
        // Exactly one sub-frame's capacity.
        assert_eq!(subframe_count(180.0, 180e3, &c), 1);
        assert_eq!(subframe_count(0.0, 180e3, &c), 0);
    }

    #[test]
    fn outage_examples() {
        // (2^R - 1)/snr = 1 -> 1 - e^-1.
        assert_relative_eq!(
            outage_probability(1.0, 1.0),
            1.0 - (-1.0f64).exp(),
            epsilon = 1e-12
        );
        assert_eq!(outage_probability(0.0, 5.0), 0.0);
        assert!(outage_probability(2.0, 1e12) < 1e-10);
    }

    #[test]
    fn gate_link_cases() {
        let c = cfg();
        let link = LinkState::build(20.0, Complex64::new(1.0, 0.0), &c);
        assert!(link.spectral_eff > 1.0, "test link should be strong");
        // Below gamma_min fails regardless of outage.
        assert!(!gate_link(&link, link.spectral_eff + 1.0, 0.0));
        // Zero rate product means zero outage; only the QoS floor matters.
        assert!(gate_link(&link, 0.0, 0.0));
        assert!(gate_link(&link, 1.0, 1.0));
        // A weak link fails on outage even with no QoS floor.
        let weak = LinkState::build(c.cell_radius * 2.0, Complex64::new(0.05, 0.0), &c);
        assert!(outage_probability(1.0, weak.snr) > OUTAGE_MAX);
        assert!(!gate_link(&weak, 0.0, 1.0));
    }

    proptest! {
        /// Pathloss is monotone non-increasing in distance.
        #[test]
        fn gain_monotone(d1 in 0.1..1000.0f64, d2 in 0.1..1000.0f64) {
            let c = cfg();
            let (lo, hi) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
            prop_assert!(large_scale_gain(hi, &c) <= large_scale_gain(lo, &c));
        }

        /// Rebuilding the rate from raw parts matches the pipeline.
        #[test]
        fn pipeline_identity(d in 1.0..500.0f64, re in -2.0..2.0f64, im in -2.0..2.0f64) {
            let c = cfg();
            let link = LinkState::build(d, Complex64::new(re, im), &c);
            let g2 = large_scale_gain(d, &c) * (re * re + im * im);
            let gamma = (1.0 + g2 * c.tx_power / c.noise_power()).log2();
            prop_assert!((link.spectral_eff - gamma).abs() < 1e-9);
        }

        /// Sub-frame accounting is conservative but wastes less than one
        /// sub-frame's capacity.
        #[test]
        fn subframes_conservative(resource in 0.01..1e7f64, bw in 1e3..1e6f64) {
            let c = cfg();
            let n = subframe_count(resource, bw, &c);
            let capacity = bw * c.subframe_duration;
            prop_assert!(n >= 1);
            prop_assert!(n as f64 * capacity >= resource - 1e-6 * resource);
            prop_assert!((n as f64 - 1.0) * capacity < resource + 1e-6 * resource);
        }

        /// Doubling the allocation never increases the sub-frame count.
        #[test]
        fn subframes_monotone_in_bandwidth(resource in 0.01..1e6f64, bw in 1e3..1e6f64) {
            let c = cfg();
            prop_assert!(subframe_count(resource, 2.0 * bw, &c) <= subframe_count(resource, bw, &c));
        }

        /// Outage grows with the rate term and shrinks with SNR; the gate is
        /// monotone in SNR.
        #[test]
        fn outage_monotone(r in 0.0..8.0f64, snr in 0.01..1e6f64) {
            let p = outage_probability(r, snr);
            prop_assert!((0.0..1.0).contains(&p));
            prop_assert!(outage_probability(r + 0.5, snr) >= p);
            prop_assert!(outage_probability(r, snr * 2.0) <= p);

            let c = cfg();
            let mut link = LinkState::build(10.0, Complex64::new(1.0, 0.0), &c);
            link.snr = snr;
            link.spectral_eff = spectral_efficiency(&link);
            let mut stronger = link.clone();
            stronger.snr = snr * 2.0;
            stronger.spectral_eff = spectral_efficiency(&stronger);
            if gate_link(&link, 1.0, r) {
                prop_assert!(gate_link(&stronger, 1.0, r));
            }
        }
    }
}
