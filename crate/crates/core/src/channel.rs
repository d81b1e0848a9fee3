//! Path loss, Rayleigh block fading, Shannon rates and the per-UE interference estimate.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use thiserror::Error;

use crate::model::Point;

/// Distances below this are clamped so that co-located nodes keep a finite gain.
pub const MIN_DISTANCE: f64 = 1.0;

/// Number of logarithmic interference bins above the underflow bin.
pub const HISTOGRAM_BINS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum ChannelError {
    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("interference must be nonnegative, got {0}")]
    NegativeInterference(f64),
}

/// `24 log10(x) + 20 log10(f_GHz) + 60` dB.
pub fn path_loss_db(distance: f64, carrier_ghz: f64) -> Result<f64, ChannelError> {
    if !(distance > 0.0) {
        return Err(ChannelError::NonPositiveDistance(distance));
    }
    Ok(24.0 * distance.log10() + 20.0 * carrier_ghz.log10() + 60.0)
}

/// Linear mean power gain between two points (fading averaged out).
pub fn mean_gain(a: Point, b: Point, carrier_ghz: f64) -> f64 {
    let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
        .sqrt()
        .max(MIN_DISTANCE);
    let pl = path_loss_db(d, carrier_ghz).expect("clamped distance is positive");
    10f64.powf(-pl / 10.0)
}

/// Rayleigh amplitude with unit mean power, i.e. an `Exp(1)` power gain.
pub fn draw_fading<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let g: f64 = Exp1.sample(rng);
    // Exp1 can return exactly 0; keep gains strictly positive.
    g.max(f64::MIN_POSITIVE)
}

/// `W log2(1 + P h / (N0 W + I))`.
#[inline]
pub fn shannon_rate(bandwidth: f64, signal: f64, noise: f64, interference: f64) -> f64 {
    bandwidth * (signal / (noise + interference)).ln_1p() / std::f64::consts::LN_2
}

/// Interference-free full-power rate `R^max`.
pub fn max_rate(power_budget: f64, gain: f64, bandwidth: f64, noise: f64) -> f64 {
    shannon_rate(bandwidth, power_budget * gain, noise, 0.0)
}

/// Current and mean gains, both indexed `[ue][server]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    pub gains: Vec<Vec<f64>>,
    pub mean_gains: Vec<Vec<f64>>,
}

impl ChannelState {
    /// Gains at the mean (no fading drawn yet).
    pub fn from_geometry(ues: &[Point], servers: &[Point], carrier_ghz: f64) -> Self {
        let mean_gains: Vec<Vec<f64>> = ues
            .iter()
            .map(|&u| servers.iter().map(|&s| mean_gain(u, s, carrier_ghz)).collect())
            .collect();
        ChannelState {
            gains: mean_gains.clone(),
            mean_gains,
        }
    }

    /// Redraws i.i.d. block fading on every link.
    pub fn redraw<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for (row, mean) in self.gains.iter_mut().zip(&self.mean_gains) {
            for (g, m) in row.iter_mut().zip(mean) {
                *g = m * draw_fading(rng);
            }
        }
    }
}

/// Rate of UE `i` towards server `j` given every UE's power and association.
/// Interference comes from the other UEs associated with `j`.
pub fn rate(
    i: usize,
    j: usize,
    powers: &[f64],
    assignment: &[usize],
    gains: &[Vec<f64>],
    bandwidth: f64,
    noise: f64,
) -> f64 {
    if assignment[i] != j {
        return 0.0;
    }
    let interference: f64 = (0..powers.len())
        .filter(|&k| k != i && assignment[k] == j)
        .map(|k| powers[k] * gains[k][j])
        .sum();
    shannon_rate(bandwidth, powers[i] * gains[i][j], noise, interference)
}

/// Empirical distribution of the interference a UE observes, on a fixed
/// log-spaced support plus an underflow bin that stands for zero.
#[derive(Debug, Clone, PartialEq)]
pub struct InterferenceHistogram {
    lo: f64,
    log_lo: f64,
    log_step: f64,
    probabilities: Vec<f64>,
    samples: u64,
}

impl InterferenceHistogram {
    /// Support `[N0W 1e-3, N0W 1e6]`; prior is a point mass on zero interference.
    pub fn new(noise_power: f64) -> Self {
        let lo = noise_power * 1e-3;
        let hi = noise_power * 1e6;
        let mut probabilities = vec![0.0; HISTOGRAM_BINS + 1];
        probabilities[0] = 1.0;
        InterferenceHistogram {
            lo,
            log_lo: lo.ln(),
            log_step: (hi / lo).ln() / HISTOGRAM_BINS as f64,
            probabilities,
            samples: 0,
        }
    }

    /// `HISTOGRAM_BINS + 1` edges of the logarithmic bins, in W.
    pub fn bin_edges(&self) -> Vec<f64> {
        (0..=HISTOGRAM_BINS)
            .map(|k| (self.log_lo + k as f64 * self.log_step).exp())
            .collect()
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn sample_count(&self) -> u64 {
        self.samples
    }

    /// Bin holding `interference`; values above the support fall in the last bin.
    pub fn bin_of(&self, interference: f64) -> Result<usize, ChannelError> {
        if !(interference >= 0.0) {
            return Err(ChannelError::NegativeInterference(interference));
        }
        if interference < self.lo {
            return Ok(0);
        }
        let k = ((interference.ln() - self.log_lo) / self.log_step).floor() as usize;
        Ok(k.min(HISTOGRAM_BINS - 1) + 1)
    }

    /// Value that stands for bin `k`: zero for the underflow bin, the
    /// geometric center otherwise.
    pub fn representative(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            (self.log_lo + (k as f64 - 0.5) * self.log_step).exp()
        }
    }

    /// `p'(k) = 1{k = observed}/(t+2) + (t+1) p(k)/(t+2)`.
    pub fn observe(&mut self, interference: f64) -> Result<(), ChannelError> {
        let hit = self.bin_of(interference)?;
        let t = self.samples as f64;
        let keep = (t + 1.0) / (t + 2.0);
        for p in &mut self.probabilities {
            *p *= keep;
        }
        self.probabilities[hit] += 1.0 / (t + 2.0);
        self.samples += 1;
        Ok(())
    }

    /// `(interference, probability)` over bins with positive mass.
    pub fn support(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.probabilities
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(k, &p)| (self.representative(k), p))
    }

    /// A point mass at `interference`, bypassing the recursion. Useful when the
    /// interference is known exactly.
    pub fn point_mass(noise_power: f64, interference: f64) -> Result<Self, ChannelError> {
        let mut h = InterferenceHistogram::new(noise_power);
        let k = h.bin_of(interference)?;
        h.probabilities.iter_mut().for_each(|p| *p = 0.0);
        h.probabilities[k] = 1.0;
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const F: f64 = 5.8;

    #[test]
    fn path_loss_reference_points() {
        let carrier = 20.0 * 5.8f64.log10();
        assert_relative_eq!(path_loss_db(1.0, F).unwrap(), carrier + 60.0, epsilon = 1e-12);
        assert_relative_eq!(path_loss_db(1.0, F).unwrap(), 75.27, epsilon = 5e-3);
        assert_relative_eq!(path_loss_db(10.0, F).unwrap(), 99.27, epsilon = 5e-3);
        assert_relative_eq!(path_loss_db(100.0, F).unwrap(), 123.27, epsilon = 5e-3);
        assert!(path_loss_db(0.0, F).is_err());
        assert!(path_loss_db(-3.0, F).is_err());
    }

    #[test]
    fn fading_is_unit_mean_exponential() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let (mut sum, mut above) = (0.0, 0usize);
        for _ in 0..n {
            let g = draw_fading(&mut rng);
            sum += g;
            above += usize::from(g > 1.0);
        }
        assert!((sum / n as f64 - 1.0).abs() < 0.01);
        assert!((above as f64 / n as f64 - (-1f64).exp()).abs() < 0.01);

        let a: Vec<f64> = (0..8).map(|_| draw_fading(&mut ChaCha8Rng::seed_from_u64(3))).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn rate_examples() {
        let w = 10e6;
        let noise = 1e-13;
        // Single UE at SNR 1.
        let gains = vec![vec![noise]];
        assert_relative_eq!(rate(0, 0, &[1.0], &[0], &gains, w, noise), w, max_relative = 1e-12);
        // Not associated.
        let gains = vec![vec![noise, noise]];
        assert_eq!(rate(0, 1, &[1.0], &[0], &gains, w, noise), 0.0);
        // Two symmetric UEs with P h / N0W = 3.
        let gains = vec![vec![3.0 * noise], vec![3.0 * noise]];
        let r = rate(0, 0, &[1.0, 1.0], &[0, 0], &gains, w, noise);
        assert_relative_eq!(r, w * 1.75f64.log2(), max_relative = 1e-12);
    }

    #[test]
    fn max_rate_examples() {
        let w = 10e6;
        let noise = crate::model::dbm_to_watts(-174.0) * w;
        assert_relative_eq!(max_rate(1.0, noise, w, noise), w, max_relative = 1e-12);
        assert_eq!(max_rate(0.0, 1.0, w, noise), 0.0);
        // dB chain: 30 dBm - 99.27 dB + 174 dBm/Hz - 70 dB(Hz).
        let h = 10f64.powf(-path_loss_db(10.0, F).unwrap() / 10.0);
        let snr_db = 30.0 - path_loss_db(10.0, F).unwrap() + 174.0 - 70.0;
        assert_relative_eq!(snr_db, 34.73, epsilon = 5e-3);
        let expected = w * (1.0 + 10f64.powf(snr_db / 10.0)).log2();
        assert_relative_eq!(max_rate(1.0, h, w, noise), expected, max_relative = 1e-9);
        assert!((max_rate(1.0, h, w, noise) - 115.4e6).abs() < 0.1e6);
    }

    #[test]
    fn histogram_first_update_splits_mass() {
        let n0w = 4e-14;
        let mut h = InterferenceHistogram::new(n0w);
        assert_eq!(h.probabilities()[0], 1.0);
        let k = h.bin_of(n0w).unwrap();
        assert!(k > 0);
        h.observe(n0w).unwrap();
        assert_eq!(h.probabilities()[0], 0.5);
        assert_eq!(h.probabilities()[k], 0.5);
        assert_eq!(h.sample_count(), 1);
    }

    #[test]
    fn histogram_converges_to_repeated_bin() {
        let mut h = InterferenceHistogram::new(4e-14);
        let k = h.bin_of(1e-12).unwrap();
        let mut last = 0.0;
        for _ in 0..500 {
            h.observe(1e-12).unwrap();
            assert!(h.probabilities()[k] > last);
            last = h.probabilities()[k];
        }
        assert!(last > 0.99);
        assert!(h.observe(-1.0).is_err());
    }

    #[test]
    fn histogram_bins_cover_support() {
        let n0w = 4e-14;
        let h = InterferenceHistogram::new(n0w);
        let edges = h.bin_edges();
        assert_eq!(edges.len(), HISTOGRAM_BINS + 1);
        assert_relative_eq!(edges[0], n0w * 1e-3, max_relative = 1e-12);
        assert_relative_eq!(edges[HISTOGRAM_BINS], n0w * 1e6, max_relative = 1e-12);
        for k in 1..=HISTOGRAM_BINS {
            let r = h.representative(k);
            assert!(edges[k - 1] < r && r < edges[k]);
            assert_eq!(h.bin_of(r).unwrap(), k);
        }
        assert_eq!(h.bin_of(0.0).unwrap(), 0);
        assert_eq!(h.bin_of(1.0).unwrap(), HISTOGRAM_BINS);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn histogram_mass_is_preserved(obs in proptest::collection::vec(0.0f64..1e-6, 1..200)) {
                let mut h = InterferenceHistogram::new(4e-14);
                for x in obs {
                    h.observe(x).unwrap();
                    let total: f64 = h.probabilities().iter().sum();
                    prop_assert!((total - 1.0).abs() < 1e-9);
                    prop_assert!(h.probabilities().iter().all(|p| *p >= 0.0));
                }
            }

            #[test]
            fn rate_monotone_and_bounded(
                p in 0.0f64..1.0, dp in 0.0f64..1.0, q in 0.0f64..1.0, dq in 0.0f64..1.0,
                g0 in 1e-12f64..1e-8, g1 in 1e-12f64..1e-8,
            ) {
                let noise = 4e-14;
                let w = 10e6;
                let gains = vec![vec![g0], vec![g1]];
                let r = |a: f64, b: f64| rate(0, 0, &[a, b], &[0, 0], &gains, w, noise);
                prop_assert!(r(p + dp, q) >= r(p, q));
                prop_assert!(r(p, q + dq) <= r(p, q));
                prop_assert!(r(p, q) <= max_rate(p, g0, w, noise) * (1.0 + 1e-12));
                prop_assert!(r(1.0, q) <= max_rate(1.0, g0, w, noise) * (1.0 + 1e-12));
            }
        }
    }
}
