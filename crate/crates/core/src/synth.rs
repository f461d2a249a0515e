//! Synthetic spectrum-occupancy data: a daily Gaussian-mixture activity
//! profile over time slots, day-of-week weights with per-day noise, and a
//! uniform frequency marginal. Occupancy is Bernoulli per entry; the tensor
//! records the mean of `samples_per_slot` such draws scaled by the signal
//! power, plus clamped sensor noise. Ground truth keeps the first draw per
//! entry, so detection can be scored against actual occupancy events.

use crate::error::{Error, Result};
use crate::tensor::{BoolTensor3, MaskTensor3, Tensor3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Day factors are clamped to [0, this] and divided by it, so occupancy
/// probabilities stay within [0, peak_occupancy].
const DAY_CLAMP: f64 = 1.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    /// (channels, slots per day, days).
    pub dims: (usize, usize, usize),
    /// Mixture weights of the three daily activity peaks; must sum to 1.
    pub gmm_weights: [f64; 3],
    /// Peak centers in slot units.
    pub gmm_means: [f64; 3],
    /// Common width of all three peaks, in slots.
    pub gmm_sigma: f64,
    /// Mean day factor by day-of-week class j = n mod 7.
    pub day_weights: [f64; 7],
    /// Per-day factor noise: standard deviation is this times the class mean.
    /// Zero makes day factors deterministic.
    pub day_noise_scale: f64,
    /// Occupancy probability at the busiest slot of an average full-weight
    /// day; in (0, 1].
    pub peak_occupancy: f64,
    pub signal_power: f64,
    /// Sensor noise standard deviation; zero disables noise.
    pub noise_floor_sigma: f64,
    /// Bernoulli draws averaged into each tensor entry. One draw gives raw
    /// binary occupancy; more emulate within-slot energy averaging and lower
    /// the irreducible prediction error.
    pub samples_per_slot: usize,
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            dims: (20, 240, 100),
            gmm_weights: [0.5, 0.3, 0.2],
            gmm_means: [150.0, 180.0, 210.0],
            gmm_sigma: 20.0,
            day_weights: [1.0, 1.0, 1.0, 1.0, 0.5, 0.2, 0.2],
            day_noise_scale: 0.1,
            peak_occupancy: 0.9,
            signal_power: 1.0,
            noise_floor_sigma: 0.05,
            samples_per_slot: 100,
            seed: 0,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let (f, t, n) = self.dims;
        if f == 0 || t == 0 || n == 0 {
            return Err(Error::InvalidDims(self.dims));
        }
        let wsum: f64 = self.gmm_weights.iter().sum();
        if (wsum - 1.0).abs() > 1e-9 || self.gmm_weights.iter().any(|w| *w < 0.0) {
            return Err(Error::InvalidOption(
                "gmm_weights must be nonnegative and sum to 1".into(),
            ));
        }
        if !(self.gmm_sigma > 0.0) {
            return Err(Error::InvalidOption("gmm_sigma must be > 0".into()));
        }
        if self.day_weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidOption("day_weights must be > 0".into()));
        }
        if self.day_noise_scale < 0.0 {
            return Err(Error::InvalidOption("day_noise_scale must be >= 0".into()));
        }
        if !(self.peak_occupancy > 0.0 && self.peak_occupancy <= 1.0) {
            return Err(Error::InvalidOption(
                "peak_occupancy must be in (0, 1]".into(),
            ));
        }
        if !(self.signal_power > 0.0) {
            return Err(Error::InvalidOption("signal_power must be > 0".into()));
        }
        if self.noise_floor_sigma < 0.0 {
            return Err(Error::InvalidOption(
                "noise_floor_sigma must be >= 0".into(),
            ));
        }
        if self.samples_per_slot == 0 {
            return Err(Error::InvalidOption("samples_per_slot must be >= 1".into()));
        }
        Ok(())
    }

    fn raw_mixture(&self, t: f64) -> f64 {
        // common sigma, so density constants cancel under peak normalization
        self.gmm_weights
            .iter()
            .zip(&self.gmm_means)
            .map(|(w, tau)| {
                let z = (t - tau) / self.gmm_sigma;
                w * (-0.5 * z * z).exp()
            })
            .sum()
    }

    fn profile_peak(&self) -> f64 {
        (0..self.dims.1)
            .map(|t| self.raw_mixture(t as f64))
            .fold(f64::MIN, f64::max)
    }
}

/// Daily activity level of slot `t`, normalized to peak 1 over the slot grid.
pub fn time_profile(s: &Scenario, t: usize) -> f64 {
    assert!(t < s.dims.1, "slot {t} out of range for {} slots", s.dims.1);
    s.raw_mixture(t as f64) / s.profile_peak()
}

/// Activity factor for day `n`: a draw around the day-of-week mean, clamped
/// below at zero. A zero noise scale returns the mean without consuming
/// randomness.
pub fn day_profile(s: &Scenario, n: usize, rng: &mut impl Rng) -> f64 {
    let mu = s.day_weights[n % 7];
    let lambda = s.day_noise_scale * mu;
    if lambda == 0.0 {
        return mu;
    }
    let normal = Normal::new(mu, lambda).expect("validated scale");
    normal.sample(rng).max(0.0)
}

/// Per-entry occupancy probability grid as (slot, day) -> p, including the
/// day factor draws. Uniform over frequency.
fn probability_grid(s: &Scenario, rng: &mut impl Rng) -> (Vec<f64>, Vec<f64>) {
    let peak = s.profile_peak();
    let prof: Vec<f64> = (0..s.dims.1)
        .map(|t| s.raw_mixture(t as f64) / peak)
        .collect();
    let days: Vec<f64> = (0..s.dims.2)
        .map(|n| day_profile(s, n, rng).min(DAY_CLAMP) / DAY_CLAMP)
        .collect();
    (prof, days)
}

/// Generates the measurement tensor and the Bernoulli ground truth.
///
/// Draw order (fixed for reproducibility): one day factor per day in day
/// order, then per entry in storage order (frequency fastest, then slot,
/// then day) `samples_per_slot` Bernoulli draws followed by one noise draw
/// when the noise floor is nonzero. Ground truth records each entry's first
/// Bernoulli draw.
pub fn generate(s: &Scenario) -> Result<(Tensor3, BoolTensor3)> {
    s.validate()?;
    let (nf, nt, nn) = s.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let (prof, days) = probability_grid(s, &mut rng);
    let noise = if s.noise_floor_sigma > 0.0 {
        Some(Normal::new(0.0, s.noise_floor_sigma).expect("validated sigma"))
    } else {
        None
    };
    let k = s.samples_per_slot;
    let mut data = Vec::with_capacity(nf * nt * nn);
    let mut occupied = Vec::with_capacity(nf * nt * nn);
    for n in 0..nn {
        for t in 0..nt {
            let p = s.peak_occupancy * prof[t] * days[n];
            for _ in 0..nf {
                let mut hits = 0usize;
                let mut first = false;
                for draw in 0..k {
                    let hit = rng.random::<f64>() < p;
                    if draw == 0 {
                        first = hit;
                    }
                    hits += hit as usize;
                }
                let mut v = hits as f64 / k as f64 * s.signal_power;
                if let Some(dist) = &noise {
                    v += dist.sample(&mut rng);
                }
                data.push(v.max(0.0));
                occupied.push(first);
            }
        }
    }
    Ok((
        Tensor3::new(s.dims, data)?,
        BoolTensor3::new(s.dims, occupied)?,
    ))
}

/// The noiseless idealization of [`generate`]: entry (f,t,n) equals
/// signal_power * peak_occupancy * profile(t) * day_mean(n)/clamp, with day
/// factors at their class means. Separable over (slot, day-class), so its
/// CP rank is at most 7.
pub fn expected_tensor(s: &Scenario) -> Result<Tensor3> {
    s.validate()?;
    let peak = s.profile_peak();
    Tensor3::from_fn(s.dims, |_, t, n| {
        let prof = s.raw_mixture(t as f64) / peak;
        let day = s.day_weights[n % 7].min(DAY_CLAMP) / DAY_CLAMP;
        s.signal_power * s.peak_occupancy * prof * day
    })
}

/// Mask with exactly round(missing_ratio * F*T*N) entries hidden, chosen
/// uniformly without replacement.
pub fn generate_mask(
    dims: (usize, usize, usize),
    missing_ratio: f64,
    seed: u64,
) -> Result<MaskTensor3> {
    if !(0.0..1.0).contains(&missing_ratio) {
        return Err(Error::InvalidRatio(missing_ratio));
    }
    let total = dims.0 * dims.1 * dims.2;
    let hidden = (missing_ratio * total as f64).round() as usize;
    let mut mask = MaskTensor3::filled(dims, true)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for idx in rand::seq::index::sample(&mut rng, total, hidden) {
        mask.bits_mut()[idx] = false;
    }
    Ok(mask)
}
