//! Two-band dust noise, salt-and-pepper noise and pixel histogram analysis.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::ImagePatch;
use crate::error::{Error, Result};

/// Raw intensity range `[min, max]` of one noise band.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Band {
    pub min: u8,
    pub max: u8,
}

impl Band {
    pub const fn new(min: u8, max: u8) -> Self {
        Self { min, max }
    }
}

/// Parameters of the two-band dust noise.
///
/// When the low band's upper bound equals the high band's lower bound the
/// shared value belongs to the high band only, so low draws come from
/// `[low.min, low.max)` and high draws from `[high.min, high.max]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub low_band: Band,
    pub high_band: Band,
    pub n_low: usize,
    pub n_high: usize,
    pub seed: u64,
}

impl NoiseSpec {
    pub const DEFAULT_LOW: Band = Band::new(70, 145);
    pub const DEFAULT_HIGH: Band = Band::new(145, 220);
    /// Mid/high bands from the early experiments.
    pub const ALT_LOW: Band = Band::new(105, 205);
    pub const ALT_HIGH: Band = Band::new(205, 255);

    pub fn new(n_low: usize, n_high: usize, seed: u64) -> Self {
        Self {
            low_band: Self::DEFAULT_LOW,
            high_band: Self::DEFAULT_HIGH,
            n_low,
            n_high,
            seed,
        }
    }

    pub fn alternate(n_low: usize, n_high: usize, seed: u64) -> Self {
        Self {
            low_band: Self::ALT_LOW,
            high_band: Self::ALT_HIGH,
            ..Self::new(n_low, n_high, seed)
        }
    }

    pub fn total(&self) -> usize {
        self.n_low + self.n_high
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = (self.low_band, self.high_band);
        if lo.min > lo.max || hi.min > hi.max {
            return Err(Error::invalid(format!(
                "band bounds reversed: {lo:?} {hi:?}"
            )));
        }
        if lo.max > hi.min {
            return Err(Error::invalid(format!(
                "low band max {} exceeds high band min {}",
                lo.max, hi.min
            )));
        }
        Ok(())
    }

    fn low_draw_max(&self) -> u8 {
        if self.low_band.max == self.high_band.min && self.low_band.max > self.low_band.min {
            self.low_band.max - 1
        } else {
            self.low_band.max
        }
    }
}

/// Replace `n_low + n_high` distinct, uniformly chosen pixels with uniform
/// integer draws from the low band (first `n_low` positions) and the high band.
pub fn add_dust_noise(image: &ImagePatch, spec: &NoiseSpec) -> Result<ImagePatch> {
    spec.validate()?;
    let n = image.pixels.len();
    if spec.total() > n {
        return Err(Error::invalid(format!(
            "{} noisy pixels requested for a {}-pixel image",
            spec.total(),
            n
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let positions = index::sample(&mut rng, n, spec.total());
    let mut out = image.clone();
    let low_max = spec.low_draw_max();
    for (i, pos) in positions.into_iter().enumerate() {
        out.pixels[pos] = if i < spec.n_low {
            rng.random_range(spec.low_band.min..=low_max)
        } else {
            rng.random_range(spec.high_band.min..=spec.high_band.max)
        };
    }
    Ok(out)
}

/// Set `round(fraction * H * W)` distinct pixels to 0 or 255 with equal odds.
pub fn add_salt_pepper(image: &ImagePatch, fraction: f64, seed: u64) -> Result<ImagePatch> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!(
            "fraction {fraction} outside [0, 1]"
        )));
    }
    let n = image.pixels.len();
    let count = ((fraction * n as f64).round() as usize).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = image.clone();
    for pos in index::sample(&mut rng, n, count) {
        out.pixels[pos] = if rng.random_bool(0.5) { 255 } else { 0 };
    }
    Ok(out)
}

/// Pixel counts split between the bands for a noise level.
/// `low_fraction` is the share of noisy pixels drawn from the low band.
pub fn split_counts(pixels: usize, level: f64, low_fraction: f64) -> Result<(usize, usize)> {
    if !(0.0..=1.0).contains(&level) {
        return Err(Error::invalid(format!(
            "noise level {level} outside [0, 1]"
        )));
    }
    if !(0.0..=1.0).contains(&low_fraction) {
        return Err(Error::invalid(format!(
            "low/high ratio {low_fraction} outside [0, 1]"
        )));
    }
    let total = ((level * pixels as f64).round() as usize).min(pixels);
    let n_low = ((total as f64 * low_fraction).round() as usize).min(total);
    Ok((n_low, total - n_low))
}

/// Per-item seed derived from a master seed (SplitMix64 finaliser), so any
/// item can be regenerated without replaying the others.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NoisyPair {
    pub noisy: ImagePatch,
    pub clean: ImagePatch,
    pub spec: NoiseSpec,
}

/// Dust-noise every clean patch at `level` (fraction of pixels perturbed).
pub fn make_noisy_dataset(
    clean: &[ImagePatch],
    level: f64,
    low_fraction: f64,
    seed: u64,
) -> Result<Vec<NoisyPair>> {
    clean
        .iter()
        .enumerate()
        .map(|(i, patch)| {
            let (n_low, n_high) = split_counts(patch.pixels.len(), level, low_fraction)?;
            let spec = NoiseSpec::new(n_low, n_high, derive_seed(seed, i as u64));
            let noisy = add_dust_noise(patch, &spec)?;
            Ok(NoisyPair {
                noisy,
                clean: patch.clone(),
                spec,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelHistogram {
    pub counts: Vec<u64>,
    pub smoothed: Vec<f64>,
    pub peaks: Vec<usize>,
}

impl PixelHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Share of pixels whose raw value lies in `[lo, hi]`.
    pub fn mass_between(&self, lo: u8, hi: u8) -> f64 {
        let inside: u64 = self.counts[lo as usize..=hi as usize].iter().sum();
        inside as f64 / self.total().max(1) as f64
    }
}

pub const SMOOTHING_WINDOW: usize = 9;
pub const PEAK_FLOOR: f64 = 0.5;

pub fn histogram(patches: &[ImagePatch]) -> Result<PixelHistogram> {
    if patches.is_empty() {
        return Err(Error::invalid("histogram of an empty patch list"));
    }
    let mut counts = vec![0u64; 256];
    for p in patches {
        for &v in &p.pixels {
            counts[v as usize] += 1;
        }
    }
    let smoothed = moving_average(&counts, SMOOTHING_WINDOW);
    let peaks = find_peaks(&smoothed, PEAK_FLOOR);
    Ok(PixelHistogram {
        counts,
        smoothed,
        peaks,
    })
}

/// Centred moving average; windows are truncated at the edges.
pub fn moving_average(counts: &[u64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..counts.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(counts.len());
            counts[lo..hi].iter().sum::<u64>() as f64 / (hi - lo) as f64
        })
        .collect()
}

/// Strict local maxima above `floor` times the global maximum. A flat top
/// counts once, at its centre, when both sides fall away from it. Values
/// beyond either end count as lower.
pub fn find_peaks(values: &[f64], floor: f64) -> Vec<usize> {
    let global = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(global > 0.0) {
        return Vec::new();
    }
    let threshold = floor * global;
    let mut peaks = Vec::new();
    let mut i = 0;
    while i < values.len() {
        let mut j = i;
        while j + 1 < values.len() && values[j + 1] == values[i] {
            j += 1;
        }
        let left_lower = i == 0 || values[i - 1] < values[i];
        let right_lower = j + 1 == values.len() || values[j + 1] < values[j];
        if left_lower && right_lower && values[i] > threshold {
            peaks.push((i + j) / 2);
        }
        i = j + 1;
    }
    peaks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_patch_gives_single_centred_peak() {
        let h = histogram(&[ImagePatch::constant("c", 10, 10, 128)]).unwrap();
        assert_eq!(h.peaks, vec![128]);
        assert_eq!(h.total(), 100);
        let edge = histogram(&[ImagePatch::constant("z", 4, 4, 0)]).unwrap();
        assert_eq!(edge.peaks, vec![0]);
    }

    #[test]
    fn two_mode_mixture() {
        let a = ImagePatch::constant("a", 10, 10, 90);
        let b = ImagePatch::constant("b", 10, 10, 190);
        assert_eq!(histogram(&[a, b]).unwrap().peaks, vec![90, 190]);
    }

    #[test]
    fn split_counts_rounding() {
        assert_eq!(split_counts(10_000, 0.3, 0.5).unwrap(), (1500, 1500));
        assert_eq!(split_counts(10_000, 0.0, 0.5).unwrap(), (0, 0));
        assert_eq!(split_counts(9, 1.0, 0.5).unwrap(), (5, 4));
        assert!(split_counts(9, 1.5, 0.5).is_err());
    }

    #[test]
    fn shared_boundary_goes_to_high_band() {
        let img = ImagePatch::constant("z", 50, 50, 0);
        let spec = NoiseSpec {
            low_band: Band::new(145, 145),
            high_band: Band::new(145, 146),
            n_low: 10,
            n_high: 0,
            seed: 1,
        };
        // degenerate low band of one value keeps that value
        let out = add_dust_noise(&img, &spec).unwrap();
        assert_eq!(out.pixels.iter().filter(|&&v| v == 145).count(), 10);
        let spec = NoiseSpec::new(500, 0, 3);
        let out = add_dust_noise(&img, &spec).unwrap();
        assert!(out.pixels.iter().all(|&v| v == 0 || (70..145).contains(&v)));
    }
}
