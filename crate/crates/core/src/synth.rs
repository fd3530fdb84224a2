//! Synthetic grayscale patches for tests and smoke runs. Clear patches are
//! high-contrast textured terrain; dusty patches are the same kind of
//! terrain flattened towards a haze level.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{ImagePatch, Label};
use crate::noise::derive_seed;

/// Haze gray level dusty patches are pulled towards.
pub const HAZE_LEVEL: f64 = 135.0;

fn terrain(rng: &mut ChaCha8Rng, height: usize, width: usize) -> Vec<f64> {
    let mut field = vec![0.0f64; height * width];
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(0.5..3.0),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.3..1.0),
            )
        })
        .collect();
    let craters: Vec<(f64, f64, f64)> = (0..rng.random_range(1..4))
        .map(|_| {
            (
                rng.random_range(0.0..height as f64),
                rng.random_range(0.0..width as f64),
                rng.random_range(3.0..(height.min(width) as f64 / 4.0).max(4.0)),
            )
        })
        .collect();
    for r in 0..height {
        for c in 0..width {
            let (y, x) = (r as f64 / height as f64, c as f64 / width as f64);
            let mut v = 0.0;
            for &(f, ang, ph, amp) in &waves {
                v += amp * (std::f64::consts::TAU * f * (x * ang.cos() + y * ang.sin()) + ph).sin();
            }
            for &(cy, cx, rad) in &craters {
                let d = ((r as f64 - cy).powi(2) + (c as f64 - cx).powi(2)).sqrt() / rad;
                if d < 1.0 {
                    v += 1.5 * (d - 0.5);
                }
            }
            field[r * width + c] = v + rng.random_range(-0.15..0.15);
        }
    }
    let lo = field.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = field.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-9);
    field.iter().map(|v| (v - lo) / span).collect()
}

/// A clear terrain patch spanning most of the 8-bit range.
pub fn clear_patch(id: impl Into<String>, height: usize, width: usize, seed: u64) -> ImagePatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = terrain(&mut rng, height, width);
    let pixels = t
        .iter()
        .map(|v| (10.0 + 235.0 * v).round().clamp(0.0, 255.0) as u8)
        .collect();
    ImagePatch::new(id, height, width, pixels)
        .expect("pixel count matches dims")
        .with_label(Label::NotDusty)
}

/// A dusty patch: terrain compressed into roughly 90..190 around the haze level.
pub fn dusty_patch(id: impl Into<String>, height: usize, width: usize, seed: u64) -> ImagePatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = terrain(&mut rng, height, width);
    let contrast = rng.random_range(0.25..0.45);
    let pixels = t
        .iter()
        .map(|v| {
            let v = HAZE_LEVEL + 255.0 * contrast * (v - 0.5) + rng.random_range(-6.0..6.0);
            v.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    ImagePatch::new(id, height, width, pixels)
        .expect("pixel count matches dims")
        .with_label(Label::Dusty)
}

/// `n` labeled patches alternating clear and dusty, with ids `syn_00000`...
pub fn labeled_set(n: usize, height: usize, width: usize, seed: u64) -> Vec<(ImagePatch, u8)> {
    (0..n)
        .map(|i| {
            let id = format!("syn_{i:05}");
            let s = derive_seed(seed, i as u64);
            let p = if i % 2 == 0 {
                clear_patch(id, height, width, s)
            } else {
                dusty_patch(id, height, width, s)
            };
            let code = p.label.map_or(0, Label::code);
            (p, code)
        })
        .collect()
}

/// `n` clear patches, used as denoising ground truth.
pub fn clear_set(n: usize, height: usize, width: usize, seed: u64) -> Vec<ImagePatch> {
    (0..n)
        .map(|i| {
            clear_patch(
                format!("clean_{i:05}"),
                height,
                width,
                derive_seed(seed, i as u64),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_separable_by_contrast() {
        let a = labeled_set(6, 32, 32, 3);
        let b = labeled_set(6, 32, 32, 3);
        assert_eq!(
            a.iter().map(|(p, _)| &p.pixels).collect::<Vec<_>>(),
            b.iter().map(|(p, _)| &p.pixels).collect::<Vec<_>>()
        );
        for (p, l) in &a {
            let c = crate::classifiers::contrast(p);
            if *l == 1 {
                assert!(c < 0.15, "dusty contrast {c}");
            } else {
                assert!(c > 0.15, "clear contrast {c}");
            }
        }
    }
}
