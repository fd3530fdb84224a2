use marsdust::dataset::ImagePatch;
use marsdust::noise::{
    add_dust_noise, add_salt_pepper, derive_seed, find_peaks, histogram, make_noisy_dataset,
    moving_average, split_counts, Band, NoiseSpec,
};
use marsdust::synth;
use proptest::prelude::*;

fn changed(a: &ImagePatch, b: &ImagePatch) -> Vec<usize> {
    a.pixels
        .iter()
        .zip(&b.pixels)
        .enumerate()
        .filter(|(_, (x, y))| x != y)
        .map(|(i, _)| i)
        .collect()
}

#[test]
fn noise_values_are_inside_bands() {
    // a clean image at 0 makes every selected position visible
    let clean = ImagePatch::constant("z", 50, 50, 0);
    let spec = NoiseSpec::new(700, 300, 3);
    let noisy = add_dust_noise(&clean, &spec).unwrap();
    let idx = changed(&clean, &noisy);
    assert_eq!(idx.len(), 1000);
    assert!(idx.iter().all(|&i| (70..=220).contains(&noisy.pixels[i])));
    let low = idx.iter().filter(|&&i| noisy.pixels[i] < 145).count();
    assert_eq!(low, 700, "shared bound 145 belongs to the high band");
}

#[test]
fn rejects_bad_specs() {
    let clean = ImagePatch::constant("z", 10, 10, 0);
    assert!(add_dust_noise(&clean, &NoiseSpec::new(60, 41, 0)).is_err());
    let mut spec = NoiseSpec::new(1, 1, 0);
    spec.low_band = Band::new(150, 160);
    assert!(add_dust_noise(&clean, &spec).is_err());
    assert!(split_counts(100, 1.5, 0.5).is_err());
    assert!(add_salt_pepper(&clean, -0.1, 0).is_err());
}

#[test]
fn salt_pepper_count_and_values() {
    let clean = ImagePatch::constant("m", 20, 20, 128);
    let noisy = add_salt_pepper(&clean, 0.25, 4).unwrap();
    let idx = changed(&clean, &noisy);
    assert_eq!(idx.len(), 100);
    assert!(idx.iter().all(|&i| matches!(noisy.pixels[i], 0 | 255)));
}

#[test]
fn dataset_items_are_independently_seeded() {
    let clean = synth::clear_set(4, 30, 30, 1);
    let all = make_noisy_dataset(&clean, 0.3, 0.5, 9).unwrap();
    let last = make_noisy_dataset(&clean[3..], 0.3, 0.5, 9).unwrap();
    assert_ne!(all[3].noisy, last[0].noisy, "seed depends on position");
    assert_eq!(all[3].spec.seed, derive_seed(9, 3));
    let again = add_dust_noise(&clean[3], &all[3].spec).unwrap();
    assert_eq!(again, all[3].noisy);
    assert!(all.iter().all(|p| p.spec.total() == 270));
}

#[test]
fn histogram_finds_modes() {
    let mut patches = Vec::new();
    for v in [40u8, 120, 200] {
        patches.push(ImagePatch::constant("p", 20, 20, v));
    }
    let h = histogram(&patches).unwrap();
    assert_eq!(h.total(), 1200);
    assert_eq!(h.peaks, vec![40, 120, 200]);
    assert!((h.mass_between(100, 140) - 1.0 / 3.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn dust_noise_properties(
        n_low in 0usize..600,
        n_high in 0usize..600,
        seed in any::<u64>(),
        fill in 0u8..=255,
    ) {
        let clean = ImagePatch::constant("c", 40, 40, fill);
        let spec = NoiseSpec::new(n_low, n_high, seed);
        let a = add_dust_noise(&clean, &spec).unwrap();
        prop_assert_eq!(&a, &add_dust_noise(&clean, &spec).unwrap());
        let idx = changed(&clean, &a);
        prop_assert!(idx.len() <= n_low + n_high);
        prop_assert!(idx.iter().all(|&i| (70..=220).contains(&a.pixels[i])));
    }

    #[test]
    fn split_counts_partition_the_total(pixels in 1usize..20_000, level in 0.0f64..=1.0, frac in 0.0f64..=1.0) {
        let (lo, hi) = split_counts(pixels, level, frac).unwrap();
        prop_assert_eq!(lo + hi, ((level * pixels as f64).round() as usize).min(pixels));
    }

    #[test]
    fn smoothing_preserves_flat_signals(v in 0u64..1000, len in 1usize..300) {
        let s = moving_average(&vec![v; len], 9);
        prop_assert!(s.iter().all(|&x| (x - v as f64).abs() < 1e-9));
    }

    #[test]
    fn peaks_are_sorted_and_above_floor(values in prop::collection::vec(0.0f64..100.0, 1..200)) {
        let peaks = find_peaks(&values, 0.5);
        let max = values.iter().cloned().fold(0.0, f64::max);
        prop_assert!(peaks.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(peaks.iter().all(|&p| values[p] > 0.5 * max));
    }
}
