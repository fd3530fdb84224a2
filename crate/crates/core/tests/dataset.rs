use std::path::Path;

use marsdust::dataset::{
    compute_stats, load_manifest, load_patch, normalize, prepare_split, read_cache, resize,
    save_patch, to_patch, write_cache, CacheKey, ChannelStats, ImagePatch, Label, NormMode,
    ResizeMethod, Split,
};
use marsdust::error::Error;
use marsdust::synth;
use proptest::prelude::*;

fn write_manifest(dir: &Path, body: &str) -> std::path::PathBuf {
    let p = dir.join("manifest.csv");
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn manifest_counts_and_resolution() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_manifest(
        dir.path(),
        "path,label,split\na.png,dusty,train\nb.png,not_dusty,train\nc.png,1,val\nd.png,clear,test\n",
    );
    let m = load_manifest(&p).unwrap();
    let c = m.counts();
    assert_eq!(
        (c.get(Split::Train), c.get(Split::Val), c.get(Split::Test)),
        (2, 1, 1)
    );
    assert_eq!(m.label_counts(Split::Train), [1, 1]);
    assert_eq!(m.resolve(&m.rows[0]), dir.path().join("a.png"));
}

#[test]
fn manifest_errors_name_the_row() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_manifest(
        dir.path(),
        "path,label,split\na.png,dusty,train\nb.png,cloudy,train\n",
    );
    match load_manifest(&p).unwrap_err() {
        Error::ManifestParse { row, .. } => assert_eq!(row, 3),
        e => panic!("unexpected {e}"),
    }
    let p = write_manifest(
        dir.path(),
        "path,label,split\na.png,dusty,train\na.png,dusty,val\n",
    );
    assert!(load_manifest(&p).is_err());
}

#[test]
fn prepared_split_is_seeded_and_labelled() {
    let dir = tempfile::tempdir().unwrap();
    let mut body = String::from("path,label,split\n");
    for (p, y) in synth::labeled_set(6, 20, 20, 1) {
        save_patch(&p, &dir.path().join(format!("{}.png", p.id))).unwrap();
        body += &format!("{}.png,{},train\n", p.id, y);
    }
    let m = load_manifest(&write_manifest(dir.path(), &body)).unwrap();
    let a = prepare_split(&m, Split::Train, 3).unwrap();
    let b = prepare_split(&m, Split::Train, 3).unwrap();
    assert_eq!(a, b);
    for (p, y) in &a {
        assert_eq!(p.label.map(Label::code), Some(*y));
    }
    assert!(prepare_split(&m, Split::Val, 3).unwrap().is_empty());
}

#[test]
fn cache_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let patches = synth::clear_set(3, 12, 12, 2);
    let images: Vec<_> = patches
        .iter()
        .map(|p| normalize(p, NormMode::Unit, None).unwrap())
        .collect();
    let key = CacheKey {
        split: Split::Val,
        mode: NormMode::Unit,
        height: 12,
        width: 12,
        seed: 7,
    };
    write_cache(dir.path(), &key, &images, &[0, 1, 0]).unwrap();
    let (back, labels) = read_cache(dir.path(), &key).unwrap().unwrap();
    assert_eq!(labels, vec![0, 1, 0]);
    assert_eq!(back, images);
    let other = CacheKey { seed: 8, ..key };
    assert!(read_cache(dir.path(), &other).unwrap().is_none());
}

#[test]
fn stats_of_two_level_set() {
    let set = [
        ImagePatch::constant("a", 4, 4, 0),
        ImagePatch::constant("b", 4, 4, 255),
    ];
    let s = compute_stats(&set).unwrap();
    assert!((s.mean[0] - 0.5).abs() < 1e-7 && (s.std[0] - 0.5).abs() < 1e-7);
    assert!(compute_stats(&[]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn png_round_trip_is_exact(seed in 0u64..10_000, h in 1usize..40, w in 1usize..40) {
        let dir = tempfile::tempdir().unwrap();
        let p = synth::clear_patch("x", h, w, seed);
        let path = dir.path().join("x.png");
        save_patch(&p, &path).unwrap();
        prop_assert_eq!(load_patch(&path).unwrap().pixels, p.pixels);
    }

    #[test]
    fn every_mode_inverts_to_raw(seed in 0u64..10_000, mean in 0.1f32..0.9, std in 0.05f32..0.5) {
        let p = synth::clear_patch("x", 9, 11, seed);
        let stats = ChannelStats::uniform(1, mean, std);
        for mode in [NormMode::Unit, NormMode::SignedUnit, NormMode::Standardized] {
            let img = normalize(&p, mode, Some(&stats)).unwrap();
            prop_assert_eq!(&to_patch(&img, "x").unwrap().pixels, &p.pixels);
        }
    }

    #[test]
    fn bilinear_stays_within_input_range(seed in 0u64..10_000, oh in 1usize..60, ow in 1usize..60) {
        let p = synth::clear_patch("x", 17, 23, seed);
        let img = normalize(&p, NormMode::Unit, None).unwrap();
        let (lo, hi) = img.data.iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        let out = resize(&img, (oh, ow), ResizeMethod::Bilinear).unwrap();
        prop_assert!(out.data.iter().all(|&v| v >= lo - 1e-6 && v <= hi + 1e-6));
    }
}
