use std::path::Path;

use marsdust::classifiers::{ContrastStub, TrainedClassifier};
use marsdust::dataset::{load_patch, save_patch, Label};
use marsdust::error::Error;
use marsdust::npy::NpyArray;
use marsdust::npz::{NpzArchive, NpzBuilder};
use marsdust::pipeline::{
    classify_folder, read_archive, run_filter, ArchiveManifest, ClassifiedArchive, FilterOptions,
    PATCH_SIDE,
};
use marsdust::synth;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixture_folder(dir: &Path, n: usize, seed: u64) {
    for (p, _) in synth::labeled_set(n, PATCH_SIDE, PATCH_SIDE, seed) {
        save_patch(&p, &dir.join(format!("{}.png", p.id))).unwrap();
    }
}

fn stub() -> TrainedClassifier {
    TrainedClassifier::Stub(ContrastStub::default())
}

fn options() -> FilterOptions {
    FilterOptions {
        batch: 7,
        created_at: Some(1_700_000_000),
    }
}

#[test]
fn counts_are_conserved_and_skips_recorded() {
    let dir = tempfile::tempdir().unwrap();
    fixture_folder(dir.path(), 12, 1);
    std::fs::write(dir.path().join("notes.txt"), "not an image").unwrap();
    save_patch(
        &synth::clear_patch("small", 50, 50, 2),
        &dir.path().join("small.png"),
    )
    .unwrap();
    std::fs::write(dir.path().join(".hidden"), "x").unwrap();

    let a = classify_folder(dir.path(), &mut stub(), "stub", &options()).unwrap();
    let m = &a.manifest;
    assert_eq!(m.n_dusty + m.n_not_dusty, 12);
    assert_eq!(m.n_skipped, 2);
    let skipped: Vec<&str> = m.skipped.iter().map(|s| s.filename.as_str()).collect();
    assert_eq!(skipped, ["notes.txt", "small.png"]);
    assert!(m
        .records
        .iter()
        .all(|r| (0.0..=1.0).contains(&r.probability)));
    // records follow sorted filename order
    let names: Vec<&str> = m.records.iter().map(|r| r.filename.as_str()).collect();
    let mut sorted = names.clone();
    sorted.sort();
    assert_eq!(names, sorted);
}

#[test]
fn every_slice_matches_its_named_file() {
    let dir = tempfile::tempdir().unwrap();
    fixture_folder(dir.path(), 10, 3);
    let a = classify_folder(dir.path(), &mut stub(), "stub", &options()).unwrap();
    let checksum = |px: &[u8]| {
        px.iter().enumerate().fold(0u64, |h, (i, &v)| {
            h.wrapping_mul(31).wrapping_add(v as u64 ^ i as u64)
        })
    };
    for label in Label::ALL {
        let names = match label {
            Label::Dusty => &a.dusty_names,
            Label::NotDusty => &a.not_dusty_names,
        };
        for (i, name) in names.iter().enumerate() {
            let slice = a.patch(label, i).unwrap();
            let file = load_patch(&dir.path().join(name)).unwrap();
            assert_eq!(checksum(&slice.pixels), checksum(&file.pixels), "{name}");
        }
    }
}

#[test]
fn pipeline_matches_direct_predictions() {
    let dir = tempfile::tempdir().unwrap();
    fixture_folder(dir.path(), 20, 5);
    let a = classify_folder(dir.path(), &mut stub(), "stub", &options()).unwrap();
    let mut model = stub();
    for r in &a.manifest.records {
        let p = load_patch(&dir.path().join(&r.filename)).unwrap();
        let direct = model.predict(&[&p]).unwrap()[0];
        assert_eq!(direct, r.label.code(), "{}", r.filename);
        assert_eq!(model.predict_proba(&[&p]).unwrap()[0], r.probability);
    }
}

#[test]
fn same_inputs_give_identical_archive_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    std::fs::create_dir(&input).unwrap();
    fixture_folder(&input, 8, 9);
    let (a, b) = (dir.path().join("a.npz"), dir.path().join("b.npz"));
    run_filter(&input, &mut stub(), "stub", &a, &options()).unwrap();
    run_filter(&input, &mut stub(), "stub", &b, &options()).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn empty_folder_writes_valid_empty_archive() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    std::fs::create_dir(&input).unwrap();
    let out = dir.path().join("out.npz");
    let m = run_filter(&input, &mut stub(), "stub", &out, &options()).unwrap();
    assert_eq!((m.n_dusty, m.n_not_dusty), (0, 0));
    let back = read_archive(&out).unwrap();
    assert_eq!(back.dusty.shape, vec![0, PATCH_SIDE, PATCH_SIDE]);
    assert!(back.dusty_names.is_empty() && back.not_dusty_names.is_empty());
}

#[test]
fn missing_folder_is_an_io_error() {
    let err = classify_folder(
        Path::new("/definitely/not/here"),
        &mut stub(),
        "stub",
        &options(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Io { .. }), "{err}");
}

fn random_archive(n_dusty: usize, n_clear: usize, seed: u64) -> ClassifiedArchive {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stack = |n: usize| {
        let data: Vec<u8> = (0..n * PATCH_SIDE * PATCH_SIDE)
            .map(|_| rng.random())
            .collect();
        NpyArray::u8(vec![n, PATCH_SIDE, PATCH_SIDE], data).unwrap()
    };
    let dusty = stack(n_dusty);
    let not_dusty = stack(n_clear);
    ClassifiedArchive {
        dusty,
        not_dusty,
        dusty_names: (0..n_dusty).map(|i| format!("d{i}.png")).collect(),
        not_dusty_names: (0..n_clear).map(|i| format!("c{i}.png")).collect(),
        manifest: ArchiveManifest {
            n_dusty,
            n_not_dusty: n_clear,
            n_skipped: 0,
            source_folder: "in".into(),
            model_id: "stub".into(),
            created_at: 0,
            records: Vec::new(),
            skipped: Vec::new(),
        },
    }
}

#[test]
fn archive_round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.npz");
    let a = random_archive(3, 0, 4);
    a.write(&path).unwrap();
    assert_eq!(read_archive(&path).unwrap(), a);
}

#[test]
fn missing_member_is_named_in_the_error() {
    let a = random_archive(1, 1, 2);
    let full = NpzArchive::from_bytes(&a.to_npz().unwrap().to_bytes().unwrap()).unwrap();
    let mut b = NpzBuilder::new();
    for name in full.names().filter(|n| *n != "dusty.npy") {
        b.file(name, full.file(name).unwrap().to_vec());
    }
    let archive = NpzArchive::from_bytes(&b.to_bytes().unwrap()).unwrap();
    let err = marsdust::pipeline::parse_archive(&archive).unwrap_err();
    assert!(
        matches!(&err, Error::Archive { member, .. } if member == "dusty.npy"),
        "{err}"
    );
}

#[test]
fn inconsistent_manifest_is_rejected() {
    let mut a = random_archive(2, 1, 3);
    a.manifest.n_dusty = 5;
    let archive = NpzArchive::from_bytes(&a.to_npz().unwrap().to_bytes().unwrap()).unwrap();
    let err = marsdust::pipeline::parse_archive(&archive).unwrap_err();
    assert!(
        matches!(&err, Error::Archive { member, .. } if member == "manifest.json"),
        "{err}"
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn manifest_counts_match_array_lengths(n in 0usize..9, seed in 0u64..1000) {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in");
        std::fs::create_dir(&input).unwrap();
        fixture_folder(&input, n, seed);
        let out = dir.path().join("out.npz");
        run_filter(&input, &mut stub(), "stub", &out, &options()).unwrap();
        let a = read_archive(&out).unwrap();
        prop_assert_eq!(a.manifest.n_dusty, a.dusty.shape[0]);
        prop_assert_eq!(a.manifest.n_not_dusty, a.not_dusty.shape[0]);
        prop_assert_eq!(a.dusty.shape[0] + a.not_dusty.shape[0], n);
    }
}
