mod common;

use std::fs;

use common::small_stripes;
use inmerge_core::data::{
    augment_flip_with, batch_iter, flip_decision, load_dataset, save_dataset, synth_make,
    SynthKind, SynthSpec,
};
use inmerge_core::Error;
use proptest::prelude::*;

proptest! {
    #[test]
    fn batches_partition_the_split(n in 1usize..500, b in 1usize..70, seed: u64, epoch in 0usize..50) {
        let batches = batch_iter(n, b, seed, epoch);
        prop_assert_eq!(batches.len(), n.div_ceil(b));
        prop_assert!(batches[..batches.len() - 1].iter().all(|x| x.len() == b));
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(&batches, &batch_iter(n, b, seed, epoch));
    }

    #[test]
    fn flip_decision_ignores_batch_composition(
        seed: u64,
        epoch in 0usize..100,
        picks in prop::collection::vec(0usize..200, 1..16),
    ) {
        let data = small_stripes(200, 2, 1);
        let batch = |idx: &[usize]| {
            let mut x = data.gather_images(&data.train, idx).unwrap();
            augment_flip_with(&mut x, |s| flip_decision(seed, epoch, idx[s], 0.5)).unwrap();
            x
        };
        let together = batch(&picks);
        let per = together.len() / picks.len();
        for (s, &i) in picks.iter().enumerate() {
            let alone = batch(&[i]);
            prop_assert_eq!(&together.data()[s * per..(s + 1) * per], alone.data());
        }
    }
}

#[test]
fn saved_dataset_loads_identically() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = SynthSpec::new(SynthKind::GaussBlobs, 10, 3, [2, 8, 8], 4);
    spec.multilabel = true;
    let data = synth_make(&spec).unwrap();
    save_dataset(&data, dir.path()).unwrap();
    assert_eq!(load_dataset(dir.path()).unwrap(), data);
    let meta: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["normalization"]["mean"][0], 0.5);
}

#[test]
fn loader_errors_are_distinct() {
    let data = small_stripes(40, 3, 2);
    let fresh = || {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&data, dir.path()).unwrap();
        dir
    };

    let dir = fresh();
    fs::remove_file(dir.path().join("val_labels.bin")).unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::MissingFile(_))));

    let dir = fresh();
    let path = dir.path().join("train_images.bin");
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
    match load_dataset(dir.path()) {
        Err(Error::SizeMismatch {
            expected, actual, ..
        }) => {
            assert_eq!(expected, bytes.len() as u64);
            assert_eq!(actual, bytes.len() as u64 - 7);
        }
        other => panic!("expected size mismatch, got {other:?}"),
    }

    let dir = fresh();
    let path = dir.path().join("test_labels.bin");
    let mut labels = fs::read(&path).unwrap();
    labels[3] = 3;
    fs::write(&path, labels).unwrap();
    assert!(matches!(
        load_dataset(dir.path()),
        Err(Error::LabelDomain { sample: 3, value: 3, .. })
    ));

    let dir = fresh();
    fs::write(dir.path().join("meta.json"), b"{\"task\": ").unwrap();
    assert!(load_dataset(dir.path()).is_err());
}

#[test]
fn synthetic_sets_are_reproducible_per_seed() {
    let a = small_stripes(60, 4, 9);
    let b = small_stripes(60, 4, 9);
    let c = small_stripes(60, 4, 10);
    assert_eq!(a, b);
    assert_ne!(a.train.images, c.train.images);
}
