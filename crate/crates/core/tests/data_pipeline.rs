mod common;

use std::collections::HashSet;

use common::*;
use proptest::prelude::*;
use sbfnet::data::{
    augment, cap_per_class, load_idx, read_cache, split, subsample, write_cache, write_idx, AugmentationConfig,
    Provenance, SampleSize,
};
use sbfnet::harness::load_idx_dir;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_is_stratified_disjoint_and_complete(
        counts in prop::collection::vec(2usize..40, 1..6),
        frac in 0.05..0.95f64,
        seed in any::<u64>(),
    ) {
        let ds = index_coded(&counts, 2);
        let s = split(&ds, frac, seed).unwrap();
        let train: HashSet<usize> = image_ids(&s.train).into_iter().collect();
        let test: HashSet<usize> = image_ids(&s.test).into_iter().collect();
        prop_assert!(train.is_disjoint(&test));
        prop_assert_eq!(train.len() + test.len(), ds.len());
        for (class, &c) in counts.iter().enumerate() {
            let want = ((c as f64 * frac).round() as usize).clamp(1, c - 1);
            prop_assert_eq!(s.test.class_counts()[class], want);
            prop_assert_eq!(s.train.class_counts()[class], c - want);
        }
        for (id, label) in image_ids(&s.test).into_iter().zip(s.test.labels()) {
            prop_assert_eq!(ds.label(id), *label);
        }
        let again = split(&ds, frac, seed).unwrap();
        prop_assert_eq!(image_ids(&again.test), image_ids(&s.test));
    }

    #[test]
    fn subsample_draws_from_the_given_pool(counts in prop::collection::vec(5usize..30, 2..5), n in 1usize..5, seed in any::<u64>()) {
        let ds = index_coded(&counts, 1);
        let sub = subsample(&ds, SampleSize::Count(n), seed).unwrap();
        prop_assert!(sub.class_counts().iter().all(|&c| c == n));
        let ids: HashSet<usize> = image_ids(&sub).into_iter().collect();
        prop_assert_eq!(ids.len(), sub.len());
    }

    #[test]
    fn augmentation_keeps_range_shape_and_labels(seed in any::<u64>(), copies in 0usize..5) {
        let ds = sbfnet::data::gaussian_blobs(3, 2, 12, seed);
        let cfg = AugmentationConfig { copies, seed, ..AugmentationConfig::default() };
        let out = augment(&ds, &cfg).unwrap();
        prop_assert_eq!(out.len(), ds.len() * (copies + 1));
        prop_assert_eq!(out.provenance(), Provenance::Augmented);
        for (i, img) in out.images().iter().enumerate() {
            prop_assert_eq!(img.shape(), ds.image(0).shape());
            prop_assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert_eq!(out.label(i), ds.label(i / (copies + 1)));
        }
    }
}

#[test]
fn split_seeds_differ_on_large_classes() {
    let ds = index_coded(&[100, 100], 1);
    let a = image_ids(&split(&ds, 0.25, 1).unwrap().test);
    let b = image_ids(&split(&ds, 0.25, 2).unwrap().test);
    assert_ne!(a, b);
}

#[test]
fn augmentation_is_five_fold_and_deterministic() {
    let ds = sbfnet::data::gaussian_blobs(4, 5, 16, 1);
    let cfg = AugmentationConfig { seed: 11, ..AugmentationConfig::default() };
    let a = augment(&ds, &cfg).unwrap();
    let b = augment(&ds, &cfg).unwrap();
    assert_eq!(a.len(), 5 * ds.len());
    assert!(a.images().iter().zip(b.images()).all(|(x, y)| x.bitwise_eq(y)));
    assert!(augment(&a, &cfg).is_err(), "augmented data must not be augmented again");
}

#[test]
fn idx_round_trip_and_hand_written_headers() {
    let dir = tempfile::tempdir().unwrap();
    let pixels: Vec<u8> = (0..6 * 4 * 3).map(|i| (i * 7 % 256) as u8).collect();
    let labels = [0u8, 2, 1, 2, 0, 1];
    let (ip, lp) = (dir.path().join("t-images-idx3-ubyte"), dir.path().join("t-labels-idx1-ubyte"));
    write_idx_raw(&ip, &lp, 4, 3, &pixels, &labels);
    let ds = load_idx(&ip, &lp).unwrap();
    assert_eq!(ds.len(), 6);
    assert_eq!(ds.class_count(), 3);
    assert_eq!(ds.image_shape().unwrap(), &[4, 3, 1]);
    assert_eq!(ds.labels(), &[0, 2, 1, 2, 0, 1]);
    assert_eq!(ds.image(1).data()[0], pixels[12] as f64 / 255.0);

    let (ip2, lp2) = (dir.path().join("r-images-idx3-ubyte.gz"), dir.path().join("r-labels-idx1-ubyte.gz"));
    write_idx(&ds, &ip2, &lp2).unwrap();
    let back = load_idx(&ip2, &lp2).unwrap();
    assert_eq!(back.labels(), ds.labels());
    assert!(back.images().iter().zip(ds.images()).all(|(a, b)| a.bitwise_eq(b)));

    let all = load_idx_dir(dir.path()).unwrap();
    assert_eq!(all.len(), 12);

    std::fs::write(&lp, [0u8, 0, 8, 1, 0, 0, 0, 9]).unwrap();
    assert!(load_idx(&ip, &lp).is_err(), "count mismatch must be rejected");
}

#[test]
fn cache_round_trip_keeps_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let ds = augment(&sbfnet::data::gaussian_blobs(2, 3, 6, 0), &AugmentationConfig::default()).unwrap();
    let path = dir.path().join("ds.sbfd");
    write_cache(&ds, &path).unwrap();
    let back = read_cache(&path).unwrap();
    assert_eq!(back.provenance(), Provenance::Augmented);
    assert_eq!(back.labels(), ds.labels());
    assert!(back.images().iter().zip(ds.images()).all(|(a, b)| a.bitwise_eq(b)));
}

#[test]
fn bundled_mnist_sample_parses() {
    let ds = load_idx_dir(&mnist_5k_dir()).unwrap();
    assert_eq!(ds.len(), 5000);
    assert_eq!(ds.class_count(), 10);
    assert_eq!(ds.image_shape().unwrap(), &[28, 28, 1]);
    assert!(ds.class_counts().iter().all(|&c| c == 500));
    let capped = cap_per_class(&ds, 200, 0);
    assert!(capped.class_counts().iter().all(|&c| c == 200));
}
