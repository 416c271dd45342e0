mod common;

use common::*;
use proptest::prelude::*;
use raga_ncd::metrics::{ari, clustering_accuracy, evaluate, mutual_information, openness, silhouette};

fn labelings(max_n: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (2..=max_n).prop_flat_map(|n| (prop::collection::vec(0..5usize, n), prop::collection::vec(0..5usize, n)))
}

fn relabel(v: &[usize], shift: usize) -> Vec<usize> {
    v.iter().map(|x| (x * 7 + shift) % 11 + 100).collect()
}

proptest! {
    #[test]
    fn agree_with_brute_force((pred, truth) in labelings(20)) {
        prop_assert!((ari(&pred, &truth).unwrap() - ari_oracle(&pred, &truth)).abs() < 1e-9);
        prop_assert!((mutual_information(&pred, &truth).unwrap() - mi_oracle(&pred, &truth)).abs() < 1e-9);
        let acc = clustering_accuracy(&pred, &truth).unwrap();
        let (per, overall, valid) = acc_oracle(&pred, &truth);
        prop_assert_eq!(acc.mapping_valid, valid);
        prop_assert!((acc.matched_mass - overall).abs() < 1e-9);
        if valid {
            let got = acc.per_class.unwrap();
            for (c, v) in per {
                prop_assert!((got[&c] - v).abs() < 1e-9);
            }
        } else {
            prop_assert!(acc.per_class.is_none() && acc.overall.is_none());
        }
    }

    #[test]
    fn invariant_to_relabeling((pred, truth) in labelings(20), shift in 0..11usize) {
        let (p2, t2) = (relabel(&pred, shift), relabel(&truth, shift + 3));
        prop_assert!((ari(&pred, &truth).unwrap() - ari(&p2, &t2).unwrap()).abs() < 1e-12);
        prop_assert!((mutual_information(&pred, &truth).unwrap() - mutual_information(&p2, &t2).unwrap()).abs() < 1e-12);
        prop_assert!((mutual_information(&pred, &truth).unwrap() - mutual_information(&truth, &pred).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ari_is_one_only_for_equal_partitions((pred, truth) in labelings(8)) {
        let same = (0..pred.len()).all(|i| (0..pred.len()).all(|j| (pred[i] == pred[j]) == (truth[i] == truth[j])));
        prop_assert_eq!((ari(&pred, &truth).unwrap() - 1.0).abs() < 1e-12, same);
    }

    #[test]
    fn silhouette_is_bounded(n in 3usize..30, seed in any::<u64>()) {
        let mut r = rng(seed);
        let z = random_rows(n, 3, &mut r);
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let s = silhouette(&z, &labels).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
    }

    #[test]
    fn openness_grows_with_novel_classes(train in 1usize..40, test in 0usize..40) {
        let a = openness(train, test).unwrap();
        let b = openness(train, test + 1).unwrap();
        prop_assert!((0.0..1.0).contains(&a) && b > a);
    }
}

#[test]
fn exhaustive_small_partitions() {
    for n in 2..=5 {
        let parts = all_partitions(n);
        for p in &parts {
            for t in &parts {
                assert!((ari(p, t).unwrap() - ari_oracle(p, t)).abs() < 1e-9);
                assert!((mutual_information(p, t).unwrap() - mi_oracle(p, t)).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn separated_blobs_have_high_silhouette() {
    let (z, truth) = two_blobs(20, 3, 50.0, 4);
    assert!(silhouette(&z, &truth).unwrap() > 0.95);
}

#[test]
fn report_fields() {
    let (z, truth) = two_blobs(5, 2, 10.0, 1);
    let r = evaluate(&z, &truth, &truth, Some((12, 5))).unwrap();
    let json = serde_json::to_value(&r).unwrap();
    for key in ["ss", "ari", "mi", "acc_overall", "acc_per_class", "mapping_valid", "openness"] {
        assert!(json.get(key).is_some(), "{key}");
    }
    assert!((r.openness.unwrap() - 0.0903).abs() < 1e-4);
}
