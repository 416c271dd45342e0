use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numkit::{grad_check, Parameterized};

fn random_rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..d).map(|_| r.gen_range(-1.0..1.0)).collect()).collect()
}

fn flatten(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter().flatten().copied().collect()
}

fn unflatten(flat: &[f64], d: usize) -> Vec<Vec<f64>> {
    flat.chunks(d).map(<[f64]>::to_vec).collect()
}

#[test]
fn cosine_examples() {
    assert_eq!(cosine_sim(&[0.3, -2.0], &[0.3, -2.0]).unwrap(), 1.0);
    assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    assert!((cosine_sim(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
    assert!(matches!(cosine_sim(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::Input(_))));
}

#[test]
fn affinity_examples() {
    assert_eq!(pair_affinity(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 1.0 - 1e-7);
    assert_eq!(pair_affinity(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.5);
    assert_eq!(pair_affinity(&[1.0, 2.0], &[-1.0, -2.0]).unwrap(), 1e-7);
}

#[test]
fn pseudo_label_rules() {
    // pair (0,1) same source with cosine 0.2; (0,2) cosine 0.95; (1,2) cosine ~0.5
    let e0 = vec![1.0, 0.0];
    let e1 = vec![0.2, (1.0f64 - 0.04).sqrt()];
    let e2 = vec![0.95, (1.0f64 - 0.9025).sqrt()];
    let pl = build_pseudo_labels(&[e0, e1, e2], &[7, 7, 8], 0.9).unwrap();
    assert_eq!(pl.len(), 3);
    assert_eq!((pl[0].t, pl[0].origin), (true, PairOrigin::SameSource));
    assert_eq!((pl[1].t, pl[1].origin), (true, PairOrigin::Threshold));
    assert_eq!((pl[2].t, pl[2].origin), (false, PairOrigin::Threshold));
    assert!(build_pseudo_labels(&[vec![1.0]], &[0], 0.9).is_err());
    assert!(build_pseudo_labels(&[vec![1.0], vec![0.0]], &[0, 1], 0.9).is_err());
}

#[test]
fn bce_examples() {
    let pos = PairPseudoLabel {
        i: 0,
        j: 1,
        t: true,
        origin: PairOrigin::Threshold,
    };
    let same = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
    assert!((bce_loss(&[pos], &same).unwrap() - 1e-7).abs() < 1e-12);
    let neg = PairPseudoLabel { t: false, ..pos };
    let ortho = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    assert!((bce_loss(&[neg], &ortho).unwrap() - 2f64.ln()).abs() < 1e-12);
    assert!(bce_loss(&[], &ortho).is_err());
}

#[test]
fn consistency_examples() {
    let z = random_rows(3, 4, 1);
    assert_eq!(consistency_loss(&z, &z, &z, &z).unwrap(), 0.0);
    let l = consistency_loss(&[], &[], &[vec![0.0, 0.0]], &[vec![1.0, 1.0]]).unwrap();
    assert_eq!(l, 1.0);
    assert!(matches!(consistency_loss(&z, &z[..2], &z, &z), Err(Error::Input(_))));
}

#[test]
fn contrastive_examples() {
    let z = vec![1.0, 0.0];
    assert_eq!(contrastive_loss(&z, &[vec![0.0, 1.0]], &[], 0.5).unwrap(), 0.0);
    let l = contrastive_loss(&z, &[vec![2.0, 0.0]], &[vec![-1.0, 0.0]], 1.0).unwrap();
    let oracle = -(1f64.exp() / (1f64.exp() + (-1f64).exp())).ln();
    assert!((l - oracle).abs() < 1e-12);
    assert!((l - 0.1269).abs() < 1e-4);
    let l2 = contrastive_loss(&z, &[vec![2.0, 0.0]], &[vec![-1.0, 0.0]], 2.0).unwrap();
    assert!(l2 > l, "this pair is pulled apart less at higher temperature");
    assert!(contrastive_loss(&z, &[], &[vec![1.0, 1.0]], 1.0).is_err());
}

#[test]
fn total_loss_examples() {
    assert_eq!(total_loss(0.7, 5.0, 9.0, 0.0, 0.0).unwrap(), 0.7);
    assert_eq!(total_loss(0.0, 0.0, 0.0, 1.0, 1.0).unwrap(), 0.0);
    assert!((total_loss(1.0, 2.0, 3.0, 0.5, 0.1).unwrap() - 2.3).abs() < 1e-12);
    assert!(total_loss(1.0, 1.0, 1.0, -1.0, 0.0).is_err());
}

#[test]
fn hard_negative_examples() {
    let anchor = vec![1.0, 0.0];
    let c = |s: f64| vec![s, (1.0 - s * s).sqrt()];
    let cands = vec![c(0.9), c(-0.5), c(0.1)];
    assert_eq!(hard_negatives(&anchor, &cands, 2).unwrap(), vec![1, 2]);
    assert!(hard_negatives(&anchor, &cands, 0).unwrap().is_empty());
    let equal = vec![c(0.3), c(0.3), c(0.3)];
    assert_eq!(hard_negatives(&anchor, &equal, 2).unwrap(), vec![0, 1]);
    assert!(matches!(hard_negatives(&anchor, &cands, 4), Err(Error::Input(_))));
}

#[test]
fn positive_set_examples() {
    let z = random_rows(4, 3, 2);
    let views: Vec<Vec<Vec<f64>>> = (0..4).map(|i| random_rows(2, 3, 10 + i)).collect();
    let lonely = positive_set(0, &[1, 2, 2, 2], &z, &views).unwrap();
    assert_eq!(lonely, views[0]);
    let p = positive_set(1, &[1, 2, 2, 2], &z, &views).unwrap();
    assert_eq!(p.len(), 4);
    assert!(!p.contains(&z[1]));
}

#[test]
fn loss_gradients_match_finite_differences() {
    for seed in 0..5 {
        let d = 5;
        let z = random_rows(4, d, seed);
        let pairs: Vec<PairPseudoLabel> = build_pseudo_labels(&z, &[0, 0, 1, 2], 0.2).unwrap();
        let err = grad_check(
            |p| {
                let (l, g) = bce_loss_grad(&pairs, &unflatten(p, d)).unwrap();
                (l, flatten(&g))
            },
            &flatten(&z),
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "bce {err}");

        let err = grad_check(
            |p| {
                let rows = unflatten(p, d);
                let g = contrastive_loss_grad(&rows[0], &rows[1..3], &rows[3..], 0.5).unwrap();
                let mut flat = g.anchor;
                flat.extend(flatten(&g.positives));
                flat.extend(flatten(&g.negatives));
                (g.loss, flat)
            },
            &flatten(&z),
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "contrastive {err}");
    }
}

#[test]
fn encoder_shape_determinism_and_zero_input() {
    let enc = EncoderModel::init(32, &EncoderConfig::default(), 3).unwrap();
    let y: Vec<f64> = (0..32).map(|i| (i as f64 * 0.37).sin()).collect();
    let z = enc.forward(&y).unwrap();
    assert_eq!(z.len(), 16);
    assert_eq!(z, enc.forward(&y).unwrap());
    let zero = enc.forward(&[0.0; 32]).unwrap();
    assert!(zero.iter().all(|v| v.is_finite()));
    assert!(matches!(enc.forward(&[0.0; 31]), Err(Error::Config(_))));
    assert!(EncoderModel::init(30, &EncoderConfig::default(), 0).is_err());
}

#[test]
fn encoder_gradient_matches_finite_differences() {
    let cfg = EncoderConfig {
        tokens: 2,
        heads: 2,
        blocks: 2,
        ff_hidden: 6,
        output_dim: 3,
    };
    let mut enc = EncoderModel::init(8, &cfg, 5).unwrap();
    let y: Vec<f64> = (0..8).map(|i| (i as f64 * 1.3).cos()).collect();
    let w = [0.3, -1.2, 0.7];
    let params = enc.flat_params();
    let err = grad_check(
        |p| {
            enc.set_flat_params(p).unwrap();
            let (z, cache) = enc.forward_cached(&y).unwrap();
            let mut g = vec![0.0; p.len()];
            enc.backward(&cache, &w, &mut g);
            (z.iter().zip(&w).map(|(a, b)| a * b).sum(), g)
        },
        &params,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn encoder_checkpoint_round_trip() {
    let enc = EncoderModel::init(32, &EncoderConfig::default(), 8).unwrap();
    let recs = crate::numkit::checkpoint::quantize(&enc.to_records()).unwrap();
    let back = EncoderModel::from_records(recs.clone()).unwrap();
    assert_eq!(back.to_records(), recs);
    assert!(EncoderModel::from_records(recs[1..].to_vec()).is_err());
}

#[test]
fn embedding_file_round_trip() {
    let rows = random_rows(5, 3, 4);
    let bytes = encode_embeddings(&rows).unwrap();
    assert_eq!(&bytes[..4], b"NCDE");
    let back = decode_embeddings(&bytes, Path::new("mem")).unwrap();
    assert_eq!(encode_embeddings(&back).unwrap(), bytes);
    assert!(decode_embeddings(&bytes[..bytes.len() - 2], Path::new("mem")).is_err());
}

#[test]
fn mask_names_parse_back() {
    for m in [LossMask::FULL, LossMask::CL, LossMask::BCE, LossMask::BCE_CL] {
        assert_eq!(LossMask::parse(&m.name()).unwrap(), m);
    }
    assert_eq!(LossMask::parse("bce+mse").unwrap().name(), "bce+mse");
    assert_eq!(LossMask::parse("cl+bce+mse").unwrap(), LossMask::FULL);
    assert!(LossMask::parse("kl").is_err());
}

fn toy_inputs(seed: u64) -> NcdInputs {
    // three well-separated prototypes, three recordings of two clips each per prototype
    let protos = random_rows(3, 8, seed);
    let mut r = ChaCha8Rng::seed_from_u64(seed + 100);
    let mut jitter = |v: &Vec<f64>, s: f64| -> Vec<f64> { v.iter().map(|x| x + r.gen_range(-s..s)).collect() };
    let mut inputs = NcdInputs {
        y_u: Vec::new(),
        y_u_views: Vec::new(),
        sources_u: Vec::new(),
        y_l: Vec::new(),
        y_l_views: Vec::new(),
    };
    for (c, p) in protos.iter().enumerate() {
        for rec in 0..3 {
            for _ in 0..2 {
                let y = jitter(p, 0.2);
                inputs.y_u_views.push([jitter(&y, 0.05), jitter(&y, 0.05)]);
                inputs.y_u.push(y);
                inputs.sources_u.push((c * 3 + rec) as u64);
            }
        }
    }
    for p in random_rows(4, 8, seed + 7) {
        inputs.y_l_views.push([jitter(&p, 0.05), jitter(&p, 0.05)]);
        inputs.y_l.push(p);
    }
    inputs
}

fn toy_config() -> NcdConfig {
    NcdConfig {
        hard_negatives: 4,
        epochs: 6,
        batch_size: 8,
        lr: 5e-3,
        encoder: EncoderConfig {
            tokens: 2,
            heads: 2,
            blocks: 1,
            ff_hidden: 8,
            output_dim: 4,
        },
        ..NcdConfig::default()
    }
}

#[test]
fn zero_epochs_returns_the_initial_encoder() {
    let inputs = toy_inputs(1);
    let cfg = NcdConfig { epochs: 0, ..toy_config() };
    let (enc, log) = train_encoder(&inputs, &cfg, 9).unwrap();
    assert_eq!(enc, EncoderModel::init(8, &cfg.encoder, 9).unwrap());
    assert!(log.epochs.is_empty());
}

#[test]
fn training_is_deterministic_and_logs_every_epoch() {
    let inputs = toy_inputs(2);
    let (a, la) = train_encoder(&inputs, &toy_config(), 4).unwrap();
    let (b, lb) = train_encoder(&inputs, &toy_config(), 4).unwrap();
    assert_eq!(a, b);
    assert_eq!(la, lb);
    assert_eq!(la.epochs.len(), 6);
    assert!(la.to_csv().starts_with("epoch,bce,cl,mse,total\n"));
    assert!(la.same_source_pairs == 9);
}

#[test]
fn training_preconditions() {
    let inputs = toy_inputs(3);
    let too_many = NcdConfig {
        hard_negatives: 100,
        ..toy_config()
    };
    assert!(matches!(train_encoder(&inputs, &too_many, 0), Err(Error::Input(_))));
    let bad_tau = NcdConfig { tau: 0.0, ..toy_config() };
    assert!(matches!(train_encoder(&inputs, &bad_tau, 0), Err(Error::Config(_))));
}

#[test]
fn masked_terms_do_not_move_parameters() {
    let inputs = toy_inputs(4);
    let none = NcdConfig {
        mask: LossMask {
            bce: false,
            cl: false,
            mse: false,
        },
        ..toy_config()
    };
    let (enc, log) = train_encoder(&inputs, &none, 1).unwrap();
    assert_eq!(enc, EncoderModel::init(8, &none.encoder, 1).unwrap());
    assert!(log.epochs.iter().all(|e| e.total == 0.0 && e.bce > 0.0));
}
