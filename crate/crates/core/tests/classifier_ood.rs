mod common;

use common::*;
use proptest::prelude::*;
use raga_ncd::classifier::{train_classifier, ClassifierConfig, ClassifierModel};
use raga_ncd::features::{reference_ragas, split_dataset, synth_corpus, ChromaClip, SplitFractions, SynthConfig, SyntheticRagaSpec};
use raga_ncd::ood::{decide, mc_scores, UncertaintyScore, VarianceAggregation};
use rand::seq::SliceRandom;
use rand::Rng;

fn disjoint_pair() -> Vec<SyntheticRagaSpec> {
    let spec = |id: u32, notes: [usize; 4]| {
        let mut w = [0.0; 12];
        for &p in &notes {
            w[p] = 1.0;
        }
        SyntheticRagaSpec::new(id, format!("r{id}"), notes.to_vec(), w, 0)
    };
    vec![spec(0, [0, 2, 4, 7]), spec(1, [1, 5, 8, 10])]
}

fn untrained(dropout: f64) -> (ClassifierModel, Vec<ChromaClip>) {
    let cfg = SynthConfig {
        recordings_per_class: 2,
        clips_per_recording: 3,
        clip_seconds: 8.0,
        ..SynthConfig::default()
    };
    let clips = synth_corpus(&reference_ragas(3, 1), &cfg, 1).unwrap().clips;
    let c = ClassifierConfig {
        dropout,
        ..ClassifierConfig::default()
    };
    (ClassifierModel::init(&c, vec![0, 1, 2], 4).unwrap(), clips)
}

#[test]
fn separable_classes_reach_high_f1_and_separate_embeddings() {
    let cfg = SynthConfig {
        recordings_per_class: 20,
        clips_per_recording: 5,
        clip_seconds: 10.0,
        ..SynthConfig::default()
    };
    let corpus = synth_corpus(&disjoint_pair(), &cfg, 3).unwrap();
    assert_eq!(corpus.clips.len(), 200);
    let split = split_dataset(&corpus.clips, &[0, 1], &[], SplitFractions::default(), 3).unwrap();
    let c = ClassifierConfig {
        epochs: 20,
        ..ClassifierConfig::default()
    };
    let (model, log) = train_classifier(&corpus.clips, &split, &c, 3).unwrap();
    assert!(log.best_val_f1 >= 0.95, "{}", log.best_val_f1);

    let emb: Vec<(u32, Vec<f64>)> = split
        .test
        .iter()
        .map(|&i| {
            let clip = &corpus.clips[i];
            (clip.label.unwrap(), model.extract_embedding(clip).unwrap())
        })
        .collect();
    let cos = |a: &[f64], b: &[f64]| {
        let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        d / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt()).max(1e-300)
    };
    let mut r = rng(9);
    let (mut ok, trials) = (0, 500);
    for _ in 0..trials {
        let a = &emb[r.gen_range(0..emb.len())];
        let same: Vec<_> = emb.iter().filter(|e| e.0 == a.0 && !std::ptr::eq(*e, a)).collect();
        let other: Vec<_> = emb.iter().filter(|e| e.0 != a.0).collect();
        let p = same.choose(&mut r).unwrap();
        let n = other.choose(&mut r).unwrap();
        ok += usize::from(cos(&a.1, &n.1) < cos(&a.1, &p.1));
    }
    assert!(ok as f64 >= 0.9 * trials as f64, "{ok}/{trials}");
}

#[test]
fn no_dropout_or_single_pass_gives_zero_scores() {
    let (model, clips) = untrained(0.0);
    for agg in [VarianceAggregation::Mean, VarianceAggregation::Max] {
        assert!(mc_scores(&model, &clips, 10, 1, agg).unwrap().iter().all(|s| s.score == 0.0));
    }
    let (model, clips) = untrained(0.3);
    assert!(mc_scores(&model, &clips, 1, 1, VarianceAggregation::Mean).unwrap().iter().all(|s| s.score == 0.0));
    assert!(mc_scores(&model, &clips, 10, 1, VarianceAggregation::Mean).unwrap().iter().any(|s| s.score > 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn scores_do_not_depend_on_clip_order(seed in any::<u64>()) {
        let (model, clips) = untrained(0.3);
        let mut shuffled = clips.clone();
        shuffled.shuffle(&mut rng(seed));
        let a = mc_scores(&model, &clips, 5, seed, VarianceAggregation::Mean).unwrap();
        let b = mc_scores(&model, &shuffled, 5, seed, VarianceAggregation::Mean).unwrap();
        for s in &b {
            prop_assert_eq!(Some(s), a.iter().find(|x| x.clip_id == s.clip_id));
        }
    }

    #[test]
    fn raising_the_threshold_never_flags_more(scores in prop::collection::vec(0.0f64..1.0, 1..50), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let scores: Vec<UncertaintyScore> = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| UncertaintyScore { clip_id: i as u64, score: s, passes: 1 })
            .collect();
        let (lo, hi) = (a.min(b), a.max(b));
        let flagged = |th| decide(&scores, th).iter().filter(|d| d.is_ood).count();
        prop_assert!(flagged(hi) <= flagged(lo));
    }
}

/// Reduced 12-known/5-novel benchmark: novel clips must be more uncertain
/// on average than known test clips.
#[test]
fn novel_clips_score_higher_than_known_ones() {
    let cfg = SynthConfig {
        recordings_per_class: 8,
        clips_per_recording: 4,
        clip_seconds: 20.0,
        ..SynthConfig::default()
    };
    let c = ClassifierConfig {
        epochs: 40,
        ..ClassifierConfig::default()
    };
    let labeled: Vec<u32> = (0..12).collect();
    let novel: Vec<u32> = (12..17).collect();
    let mut wins = 0;
    for seed in 1..=5 {
        let corpus = synth_corpus(&reference_ragas(17, seed), &cfg, seed).unwrap();
        let split = split_dataset(&corpus.clips, &labeled, &novel, SplitFractions::default(), seed).unwrap();
        let (model, _) = train_classifier(&corpus.clips, &split, &c, seed).unwrap();
        let mean = |ix: &[usize]| {
            let clips: Vec<ChromaClip> = ix.iter().map(|&i| corpus.clips[i].clone()).collect();
            let s = mc_scores(&model, &clips, 30, seed, VarianceAggregation::Mean).unwrap();
            s.iter().map(|x| x.score).sum::<f64>() / s.len() as f64
        };
        wins += usize::from(mean(&split.unlabeled) > mean(&split.test));
    }
    assert!(wins >= 4, "{wins}/5");
}
