use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::ChromaClip;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

/// Labeled/unlabeled partition of a clip list, by index. Labeled classes are
/// further split into train/val/test at recording granularity.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub labeled_classes: Vec<u32>,
    pub unlabeled_classes: Vec<u32>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

impl DatasetSplit {
    pub fn labeled(&self) -> impl Iterator<Item = usize> + '_ {
        self.train.iter().chain(&self.val).chain(&self.test).copied()
    }

    /// Position of a labeled class id in `labeled_classes`, i.e. the
    /// classifier's output index.
    pub fn class_index(&self, label: u32) -> Option<usize> {
        self.labeled_classes.iter().position(|&c| c == label)
    }
}

/// Split `clips` by class membership and, within each labeled class, assign
/// whole recordings to train/val/test. Clips without a label are unlabeled;
/// clips whose class is in neither set are left out.
pub fn split_dataset(
    clips: &[ChromaClip],
    labeled_classes: &[u32],
    unlabeled_classes: &[u32],
    fractions: SplitFractions,
    seed: u64,
) -> Result<DatasetSplit> {
    let f = fractions;
    if [f.train, f.val, f.test].iter().any(|v| !(*v >= 0.0)) || (f.train + f.val + f.test - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions ({}, {}, {}) must be non-negative and sum to 1",
            f.train, f.val, f.test
        )));
    }
    let lab: BTreeSet<u32> = labeled_classes.iter().copied().collect();
    let unl: BTreeSet<u32> = unlabeled_classes.iter().copied().collect();
    if let Some(c) = lab.intersection(&unl).next() {
        return Err(Error::Config(format!("class {c} is both labeled and unlabeled")));
    }
    if lab.len() != labeled_classes.len() || unl.len() != unlabeled_classes.len() {
        return Err(Error::Config("duplicate class ids in the class lists".into()));
    }

    // source -> label, rejecting recordings whose clips disagree
    let mut source_label: BTreeMap<u64, Option<u32>> = BTreeMap::new();
    let mut source_clips: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, c) in clips.iter().enumerate() {
        match source_label.insert(c.source_id, c.label) {
            Some(prev) if prev != c.label => {
                return Err(Error::Input(format!(
                    "recording {} has clips with labels {prev:?} and {:?}",
                    c.source_id, c.label
                )))
            }
            _ => {}
        }
        source_clips.entry(c.source_id).or_default().push(i);
    }
    let mut class_sources: BTreeMap<u32, Vec<u64>> = BTreeMap::new();
    let mut unlabeled = Vec::new();
    for (&src, &label) in &source_label {
        match label {
            Some(l) if lab.contains(&l) => class_sources.entry(l).or_default().push(src),
            Some(l) if unl.contains(&l) => unlabeled.extend(&source_clips[&src]),
            Some(_) => {}
            None => unlabeled.extend(&source_clips[&src]),
        }
    }
    for &c in labeled_classes {
        if !class_sources.contains_key(&c) {
            return Err(Error::Config(format!("labeled class {c} has no recordings")));
        }
    }
    for &c in unlabeled_classes {
        if !source_label.values().any(|l| *l == Some(c)) {
            return Err(Error::Config(format!("unlabeled class {c} has no recordings")));
        }
    }

    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (&class, sources) in &class_sources {
        let mut sources = sources.clone();
        sources.shuffle(&mut rng::rng(seed, &[0x5b11, class as u64]));
        let n = sources.len();
        let mut n_val = (f.val * n as f64).round() as usize;
        let mut n_test = (f.test * n as f64).round() as usize;
        while n_val + n_test >= n && n_val + n_test > 0 {
            if n_test >= n_val && n_test > 0 {
                n_test -= 1;
            } else {
                n_val -= 1;
            }
        }
        for (k, src) in sources.iter().enumerate() {
            let target = if k < n - n_val - n_test {
                &mut train
            } else if k < n - n_test {
                &mut val
            } else {
                &mut test
            };
            target.extend(&source_clips[src]);
        }
    }
    for v in [&mut train, &mut val, &mut test, &mut unlabeled] {
        v.sort_unstable();
    }
    Ok(DatasetSplit {
        labeled_classes: labeled_classes.to_vec(),
        unlabeled_classes: unlabeled_classes.to_vec(),
        train,
        val,
        test,
        unlabeled,
    })
}
