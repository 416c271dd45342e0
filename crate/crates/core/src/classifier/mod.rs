//! Supervised temporal-convolution classifier `f(·)` and its penultimate
//! feature extractor.
//!
//! Architecture: Conv1d(12→C, k) → ReLU → Conv1d(C→C, k) → ReLU → masked
//! mean-pool over time → Dense(C→d, ReLU, dropout) → Dense(d→classes) →
//! softmax. The `d`-dimensional dropout layer output (with dropout off) is
//! the embedding.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{is_silent, ChromaClip, DatasetSplit, PITCH_CLASSES};
use crate::numkit::optim::Sgd;
use crate::numkit::{
    load_checkpoint, save_checkpoint, softmax_in_place, Activation, Conv1d, Conv1dCache, Dense, DenseCache, Mode,
    Parameterized, Record, Tensor2,
};
use crate::rng;

mod f1;

pub use f1::macro_f1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub embedding_dim: usize,
    pub conv_channels: usize,
    pub kernel: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 0.02,
            momentum: 0.9,
            batch_size: 16,
            dropout: 0.3,
            embedding_dim: 32,
            conv_channels: 32,
            kernel: 5,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.embedding_dim == 0 || self.conv_channels == 0 || self.kernel == 0 {
            return Err(Error::Config(
                "classifier batch_size, embedding_dim, conv_channels and kernel must be positive".into(),
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("classifier lr {} must be finite and >= 0", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("classifier momentum {} outside [0, 1)", self.momentum)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("classifier dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierModel {
    pub conv1: Conv1d,
    pub conv2: Conv1d,
    /// Penultimate layer; carries the dropout rate.
    pub hidden: Dense,
    pub output: Dense,
    /// Class id for each output unit.
    pub classes: Vec<u32>,
}

/// Convolution trunk output for one clip: the pooled feature vector plus
/// what backpropagation needs.
struct Trunk {
    pooled: Tensor2,
    pooled_rows: usize,
    conv2_rows: usize,
    c1: Conv1dCache,
    c2: Conv1dCache,
}

impl ClassifierModel {
    pub fn init(config: &ClassifierConfig, classes: Vec<u32>, seed: u64) -> Result<Self> {
        config.validate()?;
        if classes.len() < 2 {
            return Err(Error::Config(format!("classifier needs at least 2 classes, got {}", classes.len())));
        }
        let mut r = rng::rng(seed, &[0xc1a5]);
        let ch = config.conv_channels;
        Ok(Self {
            conv1: Conv1d::init(PITCH_CLASSES, ch, config.kernel, Activation::Relu, &mut r)?,
            conv2: Conv1d::init(ch, ch, config.kernel, Activation::Relu, &mut r)?,
            hidden: Dense::init(ch, config.embedding_dim, Activation::Relu, config.dropout, &mut r)?,
            output: Dense::init(config.embedding_dim, classes.len(), Activation::Linear, 0.0, &mut r)?,
            classes,
        })
    }

    pub fn embedding_dim(&self) -> usize {
        self.hidden.outputs()
    }

    pub fn num_classes(&self) -> usize {
        self.output.outputs()
    }

    /// Fewest frames the two valid convolutions can consume.
    fn min_frames(&self) -> usize {
        self.conv1.kernel + self.conv2.kernel - 1
    }

    pub fn index_of(&self, class_id: u32) -> Option<usize> {
        self.classes.iter().position(|&c| c == class_id)
    }

    fn trunk(&self, clip: &ChromaClip) -> Result<Trunk> {
        if clip.frames.is_empty() {
            return Err(Error::Input(format!("clip {} has no frames", clip.clip_id)));
        }
        // Valid length ends at the last non-silent frame; pooling only reads
        // conv outputs whose receptive field lies inside it, so trailing
        // silence never changes the result.
        let valid = clip.frames.iter().rposition(|f| !is_silent(f)).map_or(0, |i| i + 1);
        let min = self.min_frames();
        let mut x = clip.to_tensor();
        if x.rows() < min {
            let mut data = x.into_vec();
            data.resize(min * PITCH_CLASSES, 0.0);
            x = Tensor2::from_vec(min, PITCH_CLASSES, data)?;
        }
        let (h1, c1) = self.conv1.forward_cached(&x)?;
        let (h2, c2) = self.conv2.forward_cached(&h1)?;
        let pooled_rows = valid.max(min) - min + 1;
        let mut pooled = Tensor2::zeros(1, h2.cols());
        for t in 0..pooled_rows {
            for (p, v) in pooled.row_mut(0).iter_mut().zip(h2.row(t)) {
                *p += v;
            }
        }
        pooled.data_mut().iter_mut().for_each(|v| *v /= pooled_rows as f64);
        Ok(Trunk {
            pooled,
            pooled_rows,
            conv2_rows: h2.rows(),
            c1,
            c2,
        })
    }

    fn head(&self, pooled: &Tensor2, mode: Mode) -> Result<Vec<f64>> {
        let h = self.hidden.forward(pooled, mode)?;
        let mut logits = self.output.forward(&h, Mode::Eval)?.into_vec();
        softmax_in_place(&mut logits);
        Ok(logits)
    }

    /// Class probabilities. In `Mode::Train(seed)` the penultimate dropout
    /// is active with masks drawn from `seed`.
    pub fn predict_proba(&self, clip: &ChromaClip, mode: Mode) -> Result<Vec<f64>> {
        self.head(&self.trunk(clip)?.pooled, mode)
    }

    /// `passes` stochastic predictions for one clip, reusing a single trunk
    /// evaluation. `seed_of(pass)` gives the dropout seed of each pass.
    pub fn predict_proba_passes(
        &self,
        clip: &ChromaClip,
        passes: usize,
        seed_of: impl Fn(usize) -> u64,
    ) -> Result<Vec<Vec<f64>>> {
        let trunk = self.trunk(clip)?;
        (0..passes)
            .map(|p| self.head(&trunk.pooled, Mode::Train(seed_of(p))))
            .collect()
    }

    /// Penultimate-layer activation with dropout disabled.
    pub fn extract_embedding(&self, clip: &ChromaClip) -> Result<Vec<f64>> {
        let trunk = self.trunk(clip)?;
        Ok(self.hidden.forward(&trunk.pooled, Mode::Eval)?.into_vec())
    }

    pub fn predict(&self, clip: &ChromaClip) -> Result<usize> {
        let p = self.predict_proba(clip, Mode::Eval)?;
        Ok(argmax(&p))
    }

    /// Cross-entropy of one clip against output index `target`; accumulates
    /// parameter gradients into `grads`.
    fn loss_and_grad(&self, clip: &ChromaClip, target: usize, mode: Mode, grads: &mut [f64]) -> Result<f64> {
        let trunk = self.trunk(clip)?;
        let (h, hc): (Tensor2, DenseCache) = self.hidden.forward_cached(&trunk.pooled, mode)?;
        let (logits, oc) = self.output.forward_cached(&h, Mode::Eval)?;
        let mut p = logits.into_vec();
        softmax_in_place(&mut p);
        let loss = -p[target].max(1e-300).ln();
        p[target] -= 1.0;
        let g_logits = Tensor2::row_vector(&p);

        let n1 = self.conv1.param_count();
        let n2 = self.conv2.param_count();
        let nh = self.hidden.param_count();
        let (g_c1, rest) = grads.split_at_mut(n1);
        let (g_c2, rest) = rest.split_at_mut(n2);
        let (g_h, g_o) = rest.split_at_mut(nh);
        let g_h_out = self.output.backward(&oc, &g_logits, g_o);
        let g_pooled = self.hidden.backward(&hc, &g_h_out, g_h);
        let mut g_h2 = Tensor2::zeros(trunk.conv2_rows, g_pooled.cols());
        let scale = 1.0 / trunk.pooled_rows as f64;
        for t in 0..trunk.pooled_rows {
            for (a, b) in g_h2.row_mut(t).iter_mut().zip(g_pooled.row(0)) {
                *a = b * scale;
            }
        }
        let g_h1 = self.conv2.backward(&trunk.c2, &g_h2, g_c2);
        self.conv1.backward(&trunk.c1, &g_h1, g_c1);
        Ok(loss)
    }

    /// Mean cross-entropy over `clips` against output indices `targets`,
    /// with its gradient in [`Parameterized::write_params`] layout. In
    /// `Mode::Train(seed)` each clip's dropout mask is keyed by its clip id.
    pub fn cross_entropy(&self, clips: &[&ChromaClip], targets: &[usize], mode: Mode) -> Result<(f64, Vec<f64>)> {
        if clips.len() != targets.len() || clips.is_empty() {
            return Err(Error::Input(format!(
                "{} clips with {} targets",
                clips.len(),
                targets.len()
            )));
        }
        let mut grads = vec![0.0; self.param_count()];
        let mut loss = 0.0;
        for (clip, &t) in clips.iter().zip(targets) {
            if t >= self.num_classes() {
                return Err(Error::Input(format!("target {t} outside {} classes", self.num_classes())));
            }
            let m = match mode {
                Mode::Eval => Mode::Eval,
                Mode::Train(seed) => Mode::Train(rng::derive(seed, &[clip.clip_id])),
            };
            loss += self.loss_and_grad(clip, t, m, &mut grads)?;
        }
        let n = clips.len() as f64;
        grads.iter_mut().for_each(|g| *g /= n);
        Ok((loss / n, grads))
    }

    pub fn to_records(&self) -> Vec<Record> {
        vec![
            Record::Conv1d(self.conv1.clone()),
            Record::Conv1d(self.conv2.clone()),
            Record::Dense(self.hidden.clone()),
            Record::Dense(self.output.clone()),
        ]
    }

    pub fn from_records(records: Vec<Record>, classes: Vec<u32>) -> Result<Self> {
        let shape_err = || Error::Input("classifier checkpoint must hold conv1d, conv1d, dense, dense".into());
        let mut it = records.into_iter();
        let (Some(Record::Conv1d(conv1)), Some(Record::Conv1d(conv2)), Some(Record::Dense(hidden)), Some(Record::Dense(output)), None) =
            (it.next(), it.next(), it.next(), it.next(), it.next())
        else {
            return Err(shape_err());
        };
        if conv1.in_channels != PITCH_CLASSES
            || conv2.in_channels != conv1.out_channels()
            || hidden.inputs() != conv2.out_channels()
            || output.inputs() != hidden.outputs()
            || output.outputs() != classes.len()
        {
            return Err(Error::Input(format!(
                "classifier checkpoint layer shapes disagree or do not match {} classes",
                classes.len()
            )));
        }
        Ok(Self {
            conv1,
            conv2,
            hidden,
            output,
            classes,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.to_records())
    }

    pub fn load(path: &Path, classes: Vec<u32>) -> Result<Self> {
        Self::from_records(load_checkpoint(path)?, classes)
    }
}

impl Parameterized for ClassifierModel {
    fn param_count(&self) -> usize {
        self.conv1.param_count() + self.conv2.param_count() + self.hidden.param_count() + self.output.param_count()
    }

    fn write_params(&self, out: &mut Vec<f64>) {
        self.conv1.write_params(out);
        self.conv2.write_params(out);
        self.hidden.write_params(out);
        self.output.write_params(out);
    }

    fn read_params(&mut self, src: &[f64]) -> usize {
        let mut n = self.conv1.read_params(src);
        n += self.conv2.read_params(&src[n..]);
        n += self.hidden.read_params(&src[n..]);
        n + self.output.read_params(&src[n..])
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub val_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were kept (0 = initialization).
    pub best_epoch: usize,
    pub best_val_f1: f64,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,val_f1\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{}\n", e.epoch, e.loss, e.val_f1));
        }
        s
    }
}

/// Macro-F1 of `model` on the clips at `indices`.
pub fn evaluate_f1(model: &ClassifierModel, clips: &[ChromaClip], indices: &[usize]) -> Result<f64> {
    let mut pred = Vec::with_capacity(indices.len());
    let mut truth = Vec::with_capacity(indices.len());
    for &i in indices {
        let clip = &clips[i];
        let label = clip
            .label
            .and_then(|l| model.index_of(l))
            .ok_or_else(|| Error::Input(format!("clip {} has no label known to the classifier", clip.clip_id)))?;
        pred.push(model.predict(clip)?);
        truth.push(label);
    }
    macro_f1(&pred, &truth)
}

/// Train on `split.train` with mini-batch SGD and keep the parameters with
/// the best validation macro-F1 (training-set F1 when there is no
/// validation data). Batches are reshuffled every epoch from a seeded stream.
pub fn train_classifier(
    clips: &[ChromaClip],
    split: &DatasetSplit,
    config: &ClassifierConfig,
    seed: u64,
) -> Result<(ClassifierModel, TrainingLog)> {
    config.validate()?;
    if split.labeled_classes.len() < 2 {
        return Err(Error::Config(format!(
            "supervised training needs at least 2 labeled classes, got {}",
            split.labeled_classes.len()
        )));
    }
    let mut targets = Vec::with_capacity(split.train.len());
    let mut seen = vec![false; split.labeled_classes.len()];
    for &i in &split.train {
        let t = clips[i]
            .label
            .and_then(|l| split.class_index(l))
            .ok_or_else(|| Error::Input(format!("training clip {} has no labeled class", clips[i].clip_id)))?;
        seen[t] = true;
        targets.push(t);
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Config(format!(
            "labeled class {} has no training clips",
            split.labeled_classes[missing]
        )));
    }

    let mut model = ClassifierModel::init(config, split.labeled_classes.clone(), seed)?;
    let eval_set = if split.val.is_empty() { &split.train } else { &split.val };
    let mut log = TrainingLog {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_f1: evaluate_f1(&model, clips, eval_set)?,
    };
    let mut best = model.flat_params();
    let mut params = best.clone();
    let mut opt = Sgd::new(config.lr, config.momentum, params.len());
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut grads = vec![0.0; params.len()];

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng::rng(seed, &[0x5e1f, epoch as u64]));
        let mut total = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let mut batch_loss = 0.0;
            for &k in batch {
                let clip = &clips[split.train[k]];
                let mode = Mode::Train(rng::derive(seed, &[0xd409, epoch as u64, clip.clip_id]));
                batch_loss += model.loss_and_grad(clip, targets[k], mode, &mut grads)?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite classifier loss at epoch {epoch}, batch {b}"
                )));
            }
            total += batch_loss;
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| *g *= scale);
            opt.step(&mut params, &grads)
                .map_err(|e| e.context(format!("classifier epoch {epoch}, batch {b}")))?;
            model.set_flat_params(&params)?;
        }
        let val_f1 = evaluate_f1(&model, clips, eval_set)?;
        log.epochs.push(EpochLog {
            epoch,
            loss: total / split.train.len().max(1) as f64,
            val_f1,
        });
        if val_f1 >= log.best_val_f1 {
            log.best_val_f1 = val_f1;
            log.best_epoch = epoch;
            best.clone_from(&params);
        }
    }
    model.set_flat_params(&best)?;
    Ok((model, log))
}
