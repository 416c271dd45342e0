//! Experiment orchestration. Stages communicate only through files in an
//! output directory, so any stage can be rerun or skipped on its own.

mod config;
mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{
    AudioData, ClusteringConfig, DataConfig, ExperimentConfig, FileData, MetricsConfig, Stage, SyntheticData,
};
pub use report::{
    sha256_hex, ClassifierSummary, ClusteringSummary, ComparisonTable, ExperimentReport, FeaturesSummary,
    MetricsSection, NcdSummary, OodSummary, Runtime,
};

use crate::binio::{read_file, write_file};
use crate::classifier::{evaluate_f1, train_classifier, ClassifierModel};
use crate::clustering::{coords_csv, cosine_threshold_clusters, kmeans, pca, reduce_then_kmeans, ClusterAssignment, ClusterMethod};
use crate::error::{Error, Result, ResultExt};
use crate::features::io::{
    clips_from_audio, encode_dataset, read_dataset, read_labels, read_wav, write_dataset, write_labels,
};
use crate::features::{
    recordings_from_clips, reference_ragas, silence_floor, split_dataset, synth_corpus, ChromaClip, DatasetSplit,
    SourceContext,
};
use crate::metrics::{evaluate, mutual_information_base, openness};
use crate::ncd::{encode_all, prepare_inputs, read_embeddings, train_encoder, write_embeddings, EncoderModel, LossMask};
use crate::ood::{calibrate_threshold, decide, decisions_csv, mc_scores, scores_csv};
use crate::rng::derive;

pub const DATASET: &str = "dataset.onrc";
pub const LABELS: &str = "labels.csv";
pub const RECORDINGS: &str = "recordings.onrc";
pub const CLIP_OFFSETS: &str = "clip_offsets.csv";
pub const SPLIT: &str = "split.json";
pub const FEATURES: &str = "features.json";
pub const CLASSIFIER: &str = "classifier.ckpt";
pub const CLASSIFIER_LOG: &str = "classifier_log.csv";
pub const CLASSIFIER_SUMMARY: &str = "classifier.json";
pub const OOD_SCORES: &str = "ood_scores.csv";
pub const OOD_DECISIONS: &str = "ood_decisions.csv";
pub const ENCODER: &str = "encoder.ckpt";
pub const NCD_LOG: &str = "ncd_log.csv";
pub const EMBEDDINGS_Y: &str = "embeddings_y.ncde";
pub const EMBEDDINGS_Z: &str = "embeddings_z.ncde";
pub const UNLABELED_LABELS: &str = "unlabeled_labels.csv";
pub const ASSIGNMENT: &str = "assignment.csv";
pub const BASELINE_ASSIGNMENT: &str = "baseline_assignment.csv";
pub const COORDS: &str = "coords.csv";
pub const METRICS: &str = "metrics.json";
pub const REPORT: &str = "report.json";

const SEED_FEATURES: u64 = 0xfea7;
const SEED_SPLIT: u64 = 0x5b17;
const SEED_CLASSIFIER: u64 = 0xc1a5;
const SEED_OOD: u64 = 0x00d0;
const SEED_NCD: u64 = 0x0ecd;
const SEED_CLUSTER: u64 = 0xc105;

/// An output directory plus read-only directories searched, in order, for
/// inputs that are not present in it.
#[derive(Clone, Debug)]
pub struct Workspace {
    pub dir: PathBuf,
    pub fallbacks: Vec<PathBuf>,
}

impl Workspace {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            fallbacks: Vec::new(),
        }
    }

    pub fn with_fallback(mut self, dir: impl Into<PathBuf>) -> Self {
        self.fallbacks.push(dir.into());
        self
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Where to read `name` from: the workspace itself if the file exists
    /// there, else the first fallback holding it.
    pub fn input(&self, name: &str) -> PathBuf {
        std::iter::once(&self.dir)
            .chain(&self.fallbacks)
            .map(|d| d.join(name))
            .find(|p| p.exists())
            .unwrap_or_else(|| self.dir.join(name))
    }

    fn search_dirs(&self) -> impl Iterator<Item = &PathBuf> {
        std::iter::once(&self.dir).chain(&self.fallbacks)
    }
}

/// Clips, recordings and split as persisted by the features stage.
#[derive(Clone, Debug)]
pub struct LoadedData {
    pub clips: Vec<ChromaClip>,
    pub contexts: Vec<SourceContext>,
    pub split: DatasetSplit,
    pub class_names: BTreeMap<u32, String>,
}

impl LoadedData {
    pub fn select(&self, indices: &[usize]) -> Vec<ChromaClip> {
        indices.iter().map(|&i| self.clips[i].clone()).collect()
    }

    pub fn refs(&self, indices: &[usize]) -> Vec<&ChromaClip> {
        indices.iter().map(|&i| &self.clips[i]).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct OffsetRow {
    clip_id: u64,
    source_id: u64,
    offset: usize,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_file(path, text.as_bytes())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

/// Persist recording contexts: raw frames in dataset format keyed by source
/// id, and clip offsets as CSV.
pub fn write_recordings(dir: &Path, contexts: &[SourceContext]) -> Result<()> {
    let as_clips: Vec<ChromaClip> = contexts
        .iter()
        .map(|c| ChromaClip {
            clip_id: c.source_id,
            source_id: c.source_id,
            label: c.label,
            frames: c.frames.clone(),
            frame_hop: c.frame_hop,
        })
        .collect();
    write_dataset(&dir.join(RECORDINGS), &as_clips)?;
    let path = dir.join(CLIP_OFFSETS);
    let mut w = csv::Writer::from_writer(Vec::new());
    for c in contexts {
        for (&clip_id, &offset) in &c.clip_offsets {
            w.serialize(OffsetRow {
                clip_id,
                source_id: c.source_id,
                offset,
            })
            .map_err(|e| Error::format(&path, e.to_string()))?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::format(&path, e.to_string()))?;
    write_file(&path, &bytes)
}

pub fn read_recordings(recordings: &Path, offsets: &Path, frame_hop: f64) -> Result<Vec<SourceContext>> {
    let raw = read_dataset(recordings, frame_hop)?;
    let bytes = read_file(offsets)?;
    let mut by_source: BTreeMap<u64, BTreeMap<u64, usize>> = BTreeMap::new();
    for row in csv::Reader::from_reader(bytes.as_slice()).deserialize() {
        let row: OffsetRow = row.map_err(|e| Error::format(offsets, e.to_string()))?;
        by_source.entry(row.source_id).or_default().insert(row.clip_id, row.offset);
    }
    raw.into_iter()
        .map(|r| {
            let clip_offsets = by_source.remove(&r.source_id).unwrap_or_default();
            Ok(SourceContext {
                source_id: r.source_id,
                label: r.label,
                floor: silence_floor(&r.frames),
                frames: r.frames,
                frame_hop,
                clip_offsets,
            })
        })
        .collect()
}

/// Cluster ids of an assignment CSV, checked against the expected clip order.
pub fn read_assignment(path: &Path, clip_ids: &[u64]) -> Result<Vec<usize>> {
    #[derive(Deserialize)]
    struct Row {
        clip_id: u64,
        cluster_id: usize,
    }
    let bytes = read_file(path)?;
    let mut labels = Vec::with_capacity(clip_ids.len());
    for (i, row) in csv::Reader::from_reader(bytes.as_slice()).deserialize().enumerate() {
        let row: Row = row.map_err(|e| Error::format(path, e.to_string()))?;
        if clip_ids.get(i) != Some(&row.clip_id) {
            return Err(Error::format(
                path,
                format!("row {i} is clip {}, expected the embedding row order", row.clip_id),
            ));
        }
        labels.push(row.cluster_id);
    }
    if labels.len() != clip_ids.len() {
        return Err(Error::format(
            path,
            format!("{} rows for {} embeddings", labels.len(), clip_ids.len()),
        ));
    }
    Ok(labels)
}

/// Load what the features stage wrote.
pub fn load_data(ws: &Workspace) -> Result<LoadedData> {
    let summary: FeaturesSummary = read_json(&ws.input(FEATURES))?;
    let hop = summary.frame_hop;
    let clips = read_dataset(&ws.input(DATASET), hop)?;
    let contexts = read_recordings(&ws.input(RECORDINGS), &ws.input(CLIP_OFFSETS), hop)?;
    let split: DatasetSplit = read_json(&ws.input(SPLIT))?;
    let n = clips.len();
    if let Some(bad) = split.labeled().chain(split.unlabeled.iter().copied()).find(|&i| i >= n) {
        return Err(Error::format(ws.input(SPLIT), format!("index {bad} out of range for {n} clips")));
    }
    Ok(LoadedData {
        clips,
        contexts,
        split,
        class_names: summary.class_names,
    })
}

/// Digest of the inputs that determine a trained classifier.
fn classifier_digest(data: &LoadedData, config: &ExperimentConfig, seed: u64) -> Result<String> {
    let mut h = Sha256::new();
    for part in [&data.split.train, &data.split.val, &data.split.test] {
        h.update(encode_dataset(&data.select(part))?);
    }
    h.update(serde_json::to_vec(&data.split.labeled_classes).map_err(|e| Error::Input(e.to_string()))?);
    h.update(toml::to_string(&config.classifier).map_err(|e| Error::Input(e.to_string()))?);
    h.update(seed.to_le_bytes());
    Ok(hex::encode(h.finalize()))
}

struct Run<'a> {
    config: &'a ExperimentConfig,
    ws: &'a Workspace,
    report: ExperimentReport,
}

impl Run<'_> {
    fn seed(&self, tag: u64) -> u64 {
        derive(self.config.seed, &[tag])
    }

    fn record(&mut self, name: &str) -> Result<()> {
        let bytes = read_file(&self.ws.out(name))?;
        self.report.artifacts.insert(name.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    fn stage(&mut self, stage: Stage) -> Result<()> {
        match stage {
            Stage::Features => self.features(),
            Stage::Classifier => self.classifier(),
            Stage::Ood => self.ood(),
            Stage::Ncd => self.ncd(),
            Stage::Clustering => self.clustering(),
            Stage::Metrics => self.metrics(),
        }
    }

    fn features(&mut self) -> Result<()> {
        let cfg = self.config;
        let (labeled, novel) = cfg.class_sets()?;
        let (clips, contexts, class_names, hop) = if let Some(s) = &cfg.data.synthetic {
            let specs = reference_ragas(s.labeled_classes + s.novel_classes, s.catalog_seed.unwrap_or(cfg.seed));
            let corpus = synth_corpus(&specs, &s.synth_config(), self.seed(SEED_FEATURES))?;
            (corpus.clips, corpus.contexts, corpus.class_names, s.frame_hop)
        } else if let Some(f) = &cfg.data.files {
            let clips = read_dataset(&f.dataset, f.frame_hop)?;
            let mut names = BTreeMap::new();
            for row in read_labels(&f.labels)? {
                if let Ok(l) = u32::try_from(row.label) {
                    names.entry(l).or_insert(row.class_name);
                }
            }
            let contexts = recordings_from_clips(&clips);
            (clips, contexts, names, f.frame_hop)
        } else if let Some(a) = &cfg.data.audio {
            let (clips, contexts, names) = load_audio(a)?;
            let hop = clips.first().map_or(0.0, |c| c.frame_hop);
            (clips, contexts, names, hop)
        } else {
            return Err(Error::Config("data: no source configured".into()));
        };

        let split = split_dataset(&clips, &labeled, &novel, cfg.split, self.seed(SEED_SPLIT))?;
        let recordings = clips.iter().map(|c| c.source_id).collect::<BTreeSet<_>>().len();
        let summary = FeaturesSummary {
            clips: clips.len(),
            recordings,
            frame_hop: hop,
            labeled_classes: labeled,
            novel_classes: novel,
            train_clips: split.train.len(),
            val_clips: split.val.len(),
            test_clips: split.test.len(),
            unlabeled_clips: split.unlabeled.len(),
            class_names: class_names.clone(),
        };
        let dir = &self.ws.dir;
        write_dataset(&dir.join(DATASET), &clips)?;
        write_labels(&dir.join(LABELS), &clips, &class_names)?;
        write_recordings(dir, &contexts)?;
        write_json(&dir.join(SPLIT), &split)?;
        write_json(&dir.join(FEATURES), &summary)?;
        for name in [DATASET, LABELS, RECORDINGS, CLIP_OFFSETS, SPLIT, FEATURES] {
            self.record(name)?;
        }
        self.report.features = Some(summary);
        Ok(())
    }

    fn classifier(&mut self) -> Result<()> {
        let data = load_data(self.ws)?;
        let seed = self.seed(SEED_CLASSIFIER);
        let digest = classifier_digest(&data, self.config, seed)?;
        let cached = self.ws.search_dirs().find(|d| {
            d.join(CLASSIFIER).exists()
                && read_json::<ClassifierSummary>(&d.join(CLASSIFIER_SUMMARY)).is_ok_and(|s| s.input_digest == digest)
        });
        let summary = if let Some(src) = cached.cloned() {
            if src != self.ws.dir {
                for name in [CLASSIFIER, CLASSIFIER_LOG, CLASSIFIER_SUMMARY] {
                    let bytes = read_file(&src.join(name))?;
                    write_file(&self.ws.out(name), &bytes)?;
                }
            }
            self.report.runtime.reused.push(Stage::Classifier.name().into());
            read_json(&self.ws.out(CLASSIFIER_SUMMARY))?
        } else {
            let (model, log) = train_classifier(&data.clips, &data.split, &self.config.classifier, seed)?;
            let test_f1 = if data.split.test.is_empty() {
                None
            } else {
                Some(evaluate_f1(&model, &data.clips, &data.split.test)?)
            };
            model.save(&self.ws.out(CLASSIFIER))?;
            write_text(&self.ws.out(CLASSIFIER_LOG), &log.to_csv())?;
            let summary = ClassifierSummary {
                log,
                test_f1,
                input_digest: digest,
            };
            write_json(&self.ws.out(CLASSIFIER_SUMMARY), &summary)?;
            summary
        };
        for name in [CLASSIFIER, CLASSIFIER_LOG, CLASSIFIER_SUMMARY] {
            self.record(name)?;
        }
        self.report.classifier = Some(summary);
        Ok(())
    }

    fn load_model(&self, data: &LoadedData) -> Result<ClassifierModel> {
        ClassifierModel::load(&self.ws.input(CLASSIFIER), data.split.labeled_classes.clone())
    }

    fn ood(&mut self) -> Result<()> {
        let data = load_data(self.ws)?;
        let model = self.load_model(&data)?;
        let oc = &self.config.ood;
        let seed = self.seed(SEED_OOD);
        let split = &data.split;
        if split.test.is_empty() {
            return Err(Error::Input("OOD evaluation needs in-distribution test recordings".into()));
        }
        let score = |ix: &[usize]| mc_scores(&model, &data.select(ix), oc.passes, seed, oc.aggregation);
        let val = score(&split.val)?;
        let threshold = calibrate_threshold(&val.iter().map(|s| s.score).collect::<Vec<_>>(), oc.percentile)
            .context("threshold calibration on validation clips")?;
        let test = score(&split.test)?;
        let unl = score(&split.unlabeled)?;

        let id_recs = balanced_recordings(&data, &split.test, usize::MAX);
        let ood_recs = balanced_recordings(&data, &split.unlabeled, usize::MAX);
        let n = if ood_recs.is_empty() {
            id_recs.len()
        } else {
            id_recs.len().min(ood_recs.len())
        };
        let id_keep: BTreeSet<u64> = balanced_recordings(&data, &split.test, n).into_iter().collect();
        let ood_keep: BTreeSet<u64> = balanced_recordings(&data, &split.unlabeled, n).into_iter().collect();

        let test_dec = decide(&test, threshold);
        let unl_dec = decide(&unl, threshold);
        let (mut tn, mut id_n, mut tp, mut ood_n) = (0usize, 0usize, 0usize, 0usize);
        for (d, &i) in test_dec.iter().zip(&split.test) {
            if id_keep.contains(&data.clips[i].source_id) {
                id_n += 1;
                tn += usize::from(!d.is_ood);
            }
        }
        for (d, &i) in unl_dec.iter().zip(&split.unlabeled) {
            if ood_keep.contains(&data.clips[i].source_id) {
                ood_n += 1;
                tp += usize::from(d.is_ood);
            }
        }
        let mut all_scores = val;
        all_scores.extend(test);
        all_scores.extend(unl);
        let mut decisions = test_dec;
        decisions.extend(unl_dec);
        write_text(&self.ws.out(OOD_SCORES), &scores_csv(&all_scores))?;
        write_text(&self.ws.out(OOD_DECISIONS), &decisions_csv(&decisions))?;
        self.record(OOD_SCORES)?;
        self.record(OOD_DECISIONS)?;
        self.report.ood = Some(OodSummary {
            threshold,
            passes: oc.passes,
            accuracy: 100.0 * (tn + tp) as f64 / (id_n + ood_n) as f64,
            id_recordings: id_keep.len(),
            ood_recordings: ood_keep.len(),
            id_clips: id_n,
            ood_clips: ood_n,
            true_negative_rate: tn as f64 / id_n as f64,
            true_positive_rate: (ood_n > 0).then(|| tp as f64 / ood_n as f64),
        });
        Ok(())
    }

    fn ncd(&mut self) -> Result<()> {
        let data = load_data(self.ws)?;
        let model = self.load_model(&data)?;
        let cfg = &self.config.ncd;
        let u = data.refs(&data.split.unlabeled);
        let l = data.refs(&data.split.train);
        let inputs = prepare_inputs(&model, &u, &l, &data.contexts, cfg)?;
        let (encoder, log) = train_encoder(&inputs, cfg, self.seed(SEED_NCD))?;
        let z = encode_all(&encoder, &inputs.y_u)?;
        encoder.save(&self.ws.out(ENCODER))?;
        write_text(&self.ws.out(NCD_LOG), &log.to_csv())?;
        write_embeddings(&self.ws.out(EMBEDDINGS_Y), &inputs.y_u)?;
        write_embeddings(&self.ws.out(EMBEDDINGS_Z), &z)?;
        write_labels(&self.ws.out(UNLABELED_LABELS), &data.select(&data.split.unlabeled), &data.class_names)?;
        for name in [ENCODER, NCD_LOG, EMBEDDINGS_Y, EMBEDDINGS_Z, UNLABELED_LABELS] {
            self.record(name)?;
        }
        self.report.ncd = Some(NcdSummary {
            unlabeled_clips: u.len(),
            labeled_clips: l.len(),
            mask: cfg.mask.name(),
            log,
        });
        Ok(())
    }

    fn cluster_count(&self, rows: &[crate::features::io::LabelRow]) -> Result<usize> {
        if let Some(k) = self.config.clustering.k {
            return Ok(k);
        }
        let (_, novel) = self.config.class_sets()?;
        if !novel.is_empty() {
            return Ok(novel.len());
        }
        let distinct = rows.iter().filter(|r| r.label >= 0).map(|r| r.label).collect::<BTreeSet<_>>();
        if distinct.is_empty() {
            return Err(Error::Config("clustering.k must be set when no novel classes are known".into()));
        }
        Ok(distinct.len())
    }

    fn clustering(&mut self) -> Result<()> {
        let z = read_embeddings(&self.ws.input(EMBEDDINGS_Z))?;
        let y = read_embeddings(&self.ws.input(EMBEDDINGS_Y))?;
        let rows = read_labels(&self.ws.input(UNLABELED_LABELS))?;
        if z.len() != rows.len() || y.len() != rows.len() {
            return Err(Error::Input(format!(
                "{} z rows, {} y rows and {} labels disagree",
                z.len(),
                y.len(),
                rows.len()
            )));
        }
        let cc = &self.config.clustering;
        let k = match cc.method {
            ClusterMethod::CosineThreshold => None,
            _ => Some(self.cluster_count(&rows)?),
        };
        let seed = self.seed(SEED_CLUSTER);
        let cluster = |x: &[Vec<f64>]| -> Result<(ClusterAssignment, Option<Vec<Vec<f64>>>)> {
            match (cc.method, k) {
                (ClusterMethod::CosineThreshold, _) => Ok((cosine_threshold_clusters(x, cc.threshold)?, None)),
                (ClusterMethod::ReduceKmeans, Some(k)) => {
                    let (km, p) = reduce_then_kmeans(x, cc.dims, k, seed, &cc.kmeans)?;
                    Ok((km.assignment, Some(p.coords)))
                }
                (_, k) => Ok((kmeans(x, k.unwrap_or(1), seed, &cc.kmeans)?.assignment, None)),
            }
        };
        let (proposed, coords) = cluster(&z).context("clustering z")?;
        let (baseline, _) = cluster(&y).context("clustering y")?;
        let coords = match coords {
            Some(c) => c,
            None => pca(&z, 2.min(z[0].len()))?.coords,
        };
        let ids: Vec<u64> = rows.iter().map(|r| r.clip_id).collect();
        write_text(&self.ws.out(ASSIGNMENT), &proposed.to_csv(&ids))?;
        write_text(&self.ws.out(BASELINE_ASSIGNMENT), &baseline.to_csv(&ids))?;
        write_text(&self.ws.out(COORDS), &coords_csv(&ids, &coords))?;
        for name in [ASSIGNMENT, BASELINE_ASSIGNMENT, COORDS] {
            self.record(name)?;
        }
        self.report.clustering = Some(ClusteringSummary {
            method: cc.method.name().into(),
            k,
            clusters: proposed.num_clusters,
            baseline_clusters: baseline.num_clusters,
            params: proposed.params,
        });
        Ok(())
    }

    fn metrics(&mut self) -> Result<()> {
        let rows = read_labels(&self.ws.input(UNLABELED_LABELS))?;
        let ids: Vec<u64> = rows.iter().map(|r| r.clip_id).collect();
        let truth = rows
            .iter()
            .map(|r| {
                usize::try_from(r.label).map_err(|_| {
                    Error::Input(format!("clip {} has no ground-truth label for evaluation", r.clip_id))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let classes = self
            .config
            .class_sets()
            .ok()
            .map(|(l, n)| (l.len(), n.len()));
        let score = |emb: &str, assignment: &Path| -> Result<_> {
            let x = read_embeddings(&self.ws.input(emb))?;
            if x.len() != ids.len() {
                return Err(Error::Input(format!("{} embeddings for {} labels", x.len(), ids.len())));
            }
            let pred = read_assignment(assignment, &ids)?;
            let mut m = evaluate(&x, &pred, &truth, classes)?;
            if let Some(base) = self.config.metrics.mi_base {
                m.mi = mutual_information_base(&pred, &truth, base)?;
            }
            Ok(m)
        };
        let proposed = score(EMBEDDINGS_Z, &self.ws.input(ASSIGNMENT)).context("proposed clustering")?;
        let baseline_path = self.ws.input(BASELINE_ASSIGNMENT);
        let baseline = if baseline_path.exists() {
            Some(score(EMBEDDINGS_Y, &baseline_path).context("baseline clustering")?)
        } else {
            None
        };
        let section = MetricsSection { proposed, baseline };
        write_json(&self.ws.out(METRICS), &section)?;
        self.record(METRICS)?;
        self.report.metrics = Some(section);
        Ok(())
    }

    /// `Some(false)` when a split exists and has no unlabeled clips.
    fn has_unlabeled(&self) -> Option<bool> {
        let path = self.ws.input(SPLIT);
        if !path.exists() {
            return None;
        }
        read_json::<DatasetSplit>(&path).ok().map(|s| !s.unlabeled.is_empty())
    }
}

/// Source ids of up to `n` recordings among the clips at `indices`, taken
/// round-robin over classes (ascending class, then source id).
fn balanced_recordings(data: &LoadedData, indices: &[usize], n: usize) -> Vec<u64> {
    let mut by_class: BTreeMap<Option<u32>, BTreeSet<u64>> = BTreeMap::new();
    for &i in indices {
        let c = &data.clips[i];
        by_class.entry(c.label).or_default().insert(c.source_id);
    }
    let mut queues: Vec<Vec<u64>> = by_class.into_values().map(|s| s.into_iter().collect()).collect();
    let mut out = Vec::new();
    let mut round = 0;
    while out.len() < n && queues.iter().any(|q| round < q.len()) {
        for q in &mut queues {
            if out.len() < n && round < q.len() {
                out.push(q[round]);
            }
        }
        round += 1;
    }
    out
}

/// Read a manifest with columns `path,tonic,label,class_name` and extract
/// clips from every listed WAV file.
fn load_audio(a: &AudioData) -> Result<(Vec<ChromaClip>, Vec<SourceContext>, BTreeMap<u32, String>)> {
    #[derive(Deserialize)]
    struct Row {
        path: PathBuf,
        tonic: usize,
        label: Option<i64>,
        #[serde(default)]
        class_name: String,
    }
    let bytes = read_file(&a.manifest)?;
    let base = a.manifest.parent().unwrap_or(Path::new("."));
    let mut clips = Vec::new();
    let mut contexts = Vec::new();
    let mut names = BTreeMap::new();
    let mut hop: Option<f64> = None;
    for (i, row) in csv::Reader::from_reader(bytes.as_slice()).deserialize().enumerate() {
        let row: Row = row.map_err(|e| Error::format(&a.manifest, e.to_string()))?;
        let label = match row.label {
            None => None,
            Some(l) if l < 0 => None,
            Some(l) => Some(u32::try_from(l).map_err(|_| Error::format(&a.manifest, format!("label {l} too large")))?),
        };
        if let Some(l) = label {
            names.entry(l).or_insert(row.class_name.clone());
        }
        let path = if row.path.is_relative() { base.join(&row.path) } else { row.path };
        let (samples, rate) = read_wav(&path)?;
        let (mut c, ctx) = clips_from_audio(&samples, rate, row.tonic, &a.clipping, i as u64, clips.len() as u64, label)
            .context(format!("recording {}", path.display()))?;
        let h = ctx.frame_hop;
        if hop.is_some_and(|prev| prev != h) {
            return Err(Error::Input(format!(
                "{} has a different sample rate from earlier recordings",
                path.display()
            )));
        }
        hop = Some(h);
        clips.append(&mut c);
        contexts.push(ctx);
    }
    if clips.is_empty() {
        return Err(Error::Input(format!("manifest {} lists no recordings", a.manifest.display())));
    }
    Ok((clips, contexts, names))
}

/// Run the configured stages in order, writing artifacts and the report
/// into `ws.dir`. A failing stage still leaves a report naming the error.
pub fn run_in(config: &ExperimentConfig, ws: &Workspace, label: Option<&str>, report_name: &str) -> Result<ExperimentReport> {
    config.validate()?;
    let stages = config.stage_list()?;
    std::fs::create_dir_all(&ws.dir).map_err(|e| Error::io(&ws.dir, e))?;
    let mut run = Run {
        config,
        ws,
        report: ExperimentReport::new(config.clone()),
    };
    run.report.label = label.map(str::to_string);
    if let Ok((l, n)) = config.class_sets() {
        run.report.openness = Some(openness(l.len(), n.len())?);
    }
    for stage in Stage::ALL {
        let needs_unlabeled = matches!(stage, Stage::Ncd | Stage::Clustering | Stage::Metrics);
        if !stages.contains(&stage) || (needs_unlabeled && run.has_unlabeled() == Some(false)) {
            run.report.stages_skipped.push(stage);
            continue;
        }
        let start = Instant::now();
        let result = run.stage(stage);
        run.report
            .runtime
            .seconds
            .insert(stage.name().into(), start.elapsed().as_secs_f64());
        if let Err(e) = result {
            let e = e.context(format!("stage {stage}"));
            run.report.error = Some(e.to_string());
            run.report.write(&ws.out(report_name))?;
            return Err(e);
        }
        run.report.stages_run.push(stage);
    }
    run.report.write(&ws.out(report_name))?;
    Ok(run.report)
}

/// Run the configured stages in `config.out_dir`.
pub fn run_pipeline(config: &ExperimentConfig) -> Result<ExperimentReport> {
    run_in(config, &Workspace::new(&config.out_dir), None, REPORT)
}

/// Loss-mask ablation runs in the order they appear in the comparison table.
pub const ABLATION_MASKS: [LossMask; 4] = [LossMask::CL, LossMask::BCE, LossMask::BCE_CL, LossMask::FULL];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ablation {
    pub reports: Vec<ExperimentReport>,
    pub table: ComparisonTable,
}

/// Train the encoder once per loss mask on shared features and classifier,
/// cluster each result with k-means and tabulate the metrics. Outputs go to
/// `out_dir/ablation/<mask>`; a classifier already trained in `out_dir` on
/// the same inputs is reused.
pub fn run_ablation(config: &ExperimentConfig) -> Result<Ablation> {
    let root = config.out_dir.join("ablation");
    let shared = Workspace::new(&root).with_fallback(&config.out_dir);
    let mut prep = config.clone();
    prep.stages = vec![Stage::Features.name().into(), Stage::Classifier.name().into()];
    run_in(&prep, &shared, Some("shared"), REPORT)?;
    let mut reports = Vec::with_capacity(ABLATION_MASKS.len());
    for mask in ABLATION_MASKS {
        let mut cfg = config.clone();
        cfg.ncd.mask = mask;
        cfg.clustering.method = ClusterMethod::Kmeans;
        cfg.stages = [Stage::Ncd, Stage::Clustering, Stage::Metrics]
            .iter()
            .map(|s| s.name().to_string())
            .collect();
        let ws = Workspace::new(root.join(mask.name())).with_fallback(&root);
        reports.push(run_in(&cfg, &ws, Some(&mask.name()), REPORT)?);
    }
    let table = ComparisonTable::from_reports(&reports);
    write_text(&root.join("table.md"), &table.to_markdown())?;
    write_json(&root.join("table.json"), &table)?;
    Ok(Ablation { reports, table })
}

/// Run the pipeline once per novel-class count, regenerating the synthetic
/// novel classes each time. Reports come back sorted by openness, with the
/// classifier reused across counts whenever its inputs are unchanged.
pub fn run_openness_study(config: &ExperimentConfig, counts: &[usize]) -> Result<Vec<ExperimentReport>> {
    let synth = config
        .data
        .synthetic
        .as_ref()
        .ok_or_else(|| Error::Config("openness study needs a [data.synthetic] source".into()))?;
    if counts.is_empty() {
        return Err(Error::Config("counts: at least one novel-class count is required".into()));
    }
    for (i, &c) in counts.iter().enumerate() {
        if synth.labeled_classes + c > synth.catalog_size {
            return Err(Error::Config(format!(
                "counts[{i}]: {c} novel classes plus {} labeled exceed the catalog of {}",
                synth.labeled_classes, synth.catalog_size
            )));
        }
    }
    let mut sorted: Vec<usize> = counts.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let root = config.out_dir.join("openness");
    let mut done: Vec<PathBuf> = Vec::new();
    let mut reports = Vec::with_capacity(sorted.len());
    for c in sorted {
        let mut cfg = config.clone();
        if let Some(s) = cfg.data.synthetic.as_mut() {
            s.novel_classes = c;
        }
        let dir = root.join(format!("novel-{c}"));
        let mut ws = Workspace::new(&dir).with_fallback(&config.out_dir);
        ws.fallbacks.extend(done.iter().cloned());
        let label = format!("novel-{c}");
        reports.push(run_in(&cfg, &ws, Some(&label), REPORT)?);
        done.push(dir);
    }
    let table = ComparisonTable::from_reports(&reports);
    write_text(&root.join("table.md"), &table.to_markdown())?;
    Ok(reports)
}

/// Encoder checkpoint written by the ncd stage.
pub fn load_encoder(ws: &Workspace) -> Result<EncoderModel> {
    EncoderModel::load(&ws.input(ENCODER))
}
