use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierConfig;
use crate::clustering::{ClusterMethod, KmeansConfig};
use crate::error::{Error, Result};
use crate::features::io::AudioClipping;
use crate::features::{SplitFractions, SynthConfig};
use crate::ncd::NcdConfig;
use crate::ood::OodConfig;

/// Pipeline stages in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Features,
    Classifier,
    Ood,
    Ncd,
    Clustering,
    Metrics,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Features,
        Stage::Classifier,
        Stage::Ood,
        Stage::Ncd,
        Stage::Clustering,
        Stage::Metrics,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Features => "features",
            Stage::Classifier => "classifier",
            Stage::Ood => "ood",
            Stage::Ncd => "ncd",
            Stage::Clustering => "clustering",
            Stage::Metrics => "metrics",
        }
    }

    pub fn parse(name: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|s| s.name() == name)
    }

    /// Parse a list of stage names; `field` names the config key in errors.
    pub fn parse_list(names: &[String], field: &str) -> Result<Vec<Stage>> {
        let mut out = Vec::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            let stage = Stage::parse(n.trim()).ok_or_else(|| {
                Error::Config(format!(
                    "{field}[{i}]: unknown stage '{n}' (expected one of features, classifier, ood, ncd, clustering, metrics)"
                ))
            })?;
            if !out.contains(&stage) {
                out.push(stage);
            }
        }
        out.sort();
        Ok(out)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Synthetic corpus drawn from the reference raga catalog. The first
/// `labeled_classes` catalog entries are known, the next `novel_classes`
/// are novel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticData {
    pub labeled_classes: usize,
    pub novel_classes: usize,
    /// Catalog size; bounds the novel class count of openness studies.
    pub catalog_size: usize,
    /// Seed of the raga catalog; defaults to the experiment seed.
    pub catalog_seed: Option<u64>,
    pub recordings_per_class: usize,
    pub clips_per_recording: usize,
    pub clip_seconds: f64,
    pub frame_hop: f64,
    pub margin_seconds: f64,
}

impl Default for SyntheticData {
    fn default() -> Self {
        let synth = SynthConfig::default();
        Self {
            labeled_classes: 12,
            novel_classes: 5,
            catalog_size: 24,
            catalog_seed: None,
            recordings_per_class: synth.recordings_per_class,
            clips_per_recording: synth.clips_per_recording,
            clip_seconds: synth.clip_seconds,
            frame_hop: synth.frame_hop,
            margin_seconds: synth.margin_seconds,
        }
    }
}

impl SyntheticData {
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            recordings_per_class: self.recordings_per_class,
            clips_per_recording: self.clips_per_recording,
            clip_seconds: self.clip_seconds,
            frame_hop: self.frame_hop,
            margin_seconds: self.margin_seconds,
        }
    }
}

/// A chroma dataset file with its label sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileData {
    pub dataset: PathBuf,
    pub labels: PathBuf,
    #[serde(default = "default_hop")]
    pub frame_hop: f64,
    pub labeled_classes: Vec<u32>,
    #[serde(default)]
    pub novel_classes: Vec<u32>,
}

fn default_hop() -> f64 {
    0.5
}

/// WAV recordings listed in a manifest CSV with columns
/// `path,tonic,label,class_name` (`label` -1 or empty when unknown).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AudioData {
    pub manifest: PathBuf,
    #[serde(default)]
    pub clipping: AudioClipping,
    pub labeled_classes: Vec<u32>,
    #[serde(default)]
    pub novel_classes: Vec<u32>,
}

/// Exactly one data source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticData>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub files: Option<FileData>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub audio: Option<AudioData>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            synthetic: Some(SyntheticData::default()),
            files: None,
            audio: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    pub method: ClusterMethod,
    /// Cluster count; defaults to the number of novel classes.
    pub k: Option<usize>,
    /// Similarity threshold of the cosine-threshold method.
    pub threshold: f64,
    /// Target dimensionality of reduce-kmeans.
    pub dims: usize,
    pub kmeans: KmeansConfig,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            method: ClusterMethod::Kmeans,
            k: None,
            threshold: 0.9,
            dims: 2,
            kmeans: KmeansConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Logarithm base of mutual information; natural log when unset.
    pub mi_base: Option<f64>,
}

/// Everything one pipeline run depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_out", skip_serializing)]
    pub out_dir: PathBuf,
    #[serde(default = "default_stages")]
    pub stages: Vec<String>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub split: SplitFractions,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub ood: OodConfig,
    #[serde(default)]
    pub ncd: NcdConfig,
    #[serde(default)]
    pub clustering: ClusteringConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_stages() -> Vec<String> {
    Stage::ALL.iter().map(|s| s.name().to_string()).collect()
}

impl ExperimentConfig {
    /// Defaults with a synthetic corpus.
    pub fn synthetic(seed: u64) -> Self {
        Self {
            seed,
            out_dir: default_out(),
            stages: default_stages(),
            data: DataConfig::default(),
            split: SplitFractions::default(),
            classifier: ClassifierConfig::default(),
            ood: OodConfig::default(),
            ncd: NcdConfig::default(),
            clustering: ClusteringConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }

    /// Parse TOML. `seed` overrides the file's seed; one of the two must be
    /// present. Relative data paths are resolved against `base_dir`.
    pub fn from_toml(text: &str, seed: Option<u64>, base_dir: Option<&Path>) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        if let Some(seed) = seed {
            let value = i64::try_from(seed).map_err(|_| Error::Config(format!("seed {seed} does not fit TOML")))?;
            table.insert("seed".into(), toml::Value::Integer(value));
        }
        if !table.contains_key("seed") {
            return Err(Error::Config("seed: missing (set it in the config or pass --seed)".into()));
        }
        let mut config: Self = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("invalid config: {}", e.message())))?;
        if let Some(base) = base_dir {
            config.resolve_paths(base);
        }
        Ok(config)
    }

    pub fn load(path: &Path, seed: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, seed, path.parent()).map_err(|e| e.context(format!("config {}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(f) = &mut self.data.files {
            fix(&mut f.dataset);
            fix(&mut f.labels);
        }
        if let Some(a) = &mut self.data.audio {
            fix(&mut a.manifest);
        }
    }

    pub fn stage_list(&self) -> Result<Vec<Stage>> {
        Stage::parse_list(&self.stages, "stages")
    }

    /// Labeled and novel class ids implied by the data source.
    pub fn class_sets(&self) -> Result<(Vec<u32>, Vec<u32>)> {
        let d = &self.data;
        match (&d.synthetic, &d.files, &d.audio) {
            (Some(s), None, None) => {
                let l = s.labeled_classes as u32;
                Ok(((0..l).collect(), (l..l + s.novel_classes as u32).collect()))
            }
            (None, Some(f), None) => Ok((f.labeled_classes.clone(), f.novel_classes.clone())),
            (None, None, Some(a)) => Ok((a.labeled_classes.clone(), a.novel_classes.clone())),
            _ => Err(Error::Config(
                "data: exactly one of [data.synthetic], [data.files], [data.audio] must be given".into(),
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.stage_list()?;
        let (labeled, novel) = self.class_sets()?;
        if labeled.len() < 2 {
            return Err(Error::Config(format!(
                "data: need at least 2 labeled classes, got {}",
                labeled.len()
            )));
        }
        if let Some(s) = &self.data.synthetic {
            if s.labeled_classes + s.novel_classes > s.catalog_size {
                return Err(Error::Config(format!(
                    "data.synthetic: {} labeled + {} novel classes exceed the catalog of {}",
                    s.labeled_classes, s.novel_classes, s.catalog_size
                )));
            }
            s.synth_config().clip_frames().map_err(|e| e.context("data.synthetic"))?;
        }
        let must_exist = |p: &Path, field: &str| -> Result<()> {
            if p.exists() {
                Ok(())
            } else {
                Err(Error::Config(format!("{field}: {} does not exist", p.display())))
            }
        };
        if let Some(f) = &self.data.files {
            must_exist(&f.dataset, "data.files.dataset")?;
            must_exist(&f.labels, "data.files.labels")?;
        }
        if let Some(a) = &self.data.audio {
            must_exist(&a.manifest, "data.audio.manifest")?;
        }
        let _ = novel;
        self.classifier.validate().map_err(|e| e.context("classifier"))?;
        self.ood.validate().map_err(|e| e.context("ood"))?;
        self.ncd.validate().map_err(|e| e.context("ncd"))?;
        let c = &self.clustering;
        if !(c.threshold > -1.0 && c.threshold < 1.0) {
            return Err(Error::Config(format!("clustering.threshold {} outside (-1, 1)", c.threshold)));
        }
        if c.k == Some(0) || c.dims == 0 || c.kmeans.restarts == 0 {
            return Err(Error::Config("clustering.k, dims and kmeans.restarts must be positive".into()));
        }
        if let Some(b) = self.metrics.mi_base {
            if !(b > 0.0 && b != 1.0) {
                return Err(Error::Config(format!("metrics.mi_base {b} is not a valid logarithm base")));
            }
        }
        Ok(())
    }

    /// Frame hop of the configured data, in seconds.
    pub fn frame_hop(&self) -> f64 {
        if let Some(s) = &self.data.synthetic {
            s.frame_hop
        } else if let Some(f) = &self.data.files {
            f.frame_hop
        } else {
            0.5
        }
    }
}
