use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use raga_ncd::pipeline::{
    run_ablation, run_in, run_openness_study, ExperimentConfig, ExperimentReport, Stage, Workspace, REPORT,
};
use raga_ncd::{Error, Result};

#[derive(Parser)]
#[command(name = "raga-ncd", version, about = "Open-set raga recognition and novel class discovery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment config; synthetic defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated stages not to run.
    #[arg(long, value_delimiter = ',')]
    stage_skip: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic chroma corpus and split.
    SynthData(Common),
    /// Extract chroma clips from the WAV files of an audio manifest.
    ExtractFeatures {
        #[command(flatten)]
        common: Common,
        /// Manifest CSV (path,tonic,label,class_name), overriding the config.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Train the supervised feature extractor.
    TrainClassifier(Common),
    /// Score clips with MC dropout and flag out-of-distribution ones.
    DetectOod(Common),
    /// Train the discovery encoder on unlabeled embeddings.
    TrainNcd(Common),
    /// Cluster encoder and baseline embeddings.
    Cluster(Common),
    /// Compute clustering metrics from stored assignments.
    Evaluate(Common),
    /// Run all configured stages.
    Run(Common),
    /// Compare loss masks for the discovery encoder.
    Ablate(Common),
    /// Repeat the pipeline for several novel-class counts.
    OpennessStudy {
        #[command(flatten)]
        common: Common,
        /// Novel-class counts, e.g. 5,12.
        #[arg(long, value_delimiter = ',', required = true)]
        counts: Vec<usize>,
    },
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut config = match &c.config {
        Some(path) => ExperimentConfig::load(path, c.seed)?,
        None => ExperimentConfig::synthetic(
            c.seed
                .ok_or_else(|| Error::Config("seed: missing (pass --seed or --config)".into()))?,
        ),
    };
    if let Some(out) = &c.out {
        config.out_dir = out.clone();
    }
    let skip = Stage::parse_list(&c.stage_skip, "--stage-skip")?;
    let stages = config.stage_list()?;
    config.stages = stages
        .into_iter()
        .filter(|s| !skip.contains(s))
        .map(|s| s.name().to_string())
        .collect();
    Ok(config)
}

fn single_stage(c: &Common, stage: Stage, edit: impl FnOnce(&mut ExperimentConfig) -> Result<()>) -> Result<()> {
    let mut config = load_config(c)?;
    edit(&mut config)?;
    let skip = Stage::parse_list(&c.stage_skip, "--stage-skip")?;
    config.stages = if skip.contains(&stage) {
        Vec::new()
    } else {
        vec![stage.name().to_string()]
    };
    let ws = Workspace::new(&config.out_dir);
    let report = run_in(&config, &ws, None, &format!("report-{stage}.json"))?;
    summarize(&report);
    Ok(())
}

fn summarize(r: &ExperimentReport) {
    if let Some(label) = &r.label {
        println!("[{label}]");
    }
    if let Some(f) = &r.features {
        println!(
            "features: {} clips from {} recordings ({} train, {} val, {} test, {} unlabeled)",
            f.clips, f.recordings, f.train_clips, f.val_clips, f.test_clips, f.unlabeled_clips
        );
    }
    if let Some(c) = &r.classifier {
        println!(
            "classifier: best val macro-F1 {:.3} at epoch {}{}",
            c.log.best_val_f1,
            c.log.best_epoch,
            c.test_f1.map_or(String::new(), |f| format!(", test macro-F1 {f:.3}"))
        );
    }
    if let Some(o) = &r.ood {
        println!("ood: accuracy {:.1}% at threshold {:.4e}", o.accuracy, o.threshold);
    }
    if let Some(n) = &r.ncd {
        if let (Some(first), Some(last)) = (n.log.epochs.first(), n.log.epochs.last()) {
            println!("ncd [{}]: loss {:.4} -> {:.4}", n.mask, first.total, last.total);
        }
    }
    if let Some(c) = &r.clustering {
        println!("clustering [{}]: {} clusters (baseline {})", c.method, c.clusters, c.baseline_clusters);
    }
    if let Some(m) = &r.metrics {
        let line = |name: &str, m: &raga_ncd::metrics::MetricsReport| {
            println!(
                "{name}: ss {} ari {:.4} mi {:.4} acc {} mapping_valid {}",
                m.ss.map_or("n/a".into(), |v| format!("{v:.4}")),
                m.ari,
                m.mi,
                m.acc_overall.map_or("n/a".into(), |v| format!("{v:.2}")),
                m.mapping_valid
            )
        };
        line("proposed", &m.proposed);
        if let Some(b) = &m.baseline {
            line("baseline", b);
        }
    }
    if let Some(o) = r.openness {
        println!("openness: {o:.4}");
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthData(c) => single_stage(&c, Stage::Features, |cfg| {
            if cfg.data.synthetic.is_none() {
                return Err(Error::Config("synth-data needs a [data.synthetic] source".into()));
            }
            Ok(())
        }),
        Command::ExtractFeatures { common, manifest } => single_stage(&common, Stage::Features, |cfg| {
            let audio = cfg
                .data
                .audio
                .as_mut()
                .ok_or_else(|| Error::Config("extract-features needs a [data.audio] source".into()))?;
            if let Some(m) = manifest {
                audio.manifest = m;
            }
            Ok(())
        }),
        Command::TrainClassifier(c) => single_stage(&c, Stage::Classifier, |_| Ok(())),
        Command::DetectOod(c) => single_stage(&c, Stage::Ood, |_| Ok(())),
        Command::TrainNcd(c) => single_stage(&c, Stage::Ncd, |_| Ok(())),
        Command::Cluster(c) => single_stage(&c, Stage::Clustering, |_| Ok(())),
        Command::Evaluate(c) => single_stage(&c, Stage::Metrics, |_| Ok(())),
        Command::Run(c) => {
            let config = load_config(&c)?;
            let report = run_in(&config, &Workspace::new(&config.out_dir), None, REPORT)?;
            summarize(&report);
            println!("report: {}", config.out_dir.join(REPORT).display());
            Ok(())
        }
        Command::Ablate(c) => {
            let config = load_config(&c)?;
            let ablation = run_ablation(&config)?;
            print!("{}", ablation.table.to_markdown());
            Ok(())
        }
        Command::OpennessStudy { common, counts } => {
            let config = load_config(&common)?;
            for report in run_openness_study(&config, &counts)? {
                summarize(&report);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
