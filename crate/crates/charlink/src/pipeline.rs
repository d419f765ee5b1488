//! End-to-end orchestration: one config file in, a directory of artifacts out
//! (model, index, candidates, recall reports, manifest).
//!
//! Every artifact is written to a `.partial` path and renamed on success, so
//! an aborted run leaves only suffixed partial files behind. The manifest
//! records the effective config and every artifact; it contains nothing
//! time- or machine-dependent, so identical runs produce identical bytes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::{CharagramModel, KbEncodeOptions};
use crate::error::{Error, Result};
use crate::eval::{evaluate_recall, RecallReport};
use crate::kb::{
    load_kb, load_mentions, load_pairs, split_dev, Kb, Mention, PairDataset, PairKind,
};
use crate::ngram::NgramVocabulary;
use crate::retrieval::{retrieve_topk, write_candidates_tsv, CandidateList, KbIndex};
use crate::trainer::{train, StopReason, TrainConfig, TrainReport};

fn default_dim() -> usize {
    300
}

fn default_windows() -> Vec<usize> {
    crate::ngram::DEFAULT_WINDOWS.to_vec()
}

fn default_dev_fraction() -> f64 {
    0.05
}

fn default_batch_size() -> usize {
    64
}

fn default_learning_rate() -> f64 {
    0.1
}

fn default_negatives() -> usize {
    32
}

fn default_margin() -> f64 {
    1.0
}

fn default_patience() -> usize {
    50
}

fn default_max_epochs() -> usize {
    200
}

fn default_top_k() -> usize {
    30
}

fn default_seed() -> u64 {
    7
}

/// Input file paths, relative to the config file's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataSection {
    pub kb: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aliases: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hrl_map: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_ee: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_me: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_mentions: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSection {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_windows")]
    pub windows: Vec<usize>,
    #[serde(default)]
    pub lowercase: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            dim: default_dim(),
            windows: default_windows(),
            lowercase: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSection {
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_negatives")]
    pub negatives: usize,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_dev_fraction")]
    pub dev_fraction: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            batch_size: default_batch_size(),
            learning_rate: default_learning_rate(),
            negatives: default_negatives(),
            margin: default_margin(),
            patience: default_patience(),
            max_epochs: default_max_epochs(),
            top_k: default_top_k(),
            seed: default_seed(),
            dev_fraction: default_dev_fraction(),
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            negatives: self.negatives,
            margin: self.margin,
            patience: self.patience,
            max_epochs: self.max_epochs,
            top_k: self.top_k,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputSection {
    pub dir: PathBuf,
}

/// The end-to-end run configuration (TOML).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    pub output: OutputSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("config error: {e}")))
    }

    /// Checks that the config names at least one training file and that every
    /// named input exists, before any work starts.
    pub fn validate(&self, base: &Path) -> Result<()> {
        if self.data.train_ee.is_none() && self.data.train_me.is_none() {
            return Err(Error::InvalidArgument(
                "config error: at least one of data.train_ee / data.train_me is required".into(),
            ));
        }
        let mut inputs: Vec<&PathBuf> = vec![&self.data.kb];
        inputs.extend(self.data.aliases.iter());
        inputs.extend(self.data.hrl_map.iter());
        inputs.extend(self.data.train_ee.iter());
        inputs.extend(self.data.train_me.iter());
        inputs.extend(self.data.test_mentions.iter());
        for p in inputs {
            let resolved = base.join(p);
            if !resolved.is_file() {
                return Err(Error::InvalidArgument(format!(
                    "config error: input file {} does not exist",
                    resolved.display()
                )));
            }
        }
        Ok(())
    }
}

/// Per-run statistics recorded in the manifest.
#[derive(Debug, Clone, Serialize)]
pub struct RunStats {
    pub n_entities: usize,
    pub n_train_pairs: usize,
    pub n_dev_pairs: usize,
    pub dropped_pairs: usize,
    pub vocabulary_size: usize,
    pub best_epoch: usize,
    pub best_dev_recall: f64,
    pub stop_reason: StopReason,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_test_mentions: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dropped_test_mentions: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_recall: Option<f64>,
}

/// Everything a finished run produced.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config: RunConfig,
    /// Artifact name -> file name inside the output directory.
    pub artifacts: BTreeMap<String, String>,
    pub stats: RunStats,
}

/// The run's in-memory results, for callers embedding the pipeline.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub report: TrainReport,
    pub recall: Option<RecallReport>,
}

fn write_artifact(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let partial = dir.join(format!("{name}.partial"));
    std::fs::write(&partial, bytes).map_err(|e| Error::io(&partial, e))?;
    let final_path = dir.join(name);
    std::fs::rename(&partial, &final_path).map_err(|e| Error::io(&final_path, e))
}

/// Saves via a `.partial` path and renames into place on success.
fn save_artifact<F>(dir: &Path, name: &str, save: F) -> Result<()>
where
    F: FnOnce(&Path) -> Result<()>,
{
    let partial = dir.join(format!("{name}.partial"));
    save(&partial)?;
    let final_path = dir.join(name);
    std::fs::rename(&partial, &final_path).map_err(|e| Error::io(&final_path, e))
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

/// Builds the n-gram vocabulary a training run uses: source side from the
/// training-pair source strings, target side from every KB name (canonical,
/// aliases, and transliterations).
pub fn vocabulary_for(kb: &Kb, pool: &PairDataset, windows: &[usize]) -> Result<NgramVocabulary> {
    NgramVocabulary::build(
        pool.pairs.iter().map(|p| p.source.as_str()),
        kb.entities()
            .iter()
            .flat_map(|e| e.name_set().chain(e.hrl_name.as_deref())),
        windows,
    )
}

/// Renders the per-epoch training report as TSV.
pub fn train_report_tsv(report: &TrainReport) -> String {
    let mut out = String::from("epoch\tmean_loss\tdev_recall\tbest_so_far\n");
    for e in &report.epochs {
        out.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\n",
            e.epoch, e.mean_loss, e.dev_recall, e.best_so_far
        ));
    }
    out
}

/// Runs the full pipeline: load, vocabulary, split, train, index, retrieve,
/// evaluate. Any stage error aborts with the stage's name attached.
pub fn run(config_path: &Path) -> Result<RunOutcome> {
    let text = std::fs::read_to_string(config_path).map_err(|e| Error::io(config_path, e))?;
    let config = stage("config", RunConfig::from_toml(&text))?;
    let base = config_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    run_with(&config, &base)
}

/// Runs the pipeline for an already-parsed config; paths resolve against `base`.
pub fn run_with(config: &RunConfig, base: &Path) -> Result<RunOutcome> {
    stage("config", config.validate(base))?;
    let out_dir = base.join(&config.output.dir);
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;

    // Load.
    let kb = stage(
        "load-kb",
        load_kb(
            &base.join(&config.data.kb),
            config
                .data
                .aliases
                .as_ref()
                .map(|p| base.join(p))
                .as_deref(),
            config
                .data
                .hrl_map
                .as_ref()
                .map(|p| base.join(p))
                .as_deref(),
        ),
    )?;
    let mut pool = PairDataset::default();
    let mut dropped_pairs = 0usize;
    if let Some(p) = &config.data.train_ee {
        let (ds, dropped) = stage(
            "load-pairs",
            load_pairs(&base.join(p), &kb, PairKind::EntityEntity),
        )?;
        dropped_pairs += dropped;
        pool.extend(ds);
    }
    if let Some(p) = &config.data.train_me {
        let (ds, dropped) = stage(
            "load-pairs",
            load_pairs(&base.join(p), &kb, PairKind::MentionEntity),
        )?;
        dropped_pairs += dropped;
        pool.extend(ds);
    }
    let mentions: Option<(Vec<Mention>, usize)> = match &config.data.test_mentions {
        Some(p) => Some(stage("load-mentions", load_mentions(&base.join(p), &kb))?),
        None => None,
    };

    // Vocabulary over pair sources and every KB name.
    let vocab = stage(
        "vocabulary",
        vocabulary_for(&kb, &pool, &config.model.windows),
    )?;

    // Split and train.
    let (train_set, dev_set) = stage(
        "split",
        split_dev(&pool, config.train.dev_fraction, config.train.seed),
    )?;
    let mut model = stage(
        "train",
        CharagramModel::new_random(
            vocab,
            config.model.dim,
            config.model.lowercase,
            config.train.seed,
        ),
    )?;
    let train_cfg = config.train.to_train_config();
    let report = stage(
        "train",
        train(&mut model, &train_set, &dev_set, &kb, &train_cfg),
    )?;
    stage(
        "train",
        save_artifact(&out_dir, "model.bin", |p| model.save(p)),
    )?;
    stage(
        "train",
        write_artifact(
            &out_dir,
            "train_report.tsv",
            train_report_tsv(&report).as_bytes(),
        ),
    )?;
    let summary = serde_json::json!({
        "config": &train_cfg,
        "best_epoch": report.best_epoch,
        "best_dev_recall": report.best_dev_recall,
        "stop_reason": report.stop_reason,
        "epochs_run": report.epochs.len(),
        "skipped_pairs": report.skipped_pairs,
    });
    stage(
        "train",
        write_artifact(
            &out_dir,
            "train_summary.json",
            (serde_json::to_string_pretty(&summary).expect("summary serialization cannot fail")
                + "\n")
                .as_bytes(),
        ),
    )?;

    // Index.
    let index = stage(
        "index",
        KbIndex::build(&model, &kb, KbEncodeOptions::default()),
    )?;
    stage(
        "index",
        save_artifact(&out_dir, "kb.index", |p| index.save(p)),
    )?;

    // Retrieve and evaluate when mentions are present.
    let mut artifacts: BTreeMap<String, String> = BTreeMap::new();
    artifacts.insert("model".into(), "model.bin".into());
    artifacts.insert("train_report".into(), "train_report.tsv".into());
    artifacts.insert("train_summary".into(), "train_summary.json".into());
    artifacts.insert("index".into(), "kb.index".into());

    let mut recall_report: Option<RecallReport> = None;
    let mut n_test_mentions = None;
    let mut dropped_test_mentions = None;
    if let Some((mentions, dropped)) = &mentions {
        n_test_mentions = Some(mentions.len());
        dropped_test_mentions = Some(*dropped);
        let lists: Vec<CandidateList> = stage(
            "retrieve",
            mentions
                .iter()
                .map(|m| retrieve_topk(&model, &index, &m.surface, config.train.top_k))
                .collect(),
        )?;
        stage(
            "retrieve",
            save_artifact(&out_dir, "candidates.tsv", |p| {
                write_candidates_tsv(p, &lists)
            }),
        )?;
        artifacts.insert("candidates".into(), "candidates.tsv".into());

        if mentions.iter().any(|m| m.gold_entity_id.is_some()) {
            let report = stage(
                "evaluate",
                evaluate_recall(mentions, &lists, config.train.top_k),
            )?;
            stage(
                "evaluate",
                write_artifact(&out_dir, "recall.tsv", report.to_tsv().as_bytes()),
            )?;
            stage(
                "evaluate",
                write_artifact(
                    &out_dir,
                    "recall.json",
                    (serde_json::to_string_pretty(&report)
                        .expect("report serialization cannot fail")
                        + "\n")
                        .as_bytes(),
                ),
            )?;
            artifacts.insert("recall_tsv".into(), "recall.tsv".into());
            artifacts.insert("recall_json".into(), "recall.json".into());
            recall_report = Some(report);
        }
    }

    let manifest = RunManifest {
        config: config.clone(),
        artifacts,
        stats: RunStats {
            n_entities: kb.len(),
            n_train_pairs: train_set.len(),
            n_dev_pairs: dev_set.len(),
            dropped_pairs,
            vocabulary_size: model.vocab().len(),
            best_epoch: report.best_epoch,
            best_dev_recall: report.best_dev_recall,
            stop_reason: report.stop_reason,
            n_test_mentions,
            dropped_test_mentions,
            test_recall: recall_report.as_ref().map(|r| r.recall),
        },
    };
    stage(
        "manifest",
        write_artifact(
            &out_dir,
            "manifest.json",
            (serde_json::to_string_pretty(&manifest).expect("manifest serialization cannot fail")
                + "\n")
                .as_bytes(),
        ),
    )?;

    Ok(RunOutcome {
        manifest,
        report,
        recall: recall_report,
    })
}
