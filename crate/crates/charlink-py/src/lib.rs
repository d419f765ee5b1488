//! Python bindings for the charlink candidate-generation library.
//!
//! The module mirrors the Rust surface: load a KB and a trained model,
//! build an index, retrieve top-k candidates per mention, evaluate recall,
//! and run the whole train/retrieve/evaluate pipeline from a TOML config.

use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use charlink::encoder::{CharagramModel, KbEncodeOptions};
use charlink::error::Error;
use charlink::kb::{load_kb, Kb, Mention};
use charlink::ngram;
use charlink::pipeline;
use charlink::retrieval::{self, Candidate, CandidateList, KbIndex};
use charlink::synth::{self, SynthSpec};
use charlink::trainer::StopReason;

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// An id-indexed entity KB with aliases and optional pivot-language names.
#[pyclass(name = "Kb", module = "charlink_py")]
struct PyKb {
    inner: Kb,
}

#[pymethods]
impl PyKb {
    /// Loads a KB from TSV files (entities, optional aliases, optional
    /// pivot-name map).
    #[staticmethod]
    #[pyo3(signature = (kb_path, aliases=None, hrl_map=None))]
    fn load(
        kb_path: PathBuf,
        aliases: Option<PathBuf>,
        hrl_map: Option<PathBuf>,
    ) -> PyResult<Self> {
        let inner = load_kb(&kb_path, aliases.as_deref(), hrl_map.as_deref()).map_err(to_py_err)?;
        Ok(PyKb { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn contains(&self, entity_id: &str) -> bool {
        self.inner.contains(entity_id)
    }

    fn entity_ids(&self) -> Vec<String> {
        self.inner.entities().iter().map(|e| e.id.clone()).collect()
    }

    /// One entity as a dict: id, canonical_name, aliases, hrl_name.
    fn entity<'py>(&self, py: Python<'py>, entity_id: &str) -> PyResult<Bound<'py, PyDict>> {
        let entity = self
            .inner
            .get(entity_id)
            .ok_or_else(|| PyValueError::new_err(format!("unknown entity id {entity_id:?}")))?;
        let d = PyDict::new(py);
        d.set_item("id", &entity.id)?;
        d.set_item("canonical_name", &entity.canonical_name)?;
        d.set_item("aliases", &entity.aliases)?;
        d.set_item("hrl_name", &entity.hrl_name)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!("Kb({} entities)", self.inner.len())
    }
}

/// A trained character n-gram string encoder.
#[pyclass(name = "CharagramModel", module = "charlink_py")]
struct PyCharagramModel {
    inner: CharagramModel,
}

#[pymethods]
impl PyCharagramModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyCharagramModel {
            inner: CharagramModel::load(&path).map_err(to_py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py_err)
    }

    /// Embeds one string; out-of-vocabulary n-grams are skipped.
    fn encode(&self, s: &str) -> PyResult<Vec<f64>> {
        self.inner.encode(s).map_err(to_py_err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn lowercase(&self) -> bool {
        self.inner.lowercase()
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab().len()
    }

    fn __repr__(&self) -> String {
        format!(
            "CharagramModel(dim={}, vocab_size={}, lowercase={})",
            self.inner.dim(),
            self.inner.vocab().len(),
            self.inner.lowercase()
        )
    }
}

/// An L2-normalized f32 index over KB name variants for exact top-k scans.
#[pyclass(name = "KbIndex", module = "charlink_py")]
struct PyKbIndex {
    inner: KbIndex,
}

#[pymethods]
impl PyKbIndex {
    /// Embeds the KB with the given model and name-variant toggles.
    #[staticmethod]
    #[pyo3(signature = (model, kb, include_aliases=true, include_hrl=true))]
    fn build(
        model: &PyCharagramModel,
        kb: &PyKb,
        include_aliases: bool,
        include_hrl: bool,
    ) -> PyResult<Self> {
        let options = KbEncodeOptions {
            include_aliases,
            include_hrl,
        };
        let inner = KbIndex::build(&model.inner, &kb.inner, options).map_err(to_py_err)?;
        Ok(PyKbIndex { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyKbIndex {
            inner: KbIndex::load(&path).map_err(to_py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py_err)
    }

    /// Exact top-k candidates for one mention: list of (entity_id, score),
    /// best first.
    fn retrieve(
        &self,
        model: &PyCharagramModel,
        mention: &str,
        k: usize,
    ) -> PyResult<Vec<(String, f64)>> {
        let list =
            retrieval::retrieve_topk(&model.inner, &self.inner, mention, k).map_err(to_py_err)?;
        Ok(list
            .items
            .into_iter()
            .map(|c| (c.entity_id, c.score))
            .collect())
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn n_entities(&self) -> usize {
        self.inner.n_entities()
    }

    #[getter]
    fn n_rows(&self) -> usize {
        self.inner.n_rows()
    }

    #[getter]
    fn dropped_rows(&self) -> usize {
        self.inner.dropped_rows()
    }

    fn __repr__(&self) -> String {
        format!(
            "KbIndex(n_entities={}, n_rows={}, dim={})",
            self.inner.n_entities(),
            self.inner.n_rows(),
            self.inner.dim()
        )
    }
}

/// Character n-gram bag of a boundary-wrapped string, keyed by the display
/// form (`<s>`, `</s>` for the sentinels).
#[pyfunction]
#[pyo3(signature = (s, windows=None))]
fn extract_ngrams(
    s: &str,
    windows: Option<Vec<usize>>,
) -> PyResult<std::collections::BTreeMap<String, u32>> {
    let windows = windows.unwrap_or_else(|| vec![2, 3, 4, 5]);
    let bag = ngram::extract_ngrams(s, &windows).map_err(to_py_err)?;
    Ok(bag
        .into_iter()
        .map(|(g, c)| (ngram::display_ngram(&g), c))
        .collect())
}

/// Fraction of corpus A's n-gram types also present in corpus B.
#[pyfunction]
#[pyo3(signature = (corpus_a, corpus_b, windows=None))]
fn ngram_overlap(
    corpus_a: Vec<String>,
    corpus_b: Vec<String>,
    windows: Option<Vec<usize>>,
) -> PyResult<f64> {
    let windows = windows.unwrap_or_else(|| vec![2, 3, 4, 5]);
    ngram::ngram_overlap(
        corpus_a.iter().map(|s| s.as_str()),
        corpus_b.iter().map(|s| s.as_str()),
        &windows,
    )
    .map_err(to_py_err)
}

/// Cosine similarity of two equal-length vectors.
#[pyfunction]
fn cosine(u: Vec<f64>, v: Vec<f64>) -> PyResult<f64> {
    retrieval::cosine(&u, &v).map_err(to_py_err)
}

/// Mention-to-entity score: the max cosine over the entity's English names
/// and its pivot-language name.
#[pyfunction]
fn score_entity(
    model: &PyCharagramModel,
    mention: &str,
    kb: &PyKb,
    entity_id: &str,
) -> PyResult<f64> {
    let entity = kb
        .inner
        .get(entity_id)
        .ok_or_else(|| PyValueError::new_err(format!("unknown entity id {entity_id:?}")))?;
    retrieval::score_entity(&model.inner, mention, entity).map_err(to_py_err)
}

fn candidate_list(mention: &str, pairs: Vec<(String, f64)>) -> PyResult<CandidateList> {
    let items = pairs
        .into_iter()
        .map(|(entity_id, score)| Candidate { entity_id, score })
        .collect();
    CandidateList::new(mention.to_string(), items).map_err(to_py_err)
}

/// Convex merge of an external lookup list with a charagram list for one
/// mention: alpha * lookup + (1 - alpha) * softmax(beta * charagram).
#[pyfunction]
fn merge_scores(
    mention: &str,
    lookup: Vec<(String, f64)>,
    charagram: Vec<(String, f64)>,
    alpha: f64,
    beta: f64,
    k: usize,
) -> PyResult<Vec<(String, f64)>> {
    let lookup = candidate_list(mention, lookup)?;
    let charagram = candidate_list(mention, charagram)?;
    let merged = retrieval::merge_scores(&lookup, &charagram, alpha, beta, k).map_err(to_py_err)?;
    Ok(merged
        .items
        .into_iter()
        .map(|c| (c.entity_id, c.score))
        .collect())
}

/// Gold-candidate recall at k. `mentions` holds (surface, gold_entity_id)
/// pairs (gold may be None); `candidates` holds one (entity_id, score) list
/// per mention. Returns the report as a dict.
#[pyfunction]
fn evaluate_recall<'py>(
    py: Python<'py>,
    mentions: Vec<(String, Option<String>)>,
    candidates: Vec<Vec<(String, f64)>>,
    k: usize,
) -> PyResult<Bound<'py, PyDict>> {
    if mentions.len() != candidates.len() {
        return Err(PyValueError::new_err(format!(
            "{} mentions but {} candidate lists",
            mentions.len(),
            candidates.len()
        )));
    }
    let lists: Vec<CandidateList> = mentions
        .iter()
        .zip(candidates)
        .map(|((surface, _), pairs)| candidate_list(surface, pairs))
        .collect::<PyResult<_>>()?;
    let mentions: Vec<Mention> = mentions
        .into_iter()
        .map(|(surface, gold_entity_id)| Mention {
            surface,
            gold_entity_id,
            label: None,
        })
        .collect();
    let report = charlink::eval::evaluate_recall(&mentions, &lists, k).map_err(to_py_err)?;
    let d = PyDict::new(py);
    d.set_item("top_k", report.top_k)?;
    d.set_item("mentions_total", report.n_mentions_total)?;
    d.set_item("mentions_scored", report.n_mentions_scored)?;
    d.set_item("hits", report.n_hits)?;
    d.set_item("recall", report.recall)?;
    d.set_item("in_top_1", report.in_top_1)?;
    d.set_item("in_top_2_to_k", report.in_top_2_to_k)?;
    d.set_item("not_in_top_k", report.not_in_top_k)?;
    Ok(d)
}

/// Writes the synthetic character-cipher dataset (KB, aliases, training
/// pairs, held-out mentions, pivot map) into `dir` and returns the file map.
#[pyfunction]
#[pyo3(signature = (dir, n_entities=1000, alias_fraction=0.1, n_test=200, perturb_train=0.4, perturb_test=0.2, seed=7))]
fn generate_dataset<'py>(
    py: Python<'py>,
    dir: PathBuf,
    n_entities: usize,
    alias_fraction: f64,
    n_test: usize,
    perturb_train: f64,
    perturb_test: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let spec = SynthSpec {
        n_entities,
        alias_fraction,
        n_test,
        perturb_train,
        perturb_test,
        seed,
    };
    let data = synth::generate(&spec).map_err(to_py_err)?;
    synth::write_dataset(&data, &dir).map_err(to_py_err)?;
    let d = PyDict::new(py);
    for (key, file) in [
        ("kb", "kb.tsv"),
        ("aliases", "aliases.tsv"),
        ("train_ee", "ee.tsv"),
        ("train_me", "me.tsv"),
        ("test_mentions", "mentions.tsv"),
        ("alias_mentions", "alias_mentions.tsv"),
        ("hrl_map", "hrl.tsv"),
    ] {
        d.set_item(key, dir.join(file))?;
    }
    Ok(d)
}

fn paths_dict<'py>(
    py: Python<'py>,
    out_dir: &Path,
    manifest: &pipeline::RunManifest,
) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    for (name, file) in &manifest.artifacts {
        d.set_item(name, out_dir.join(file))?;
    }
    Ok(d)
}

/// Runs the full pipeline (train, index, retrieve, evaluate) from a TOML
/// config and returns a dict of run statistics and artifact paths.
#[pyfunction]
fn run<'py>(py: Python<'py>, config_path: PathBuf) -> PyResult<Bound<'py, PyDict>> {
    let outcome = pipeline::run(&config_path).map_err(to_py_err)?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let out_dir = base.join(&outcome.manifest.config.output.dir);
    let stats = &outcome.manifest.stats;
    let d = PyDict::new(py);
    d.set_item("artifacts", paths_dict(py, &out_dir, &outcome.manifest)?)?;
    d.set_item("n_entities", stats.n_entities)?;
    d.set_item("n_train_pairs", stats.n_train_pairs)?;
    d.set_item("n_dev_pairs", stats.n_dev_pairs)?;
    d.set_item("dropped_pairs", stats.dropped_pairs)?;
    d.set_item("vocabulary_size", stats.vocabulary_size)?;
    d.set_item("best_epoch", stats.best_epoch)?;
    d.set_item("best_dev_recall", stats.best_dev_recall)?;
    d.set_item(
        "stop_reason",
        match stats.stop_reason {
            StopReason::Patience => "patience",
            StopReason::MaxEpochs => "max_epochs",
        },
    )?;
    d.set_item("epochs", outcome.report.epochs.len())?;
    d.set_item("n_test_mentions", stats.n_test_mentions)?;
    d.set_item("test_recall", stats.test_recall)?;
    Ok(d)
}

/// Nearest target-side n-grams of a source-side n-gram by embedding cosine;
/// returns a list of (ngram, score) with display-form sentinels.
#[pyfunction]
fn ngram_neighbors(
    model: &PyCharagramModel,
    query: &str,
    k: usize,
) -> PyResult<Vec<(String, f64)>> {
    let outcomes = charlink::eval::ngram_neighbors(&model.inner, &[ngram::parse_ngram(query)], k)
        .map_err(to_py_err)?;
    match outcomes.into_iter().next().map(|(_, outcome)| outcome) {
        Some(charlink::eval::NeighborOutcome::Ranked(neighbors)) => Ok(neighbors
            .into_iter()
            .map(|(g, score)| (ngram::display_ngram(&g), score))
            .collect()),
        Some(charlink::eval::NeighborOutcome::OutOfVocabulary) => Err(PyValueError::new_err(
            format!("n-gram {query:?} is not in the vocabulary"),
        )),
        Some(charlink::eval::NeighborOutcome::Degenerate) => Err(PyValueError::new_err(format!(
            "n-gram {query:?} has a zero-norm embedding"
        ))),
        None => Err(PyValueError::new_err("no outcome returned")),
    }
}

#[pymodule]
fn charlink_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyKb>()?;
    m.add_class::<PyCharagramModel>()?;
    m.add_class::<PyKbIndex>()?;
    m.add_function(wrap_pyfunction!(extract_ngrams, m)?)?;
    m.add_function(wrap_pyfunction!(ngram_overlap, m)?)?;
    m.add_function(wrap_pyfunction!(cosine, m)?)?;
    m.add_function(wrap_pyfunction!(score_entity, m)?)?;
    m.add_function(wrap_pyfunction!(merge_scores, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_recall, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(ngram_neighbors, m)?)?;
    Ok(())
}
