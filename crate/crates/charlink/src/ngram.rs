//! Character n-gram extraction, vocabulary construction, and overlap statistics
//! for pivot-language selection.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// Start-of-string boundary symbol. A Unicode noncharacter, so it can never
/// collide with well-formed input text.
pub const BOUNDARY_START: char = '\u{FDD0}';
/// End-of-string boundary symbol.
pub const BOUNDARY_END: char = '\u{FDD1}';

/// Human-readable forms used in CLI output and query files.
pub const BOUNDARY_START_DISPLAY: &str = "<s>";
pub const BOUNDARY_END_DISPLAY: &str = "</s>";

/// Window sizes used when none are configured.
pub const DEFAULT_WINDOWS: &[usize] = &[2, 3, 4, 5];

/// Dev-recall threshold below which a pivot candidate is excluded.
pub const DEFAULT_RECALL_THRESHOLD: f64 = 0.75;

/// Renders an n-gram with boundary symbols spelled out as `<s>` / `</s>`.
pub fn display_ngram(ngram: &str) -> String {
    let mut out = String::with_capacity(ngram.len());
    for c in ngram.chars() {
        match c {
            BOUNDARY_START => out.push_str(BOUNDARY_START_DISPLAY),
            BOUNDARY_END => out.push_str(BOUNDARY_END_DISPLAY),
            _ => out.push(c),
        }
    }
    out
}

/// Parses the `<s>` / `</s>` markup back into boundary symbols.
pub fn parse_ngram(text: &str) -> String {
    text.replace(BOUNDARY_START_DISPLAY, &BOUNDARY_START.to_string())
        .replace(BOUNDARY_END_DISPLAY, &BOUNDARY_END.to_string())
}

/// NFC-normalizes a name, optionally lowercasing it.
///
/// Rejects strings containing the reserved boundary symbols; real input can
/// never legitimately contain them.
pub fn normalize_name(s: &str, lowercase: bool) -> Result<String> {
    let normalized: String = s.nfc().collect();
    if normalized.contains(BOUNDARY_START) || normalized.contains(BOUNDARY_END) {
        return Err(Error::InvalidArgument(format!(
            "string {s:?} contains a reserved boundary code point"
        )));
    }
    Ok(if lowercase {
        normalized.to_lowercase()
    } else {
        normalized
    })
}

/// Validates a window set: non-empty, every size >= 1; returns it sorted and deduplicated.
pub fn validate_windows(windows: &[usize]) -> Result<Vec<usize>> {
    if windows.is_empty() {
        return Err(Error::InvalidArgument("window set is empty".into()));
    }
    if windows.contains(&0) {
        return Err(Error::InvalidArgument(
            "window size 0 is not allowed".into(),
        ));
    }
    let mut sorted = windows.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    Ok(sorted)
}

/// Multiset of character n-grams with positive counts.
pub type NgramBag = BTreeMap<String, u32>;

/// Extracts the bag of character n-grams of `s` for every window size.
///
/// The string is wrapped with exactly one boundary symbol on each side; every
/// contiguous window of each configured size over the wrapped character
/// sequence contributes one count. Space characters are ordinary characters.
pub fn extract_ngrams(s: &str, windows: &[usize]) -> Result<NgramBag> {
    if s.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot extract n-grams from an empty string".into(),
        ));
    }
    if s.contains(BOUNDARY_START) || s.contains(BOUNDARY_END) {
        return Err(Error::InvalidArgument(format!(
            "string {s:?} contains a reserved boundary code point"
        )));
    }
    let windows = validate_windows(windows)?;

    let mut wrapped = Vec::with_capacity(s.chars().count() + 2);
    wrapped.push(BOUNDARY_START);
    wrapped.extend(s.chars());
    wrapped.push(BOUNDARY_END);

    let mut bag = NgramBag::new();
    for &n in &windows {
        for window in wrapped.windows(n) {
            *bag.entry(window.iter().collect()).or_insert(0) += 1;
        }
    }
    Ok(bag)
}

/// Set of n-gram types over a whole corpus (union across strings).
pub fn corpus_ngram_types<'a, I>(corpus: I, windows: &[usize]) -> Result<BTreeSet<String>>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut types = BTreeSet::new();
    let mut any = false;
    for s in corpus {
        any = true;
        for (ngram, _) in extract_ngrams(s, windows)? {
            types.insert(ngram);
        }
    }
    if !any {
        return Err(Error::InvalidArgument("corpus is empty".into()));
    }
    Ok(types)
}

/// Which corpus an n-gram first appeared in during vocabulary construction.
///
/// The embedding table is shared across both sides; the tag is a reporting
/// convention for the nearest-neighbor analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// First seen in a pair's source string (mention side).
    Source,
    /// First seen in an entity name (English KB side).
    Target,
}

impl Side {
    pub fn as_u8(self) -> u8 {
        match self {
            Side::Source => 0,
            Side::Target => 1,
        }
    }

    pub fn from_u8(v: u8) -> Result<Side> {
        match v {
            0 => Ok(Side::Source),
            1 => Ok(Side::Target),
            _ => Err(Error::ModelFormat(format!("invalid side tag {v}"))),
        }
    }
}

/// Frozen bijection between n-grams and dense ids in `[0, |V|)`.
///
/// Ids are assigned in lexicographic n-gram order, so rebuilding from the same
/// input yields the same ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NgramVocabulary {
    ngrams: Vec<String>,
    sides: Vec<Side>,
    by_ngram: HashMap<String, u32>,
    windows: Vec<usize>,
}

impl NgramVocabulary {
    /// Builds the vocabulary from all n-grams of the source strings and of the
    /// target entity names. Side tags record first appearance (sources are
    /// scanned before targets).
    pub fn build<'a, I, J>(sources: I, targets: J, windows: &[usize]) -> Result<NgramVocabulary>
    where
        I: IntoIterator<Item = &'a str>,
        J: IntoIterator<Item = &'a str>,
    {
        let windows = validate_windows(windows)?;
        let mut side_of: BTreeMap<String, Side> = BTreeMap::new();
        let mut any = false;
        for s in sources {
            any = true;
            for (ngram, _) in extract_ngrams(s, &windows)? {
                side_of.entry(ngram).or_insert(Side::Source);
            }
        }
        for s in targets {
            any = true;
            for (ngram, _) in extract_ngrams(s, &windows)? {
                side_of.entry(ngram).or_insert(Side::Target);
            }
        }
        if !any {
            return Err(Error::InvalidArgument(
                "cannot build a vocabulary from empty input".into(),
            ));
        }
        // BTreeMap iteration is lexicographic, which fixes the id order.
        let entries: Vec<(String, Side)> = side_of.into_iter().collect();
        Self::from_entries(entries, windows)
    }

    /// Reassembles a vocabulary from `(ngram, side)` entries already in
    /// lexicographic order, as stored in a model file.
    pub fn from_entries(
        entries: Vec<(String, Side)>,
        windows: Vec<usize>,
    ) -> Result<NgramVocabulary> {
        let windows = validate_windows(&windows)?;
        let mut by_ngram = HashMap::with_capacity(entries.len());
        let mut ngrams = Vec::with_capacity(entries.len());
        let mut sides = Vec::with_capacity(entries.len());
        for (id, (ngram, side)) in entries.into_iter().enumerate() {
            if let Some(prev) = ngrams.last() {
                if *prev >= ngram {
                    return Err(Error::ModelFormat(format!(
                        "vocabulary entries out of order at id {id}"
                    )));
                }
            }
            by_ngram.insert(ngram.clone(), id as u32);
            ngrams.push(ngram);
            sides.push(side);
        }
        Ok(NgramVocabulary {
            ngrams,
            sides,
            by_ngram,
            windows,
        })
    }

    pub fn len(&self) -> usize {
        self.ngrams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ngrams.is_empty()
    }

    /// Dense id of an n-gram; `None` when out of vocabulary.
    pub fn id(&self, ngram: &str) -> Option<u32> {
        self.by_ngram.get(ngram).copied()
    }

    /// N-gram for a dense id.
    pub fn ngram(&self, id: u32) -> &str {
        &self.ngrams[id as usize]
    }

    pub fn side(&self, id: u32) -> Side {
        self.sides[id as usize]
    }

    pub fn windows(&self) -> &[usize] {
        &self.windows
    }

    /// Entries in id order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, Side)> + '_ {
        self.ngrams
            .iter()
            .map(|s| s.as_str())
            .zip(self.sides.iter().copied())
    }
}

/// Fraction of corpus A's n-gram types that also occur in corpus B.
///
/// Asymmetric by construction: the denominator is A's type count, with A the
/// low-resource corpus whose coverage is being measured.
pub fn ngram_overlap<'a, I, J>(corpus_a: I, corpus_b: J, windows: &[usize]) -> Result<f64>
where
    I: IntoIterator<Item = &'a str>,
    J: IntoIterator<Item = &'a str>,
{
    let types_a = corpus_ngram_types(corpus_a, windows)?;
    let types_b = corpus_ngram_types(corpus_b, windows)?;
    overlap_of_types(&types_a, &types_b)
}

/// Overlap ratio from precomputed type sets.
pub fn overlap_of_types(types_a: &BTreeSet<String>, types_b: &BTreeSet<String>) -> Result<f64> {
    if types_a.is_empty() {
        return Err(Error::InvalidArgument(
            "corpus has no n-gram types (windows larger than every string)".into(),
        ));
    }
    let shared = types_a.iter().filter(|g| types_b.contains(*g)).count();
    Ok(shared as f64 / types_a.len() as f64)
}

/// A candidate pivot language: its name, a corpus of entity names in it, and
/// the dev recall of a model trained on it (when known).
#[derive(Debug, Clone)]
pub struct HrlCandidate {
    pub name: String,
    pub corpus: Vec<String>,
    pub dev_recall: Option<f64>,
}

/// One row of the pivot-selection report.
#[derive(Debug, Clone, PartialEq)]
pub struct PivotRanking {
    pub name: String,
    pub overlap: f64,
    pub dev_recall: Option<f64>,
    /// False when dev recall is known and below the threshold.
    pub eligible: bool,
}

/// Ranks every candidate by descending n-gram overlap with the LRL corpus,
/// ties broken lexicographically by name. Candidates with a known dev recall
/// below `threshold` are marked ineligible but still reported.
pub fn rank_pivots(
    lrl_corpus: &[String],
    candidates: &[HrlCandidate],
    threshold: f64,
    windows: &[usize],
) -> Result<Vec<PivotRanking>> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no pivot candidates given".into()));
    }
    if !threshold.is_finite() {
        return Err(Error::InvalidArgument(
            "recall threshold must be finite".into(),
        ));
    }
    let lrl_types = corpus_ngram_types(lrl_corpus.iter().map(|s| s.as_str()), windows)?;
    let mut ranked = Vec::with_capacity(candidates.len());
    for cand in candidates {
        let cand_types = corpus_ngram_types(cand.corpus.iter().map(|s| s.as_str()), windows)?;
        let overlap = overlap_of_types(&lrl_types, &cand_types)?;
        let eligible = cand.dev_recall.map_or(true, |r| r >= threshold);
        ranked.push(PivotRanking {
            name: cand.name.clone(),
            overlap,
            dev_recall: cand.dev_recall,
            eligible,
        });
    }
    ranked.sort_by(|a, b| {
        b.overlap
            .total_cmp(&a.overlap)
            .then_with(|| a.name.cmp(&b.name))
    });
    Ok(ranked)
}

/// Eligible pivot candidates ranked best-first as `(name, overlap)`.
///
/// Errors when every candidate is filtered out by the recall threshold.
pub fn select_pivot(
    lrl_corpus: &[String],
    candidates: &[HrlCandidate],
    threshold: f64,
    windows: &[usize],
) -> Result<Vec<(String, f64)>> {
    let ranked = rank_pivots(lrl_corpus, candidates, threshold, windows)?;
    let eligible: Vec<(String, f64)> = ranked
        .into_iter()
        .filter(|r| r.eligible)
        .map(|r| (r.name, r.overlap))
        .collect();
    if eligible.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no eligible pivot: every candidate's dev recall is below {threshold}"
        )));
    }
    Ok(eligible)
}
