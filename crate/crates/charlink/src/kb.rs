//! Loading and indexing of the English KB, alias table, pivot-language
//! counterpart map, training pair files, and mention files.
//!
//! All files are UTF-8 TSV, one record per line, no header. Blank lines are
//! skipped. Strings are NFC-normalized at load so equality and hashing are
//! stable across differently-composed inputs.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ngram::normalize_name;

/// One English KB entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KbEntity {
    pub id: String,
    pub canonical_name: String,
    /// Deduplicated, never containing the canonical name; insertion order preserved.
    pub aliases: Vec<String>,
    /// Surface form of this entity in the pivot high-resource language, when known.
    pub hrl_name: Option<String>,
}

impl KbEntity {
    /// The effective English name set A: canonical name first, then aliases.
    pub fn name_set(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.canonical_name.as_str()).chain(self.aliases.iter().map(|s| s.as_str()))
    }
}

/// A mention to be linked: surface string plus optional gold entity id.
///
/// The label is a free-form human-supplied mention-type tag carried through
/// for analysis; nothing interprets it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mention {
    pub surface: String,
    pub gold_entity_id: Option<String>,
    pub label: Option<String>,
}

/// Immutable id-indexed KB.
#[derive(Debug, Clone, Default)]
pub struct Kb {
    entities: Vec<KbEntity>,
    by_id: HashMap<String, usize>,
}

impl Kb {
    pub fn new(entities: Vec<KbEntity>) -> Result<Kb> {
        let mut by_id = HashMap::with_capacity(entities.len());
        for (i, e) in entities.iter().enumerate() {
            if by_id.insert(e.id.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate entity id {:?}",
                    e.id
                )));
            }
        }
        Ok(Kb { entities, by_id })
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn entities(&self) -> &[KbEntity] {
        &self.entities
    }

    pub fn entity(&self, idx: usize) -> &KbEntity {
        &self.entities[idx]
    }

    pub fn get(&self, id: &str) -> Option<&KbEntity> {
        self.by_id.get(id).map(|&i| &self.entities[i])
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    /// Writes the KB back out as `kb.tsv` (+ alias rows when requested).
    /// Loading the written files reproduces this KB up to entity order.
    pub fn save(&self, kb_path: &Path, alias_path: Option<&Path>) -> Result<()> {
        let mut kb_out = Vec::new();
        for e in &self.entities {
            match &e.hrl_name {
                Some(hrl) => writeln!(kb_out, "{}\t{}\t{}", e.id, e.canonical_name, hrl),
                None => writeln!(kb_out, "{}\t{}", e.id, e.canonical_name),
            }
            .expect("writing to a Vec cannot fail");
        }
        std::fs::write(kb_path, kb_out).map_err(|e| Error::io(kb_path, e))?;

        if let Some(alias_path) = alias_path {
            let mut alias_out = Vec::new();
            for e in &self.entities {
                for alias in &e.aliases {
                    writeln!(alias_out, "{}\t{}", e.id, alias)
                        .expect("writing to a Vec cannot fail");
                }
            }
            std::fs::write(alias_path, alias_out).map_err(|e| Error::io(alias_path, e))?;
        }
        Ok(())
    }
}

fn read_rows(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        let lineno = i + 1;
        let cols: Result<Vec<String>> = line
            .split('\t')
            .map(|c| {
                normalize_name(c, false).map_err(|e| Error::parse(path, lineno, e.to_string()))
            })
            .collect();
        rows.push((lineno, cols?));
    }
    Ok(rows)
}

/// Loads the KB file (`entity_id<TAB>canonical_name[<TAB>hrl_name]`), an
/// optional alias file (`entity_id<TAB>alias`), and an optional counterpart
/// map (`entity_id<TAB>hrl_name`).
///
/// Alias and counterpart rows naming unknown ids are hard errors, as are
/// duplicate entity ids and repeated counterpart assignments. Aliases are
/// deduplicated per entity; an alias equal to the canonical name is dropped.
pub fn load_kb(
    kb_path: &Path,
    alias_path: Option<&Path>,
    hrl_map_path: Option<&Path>,
) -> Result<Kb> {
    let mut entities = Vec::new();
    let mut by_id: HashMap<String, usize> = HashMap::new();

    for (lineno, cols) in read_rows(kb_path)? {
        if cols.len() != 2 && cols.len() != 3 {
            return Err(Error::parse(
                kb_path,
                lineno,
                format!("expected 2 or 3 tab-separated columns, got {}", cols.len()),
            ));
        }
        let id = cols[0].clone();
        let canonical_name = cols[1].clone();
        if id.is_empty() {
            return Err(Error::parse(kb_path, lineno, "empty entity id"));
        }
        if canonical_name.is_empty() {
            return Err(Error::parse(kb_path, lineno, "empty canonical name"));
        }
        let hrl_name = match cols.get(2) {
            Some(h) if h.is_empty() => {
                return Err(Error::parse(kb_path, lineno, "empty pivot-language name"));
            }
            Some(h) => Some(h.clone()),
            None => None,
        };
        if by_id.contains_key(&id) {
            return Err(Error::parse(
                kb_path,
                lineno,
                format!("duplicate entity id {id:?}"),
            ));
        }
        by_id.insert(id.clone(), entities.len());
        entities.push(KbEntity {
            id,
            canonical_name,
            aliases: Vec::new(),
            hrl_name,
        });
    }

    if let Some(alias_path) = alias_path {
        for (lineno, cols) in read_rows(alias_path)? {
            if cols.len() != 2 {
                return Err(Error::parse(
                    alias_path,
                    lineno,
                    format!("expected 2 tab-separated columns, got {}", cols.len()),
                ));
            }
            let (id, alias) = (&cols[0], &cols[1]);
            if alias.is_empty() {
                return Err(Error::parse(alias_path, lineno, "empty alias"));
            }
            let &idx = by_id.get(id).ok_or_else(|| {
                Error::parse(
                    alias_path,
                    lineno,
                    format!("alias for unknown entity id {id:?}"),
                )
            })?;
            let entity = &mut entities[idx];
            if *alias != entity.canonical_name && !entity.aliases.contains(alias) {
                entity.aliases.push(alias.clone());
            }
        }
    }

    if let Some(hrl_map_path) = hrl_map_path {
        for (lineno, cols) in read_rows(hrl_map_path)? {
            if cols.len() != 2 {
                return Err(Error::parse(
                    hrl_map_path,
                    lineno,
                    format!("expected 2 tab-separated columns, got {}", cols.len()),
                ));
            }
            let (id, hrl) = (&cols[0], &cols[1]);
            if hrl.is_empty() {
                return Err(Error::parse(
                    hrl_map_path,
                    lineno,
                    "empty pivot-language name",
                ));
            }
            let &idx = by_id.get(id).ok_or_else(|| {
                Error::parse(
                    hrl_map_path,
                    lineno,
                    format!("counterpart for unknown entity id {id:?}"),
                )
            })?;
            if entities[idx].hrl_name.is_some() {
                return Err(Error::parse(
                    hrl_map_path,
                    lineno,
                    format!("entity {id:?} already has a pivot-language name"),
                ));
            }
            entities[idx].hrl_name = Some(hrl.clone());
        }
    }

    Ok(Kb { entities, by_id })
}

/// Whether a training pair maps an entity name or a document mention to its entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairKind {
    EntityEntity,
    MentionEntity,
}

/// One training pair: a source-language string and the KB entity it names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pair {
    pub source: String,
    pub entity_id: String,
    pub kind: PairKind,
}

/// A list of training pairs; may mix both kinds after concatenation.
/// Duplicate rows are retained, so frequency acts as implicit weighting.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairDataset {
    pub pairs: Vec<Pair>,
}

impl PairDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Appends another dataset, preserving order.
    pub fn extend(&mut self, other: PairDataset) {
        self.pairs.extend(other.pairs);
    }
}

/// Loads a pair file (`source_string<TAB>entity_id`). Pairs whose entity is
/// missing from the KB are dropped; the drop count is returned alongside.
pub fn load_pairs(path: &Path, kb: &Kb, kind: PairKind) -> Result<(PairDataset, usize)> {
    let mut pairs = Vec::new();
    let mut dropped = 0usize;
    for (lineno, cols) in read_rows(path)? {
        if cols.len() != 2 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 2 tab-separated columns, got {}", cols.len()),
            ));
        }
        let source = cols[0].trim();
        let entity_id = &cols[1];
        if source.is_empty() {
            return Err(Error::parse(path, lineno, "empty source string"));
        }
        if entity_id.is_empty() {
            return Err(Error::parse(path, lineno, "empty entity id"));
        }
        if !kb.contains(entity_id) {
            dropped += 1;
            continue;
        }
        pairs.push(Pair {
            source: source.to_string(),
            entity_id: entity_id.clone(),
            kind,
        });
    }
    if pairs.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no usable training pairs in {}",
            path.display()
        )));
    }
    Ok((PairDataset { pairs }, dropped))
}

/// Loads a mention file (`surface[<TAB>gold_entity_id[<TAB>label]]`) without
/// checking gold ids against any KB. The third column is an optional
/// human-supplied mention-type label, kept but never interpreted.
pub fn load_mentions_raw(path: &Path) -> Result<Vec<Mention>> {
    let mut mentions = Vec::new();
    for (lineno, cols) in read_rows(path)? {
        if cols.is_empty() || cols.len() > 3 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 1 to 3 tab-separated columns, got {}", cols.len()),
            ));
        }
        let surface = cols[0].trim();
        if surface.is_empty() {
            return Err(Error::parse(path, lineno, "empty mention surface"));
        }
        let gold_entity_id = match cols.get(1) {
            Some(id) if id.is_empty() => {
                return Err(Error::parse(path, lineno, "empty gold entity id"));
            }
            Some(id) => Some(id.clone()),
            None => None,
        };
        mentions.push(Mention {
            surface: surface.to_string(),
            gold_entity_id,
            label: cols.get(2).cloned(),
        });
    }
    Ok(mentions)
}

/// Loads a mention file (`surface[<TAB>gold_entity_id]`). Mentions whose gold
/// entity is missing from the KB are dropped, not errors; the drop count is
/// returned alongside.
pub fn load_mentions(path: &Path, kb: &Kb) -> Result<(Vec<Mention>, usize)> {
    let all = load_mentions_raw(path)?;
    let mut mentions = Vec::new();
    let mut dropped = 0usize;
    for m in all {
        if let Some(gold) = &m.gold_entity_id {
            if !kb.contains(gold) {
                dropped += 1;
                continue;
            }
        }
        mentions.push(m);
    }
    Ok((mentions, dropped))
}

/// Deterministically splits a dataset into train and dev parts.
///
/// The dev part gets `round(len * fraction)` pairs, clamped so both parts are
/// non-empty; relative pair order is preserved within each part.
pub fn split_dev(
    dataset: &PairDataset,
    fraction: f64,
    seed: u64,
) -> Result<(PairDataset, PairDataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "dev fraction must lie strictly between 0 and 1, got {fraction}"
        )));
    }
    let n = dataset.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "dataset must have at least 2 pairs to split".into(),
        ));
    }
    let dev_len = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);

    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let mut dev_idx: Vec<usize> = indices[..dev_len].to_vec();
    let mut train_idx: Vec<usize> = indices[dev_len..].to_vec();
    dev_idx.sort_unstable();
    train_idx.sort_unstable();

    let take = |idx: &[usize]| PairDataset {
        pairs: idx.iter().map(|&i| dataset.pairs[i].clone()).collect(),
    };
    Ok((take(&train_idx), take(&dev_idx)))
}
