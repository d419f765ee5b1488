//! Cosine scoring, the L2-normalized KB embedding index, exact top-k
//! retrieval, the external lookup-based generator, and merge scoring.

use std::collections::{BinaryHeap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::encoder::{encode_kb_with, CharagramModel, KbEmbeddings, KbEncodeOptions, VariantKind};
use crate::error::{Error, Result};
use crate::kb::{Kb, KbEntity};

const INDEX_MAGIC: &[u8; 8] = b"CHARIDX\0";
const INDEX_VERSION: u32 = 1;

/// Norm below which an embedding row is treated as degenerate and excluded
/// from the index; dividing by it would overflow f32.
const MIN_ROW_NORM: f64 = 1e-30;

/// Entities scanned per work unit; chunk results merge in chunk order, so the
/// outcome is identical for any worker count.
const ENTITY_CHUNK: usize = 8192;

/// Standard cosine similarity, clamped to [-1, 1] against round-off.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::InvalidArgument(format!(
            "cosine of vectors with different lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    if u.is_empty() {
        return Err(Error::InvalidArgument("cosine of empty vectors".into()));
    }
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for (&a, &b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 {
        return Err(Error::ZeroNorm("left vector".into()));
    }
    if nv == 0.0 {
        return Err(Error::ZeroNorm("right vector".into()));
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

/// Dot product over f32 slices with a fixed 8-lane accumulation order.
///
/// Both the index scan and the brute-force test oracle use this primitive, so
/// their scores are bitwise identical.
#[inline]
pub fn dot32(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let n8 = a.len() - a.len() % 8;
    for (xa, xb) in a[..n8].chunks_exact(8).zip(b[..n8].chunks_exact(8)) {
        for l in 0..8 {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (xa, xb) in a[n8..].iter().zip(&b[n8..]) {
        s += xa * xb;
    }
    s
}

/// Entity score per the pivot-max rule: the best cosine between the mention
/// and any English name variant (canonical or alias), or the pivot-language
/// counterpart when present. Degenerate variants are skipped; the error
/// surfaces only when every variant (or the mention itself) is degenerate.
pub fn score_entity(model: &CharagramModel, mention: &str, entity: &KbEntity) -> Result<f64> {
    let v_m = model.encode(mention)?;
    if v_m.iter().all(|&x| x == 0.0) {
        return Err(Error::ZeroNorm(format!("embedding of mention {mention:?}")));
    }
    let mut best: Option<f64> = None;
    let names = entity.name_set().chain(entity.hrl_name.as_deref());
    for name in names {
        let v_e = model.encode(name)?;
        match cosine(&v_m, &v_e) {
            Ok(c) => best = Some(best.map_or(c, |b: f64| b.max(c))),
            Err(Error::ZeroNorm(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    best.ok_or_else(|| Error::ZeroNorm(format!("every name variant of entity {:?}", entity.id)))
}

/// One retrieved candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub entity_id: String,
    pub score: f64,
}

/// Ranked candidates for one mention: unique entity ids, descending score,
/// ties broken by ascending entity id.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateList {
    pub mention: String,
    pub items: Vec<Candidate>,
}

impl CandidateList {
    /// Ranks raw candidates and checks the list invariants.
    pub fn new(mention: String, mut items: Vec<Candidate>) -> Result<CandidateList> {
        if let Some(c) = items.iter().find(|c| !c.score.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite score for entity {:?}",
                c.entity_id
            )));
        }
        items.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.entity_id.cmp(&b.entity_id))
        });
        for pair in items.windows(2) {
            if pair[0].entity_id == pair[1].entity_id {
                return Err(Error::InvalidArgument(format!(
                    "duplicate entity {:?} in candidate list",
                    pair[0].entity_id
                )));
            }
        }
        Ok(CandidateList { mention, items })
    }

    pub fn truncated(mut self, k: usize) -> CandidateList {
        self.items.truncate(k);
        self
    }

    /// 1-based rank of an entity id, if present.
    pub fn rank_of(&self, entity_id: &str) -> Option<usize> {
        self.items
            .iter()
            .position(|c| c.entity_id == entity_id)
            .map(|i| i + 1)
    }
}

/// Immutable L2-normalized f32 embedding index over KB name variants.
///
/// Rows are grouped by entity in KB order; degenerate (zero-norm) rows are
/// dropped at build. The scan takes each entity's max over its rows before
/// ranking, so an entity appears at most once in any result.
#[derive(Debug, Clone)]
pub struct KbIndex {
    dim: usize,
    entity_ids: Vec<String>,
    /// Lexicographic rank of each entity id; the ranking tie-break key.
    id_rank: Vec<u32>,
    /// Row range of entity i is entity_start[i]..entity_start[i+1].
    entity_start: Vec<u32>,
    /// Row-major n_rows x dim, each row unit-length.
    rows: Vec<f32>,
    kinds: Vec<VariantKind>,
    /// Rows dropped at build because their norm was degenerate.
    dropped_rows: usize,
}

fn compute_id_rank(ids: &[String]) -> Vec<u32> {
    let mut order: Vec<u32> = (0..ids.len() as u32).collect();
    order.sort_by(|&a, &b| ids[a as usize].cmp(&ids[b as usize]));
    let mut rank = vec![0u32; ids.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i as usize] = r as u32;
    }
    rank
}

impl KbIndex {
    /// Normalizes precomputed KB embeddings into an index. Entity ids must be
    /// unique and row metadata grouped by ascending entity index.
    pub fn from_embeddings(entity_ids: Vec<String>, emb: &KbEmbeddings) -> Result<KbIndex> {
        let n_entities = entity_ids.len();
        {
            let mut seen = HashSet::with_capacity(n_entities);
            for id in &entity_ids {
                if !seen.insert(id.as_str()) {
                    return Err(Error::InvalidArgument(format!(
                        "duplicate entity id {id:?}"
                    )));
                }
            }
        }
        let dim = emb.dim;
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "embedding dimension must be positive".into(),
            ));
        }

        let mut entity_start = vec![0u32; n_entities + 1];
        let mut rows = Vec::with_capacity(emb.rows.len());
        let mut kinds = Vec::with_capacity(emb.meta.len());
        let mut dropped_rows = 0usize;
        let mut current = 0usize;
        for (i, meta) in emb.meta.iter().enumerate() {
            let e = meta.entity as usize;
            if e >= n_entities {
                return Err(Error::InvalidArgument(format!(
                    "row {i} references entity index {e} out of range"
                )));
            }
            if e < current {
                return Err(Error::InvalidArgument(
                    "rows are not grouped by entity".into(),
                ));
            }
            while current < e {
                current += 1;
                entity_start[current] = rows.len() as u32 / dim as u32;
            }
            let src = emb.row(i);
            let norm = src.iter().map(|&x| x * x).sum::<f64>().sqrt();
            if !(norm > MIN_ROW_NORM) || !norm.is_finite() {
                dropped_rows += 1;
                continue;
            }
            rows.extend(src.iter().map(|&x| (x / norm) as f32));
            kinds.push(meta.kind);
        }
        while current < n_entities {
            current += 1;
            entity_start[current] = rows.len() as u32 / dim as u32;
        }

        let id_rank = compute_id_rank(&entity_ids);
        Ok(KbIndex {
            dim,
            entity_ids,
            id_rank,
            entity_start,
            rows,
            kinds,
            dropped_rows,
        })
    }

    /// Encodes and indexes a KB in one step.
    pub fn build(model: &CharagramModel, kb: &Kb, options: KbEncodeOptions) -> Result<KbIndex> {
        let emb = encode_kb_with(model, kb, options)?;
        let ids = kb.entities().iter().map(|e| e.id.clone()).collect();
        KbIndex::from_embeddings(ids, &emb)
    }

    /// Builds an index from one raw f32 row per entity (normalized here),
    /// bypassing the encoder. Used for synthetic throughput evaluation.
    pub fn from_raw_rows(
        dim: usize,
        entity_ids: Vec<String>,
        mut rows: Vec<f32>,
    ) -> Result<KbIndex> {
        let n = entity_ids.len();
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "embedding dimension must be positive".into(),
            ));
        }
        if rows.len() != n * dim {
            return Err(Error::InvalidArgument(format!(
                "expected {} values for {} rows of width {}, got {}",
                n * dim,
                n,
                dim,
                rows.len()
            )));
        }
        rows.par_chunks_mut(dim).try_for_each(|row| -> Result<()> {
            let norm = row.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
            if !(norm > MIN_ROW_NORM) || !norm.is_finite() {
                return Err(Error::ZeroNorm("index row".into()));
            }
            for x in row {
                *x = (*x as f64 / norm) as f32;
            }
            Ok(())
        })?;
        let id_rank = compute_id_rank(&entity_ids);
        Ok(KbIndex {
            dim,
            entity_ids,
            id_rank,
            entity_start: (0..=n as u32).collect(),
            rows,
            kinds: vec![VariantKind::Canonical; n],
            dropped_rows: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_entities(&self) -> usize {
        self.entity_ids.len()
    }

    pub fn n_rows(&self) -> usize {
        self.kinds.len()
    }

    pub fn dropped_rows(&self) -> usize {
        self.dropped_rows
    }

    pub fn entity_ids(&self) -> &[String] {
        &self.entity_ids
    }

    pub fn entity_id(&self, idx: u32) -> &str {
        &self.entity_ids[idx as usize]
    }

    /// Rows of one entity.
    pub fn entity_rows(&self, idx: u32) -> impl Iterator<Item = &[f32]> {
        let start = self.entity_start[idx as usize] as usize;
        let end = self.entity_start[idx as usize + 1] as usize;
        (start..end).map(move |r| &self.rows[r * self.dim..(r + 1) * self.dim])
    }

    pub fn id_rank(&self, idx: u32) -> u32 {
        self.id_rank[idx as usize]
    }

    /// Serializes the index: header, entity ids, per-row metadata, then
    /// normalized rows as little-endian f32.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io_err = |e: std::io::Error| Error::io(path, e);

        w.write_all(INDEX_MAGIC).map_err(io_err)?;
        w.write_all(&INDEX_VERSION.to_le_bytes()).map_err(io_err)?;
        w.write_all(&(self.dim as u32).to_le_bytes())
            .map_err(io_err)?;
        w.write_all(&(self.entity_ids.len() as u64).to_le_bytes())
            .map_err(io_err)?;
        w.write_all(&(self.n_rows() as u64).to_le_bytes())
            .map_err(io_err)?;
        for id in &self.entity_ids {
            w.write_all(&(id.len() as u32).to_le_bytes())
                .map_err(io_err)?;
            w.write_all(id.as_bytes()).map_err(io_err)?;
        }
        for (i, &start) in self.entity_start.iter().enumerate().skip(1) {
            let prev = self.entity_start[i - 1];
            for _ in prev..start {
                w.write_all(&((i - 1) as u32).to_le_bytes())
                    .map_err(io_err)?;
            }
        }
        for &kind in &self.kinds {
            w.write_all(&[kind.as_u8()]).map_err(io_err)?;
        }
        for &x in &self.rows {
            w.write_all(&x.to_le_bytes()).map_err(io_err)?;
        }
        w.flush().map_err(io_err)
    }

    /// Loads and validates an index written by `save`.
    pub fn load(path: &Path) -> Result<KbIndex> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);

        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != INDEX_MAGIC {
            return Err(Error::ModelFormat("bad magic (not an index file)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != INDEX_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported index version {version}"
            )));
        }
        let dim = read_u32(&mut r)? as usize;
        if dim == 0 {
            return Err(Error::ModelFormat("dimension field is zero".into()));
        }
        let n_entities = read_u64(&mut r)? as usize;
        let n_rows = read_u64(&mut r)? as usize;

        let mut entity_ids = Vec::with_capacity(n_entities);
        for _ in 0..n_entities {
            let len = read_u32(&mut r)? as usize;
            if len > 1 << 20 {
                return Err(Error::ModelFormat(format!("implausible id length {len}")));
            }
            let mut buf = vec![0u8; len];
            read_exact(&mut r, &mut buf)?;
            let id = String::from_utf8(buf)
                .map_err(|_| Error::ModelFormat("entity id is not valid UTF-8".into()))?;
            entity_ids.push(id);
        }
        {
            let mut seen = HashSet::with_capacity(n_entities);
            for id in &entity_ids {
                if !seen.insert(id.as_str()) {
                    return Err(Error::ModelFormat(format!("duplicate entity id {id:?}")));
                }
            }
        }

        let mut entity_start = vec![0u32; n_entities + 1];
        let mut current = 0usize;
        for row in 0..n_rows {
            let e = read_u32(&mut r)? as usize;
            if e >= n_entities {
                return Err(Error::ModelFormat(format!(
                    "row {row} references entity index {e} out of range"
                )));
            }
            if e < current {
                return Err(Error::ModelFormat("rows are not grouped by entity".into()));
            }
            while current < e {
                current += 1;
                entity_start[current] = row as u32;
            }
        }
        while current < n_entities {
            current += 1;
            entity_start[current] = n_rows as u32;
        }

        let mut kinds = Vec::with_capacity(n_rows);
        for _ in 0..n_rows {
            let mut b = [0u8; 1];
            read_exact(&mut r, &mut b)?;
            kinds.push(VariantKind::from_u8(b[0])?);
        }

        let n_values = n_rows
            .checked_mul(dim)
            .ok_or_else(|| Error::ModelFormat("row count overflows".into()))?;
        let mut data = vec![0u8; n_values * 4];
        read_exact(&mut r, &mut data)?;
        let rows: Vec<f32> = data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if let Some(i) = rows.iter().position(|x| !x.is_finite()) {
            return Err(Error::ModelFormat(format!(
                "non-finite value in row {}",
                i / dim
            )));
        }
        let mut one = [0u8; 1];
        match r.read(&mut one) {
            Ok(0) => {}
            Ok(_) => return Err(Error::ModelFormat("trailing data after rows".into())),
            Err(e) => return Err(Error::ModelFormat(format!("read failed: {e}"))),
        }

        let id_rank = compute_id_rank(&entity_ids);
        Ok(KbIndex {
            dim,
            entity_ids,
            id_rank,
            entity_start,
            rows,
            kinds,
            dropped_rows: 0,
        })
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::ModelFormat("unexpected end of file (truncated?)".into())
        } else {
            Error::ModelFormat(format!("read failed: {e}"))
        }
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Scored entity with its tie-break key. Heap order is worst-first so the
/// top of a k-sized heap is the next candidate to evict.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Scored {
    score: f32,
    rank: u32,
    entity: u32,
}

impl Scored {
    fn beats(&self, other: &Scored) -> bool {
        match self.score.total_cmp(&other.score) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => self.rank < other.rank,
        }
    }
}

impl Eq for Scored {}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Worst-first: lower score (or, on ties, larger id rank) compares
        // greater, so a max-heap keeps its eviction candidate on top and an
        // ascending sort lists entries best-first.
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| self.rank.cmp(&other.rank))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

fn scan_entity_range(
    index: &KbIndex,
    query: &[f32],
    range: std::ops::Range<usize>,
    k: usize,
) -> Vec<Scored> {
    let mut heap: BinaryHeap<Scored> = BinaryHeap::with_capacity(k + 1);
    for e in range {
        let mut best: Option<f32> = None;
        for row in index.entity_rows(e as u32) {
            let d = dot32(query, row);
            best = Some(match best {
                Some(b) if b >= d => b,
                _ => d,
            });
        }
        let Some(score) = best else { continue };
        let cand = Scored {
            score,
            rank: index.id_rank(e as u32),
            entity: e as u32,
        };
        if heap.len() < k {
            heap.push(cand);
        } else if let Some(worst) = heap.peek() {
            if cand.beats(worst) {
                heap.pop();
                heap.push(cand);
            }
        }
    }
    let mut out = heap.into_vec();
    out.sort_by(|a, b| a.cmp(b));
    out
}

/// Exact top-k scan of the index for a unit-length query vector, returning
/// `(entity index, score)` best-first.
///
/// The entity range is partitioned into fixed chunks scanned independently
/// (in parallel when a thread pool is available) and merged in chunk order;
/// results are identical for any worker count.
pub fn retrieve_topk_query(index: &KbIndex, query: &[f32], k: usize) -> Result<Vec<(u32, f32)>> {
    if k == 0 {
        return Err(Error::InvalidArgument("top-k must be at least 1".into()));
    }
    if query.len() != index.dim() {
        return Err(Error::InvalidArgument(format!(
            "query has dimension {}, index has {}",
            query.len(),
            index.dim()
        )));
    }
    let n = index.n_entities();
    let n_chunks = n.div_ceil(ENTITY_CHUNK).max(1);
    let per_chunk: Vec<Vec<Scored>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let range = c * ENTITY_CHUNK..((c + 1) * ENTITY_CHUNK).min(n);
            scan_entity_range(index, query, range, k)
        })
        .collect();

    let mut merged: Vec<Scored> = per_chunk.into_iter().flatten().collect();
    merged.sort_by(|a, b| a.cmp(b));
    merged.truncate(k);
    Ok(merged.into_iter().map(|s| (s.entity, s.score)).collect())
}

/// Encodes a mention and normalizes it for the f32 index scan.
pub fn mention_query(model: &CharagramModel, mention: &str, dim: usize) -> Result<Vec<f32>> {
    let v = model.encode(mention)?;
    if v.len() != dim {
        return Err(Error::InvalidArgument(format!(
            "model dimension {} does not match index dimension {}",
            v.len(),
            dim
        )));
    }
    let norm = v.iter().map(|&x| x * x).sum::<f64>().sqrt();
    if !(norm > MIN_ROW_NORM) {
        return Err(Error::ZeroNorm(format!("embedding of mention {mention:?}")));
    }
    Ok(v.iter().map(|&x| (x / norm) as f32).collect())
}

/// Exact top-k candidates for a mention over the whole KB index.
pub fn retrieve_topk(
    model: &CharagramModel,
    index: &KbIndex,
    mention: &str,
    k: usize,
) -> Result<CandidateList> {
    let query = mention_query(model, mention, index.dim())?;
    let hits = retrieve_topk_query(index, &query, k)?;
    Ok(CandidateList {
        mention: mention.to_string(),
        items: hits
            .into_iter()
            .map(|(e, s)| Candidate {
                entity_id: index.entity_id(e).to_string(),
                score: s as f64,
            })
            .collect(),
    })
}

/// External per-surface candidate scores, keyed by exact mention surface.
pub type LookupScores = HashMap<String, Vec<(String, f64)>>;

/// Loads a lookup score table (`mention<TAB>entity_id<TAB>score`).
pub fn load_lookup_scores(path: &Path) -> Result<LookupScores> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut table: LookupScores = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        let lineno = i + 1;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 3 tab-separated columns, got {}", cols.len()),
            ));
        }
        let score: f64 = cols[2]
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad score {:?}", cols[2])))?;
        if !score.is_finite() {
            return Err(Error::parse(path, lineno, "non-finite score"));
        }
        let entry = table.entry(cols[0].to_string()).or_default();
        if entry.iter().any(|(id, _)| id == cols[1]) {
            return Err(Error::parse(
                path,
                lineno,
                format!("duplicate entity {:?} for mention {:?}", cols[1], cols[0]),
            ));
        }
        entry.push((cols[1].to_string(), score));
    }
    Ok(table)
}

/// Candidates for a mention from the external lookup table: the surface's
/// entries sorted by descending score, truncated to k; empty when absent.
pub fn lookup_generator(table: &LookupScores, mention: &str, k: usize) -> CandidateList {
    let items = table
        .get(mention)
        .map(|entries| {
            entries
                .iter()
                .map(|(id, s)| Candidate {
                    entity_id: id.clone(),
                    score: *s,
                })
                .collect::<Vec<_>>()
        })
        .unwrap_or_default();
    CandidateList::new(mention.to_string(), items)
        .expect("lookup table entries are validated at load")
        .truncated(k)
}

/// Softmax cap: the charagram list the merge formula normalizes over.
pub const MERGE_LIST_CAP: usize = 30;

/// Merges an external lookup list with a charagram list for the same mention:
/// the charagram scores are softmax-scaled with temperature beta over the
/// charagram top list, then combined as alpha * lookup + (1 - alpha) * softmax.
/// Entities absent from one list contribute 0 for that list's term.
pub fn merge_scores(
    lookup: &CandidateList,
    charagram: &CandidateList,
    alpha: f64,
    beta: f64,
    k: usize,
) -> Result<CandidateList> {
    if !(0.0..=1.0).contains(&alpha) || !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "beta must be positive, got {beta}"
        )));
    }
    if charagram.items.len() > MERGE_LIST_CAP {
        return Err(Error::InvalidArgument(format!(
            "charagram list has {} entries; the softmax domain is the top-{MERGE_LIST_CAP} list",
            charagram.items.len()
        )));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("top-k must be at least 1".into()));
    }
    for list in [lookup, charagram] {
        let mut seen = HashSet::with_capacity(list.items.len());
        for c in &list.items {
            if !seen.insert(c.entity_id.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate entity {:?} in input list",
                    c.entity_id
                )));
            }
            if !c.score.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "non-finite score for entity {:?}",
                    c.entity_id
                )));
            }
        }
    }
    let mention = match (lookup.mention.is_empty(), charagram.mention.is_empty()) {
        (false, false) if lookup.mention != charagram.mention => {
            return Err(Error::InvalidArgument(format!(
                "lists belong to different mentions: {:?} vs {:?}",
                lookup.mention, charagram.mention
            )));
        }
        (false, _) => lookup.mention.clone(),
        (true, _) => charagram.mention.clone(),
    };

    // Softmax over the charagram list, subtracting the max for stability.
    let mut softmax: HashMap<&str, f64> = HashMap::with_capacity(charagram.items.len());
    if !charagram.items.is_empty() {
        let max = charagram
            .items
            .iter()
            .map(|c| c.score)
            .fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = charagram
            .items
            .iter()
            .map(|c| (beta * (c.score - max)).exp())
            .collect();
        let total: f64 = exps.iter().sum();
        for (c, e) in charagram.items.iter().zip(exps) {
            softmax.insert(&c.entity_id, e / total);
        }
    }

    let mut merged: HashMap<&str, f64> = HashMap::new();
    for c in &lookup.items {
        *merged.entry(c.entity_id.as_str()).or_insert(0.0) += alpha * c.score;
    }
    for c in &charagram.items {
        *merged.entry(c.entity_id.as_str()).or_insert(0.0) +=
            (1.0 - alpha) * softmax[c.entity_id.as_str()];
    }

    let items: Vec<Candidate> = merged
        .into_iter()
        .map(|(id, score)| Candidate {
            entity_id: id.to_string(),
            score,
        })
        .collect();
    Ok(CandidateList::new(mention, items)?.truncated(k))
}

/// Writes candidate lists as `mention<TAB>rank<TAB>entity_id<TAB>score` rows.
pub fn write_candidates_tsv(path: &Path, lists: &[CandidateList]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for list in lists {
        for (i, c) in list.items.iter().enumerate() {
            writeln!(
                w,
                "{}\t{}\t{}\t{}",
                list.mention,
                i + 1,
                c.entity_id,
                c.score
            )
            .map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads candidate lists written by `write_candidates_tsv`. Rows for one
/// mention must be contiguous with ranks counting up from 1.
pub fn read_candidates_tsv(path: &Path) -> Result<Vec<CandidateList>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lists: Vec<CandidateList> = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        let lineno = i + 1;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 4 tab-separated columns, got {}", cols.len()),
            ));
        }
        let rank: usize = cols[1]
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad rank {:?}", cols[1])))?;
        let score: f64 = cols[3]
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad score {:?}", cols[3])))?;
        let is_continuation = lists
            .last()
            .map(|l| l.mention == cols[0] && l.items.len() + 1 == rank)
            .unwrap_or(false);
        if is_continuation {
            lists.last_mut().unwrap().items.push(Candidate {
                entity_id: cols[2].to_string(),
                score,
            });
        } else if rank == 1 {
            lists.push(CandidateList {
                mention: cols[0].to_string(),
                items: vec![Candidate {
                    entity_id: cols[2].to_string(),
                    score,
                }],
            });
        } else {
            return Err(Error::parse(
                path,
                lineno,
                format!("rank {rank} does not continue the current mention block"),
            ));
        }
    }
    Ok(lists)
}
