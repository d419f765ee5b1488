//! The character n-gram string encoder: an embedding lookup table summed over
//! a string's n-gram bag, a shared bias, and a tanh nonlinearity; plus the
//! model file format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kb::Kb;
use crate::ngram::{extract_ngrams, normalize_name, NgramVocabulary, Side};

const MODEL_MAGIC: &[u8; 8] = b"CHARAGRM";
const MODEL_VERSION: u32 = 1;
const EMB_MAGIC: &[u8; 8] = b"CHAREMB\0";
const EMB_VERSION: u32 = 1;

/// Half-width of the uniform parameter initialization interval.
pub const INIT_RANGE: f64 = 0.05;

/// A string's in-vocabulary n-gram bag, resolved to dense ids.
///
/// Entries are sorted by ascending id; summation in this fixed order makes
/// encoding bitwise reproducible.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CompiledBag {
    entries: Vec<(u32, f64)>,
}

impl CompiledBag {
    /// Builds a bag directly from `(vocabulary id, count)` entries.
    pub fn new(mut entries: Vec<(u32, f64)>) -> Result<CompiledBag> {
        entries.sort_unstable_by_key(|e| e.0);
        for pair in entries.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::InvalidArgument(format!(
                    "duplicate vocabulary id {} in bag",
                    pair[0].0
                )));
            }
        }
        if entries.iter().any(|&(_, c)| !(c > 0.0)) {
            return Err(Error::InvalidArgument("bag counts must be positive".into()));
        }
        Ok(CompiledBag { entries })
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// The trained encoder: vocabulary V, embedding table W (|V| x d), bias b.
#[derive(Debug, Clone, PartialEq)]
pub struct CharagramModel {
    vocab: NgramVocabulary,
    dim: usize,
    /// Row-major |V| x dim.
    embeddings: Vec<f64>,
    bias: Vec<f64>,
    lowercase: bool,
}

impl CharagramModel {
    /// Fresh model with parameters drawn uniformly from [-INIT_RANGE, INIT_RANGE].
    /// The embedding table is filled before the bias, in row order.
    pub fn new_random(
        vocab: NgramVocabulary,
        dim: usize,
        lowercase: bool,
        seed: u64,
    ) -> Result<CharagramModel> {
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "embedding dimension must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Uniform::new_inclusive(-INIT_RANGE, INIT_RANGE)
            .expect("constant init range is a valid interval");
        let embeddings = (0..vocab.len() * dim)
            .map(|_| dist.sample(&mut rng))
            .collect();
        let bias = (0..dim).map(|_| dist.sample(&mut rng)).collect();
        Ok(CharagramModel {
            vocab,
            dim,
            embeddings,
            bias,
            lowercase,
        })
    }

    /// Model with every parameter zero; encode of any string is the zero vector.
    pub fn new_zeroed(
        vocab: NgramVocabulary,
        dim: usize,
        lowercase: bool,
    ) -> Result<CharagramModel> {
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "embedding dimension must be positive".into(),
            ));
        }
        let embeddings = vec![0.0; vocab.len() * dim];
        let bias = vec![0.0; dim];
        Ok(CharagramModel {
            vocab,
            dim,
            embeddings,
            bias,
            lowercase,
        })
    }

    pub fn vocab(&self) -> &NgramVocabulary {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    pub fn row(&self, id: u32) -> &[f64] {
        &self.embeddings[id as usize * self.dim..(id as usize + 1) * self.dim]
    }

    pub fn row_mut(&mut self, id: u32) -> &mut [f64] {
        &mut self.embeddings[id as usize * self.dim..(id as usize + 1) * self.dim]
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn embeddings(&self) -> &[f64] {
        &self.embeddings
    }

    pub fn embeddings_mut(&mut self) -> &mut [f64] {
        &mut self.embeddings
    }

    /// Raw parameter snapshot (embeddings, bias), used for best-epoch bookkeeping.
    pub fn snapshot(&self) -> (Vec<f64>, Vec<f64>) {
        (self.embeddings.clone(), self.bias.clone())
    }

    /// Restores a snapshot taken from this same model shape.
    pub fn restore(&mut self, snapshot: &(Vec<f64>, Vec<f64>)) {
        assert_eq!(
            snapshot.0.len(),
            self.embeddings.len(),
            "snapshot shape mismatch"
        );
        assert_eq!(snapshot.1.len(), self.bias.len(), "snapshot shape mismatch");
        self.embeddings.copy_from_slice(&snapshot.0);
        self.bias.copy_from_slice(&snapshot.1);
    }

    /// Resolves a string to its in-vocabulary n-gram bag. Out-of-vocabulary
    /// n-grams are discarded; the result may be empty.
    pub fn compile(&self, s: &str) -> Result<CompiledBag> {
        let normalized = normalize_name(s, self.lowercase)?;
        if normalized.is_empty() {
            return Err(Error::InvalidArgument(
                "cannot encode an empty string".into(),
            ));
        }
        let bag = extract_ngrams(&normalized, self.vocab.windows())?;
        // The bag iterates in lexicographic n-gram order and ids are assigned
        // lexicographically, so the entries come out already sorted.
        let entries: Vec<(u32, f64)> = bag
            .iter()
            .filter_map(|(g, &c)| self.vocab.id(g).map(|id| (id, c as f64)))
            .collect();
        debug_assert!(entries.windows(2).all(|p| p[0].0 < p[1].0));
        Ok(CompiledBag { entries })
    }

    /// Pre-activation z = b + sum over the bag of count(g) * W[g], accumulated
    /// in ascending vocabulary-id order.
    pub fn preactivation_of_bag(&self, bag: &CompiledBag) -> Vec<f64> {
        let mut z = self.bias.clone();
        for &(id, count) in &bag.entries {
            let row = self.row(id);
            for (zj, wj) in z.iter_mut().zip(row) {
                *zj += count * wj;
            }
        }
        z
    }

    /// Embedding of a precompiled bag: tanh of the pre-activation.
    pub fn encode_bag(&self, bag: &CompiledBag) -> Vec<f64> {
        let mut v = self.preactivation_of_bag(bag);
        for x in &mut v {
            *x = x.tanh();
        }
        v
    }

    /// Embedding of a string: v = tanh(b + sum count(g) * W[g]).
    pub fn encode(&self, s: &str) -> Result<Vec<f64>> {
        Ok(self.encode_bag(&self.compile(s)?))
    }

    /// Errors when any parameter is NaN or infinite, naming the offending field.
    pub fn check_finite(&self) -> Result<()> {
        if let Some(i) = self.bias.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("bias[{i}]")));
        }
        if let Some(i) = self.embeddings.iter().position(|x| !x.is_finite()) {
            let row = i / self.dim;
            return Err(Error::NonFinite(format!(
                "embedding row {row} ({:?})",
                crate::ngram::display_ngram(self.vocab.ngram(row as u32))
            )));
        }
        Ok(())
    }

    /// Writes the model: self-describing header, vocabulary, then parameters
    /// as little-endian f64. Round-trips bit-exactly through `load`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io_err = |e: std::io::Error| Error::io(path, e);

        w.write_all(MODEL_MAGIC).map_err(io_err)?;
        w.write_all(&MODEL_VERSION.to_le_bytes()).map_err(io_err)?;
        w.write_all(&[self.lowercase as u8]).map_err(io_err)?;
        w.write_all(&(self.dim as u32).to_le_bytes())
            .map_err(io_err)?;
        let windows = self.vocab.windows();
        w.write_all(&(windows.len() as u32).to_le_bytes())
            .map_err(io_err)?;
        for &n in windows {
            w.write_all(&(n as u32).to_le_bytes()).map_err(io_err)?;
        }
        w.write_all(&(self.vocab.len() as u64).to_le_bytes())
            .map_err(io_err)?;
        for (ngram, side) in self.vocab.entries() {
            let bytes = ngram.as_bytes();
            w.write_all(&(bytes.len() as u32).to_le_bytes())
                .map_err(io_err)?;
            w.write_all(bytes).map_err(io_err)?;
            w.write_all(&[side.as_u8()]).map_err(io_err)?;
        }
        for &x in &self.bias {
            w.write_all(&x.to_le_bytes()).map_err(io_err)?;
        }
        for &x in &self.embeddings {
            w.write_all(&x.to_le_bytes()).map_err(io_err)?;
        }
        w.flush().map_err(io_err)
    }

    /// Loads and validates a model file; see `save` for the format.
    pub fn load(path: &Path) -> Result<CharagramModel> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = ByteReader::new(BufReader::new(file));

        let magic = r.bytes::<8>()?;
        if &magic != MODEL_MAGIC {
            return Err(Error::ModelFormat("bad magic (not a model file)".into()));
        }
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported model version {version} (expected {MODEL_VERSION})"
            )));
        }
        let lowercase = match r.u8()? {
            0 => false,
            1 => true,
            v => return Err(Error::ModelFormat(format!("invalid lowercase flag {v}"))),
        };
        let dim = r.u32()? as usize;
        if dim == 0 {
            return Err(Error::ModelFormat("dimension field is zero".into()));
        }
        let n_windows = r.u32()? as usize;
        let mut windows = Vec::with_capacity(n_windows);
        for _ in 0..n_windows {
            windows.push(r.u32()? as usize);
        }
        let vocab_len = r.u64()? as usize;
        let mut entries = Vec::with_capacity(vocab_len);
        for _ in 0..vocab_len {
            let len = r.u32()? as usize;
            let bytes = r.vec(len)?;
            let ngram = String::from_utf8(bytes)
                .map_err(|_| Error::ModelFormat("vocabulary entry is not valid UTF-8".into()))?;
            let side = Side::from_u8(r.u8()?)?;
            entries.push((ngram, side));
        }
        let vocab = NgramVocabulary::from_entries(entries, windows)?;

        let n_params = vocab_len
            .checked_mul(dim)
            .ok_or_else(|| Error::ModelFormat("parameter count overflows".into()))?;
        let mut bias = Vec::with_capacity(dim);
        for _ in 0..dim {
            bias.push(r.f64()?);
        }
        let mut embeddings = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            embeddings.push(r.f64()?);
        }
        r.expect_eof()?;

        let model = CharagramModel {
            vocab,
            dim,
            embeddings,
            bias,
            lowercase,
        };
        model
            .check_finite()
            .map_err(|e| Error::ModelFormat(e.to_string()))?;
        Ok(model)
    }
}

struct ByteReader<R: Read> {
    inner: R,
}

impl<R: Read> ByteReader<R> {
    fn new(inner: R) -> Self {
        ByteReader { inner }
    }

    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::ModelFormat("unexpected end of file (truncated?)".into())
            } else {
                Error::ModelFormat(format!("read failed: {e}"))
            }
        })?;
        Ok(buf)
    }

    fn vec(&mut self, len: usize) -> Result<Vec<u8>> {
        // Cap single-entry reads so a corrupt length field cannot trigger a
        // giant allocation.
        if len > 1 << 20 {
            return Err(Error::ModelFormat(format!(
                "implausible field length {len}"
            )));
        }
        let mut buf = vec![0u8; len];
        self.inner.read_exact(&mut buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::ModelFormat("unexpected end of file (truncated?)".into())
            } else {
                Error::ModelFormat(format!("read failed: {e}"))
            }
        })?;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn expect_eof(&mut self) -> Result<()> {
        let mut buf = [0u8; 1];
        match self.inner.read(&mut buf) {
            Ok(0) => Ok(()),
            Ok(_) => Err(Error::ModelFormat("trailing data after parameters".into())),
            Err(e) => Err(Error::ModelFormat(format!("read failed: {e}"))),
        }
    }
}

/// Which name variant of an entity an embedding row encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariantKind {
    Canonical,
    Alias,
    Hrl,
}

impl VariantKind {
    pub fn as_u8(self) -> u8 {
        match self {
            VariantKind::Canonical => 0,
            VariantKind::Alias => 1,
            VariantKind::Hrl => 2,
        }
    }

    pub fn from_u8(v: u8) -> Result<VariantKind> {
        match v {
            0 => Ok(VariantKind::Canonical),
            1 => Ok(VariantKind::Alias),
            2 => Ok(VariantKind::Hrl),
            _ => Err(Error::ModelFormat(format!("invalid variant kind {v}"))),
        }
    }
}

/// Side table entry: which entity and which of its name variants a row encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KbRowMeta {
    pub entity: u32,
    pub kind: VariantKind,
}

/// Which name variants to include when embedding a KB.
#[derive(Debug, Clone, Copy)]
pub struct KbEncodeOptions {
    pub include_aliases: bool,
    pub include_hrl: bool,
}

impl Default for KbEncodeOptions {
    fn default() -> Self {
        KbEncodeOptions {
            include_aliases: true,
            include_hrl: true,
        }
    }
}

/// Dense embeddings of every included KB name variant, one row per name,
/// grouped by entity in KB order (canonical, aliases, pivot counterpart).
#[derive(Debug, Clone)]
pub struct KbEmbeddings {
    pub dim: usize,
    /// Row-major n_rows x dim.
    pub rows: Vec<f64>,
    pub meta: Vec<KbRowMeta>,
}

impl KbEmbeddings {
    pub fn n_rows(&self) -> usize {
        self.meta.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }
}

/// Embeds every KB name variant with the given options. Entities are processed
/// independently, so the scan parallelizes without affecting the output.
pub fn encode_kb_with(
    model: &CharagramModel,
    kb: &Kb,
    options: KbEncodeOptions,
) -> Result<KbEmbeddings> {
    let per_entity: Vec<(Vec<f64>, Vec<KbRowMeta>)> = kb
        .entities()
        .par_iter()
        .enumerate()
        .map(|(idx, entity)| -> Result<(Vec<f64>, Vec<KbRowMeta>)> {
            let mut rows = Vec::new();
            let mut meta = Vec::new();
            let mut push = |kind: VariantKind, name: &str| -> Result<()> {
                rows.extend(model.encode(name)?);
                meta.push(KbRowMeta {
                    entity: idx as u32,
                    kind,
                });
                Ok(())
            };
            push(VariantKind::Canonical, &entity.canonical_name)?;
            if options.include_aliases {
                for alias in &entity.aliases {
                    push(VariantKind::Alias, alias)?;
                }
            }
            if options.include_hrl {
                if let Some(hrl) = &entity.hrl_name {
                    push(VariantKind::Hrl, hrl)?;
                }
            }
            Ok((rows, meta))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut meta = Vec::new();
    for (r, m) in per_entity {
        rows.extend(r);
        meta.extend(m);
    }
    Ok(KbEmbeddings {
        dim: model.dim(),
        rows,
        meta,
    })
}

/// Embeds every KB name variant: canonical names, aliases, and pivot counterparts.
pub fn encode_kb(model: &CharagramModel, kb: &Kb) -> Result<KbEmbeddings> {
    encode_kb_with(model, kb, KbEncodeOptions::default())
}

/// Writes a dense embedding matrix: header, then row-major little-endian f64.
pub fn write_embedding_matrix(path: &Path, dim: usize, rows: &[Vec<f64>]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path, e);

    w.write_all(EMB_MAGIC).map_err(io_err)?;
    w.write_all(&EMB_VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(dim as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(rows.len() as u64).to_le_bytes())
        .map_err(io_err)?;
    for row in rows {
        assert_eq!(row.len(), dim, "embedding row width mismatch");
        for &x in row {
            w.write_all(&x.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

/// Reads a matrix written by `write_embedding_matrix`.
pub fn read_embedding_matrix(path: &Path) -> Result<(usize, Vec<Vec<f64>>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = ByteReader::new(BufReader::new(file));
    let magic = r.bytes::<8>()?;
    if &magic != EMB_MAGIC {
        return Err(Error::ModelFormat(
            "bad magic (not an embedding file)".into(),
        ));
    }
    let version = r.u32()?;
    if version != EMB_VERSION {
        return Err(Error::ModelFormat(format!(
            "unsupported embedding file version {version}"
        )));
    }
    let dim = r.u32()? as usize;
    let n_rows = r.u64()? as usize;
    let mut rows = Vec::with_capacity(n_rows);
    for _ in 0..n_rows {
        let mut row = Vec::with_capacity(dim);
        for _ in 0..dim {
            row.push(r.f64()?);
        }
        rows.push(row);
    }
    r.expect_eof()?;
    Ok((dim, rows))
}
