//! Synthetic cipher benchmark data: an English-like KB whose "source-language"
//! mentions are a fixed character-substitution cipher into a disjoint
//! alphabet, with controlled noise. Learning the cipher from pair data is the
//! miniature version of the real transliteration problem, with a known answer.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kb::{Kb, KbEntity, Mention, Pair, PairDataset, PairKind};

/// English-side alphabet (20 letters).
pub const TARGET_ALPHABET: [char; 20] = [
    'a', 'b', 'c', 'd', 'e', 'f', 'g', 'h', 'i', 'j', 'k', 'l', 'm', 'n', 'o', 'p', 'q', 'r', 's',
    't',
];

/// Source-side alphabet: 20 Cyrillic letters, disjoint from the target side.
pub const SOURCE_ALPHABET: [char; 20] = [
    'б', 'в', 'г', 'д', 'ж', 'з', 'и', 'к', 'л', 'м', 'н', 'п', 'р', 'с', 'т', 'у', 'ф', 'х', 'ц',
    'ч',
];

/// Rotation used for the alias cipher within the target alphabet.
const ALIAS_ROTATION: usize = 7;

/// Maps a target-alphabet string into the source alphabet, letter by letter.
/// Spaces (and any character outside the alphabet) pass through unchanged.
pub fn cipher_to_source(name: &str) -> String {
    name.chars()
        .map(|c| match TARGET_ALPHABET.iter().position(|&t| t == c) {
            Some(i) => SOURCE_ALPHABET[i],
            None => c,
        })
        .collect()
}

/// Second cipher within the target alphabet (a fixed letter rotation); used to
/// derive alias spellings that share no letter mapping with the original name.
pub fn alias_cipher(name: &str) -> String {
    name.chars()
        .map(|c| match TARGET_ALPHABET.iter().position(|&t| t == c) {
            Some(i) => TARGET_ALPHABET[(i + ALIAS_ROTATION) % TARGET_ALPHABET.len()],
            None => c,
        })
        .collect()
}

/// Synthetic task shape.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub n_entities: usize,
    /// Fraction of entities that also get an alias (a second cipher of the name).
    pub alias_fraction: f64,
    /// Held-out mentions to generate.
    pub n_test: usize,
    /// Probability that a mention-entity training pair is perturbed. Combined
    /// with the clean entity-entity pairs this makes 20% of all training
    /// pairs noisy at the 0.4 default.
    pub perturb_train: f64,
    /// Probability that a held-out mention is perturbed.
    pub perturb_test: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_entities: 1000,
            alias_fraction: 0.1,
            n_test: 200,
            perturb_train: 0.4,
            perturb_test: 0.2,
            seed: 7,
        }
    }
}

/// Generated task data, in memory.
#[derive(Debug, Clone)]
pub struct SynthData {
    /// KB with aliases attached; no pivot-language names.
    pub kb: Kb,
    /// Clean ciphered canonical names, one per entity.
    pub ee: PairDataset,
    /// Ciphered names with a fraction perturbed, one per entity.
    pub me: PairDataset,
    /// Held-out mentions with gold ids.
    pub test: Vec<Mention>,
    /// Mentions derived from alias spellings (for the alias-effect comparison).
    pub alias_test: Vec<Mention>,
    /// Pivot-name assignments `(entity_id, hrl_name)`: each name is exactly
    /// the entity's held-out mention surface.
    pub hrl_map: Vec<(String, String)>,
}

fn random_word<R: Rng>(rng: &mut R) -> String {
    let len = rng.random_range(3..=8);
    (0..len)
        .map(|_| TARGET_ALPHABET[rng.random_range(0..TARGET_ALPHABET.len())])
        .collect()
}

fn random_name<R: Rng>(rng: &mut R) -> String {
    let words = rng.random_range(2..=3);
    let mut name = String::new();
    for i in 0..words {
        if i > 0 {
            name.push(' ');
        }
        name.push_str(&random_word(rng));
    }
    name
}

/// Damages a ciphered mention: drops a word when it has several, otherwise
/// prepends an extra token.
fn perturb<R: Rng>(s: &str, rng: &mut R) -> String {
    let words: Vec<&str> = s.split(' ').collect();
    if words.len() >= 2 && rng.random_bool(0.5) {
        let drop = rng.random_range(0..words.len());
        let kept: Vec<&str> = words
            .iter()
            .enumerate()
            .filter_map(|(i, w)| (i != drop).then_some(*w))
            .collect();
        kept.join(" ")
    } else {
        let extra: String = cipher_to_source(&random_word(rng));
        format!("{extra} {s}")
    }
}

/// Generates the full synthetic task, deterministic in `SynthSpec::seed`.
pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    if spec.n_entities < 2 {
        return Err(Error::InvalidArgument("need at least 2 entities".into()));
    }
    if spec.n_test > spec.n_entities {
        return Err(Error::InvalidArgument(
            "cannot hold out more mentions than entities".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut names: Vec<String> = Vec::with_capacity(spec.n_entities);
    let mut seen: HashSet<String> = HashSet::with_capacity(spec.n_entities);
    while names.len() < spec.n_entities {
        let name = random_name(&mut rng);
        if seen.insert(name.clone()) {
            names.push(name);
        }
    }

    let width = spec.n_entities.to_string().len();
    let mut entities: Vec<KbEntity> = names
        .iter()
        .enumerate()
        .map(|(i, name)| KbEntity {
            id: format!("e{:0width$}", i + 1),
            canonical_name: name.clone(),
            aliases: Vec::new(),
            hrl_name: None,
        })
        .collect();

    // Alias subset: a second spelling for a fraction of entities.
    let n_alias = (spec.n_entities as f64 * spec.alias_fraction).round() as usize;
    let mut alias_pool: Vec<usize> = (0..spec.n_entities).collect();
    alias_pool.shuffle(&mut rng);
    let mut alias_entities: Vec<usize> = alias_pool[..n_alias].to_vec();
    alias_entities.sort_unstable();
    for &i in &alias_entities {
        let alias = alias_cipher(&entities[i].canonical_name);
        entities[i].aliases.push(alias);
    }

    let ee = PairDataset {
        pairs: entities
            .iter()
            .map(|e| Pair {
                source: cipher_to_source(&e.canonical_name),
                entity_id: e.id.clone(),
                kind: PairKind::EntityEntity,
            })
            .collect(),
    };
    let me = PairDataset {
        pairs: entities
            .iter()
            .map(|e| {
                let clean = cipher_to_source(&e.canonical_name);
                let source = if rng.random_bool(spec.perturb_train) {
                    perturb(&clean, &mut rng)
                } else {
                    clean
                };
                Pair {
                    source,
                    entity_id: e.id.clone(),
                    kind: PairKind::MentionEntity,
                }
            })
            .collect(),
    };

    // Held-out mentions over a sample of entities.
    let mut test_pool: Vec<usize> = (0..spec.n_entities).collect();
    test_pool.shuffle(&mut rng);
    let mut test_entities: Vec<usize> = test_pool[..spec.n_test].to_vec();
    test_entities.sort_unstable();
    let test: Vec<Mention> = test_entities
        .iter()
        .map(|&i| {
            let clean = cipher_to_source(&entities[i].canonical_name);
            let surface = if rng.random_bool(spec.perturb_test) {
                perturb(&clean, &mut rng)
            } else {
                clean
            };
            Mention {
                surface,
                gold_entity_id: Some(entities[i].id.clone()),
                label: None,
            }
        })
        .collect();

    // Mentions spelled from the alias: ciphering the alias, not the name.
    let alias_test: Vec<Mention> = alias_entities
        .iter()
        .map(|&i| Mention {
            surface: cipher_to_source(&entities[i].aliases[0]),
            gold_entity_id: Some(entities[i].id.clone()),
            label: None,
        })
        .collect();

    // Pivot counterparts for half of the held-out subset: the counterpart IS
    // the mention surface, so the pivot branch of the scorer sees an exact match.
    let hrl_map: Vec<(String, String)> = test_entities
        .iter()
        .zip(&test)
        .take(spec.n_test / 2)
        .map(|(&i, m)| (entities[i].id.clone(), m.surface.clone()))
        .collect();

    Ok(SynthData {
        kb: Kb::new(entities)?,
        ee,
        me,
        test,
        alias_test,
        hrl_map,
    })
}

fn write_pairs(path: &Path, pairs: &PairDataset) -> Result<()> {
    let mut out = String::new();
    for p in &pairs.pairs {
        out.push_str(&p.source);
        out.push('\t');
        out.push_str(&p.entity_id);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn write_mentions(path: &Path, mentions: &[Mention]) -> Result<()> {
    let mut out = String::new();
    for m in mentions {
        out.push_str(&m.surface);
        if let Some(gold) = &m.gold_entity_id {
            out.push('\t');
            out.push_str(gold);
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes the dataset as the TSV files the CLI consumes: `kb.tsv`,
/// `aliases.tsv`, `ee.tsv`, `me.tsv`, `mentions.tsv`, `alias_mentions.tsv`,
/// and `hrl.tsv`.
pub fn write_dataset(data: &SynthData, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    data.kb
        .save(&dir.join("kb.tsv"), Some(&dir.join("aliases.tsv")))?;
    write_pairs(&dir.join("ee.tsv"), &data.ee)?;
    write_pairs(&dir.join("me.tsv"), &data.me)?;
    write_mentions(&dir.join("mentions.tsv"), &data.test)?;
    write_mentions(&dir.join("alias_mentions.tsv"), &data.alias_test)?;
    let hrl_path = dir.join("hrl.tsv");
    let mut out = String::new();
    for (id, hrl) in &data.hrl_map {
        out.push_str(id);
        out.push('\t');
        out.push_str(hrl);
        out.push('\n');
    }
    std::fs::write(&hrl_path, out).map_err(|e| Error::io(&hrl_path, e))
}
