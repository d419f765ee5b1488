//! Command-line surface: pivot selection, training, encoding, indexing,
//! retrieval, score merging, evaluation, neighbor inspection, and the
//! config-driven end-to-end run.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use charlink::encoder::{write_embedding_matrix, CharagramModel, KbEncodeOptions};
use charlink::error::{Error, Result};
use charlink::eval::{evaluate_recall, ngram_neighbors, NeighborOutcome};
use charlink::kb::{load_kb, load_mentions_raw, load_pairs, split_dev, PairDataset, PairKind};
use charlink::ngram::{
    display_ngram, parse_ngram, rank_pivots, HrlCandidate, DEFAULT_RECALL_THRESHOLD,
};
use charlink::retrieval::{
    load_lookup_scores, lookup_generator, merge_scores, read_candidates_tsv, retrieve_topk,
    write_candidates_tsv, CandidateList, KbIndex,
};
use charlink::trainer::{train, TrainConfig};
use charlink::{pipeline, synth};

#[derive(Parser)]
#[command(
    name = "charlink",
    about = "Candidate generation for cross-lingual entity linking with character n-gram embeddings",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rank pivot-language candidates by n-gram overlap with an LRL corpus
    SelectPivot(SelectPivotArgs),
    /// Train the character n-gram encoder on string-entity pairs
    Train(TrainArgs),
    /// Embed strings with a trained encoder into a binary matrix file
    Encode(EncodeArgs),
    /// Encode a KB into a searchable index of entity name embeddings
    BuildIndex(BuildIndexArgs),
    /// Retrieve the top-k KB entities for each mention
    Retrieve(RetrieveArgs),
    /// Merge external lookup scores with retrieval scores
    Merge(MergeArgs),
    /// Score candidate lists against gold entities
    Evaluate(EvaluateArgs),
    /// Show nearest source-side n-grams for query n-grams
    Neighbors(NeighborsArgs),
    /// Run the full pipeline from a config file
    Run(RunArgs),
    /// Generate a deterministic synthetic cipher dataset
    SynthData(SynthDataArgs),
}

#[derive(Args)]
struct SelectPivotArgs {
    /// Corpus of LRL strings, one per line
    #[arg(long, value_name = "PATH")]
    lrl_corpus: PathBuf,
    /// Pivot candidate as NAME=CORPUS_PATH[:RECALL]; repeatable
    #[arg(long, value_name = "NAME=PATH[:RECALL]", required = true)]
    candidate: Vec<String>,
    /// Minimum dev recall a candidate must reach to stay eligible
    #[arg(long, default_value_t = DEFAULT_RECALL_THRESHOLD)]
    threshold: f64,
    /// n-gram window sizes
    #[arg(long, value_delimiter = ',', default_values_t = vec![2usize, 3, 4, 5])]
    windows: Vec<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// KB file (`entity_id<TAB>canonical_name[<TAB>hrl_name]`)
    #[arg(long, value_name = "PATH")]
    kb: PathBuf,
    /// Alias file (`entity_id<TAB>alias`)
    #[arg(long, value_name = "PATH")]
    aliases: Option<PathBuf>,
    /// Pivot-name file (`entity_id<TAB>hrl_name`)
    #[arg(long, value_name = "PATH")]
    hrl_map: Option<PathBuf>,
    /// Entity-entity pairs (`source_name<TAB>entity_id`)
    #[arg(long, value_name = "PATH")]
    train_ee: Option<PathBuf>,
    /// Mention-entity pairs (`mention<TAB>entity_id`)
    #[arg(long, value_name = "PATH")]
    train_me: Option<PathBuf>,
    /// Fraction of pairs held out for early stopping
    #[arg(long, default_value_t = 0.05)]
    dev_fraction: f64,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    /// Negative samples per pair
    #[arg(long, default_value_t = 32)]
    negatives: usize,
    #[arg(long, default_value_t = 1.0)]
    margin: f64,
    /// Epochs without dev-recall improvement before stopping
    #[arg(long, default_value_t = 50)]
    patience: usize,
    #[arg(long, default_value_t = 200)]
    max_epochs: usize,
    /// Candidate-list size used for dev recall
    #[arg(long, default_value_t = 30)]
    top_k: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Embedding dimensionality
    #[arg(long, default_value_t = 300)]
    dim: usize,
    /// n-gram window sizes
    #[arg(long, value_delimiter = ',', default_values_t = vec![2usize, 3, 4, 5])]
    windows: Vec<usize>,
    /// Lowercase strings before n-gram extraction
    #[arg(long)]
    lowercase: bool,
    /// Output model path; a JSON summary lands next to it
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    /// Strings to embed, first tab-separated column of each line
    #[arg(long, value_name = "PATH")]
    input: PathBuf,
    /// Binary output: header plus row-major little-endian reals
    #[arg(long, value_name = "PATH")]
    output: PathBuf,
}

#[derive(Args)]
struct BuildIndexArgs {
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    #[arg(long, value_name = "PATH")]
    kb: PathBuf,
    #[arg(long, value_name = "PATH")]
    aliases: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    hrl_map: Option<PathBuf>,
    /// Index canonical names only, skipping aliases
    #[arg(long)]
    no_aliases: bool,
    /// Skip pivot-language names even when the KB has them
    #[arg(long)]
    no_hrl: bool,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    #[arg(long, value_name = "PATH")]
    kb_index: PathBuf,
    /// Mention file (`surface[<TAB>gold_entity_id]`)
    #[arg(long, value_name = "PATH")]
    mentions: PathBuf,
    #[arg(long, default_value_t = 30)]
    top_k: usize,
    /// Output candidates TSV (`mention<TAB>rank<TAB>entity_id<TAB>score`)
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

#[derive(Args)]
struct MergeArgs {
    /// Lookup scores (`mention<TAB>entity_id<TAB>score`)
    #[arg(long, value_name = "PATH")]
    lookup: PathBuf,
    /// Candidates TSV from `retrieve`
    #[arg(long, value_name = "PATH")]
    charagram: PathBuf,
    /// Weight on the lookup score; retrieval gets 1 - alpha
    #[arg(long, default_value_t = 0.6)]
    alpha: f64,
    /// Softmax sharpness applied to retrieval scores
    #[arg(long, default_value_t = 100.0)]
    beta: f64,
    #[arg(long, default_value_t = 30)]
    top_k: usize,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Candidates TSV from `retrieve` or `merge`
    #[arg(long, value_name = "PATH")]
    candidates: PathBuf,
    /// Mention file with gold ids
    #[arg(long, value_name = "PATH")]
    mentions: PathBuf,
    #[arg(long, default_value_t = 30)]
    top_k: usize,
    /// Also write the report as JSON
    #[arg(long, value_name = "PATH")]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct NeighborsArgs {
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    /// Query n-grams, one per line, boundaries written as <s> and </s>
    #[arg(long, value_name = "PATH")]
    queries: PathBuf,
    #[arg(long, default_value_t = 5)]
    k: usize,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
}

#[derive(Args)]
struct SynthDataArgs {
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 1000)]
    entities: usize,
    /// Fraction of entities that also get an alias spelling
    #[arg(long, default_value_t = 0.1)]
    alias_fraction: f64,
    /// Held-out test mentions
    #[arg(long, default_value_t = 200)]
    n_test: usize,
    /// Probability a mention-entity training pair is perturbed
    #[arg(long, default_value_t = 0.4)]
    perturb_train: f64,
    /// Probability a held-out mention is perturbed
    #[arg(long, default_value_t = 0.2)]
    perturb_test: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::SelectPivot(args) => cmd_select_pivot(args),
        Command::Train(args) => cmd_train(args),
        Command::Encode(args) => cmd_encode(args),
        Command::BuildIndex(args) => cmd_build_index(args),
        Command::Retrieve(args) => cmd_retrieve(args),
        Command::Merge(args) => cmd_merge(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Neighbors(args) => cmd_neighbors(args),
        Command::Run(args) => cmd_run(args),
        Command::SynthData(args) => cmd_synth_data(args),
    }
}

/// Reads the non-empty lines of a text file.
fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

/// Parses `NAME=CORPUS_PATH[:RECALL]`. The recall suffix is recognized only
/// when the part after the last colon parses as a number, so plain paths may
/// still contain colons.
fn parse_candidate_spec(spec: &str) -> Result<(String, PathBuf, Option<f64>)> {
    let (name, rest) = spec.split_once('=').ok_or_else(|| {
        Error::InvalidArgument(format!("candidate {spec:?} is not NAME=PATH[:RECALL]"))
    })?;
    if name.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "candidate {spec:?} has an empty name"
        )));
    }
    if let Some((path, recall)) = rest.rsplit_once(':') {
        if let Ok(r) = recall.parse::<f64>() {
            return Ok((name.to_string(), PathBuf::from(path), Some(r)));
        }
    }
    Ok((name.to_string(), PathBuf::from(rest), None))
}

fn cmd_select_pivot(args: SelectPivotArgs) -> Result<()> {
    let lrl = read_lines(&args.lrl_corpus)?;
    let mut candidates = Vec::with_capacity(args.candidate.len());
    for spec in &args.candidate {
        let (name, path, dev_recall) = parse_candidate_spec(spec)?;
        candidates.push(HrlCandidate {
            name,
            corpus: read_lines(&path)?,
            dev_recall,
        });
    }
    let ranking = rank_pivots(&lrl, &candidates, args.threshold, &args.windows)?;
    println!("name\toverlap\teligible");
    for row in &ranking {
        println!("{}\t{:.6}\t{}", row.name, row.overlap, row.eligible);
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    if args.train_ee.is_none() && args.train_me.is_none() {
        return Err(Error::InvalidArgument(
            "at least one of --train-ee / --train-me is required".into(),
        ));
    }
    let kb = load_kb(&args.kb, args.aliases.as_deref(), args.hrl_map.as_deref())?;
    let mut pool = PairDataset::default();
    let mut dropped = 0usize;
    if let Some(p) = &args.train_ee {
        let (ds, d) = load_pairs(p, &kb, PairKind::EntityEntity)?;
        dropped += d;
        pool.extend(ds);
    }
    if let Some(p) = &args.train_me {
        let (ds, d) = load_pairs(p, &kb, PairKind::MentionEntity)?;
        dropped += d;
        pool.extend(ds);
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} pairs whose entity is not in the KB");
    }
    let vocab = pipeline::vocabulary_for(&kb, &pool, &args.windows)?;
    let (train_set, dev_set) = split_dev(&pool, args.dev_fraction, args.seed)?;
    let mut model = CharagramModel::new_random(vocab, args.dim, args.lowercase, args.seed)?;
    let cfg = TrainConfig {
        batch_size: args.batch_size,
        learning_rate: args.lr,
        negatives: args.negatives,
        margin: args.margin,
        patience: args.patience,
        max_epochs: args.max_epochs,
        top_k: args.top_k,
        seed: args.seed,
    };
    let report = train(&mut model, &train_set, &dev_set, &kb, &cfg)?;
    model.save(&args.out)?;
    print!("{}", pipeline::train_report_tsv(&report));
    let summary = serde_json::json!({
        "config": &cfg,
        "best_epoch": report.best_epoch,
        "best_dev_recall": report.best_dev_recall,
        "stop_reason": report.stop_reason,
        "epochs_run": report.epochs.len(),
        "skipped_pairs": report.skipped_pairs,
        "model": args.out.file_name().and_then(|n| n.to_str()),
    });
    let summary_path = args.out.with_extension("summary.json");
    let text = serde_json::to_string_pretty(&summary).expect("summary serialization cannot fail");
    std::fs::write(&summary_path, text + "\n").map_err(|e| Error::io(&summary_path, e))?;
    Ok(())
}

fn cmd_encode(args: EncodeArgs) -> Result<()> {
    let model = CharagramModel::load(&args.model)?;
    let text = std::fs::read_to_string(&args.input).map_err(|e| Error::io(&args.input, e))?;
    let mut rows = Vec::new();
    for line in text.lines() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            continue;
        }
        let s = line.split('\t').next().unwrap_or(line);
        rows.push(model.encode(s)?);
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no strings to encode in {}",
            args.input.display()
        )));
    }
    write_embedding_matrix(&args.output, model.dim(), &rows)
}

fn cmd_build_index(args: BuildIndexArgs) -> Result<()> {
    let model = CharagramModel::load(&args.model)?;
    let kb = load_kb(&args.kb, args.aliases.as_deref(), args.hrl_map.as_deref())?;
    let options = KbEncodeOptions {
        include_aliases: !args.no_aliases,
        include_hrl: !args.no_hrl,
    };
    let index = KbIndex::build(&model, &kb, options)?;
    if index.dropped_rows() > 0 {
        log::warn!(
            "{} KB name embeddings had zero norm and were left out of the index",
            index.dropped_rows()
        );
    }
    index.save(&args.out)
}

fn cmd_retrieve(args: RetrieveArgs) -> Result<()> {
    let model = CharagramModel::load(&args.model)?;
    let index = KbIndex::load(&args.kb_index)?;
    let mentions = load_mentions_raw(&args.mentions)?;
    let lists: Vec<CandidateList> = mentions
        .iter()
        .map(|m| retrieve_topk(&model, &index, &m.surface, args.top_k))
        .collect::<Result<_>>()?;
    write_candidates_tsv(&args.out, &lists)
}

fn cmd_merge(args: MergeArgs) -> Result<()> {
    let table = load_lookup_scores(&args.lookup)?;
    let charagram = read_candidates_tsv(&args.charagram)?;
    let mut merged = Vec::with_capacity(charagram.len());
    for list in &charagram {
        let lookup = lookup_generator(&table, &list.mention, args.top_k);
        merged.push(merge_scores(
            &lookup, list, args.alpha, args.beta, args.top_k,
        )?);
    }
    write_candidates_tsv(&args.out, &merged)
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let mentions = load_mentions_raw(&args.mentions)?;
    let lists = read_candidates_tsv(&args.candidates)?;
    // The candidates file holds one block per mention that produced rows;
    // align it to the mention file by surface, with empty lists for mentions
    // that produced none.
    let by_mention: HashMap<&str, &CandidateList> =
        lists.iter().map(|l| (l.mention.as_str(), l)).collect();
    let aligned: Vec<CandidateList> = mentions
        .iter()
        .map(|m| match by_mention.get(m.surface.as_str()) {
            Some(l) => Ok((*l).clone()),
            None => CandidateList::new(m.surface.clone(), Vec::new()),
        })
        .collect::<Result<_>>()?;
    let report = evaluate_recall(&mentions, &aligned, args.top_k)?;
    print!("{}", report.to_tsv());
    if let Some(json_path) = &args.json {
        let text = serde_json::to_string_pretty(&report).expect("report serialization cannot fail");
        std::fs::write(json_path, text + "\n").map_err(|e| Error::io(json_path, e))?;
    }
    Ok(())
}

fn cmd_neighbors(args: NeighborsArgs) -> Result<()> {
    let model = CharagramModel::load(&args.model)?;
    let queries: Vec<String> = read_lines(&args.queries)?
        .iter()
        .map(|l| parse_ngram(l))
        .collect();
    if queries.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no query n-grams in {}",
            args.queries.display()
        )));
    }
    let results = ngram_neighbors(&model, &queries, args.k)?;
    println!("query\trank\tneighbor\tcosine");
    for (query, outcome) in &results {
        match outcome {
            NeighborOutcome::OutOfVocabulary => {
                log::warn!("query {:?} is not in the vocabulary", display_ngram(query));
            }
            NeighborOutcome::Degenerate => {
                log::warn!("query {:?} has a zero-norm embedding", display_ngram(query));
            }
            NeighborOutcome::Ranked(neighbors) => {
                for (i, (neighbor, cosine)) in neighbors.iter().enumerate() {
                    println!(
                        "{}\t{}\t{}\t{:.6}",
                        display_ngram(query),
                        i + 1,
                        display_ngram(neighbor),
                        cosine
                    );
                }
            }
        }
    }
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let outcome = pipeline::run(&args.config)?;
    let stats = &outcome.manifest.stats;
    println!(
        "trained {} epochs, best dev recall {:.4} at epoch {}",
        outcome.report.epochs.len(),
        stats.best_dev_recall,
        stats.best_epoch
    );
    if let Some(recall) = stats.test_recall {
        println!("test recall: {recall:.4}");
    }
    println!(
        "artifacts in {}",
        outcome.manifest.config.output.dir.display()
    );
    Ok(())
}

fn cmd_synth_data(args: SynthDataArgs) -> Result<()> {
    let spec = synth::SynthSpec {
        n_entities: args.entities,
        alias_fraction: args.alias_fraction,
        n_test: args.n_test,
        perturb_train: args.perturb_train,
        perturb_test: args.perturb_test,
        seed: args.seed,
    };
    let data = synth::generate(&spec)?;
    synth::write_dataset(&data, &args.out_dir)?;

    // A ready-to-run config sized for a quick demonstration run.
    let config = pipeline::RunConfig {
        data: pipeline::DataSection {
            kb: "kb.tsv".into(),
            aliases: Some("aliases.tsv".into()),
            hrl_map: Some("hrl.tsv".into()),
            train_ee: Some("ee.tsv".into()),
            train_me: Some("me.tsv".into()),
            test_mentions: Some("mentions.tsv".into()),
        },
        model: pipeline::ModelSection {
            dim: 64,
            windows: vec![2, 3, 4, 5],
            lowercase: false,
        },
        train: pipeline::TrainSection {
            patience: 10,
            max_epochs: 40,
            seed: args.seed,
            ..Default::default()
        },
        output: pipeline::OutputSection {
            dir: "run_out".into(),
        },
    };
    let toml_path = args.out_dir.join("run.toml");
    let text = toml::to_string_pretty(&config)
        .map_err(|e| Error::InvalidArgument(format!("config serialization failed: {e}")))?;
    std::fs::write(&toml_path, text).map_err(|e| Error::io(&toml_path, e))?;
    println!("wrote dataset and run.toml to {}", args.out_dir.display());
    Ok(())
}
