//! Gold-candidate-recall evaluation and the n-gram nearest-neighbor
//! interpretability report.

use rayon::prelude::*;
use serde::Serialize;

use crate::encoder::CharagramModel;
use crate::error::{Error, Result};
use crate::kb::Mention;
use crate::ngram::Side;
use crate::retrieval::{cosine, CandidateList};

/// Gold candidate recall at k, with the three-way rank breakdown.
///
/// Mentions without a gold entity id are counted but not scored; the three
/// buckets partition the scored mentions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecallReport {
    pub top_k: usize,
    pub n_mentions_total: usize,
    pub n_mentions_scored: usize,
    pub n_hits: usize,
    /// n_hits / n_mentions_scored.
    pub recall: f64,
    pub in_top_1: usize,
    pub in_top_2_to_k: usize,
    pub not_in_top_k: usize,
}

/// Scores candidate lists against their mentions' gold entities. `mentions`
/// and `candidates` are parallel arrays; a mention is a hit when its gold id
/// appears in the top k of its list (lists may be shorter than k).
pub fn evaluate_recall(
    mentions: &[Mention],
    candidates: &[CandidateList],
    k: usize,
) -> Result<RecallReport> {
    if k == 0 {
        return Err(Error::InvalidArgument("top-k must be at least 1".into()));
    }
    if mentions.is_empty() {
        return Err(Error::InvalidArgument("no mentions to evaluate".into()));
    }
    if mentions.len() != candidates.len() {
        return Err(Error::InvalidArgument(format!(
            "{} mentions but {} candidate lists",
            mentions.len(),
            candidates.len()
        )));
    }

    let mut in_top_1 = 0usize;
    let mut in_top_2_to_k = 0usize;
    let mut not_in_top_k = 0usize;
    let mut scored = 0usize;
    for (mention, list) in mentions.iter().zip(candidates) {
        let Some(gold) = &mention.gold_entity_id else {
            continue;
        };
        scored += 1;
        match list.rank_of(gold) {
            Some(1) => in_top_1 += 1,
            Some(r) if r <= k => in_top_2_to_k += 1,
            _ => not_in_top_k += 1,
        }
    }
    if scored == 0 {
        return Err(Error::InvalidArgument(
            "no mention carries a gold entity id".into(),
        ));
    }
    let n_hits = in_top_1 + in_top_2_to_k;
    Ok(RecallReport {
        top_k: k,
        n_mentions_total: mentions.len(),
        n_mentions_scored: scored,
        n_hits,
        recall: n_hits as f64 / scored as f64,
        in_top_1,
        in_top_2_to_k,
        not_in_top_k,
    })
}

impl RecallReport {
    /// Renders the report as a two-column TSV block.
    pub fn to_tsv(&self) -> String {
        format!(
            "top_k\t{}\nmentions_total\t{}\nmentions_scored\t{}\nhits\t{}\nrecall\t{:.6}\nin_top_1\t{}\nin_top_2_to_k\t{}\nnot_in_top_k\t{}\n",
            self.top_k,
            self.n_mentions_total,
            self.n_mentions_scored,
            self.n_hits,
            self.recall,
            self.in_top_1,
            self.in_top_2_to_k,
            self.not_in_top_k
        )
    }
}

/// Neighbor search outcome for one query n-gram.
#[derive(Debug, Clone, PartialEq)]
pub enum NeighborOutcome {
    /// The query n-gram is not in the vocabulary.
    OutOfVocabulary,
    /// The query's embedding row has zero norm, so cosine is undefined.
    Degenerate,
    /// Nearest source-side n-grams, best first, as (n-gram, cosine).
    Ranked(Vec<(String, f64)>),
}

/// For each query n-gram (typically from the English side), the k nearest
/// source-side n-gram embedding rows by cosine, descending; ties break on the
/// n-gram string. A source row spelled exactly like the query is excluded.
pub fn ngram_neighbors(
    model: &CharagramModel,
    queries: &[String],
    k: usize,
) -> Result<Vec<(String, NeighborOutcome)>> {
    if k == 0 {
        return Err(Error::InvalidArgument(
            "neighbor count must be at least 1".into(),
        ));
    }
    let vocab = model.vocab();
    let source_ids: Vec<u32> = (0..vocab.len() as u32)
        .filter(|&id| vocab.side(id) == Side::Source)
        .collect();

    let results: Vec<(String, NeighborOutcome)> = queries
        .par_iter()
        .map(|query| {
            let Some(qid) = vocab.id(query) else {
                return (query.clone(), NeighborOutcome::OutOfVocabulary);
            };
            let qrow = model.row(qid);
            if qrow.iter().all(|&x| x == 0.0) {
                return (query.clone(), NeighborOutcome::Degenerate);
            }
            let mut scored: Vec<(f64, &str)> = Vec::with_capacity(source_ids.len());
            for &id in &source_ids {
                let ngram = vocab.ngram(id);
                if ngram == query {
                    continue;
                }
                match cosine(qrow, model.row(id)) {
                    Ok(c) => scored.push((c, ngram)),
                    // A zero-norm source row has no direction; leave it out.
                    Err(Error::ZeroNorm(_)) => continue,
                    Err(_) => unreachable!("rows of one model share a dimension"),
                }
            }
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
            scored.truncate(k);
            let ranked = scored
                .into_iter()
                .map(|(c, g)| (g.to_string(), c))
                .collect();
            (query.clone(), NeighborOutcome::Ranked(ranked))
        })
        .collect();
    Ok(results)
}
