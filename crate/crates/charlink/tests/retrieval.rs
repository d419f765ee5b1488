//! Cosine scoring, the KB index, exact top-k retrieval, and merge scoring.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use charlink::encoder::{CharagramModel, KbEncodeOptions};
use charlink::kb::{Kb, KbEntity};
use charlink::ngram::NgramVocabulary;
use charlink::retrieval::{
    cosine, dot32, load_lookup_scores, lookup_generator, merge_scores, read_candidates_tsv,
    retrieve_topk, retrieve_topk_query, write_candidates_tsv, Candidate, CandidateList, KbIndex,
    MERGE_LIST_CAP,
};

#[test]
fn cosine_matches_the_hand_example() {
    let c = cosine(&[1.0, 2.0, 3.0], &[-1.0, 0.0, 0.5]).unwrap();
    assert!((c - 0.119522860933439364).abs() < 1e-15, "c = {c}");
}

#[test]
fn cosine_rejects_degenerate_inputs_and_stays_bounded() {
    assert!(cosine(&[1.0], &[1.0, 2.0]).is_err());
    assert!(cosine(&[], &[]).is_err());
    assert!(cosine(&[0.0, 0.0], &[1.0, 2.0])
        .unwrap_err()
        .to_string()
        .contains("left"));
    assert!(cosine(&[1.0, 2.0], &[0.0, 0.0])
        .unwrap_err()
        .to_string()
        .contains("right"));

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..300 {
        let u: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
        let v: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
        if u.iter().all(|&x| x == 0.0) || v.iter().all(|&x| x == 0.0) {
            continue;
        }
        let c = cosine(&u, &v).unwrap();
        assert!((-1.0..=1.0).contains(&c));
        // Parallel vectors sit at the clamp boundary.
        let scaled: Vec<f64> = u.iter().map(|&x| 2.5 * x).collect();
        assert!(cosine(&u, &scaled).unwrap() > 1.0 - 1e-12);
    }
}

fn fixture_model(seed: u64) -> CharagramModel {
    let vocab = NgramVocabulary::build(
        ["мирный город", "северная гавань"],
        [
            "quiet harbor",
            "north city",
            "stone bridge",
            "old mill town",
        ],
        &[2, 3],
    )
    .unwrap();
    CharagramModel::new_random(vocab, 12, false, seed).unwrap()
}

fn entity(id: &str, name: &str, aliases: &[&str], hrl: Option<&str>) -> KbEntity {
    KbEntity {
        id: id.into(),
        canonical_name: name.into(),
        aliases: aliases.iter().map(|s| s.to_string()).collect(),
        hrl_name: hrl.map(|s| s.to_string()),
    }
}

/// Reference scorer: explicit max over the cosines of every name variant.
fn reference_score(model: &CharagramModel, mention: &str, e: &KbEntity) -> f64 {
    let vm = model.encode(mention).unwrap();
    e.name_set()
        .chain(e.hrl_name.as_deref())
        .filter_map(|name| {
            let ve = model.encode(name).unwrap();
            cosine(&vm, &ve).ok()
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn entity_score_is_the_max_over_name_variants() {
    use charlink::retrieval::score_entity;
    let model = fixture_model(3);
    let mention = "мирная гавань";
    let full = entity(
        "q1",
        "quiet harbor",
        &["north city", "stone bridge"],
        Some("северная гавань"),
    );
    let got = score_entity(&model, mention, &full).unwrap();
    assert_eq!(got, reference_score(&model, mention, &full));

    // The max is reached at one of the variants.
    let singles = [
        entity("q1", "quiet harbor", &[], None),
        entity("q1", "north city", &[], None),
        entity("q1", "stone bridge", &[], None),
        entity("q1", "северная гавань", &[], None),
    ];
    let best = singles
        .iter()
        .map(|e| score_entity(&model, mention, e).unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(got, best);
}

#[test]
fn adding_aliases_never_decreases_an_entity_score() {
    use charlink::retrieval::score_entity;
    let aliases = ["north city", "stone bridge", "old mill town"];
    for seed in 0..10u64 {
        let model = fixture_model(seed);
        let mention = "северный город";
        for n in 0..aliases.len() {
            let smaller = entity("q1", "quiet harbor", &aliases[..n], None);
            let larger = entity("q1", "quiet harbor", &aliases[..n + 1], None);
            let s = score_entity(&model, mention, &smaller).unwrap();
            let l = score_entity(&model, mention, &larger).unwrap();
            assert!(
                l >= s,
                "seed {seed}: alias {:?} lowered {s} to {l}",
                aliases[n]
            );
        }
    }
}

#[test]
fn removing_the_pivot_counterpart_never_increases_an_entity_score() {
    use charlink::retrieval::score_entity;
    for seed in 0..10u64 {
        let model = fixture_model(seed);
        let mention = "мирный берег";
        let with = entity("q1", "quiet harbor", &["north city"], Some("мирный город"));
        let without = entity("q1", "quiet harbor", &["north city"], None);
        let s_with = score_entity(&model, mention, &with).unwrap();
        let s_without = score_entity(&model, mention, &without).unwrap();
        assert!(s_without <= s_with, "seed {seed}: {s_without} > {s_with}");
    }
}

#[test]
fn a_pivot_counterpart_equal_to_the_mention_maxes_out_the_score() {
    use charlink::retrieval::score_entity;
    let model = fixture_model(5);
    let mention = "северная гавань";
    let e = entity("q1", "quiet harbor", &[], Some(mention));
    let s = score_entity(&model, mention, &e).unwrap();
    assert!(s > 1.0 - 1e-12, "s = {s}");
    // No other variant set can beat it.
    let rival = entity(
        "q2",
        "stone bridge",
        &["old mill town", "north city"],
        Some("мирный город"),
    );
    assert!(score_entity(&model, mention, &rival).unwrap() <= s);
}

#[test]
fn candidate_lists_rank_by_score_then_entity_id() {
    let items = vec![
        Candidate {
            entity_id: "q3".into(),
            score: 0.5,
        },
        Candidate {
            entity_id: "q1".into(),
            score: 0.9,
        },
        Candidate {
            entity_id: "q10".into(),
            score: 0.5,
        },
        Candidate {
            entity_id: "q2".into(),
            score: -0.2,
        },
    ];
    let list = CandidateList::new("m".into(), items).unwrap();
    let order: Vec<&str> = list.items.iter().map(|c| c.entity_id.as_str()).collect();
    // The 0.5 tie breaks lexicographically: "q10" < "q3".
    assert_eq!(order, ["q1", "q10", "q3", "q2"]);
    assert_eq!(list.rank_of("q3"), Some(3));
    assert_eq!(list.rank_of("zz"), None);
    assert_eq!(list.clone().truncated(2).items.len(), 2);
    assert_eq!(list.truncated(99).items.len(), 4);
}

#[test]
fn candidate_lists_reject_duplicates_and_non_finite_scores() {
    let dup = vec![
        Candidate {
            entity_id: "q1".into(),
            score: 0.5,
        },
        Candidate {
            entity_id: "q1".into(),
            score: 0.4,
        },
    ];
    assert!(CandidateList::new("m".into(), dup)
        .unwrap_err()
        .to_string()
        .contains("q1"));
    let nan = vec![Candidate {
        entity_id: "q1".into(),
        score: f64::NAN,
    }];
    assert!(CandidateList::new("m".into(), nan).is_err());
}

fn toy_kb() -> Kb {
    Kb::new(vec![
        entity(
            "q1",
            "quiet harbor",
            &["north city"],
            Some("северная гавань"),
        ),
        entity("q2", "stone bridge", &[], None),
        entity("q3", "old mill town", &[], Some("мирный город")),
    ])
    .unwrap()
}

#[test]
fn the_index_groups_rows_by_entity_and_counts_variants() {
    let model = fixture_model(7);
    let kb = toy_kb();
    let index = KbIndex::build(&model, &kb, KbEncodeOptions::default()).unwrap();
    assert_eq!(index.n_entities(), 3);
    assert_eq!(index.n_rows(), 3 + 1 + 2);
    assert_eq!(index.dropped_rows(), 0);
    assert_eq!(index.dim(), 12);
    assert_eq!(index.entity_ids(), ["q1", "q2", "q3"]);
    assert_eq!(index.entity_rows(0).count(), 3);
    assert_eq!(index.entity_rows(1).count(), 1);
    assert_eq!(index.entity_rows(2).count(), 2);
    // Every stored row is unit length in f32.
    for e in 0..3u32 {
        for row in index.entity_rows(e) {
            let norm: f64 = row.iter().map(|&x| x as f64 * x as f64).sum();
            assert!((norm - 1.0).abs() < 1e-6);
        }
    }

    let no_extras = KbIndex::build(
        &model,
        &kb,
        KbEncodeOptions {
            include_aliases: false,
            include_hrl: false,
        },
    )
    .unwrap();
    assert_eq!(no_extras.n_rows(), 3);
}

#[test]
fn degenerate_rows_are_dropped_but_the_entity_survives_when_another_remains() {
    // A zero bias makes fully out-of-vocabulary names encode to the zero
    // vector. "зола" shares no n-grams with the vocabulary.
    let mut model = fixture_model(9);
    model.bias_mut().fill(0.0);
    let kb = Kb::new(vec![
        entity("q1", "quiet harbor", &["зола"], None),
        entity("q2", "зола", &[], None),
    ])
    .unwrap();
    let index = KbIndex::build(&model, &kb, KbEncodeOptions::default()).unwrap();
    assert_eq!(index.dropped_rows(), 2);
    assert_eq!(index.n_rows(), 1);
    assert_eq!(index.entity_rows(0).count(), 1);
    assert_eq!(index.entity_rows(1).count(), 0);
    // q2 has no scorable variant left, so it cannot be retrieved.
    let hits = retrieve_topk(&model, &index, "мирный город", 5).unwrap();
    let ids: Vec<&str> = hits.items.iter().map(|c| c.entity_id.as_str()).collect();
    assert_eq!(ids, ["q1"]);
}

/// Brute-force reference scan sharing `dot32`, so scores agree bitwise.
fn naive_topk(index: &KbIndex, query: &[f32], k: usize) -> Vec<(u32, f32)> {
    let mut scored: Vec<(u32, f32)> = (0..index.n_entities() as u32)
        .filter_map(|e| {
            index
                .entity_rows(e)
                .map(|row| dot32(query, row))
                .fold(None, |acc: Option<f32>, d| {
                    Some(match acc {
                        Some(b) if b >= d => b,
                        _ => d,
                    })
                })
                .map(|s| (e, s))
        })
        .collect();
    scored.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| index.id_rank(a.0).cmp(&index.id_rank(b.0)))
    });
    scored.truncate(k);
    scored
}

fn random_unit_query(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|&x| x * x).sum::<f64>().sqrt();
        if norm > 1e-3 {
            return v.iter().map(|&x| (x / norm) as f32).collect();
        }
    }
}

#[test]
fn retrieval_matches_the_brute_force_scan_with_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let dim = 16;
    let n = 400;
    let mut rows: Vec<f32> = Vec::with_capacity(n * dim);
    for _ in 0..n {
        rows.extend(random_unit_query(dim, &mut rng));
    }
    // Duplicate some rows verbatim to force exact score ties; ids like "e10"
    // sort lexicographically, not numerically, which the tie-break must follow.
    for dup in 0..n / 20 {
        let src = dup * 7 % n;
        let dst = (dup * 13 + 3) % n;
        let (a, b) = (src.min(dst), src.max(dst));
        if a == b {
            continue;
        }
        let src_row: Vec<f32> = rows[a * dim..(a + 1) * dim].to_vec();
        rows[b * dim..(b + 1) * dim].copy_from_slice(&src_row);
    }
    let ids: Vec<String> = (0..n).map(|i| format!("e{i}")).collect();
    let index = KbIndex::from_raw_rows(dim, ids, rows).unwrap();

    for trial in 0..50 {
        let query = random_unit_query(dim, &mut rng);
        let k = 1 + trial % 40;
        let got = retrieve_topk_query(&index, &query, k).unwrap();
        let want = naive_topk(&index, &query, k);
        assert_eq!(got, want, "k = {k}");
    }

    // k beyond the entity count returns everything, still in order.
    let query = random_unit_query(dim, &mut rng);
    let all = retrieve_topk_query(&index, &query, n + 50).unwrap();
    assert_eq!(all.len(), n);
    assert_eq!(all, naive_topk(&index, &query, n + 50));
}

#[test]
fn retrieval_is_identical_for_any_worker_count_across_chunks() {
    // More entities than one scan chunk, so the merge path is exercised.
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let dim = 8;
    let n = 9000;
    let mut rows: Vec<f32> = Vec::with_capacity(n * dim);
    for _ in 0..n {
        rows.extend(random_unit_query(dim, &mut rng));
    }
    let ids: Vec<String> = (0..n).map(|i| format!("e{i}")).collect();
    let index = KbIndex::from_raw_rows(dim, ids, rows).unwrap();

    let query = random_unit_query(dim, &mut rng);
    let reference = naive_topk(&index, &query, 30);
    for workers in [1usize, 2, 4] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .unwrap();
        let got = pool.install(|| retrieve_topk_query(&index, &query, 30).unwrap());
        assert_eq!(got, reference, "workers = {workers}");
    }
}

#[test]
fn queries_are_validated_against_the_index() {
    let model = fixture_model(2);
    let kb = toy_kb();
    let index = KbIndex::build(&model, &kb, KbEncodeOptions::default()).unwrap();
    let query = vec![1.0f32; 12];
    assert!(retrieve_topk_query(&index, &query, 0).is_err());
    assert!(retrieve_topk_query(&index, &query[..5], 3).is_err());
    // A mention with no in-vocabulary n-grams and zero bias has no direction.
    let mut zeroed = fixture_model(2);
    zeroed.bias_mut().fill(0.0);
    let zero_index = KbIndex::build(&zeroed, &kb, KbEncodeOptions::default()).unwrap();
    assert!(retrieve_topk(&zeroed, &zero_index, "夜", 3).is_err());
}

#[test]
fn raw_row_construction_validates_shape_and_norms() {
    assert!(KbIndex::from_raw_rows(0, vec!["a".into()], vec![]).is_err());
    assert!(KbIndex::from_raw_rows(3, vec!["a".into()], vec![1.0; 5]).is_err());
    assert!(
        KbIndex::from_raw_rows(2, vec!["a".into(), "b".into()], vec![1.0, 0.0, 0.0, 0.0]).is_err()
    );
    let dup = KbIndex::from_embeddings(
        vec!["a".into(), "a".into()],
        &charlink::encoder::KbEmbeddings {
            dim: 1,
            rows: vec![1.0, 1.0],
            meta: vec![],
        },
    );
    assert!(dup.unwrap_err().to_string().contains("duplicate"));
}

#[test]
fn index_files_round_trip_and_reject_corruption() {
    let dir = TempDir::new().unwrap();
    let model = fixture_model(11);
    let kb = toy_kb();
    let index = KbIndex::build(&model, &kb, KbEncodeOptions::default()).unwrap();
    let path = dir.path().join("kb.idx");
    index.save(&path).unwrap();
    let loaded = KbIndex::load(&path).unwrap();
    assert_eq!(loaded.dim(), index.dim());
    assert_eq!(loaded.n_entities(), index.n_entities());
    assert_eq!(loaded.n_rows(), index.n_rows());
    assert_eq!(loaded.entity_ids(), index.entity_ids());

    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..10 {
        let q = random_unit_query(index.dim(), &mut rng);
        assert_eq!(
            retrieve_topk_query(&loaded, &q, 3).unwrap(),
            retrieve_topk_query(&index, &q, 3).unwrap()
        );
    }

    let bytes = std::fs::read(&path).unwrap();
    let bad_magic = dir.path().join("magic.idx");
    let mut flipped = bytes.clone();
    flipped[0] ^= 0xFF;
    std::fs::write(&bad_magic, flipped).unwrap();
    assert!(KbIndex::load(&bad_magic)
        .unwrap_err()
        .to_string()
        .contains("magic"));

    let truncated = dir.path().join("trunc.idx");
    std::fs::write(&truncated, &bytes[..bytes.len() - 3]).unwrap();
    assert!(KbIndex::load(&truncated)
        .unwrap_err()
        .to_string()
        .contains("truncated"));

    let trailing = dir.path().join("trail.idx");
    let mut extended = bytes;
    extended.push(7);
    std::fs::write(&trailing, extended).unwrap();
    assert!(KbIndex::load(&trailing)
        .unwrap_err()
        .to_string()
        .contains("trailing"));
}

fn list(mention: &str, scores: &[(&str, f64)]) -> CandidateList {
    CandidateList::new(
        mention.into(),
        scores
            .iter()
            .map(|&(id, s)| Candidate {
                entity_id: id.into(),
                score: s,
            })
            .collect(),
    )
    .unwrap()
}

#[test]
fn merge_matches_the_hand_example_at_sharp_temperature() {
    let charagram = list("m", &[("e1", 0.9), ("e2", 0.5), ("e3", 0.1)]);
    let lookup = list("m", &[("e2", 0.7), ("e4", 0.3)]);
    let merged = merge_scores(&lookup, &charagram, 0.6, 100.0, 30).unwrap();
    let score = |id: &str| {
        merged
            .items
            .iter()
            .find(|c| c.entity_id == id)
            .unwrap()
            .score
    };
    assert!((score("e1") - 0.3999999999999999983007).abs() < 1e-12);
    assert!((score("e2") - 0.4200000000000000016993).abs() < 1e-12);
    assert!((score("e3") - 7.219405551381660658578e-36).abs() < 1e-12);
    assert!((score("e4") - 0.18).abs() < 1e-12);
    let order: Vec<&str> = merged.items.iter().map(|c| c.entity_id.as_str()).collect();
    assert_eq!(order, ["e2", "e1", "e4", "e3"]);
}

#[test]
fn merge_matches_the_hand_example_at_soft_temperature() {
    let charagram = list("m", &[("e1", 0.9), ("e2", 0.5), ("e3", 0.1)]);
    let lookup = list("m", &[("e2", 0.7), ("e4", 0.3)]);
    let merged = merge_scores(&lookup, &charagram, 0.25, 2.0, 30).unwrap();
    let score = |id: &str| {
        merged
            .items
            .iter()
            .find(|c| c.entity_id == id)
            .unwrap()
            .score
    };
    assert!((score("e1") - 0.4542081067212991082479).abs() < 1e-12);
    assert!((score("e2") - 0.3790888580867257621535).abs() < 1e-12);
    assert!((score("e3") - 0.09170303519197512959861).abs() < 1e-12);
    assert!((score("e4") - 0.075).abs() < 1e-12);
}

#[test]
fn merge_extremes_reproduce_each_input_ranking() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..50 {
        let n_c = rng.random_range(1..=8);
        let n_l = rng.random_range(1..=8);
        let charagram = CandidateList::new(
            "m".into(),
            (0..n_c)
                .map(|i| Candidate {
                    entity_id: format!("c{i}"),
                    score: rng.random_range(-1.0..1.0),
                })
                .collect(),
        )
        .unwrap();
        let lookup = CandidateList::new(
            "m".into(),
            (0..n_l)
                .map(|i| Candidate {
                    entity_id: format!("l{i}"),
                    score: rng.random_range(0.05..1.0),
                })
                .collect(),
        )
        .unwrap();

        // alpha = 1: the lookup ranking comes through untouched; charagram-only
        // entities fall to zero.
        let pure_lookup = merge_scores(&lookup, &charagram, 1.0, 5.0, 30).unwrap();
        let got: Vec<&str> = pure_lookup
            .items
            .iter()
            .filter(|c| c.entity_id.starts_with('l'))
            .map(|c| c.entity_id.as_str())
            .collect();
        let want: Vec<&str> = lookup.items.iter().map(|c| c.entity_id.as_str()).collect();
        assert_eq!(got, want);
        assert!(pure_lookup
            .items
            .iter()
            .filter(|c| c.entity_id.starts_with('c'))
            .all(|c| c.score == 0.0));

        // alpha = 0: softmax is monotone, so the charagram ranking survives.
        let pure_charagram = merge_scores(&lookup, &charagram, 0.0, 5.0, 30).unwrap();
        let got: Vec<&str> = pure_charagram
            .items
            .iter()
            .filter(|c| c.entity_id.starts_with('c'))
            .map(|c| c.entity_id.as_str())
            .collect();
        let want: Vec<&str> = charagram
            .items
            .iter()
            .map(|c| c.entity_id.as_str())
            .collect();
        assert_eq!(got, want);
        assert!(pure_charagram
            .items
            .iter()
            .filter(|c| c.entity_id.starts_with('l'))
            .all(|c| c.score == 0.0));
    }
}

#[test]
fn merge_validates_its_inputs() {
    let charagram = list("m", &[("e1", 0.9)]);
    let lookup = list("m", &[("e2", 0.7)]);
    assert!(merge_scores(&lookup, &charagram, -0.1, 5.0, 30).is_err());
    assert!(merge_scores(&lookup, &charagram, 1.1, 5.0, 30).is_err());
    assert!(merge_scores(&lookup, &charagram, f64::NAN, 5.0, 30).is_err());
    assert!(merge_scores(&lookup, &charagram, 0.5, 0.0, 30).is_err());
    assert!(merge_scores(&lookup, &charagram, 0.5, -2.0, 30).is_err());
    assert!(merge_scores(&lookup, &charagram, 0.5, 5.0, 0).is_err());

    let other = list("other", &[("e1", 0.9)]);
    let err = merge_scores(&lookup, &other, 0.5, 5.0, 30).unwrap_err();
    assert!(err.to_string().contains("different mentions"));

    let oversized = CandidateList::new(
        "m".into(),
        (0..MERGE_LIST_CAP + 1)
            .map(|i| Candidate {
                entity_id: format!("e{i}"),
                score: i as f64 * 1e-3,
            })
            .collect(),
    )
    .unwrap();
    assert!(merge_scores(&lookup, &oversized, 0.5, 5.0, 30).is_err());

    // A mention name on either side is enough.
    let anonymous = list("", &[("e2", 0.7)]);
    let merged = merge_scores(&anonymous, &charagram, 0.5, 5.0, 30).unwrap();
    assert_eq!(merged.mention, "m");
}

#[test]
fn merge_truncates_to_k_after_ranking() {
    let charagram = list("m", &[("e1", 0.9), ("e2", 0.5), ("e3", 0.1)]);
    let lookup = list("m", &[("e4", 0.8), ("e5", 0.6)]);
    let merged = merge_scores(&lookup, &charagram, 0.5, 1.0, 2).unwrap();
    assert_eq!(merged.items.len(), 2);
    let full = merge_scores(&lookup, &charagram, 0.5, 1.0, 30).unwrap();
    assert_eq!(full.items[..2], merged.items[..]);
}

#[test]
fn lookup_tables_load_and_generate_ranked_candidates() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("lookup.tsv");
    std::fs::write(
        &path,
        "порт\tq2\t0.7\nпорт\tq1\t0.9\nгород\tq3\t0.4\nпорт\tq5\t0.9\n",
    )
    .unwrap();
    let table = load_lookup_scores(&path).unwrap();
    assert_eq!(table.len(), 2);

    let list = lookup_generator(&table, "порт", 30);
    let order: Vec<&str> = list.items.iter().map(|c| c.entity_id.as_str()).collect();
    // Ties (q1, q5 at 0.9) break by ascending entity id.
    assert_eq!(order, ["q1", "q5", "q2"]);
    assert_eq!(lookup_generator(&table, "порт", 2).items.len(), 2);

    let missing = lookup_generator(&table, "деревня", 30);
    assert!(missing.items.is_empty());
    assert_eq!(missing.mention, "деревня");
}

#[test]
fn lookup_tables_reject_malformed_rows() {
    let dir = TempDir::new().unwrap();
    let two_cols = dir.path().join("two.tsv");
    std::fs::write(&two_cols, "порт\tq2\n").unwrap();
    assert!(load_lookup_scores(&two_cols)
        .unwrap_err()
        .to_string()
        .contains("columns"));

    let bad_score = dir.path().join("score.tsv");
    std::fs::write(&bad_score, "порт\tq2\thigh\n").unwrap();
    assert!(load_lookup_scores(&bad_score)
        .unwrap_err()
        .to_string()
        .contains("score"));

    let non_finite = dir.path().join("inf.tsv");
    std::fs::write(&non_finite, "порт\tq2\tinf\n").unwrap();
    assert!(load_lookup_scores(&non_finite)
        .unwrap_err()
        .to_string()
        .contains("finite"));

    let dup = dir.path().join("dup.tsv");
    std::fs::write(&dup, "порт\tq2\t0.7\nпорт\tq2\t0.9\n").unwrap();
    let err = load_lookup_scores(&dup).unwrap_err().to_string();
    assert!(err.contains("q2") && err.contains(":2:"), "got: {err}");
}

#[test]
fn candidate_files_round_trip() {
    let dir = TempDir::new().unwrap();
    let lists = vec![
        list("порт", &[("q1", 0.9375), ("q2", -0.112233445566778899)]),
        list("город", &[("q3", 1.0 / 3.0)]),
    ];
    let path = dir.path().join("cands.tsv");
    write_candidates_tsv(&path, &lists).unwrap();
    let back = read_candidates_tsv(&path).unwrap();
    assert_eq!(back, lists);
}

#[test]
fn candidate_files_reject_broken_rank_sequences() {
    let dir = TempDir::new().unwrap();
    let gap = dir.path().join("gap.tsv");
    std::fs::write(&gap, "m\t1\tq1\t0.9\nm\t3\tq2\t0.5\n").unwrap();
    assert!(read_candidates_tsv(&gap)
        .unwrap_err()
        .to_string()
        .contains("rank 3"));

    let restart = dir.path().join("restart.tsv");
    std::fs::write(&restart, "m\t2\tq1\t0.9\n").unwrap();
    assert!(read_candidates_tsv(&restart).is_err());

    let cols = dir.path().join("cols.tsv");
    std::fs::write(&cols, "m\t1\tq1\n").unwrap();
    assert!(read_candidates_tsv(&cols)
        .unwrap_err()
        .to_string()
        .contains("columns"));

    let bad_rank = dir.path().join("badrank.tsv");
    std::fs::write(&bad_rank, "m\tfirst\tq1\t0.9\n").unwrap();
    assert!(read_candidates_tsv(&bad_rank)
        .unwrap_err()
        .to_string()
        .contains("rank"));
}

#[test]
fn interleaved_mention_blocks_are_separate_lists() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("cands.tsv");
    std::fs::write(&path, "a\t1\tq1\t0.9\nb\t1\tq2\t0.8\na\t1\tq3\t0.7\n").unwrap();
    let lists = read_candidates_tsv(&path).unwrap();
    assert_eq!(lists.len(), 3);
    let mentions: Vec<&str> = lists.iter().map(|l| l.mention.as_str()).collect();
    assert_eq!(mentions, ["a", "b", "a"]);
}

#[test]
fn retrieved_candidates_carry_unique_entities_in_ranked_order() {
    let model = fixture_model(29);
    let kb = toy_kb();
    let index = KbIndex::build(&model, &kb, KbEncodeOptions::default()).unwrap();
    let got = retrieve_topk(&model, &index, "мирный город", 30).unwrap();
    assert_eq!(got.mention, "мирный город");
    let ids: BTreeSet<&str> = got.items.iter().map(|c| c.entity_id.as_str()).collect();
    assert_eq!(ids.len(), got.items.len(), "entities must be unique");
    for pair in got.items.windows(2) {
        assert!(pair[0].score >= pair[1].score);
    }
    // The pivot counterpart "мирный город" belongs to q3; an exact surface
    // match dominates every competitor.
    assert_eq!(got.items[0].entity_id, "q3");
    assert!(got.items[0].score > 1.0 - 1e-6);
}
