//! N-gram extraction, vocabulary, and pivot-selection behavior.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use charlink::ngram::{
    corpus_ngram_types, display_ngram, extract_ngrams, ngram_overlap, normalize_name, parse_ngram,
    rank_pivots, select_pivot, validate_windows, HrlCandidate, NgramBag, NgramVocabulary, Side,
    BOUNDARY_END, BOUNDARY_START,
};

fn bag(entries: &[(&str, u32)]) -> NgramBag {
    entries.iter().map(|(g, c)| (parse_ngram(g), *c)).collect()
}

#[test]
fn extracts_ab_with_windows_2_3() {
    let got = extract_ngrams("ab", &[2, 3]).unwrap();
    let want = bag(&[
        ("<s>a", 1),
        ("ab", 1),
        ("b</s>", 1),
        ("<s>ab", 1),
        ("ab</s>", 1),
    ]);
    assert_eq!(got, want);
}

#[test]
fn extracts_aaa_with_repeated_bigram() {
    let got = extract_ngrams("aaa", &[2, 3]).unwrap();
    let want = bag(&[
        ("<s>a", 1),
        ("aa", 2),
        ("a</s>", 1),
        ("<s>aa", 1),
        ("aaa", 1),
        ("aa</s>", 1),
    ]);
    assert_eq!(got, want);
}

#[test]
fn token_count_of_ab_over_default_windows_is_six() {
    let got = extract_ngrams("ab", &[2, 3, 4, 5]).unwrap();
    let total: u32 = got.values().sum();
    // Wrapped length 4: 3 bigrams + 2 trigrams + 1 four-gram + 0 five-grams.
    assert_eq!(total, 6);
}

#[test]
fn spaces_are_ordinary_characters() {
    let got = extract_ngrams("a b", &[2]).unwrap();
    let want = bag(&[("<s>a", 1), ("a ", 1), (" b", 1), ("b</s>", 1)]);
    assert_eq!(got, want);
}

#[test]
fn empty_string_is_rejected() {
    let err = extract_ngrams("", &[2]).unwrap_err();
    assert!(err.to_string().contains("empty"), "got: {err}");
}

#[test]
fn boundary_code_points_in_input_are_rejected() {
    let s = format!("a{BOUNDARY_START}b");
    assert!(extract_ngrams(&s, &[2]).is_err());
    assert!(normalize_name(&format!("x{BOUNDARY_END}"), false).is_err());
}

#[test]
fn window_validation_sorts_dedups_and_rejects_degenerates() {
    assert_eq!(validate_windows(&[5, 2, 3, 2]).unwrap(), vec![2, 3, 5]);
    assert!(validate_windows(&[]).is_err());
    assert!(validate_windows(&[2, 0]).is_err());
}

#[test]
fn normalize_composes_and_lowercases() {
    // "e" followed by a combining acute accent composes to a single code point.
    let decomposed = "Cafe\u{0301}";
    assert_eq!(normalize_name(decomposed, false).unwrap(), "Café");
    assert_eq!(normalize_name(decomposed, true).unwrap(), "café");
}

#[test]
fn display_and_parse_round_trip_boundary_markup() {
    let raw = format!("{BOUNDARY_START}ab{BOUNDARY_END}");
    assert_eq!(display_ngram(&raw), "<s>ab</s>");
    assert_eq!(parse_ngram("<s>ab</s>"), raw);
}

#[test]
fn overlap_matches_hand_counted_fixture_and_is_asymmetric() {
    // T(abab) = {<s>a, ab, ba, b</s>}; T(abba) = {<s>a, ab, bb, ba, a</s>}.
    let a = ["abab".to_string()];
    let b = ["abba".to_string()];
    let ab = ngram_overlap(
        a.iter().map(|s| s.as_str()),
        b.iter().map(|s| s.as_str()),
        &[2],
    )
    .unwrap();
    let ba = ngram_overlap(
        b.iter().map(|s| s.as_str()),
        a.iter().map(|s| s.as_str()),
        &[2],
    )
    .unwrap();
    assert_eq!(ab, 0.75);
    assert_eq!(ba, 0.6);
}

#[test]
fn disjoint_single_character_scripts_share_nothing() {
    // Even the boundary bigrams differ when the wrapped characters differ.
    let a = ["a".to_string()];
    let b = ["б".to_string()];
    let overlap = ngram_overlap(
        a.iter().map(|s| s.as_str()),
        b.iter().map(|s| s.as_str()),
        &[2],
    )
    .unwrap();
    assert_eq!(overlap, 0.0);
}

#[test]
fn vocabulary_ids_are_lexicographic_and_sides_record_first_appearance() {
    let vocab = NgramVocabulary::build(["ab"], ["ba"], &[2]).unwrap();
    // Types: sources give {<s>a, ab, b</s>}, targets add {<s>b, ba, a</s>}.
    assert_eq!(vocab.len(), 6);
    for id in 1..vocab.len() as u32 {
        assert!(vocab.ngram(id - 1) < vocab.ngram(id));
    }
    assert_eq!(vocab.side(vocab.id("ab").unwrap()), Side::Source);
    assert_eq!(vocab.side(vocab.id("ba").unwrap()), Side::Target);
    // "ab"'s boundary bigrams appeared on the source side first.
    let start_a = format!("{BOUNDARY_START}a");
    assert_eq!(vocab.side(vocab.id(&start_a).unwrap()), Side::Source);
    let start_b = format!("{BOUNDARY_START}b");
    assert_eq!(vocab.side(vocab.id(&start_b).unwrap()), Side::Target);
}

#[test]
fn shared_ngrams_keep_the_source_tag() {
    let vocab = NgramVocabulary::build(["ab"], ["ab"], &[2]).unwrap();
    for (_, side) in vocab.entries() {
        assert_eq!(side, Side::Source);
    }
}

#[test]
fn vocabulary_round_trips_through_entries() {
    let vocab = NgramVocabulary::build(["abc", "xy"], ["bcd"], &[2, 3]).unwrap();
    let entries: Vec<(String, Side)> = vocab.entries().map(|(g, s)| (g.to_string(), s)).collect();
    let rebuilt = NgramVocabulary::from_entries(entries, vocab.windows().to_vec()).unwrap();
    assert_eq!(rebuilt, vocab);
}

#[test]
fn out_of_order_entries_are_rejected() {
    let entries = vec![
        ("b".to_string(), Side::Source),
        ("a".to_string(), Side::Source),
    ];
    assert!(NgramVocabulary::from_entries(entries, vec![2]).is_err());
    let dup = vec![
        ("a".to_string(), Side::Source),
        ("a".to_string(), Side::Target),
    ];
    assert!(NgramVocabulary::from_entries(dup, vec![2]).is_err());
}

#[test]
fn pivot_ranking_matches_fixture_and_orders_totally() {
    let lrl = vec!["abc".to_string(), "abd".to_string()];
    let candidates = vec![
        HrlCandidate {
            name: "p1".into(),
            corpus: vec!["abc".into()],
            dev_recall: Some(0.9),
        },
        HrlCandidate {
            name: "p2".into(),
            corpus: vec!["xyz".into()],
            dev_recall: None,
        },
        HrlCandidate {
            name: "p3".into(),
            corpus: vec!["abcd".into()],
            dev_recall: Some(0.5),
        },
    ];
    let ranked = rank_pivots(&lrl, &candidates, 0.75, &[2]).unwrap();
    // T_lrl has 6 bigram types; p1 and p3 each cover 4 of them.
    let names: Vec<&str> = ranked.iter().map(|r| r.name.as_str()).collect();
    assert_eq!(names, ["p1", "p3", "p2"]);
    assert_eq!(ranked[0].overlap, 4.0 / 6.0);
    assert_eq!(ranked[1].overlap, 4.0 / 6.0);
    assert_eq!(ranked[2].overlap, 0.0);
    assert!(ranked[0].eligible);
    assert!(!ranked[1].eligible);
    assert!(ranked[2].eligible);

    let selected = select_pivot(&lrl, &candidates, 0.75, &[2]).unwrap();
    assert_eq!(selected[0].0, "p1");
    assert!(!selected.iter().any(|(n, _)| n == "p3"));
}

#[test]
fn no_eligible_pivot_is_an_error() {
    let lrl = vec!["ab".to_string()];
    let candidates = vec![HrlCandidate {
        name: "p1".into(),
        corpus: vec!["ab".into()],
        dev_recall: Some(0.1),
    }];
    let err = select_pivot(&lrl, &candidates, 0.75, &[2]).unwrap_err();
    assert!(err.to_string().contains("no eligible pivot"), "got: {err}");
}

/// Brute-force reference: enumerate every window position by index arithmetic.
fn reference_bag(s: &str, windows: &[usize]) -> NgramBag {
    let mut wrapped: Vec<char> = vec![BOUNDARY_START];
    wrapped.extend(s.chars());
    wrapped.push(BOUNDARY_END);
    let m = wrapped.len();
    let mut sizes = windows.to_vec();
    sizes.sort_unstable();
    sizes.dedup();
    let mut bag = NgramBag::new();
    for &n in &sizes {
        if n > m {
            continue;
        }
        for i in 0..=(m - n) {
            let gram: String = wrapped[i..i + n].iter().collect();
            *bag.entry(gram).or_insert(0) += 1;
        }
    }
    bag
}

fn arb_text() -> impl Strategy<Value = String> {
    proptest::collection::vec(any::<char>(), 1..20).prop_map(|chars| {
        chars
            .into_iter()
            .map(|c| {
                if c == BOUNDARY_START || c == BOUNDARY_END {
                    'x'
                } else {
                    c
                }
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn token_count_follows_the_window_formula(s in arb_text(), mut sizes in proptest::collection::vec(1usize..7, 1..4)) {
        let got = extract_ngrams(&s, &sizes).unwrap();
        let total: u64 = got.values().map(|&c| c as u64).sum();
        let m = s.chars().count() + 2;
        sizes.sort_unstable();
        sizes.dedup();
        let want: u64 = sizes
            .iter()
            .map(|&n| if m >= n { (m - n + 1) as u64 } else { 0 })
            .sum();
        prop_assert_eq!(total, want);
    }

    #[test]
    fn extraction_matches_reference_and_is_pure(s in arb_text(), sizes in proptest::collection::vec(1usize..7, 1..4)) {
        let first = extract_ngrams(&s, &sizes).unwrap();
        let second = extract_ngrams(&s, &sizes).unwrap();
        prop_assert_eq!(&first, &second);
        prop_assert_eq!(first, reference_bag(&s, &sizes));
    }

    #[test]
    fn overlap_of_a_corpus_with_itself_is_one(strings in proptest::collection::vec(arb_text(), 1..5)) {
        let refs: Vec<&str> = strings.iter().map(|s| s.as_str()).collect();
        let overlap = ngram_overlap(refs.iter().copied(), refs.iter().copied(), &[2, 3]).unwrap();
        prop_assert_eq!(overlap, 1.0);
    }

    #[test]
    fn overlap_is_a_ratio_of_shared_types(a in proptest::collection::vec(arb_text(), 1..4), b in proptest::collection::vec(arb_text(), 1..4)) {
        let a_refs: Vec<&str> = a.iter().map(|s| s.as_str()).collect();
        let b_refs: Vec<&str> = b.iter().map(|s| s.as_str()).collect();
        let overlap = ngram_overlap(a_refs.iter().copied(), b_refs.iter().copied(), &[2]).unwrap();
        let ta: BTreeSet<String> = corpus_ngram_types(a_refs.iter().copied(), &[2]).unwrap();
        let tb: BTreeSet<String> = corpus_ngram_types(b_refs.iter().copied(), &[2]).unwrap();
        let shared = ta.intersection(&tb).count();
        prop_assert_eq!(overlap, shared as f64 / ta.len() as f64);
    }

    #[test]
    fn pivot_ranking_is_deterministic(names in proptest::collection::vec("[a-d]{1,3}", 1..4)) {
        let lrl = vec!["abcd".to_string()];
        let candidates: Vec<HrlCandidate> = names
            .iter()
            .enumerate()
            .map(|(i, n)| HrlCandidate {
                name: format!("{n}{i}"),
                corpus: vec![n.clone()],
                dev_recall: None,
            })
            .collect();
        let first = rank_pivots(&lrl, &candidates, 0.75, &[2]).unwrap();
        let second = rank_pivots(&lrl, &candidates, 0.75, &[2]).unwrap();
        prop_assert_eq!(&first, &second);
        // Descending overlap with names as tiebreak is a total order.
        for w in first.windows(2) {
            prop_assert!(
                w[0].overlap > w[1].overlap
                    || (w[0].overlap == w[1].overlap && w[0].name < w[1].name)
            );
        }
    }
}

#[test]
fn vocabulary_build_accumulates_types_across_all_inputs() {
    let sources = ["ab", "bc"];
    let targets = ["cd"];
    let vocab = NgramVocabulary::build(sources, targets, &[2]).unwrap();
    let mut expected: BTreeMap<String, Side> = BTreeMap::new();
    for s in sources {
        for g in extract_ngrams(s, &[2]).unwrap().keys() {
            expected.entry(g.clone()).or_insert(Side::Source);
        }
    }
    for s in targets {
        for g in extract_ngrams(s, &[2]).unwrap().keys() {
            expected.entry(g.clone()).or_insert(Side::Target);
        }
    }
    assert_eq!(vocab.len(), expected.len());
    for (g, side) in &expected {
        let id = vocab.id(g).unwrap();
        assert_eq!(vocab.ngram(id), g);
        assert_eq!(vocab.side(id), *side);
    }
}
