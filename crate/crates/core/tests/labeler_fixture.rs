mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::{caption_fixture, AMBIGUOUS, EXPECTED_LABELS};
use effrob::labeler::{
    assign_label, build_test_set, match_classes, words, CaptionRecord, ClassSynonyms, LabelError, MatchMode,
};
use proptest::prelude::*;

fn labeled_fixture() -> Vec<(String, String)> {
    let (corpus, classes) = caption_fixture();
    corpus
        .iter()
        .filter_map(|r| assign_label(r, &classes, MatchMode::Fulltext))
        .collect()
}

#[test]
fn fixture_yields_the_expected_labels() {
    let got: BTreeMap<String, String> = labeled_fixture().into_iter().collect();
    let want: BTreeMap<String, String> = EXPECTED_LABELS
        .iter()
        .map(|(e, c)| (e.to_string(), c.to_string()))
        .collect();
    assert_eq!(got, want);
}

#[test]
fn exactly_the_ambiguous_records_are_discarded_by_the_unique_rule() {
    let (corpus, classes) = caption_fixture();
    assert_eq!(corpus.len(), 30);
    let multi: Vec<&str> = corpus
        .iter()
        .filter(|r| match_classes(r, &classes, MatchMode::Fulltext).len() > 1)
        .map(|r| r.example_id.as_str())
        .collect();
    assert_eq!(multi, AMBIGUOUS);
}

#[test]
fn balanced_manifest_matches_golden_file() {
    let labeled = labeled_fixture();
    let built = build_test_set("captions", &labeled, 3, 5, 42).unwrap();
    let golden = std::fs::read_to_string(common::fixture("holdout_seed42.txt")).unwrap();
    assert_eq!(built.render_holdout(), golden);
    let classes: Vec<&str> = built.testset.classes.iter().map(String::as_str).collect();
    assert_eq!(classes, ["car", "cat", "dog"]);
    assert_eq!(built.holdout.len(), 9);
    let again = build_test_set("captions", &labeled, 3, 5, 42).unwrap();
    assert_eq!(again.render_holdout(), built.render_holdout());
}

#[test]
fn tags_mode_needs_whole_field_equality() {
    let classes = vec![
        ClassSynonyms::new("dog", vec!["dog".into()]).unwrap(),
        ClassSynonyms::new("cat", vec!["cat".into()]).unwrap(),
    ];
    let rec = |fields: &[&str]| CaptionRecord {
        example_id: "x".into(),
        text_fields: fields.iter().map(|s| s.to_string()).collect(),
    };
    assert_eq!(match_classes(&rec(&["dog", "Cat"]), &classes, MatchMode::Tags).len(), 2);
    assert!(match_classes(&rec(&["a photo of a dog"]), &classes, MatchMode::Tags).is_empty());
    assert_eq!(
        assign_label(&rec(&["a photo of a dog"]), &classes, MatchMode::Fulltext),
        Some(("x".into(), "dog".into()))
    );
    assert!(match_classes(&rec(&["dogma"]), &classes, MatchMode::Fulltext).is_empty());
}

#[test]
fn thresholds_follow_class_counts() {
    let mut labeled = Vec::new();
    for i in 0..120 {
        labeled.push((format!("a{i:03}"), "big".to_string()));
    }
    for i in 0..80 {
        labeled.push((format!("b{i:03}"), "small".to_string()));
    }
    let built = build_test_set("t", &labeled, 50, 100, 0).unwrap();
    assert_eq!(built.holdout.len(), 50);
    assert_eq!(built.testset.classes.len(), 1);
    assert!(matches!(
        build_test_set("t", &labeled, 50, 200, 0),
        Err(LabelError::NoQualifyingClasses { .. })
    ));
}

#[test]
fn full_scale_class_count() {
    let labeled: Vec<(String, String)> = (0..451)
        .flat_map(|c| (0..100).map(move |i| (format!("c{c:03}-{i:03}"), format!("class{c:03}"))))
        .collect();
    let built = build_test_set("t", &labeled, 50, 100, 1).unwrap();
    assert_eq!(built.holdout.len(), 22550);
    assert_eq!(built.testset.classes.len(), 451);
}

proptest! {
    #[test]
    fn adding_synonyms_never_removes_a_match(
        text in "[a-z ]{0,30}",
        extra in "[a-z]{1,6}",
    ) {
        let base = vec![
            ClassSynonyms::new("x", vec!["ab".into()]).unwrap(),
            ClassSynonyms::new("y", vec!["cd".into()]).unwrap(),
        ];
        let mut grown = base.clone();
        grown[0] = ClassSynonyms::new("x", vec!["ab".into(), extra]).unwrap();
        let rec = CaptionRecord { example_id: "e".into(), text_fields: vec![text] };
        for mode in [MatchMode::Tags, MatchMode::Fulltext] {
            let before = match_classes(&rec, &base, mode);
            let after = match_classes(&rec, &grown, mode);
            prop_assert!(!before.contains("x") || after.contains("x"));
        }
    }

    #[test]
    fn balanced_output_is_unique_and_from_the_input(
        counts in prop::collection::vec(0usize..12, 1..6),
        per_class in 1usize..4,
        seed in any::<u64>(),
    ) {
        let labeled: Vec<(String, String)> = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| (0..n).map(move |i| (format!("e{c}-{i}"), format!("c{c}"))))
            .collect();
        let Ok(built) = build_test_set("t", &labeled, per_class, 4, seed) else { return Ok(()) };
        let lookup: BTreeMap<&str, &str> = labeled.iter().map(|(e, c)| (e.as_str(), c.as_str())).collect();
        let unique: BTreeSet<&String> = built.holdout.iter().collect();
        prop_assert_eq!(unique.len(), built.holdout.len());
        let labels = built.testset.labels.as_ref().unwrap();
        for class in &built.testset.classes {
            prop_assert_eq!(labels.values().filter(|c| *c == class).count(), per_class);
        }
        for (e, c) in labels {
            prop_assert_eq!(lookup[e.as_str()], c.as_str());
        }
    }
}

#[test]
fn words_are_normalized() {
    assert_eq!(words("Ｄｏｇ-Park, CAFÉ"), ["dog", "park", "café"]);
}
