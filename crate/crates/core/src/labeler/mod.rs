//! Labels image–text records by matching their captions or tags against
//! class synonym lists, then samples a balanced test set from the records
//! that matched exactly one class.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::data::{ClassId, DataError, Role, TestSetSpec};

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("duplicate example id `{0}`")]
    DuplicateExample(String),
    #[error("class `{0}` needs at least one non-empty synonym")]
    InvalidSynonyms(String),
    #[error("no class has at least {min_class_count} labeled examples")]
    NoQualifyingClasses { min_class_count: usize },
    #[error("invalid sampling parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    /// Each text field is a tag; a tag matches a synonym when their word
    /// sequences are equal.
    #[default]
    Tags,
    /// A synonym matches when its words occur contiguously in a field.
    Fulltext,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionRecord {
    pub example_id: String,
    pub text_fields: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassSynonyms {
    class_id: ClassId,
    synonyms: Vec<String>,
    words: Vec<Vec<String>>,
}

impl ClassSynonyms {
    pub fn new(class_id: impl Into<ClassId>, synonyms: Vec<String>) -> Result<Self, LabelError> {
        let class_id = class_id.into();
        let words: Vec<Vec<String>> = synonyms.iter().map(|s| words(s)).collect();
        if synonyms.is_empty() || words.iter().any(Vec::is_empty) {
            return Err(LabelError::InvalidSynonyms(class_id));
        }
        Ok(Self {
            class_id,
            synonyms,
            words,
        })
    }

    pub fn class_id(&self) -> &str {
        &self.class_id
    }

    pub fn synonyms(&self) -> &[String] {
        &self.synonyms
    }
}

/// NFKC-normalized, lowercased alphanumeric runs.
pub fn words(text: &str) -> Vec<String> {
    let norm: String = text.nfkc().flat_map(char::to_lowercase).collect();
    norm.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn match_classes(record: &CaptionRecord, classes: &[ClassSynonyms], mode: MatchMode) -> BTreeSet<ClassId> {
    let fields: Vec<Vec<String>> = record.text_fields.iter().map(|f| words(f)).collect();
    let hit = |syn: &[String]| {
        fields.iter().any(|f| match mode {
            MatchMode::Tags => f.as_slice() == syn,
            MatchMode::Fulltext => f.windows(syn.len()).any(|w| w == syn),
        })
    };
    classes
        .iter()
        .filter(|c| c.words.iter().any(|s| hit(s)))
        .map(|c| c.class_id.clone())
        .collect()
}

/// `(example_id, class)` when exactly one class matches.
pub fn assign_label(
    record: &CaptionRecord,
    classes: &[ClassSynonyms],
    mode: MatchMode,
) -> Option<(String, ClassId)> {
    let matched = match_classes(record, classes, mode);
    if matched.len() == 1 {
        let class = matched.into_iter().next().expect("one element");
        Some((record.example_id.clone(), class))
    } else {
        None
    }
}

/// A sampled balanced test set plus the ids to withhold from training data.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTestSet {
    pub testset: TestSetSpec,
    /// Selected example ids, sorted.
    pub holdout: Vec<String>,
    pub seed: u64,
}

impl LabeledTestSet {
    /// One example id per line after a `# seed=` header line.
    pub fn render_holdout(&self) -> String {
        let mut out = format!("# seed={}\n", self.seed);
        for id in &self.holdout {
            out.push_str(id);
            out.push('\n');
        }
        out
    }
}

/// Keeps classes with at least `min_class_count` labeled examples and
/// samples exactly `per_class` of each, uniformly and reproducibly.
pub fn build_test_set(
    testset_id: &str,
    labeled: &[(String, ClassId)],
    per_class: usize,
    min_class_count: usize,
    seed: u64,
) -> Result<LabeledTestSet, LabelError> {
    if per_class == 0 || per_class > min_class_count {
        return Err(LabelError::InvalidParams(format!(
            "per_class ({per_class}) must be between 1 and min_class_count ({min_class_count})"
        )));
    }
    let mut by_class: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for (ex, c) in labeled {
        if !seen.insert(ex.as_str()) {
            return Err(LabelError::DuplicateExample(ex.clone()));
        }
        by_class.entry(c).or_default().push(ex);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = BTreeMap::new();
    for (class, mut examples) in by_class {
        if examples.len() < min_class_count {
            continue;
        }
        examples.sort_unstable();
        let mut picks = rand::seq::index::sample(&mut rng, examples.len(), per_class).into_vec();
        picks.sort_unstable();
        for i in picks {
            labels.insert(examples[i].to_string(), class.to_string());
        }
    }
    if labels.is_empty() {
        return Err(LabelError::NoQualifyingClasses { min_class_count });
    }
    let classes: BTreeSet<ClassId> = labels.values().cloned().collect();
    let holdout = labels.keys().cloned().collect();
    let testset = TestSetSpec::new(testset_id, Role::Id, classes, Some(labels))?;
    Ok(LabeledTestSet {
        testset,
        holdout,
        seed,
    })
}

fn read(path: &Path) -> Result<String, LabelError> {
    fs::read_to_string(path).map_err(|source| LabelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Tab-separated rows, skipping blank and `#` lines; yields `(line, fields)`.
fn tsv_rows(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| (i + 1, l.split('\t').map(str::trim).collect()))
}

/// Corpus lines: `example_id<TAB>text<TAB>text...`.
pub fn parse_corpus(text: &str, source: &str) -> Result<Vec<CaptionRecord>, LabelError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (line, fields) in tsv_rows(text) {
        let (id, rest) = fields.split_first().expect("split yields at least one field");
        if id.is_empty() {
            return Err(LabelError::Parse {
                path: source.into(),
                line,
                message: "empty example id".into(),
            });
        }
        if !seen.insert(id.to_string()) {
            return Err(LabelError::DuplicateExample(id.to_string()));
        }
        out.push(CaptionRecord {
            example_id: id.to_string(),
            text_fields: rest.iter().filter(|f| !f.is_empty()).map(|f| f.to_string()).collect(),
        });
    }
    Ok(out)
}

/// Synonym lines: `class_id<TAB>synonym<TAB>synonym...`.
pub fn parse_synonyms(text: &str, source: &str) -> Result<Vec<ClassSynonyms>, LabelError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (line, fields) in tsv_rows(text) {
        let (id, rest) = fields.split_first().expect("split yields at least one field");
        if !seen.insert(id.to_string()) {
            return Err(LabelError::Parse {
                path: source.into(),
                line,
                message: format!("class `{id}` listed twice"),
            });
        }
        let syns = rest.iter().filter(|s| !s.is_empty()).map(|s| s.to_string()).collect();
        out.push(ClassSynonyms::new(*id, syns)?);
    }
    Ok(out)
}

pub fn load_corpus(path: &Path) -> Result<Vec<CaptionRecord>, LabelError> {
    parse_corpus(&read(path)?, &path.display().to_string())
}

pub fn load_synonyms(path: &Path) -> Result<Vec<ClassSynonyms>, LabelError> {
    parse_synonyms(&read(path)?, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(fields: &[&str]) -> CaptionRecord {
        CaptionRecord {
            example_id: "e".into(),
            text_fields: fields.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn classes() -> Vec<ClassSynonyms> {
        vec![
            ClassSynonyms::new("dog", vec!["dog".into()]).unwrap(),
            ClassSynonyms::new("cat", vec!["cat".into()]).unwrap(),
        ]
    }

    fn set(v: &[&str]) -> BTreeSet<ClassId> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn match_examples() {
        assert_eq!(match_classes(&rec(&["a photo of a dog"]), &classes(), MatchMode::Fulltext), set(&["dog"]));
        assert_eq!(match_classes(&rec(&["dog", "cat"]), &classes(), MatchMode::Tags), set(&["cat", "dog"]));
        assert!(match_classes(&rec(&["dogma"]), &classes(), MatchMode::Fulltext).is_empty());
        // a tag is the whole token, not a word inside it
        assert!(match_classes(&rec(&["hot dog"]), &classes(), MatchMode::Tags).is_empty());
    }

    #[test]
    fn normalization_and_phrases() {
        let cls = vec![ClassSynonyms::new("gr", vec!["Golden Retriever".into()]).unwrap()];
        assert_eq!(match_classes(&rec(&["GOLDEN-retriever"]), &cls, MatchMode::Tags), set(&["gr"]));
        assert_eq!(match_classes(&rec(&["my golden  retriever, Max"]), &cls, MatchMode::Fulltext), set(&["gr"]));
        assert!(match_classes(&rec(&["golden dog retriever"]), &cls, MatchMode::Fulltext).is_empty());
        // fullwidth letters fold under NFKC
        assert_eq!(match_classes(&rec(&["ａ ｄｏｇ"]), &classes(), MatchMode::Fulltext), set(&["dog"]));
    }

    #[test]
    fn assign_examples() {
        let labeled = assign_label(&rec(&["dog"]), &classes(), MatchMode::Tags);
        assert_eq!(labeled, Some(("e".into(), "dog".into())));
        assert_eq!(assign_label(&rec(&["dog", "cat"]), &classes(), MatchMode::Tags), None);
        assert_eq!(assign_label(&rec(&["bird"]), &classes(), MatchMode::Tags), None);
    }

    fn labeled(counts: &[(&str, usize)]) -> Vec<(String, ClassId)> {
        counts
            .iter()
            .flat_map(|(c, n)| (0..*n).map(move |i| (format!("{c}-{i:03}"), c.to_string())))
            .collect()
    }

    #[test]
    fn thresholds() {
        let out = build_test_set("t", &labeled(&[("a", 120), ("b", 80)]), 50, 100, 1).unwrap();
        assert_eq!(out.testset.classes, set(&["a"]));
        assert_eq!(out.holdout.len(), 50);
        assert!(out.holdout.iter().all(|id| id.starts_with("a-")));
    }

    #[test]
    fn build_errors() {
        assert!(matches!(
            build_test_set("t", &labeled(&[("a", 80)]), 50, 100, 1),
            Err(LabelError::NoQualifyingClasses { .. })
        ));
        assert!(matches!(
            build_test_set("t", &labeled(&[("a", 80)]), 5, 4, 1),
            Err(LabelError::InvalidParams(_))
        ));
        let dup = vec![("x".to_string(), "a".to_string()), ("x".to_string(), "b".to_string())];
        assert!(matches!(build_test_set("t", &dup, 1, 1, 1), Err(LabelError::DuplicateExample(_))));
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let input = labeled(&[("a", 30), ("b", 40)]);
        let one = build_test_set("t", &input, 5, 10, 9).unwrap();
        let two = build_test_set("t", &input, 5, 10, 9).unwrap();
        assert_eq!(one.render_holdout(), two.render_holdout());
        assert!(one.render_holdout().starts_with("# seed=9\n"));
    }

    #[test]
    fn file_parsing() {
        let corpus = parse_corpus("# header\ne1\ta dog\tpark\n\ne2\tcat\n", "c").unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus[0].text_fields, vec!["a dog", "park"]);
        assert!(matches!(parse_corpus("e1\tx\ne1\ty\n", "c"), Err(LabelError::DuplicateExample(_))));

        let syn = parse_synonyms("dog\tdog\tpuppy\ncat\tcat\n", "s").unwrap();
        assert_eq!(syn[0].synonyms(), ["dog", "puppy"]);
        assert!(matches!(parse_synonyms("dog\n", "s"), Err(LabelError::InvalidSynonyms(_))));
        assert!(parse_synonyms("dog\t!!\n", "s").is_err());
    }
}
