//! Model records, test sets, class maps and the accuracy bookkeeping around them.

mod io;

pub use io::{
    load_accuracy_table, load_class_map, load_predictions, load_prediction_manifest,
    load_testset, parse_accuracy_table, write_accuracy_table, write_labels, write_testset,
    AccuracyTable, ManifestEntry, Units,
};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type ClassId = String;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: column `{column}`: {message}")]
    Parse {
        path: String,
        line: u64,
        column: String,
        message: String,
    },
    #[error("duplicate model id `{0}`")]
    DuplicateModelId(String),
    #[error("no class appears in every test set")]
    EmptyIntersection,
    #[error("no test sets given")]
    NoTestSets,
    #[error("model `{model}` has no predictions for test set `{testset}`")]
    MissingPredictions { model: String, testset: String },
    #[error("model `{model}` has no prediction for example `{example}` of test set `{testset}`")]
    MissingExample {
        model: String,
        testset: String,
        example: String,
    },
    #[error("test set `{0}` has no example labels")]
    MissingLabels(String),
    #[error("no example of test set `{testset}` survives class filtering for model `{model}`")]
    NoRetainedExamples { model: String, testset: String },
    #[error("model `{model}` has no accuracy for test set `{testset}`")]
    MissingAccuracy { model: String, testset: String },
    #[error("invalid test set `{testset}`: {message}")]
    InvalidTestSet { testset: String, message: String },
    #[error("invalid class map: {0}")]
    InvalidClassMap(String),
    #[error("model `{model}`: accuracy {value} for `{testset}` is outside [0, 1]")]
    AccuracyOutOfRange {
        model: String,
        testset: String,
        value: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Id,
    Ood,
}

impl Role {
    pub fn prefix(self) -> &'static str {
        match self {
            Role::Id => "id",
            Role::Ood => "ood",
        }
    }
}

/// One evaluated model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRecord {
    pub model_id: String,
    /// Training-data label, e.g. `cifar10` or `cifar10+imagenet`.
    pub group: String,
    /// Whether the model participates in baseline fitting.
    pub in_fit: bool,
    /// Test-set id to accuracy in `[0, 1]`.
    pub accuracies: BTreeMap<String, f64>,
    /// Test-set id to `(example_id, predicted_class)` pairs.
    pub predictions: Option<BTreeMap<String, Vec<(String, ClassId)>>>,
}

impl ModelRecord {
    pub fn new(model_id: impl Into<String>, group: impl Into<String>, in_fit: bool) -> Self {
        Self {
            model_id: model_id.into(),
            group: group.into(),
            in_fit,
            accuracies: BTreeMap::new(),
            predictions: None,
        }
    }

    pub fn with_accuracy(mut self, testset: impl Into<String>, acc: f64) -> Self {
        self.accuracies.insert(testset.into(), acc);
        self
    }

    pub fn accuracy(&self, testset: &str) -> Result<f64, DataError> {
        self.accuracies
            .get(testset)
            .copied()
            .ok_or_else(|| DataError::MissingAccuracy {
                model: self.model_id.clone(),
                testset: testset.to_string(),
            })
    }

    pub fn predictions_for(&self, testset: &str) -> Option<&[(String, ClassId)]> {
        self.predictions
            .as_ref()
            .and_then(|p| p.get(testset))
            .map(Vec::as_slice)
    }
}

/// A named test set with its class list and, optionally, per-example labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSetSpec {
    pub testset_id: String,
    pub role: Role,
    pub classes: BTreeSet<ClassId>,
    #[serde(skip)]
    pub labels: Option<BTreeMap<String, ClassId>>,
}

impl TestSetSpec {
    pub fn new(
        testset_id: impl Into<String>,
        role: Role,
        classes: impl IntoIterator<Item = impl Into<ClassId>>,
        labels: Option<BTreeMap<String, ClassId>>,
    ) -> Result<Self, DataError> {
        let spec = Self {
            testset_id: testset_id.into(),
            role,
            classes: classes.into_iter().map(Into::into).collect(),
            labels,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let invalid = |message: String| DataError::InvalidTestSet {
            testset: self.testset_id.clone(),
            message,
        };
        if self.classes.is_empty() {
            return Err(invalid("class list is empty".into()));
        }
        if let Some(labels) = &self.labels {
            if let Some((ex, c)) = labels.iter().find(|(_, c)| !self.classes.contains(*c)) {
                return Err(invalid(format!("example `{ex}` has label `{c}` not in the class list")));
            }
        }
        Ok(())
    }

    /// The same test set expressed in the target namespace of `map`.
    /// Classes and labels without a mapping are dropped.
    pub fn mapped(&self, map: &ClassMap) -> Result<Self, DataError> {
        let classes: BTreeSet<ClassId> = self
            .classes
            .iter()
            .filter_map(|c| map.map(c).cloned())
            .collect();
        let labels = self.labels.as_ref().map(|l| {
            l.iter()
                .filter_map(|(ex, c)| map.map(c).map(|t| (ex.clone(), t.clone())))
                .collect()
        });
        Self::new(self.testset_id.clone(), self.role, classes, labels)
    }
}

/// Partial many-to-one relabeling between two class namespaces.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMap {
    source_classes: BTreeSet<ClassId>,
    target_classes: BTreeSet<ClassId>,
    mapping: BTreeMap<ClassId, ClassId>,
}

impl ClassMap {
    pub fn new(
        source_classes: BTreeSet<ClassId>,
        target_classes: BTreeSet<ClassId>,
        mapping: BTreeMap<ClassId, ClassId>,
    ) -> Result<Self, DataError> {
        for (s, t) in &mapping {
            if !source_classes.contains(s) {
                return Err(DataError::InvalidClassMap(format!("`{s}` is not a source class")));
            }
            if !target_classes.contains(t) {
                return Err(DataError::InvalidClassMap(format!("`{t}` is not a target class")));
            }
        }
        Ok(Self {
            source_classes,
            target_classes,
            mapping,
        })
    }

    /// Builds a map whose class sets are exactly the mapped pairs.
    pub fn from_pairs(
        pairs: impl IntoIterator<Item = (ClassId, ClassId)>,
    ) -> Result<Self, DataError> {
        let mut mapping = BTreeMap::new();
        for (s, t) in pairs {
            if let Some(prev) = mapping.insert(s.clone(), t.clone()) {
                if prev != t {
                    return Err(DataError::InvalidClassMap(format!(
                        "`{s}` maps to both `{prev}` and `{t}`"
                    )));
                }
            }
        }
        let source = mapping.keys().cloned().collect();
        let target = mapping.values().cloned().collect();
        Self::new(source, target, mapping)
    }

    pub fn map(&self, class: &str) -> Option<&ClassId> {
        self.mapping.get(class)
    }

    pub fn source_classes(&self) -> &BTreeSet<ClassId> {
        &self.source_classes
    }

    pub fn target_classes(&self) -> &BTreeSet<ClassId> {
        &self.target_classes
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&ClassId, &ClassId)> {
        self.mapping.iter()
    }
}

/// Classes present in every test set. Map test sets into a shared namespace
/// with [`TestSetSpec::mapped`] first.
pub fn subsample_classes(testsets: &[TestSetSpec]) -> Result<BTreeSet<ClassId>, DataError> {
    let (first, rest) = testsets.split_first().ok_or(DataError::NoTestSets)?;
    let retained: BTreeSet<ClassId> = rest.iter().fold(first.classes.clone(), |acc, t| {
        acc.intersection(&t.classes).cloned().collect()
    });
    if retained.is_empty() {
        return Err(DataError::EmptyIntersection);
    }
    Ok(retained)
}

/// Pooled accuracy of `record` on the examples of `testset` whose (mapped)
/// label is in `retained`.
///
/// Both the label and the prediction go through `map` when one is given; a
/// prediction with no mapping never counts as correct.
pub fn recompute_accuracy(
    record: &ModelRecord,
    testset: &TestSetSpec,
    retained: &BTreeSet<ClassId>,
    map: Option<&ClassMap>,
) -> Result<f64, DataError> {
    let preds = record
        .predictions_for(&testset.testset_id)
        .ok_or_else(|| DataError::MissingPredictions {
            model: record.model_id.clone(),
            testset: testset.testset_id.clone(),
        })?;
    let labels = testset
        .labels
        .as_ref()
        .ok_or_else(|| DataError::MissingLabels(testset.testset_id.clone()))?;
    let by_example: HashMap<&str, &str> = preds
        .iter()
        .map(|(ex, c)| (ex.as_str(), c.as_str()))
        .collect();
    let translate = |c: &str| -> Option<String> {
        match map {
            Some(m) => m.map(c).cloned(),
            None => Some(c.to_string()),
        }
    };

    let (mut total, mut correct) = (0usize, 0usize);
    for (example, label) in labels {
        let Some(truth) = translate(label).filter(|t| retained.contains(t)) else {
            continue;
        };
        let pred = by_example
            .get(example.as_str())
            .ok_or_else(|| DataError::MissingExample {
                model: record.model_id.clone(),
                testset: testset.testset_id.clone(),
                example: example.clone(),
            })?;
        total += 1;
        if translate(pred).as_deref() == Some(truth.as_str()) {
            correct += 1;
        }
    }
    if total == 0 {
        return Err(DataError::NoRetainedExamples {
            model: record.model_id.clone(),
            testset: testset.testset_id.clone(),
        });
    }
    Ok(correct as f64 / total as f64)
}

/// Keeps records whose accuracy on `testset_id` is at least `min_accuracy`.
pub fn filter_models(
    records: &[ModelRecord],
    testset_id: &str,
    min_accuracy: f64,
) -> Result<Vec<ModelRecord>, DataError> {
    let mut kept = Vec::with_capacity(records.len());
    for r in records {
        if r.accuracy(testset_id)? >= min_accuracy {
            kept.push(r.clone());
        }
    }
    Ok(kept)
}
