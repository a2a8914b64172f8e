//! Baseline fitting and effective robustness.
//!
//! A [`BaselineFit`] is one least-squares plane (or line, for a single ID
//! test set) per OOD test set, fitted on the logit accuracies of a roster of
//! models. Effective robustness is reported in signed accuracy percentage
//! points: positive means the model beats the baseline.

mod analysis;
mod summary;

pub use analysis::{ablate_fit, evaluate, fit_per_group, ranking_agreement, AblationRow, ReportMetadata, RobustnessReport};
pub use summary::{
    evaluate_heldout, group_summary, GroupSummary, HeldoutStat, HeldoutTable, SummaryStat,
    AVERAGE_COLUMN,
};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, ModelRecord};
use crate::math::{self, Clamp, FitDiagnostics, LinearModel, MathError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Math(#[from] MathError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid evaluation spec: {0}")]
    InvalidSpec(String),
    #[error("group `{0}` has no models")]
    EmptyGroup(String),
    #[error("model `{model}` belongs to group `{group}`, which is not listed")]
    UnlistedGroup { model: String, group: String },
    #[error("fit mismatch: {0}")]
    FitMismatch(String),
}

/// Which records participate in fitting.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roster {
    /// Admit all records regardless of their `in_fit` flag.
    #[serde(default)]
    pub include_held_out: bool,
    #[serde(default)]
    pub exclude_groups: BTreeSet<String>,
}

impl Roster {
    pub fn admits(&self, record: &ModelRecord) -> bool {
        (record.in_fit || self.include_held_out) && !self.exclude_groups.contains(&record.group)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationSpec {
    /// Ordered ID test sets; one entry is the single-ID setting.
    pub id_testsets: Vec<String>,
    pub ood_testsets: Vec<String>,
    pub roster: Roster,
    /// Groups to summarize; empty means every group found in the roster.
    pub groups: Vec<String>,
    pub clamp: Clamp,
}

impl EvaluationSpec {
    pub fn new(id_testsets: Vec<String>, ood_testsets: Vec<String>) -> Result<Self, EvalError> {
        let spec = Self {
            id_testsets,
            ood_testsets,
            roster: Roster::default(),
            groups: Vec::new(),
            clamp: Clamp::default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let invalid = |m: String| Err(EvalError::InvalidSpec(m));
        if self.id_testsets.is_empty() {
            return invalid("at least one ID test set is required".into());
        }
        let ids: BTreeSet<&String> = self.id_testsets.iter().collect();
        if ids.len() != self.id_testsets.len() {
            return invalid("duplicate ID test set".into());
        }
        let oods: BTreeSet<&String> = self.ood_testsets.iter().collect();
        if oods.len() != self.ood_testsets.len() {
            return invalid("duplicate OOD test set".into());
        }
        if let Some(t) = ids.intersection(&oods).next() {
            return invalid(format!("`{t}` is listed as both ID and OOD"));
        }
        if oods.iter().any(|t| t.as_str() == AVERAGE_COLUMN) {
            return invalid(format!("`{AVERAGE_COLUMN}` is reserved for the summary column"));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.id_testsets.len()
    }

    /// The same spec restricted to a different set of ID test sets.
    pub fn with_id_testsets(&self, id_testsets: Vec<String>) -> Result<Self, EvalError> {
        let spec = Self {
            id_testsets,
            ..self.clone()
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// A fitted baseline for one OOD test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineFit {
    pub ood_testset: String,
    pub id_testsets: Vec<String>,
    pub model: LinearModel,
    pub diagnostics: FitDiagnostics,
    /// Roster ids in fitting order (sorted by id).
    pub fitted_model_ids: Vec<String>,
}

impl BaselineFit {
    pub fn k(&self) -> usize {
        self.id_testsets.len()
    }

    /// Baseline prediction of OOD accuracy for `record`.
    pub fn predict(&self, record: &ModelRecord, clamp: &Clamp) -> Result<f64, EvalError> {
        let ids = self
            .id_testsets
            .iter()
            .map(|t| record.accuracy(t))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(math::predict(&self.model, &ids, clamp)?)
    }
}

/// Roster members sorted by model id, so results never depend on input order.
pub(crate) fn roster<'a>(records: &'a [ModelRecord], roster: &Roster) -> Vec<&'a ModelRecord> {
    let mut members: Vec<&ModelRecord> = records.iter().filter(|r| roster.admits(r)).collect();
    members.sort_by(|a, b| a.model_id.cmp(&b.model_id));
    members
}

pub fn fit_baseline(
    records: &[ModelRecord],
    spec: &EvaluationSpec,
    ood: &str,
) -> Result<BaselineFit, EvalError> {
    fit_on(&roster(records, &spec.roster), spec, ood)
}

pub(crate) fn fit_on(
    members: &[&ModelRecord],
    spec: &EvaluationSpec,
    ood: &str,
) -> Result<BaselineFit, EvalError> {
    spec.validate()?;
    let k = spec.k();
    if members.len() < k + 1 {
        return Err(MathError::TooFewModels { n: members.len(), k }.into());
    }
    let mut design = Vec::with_capacity(members.len());
    let mut targets = Vec::with_capacity(members.len());
    for r in members {
        let row = spec
            .id_testsets
            .iter()
            .map(|t| Ok(spec.clamp.logit(r.accuracy(t)?)?.get()))
            .collect::<Result<Vec<f64>, EvalError>>()?;
        design.push(row);
        targets.push(spec.clamp.logit(r.accuracy(ood)?)?.get());
    }
    let (model, diagnostics) = math::fit_ols(&design, &targets)?;
    Ok(BaselineFit {
        ood_testset: ood.to_string(),
        id_testsets: spec.id_testsets.clone(),
        model,
        diagnostics,
        fitted_model_ids: members.iter().map(|r| r.model_id.clone()).collect(),
    })
}

/// `100 · (acc_ood − baseline prediction)`, signed percentage points.
pub fn effective_robustness(
    record: &ModelRecord,
    fit: &BaselineFit,
    clamp: &Clamp,
) -> Result<f64, EvalError> {
    let actual = record.accuracy(&fit.ood_testset)?;
    Ok(100.0 * (actual - fit.predict(record, clamp)?))
}

/// Effective robustness of every record under every fit: model → OOD set → points.
pub fn effective_robustness_table(
    records: &[&ModelRecord],
    fits: &[BaselineFit],
    clamp: &Clamp,
) -> Result<BTreeMap<String, BTreeMap<String, f64>>, EvalError> {
    let mut table = BTreeMap::new();
    for r in records {
        let mut row = BTreeMap::new();
        for fit in fits {
            row.insert(fit.ood_testset.clone(), effective_robustness(r, fit, clamp)?);
        }
        table.insert(r.model_id.clone(), row);
    }
    Ok(table)
}
