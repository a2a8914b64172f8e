use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{effective_robustness, BaselineFit, EvalError};
use crate::data::ModelRecord;
use crate::math::Clamp;

/// Column key for the per-model average across OOD test sets.
pub const AVERAGE_COLUMN: &str = "Average";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStat {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single member.
    pub std: f64,
    pub n: usize,
    pub singleton: bool,
}

impl SummaryStat {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n == 1 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Some(Self {
            mean,
            std,
            n,
            singleton: n == 1,
        })
    }
}

/// group → column (OOD test set or [`AVERAGE_COLUMN`]) → statistic.
pub type GroupSummary = BTreeMap<String, BTreeMap<String, SummaryStat>>;

/// Mean ± sample std of effective robustness per group and OOD test set.
///
/// The `Average` column averages each model across `ood_testsets` first and
/// then summarizes those per-model averages over the group.
pub fn group_summary(
    per_model: &BTreeMap<String, BTreeMap<String, f64>>,
    membership: &BTreeMap<String, String>,
    groups: &[String],
    ood_testsets: &[String],
) -> Result<GroupSummary, EvalError> {
    let mut members: BTreeMap<&str, Vec<&BTreeMap<String, f64>>> =
        groups.iter().map(|g| (g.as_str(), Vec::new())).collect();
    for (model, row) in per_model {
        let group = membership.get(model).ok_or_else(|| EvalError::UnlistedGroup {
            model: model.clone(),
            group: String::new(),
        })?;
        members
            .get_mut(group.as_str())
            .ok_or_else(|| EvalError::UnlistedGroup {
                model: model.clone(),
                group: group.clone(),
            })?
            .push(row);
    }

    let value = |row: &BTreeMap<String, f64>, model_hint: usize, t: &str| {
        row.get(t).copied().ok_or_else(|| {
            EvalError::FitMismatch(format!("member #{model_hint} has no value for `{t}`"))
        })
    };
    let mut out = GroupSummary::new();
    for (group, rows) in members {
        if rows.is_empty() {
            return Err(EvalError::EmptyGroup(group.to_string()));
        }
        let mut columns = BTreeMap::new();
        for t in ood_testsets {
            let vals = rows
                .iter()
                .enumerate()
                .map(|(i, r)| value(r, i, t))
                .collect::<Result<Vec<_>, _>>()?;
            columns.insert(t.clone(), SummaryStat::of(&vals).expect("nonempty"));
        }
        if !ood_testsets.is_empty() {
            let averages = rows
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let sum = ood_testsets
                        .iter()
                        .map(|t| value(r, i, t))
                        .sum::<Result<f64, _>>()?;
                    Ok(sum / ood_testsets.len() as f64)
                })
                .collect::<Result<Vec<_>, EvalError>>()?;
            columns.insert(AVERAGE_COLUMN.to_string(), SummaryStat::of(&averages).expect("nonempty"));
        }
        out.insert(group.to_string(), columns);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeldoutStat {
    /// Mean absolute effective robustness, percentage points.
    pub mae_points: f64,
    /// Signed effective robustness over the family.
    pub effective_robustness: SummaryStat,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HeldoutTable {
    /// model → OOD test set → signed effective robustness.
    pub per_model: BTreeMap<String, BTreeMap<String, f64>>,
    /// family (group label) → OOD test set → statistics.
    pub families: BTreeMap<String, BTreeMap<String, HeldoutStat>>,
}

/// Scores models that did not take part in fitting against existing fits.
/// Nothing is refitted and no R² is reported.
pub fn evaluate_heldout(
    records: &[&ModelRecord],
    fits: &[BaselineFit],
    clamp: &Clamp,
) -> Result<HeldoutTable, EvalError> {
    let mut table = HeldoutTable::default();
    let mut by_family: BTreeMap<&str, BTreeMap<&str, Vec<f64>>> = BTreeMap::new();
    for r in records {
        let mut row = BTreeMap::new();
        for fit in fits {
            let er = effective_robustness(r, fit, clamp)?;
            row.insert(fit.ood_testset.clone(), er);
            by_family
                .entry(&r.group)
                .or_default()
                .entry(&fit.ood_testset)
                .or_default()
                .push(er);
        }
        table.per_model.insert(r.model_id.clone(), row);
    }
    for (family, per_ood) in by_family {
        let stats = per_ood
            .into_iter()
            .map(|(ood, vals)| {
                let mae = vals.iter().map(|v| v.abs()).sum::<f64>() / vals.len() as f64;
                let stat = HeldoutStat {
                    mae_points: mae,
                    effective_robustness: SummaryStat::of(&vals).expect("nonempty"),
                };
                (ood.to_string(), stat)
            })
            .collect();
        table.families.insert(family.to_string(), stats);
    }
    Ok(table)
}
