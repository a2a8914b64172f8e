use std::collections::{BTreeMap, BTreeSet};
use std::thread;

use serde::{Deserialize, Serialize};

use super::{
    effective_robustness, effective_robustness_table, evaluate_heldout, fit_on, group_summary,
    roster, BaselineFit, EvalError, EvaluationSpec, GroupSummary, HeldoutTable,
};
use crate::data::ModelRecord;
use crate::math::{self, Clamp, MathError, TauVariant};

/// Conventions behind the numbers in a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub r_squared_space: String,
    pub mae_units: String,
    pub effective_robustness_units: String,
    pub average_column: String,
    pub std_convention: String,
    pub clamp_eps: f64,
}

impl ReportMetadata {
    fn new(clamp: &Clamp) -> Self {
        Self {
            r_squared_space: "logit (unadjusted)".into(),
            mae_units: "accuracy percentage points".into(),
            effective_robustness_units: "signed accuracy percentage points".into(),
            average_column: "per-model mean across OOD test sets, then mean and std across the group"
                .into(),
            std_convention: "sample (n-1); groups with one model report 0 and singleton=true".into(),
            clamp_eps: clamp.eps(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitQuality {
    pub k: usize,
    pub r_squared: f64,
    pub mae_points: f64,
    pub n_models: usize,
}

/// Everything reported for one choice of ID test sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub metadata: ReportMetadata,
    pub id_testsets: Vec<String>,
    pub ood_testsets: Vec<String>,
    /// One fit per OOD test set, in `ood_testsets` order.
    pub fits: Vec<BaselineFit>,
    /// Roster models only.
    pub per_model: BTreeMap<String, BTreeMap<String, f64>>,
    pub group_summary: GroupSummary,
    pub fit_quality: BTreeMap<String, FitQuality>,
    /// Models the roster did not admit.
    pub heldout: HeldoutTable,
}

/// Order-preserving map over `items` on up to `workers` threads.
fn par_map<T: Sync, R: Send>(
    items: &[T],
    workers: usize,
    f: impl Fn(&T) -> R + Sync,
) -> Vec<R> {
    if workers <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(|| c.iter().map(&f).collect::<Vec<R>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

/// Fits every OOD test set and assembles the full report.
pub fn evaluate(
    records: &[ModelRecord],
    spec: &EvaluationSpec,
    workers: usize,
) -> Result<RobustnessReport, EvalError> {
    spec.validate()?;
    let members = roster(records, &spec.roster);
    let fits = par_map(&spec.ood_testsets, workers, |ood| fit_on(&members, spec, ood))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;

    let per_model = effective_robustness_table(&members, &fits, &spec.clamp)?;
    let membership: BTreeMap<String, String> = members
        .iter()
        .map(|r| (r.model_id.clone(), r.group.clone()))
        .collect();
    let groups: Vec<String> = if spec.groups.is_empty() {
        membership.values().cloned().collect::<BTreeSet<_>>().into_iter().collect()
    } else {
        spec.groups.clone()
    };
    let group_summary = group_summary(&per_model, &membership, &groups, &spec.ood_testsets)?;

    let fit_quality = fits
        .iter()
        .map(|f| {
            let q = FitQuality {
                k: f.k(),
                r_squared: f.diagnostics.r_squared,
                mae_points: f.diagnostics.mae_points,
                n_models: f.diagnostics.n_models,
            };
            (f.ood_testset.clone(), q)
        })
        .collect();

    let mut outside: Vec<&ModelRecord> = records.iter().filter(|r| !spec.roster.admits(r)).collect();
    outside.sort_by(|a, b| a.model_id.cmp(&b.model_id));
    let heldout = evaluate_heldout(&outside, &fits, &spec.clamp)?;

    Ok(RobustnessReport {
        metadata: ReportMetadata::new(&spec.clamp),
        id_testsets: spec.id_testsets.clone(),
        ood_testsets: spec.ood_testsets.clone(),
        fits,
        per_model,
        group_summary,
        fit_quality,
        heldout,
    })
}

/// Kendall tau between single-ID and multi-ID effective robustness of `records`.
pub fn ranking_agreement(
    records: &[&ModelRecord],
    fit_single: &BaselineFit,
    fit_multi: &BaselineFit,
    ood: &str,
    clamp: &Clamp,
    variant: TauVariant,
) -> Result<f64, EvalError> {
    if fit_single.k() != 1 {
        return Err(EvalError::FitMismatch(format!(
            "single-ID fit has {} ID test sets",
            fit_single.k()
        )));
    }
    if fit_multi.k() < 2 {
        return Err(EvalError::FitMismatch("multi-ID fit needs at least 2 ID test sets".into()));
    }
    for f in [fit_single, fit_multi] {
        if f.ood_testset != ood {
            return Err(EvalError::FitMismatch(format!(
                "fit targets `{}`, expected `{ood}`",
                f.ood_testset
            )));
        }
    }
    let single = records
        .iter()
        .map(|r| effective_robustness(r, fit_single, clamp))
        .collect::<Result<Vec<_>, _>>()?;
    let multi = records
        .iter()
        .map(|r| effective_robustness(r, fit_multi, clamp))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(math::kendall_tau_with(&single, &multi, variant)?)
}

/// MAE on one group's models under fits that exclude and include that group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub ood_testset: String,
    pub group: String,
    pub n_models: usize,
    pub mae_excluded: f64,
    pub mae_included: f64,
}

pub fn ablate_fit(
    records: &[ModelRecord],
    spec: &EvaluationSpec,
    exclude_group: &str,
) -> Result<Vec<AblationRow>, EvalError> {
    spec.validate()?;
    let mut targets: Vec<&ModelRecord> = records.iter().filter(|r| r.group == exclude_group).collect();
    if targets.is_empty() {
        return Err(EvalError::EmptyGroup(exclude_group.to_string()));
    }
    targets.sort_by(|a, b| a.model_id.cmp(&b.model_id));

    let mut without = roster(records, &spec.roster);
    without.retain(|r| r.group != exclude_group);
    if without.len() < spec.k() + 1 {
        return Err(MathError::TooFewModels {
            n: without.len(),
            k: spec.k(),
        }
        .into());
    }
    let mut with = without.clone();
    with.extend(targets.iter().copied());
    with.sort_by(|a, b| a.model_id.cmp(&b.model_id));

    let mae = |fit: &BaselineFit| -> Result<f64, EvalError> {
        let total = targets
            .iter()
            .map(|r| effective_robustness(r, fit, &spec.clamp).map(f64::abs))
            .sum::<Result<f64, _>>()?;
        Ok(total / targets.len() as f64)
    };
    spec.ood_testsets
        .iter()
        .map(|ood| {
            Ok(AblationRow {
                ood_testset: ood.clone(),
                group: exclude_group.to_string(),
                n_models: targets.len(),
                mae_excluded: mae(&fit_on(&without, spec, ood)?)?,
                mae_included: mae(&fit_on(&with, spec, ood)?)?,
            })
        })
        .collect()
}

/// Separate fits per training group on the roster, e.g. one line per family.
pub fn fit_per_group(
    records: &[ModelRecord],
    spec: &EvaluationSpec,
    ood: &str,
) -> Result<BTreeMap<String, BaselineFit>, EvalError> {
    let mut by_group: BTreeMap<&str, Vec<&ModelRecord>> = BTreeMap::new();
    for r in roster(records, &spec.roster) {
        by_group.entry(&r.group).or_default().push(r);
    }
    by_group
        .into_iter()
        .map(|(g, members)| Ok((g.to_string(), fit_on(&members, spec, ood)?)))
        .collect()
}
