use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::render::{exact_json, file_stem, fixed, pm, report_json, write_file, TextTable};
use super::CliError;
use crate::data::{
    self, filter_models, load_accuracy_table, load_class_map, load_prediction_manifest,
    load_predictions, load_testset, recompute_accuracy, subsample_classes, write_accuracy_table,
    AccuracyTable, ModelRecord, Role,
};
use crate::evaluation::{
    self, ablate_fit, fit_baseline, ranking_agreement, AblationRow, BaselineFit,
    RobustnessReport, AVERAGE_COLUMN,
};
use crate::labeler::{self, assign_label, build_test_set, match_classes};
use crate::math::{self, expit, Clamp};
use crate::synthetic;

fn compute<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Compute(e.to_string())
}

fn config<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Config(e.to_string())
}

/// Loads and merges the accuracy tables, recomputes accuracies from
/// predictions when a manifest is configured, then applies the accuracy filter.
pub fn load_records(cfg: &RunConfig) -> Result<AccuracyTable, CliError> {
    if cfg.data.accuracy_tables.is_empty() {
        return Err(CliError::Config("no accuracy tables configured".into()));
    }
    let mut merged = AccuracyTable {
        columns: Vec::new(),
        records: Vec::new(),
    };
    let mut ids = BTreeSet::new();
    for path in &cfg.data.accuracy_tables {
        let table = load_accuracy_table(&cfg.input(path)?).map_err(config)?;
        for (role, t) in table.columns {
            match merged.role_of(&t) {
                Some(r) if r != role => {
                    return Err(CliError::Config(format!("test set `{t}` is both ID and OOD across tables")))
                }
                Some(_) => {}
                None => merged.columns.push((role, t)),
            }
        }
        for r in table.records {
            if !ids.insert(r.model_id.clone()) {
                return Err(config(data::DataError::DuplicateModelId(r.model_id)));
            }
            merged.records.push(r);
        }
    }

    if let Some(manifest) = &cfg.data.prediction_manifest {
        apply_predictions(cfg, manifest, &mut merged.records)?;
    }
    if let Some(f) = &cfg.data.min_accuracy {
        merged.records = filter_models(&merged.records, &f.testset, f.threshold).map_err(compute)?;
    }
    Ok(merged)
}

fn apply_predictions(cfg: &RunConfig, manifest: &Path, records: &mut [ModelRecord]) -> Result<(), CliError> {
    let entries = load_prediction_manifest(&cfg.input(manifest)?).map_err(config)?;
    let mut testsets = BTreeMap::new();
    for p in &cfg.data.testsets {
        let t = load_testset(&cfg.input(p)?).map_err(config)?;
        testsets.insert(t.testset_id.clone(), t);
    }
    let mut maps = BTreeMap::new();
    for b in &cfg.data.class_maps {
        if !testsets.contains_key(&b.testset) {
            return Err(CliError::Config(format!("class map bound to unknown test set `{}`", b.testset)));
        }
        maps.insert(b.testset.clone(), load_class_map(&cfg.input(&b.path)?).map_err(config)?);
    }
    let shared = testsets
        .values()
        .map(|t| match maps.get(&t.testset_id) {
            Some(m) => t.mapped(m),
            None => Ok(t.clone()),
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(compute)?;
    let retained = subsample_classes(&shared).map_err(compute)?;

    let index: BTreeMap<String, usize> = records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.model_id.clone(), i))
        .collect();
    for e in entries {
        let &i = index
            .get(&e.model_id)
            .ok_or_else(|| CliError::Config(format!("manifest names unknown model `{}`", e.model_id)))?;
        if !testsets.contains_key(&e.testset_id) {
            return Err(CliError::Config(format!("manifest names unknown test set `{}`", e.testset_id)));
        }
        let preds = load_predictions(&e.path).map_err(config)?;
        records[i]
            .predictions
            .get_or_insert_with(BTreeMap::new)
            .insert(e.testset_id, preds);
    }
    for r in records.iter_mut() {
        let Some(preds) = &r.predictions else { continue };
        let bound: Vec<String> = preds.keys().cloned().collect();
        for t in bound {
            let acc = recompute_accuracy(r, &testsets[&t], &retained, maps.get(&t)).map_err(compute)?;
            r.accuracies.insert(t, acc);
        }
    }
    Ok(())
}

fn testsets_for(cfg: &RunConfig, table: &AccuracyTable) -> Result<(Vec<String>, Vec<String>), CliError> {
    let pick = |configured: &[String], role: Role| -> Vec<String> {
        if configured.is_empty() {
            table.testsets(role).map(str::to_string).collect()
        } else {
            configured.to_vec()
        }
    };
    let ids = pick(&cfg.evaluation.id_testsets, Role::Id);
    let oods = pick(&cfg.evaluation.ood_testsets, Role::Ood);
    if ids.is_empty() || oods.is_empty() {
        return Err(CliError::Config("need at least one ID and one OOD test set".into()));
    }
    Ok((ids, oods))
}

/// Single-ID setting per ID test set, then the full multi-ID setting when k ≥ 2.
fn settings(ids: &[String]) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = ids.iter().map(|t| vec![t.clone()]).collect();
    if ids.len() >= 2 {
        out.push(ids.to_vec());
    }
    out
}

fn setting_label(ids: &[String]) -> String {
    ids.join("+")
}

fn fit_path(out: &Path, ood: &str, ids: &[String]) -> PathBuf {
    out.join("fits")
        .join(file_stem(ood))
        .join(format!("{}.json", file_stem(&setting_label(ids))))
}

fn column_name(kind: &str, ids: &[String], total: usize) -> String {
    if ids.len() == 1 {
        format!("{kind} single[{}]", ids[0])
    } else if ids.len() == total {
        format!("{kind} multi")
    } else {
        format!("{kind} [{}]", setting_label(ids))
    }
}

#[derive(Debug, Serialize)]
struct FitQualityEntry {
    k: usize,
    r_squared: f64,
    mae_points: f64,
    n_models: usize,
}

/// Fits every OOD test set under every ID setting and writes the fit files
/// plus the fit-quality table.
pub fn cmd_fit(cfg: &RunConfig) -> Result<String, CliError> {
    let table = load_records(cfg)?;
    let (ids, oods) = testsets_for(cfg, &table)?;
    let base = cfg.evaluation_spec(ids.clone(), oods.clone())?;
    let out = cfg.output_dir();
    let settings = settings(&ids);

    let mut fits: BTreeMap<(usize, String), BaselineFit> = BTreeMap::new();
    for (si, setting) in settings.iter().enumerate() {
        let spec = base.with_id_testsets(setting.clone()).map_err(config)?;
        for ood in &oods {
            let fit = fit_baseline(&table.records, &spec, ood).map_err(compute)?;
            fits.insert((si, ood.clone()), fit);
        }
    }

    let mut header = vec!["test set".to_string()];
    header.extend(settings.iter().map(|s| column_name("R²", s, ids.len())));
    header.extend(settings.iter().map(|s| column_name("MAE", s, ids.len())));
    let mut text = TextTable::new("Fit quality (R² on logit scale, MAE in %)", header);
    let mut quality: BTreeMap<String, BTreeMap<String, FitQualityEntry>> = BTreeMap::new();
    for ood in &oods {
        let mut row = vec![ood.clone()];
        let per: Vec<&BaselineFit> = (0..settings.len()).map(|si| &fits[&(si, ood.clone())]).collect();
        row.extend(per.iter().map(|f| fixed(f.diagnostics.r_squared, 3)));
        row.extend(per.iter().map(|f| fixed(f.diagnostics.mae_points, 2)));
        text.rows.push(row);
        for f in per {
            quality.entry(ood.clone()).or_default().insert(
                setting_label(&f.id_testsets),
                FitQualityEntry {
                    k: f.k(),
                    r_squared: f.diagnostics.r_squared,
                    mae_points: f.diagnostics.mae_points,
                    n_models: f.diagnostics.n_models,
                },
            );
        }
    }

    for fit in fits.values() {
        write_file(&fit_path(&out, &fit.ood_testset, &fit.id_testsets), &exact_json(fit)?)?;
    }
    write_file(&out.join("fit_quality.json"), &report_json(&quality)?)?;
    let rendered = text.render();
    write_file(&out.join("fit_quality.txt"), &rendered)?;
    Ok(rendered)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRow {
    pub group: String,
    pub single_id: String,
    pub ood_testset: String,
    pub tau: f64,
}

/// Everything `eval` writes to `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub settings: Vec<RobustnessReport>,
    pub ablation: Vec<AblationRow>,
    pub ranking: Vec<RankingRow>,
}

/// Effective robustness reports for every ID setting, plus the configured
/// ablations and ranking comparisons.
pub fn cmd_eval(cfg: &RunConfig) -> Result<String, CliError> {
    let table = load_records(cfg)?;
    let (ids, oods) = testsets_for(cfg, &table)?;
    let base = cfg.evaluation_spec(ids.clone(), oods.clone())?;
    let records = &table.records;

    let mut reports = Vec::new();
    for setting in settings(&ids) {
        let spec = base.with_id_testsets(setting).map_err(config)?;
        reports.push(evaluation::evaluate(records, &spec, cfg.workers).map_err(compute)?);
    }

    let mut ablation = Vec::new();
    for g in &cfg.evaluation.ablate_groups {
        ablation.extend(ablate_fit(records, &base, g).map_err(compute)?);
    }

    let mut ranking = Vec::new();
    if !cfg.evaluation.ranking.is_empty() {
        if ids.len() < 2 {
            return Err(CliError::Config("ranking agreement needs at least two ID test sets".into()));
        }
        let multi = reports.last().expect("multi-ID setting present");
        for rc in &cfg.evaluation.ranking {
            let single = reports
                .iter()
                .find(|r| r.id_testsets == [rc.single_id.clone()])
                .ok_or_else(|| CliError::Config(format!("`{}` is not an ID test set", rc.single_id)))?;
            let mut members: Vec<&ModelRecord> = records
                .iter()
                .filter(|r| r.group == rc.group && base.roster.admits(r))
                .collect();
            members.sort_by(|a, b| a.model_id.cmp(&b.model_id));
            for (fs, fm) in single.fits.iter().zip(&multi.fits) {
                let tau = ranking_agreement(&members, fs, fm, &fs.ood_testset, &base.clamp, cfg.evaluation.tau_variant)
                    .map_err(compute)?;
                ranking.push(RankingRow {
                    group: rc.group.clone(),
                    single_id: rc.single_id.clone(),
                    ood_testset: fs.ood_testset.clone(),
                    tau,
                });
            }
        }
    }

    let output = EvalOutput {
        settings: reports,
        ablation,
        ranking,
    };
    let rendered = render_eval(&output);
    let out = cfg.output_dir();
    write_file(&out.join("report.json"), &report_json(&output)?)?;
    write_file(&out.join("report.txt"), &rendered)?;
    Ok(rendered)
}

fn render_eval(output: &EvalOutput) -> String {
    let mut text = String::new();
    for rep in &output.settings {
        let label = setting_label(&rep.id_testsets);
        let mut columns = rep.ood_testsets.clone();
        columns.push(AVERAGE_COLUMN.to_string());

        let mut header = vec!["group".to_string()];
        header.extend(columns.iter().cloned());
        let mut t = TextTable::new(format!("Effective robustness (%) [{label}]"), header);
        for (group, stats) in &rep.group_summary {
            let mut row = vec![group.clone()];
            row.extend(columns.iter().map(|c| pm(stats[c].mean, stats[c].std)));
            t.rows.push(row);
        }
        text.push_str(&t.render());

        let mut q = TextTable::new(
            format!("Fit quality [{label}]"),
            vec!["test set".into(), "R²".into(), "MAE".into(), "models".into()],
        );
        for ood in &rep.ood_testsets {
            let f = &rep.fit_quality[ood];
            q.rows.push(vec![ood.clone(), fixed(f.r_squared, 3), fixed(f.mae_points, 2), f.n_models.to_string()]);
        }
        text.push_str(&q.render());

        if !rep.heldout.families.is_empty() {
            let mut h = TextTable::new(
                format!("Held-out models (%) [{label}]"),
                vec!["family".into(), "test set".into(), "MAE".into(), "effective robustness".into()],
            );
            for (family, per) in &rep.heldout.families {
                for (ood, st) in per {
                    h.rows.push(vec![
                        family.clone(),
                        ood.clone(),
                        fixed(st.mae_points, 2),
                        pm(st.effective_robustness.mean, st.effective_robustness.std),
                    ]);
                }
            }
            text.push_str(&h.render());
        }

        let mut header = vec!["model".to_string()];
        header.extend(rep.ood_testsets.iter().cloned());
        let mut p = TextTable::new(format!("Per-model effective robustness (%) [{label}]"), header);
        for (model, row) in &rep.per_model {
            let mut cells = vec![model.clone()];
            cells.extend(rep.ood_testsets.iter().map(|o| fixed(row[o], 2)));
            p.rows.push(cells);
        }
        text.push_str(&p.render());
    }

    if !output.ablation.is_empty() {
        let mut a = TextTable::new(
            "Fit ablation: MAE (%) of a group excluded from / included in fitting",
            vec!["group".into(), "test set".into(), "models".into(), "excluded".into(), "included".into()],
        );
        for row in &output.ablation {
            a.rows.push(vec![
                row.group.clone(),
                row.ood_testset.clone(),
                row.n_models.to_string(),
                fixed(row.mae_excluded, 2),
                fixed(row.mae_included, 2),
            ]);
        }
        text.push_str(&a.render());
    }
    if !output.ranking.is_empty() {
        let mut r = TextTable::new(
            "Ranking agreement, single-ID vs multi-ID (Kendall tau)",
            vec!["group".into(), "single ID".into(), "test set".into(), "tau".into()],
        );
        for row in &output.ranking {
            r.rows.push(vec![row.group.clone(), row.single_id.clone(), row.ood_testset.clone(), fixed(row.tau, 4)]);
        }
        text.push_str(&r.render());
    }
    text
}

pub const PLOT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub model_id: String,
    pub in_fit: bool,
    pub id_accuracies: Vec<f64>,
    pub id_logits: Vec<f64>,
    pub ood_accuracy: f64,
    pub ood_logit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub id_logits: Vec<f64>,
    pub ood_logit: f64,
    pub ood_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneDoc {
    pub weights: Vec<f64>,
    pub intercept: f64,
    /// Logit grid coordinates per ID axis; the grid is their Cartesian product.
    pub axes: Vec<Vec<f64>>,
    pub grid: Vec<GridPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinePoint {
    pub id_logit: f64,
    pub id_accuracy: f64,
    pub ood_logit: f64,
    pub ood_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionDoc {
    pub id_testset: String,
    pub weight: f64,
    pub intercept: f64,
    pub line: Vec<LinePoint>,
}

/// Plot data for one OOD test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotDocument {
    pub schema_version: u32,
    pub ood_testset: String,
    pub id_testsets: Vec<String>,
    /// group → points.
    pub scatter: BTreeMap<String, Vec<ScatterPoint>>,
    pub plane: PlaneDoc,
    /// Single-ID lines, one per ID test set.
    pub projections: Vec<ProjectionDoc>,
}

fn load_fit(path: &Path) -> Result<BaselineFit, CliError> {
    let text = fs::read_to_string(path).map_err(|_| {
        CliError::Compute(format!("fit `{}` is missing; run `fit` first", path.display()))
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Compute(format!("{}: {e}", path.display())))
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
        .collect()
}

/// Evaluates the plane on the Cartesian product of `axes`.
pub fn plane_grid(model: &math::LinearModel, axes: &[Vec<f64>]) -> Vec<GridPoint> {
    let mut points: Vec<Vec<f64>> = vec![Vec::new()];
    for axis in axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&x| {
                    let mut q = p.clone();
                    q.push(x);
                    q
                })
            })
            .collect();
    }
    points
        .into_iter()
        .map(|id_logits| {
            let z = model.eval_logit(&id_logits).expect("axes match the model dimension");
            GridPoint {
                id_logits,
                ood_logit: z,
                ood_accuracy: expit(z),
            }
        })
        .collect()
}

/// Writes scatter, plane and projected-line data per OOD test set from the
/// stored fits.
pub fn cmd_plotdata(cfg: &RunConfig) -> Result<String, CliError> {
    let table = load_records(cfg)?;
    let (ids, oods) = testsets_for(cfg, &table)?;
    let clamp: Clamp = cfg.clamp();
    let out = cfg.output_dir();
    let logit = |a: f64| clamp.logit(a).map(|v| v.get()).map_err(compute);

    let mut summary = String::new();
    for ood in &oods {
        let plane_fit = load_fit(&fit_path(&out, ood, &ids))?;
        let singles = ids
            .iter()
            .map(|t| load_fit(&fit_path(&out, ood, std::slice::from_ref(t))))
            .collect::<Result<Vec<_>, _>>()?;

        let mut scatter: BTreeMap<String, Vec<ScatterPoint>> = BTreeMap::new();
        let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); ids.len()];
        let mut records: Vec<&ModelRecord> = table.records.iter().collect();
        records.sort_by(|a, b| a.model_id.cmp(&b.model_id));
        for r in records {
            let id_accuracies = ids
                .iter()
                .map(|t| r.accuracy(t))
                .collect::<Result<Vec<_>, _>>()
                .map_err(compute)?;
            let id_logits = id_accuracies.iter().map(|&a| logit(a)).collect::<Result<Vec<_>, _>>()?;
            for (range, &z) in ranges.iter_mut().zip(&id_logits) {
                *range = (range.0.min(z), range.1.max(z));
            }
            let ood_accuracy = r.accuracy(ood).map_err(compute)?;
            scatter.entry(r.group.clone()).or_default().push(ScatterPoint {
                model_id: r.model_id.clone(),
                in_fit: r.in_fit,
                id_accuracies,
                id_logits,
                ood_accuracy,
                ood_logit: logit(ood_accuracy)?,
            });
        }
        if scatter.is_empty() {
            return Err(CliError::Compute("no models to plot".into()));
        }

        let axes: Vec<Vec<f64>> = ranges
            .iter()
            .map(|&(lo, hi)| linspace(lo, hi, cfg.plot.grid_points))
            .collect();
        let projections = singles
            .iter()
            .zip(&ranges)
            .map(|(f, &(lo, hi))| {
                let (w, b) = (f.model.weights()[0], f.model.intercept());
                let line = linspace(lo, hi, cfg.plot.line_points)
                    .into_iter()
                    .map(|x| LinePoint {
                        id_logit: x,
                        id_accuracy: expit(x),
                        ood_logit: w * x + b,
                        ood_accuracy: expit(w * x + b),
                    })
                    .collect();
                ProjectionDoc {
                    id_testset: f.id_testsets[0].clone(),
                    weight: w,
                    intercept: b,
                    line,
                }
            })
            .collect();
        let doc = PlotDocument {
            schema_version: PLOT_SCHEMA_VERSION,
            ood_testset: ood.clone(),
            id_testsets: ids.clone(),
            scatter,
            plane: PlaneDoc {
                weights: plane_fit.model.weights().to_vec(),
                intercept: plane_fit.model.intercept(),
                grid: plane_grid(&plane_fit.model, &axes),
                axes,
            },
            projections,
        };
        let path = out.join("plotdata").join(format!("{}.json", file_stem(ood)));
        write_file(&path, &exact_json(&doc)?)?;
        summary.push_str(&format!("{}: {} grid points, {} projections\n", path.display(), doc.plane.grid.len(), doc.projections.len()));
    }
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSummary {
    pub n_records: usize,
    pub n_labeled: usize,
    pub n_ambiguous: usize,
    pub n_unmatched: usize,
    pub n_classes: usize,
    pub n_examples: usize,
    pub seed: u64,
}

/// Labels a caption corpus and writes the balanced test set, its labels and
/// the holdout manifest.
pub fn cmd_label(cfg: &RunConfig) -> Result<String, CliError> {
    let lc = cfg
        .label
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [label] section".into()))?;
    let corpus = labeler::load_corpus(&cfg.input(&lc.corpus)?).map_err(config)?;
    let classes = labeler::load_synonyms(&cfg.input(&lc.synonyms)?).map_err(config)?;
    if classes.is_empty() {
        return Err(CliError::Config("synonym file lists no classes".into()));
    }
    if lc.per_class == 0 || lc.per_class > lc.min_class_count {
        return Err(CliError::Config("per_class must be between 1 and min_class_count".into()));
    }

    let (mut ambiguous, mut unmatched) = (0, 0);
    let mut labeled = Vec::new();
    for rec in &corpus {
        match assign_label(rec, &classes, lc.mode) {
            Some(l) => labeled.push(l),
            None if match_classes(rec, &classes, lc.mode).is_empty() => unmatched += 1,
            None => ambiguous += 1,
        }
    }
    let built = build_test_set(&lc.testset_id, &labeled, lc.per_class, lc.min_class_count, lc.seed).map_err(compute)?;

    let dir = cfg.output_dir().join(&lc.output_subdir);
    let labels = built.testset.labels.as_ref().expect("built test sets carry labels");
    write_file(&dir.join("testset.toml"), &data::write_testset(&built.testset, Some("labels.csv")))?;
    write_file(&dir.join("labels.csv"), &data::write_labels(labels))?;
    write_file(&dir.join("holdout.txt"), &built.render_holdout())?;
    let summary = LabelSummary {
        n_records: corpus.len(),
        n_labeled: labeled.len(),
        n_ambiguous: ambiguous,
        n_unmatched: unmatched,
        n_classes: built.testset.classes.len(),
        n_examples: built.holdout.len(),
        seed: lc.seed,
    };
    write_file(&dir.join("label_summary.json"), &report_json(&summary)?)?;
    Ok(format!(
        "{} records: {} labeled, {} ambiguous, {} unmatched\ntest set `{}`: {} classes, {} examples\n",
        summary.n_records, summary.n_labeled, summary.n_ambiguous, summary.n_unmatched,
        lc.testset_id, summary.n_classes, summary.n_examples
    ))
}

/// Generates a synthetic population and writes it as an accuracy table.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<String, CliError> {
    let (spec, path) = cfg.population_spec()?;
    let records = synthetic::generate(&spec).map_err(config)?;
    let mut columns: Vec<(Role, String)> = spec.id_testsets.iter().map(|t| (Role::Id, t.clone())).collect();
    columns.push((Role::Ood, spec.ood_testset.clone()));
    let n = records.len();
    write_file(&path, &write_accuracy_table(&AccuracyTable { columns, records }))?;
    Ok(format!("wrote {n} models to {}\n", path.display()))
}
