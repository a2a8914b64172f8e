mod common;

use std::collections::BTreeMap;

use common::{box_population, spec, strings, ID_A, ID_B, OOD};
use effrob::data::ModelRecord;
use effrob::evaluation::{
    ablate_fit, effective_robustness, evaluate, evaluate_heldout, fit_baseline, fit_per_group, group_summary,
    EvalError, AVERAGE_COLUMN,
};
use effrob::math::{logit, Clamp, MathError};
use effrob::synthetic::generate;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn more_regressors_never_lower_r_squared(seed in any::<u64>(), sigma in 0.01f64..0.5, n in 6usize..80) {
        let pop = generate(&box_population(seed, sigma, n, [0.6, 0.3], -0.1)).unwrap();
        let multi = fit_baseline(&pop, &spec(&[ID_A, ID_B]), OOD).unwrap();
        for single in [ID_A, ID_B] {
            let s = fit_baseline(&pop, &spec(&[single]), OOD).unwrap();
            prop_assert!(multi.diagnostics.r_squared >= s.diagnostics.r_squared - 1e-12);
        }
    }

    #[test]
    fn record_order_does_not_matter(seed in any::<u64>(), rot in 0usize..30) {
        let pop = generate(&box_population(seed, 0.1, 30, [0.6, 0.3], -0.1)).unwrap();
        let mut shuffled = pop.clone();
        shuffled.rotate_left(rot);
        shuffled.reverse();
        let s = spec(&[ID_A, ID_B]);
        prop_assert_eq!(fit_baseline(&pop, &s, OOD).unwrap(), fit_baseline(&shuffled, &s, OOD).unwrap());
    }

    #[test]
    fn worker_count_does_not_matter(seed in any::<u64>(), workers in 1usize..6) {
        let pop = generate(&box_population(seed, 0.1, 30, [0.6, 0.3], -0.1)).unwrap();
        let mut s = spec(&[ID_A, ID_B]);
        s.ood_testsets = strings(&[OOD, ID_B]);
        s.id_testsets = strings(&[ID_A]);
        prop_assert_eq!(evaluate(&pop, &s, 1).unwrap(), evaluate(&pop, &s, workers).unwrap());
    }

    #[test]
    fn heldout_mae_is_mean_absolute_er(seed in any::<u64>()) {
        let pop = generate(&box_population(seed, 0.2, 40, [0.6, 0.3], -0.1)).unwrap();
        let (fit_set, held): (Vec<_>, Vec<_>) = pop.iter().enumerate().partition(|(i, _)| i % 4 != 0);
        let fit_records: Vec<ModelRecord> = fit_set.into_iter().map(|(_, r)| r.clone()).collect();
        let held: Vec<&ModelRecord> = held.into_iter().map(|(_, r)| r).collect();
        let s = spec(&[ID_A, ID_B]);
        let fit = fit_baseline(&fit_records, &s, OOD).unwrap();
        let table = evaluate_heldout(&held, std::slice::from_ref(&fit), &s.clamp).unwrap();
        let ers: Vec<f64> = held.iter().map(|r| effective_robustness(r, &fit, &s.clamp).unwrap()).collect();
        let mae = ers.iter().map(|e| e.abs()).sum::<f64>() / ers.len() as f64;
        let stat = table.families["pop"][OOD];
        prop_assert!((stat.mae_points - mae).abs() < 1e-12);
        prop_assert!(stat.mae_points >= stat.effective_robustness.mean.abs() - 1e-12);
    }
}

#[test]
fn single_id_matches_a_direct_line_fit() {
    let pop = generate(&box_population(5, 0.1, 50, [0.8, 0.1], 0.2)).unwrap();
    let fit = fit_baseline(&pop, &spec(&[ID_A]), OOD).unwrap();
    let xs: Vec<f64> = pop.iter().map(|r| logit(r.accuracy(ID_A).unwrap())).collect();
    let ys: Vec<f64> = pop.iter().map(|r| logit(r.accuracy(OOD).unwrap())).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    assert!((fit.model.weights()[0] - slope).abs() < 1e-12);
    assert!((fit.model.intercept() - (my - slope * mx)).abs() < 1e-12);
}

#[test]
fn too_few_models_is_reported() {
    let pop = generate(&box_population(1, 0.0, 3, [0.5, 0.5], 0.0)).unwrap();
    let err = fit_baseline(&pop[..2], &spec(&[ID_A, ID_B]), OOD).unwrap_err();
    assert!(matches!(err, EvalError::Math(MathError::TooFewModels { n: 2, k: 2 })));
}

#[test]
fn excluded_groups_leave_the_roster() {
    let mut pop = generate(&box_population(2, 0.1, 20, [0.5, 0.5], 0.0)).unwrap();
    for r in pop.iter_mut().take(5) {
        r.group = "other".into();
    }
    let mut s = spec(&[ID_A, ID_B]);
    s.roster.exclude_groups.insert("other".into());
    let fit = fit_baseline(&pop, &s, OOD).unwrap();
    assert_eq!(fit.fitted_model_ids.len(), 15);
    let report = evaluate(&pop, &s, 1).unwrap();
    assert_eq!(report.per_model.len(), 15);
    assert_eq!(report.heldout.per_model.len(), 5);
}

#[test]
fn average_column_averages_models_first() {
    let per_model = BTreeMap::from([
        ("m1".to_string(), BTreeMap::from([("o1".to_string(), 1.0), ("o2".to_string(), 3.0)])),
        ("m2".to_string(), BTreeMap::from([("o1".to_string(), 5.0), ("o2".to_string(), 7.0)])),
        ("m3".to_string(), BTreeMap::from([("o1".to_string(), 2.0), ("o2".to_string(), 2.0)])),
    ]);
    let membership = BTreeMap::from([
        ("m1".to_string(), "g".to_string()),
        ("m2".to_string(), "g".to_string()),
        ("m3".to_string(), "h".to_string()),
    ]);
    let s = group_summary(&per_model, &membership, &strings(&["g", "h"]), &strings(&["o1", "o2"])).unwrap();
    let avg = s["g"][AVERAGE_COLUMN];
    assert_eq!(avg.mean, 4.0);
    assert!((avg.std - 8.0f64.sqrt()).abs() < 1e-12);
    assert_eq!(s["g"]["o1"].mean, 3.0);
    assert!(s["h"]["o1"].singleton);
    assert_eq!(s["h"]["o1"].std, 0.0);
}

#[test]
fn per_group_fits_cover_every_group() {
    let pop = common::box_population(3, 0.05, 40, [0.5, 0.5], 0.0);
    let mut records = generate(&pop).unwrap();
    for r in records.iter_mut().step_by(2) {
        r.group = "even".into();
    }
    let fits = fit_per_group(&records, &spec(&[ID_A]), OOD).unwrap();
    assert_eq!(fits.keys().cloned().collect::<Vec<_>>(), strings(&["even", "pop"]));
    assert!(fits.values().all(|f| f.fitted_model_ids.len() == 20));
}

#[test]
fn ablation_includes_and_excludes_the_group() {
    let mut spec_pop = box_population(4, 0.05, 60, [0.6, 0.3], 0.0);
    let mut shifted = spec_pop.groups[0].clone();
    shifted.label = "shifted".into();
    shifted.target_offset = 0.6;
    shifted.weight = 0.25;
    spec_pop.groups.push(shifted);
    let pop = generate(&spec_pop).unwrap();
    let rows = ablate_fit(&pop, &spec(&[ID_A, ID_B]), "shifted").unwrap();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].mae_excluded >= rows[0].mae_included);
    assert_eq!(rows[0].n_models, pop.iter().filter(|r| r.group == "shifted").count());
    assert!(matches!(
        ablate_fit(&pop, &spec(&[ID_A]), "nobody"),
        Err(EvalError::EmptyGroup(_))
    ));
}

#[test]
fn clamped_accuracies_still_evaluate() {
    let recs: Vec<ModelRecord> = (0..6)
        .map(|i| {
            let a = i as f64 / 5.0;
            common::record(&format!("m{i}"), "g", &[(ID_A, a), (OOD, a * 0.9)])
        })
        .collect();
    let fit = fit_baseline(&recs, &spec(&[ID_A]), OOD).unwrap();
    for r in &recs {
        assert!(effective_robustness(r, &fit, &Clamp::default()).unwrap().is_finite());
    }
}
