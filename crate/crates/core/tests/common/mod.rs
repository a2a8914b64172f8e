#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use effrob::data::ModelRecord;
use effrob::evaluation::EvaluationSpec;
use effrob::labeler::{self, CaptionRecord, ClassSynonyms};
use effrob::math::LinearModel;
use effrob::synthetic::{GroupSpec, IdSampler, PopulationSpec};

/// Least squares via the normal equations `(XᵀX)β = Xᵀy`, solved by Gaussian
/// elimination with partial pivoting. Returns weights followed by intercept.
pub fn normal_equations(design: &[Vec<f64>], targets: &[f64]) -> Vec<f64> {
    let p = design[0].len() + 1;
    let row = |i: usize| -> Vec<f64> {
        let mut r = design[i].clone();
        r.push(1.0);
        r
    };
    let mut a = vec![vec![0.0; p + 1]; p];
    for (i, &y) in targets.iter().enumerate() {
        let x = row(i);
        for r in 0..p {
            for c in 0..p {
                a[r][c] += x[r] * x[c];
            }
            a[r][p] += x[r] * y;
        }
    }
    for col in 0..p {
        let pivot = (col..p)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        let pivot_row = a[col].clone();
        for row in a.iter_mut().skip(col + 1) {
            let f = row[col] / pivot_row[col];
            for (x, p) in row.iter_mut().zip(&pivot_row).skip(col) {
                *x -= f * p;
            }
        }
    }
    let mut beta = vec![0.0; p];
    for r in (0..p).rev() {
        let s: f64 = (r + 1..p).map(|c| a[r][c] * beta[c]).sum();
        beta[r] = (a[r][p] - s) / a[r][r];
    }
    beta
}

/// Pair counts over all `i < j`.
#[derive(Debug, Default, Clone, Copy)]
pub struct PairCounts {
    pub concordant: i64,
    pub discordant: i64,
    pub tied_a_only: i64,
    pub tied_b_only: i64,
    pub tied_both: i64,
}

pub fn count_pairs(a: &[f64], b: &[f64]) -> PairCounts {
    let mut c = PairCounts::default();
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            let da = a[i] - a[j];
            let db = b[i] - b[j];
            match (da == 0.0, db == 0.0) {
                (true, true) => c.tied_both += 1,
                (true, false) => c.tied_a_only += 1,
                (false, true) => c.tied_b_only += 1,
                _ if (da > 0.0) == (db > 0.0) => c.concordant += 1,
                _ => c.discordant += 1,
            }
        }
    }
    c
}

pub fn brute_tau_a(a: &[f64], b: &[f64]) -> f64 {
    let c = count_pairs(a, b);
    let n0 = (a.len() * (a.len() - 1) / 2) as f64;
    (c.concordant - c.discordant) as f64 / n0
}

pub fn brute_tau_b(a: &[f64], b: &[f64]) -> f64 {
    let c = count_pairs(a, b);
    let untied_a = c.concordant + c.discordant + c.tied_b_only;
    let untied_b = c.concordant + c.discordant + c.tied_a_only;
    (c.concordant - c.discordant) as f64 / ((untied_a as f64) * (untied_b as f64)).sqrt()
}

pub fn brute_expit(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn brute_logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn record(id: &str, group: &str, accs: &[(&str, f64)]) -> ModelRecord {
    accs.iter()
        .fold(ModelRecord::new(id, group, true), |r, (t, a)| r.with_accuracy(*t, *a))
}

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn caption_fixture() -> (Vec<CaptionRecord>, Vec<ClassSynonyms>) {
    let corpus = labeler::load_corpus(&fixture("captions.tsv")).unwrap();
    let classes = labeler::load_synonyms(&fixture("synonyms.tsv")).unwrap();
    (corpus, classes)
}

/// Labels expected for the caption fixture in fulltext mode.
pub const EXPECTED_LABELS: &[(&str, &str)] = &[
    ("b01", "bird"),
    ("b02", "bird"),
    ("b03", "bird"),
    ("c01", "cat"),
    ("c02", "cat"),
    ("c03", "cat"),
    ("c04", "cat"),
    ("c05", "cat"),
    ("c06", "cat"),
    ("d01", "dog"),
    ("d02", "dog"),
    ("d03", "dog"),
    ("d04", "dog"),
    ("d05", "dog"),
    ("d06", "dog"),
    ("d07", "dog"),
    ("r01", "car"),
    ("r02", "car"),
    ("r03", "car"),
    ("r04", "car"),
    ("r05", "car"),
    ("r06", "car"),
];

pub const AMBIGUOUS: &[&str] = &["a01", "a02", "a03", "a04"];

pub const ID_A: &str = "id-a";
pub const ID_B: &str = "id-b";
pub const OOD: &str = "ood";

/// Two-ID population on a box of ID logits in [-2, 2]².
pub fn box_population(seed: u64, sigma: f64, n: usize, weights: [f64; 2], intercept: f64) -> PopulationSpec {
    PopulationSpec {
        truth: LinearModel::new(weights.to_vec(), intercept).unwrap(),
        noise_sigma: sigma,
        n_models: n,
        groups: vec![GroupSpec {
            label: "pop".into(),
            weight: 1.0,
            sampler: IdSampler::Box {
                low: vec![-2.0, -2.0],
                high: vec![2.0, 2.0],
            },
            in_fit: true,
            target_offset: 0.0,
        }],
        id_testsets: vec![ID_A.into(), ID_B.into()],
        ood_testset: OOD.into(),
        seed,
        clamp_eps: effrob::math::DEFAULT_CLAMP_EPS,
    }
}

pub fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

pub fn spec(ids: &[&str]) -> EvaluationSpec {
    EvaluationSpec::new(strings(ids), strings(&[OOD])).unwrap()
}

/// Runs the CLI binary with `args` from `dir`; returns (exit code, stdout, stderr).
pub fn run_cli(dir: &Path, args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_effrob"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

/// Relative path → bytes for every file under `root`.
pub fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

/// Config for the simulate → fit → eval → plotdata pipeline on the
/// contradiction scenario.
pub const SCENARIO_CONFIG: &str = r#"
output_dir = "out"
workers = 2

[data]
accuracy_tables = ["population.csv"]

[evaluation]
groups = ["family-a", "family-b"]
ablate_groups = ["family-b"]
ranking = [{ group = "family-a", single_id = "id-a" }]

[simulate]
output = "population.csv"
scenario = "contradiction"
seed = 7
"#;
