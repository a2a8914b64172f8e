//! Text formats for accuracy tables, predictions, test sets and class maps.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ClassId, ClassMap, DataError, ModelRecord, Role, TestSetSpec};

const UNITS_PRAGMA: &str = "#units=";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Units {
    #[default]
    Fraction,
    Percent,
}

/// A parsed accuracy table: accuracy columns in file order plus one record per row.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyTable {
    pub columns: Vec<(Role, String)>,
    pub records: Vec<ModelRecord>,
}

impl AccuracyTable {
    pub fn role_of(&self, testset: &str) -> Option<Role> {
        self.columns
            .iter()
            .find(|(_, t)| t == testset)
            .map(|(r, _)| *r)
    }

    pub fn testsets(&self, role: Role) -> impl Iterator<Item = &str> {
        self.columns
            .iter()
            .filter(move |(r, _)| *r == role)
            .map(|(_, t)| t.as_str())
    }
}

fn read(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_err(path: &str, line: u64, column: &str, message: impl Into<String>) -> DataError {
    DataError::Parse {
        path: path.to_string(),
        line,
        column: column.to_string(),
        message: message.into(),
    }
}

fn csv_err(path: &str, line_offset: u64, e: csv::Error) -> DataError {
    let line = e.position().map_or(0, |p| p.line()) + line_offset;
    parse_err(path, line, "", e.to_string())
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes())
}

pub fn load_accuracy_table(path: &Path) -> Result<AccuracyTable, DataError> {
    parse_accuracy_table(&read(path)?, &path.display().to_string())
}

/// Parses an accuracy table. `source` only labels error messages.
pub fn parse_accuracy_table(text: &str, source: &str) -> Result<AccuracyTable, DataError> {
    // leading '#' lines: an optional units pragma plus comments
    let mut units = Units::Fraction;
    let mut skipped = 0u64;
    let mut body = text;
    while let Some(line) = body.lines().next().filter(|l| l.trim_start().starts_with('#')) {
        skipped += 1;
        if let Some(u) = line.trim().strip_prefix(UNITS_PRAGMA) {
            units = match u.trim() {
                "fraction" => Units::Fraction,
                "percent" => Units::Percent,
                other => {
                    return Err(parse_err(source, skipped, "#units", format!("unknown units `{other}`")))
                }
            };
        }
        body = body.split_once('\n').map_or("", |(_, rest)| rest);
    }

    let mut rows = csv_reader(body).into_records();
    let header = match rows.next() {
        Some(h) => h.map_err(|e| csv_err(source, skipped, e))?,
        None => return Err(parse_err(source, skipped + 1, "", "missing header row")),
    };
    let header_line = header.position().map_or(1, |p| p.line()) + skipped;
    let names: Vec<&str> = header.iter().collect();
    let find = |name: &str| {
        names
            .iter()
            .position(|&n| n == name)
            .ok_or_else(|| parse_err(source, header_line, name, "required column missing"))
    };
    let (c_id, c_group, c_fit) = (find("model_id")?, find("group")?, find("in_fit")?);

    let mut columns: Vec<(usize, Role, String)> = Vec::new();
    for (i, name) in names.iter().enumerate() {
        if [c_id, c_group, c_fit].contains(&i) {
            continue;
        }
        let (role, testset) = match name.split_once(':') {
            Some(("id", t)) if !t.is_empty() => (Role::Id, t),
            Some(("ood", t)) if !t.is_empty() => (Role::Ood, t),
            _ => {
                return Err(parse_err(
                    source,
                    header_line,
                    name,
                    "accuracy columns must be named id:<testset> or ood:<testset>",
                ))
            }
        };
        if columns.iter().any(|(_, _, t)| t == testset) {
            return Err(parse_err(source, header_line, name, "duplicate test set column"));
        }
        columns.push((i, role, testset.to_string()));
    }

    let mut seen = BTreeSet::new();
    let mut records = Vec::new();
    for row in rows {
        let row = row.map_err(|e| csv_err(source, skipped, e))?;
        let line = row.position().map_or(0, |p| p.line()) + skipped;
        let cell = |i: usize| row.get(i).unwrap_or("");
        let model_id = cell(c_id);
        if model_id.is_empty() {
            return Err(parse_err(source, line, "model_id", "empty model id"));
        }
        let in_fit = match cell(c_fit).to_ascii_lowercase().as_str() {
            "true" | "1" | "yes" => true,
            "false" | "0" | "no" => false,
            other => return Err(parse_err(source, line, "in_fit", format!("not a boolean: `{other}`"))),
        };
        let mut record = ModelRecord::new(model_id, cell(c_group), in_fit);
        for (i, role, testset) in &columns {
            let raw = cell(*i);
            if raw.is_empty() {
                continue;
            }
            let col = format!("{}:{testset}", role.prefix());
            let value: f64 = raw
                .parse()
                .map_err(|_| parse_err(source, line, &col, format!("not a number: `{raw}`")))?;
            let acc = match units {
                Units::Fraction => value,
                Units::Percent => value / 100.0,
            };
            if !(0.0..=1.0).contains(&acc) {
                return Err(parse_err(source, line, &col, format!("accuracy `{raw}` outside the valid range")));
            }
            record.accuracies.insert(testset.clone(), acc);
        }
        if !seen.insert(record.model_id.clone()) {
            return Err(DataError::DuplicateModelId(record.model_id));
        }
        records.push(record);
    }
    Ok(AccuracyTable {
        columns: columns.into_iter().map(|(_, r, t)| (r, t)).collect(),
        records,
    })
}

/// Renders a table in fraction units. Floats use the shortest exact decimal
/// form, so a write/parse cycle reproduces every accuracy bit for bit.
pub fn write_accuracy_table(table: &AccuracyTable) -> String {
    let mut out = format!("{UNITS_PRAGMA}fraction\n");
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let mut header = vec!["model_id".to_string(), "group".into(), "in_fit".into()];
    header.extend(table.columns.iter().map(|(r, t)| format!("{}:{t}", r.prefix())));
    // writing to a Vec cannot fail
    w.write_record(&header).expect("in-memory write");
    for r in &table.records {
        let mut row = vec![r.model_id.clone(), r.group.clone(), r.in_fit.to_string()];
        row.extend(
            table
                .columns
                .iter()
                .map(|(_, t)| r.accuracies.get(t).map_or(String::new(), |a| a.to_string())),
        );
        w.write_record(&row).expect("in-memory write");
    }
    out.push_str(&String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8"));
    out
}

fn two_column_rows(text: &str, source: &str, header: [&str; 2]) -> Result<Vec<(String, String)>, DataError> {
    let mut out = Vec::new();
    for row in csv_reader(text).into_records() {
        let row = row.map_err(|e| csv_err(source, 0, e))?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != 2 {
            return Err(parse_err(source, line, "", format!("expected 2 fields, found {}", row.len())));
        }
        if out.is_empty() && row.get(0) == Some(header[0]) && row.get(1) == Some(header[1]) {
            continue;
        }
        out.push((row[0].to_string(), row[1].to_string()));
    }
    Ok(out)
}

/// Reads `example_id,predicted_class` lines.
pub fn load_predictions(path: &Path) -> Result<Vec<(String, ClassId)>, DataError> {
    two_column_rows(&read(path)?, &path.display().to_string(), ["example_id", "predicted_class"])
}

/// One `model_id × testset_id → predictions file` binding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub model_id: String,
    pub testset_id: String,
    pub path: PathBuf,
}

/// Reads a `model_id,testset_id,path` manifest; relative paths resolve against
/// the manifest's directory.
pub fn load_prediction_manifest(path: &Path) -> Result<Vec<ManifestEntry>, DataError> {
    let text = read(path)?;
    let source = path.display().to_string();
    let base = path.parent().unwrap_or(Path::new(""));
    let mut out = Vec::new();
    for row in csv_reader(&text).into_records() {
        let row = row.map_err(|e| csv_err(&source, 0, e))?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != 3 {
            return Err(parse_err(&source, line, "", format!("expected 3 fields, found {}", row.len())));
        }
        if out.is_empty() && &row[0] == "model_id" {
            continue;
        }
        out.push(ManifestEntry {
            model_id: row[0].to_string(),
            testset_id: row[1].to_string(),
            path: base.join(&row[2]),
        });
    }
    Ok(out)
}

pub fn load_class_map(path: &Path) -> Result<ClassMap, DataError> {
    let rows = two_column_rows(&read(path)?, &path.display().to_string(), ["source_class", "target_class"])?;
    ClassMap::from_pairs(rows)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TestSetDoc {
    testset_id: String,
    role: Role,
    classes: Vec<ClassId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels_file: Option<String>,
}

/// Loads a TOML test-set document and its optional `example_id,class` labels file.
pub fn load_testset(path: &Path) -> Result<TestSetSpec, DataError> {
    let source = path.display().to_string();
    let doc: TestSetDoc =
        toml::from_str(&read(path)?).map_err(|e| parse_err(&source, 0, "", e.to_string()))?;
    let labels = match &doc.labels_file {
        Some(file) => {
            let lp = path.parent().unwrap_or(Path::new("")).join(file);
            let rows = two_column_rows(&read(&lp)?, &lp.display().to_string(), ["example_id", "class"])?;
            let mut labels = BTreeMap::new();
            for (ex, c) in rows {
                if labels.insert(ex.clone(), c).is_some() {
                    return Err(parse_err(&lp.display().to_string(), 0, "example_id", format!("duplicate example `{ex}`")));
                }
            }
            Some(labels)
        }
        None => None,
    };
    TestSetSpec::new(doc.testset_id, doc.role, doc.classes, labels)
}

/// TOML document for `spec`; `labels_file` is recorded when labels exist.
pub fn write_testset(spec: &TestSetSpec, labels_file: Option<&str>) -> String {
    let doc = TestSetDoc {
        testset_id: spec.testset_id.clone(),
        role: spec.role,
        classes: spec.classes.iter().cloned().collect(),
        labels_file: spec.labels.as_ref().and(labels_file).map(str::to_string),
    };
    toml::to_string(&doc).expect("test-set document serializes")
}

pub fn write_labels(labels: &BTreeMap<String, ClassId>) -> String {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(["example_id", "class"]).expect("in-memory write");
    for (ex, c) in labels {
        w.write_record([ex, c]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}
