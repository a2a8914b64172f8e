//! Output formatting: fixed-precision structured files and plain-text tables.

use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use super::CliError;

/// Significant digits kept in report files.
pub const REPORT_SIG_DIGITS: usize = 6;

pub fn round_sig(x: f64, digits: usize) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let s = format!("{:.*e}", digits.saturating_sub(1), x);
    let r: f64 = s.parse().expect("formatted float parses");
    // normalize -0.0
    r + 0.0
}

/// Rounds every floating-point number in a JSON tree.
pub fn round_json(v: Value, digits: usize) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = round_sig(n.as_f64().expect("f64"), digits);
            serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(|x| round_json(x, digits)).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, x)| (k, round_json(x, digits))).collect()),
        other => other,
    }
}

/// Pretty JSON with floats at [`REPORT_SIG_DIGITS`].
pub fn report_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let v = serde_json::to_value(value).map_err(|e| CliError::Compute(e.to_string()))?;
    let mut s = serde_json::to_string_pretty(&round_json(v, REPORT_SIG_DIGITS))
        .map_err(|e| CliError::Compute(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Pretty JSON with exact (shortest round-trip) floats.
pub fn exact_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Compute(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::Compute(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Compute(format!("{}: {e}", path.display())))
}

/// Keeps test-set names usable as file names.
pub fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-+".contains(c) { c } else { '_' })
        .collect()
}

pub fn fixed(x: f64, decimals: usize) -> String {
    let s = format!("{x:.decimals$}");
    // "-0.00" reads as a sign where there is none
    if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}

pub fn pm(mean: f64, std: f64) -> String {
    format!("{} ± {}", fixed(mean, 2), fixed(std, 2))
}

/// A titled table rendered with `|` separators and padded columns.
#[derive(Debug, Clone)]
pub struct TextTable {
    pub title: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl TextTable {
    pub fn new(title: impl Into<String>, header: Vec<String>) -> Self {
        Self {
            title: title.into(),
            header,
            rows: Vec::new(),
        }
    }

    pub fn render(&self) -> String {
        let widths: Vec<usize> = (0..self.header.len())
            .map(|i| {
                self.rows
                    .iter()
                    .map(|r| r[i].chars().count())
                    .chain(std::iter::once(self.header[i].chars().count()))
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |cells: &[String]| {
            let padded: Vec<String> = cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
                .collect();
            format!("| {} |\n", padded.join(" | "))
        };
        let mut out = format!("## {}\n\n", self.title);
        out.push_str(&line(&self.header));
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        out.push_str(&format!("|-{}-|\n", rule.join("-|-")));
        for r in &self.rows {
            out.push_str(&line(r));
        }
        out.push('\n');
        out
    }
}

/// Reads back tables produced by [`TextTable::render`].
pub fn parse_tables(text: &str) -> Vec<TextTable> {
    let mut out: Vec<TextTable> = Vec::new();
    let cells = |l: &str| -> Vec<String> {
        l.trim()
            .trim_start_matches('|')
            .trim_end_matches('|')
            .split(" | ")
            .map(|c| c.trim().to_string())
            .collect()
    };
    let mut lines = text.lines().peekable();
    while let Some(l) = lines.next() {
        if let Some(title) = l.strip_prefix("## ") {
            let mut t = TextTable::new(title, Vec::new());
            lines.next_if(|l| l.is_empty());
            if let Some(h) = lines.next() {
                t.header = cells(h);
            }
            lines.next(); // rule
            while let Some(r) = lines.next_if(|l| l.starts_with('|')) {
                t.rows.push(cells(r));
            }
            out.push(t);
        }
    }
    out
}
