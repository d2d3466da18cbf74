//! Aggregation of human pass/fail grades into per-category accuracy.
//!
//! Percentages are kept as exact pass/question counts and only rounded
//! (one decimal, half-up) when rendered.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qa_pipeline::Category;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradeRecord {
    pub id: String,
    pub category: String,
    pub model_id: String,
    pub k: usize,
    pub pass: u8,
}

#[derive(Debug, Error)]
pub enum GradingError {
    #[error("duplicate grade for question {id} ({model_id}, k={k})")]
    DuplicateGrade { id: String, model_id: String, k: usize },
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("pass must be 0 or 1, got {0}")]
    InvalidPass(u8),
    #[error("malformed CSV: {0}")]
    Csv(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for GradingError {
    fn from(e: csv::Error) -> Self {
        GradingError::Csv(e.to_string())
    }
}

/// Passes over questions asked.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub passes: u64,
    pub questions: u64,
}

impl Tally {
    /// Percentage in tenths of a percent, rounded half-up.
    pub fn tenths(&self) -> u64 {
        if self.questions == 0 {
            return 0;
        }
        (2000 * self.passes + self.questions) / (2 * self.questions)
    }

    pub fn percent(&self) -> f64 {
        100.0 * self.passes as f64 / self.questions as f64
    }
}

impl fmt::Display for Tally {
    /// `92.5%`, `100%`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = self.tenths();
        if t.is_multiple_of(10) {
            write!(f, "{}%", t / 10)
        } else {
            write!(f, "{}.{}%", t / 10, t % 10)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub categories: BTreeMap<Category, Tally>,
}

impl AccuracyRow {
    pub fn get(&self, c: Category) -> Option<Tally> {
        self.categories.get(&c).copied()
    }

    pub fn total(&self) -> Tally {
        self.categories.values().fold(Tally::default(), |acc, t| Tally {
            passes: acc.passes + t.passes,
            questions: acc.questions + t.questions,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccuracyTable {
    /// Keyed by `(model_id, k)`.
    pub rows: BTreeMap<(String, usize), AccuracyRow>,
}

pub fn aggregate(grades: &[GradeRecord]) -> Result<AccuracyTable, GradingError> {
    let mut seen = HashSet::new();
    let mut table = AccuracyTable::default();
    for g in grades {
        let category: Category = g
            .category
            .parse()
            .map_err(|_| GradingError::UnknownCategory(g.category.clone()))?;
        if g.pass > 1 {
            return Err(GradingError::InvalidPass(g.pass));
        }
        if !seen.insert((g.id.as_str(), g.model_id.as_str(), g.k)) {
            return Err(GradingError::DuplicateGrade {
                id: g.id.clone(),
                model_id: g.model_id.clone(),
                k: g.k,
            });
        }
        let tally = table
            .rows
            .entry((g.model_id.clone(), g.k))
            .or_default()
            .categories
            .entry(category)
            .or_default();
        tally.questions += 1;
        tally.passes += u64::from(g.pass);
    }
    Ok(table)
}

pub fn read_grades(input: impl Read) -> Result<Vec<GradeRecord>, GradingError> {
    let mut reader = csv::Reader::from_reader(input);
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if headers != ["id", "category", "model_id", "k", "pass"] {
        return Err(GradingError::Csv(format!(
            "expected header id,category,model_id,k,pass, found {}",
            headers.join(",")
        )));
    }
    reader.deserialize().map(|r| r.map_err(Into::into)).collect()
}

pub fn write_grades<W: Write>(out: W, grades: &[GradeRecord]) -> Result<(), GradingError> {
    let mut w = csv_writer(out);
    for g in grades {
        w.serialize(g)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Markdown,
}

const COLUMNS: [&str; 7] = [
    "model",
    "#chunks",
    "factual",
    "argumentative",
    "descriptive",
    "integrative",
    "total",
];

fn cells(row: &AccuracyRow) -> [Option<Tally>; 5] {
    [
        row.get(Category::Factual),
        row.get(Category::Argumentative),
        row.get(Category::Descriptive),
        row.get(Category::Integrative),
        Some(row.total()),
    ]
}

/// For each of the five percentage columns, the best rendered value.
fn column_best(table: &AccuracyTable) -> [Option<u64>; 5] {
    let mut best = [None; 5];
    for row in table.rows.values() {
        for (b, cell) in best.iter_mut().zip(cells(row)) {
            if let Some(t) = cell {
                *b = Some(b.map_or(t.tenths(), |v: u64| v.max(t.tenths())));
            }
        }
    }
    best
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

pub fn render_table(table: &AccuracyTable, format: TableFormat) -> String {
    match format {
        TableFormat::Markdown => render_markdown(table),
        TableFormat::Csv => render_csv(table),
    }
}

fn render_markdown(table: &AccuracyTable) -> String {
    let best = column_best(table);
    let mut out = format!("| {} |\n", COLUMNS.join(" | "));
    out.push_str(&format!("|{}\n", "---|".repeat(COLUMNS.len())));
    for ((model, k), row) in &table.rows {
        let mut line = format!("| {model} | {k} |");
        for (cell, b) in cells(row).iter().zip(best) {
            match cell {
                Some(t) if Some(t.tenths()) == b => line.push_str(&format!(" **{t}** |")),
                Some(t) => line.push_str(&format!(" {t} |")),
                None => line.push_str(" - |"),
            }
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}

/// CSV form: the rendered percentages followed by the exact counts
/// (`passes/questions`) that [`parse_table_csv`] reads back.
fn render_csv(table: &AccuracyTable) -> String {
    let mut w = csv_writer(Vec::new());
    let mut header: Vec<String> = COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(Category::ALL.iter().map(|c| format!("{c}_counts")));
    w.write_record(&header).expect("in-memory write");
    for ((model, k), row) in &table.rows {
        let mut rec = vec![model.clone(), k.to_string()];
        for cell in cells(row) {
            rec.push(cell.map(|t| t.to_string()).unwrap_or_default());
        }
        for c in Category::ALL {
            rec.push(
                row.get(c)
                    .map(|t| format!("{}/{}", t.passes, t.questions))
                    .unwrap_or_default(),
            );
        }
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

pub fn parse_table_csv(text: &str) -> Result<AccuracyTable, GradingError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    if headers.len() != COLUMNS.len() + Category::ALL.len() || headers.get(0) != Some("model") {
        return Err(GradingError::Csv("unexpected accuracy table header".into()));
    }
    let bad = |msg: String| GradingError::Csv(msg);
    let mut table = AccuracyTable::default();
    for rec in reader.records() {
        let rec = rec?;
        let k: usize = rec[1].parse().map_err(|e| bad(format!("#chunks: {e}")))?;
        let mut row = AccuracyRow::default();
        for (i, c) in Category::ALL.into_iter().enumerate() {
            let cell = &rec[COLUMNS.len() + i];
            if cell.is_empty() {
                continue;
            }
            let (p, q) = cell
                .split_once('/')
                .ok_or_else(|| bad(format!("bad count cell {cell:?}")))?;
            let tally = Tally {
                passes: p.parse().map_err(|e| bad(format!("{cell:?}: {e}")))?,
                questions: q.parse().map_err(|e| bad(format!("{cell:?}: {e}")))?,
            };
            if tally.to_string() != rec[2 + i] {
                return Err(bad(format!("{c} percentage disagrees with counts {cell}")));
            }
            row.categories.insert(c, tally);
        }
        table.rows.insert((rec[0].to_string(), k), row);
    }
    Ok(table)
}
