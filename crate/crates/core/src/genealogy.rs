//! Person-table extraction from genealogical prose.
//!
//! A model is prompted page by page for a table of the people mentioned.
//! The returned table is parsed into [`PersonRecord`]s, dates are checked
//! against `DD-MM-YYYY`, compound surnames the model truncated at a "y"
//! conjunction are suggested back, and a result can be diffed field by
//! field against a gold table.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm_gateway::{prompt_tokens, Gateway, GatewayError, ModelProfile};
use crate::text::{fold, fold_key};

pub const EXTRACTION_PROMPT: &str = "From the previous text, list all the names of people in a table with columns: full name of each person, relationship, date of birth (format DD-MM-YYYY), place of birth, date of death (format DD-MM-YYYY), baptism date (format DD-MM-YYYY), marriage date (format DD-MM-YYYY), place of residence, full name and surname of father, full name and surname of mother, full name and surname of children, full name and surname of spouse, and occupation. Try to infer the gender of each person, and add a column Gender.";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid date {raw:?}: expected DD-MM-YYYY or Unknown")]
pub struct ValidationError {
    pub raw: String,
}

/// A date that is either complete or entirely unknown.
#[derive(Debug, Clone, Default, Eq, Serialize, Deserialize)]
pub struct PartialDate {
    pub day: Option<u8>,
    pub month: Option<u8>,
    pub year: Option<u16>,
    /// Text the date was parsed from; not part of equality.
    pub raw: String,
}

impl PartialEq for PartialDate {
    fn eq(&self, other: &Self) -> bool {
        (self.day, self.month, self.year) == (other.day, other.month, other.year)
    }
}

impl PartialDate {
    pub fn unknown() -> Self {
        PartialDate::default()
    }

    pub fn is_known(&self) -> bool {
        self.day.is_some() && self.month.is_some() && self.year.is_some()
    }
}

impl fmt::Display for PartialDate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.day, self.month, self.year) {
            (Some(d), Some(m), Some(y)) => write!(f, "{d:02}-{m:02}-{y:04}"),
            _ => f.write_str("Unknown"),
        }
    }
}

fn is_leap(year: u16) -> bool {
    (year.is_multiple_of(4) && !year.is_multiple_of(100)) || year.is_multiple_of(400)
}

fn days_in_month(month: u8, year: u16) -> u8 {
    match month {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        2 if is_leap(year) => 29,
        2 => 28,
        _ => 0,
    }
}

/// Parses `DD-MM-YYYY` (ASCII digits, proleptic Gregorian calendar) or
/// `Unknown` in any case. Surrounding whitespace is not accepted.
pub fn validate_date(text: &str) -> Result<PartialDate, ValidationError> {
    let err = || ValidationError {
        raw: text.to_string(),
    };
    if text.eq_ignore_ascii_case("unknown") {
        return Ok(PartialDate {
            raw: text.to_string(),
            ..PartialDate::default()
        });
    }
    let b = text.as_bytes();
    let digits_at = |r: std::ops::Range<usize>| b[r].iter().all(u8::is_ascii_digit);
    if b.len() != 10 || b[2] != b'-' || b[5] != b'-' || !digits_at(0..2) || !digits_at(3..5) || !digits_at(6..10) {
        return Err(err());
    }
    let day: u8 = text[0..2].parse().map_err(|_| err())?;
    let month: u8 = text[3..5].parse().map_err(|_| err())?;
    let year: u16 = text[6..10].parse().map_err(|_| err())?;
    if !(1..=12).contains(&month) || day == 0 || day > days_in_month(month, year) {
        return Err(err());
    }
    Ok(PartialDate {
        day: Some(day),
        month: Some(month),
        year: Some(year),
        raw: text.to_string(),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gender {
    Male,
    Female,
    #[default]
    Unknown,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "Male",
            Gender::Female => "Female",
            Gender::Unknown => "Unknown",
        }
    }

    fn parse_cell(cell: &str) -> Option<Gender> {
        let first = cell.split_whitespace().next().unwrap_or("");
        match fold(first).trim_end_matches(['.', ',']) {
            "male" | "m" | "masculino" | "hombre" | "varon" => Some(Gender::Male),
            "female" | "f" | "femenino" | "mujer" => Some(Gender::Female),
            "" | "unknown" | "-" | "n/a" | "desconocido" => Some(Gender::Unknown),
            _ => None,
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonRecord {
    pub full_name: String,
    pub relationship: Option<String>,
    pub date_of_birth: PartialDate,
    pub place_of_birth: Option<String>,
    pub date_of_death: PartialDate,
    pub baptism_date: PartialDate,
    pub marriage_date: PartialDate,
    pub residence: Option<String>,
    pub father_name: Option<String>,
    pub mother_name: Option<String>,
    pub children: Vec<String>,
    pub spouse_name: Option<String>,
    pub occupation: Option<String>,
    pub gender: Gender,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    FullName,
    Relationship,
    DateOfBirth,
    PlaceOfBirth,
    DateOfDeath,
    BaptismDate,
    MarriageDate,
    Residence,
    FatherName,
    MotherName,
    Children,
    SpouseName,
    Occupation,
    Gender,
}

impl Field {
    pub const ALL: [Field; 14] = [
        Field::FullName,
        Field::Relationship,
        Field::DateOfBirth,
        Field::PlaceOfBirth,
        Field::DateOfDeath,
        Field::BaptismDate,
        Field::MarriageDate,
        Field::Residence,
        Field::FatherName,
        Field::MotherName,
        Field::Children,
        Field::SpouseName,
        Field::Occupation,
        Field::Gender,
    ];

    /// Column name in the records CSV.
    pub fn as_str(self) -> &'static str {
        match self {
            Field::FullName => "full_name",
            Field::Relationship => "relationship",
            Field::DateOfBirth => "date_of_birth",
            Field::PlaceOfBirth => "place_of_birth",
            Field::DateOfDeath => "date_of_death",
            Field::BaptismDate => "baptism_date",
            Field::MarriageDate => "marriage_date",
            Field::Residence => "residence",
            Field::FatherName => "father_name",
            Field::MotherName => "mother_name",
            Field::Children => "children",
            Field::SpouseName => "spouse_name",
            Field::Occupation => "occupation",
            Field::Gender => "gender",
        }
    }

    /// Header used when rendering a markdown table.
    pub fn title(self) -> &'static str {
        match self {
            Field::FullName => "Full Name",
            Field::Relationship => "Relationship",
            Field::DateOfBirth => "Date of Birth",
            Field::PlaceOfBirth => "Place of Birth",
            Field::DateOfDeath => "Date of Death",
            Field::BaptismDate => "Baptism Date",
            Field::MarriageDate => "Marriage Date",
            Field::Residence => "Place of Residence",
            Field::FatherName => "Father's Full Name",
            Field::MotherName => "Mother's Full Name",
            Field::Children => "Children's Full Name",
            Field::SpouseName => "Spouse's Full Name",
            Field::Occupation => "Occupation",
            Field::Gender => "Gender",
        }
    }

    fn is_date(self) -> bool {
        matches!(
            self,
            Field::DateOfBirth | Field::DateOfDeath | Field::BaptismDate | Field::MarriageDate
        )
    }

    /// Maps a free-form header cell to a field.
    pub fn from_header(header: &str) -> Option<Field> {
        let norm: String = fold(&header.replace(['\'', '\u{2019}'], ""))
            .chars()
            .map(|c| if c.is_alphanumeric() { c } else { ' ' })
            .collect();
        let norm = norm.split_whitespace().collect::<Vec<_>>().join(" ");
        let field = match norm.as_str() {
            "full name" | "name" | "full name of each person" | "nombre" | "full_name" => {
                Field::FullName
            }
            "relationship" | "relation" => Field::Relationship,
            "date of birth" | "birth date" | "dob" | "birth" => Field::DateOfBirth,
            "place of birth" | "birth place" | "birthplace" => Field::PlaceOfBirth,
            "date of death" | "death date" | "death" => Field::DateOfDeath,
            "baptism date" | "date of baptism" | "baptism" => Field::BaptismDate,
            "marriage date" | "date of marriage" | "marriage" => Field::MarriageDate,
            "place of residence" | "residence" => Field::Residence,
            "fathers full name" | "father" | "fathers name" | "father name"
            | "full name and surname of father" => Field::FatherName,
            "mothers full name" | "mother" | "mothers name" | "mother name"
            | "full name and surname of mother" => Field::MotherName,
            "childrens full name" | "children" | "childrens names" | "childrens name"
            | "full name and surname of children" | "child" => Field::Children,
            "spouses full name" | "spouse" | "spouses name" | "spouse name"
            | "full name and surname of spouse" => Field::SpouseName,
            "occupation" | "profession" => Field::Occupation,
            "gender" | "sex" => Field::Gender,
            other => {
                let snake = other.replace(' ', "_");
                return Field::ALL.into_iter().find(|f| f.as_str() == snake);
            }
        };
        Some(field)
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A field's value in comparable form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FieldValue {
    Text(String),
    List(Vec<String>),
}

impl fmt::Display for FieldValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldValue::Text(t) => f.write_str(t),
            FieldValue::List(items) => f.write_str(&items.join("; ")),
        }
    }
}

impl PersonRecord {
    /// The populated value of `field`, if any.
    pub fn value(&self, field: Field) -> Option<FieldValue> {
        let text = |o: &Option<String>| o.clone().map(FieldValue::Text);
        let date = |d: &PartialDate| d.is_known().then(|| FieldValue::Text(d.to_string()));
        match field {
            Field::FullName => Some(FieldValue::Text(self.full_name.clone())),
            Field::Relationship => text(&self.relationship),
            Field::DateOfBirth => date(&self.date_of_birth),
            Field::PlaceOfBirth => text(&self.place_of_birth),
            Field::DateOfDeath => date(&self.date_of_death),
            Field::BaptismDate => date(&self.baptism_date),
            Field::MarriageDate => date(&self.marriage_date),
            Field::Residence => text(&self.residence),
            Field::FatherName => text(&self.father_name),
            Field::MotherName => text(&self.mother_name),
            Field::Children => {
                (!self.children.is_empty()).then(|| FieldValue::List(self.children.clone()))
            }
            Field::SpouseName => text(&self.spouse_name),
            Field::Occupation => text(&self.occupation),
            Field::Gender => {
                (self.gender != Gender::Unknown).then(|| FieldValue::Text(self.gender.to_string()))
            }
        }
    }

    /// Cell text for `field` as written in tables and CSV.
    pub fn cell(&self, field: Field) -> String {
        self.value(field)
            .map(|v| v.to_string())
            .unwrap_or_else(|| "Unknown".to_string())
    }

    fn set_cell(&mut self, field: Field, cell: &str) -> Result<(), String> {
        let absent = is_absent(cell);
        let text = || (!absent).then(|| cell.to_string());
        match field {
            Field::FullName => {
                if absent {
                    return Err("full name is empty".into());
                }
                self.full_name = cell.to_string();
            }
            f if f.is_date() => {
                let d = if absent {
                    PartialDate {
                        raw: cell.to_string(),
                        ..Default::default()
                    }
                } else {
                    validate_date(cell).map_err(|e| e.to_string())?
                };
                match f {
                    Field::DateOfBirth => self.date_of_birth = d,
                    Field::DateOfDeath => self.date_of_death = d,
                    Field::BaptismDate => self.baptism_date = d,
                    _ => self.marriage_date = d,
                }
            }
            Field::Relationship => self.relationship = text(),
            Field::PlaceOfBirth => self.place_of_birth = text(),
            Field::Residence => self.residence = text(),
            Field::FatherName => self.father_name = text(),
            Field::MotherName => self.mother_name = text(),
            Field::SpouseName => self.spouse_name = text(),
            Field::Occupation => self.occupation = text(),
            Field::Children => {
                self.children = cell
                    .split(';')
                    .map(str::trim)
                    .filter(|c| !is_absent(c))
                    .map(str::to_string)
                    .collect();
            }
            Field::Gender => {
                self.gender =
                    Gender::parse_cell(cell).ok_or_else(|| format!("unrecognised gender {cell:?}"))?;
            }
            _ => unreachable!(),
        }
        Ok(())
    }
}

fn is_absent(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("unknown") || c == "-" || c.eq_ignore_ascii_case("n/a")
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TableError {
    #[error("no pipe-delimited table found")]
    NoTableFound,
    #[error("table header has no full-name column: {0}")]
    HeaderUnrecognized(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedRow {
    /// 1-based line number within the input text.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedTable {
    pub records: Vec<PersonRecord>,
    pub skipped: Vec<SkippedRow>,
}

fn split_row(line: &str) -> Vec<String> {
    let t = line.trim();
    let t = t.strip_prefix('|').unwrap_or(t);
    let t = t.strip_suffix('|').unwrap_or(t);
    t.split('|').map(|c| c.trim().to_string()).collect()
}

fn is_separator_row(cells: &[String]) -> bool {
    cells.iter().all(|c| {
        let c = c.trim_matches(':');
        !c.is_empty() && c.chars().all(|ch| ch == '-')
    })
}

/// Parses the first pipe-delimited table in `text`. Lines without a `|`
/// before the header are ignored; the table ends at the first later line
/// without one.
pub fn parse_person_table(text: &str) -> Result<ParsedTable, TableError> {
    let mut lines = text.lines().enumerate().skip_while(|(_, l)| !l.contains('|'));
    let (_, header_line) = lines.next().ok_or(TableError::NoTableFound)?;
    let header = split_row(header_line);
    let columns: Vec<Option<Field>> = header.iter().map(|h| Field::from_header(h)).collect();
    if !columns.contains(&Some(Field::FullName)) {
        return Err(TableError::HeaderUnrecognized(header.join(" | ")));
    }
    let mut out = ParsedTable::default();
    for (i, line) in lines {
        if !line.contains('|') {
            break;
        }
        let cells = split_row(line);
        if is_separator_row(&cells) {
            continue;
        }
        let skip = |reason: String| SkippedRow { line: i + 1, reason };
        if cells.len() != columns.len() {
            out.skipped.push(skip(format!(
                "{} cells, header has {}",
                cells.len(),
                columns.len()
            )));
            continue;
        }
        let mut record = PersonRecord::default();
        let result = columns
            .iter()
            .zip(&cells)
            .filter_map(|(f, c)| f.map(|f| (f, c)))
            .try_for_each(|(f, c)| record.set_cell(f, c));
        match result {
            Ok(()) => out.records.push(record),
            Err(reason) => out.skipped.push(skip(reason)),
        }
    }
    Ok(out)
}

/// Renders records as a markdown table with every column.
pub fn serialize_person_table(records: &[PersonRecord]) -> String {
    let titles: Vec<&str> = Field::ALL.iter().map(|f| f.title()).collect();
    let mut out = format!("| {} |\n", titles.join(" | "));
    out.push_str(&format!("|{}\n", "---|".repeat(titles.len())));
    for r in records {
        let cells: Vec<String> = Field::ALL.iter().map(|&f| r.cell(f)).collect();
        out.push_str(&format!("| {} |\n", cells.join(" | ")));
    }
    out
}

const MALE_NAMES: &[&str] = &[
    "agustin", "alonso", "alvaro", "ambrosio", "andres", "anselmo", "antonio", "baltasar",
    "bartolome", "benito", "bernardo", "blas", "carlos", "cayetano", "ciriaco", "clemente",
    "cristobal", "damian", "diego", "domingo", "eduardo", "elias", "emilio", "enrique", "ernesto",
    "esteban", "eugenio", "fabian", "federico", "felipe", "felix", "fermin", "fernando",
    "florencio", "francisco", "gabriel", "gaspar", "gerardo", "gil", "gonzalo", "gregorio",
    "guillermo", "gustavo", "hermenegildo", "hernando", "hilario", "hipolito", "ignacio",
    "inocencio", "isidoro", "isidro", "jacinto", "jaime", "jeronimo", "joaquin", "jorge", "jose",
    "juan", "julian", "julio", "lazaro", "leandro", "leon", "leonardo", "lope", "lorenzo", "lucas",
    "luis", "manuel", "marcos", "mariano", "martin", "mateo", "matias", "mauricio", "melchor",
    "miguel", "narciso", "nestor", "nicanor", "nicolas", "octavio", "onofre", "pablo", "pascual",
    "patricio", "pedro", "pio", "placido", "prudencio", "rafael", "raimundo", "ramon", "ricardo",
    "roberto", "rodrigo", "romualdo", "ruy", "salvador", "sancho", "santiago", "saturnino",
    "sebastian", "simon", "teodoro", "tiburcio", "timoteo", "tomas", "urbano", "valentin",
    "vicente", "victor", "zacarias",
];

const FEMALE_NAMES: &[&str] = &[
    "agueda", "agustina", "aldonza", "alicia", "amalia", "amparo", "ana", "andrea", "angela",
    "antonia", "asuncion", "barbara", "beatriz", "belen", "blanca", "brianda", "candelaria",
    "caridad", "carlota", "carmen", "carolina", "casilda", "catalina", "cecilia", "clara",
    "concepcion", "constanza", "consuelo", "cristina", "dolores", "dominga", "dorotea", "elena",
    "emilia", "encarnacion", "engracia", "esperanza", "estefania", "ester", "eugenia", "eulalia",
    "felipa", "fernanda", "filomena", "francisca", "gertrudis", "gracia", "gregoria", "guadalupe",
    "ignacia", "ines", "irene", "isabel", "isidora", "jacinta", "jeronima", "joaquina", "josefa",
    "juana", "julia", "juliana", "laura", "leocadia", "leonarda", "leonor", "librada", "lorenza",
    "loreto", "lucia", "luisa", "luz", "magdalena", "manuela", "marcela", "margarita", "maria",
    "mariana", "marta", "matilde", "melchora", "mencia", "mercedes", "micaela", "monica",
    "natalia", "nicolasa", "nieves", "paula", "paulina", "paz", "petrona", "piedad", "pilar",
    "rafaela", "ramira", "ramona", "remedios", "rita", "rosa", "rosario", "sabina", "sebastiana",
    "silvia", "sofia", "soledad", "susana", "teresa", "tomasa", "trinidad", "ursula", "valentina",
    "vicenta", "victoria", "violante",
];

/// Rule-based gender guess from the first given name. Compound names are
/// decided by their first token, so "José María" is male.
pub fn infer_gender(full_name: &str) -> Gender {
    let Some(first) = crate::text::word_tokens(full_name).next() else {
        return Gender::Unknown;
    };
    let first = fold(first);
    if MALE_NAMES.binary_search(&first.as_str()).is_ok() {
        Gender::Male
    } else if FEMALE_NAMES.binary_search(&first.as_str()).is_ok()
        || (first.chars().count() > 1 && first.ends_with('a'))
    {
        Gender::Female
    } else if first.chars().count() > 1 && first.ends_with('o') {
        Gender::Male
    } else {
        Gender::Unknown
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SurnameSuggestion {
    pub record_index: usize,
    pub full_name: String,
    pub suggested_full_name: String,
}

/// `text` folded character by character, with the byte offset in `text`
/// each folded byte came from.
fn fold_with_offsets(text: &str) -> (String, Vec<usize>) {
    let mut folded = String::with_capacity(text.len());
    let mut origin = Vec::with_capacity(text.len());
    let mut buf = [0u8; 4];
    for (i, c) in text.char_indices() {
        for f in fold(c.encode_utf8(&mut buf)).chars() {
            folded.push(f);
            origin.extend(std::iter::repeat_n(i, f.len_utf8()));
        }
    }
    origin.push(text.len());
    (folded, origin)
}

/// After a name ending at `rest[0]`, matches `\s+y\s+<Capitalized word>`
/// and returns the word.
fn y_fragment(rest: &str) -> Option<&str> {
    let after_ws = rest.trim_start();
    if after_ws.len() == rest.len() {
        return None;
    }
    let after_y = after_ws.strip_prefix('y')?;
    let word_start = after_y.trim_start();
    if word_start.len() == after_y.len() {
        return None;
    }
    let mut chars = word_start.char_indices();
    let (_, first) = chars.next()?;
    if !first.is_uppercase() {
        return None;
    }
    let end = chars
        .find(|(_, c)| !c.is_alphabetic())
        .map_or(word_start.len(), |(i, _)| i);
    Some(&word_start[..end])
}

/// Suggests `"<name> y <Surname>"` for every record whose full name occurs
/// in `source_text` (accent- and case-insensitively, at word boundaries)
/// directly followed by a "y" and a capitalised word.
pub fn repair_compound_surnames(records: &[PersonRecord], source_text: &str) -> Vec<SurnameSuggestion> {
    let (folded, origin) = fold_with_offsets(source_text);
    let mut out = Vec::new();
    for (idx, record) in records.iter().enumerate() {
        let needle = fold(record.full_name.trim());
        if needle.is_empty() {
            continue;
        }
        let mut seen = BTreeSet::new();
        for (pos, _) in folded.match_indices(&needle) {
            let end = pos + needle.len();
            let before_ok = !folded[..pos].chars().next_back().is_some_and(char::is_alphanumeric);
            let after_ok = !folded[end..].chars().next().is_some_and(char::is_alphanumeric);
            if !before_ok || !after_ok {
                continue;
            }
            if let Some(word) = y_fragment(&source_text[origin[end]..]) {
                let suggestion = format!("{} y {}", record.full_name.trim(), word);
                if seen.insert(suggestion.clone()) {
                    out.push(SurnameSuggestion {
                        record_index: idx,
                        full_name: record.full_name.clone(),
                        suggested_full_name: suggestion,
                    });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DiscrepancyKind {
    Missing,
    Wrong,
    Spurious,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Discrepancy {
    /// Gold full name, or the extracted one for spurious records.
    pub record: String,
    pub field: Field,
    pub kind: DiscrepancyKind,
    pub expected: Option<String>,
    pub got: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FieldCounts {
    pub correct: usize,
    pub missing: usize,
    pub wrong: usize,
    pub spurious: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ExtractionDiff {
    pub fields: BTreeMap<Field, FieldCounts>,
    pub discrepancies: Vec<Discrepancy>,
    /// Extracted names that matched several gold records equally well.
    pub ambiguous: Vec<String>,
    /// `(gold index, got index)` pairs.
    pub alignment: Vec<(usize, usize)>,
}

impl ExtractionDiff {
    pub fn totals(&self) -> FieldCounts {
        self.fields.values().fold(FieldCounts::default(), |a, c| FieldCounts {
            correct: a.correct + c.correct,
            missing: a.missing + c.missing,
            wrong: a.wrong + c.wrong,
            spurious: a.spurious + c.spurious,
        })
    }
}

fn key_tokens(s: &str) -> Vec<String> {
    fold_key(s).split(' ').filter(|t| !t.is_empty()).map(str::to_string).collect()
}

/// `short` is a proper word-prefix of `long`.
fn is_truncation(short: &str, long: &str) -> bool {
    let (s, l) = (key_tokens(short), key_tokens(long));
    !s.is_empty() && s.len() < l.len() && l.starts_with(&s)
}

fn same(a: &str, b: &str) -> bool {
    fold_key(a) == fold_key(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Verdict {
    Correct,
    Missing,
    Wrong,
}

fn judge(gold: Option<&FieldValue>, got: Option<&FieldValue>) -> Option<Verdict> {
    use FieldValue::*;
    Some(match (gold, got) {
        (None, None) => return None,
        (Some(_), None) => Verdict::Missing,
        (None, Some(_)) => Verdict::Wrong,
        (Some(Text(g)), Some(Text(o))) if same(g, o) => Verdict::Correct,
        (Some(Text(g)), Some(Text(o))) if is_truncation(o, g) => Verdict::Missing,
        (Some(List(g)), Some(List(o))) => {
            if g.len() == o.len() && g.iter().zip(o).all(|(a, b)| same(a, b)) {
                Verdict::Correct
            } else if o.len() <= g.len()
                && o.iter().enumerate().all(|(i, item)| same(&g[i], item) || is_truncation(item, &g[i]))
            {
                Verdict::Missing
            } else {
                Verdict::Wrong
            }
        }
        _ => Verdict::Wrong,
    })
}

/// Gold name `gold` extends extracted name `got` with a conjunction-joined
/// surname ("y ..." or "e ...").
fn compound_prefix(got: &str, gold: &str) -> bool {
    let (s, l) = (key_tokens(got), key_tokens(gold));
    !s.is_empty() && l.len() > s.len() && l.starts_with(&s) && matches!(l[s.len()].as_str(), "y" | "e")
}

fn agreement(gold: &PersonRecord, got: &PersonRecord) -> usize {
    Field::ALL
        .iter()
        .filter(|&&f| f != Field::FullName)
        .filter(|&&f| judge(gold.value(f).as_ref(), got.value(f).as_ref()) == Some(Verdict::Correct))
        .count()
}

/// Aligns `got` to `gold` by normalised full name, then by
/// compound-surname prefix, and classifies every field.
///
/// A field counts as missing when the extraction left it empty or kept
/// only a leading part of it, and as wrong when the extraction filled it
/// with anything else, including a value where the gold has none. Slots
/// empty on both sides are not counted.
pub fn diff_extraction(gold: &[PersonRecord], got: &[PersonRecord]) -> ExtractionDiff {
    let mut diff = ExtractionDiff::default();
    let mut gold_match: Vec<Option<usize>> = vec![None; gold.len()];
    let mut got_used = vec![false; got.len()];

    for (j, o) in got.iter().enumerate() {
        if let Some(i) = (0..gold.len()).find(|&i| gold_match[i].is_none() && same(&gold[i].full_name, &o.full_name)) {
            gold_match[i] = Some(j);
            got_used[j] = true;
        }
    }
    for (j, o) in got.iter().enumerate() {
        if got_used[j] {
            continue;
        }
        let candidates: Vec<(usize, usize)> = (0..gold.len())
            .filter(|&i| gold_match[i].is_none() && compound_prefix(&o.full_name, &gold[i].full_name))
            .map(|i| (i, agreement(&gold[i], o)))
            .collect();
        let Some(best) = candidates.iter().map(|c| c.1).max() else {
            continue;
        };
        let top: Vec<usize> = candidates.iter().filter(|c| c.1 == best).map(|c| c.0).collect();
        if top.len() == 1 {
            gold_match[top[0]] = Some(j);
            got_used[j] = true;
        } else {
            diff.ambiguous.push(o.full_name.clone());
        }
    }

    for (i, g) in gold.iter().enumerate() {
        let o = gold_match[i].map(|j| &got[j]);
        if let Some(j) = gold_match[i] {
            diff.alignment.push((i, j));
        }
        for f in Field::ALL {
            let gv = g.value(f);
            let ov = o.and_then(|o| o.value(f));
            let Some(verdict) = judge(gv.as_ref(), ov.as_ref()) else {
                continue;
            };
            let counts = diff.fields.entry(f).or_default();
            let kind = match verdict {
                Verdict::Correct => {
                    counts.correct += 1;
                    continue;
                }
                Verdict::Missing => {
                    counts.missing += 1;
                    DiscrepancyKind::Missing
                }
                Verdict::Wrong => {
                    counts.wrong += 1;
                    DiscrepancyKind::Wrong
                }
            };
            diff.discrepancies.push(Discrepancy {
                record: g.full_name.clone(),
                field: f,
                kind,
                expected: gv.map(|v| v.to_string()),
                got: ov.map(|v| v.to_string()),
            });
        }
    }
    for (_, o) in got.iter().enumerate().filter(|(j, _)| !got_used[*j]) {
        for f in Field::ALL {
            if let Some(v) = o.value(f) {
                diff.fields.entry(f).or_default().spurious += 1;
                diff.discrepancies.push(Discrepancy {
                    record: o.full_name.clone(),
                    field: f,
                    kind: DiscrepancyKind::Spurious,
                    expected: None,
                    got: Some(v.to_string()),
                });
            }
        }
    }
    diff
}

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error("page text is empty")]
    EmptyPage,
    #[error("page prompt needs ~{estimate} tokens, budget is {budget}; split the page")]
    PageTooLarge { estimate: usize, budget: usize },
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("malformed records CSV: {0}")]
    Csv(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl ExtractionError {
    pub fn stage(&self) -> &'static str {
        match self {
            ExtractionError::EmptyPage | ExtractionError::PageTooLarge { .. } => "prompt",
            ExtractionError::Gateway(_) => "generation",
            ExtractionError::Table(_) => "parse",
            ExtractionError::Csv(_) | ExtractionError::Io(_) => "io",
        }
    }
}

impl From<csv::Error> for ExtractionError {
    fn from(e: csv::Error) -> Self {
        ExtractionError::Csv(e.to_string())
    }
}

/// Page text followed by the extraction instruction.
pub fn build_extraction_prompt(page_text: &str, profile: &ModelProfile) -> Result<String, ExtractionError> {
    if page_text.trim().is_empty() {
        return Err(ExtractionError::EmptyPage);
    }
    let prompt = format!("{page_text}\n\n{EXTRACTION_PROMPT}");
    let estimate = prompt_tokens("", &prompt);
    let budget = profile.prompt_budget();
    if estimate > budget {
        return Err(ExtractionError::PageTooLarge { estimate, budget });
    }
    Ok(prompt)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PagedRecord {
    /// 0-based page index.
    pub page: usize,
    pub record: PersonRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PagedSuggestion {
    pub page: usize,
    pub suggestion: SurnameSuggestion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GenderDisagreement {
    pub page: usize,
    pub full_name: String,
    pub model: Gender,
    pub inferred: Gender,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum PageOutcome {
    Ok { records: usize, skipped_rows: Vec<SkippedRow> },
    Failed { stage: String, error: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ExtractionRun {
    pub records: Vec<PagedRecord>,
    pub suggestions: Vec<PagedSuggestion>,
    pub gender_disagreements: Vec<GenderDisagreement>,
    /// One entry per input page.
    pub pages: Vec<PageOutcome>,
}

impl ExtractionRun {
    pub fn failed_pages(&self) -> usize {
        self.pages
            .iter()
            .filter(|p| matches!(p, PageOutcome::Failed { .. }))
            .count()
    }
}

struct PageResult {
    records: Vec<PersonRecord>,
    suggestions: Vec<SurnameSuggestion>,
    disagreements: Vec<(String, Gender, Gender)>,
    skipped: Vec<SkippedRow>,
}

fn extract_page(page: &str, gateway: &Gateway) -> Result<PageResult, ExtractionError> {
    let prompt = build_extraction_prompt(page, gateway.profile())?;
    let reply = gateway.complete("", &prompt)?;
    let parsed = parse_person_table(&reply.answer_text)?;
    let mut records = parsed.records;
    let mut disagreements = Vec::new();
    for r in &mut records {
        let inferred = infer_gender(&r.full_name);
        if r.gender == Gender::Unknown {
            r.gender = inferred;
        } else if inferred != Gender::Unknown && inferred != r.gender {
            disagreements.push((r.full_name.clone(), r.gender, inferred));
        }
    }
    let suggestions = repair_compound_surnames(&records, page);
    Ok(PageResult {
        records,
        suggestions,
        disagreements,
        skipped: parsed.skipped,
    })
}

/// Runs one extraction per page. Failed pages are recorded and do not
/// stop the others; concurrency is bounded by the gateway.
pub fn extract_from_pages(pages: &[&str], gateway: &Gateway) -> ExtractionRun {
    let results: Vec<Result<PageResult, ExtractionError>> =
        pages.par_iter().map(|p| extract_page(p, gateway)).collect();
    let mut run = ExtractionRun::default();
    for (page, result) in results.into_iter().enumerate() {
        match result {
            Ok(r) => {
                run.pages.push(PageOutcome::Ok {
                    records: r.records.len(),
                    skipped_rows: r.skipped,
                });
                run.records
                    .extend(r.records.into_iter().map(|record| PagedRecord { page, record }));
                run.suggestions
                    .extend(r.suggestions.into_iter().map(|suggestion| PagedSuggestion { page, suggestion }));
                run.gender_disagreements
                    .extend(r.disagreements.into_iter().map(|(full_name, model, inferred)| {
                        GenderDisagreement {
                            page,
                            full_name,
                            model,
                            inferred,
                        }
                    }));
            }
            Err(e) => {
                tracing::warn!(page, error = %e, "page extraction failed");
                run.pages.push(PageOutcome::Failed {
                    stage: e.stage().to_string(),
                    error: e.to_string(),
                });
            }
        }
    }
    run
}

pub fn records_csv_header() -> Vec<&'static str> {
    std::iter::once("page")
        .chain(Field::ALL.iter().map(|f| f.as_str()))
        .collect()
}

/// Writes records as RFC-4180 CSV, children joined with `;`.
pub fn write_records_csv<W: Write>(out: W, records: &[PagedRecord]) -> Result<(), ExtractionError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(records_csv_header())?;
    for r in records {
        let mut rec = vec![r.page.to_string()];
        rec.extend(Field::ALL.iter().map(|&f| match f {
            Field::Children => r.record.children.join(";"),
            f => r.record.cell(f),
        }));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a records CSV. The `page` column is optional so gold tables can
/// omit it; missing columns read as unknown.
pub fn read_records_csv(input: impl Read) -> Result<Vec<PagedRecord>, ExtractionError> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers()?.clone();
    let page_col = headers.iter().position(|h| h.trim() == "page");
    let columns: Vec<Option<Field>> = headers.iter().map(Field::from_header).collect();
    if !columns.contains(&Some(Field::FullName)) {
        return Err(TableError::HeaderUnrecognized(headers.iter().collect::<Vec<_>>().join(",")).into());
    }
    let mut out = Vec::new();
    for (n, rec) in reader.records().enumerate() {
        let rec = rec?;
        let mut record = PersonRecord::default();
        for (f, cell) in columns.iter().zip(rec.iter()) {
            if let Some(f) = f {
                record
                    .set_cell(*f, cell)
                    .map_err(|e| ExtractionError::Csv(format!("row {}: {e}", n + 2)))?;
            }
        }
        let page = match page_col {
            Some(c) => rec[c]
                .parse()
                .map_err(|e| ExtractionError::Csv(format!("row {}: page: {e}", n + 2)))?,
            None => 0,
        };
        out.push(PagedRecord { page, record });
    }
    Ok(out)
}
