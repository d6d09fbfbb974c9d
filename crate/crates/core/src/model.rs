//! Domain types shared by every module: person records, frequency tables,
//! datasets, attribute selectors and the canonical byte encoding that linkage
//! keys are computed over.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

/// Separator between serialized field values. Forbidden inside values.
pub const FIELD_SEPARATOR: u8 = 0x1F;
/// Stand-in for an absent middle initial in the canonical encoding.
pub const ABSENT_MARKER: u8 = 0x1E;

pub const DATASET_HEADER: [&str; 8] = [
    "row_id",
    "first_name",
    "middle_initial",
    "last_name",
    "yob",
    "sex",
    "meshblock",
    "sa3",
];

pub const DEFAULT_YOB_RANGE: (i32, i32) = (1916, 2016);
pub const DEFAULT_SA3_DIGITS: usize = 3;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: field `{field}`: {message}")]
    Field {
        line: u64,
        field: &'static str,
        message: String,
    },
    #[error("line {line}: malformed row: {message}")]
    Row { line: u64, message: String },
    #[error("header mismatch: expected `{}`, found `{found}`", DATASET_HEADER.join(","))]
    Header { found: String },
    #[error("line {line}: duplicate row_id {row_id}")]
    DuplicateRowId { line: u64, row_id: u64 },
    #[error("frequency table: {0}")]
    Table(String),
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("invalid selector `{0}`")]
    InvalidSelector(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sex {
    M,
    F,
}

impl Sex {
    pub fn flipped(self) -> Sex {
        match self {
            Sex::M => Sex::F,
            Sex::F => Sex::M,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Sex::M => "M",
            Sex::F => "F",
        }
    }
}

impl FromStr for Sex {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "M" | "m" => Ok(Sex::M),
            "F" | "f" => Ok(Sex::F),
            other => Err(format!("expected M or F, got `{other}`")),
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One synthetic individual.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PersonRecord {
    pub row_id: u64,
    pub first_name: String,
    pub middle_initial: Option<char>,
    pub last_name: String,
    pub yob: i32,
    pub sex: Sex,
    pub meshblock: String,
    pub sa3: String,
}

/// Pseudo-SA3 code: the leading `digits` characters of the meshblock code.
pub fn sa3_of(meshblock: &str, digits: usize) -> String {
    meshblock.chars().take(digits).collect()
}

/// Lowercases and trims a name at ingestion.
pub fn normalize_name(raw: &str) -> String {
    raw.trim().to_lowercase()
}

fn check_value(value: &str) -> Result<(), String> {
    if value.bytes().any(|b| b == FIELD_SEPARATOR || b == ABSENT_MARKER) {
        return Err("contains a reserved separator byte".into());
    }
    Ok(())
}

fn check_name(value: &str) -> Result<(), String> {
    if value.is_empty() {
        return Err("empty name".into());
    }
    if value.chars().any(|c| c.is_uppercase()) {
        return Err("name is not lowercase".into());
    }
    check_value(value)
}

impl PersonRecord {
    /// Checks the record-level invariants; returns the offending field name.
    pub fn validate(&self, yob_range: (i32, i32), sa3_digits: usize) -> Result<(), (&'static str, String)> {
        check_name(&self.first_name).map_err(|m| ("first_name", m))?;
        check_name(&self.last_name).map_err(|m| ("last_name", m))?;
        if let Some(c) = self.middle_initial {
            if !c.is_alphabetic() || c.is_uppercase() {
                return Err(("middle_initial", format!("`{c}` is not a lowercase letter")));
            }
        }
        if self.yob < yob_range.0 || self.yob > yob_range.1 {
            return Err((
                "yob",
                format!("{} outside {}..={}", self.yob, yob_range.0, yob_range.1),
            ));
        }
        if self.meshblock.is_empty() {
            return Err(("meshblock", "empty meshblock".into()));
        }
        check_value(&self.meshblock).map_err(|m| ("meshblock", m))?;
        if self.sa3 != sa3_of(&self.meshblock, sa3_digits) {
            return Err((
                "sa3",
                format!("`{}` is not derived from meshblock `{}`", self.sa3, self.meshblock),
            ));
        }
        Ok(())
    }

    /// String form of a single field as it enters the canonical encoding.
    /// `None` only for an absent middle initial.
    pub fn field_value(&self, field: Field) -> Option<String> {
        match field {
            Field::Forename => Some(self.first_name.clone()),
            Field::MiddleInitial => self.middle_initial.map(String::from),
            Field::Surname => Some(self.last_name.clone()),
            Field::YoB => Some(self.yob.to_string()),
            Field::Sex => Some(self.sex.as_str().to_string()),
            Field::Meshblock => Some(self.meshblock.clone()),
            Field::Sa3 => Some(self.sa3.clone()),
        }
    }
}

/// Attributes a linkage key can draw on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Field {
    Forename,
    MiddleInitial,
    Surname,
    YoB,
    Sex,
    Meshblock,
    Sa3,
}

impl Field {
    pub fn name(self) -> &'static str {
        match self {
            Field::Forename => "first_name",
            Field::MiddleInitial => "middle_initial",
            Field::Surname => "last_name",
            Field::YoB => "yob",
            Field::Sex => "sex",
            Field::Meshblock => "meshblock",
            Field::Sa3 => "sa3",
        }
    }
}

impl FromStr for Field {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let f = match s.trim().to_ascii_lowercase().as_str() {
            "first_name" | "forename" | "first" => Field::Forename,
            "middle_initial" | "middlename" | "middle" => Field::MiddleInitial,
            "last_name" | "surname" | "last" => Field::Surname,
            "yob" => Field::YoB,
            "sex" | "gender" => Field::Sex,
            "meshblock" => Field::Meshblock,
            "sa3" => Field::Sa3,
            _ => return Err(ModelError::UnknownField(s.trim().to_string())),
        };
        Ok(f)
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How one attribute contributes to a linkage key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Selector {
    FullField(Field),
    /// First character of the field.
    Initial(Field),
    /// First two characters of the field.
    Bigram2(Field),
    /// Emits the second field's value, then the first's.
    Transposed(Field, Field),
}

impl Selector {
    pub fn fields(&self) -> Vec<Field> {
        match *self {
            Selector::FullField(f) | Selector::Initial(f) | Selector::Bigram2(f) => vec![f],
            Selector::Transposed(a, b) => vec![a, b],
        }
    }

    /// The same selector with any transposition undone.
    pub fn untransposed(&self) -> Vec<Selector> {
        match *self {
            Selector::Transposed(a, b) => vec![Selector::FullField(a), Selector::FullField(b)],
            other => vec![other],
        }
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Selector::FullField(x) => write!(f, "FullField({x})"),
            Selector::Initial(x) => write!(f, "Initial({x})"),
            Selector::Bigram2(x) => write!(f, "Bigram2({x})"),
            Selector::Transposed(a, b) => write!(f, "Transposed({a},{b})"),
        }
    }
}

impl FromStr for Selector {
    type Err = ModelError;

    /// Accepts `FullField(x)`, `Initial(x)`, `Bigram2(x)`, `Transposed(a,b)`
    /// or a bare field name (shorthand for `FullField`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let Some(open) = s.find('(') else {
            return Ok(Selector::FullField(s.parse()?));
        };
        if !s.ends_with(')') {
            return Err(ModelError::InvalidSelector(s.to_string()));
        }
        let head = &s[..open];
        let args: Vec<&str> = s[open + 1..s.len() - 1].split(',').collect();
        match (head, args.as_slice()) {
            ("FullField", [a]) => Ok(Selector::FullField(a.parse()?)),
            ("Initial", [a]) => Ok(Selector::Initial(a.parse()?)),
            ("Bigram2", [a]) => Ok(Selector::Bigram2(a.parse()?)),
            ("Transposed", [a, b]) => Ok(Selector::Transposed(a.parse()?, b.parse()?)),
            _ => Err(ModelError::InvalidSelector(s.to_string())),
        }
    }
}

fn push_value(out: &mut Vec<u8>, value: Option<&str>) {
    if !out.is_empty() {
        out.push(FIELD_SEPARATOR);
    }
    match value {
        Some(v) => out.extend_from_slice(v.as_bytes()),
        None => out.push(ABSENT_MARKER),
    }
}

/// Deterministic, injective byte encoding of the selected attribute values,
/// joined by [`FIELD_SEPARATOR`].
pub fn canonical_serialize(record: &PersonRecord, selectors: &[Selector]) -> Vec<u8> {
    let mut out = Vec::with_capacity(48);
    let prefix = |v: Option<String>, n: usize| v.map(|s| s.chars().take(n).collect::<String>());
    for sel in selectors {
        match *sel {
            Selector::FullField(f) => push_value(&mut out, record.field_value(f).as_deref()),
            Selector::Initial(f) => push_value(&mut out, prefix(record.field_value(f), 1).as_deref()),
            Selector::Bigram2(f) => push_value(&mut out, prefix(record.field_value(f), 2).as_deref()),
            Selector::Transposed(a, b) => {
                push_value(&mut out, record.field_value(b).as_deref());
                push_value(&mut out, record.field_value(a).as_deref());
            }
        }
    }
    out
}

/// Value → count table with sampling probabilities count/total.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyTable {
    entries: Vec<(String, u64)>,
    total: u64,
}

impl FrequencyTable {
    pub fn new(entries: Vec<(String, u64)>) -> Result<Self, ModelError> {
        let mut seen = HashSet::with_capacity(entries.len());
        for (v, _) in &entries {
            if !seen.insert(v.as_str()) {
                return Err(ModelError::Table(format!("duplicate value `{v}`")));
            }
        }
        let total = entries.iter().map(|(_, c)| *c).sum();
        Ok(Self { entries, total })
    }

    pub fn entries(&self) -> &[(String, u64)] {
        &self.entries
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count_of(&self, value: &str) -> Option<u64> {
        self.entries.iter().find(|(v, _)| v == value).map(|(_, c)| *c)
    }

    pub fn probability(&self, value: &str) -> f64 {
        match self.count_of(value) {
            Some(c) if self.total > 0 => c as f64 / self.total as f64,
            _ => 0.0,
        }
    }

    /// Entries sorted by descending count, ties by value.
    pub fn ranked(&self) -> Vec<(String, u64)> {
        let mut v = self.entries.clone();
        v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        v
    }

    /// Reads a `value,count` CSV.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, ModelError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers().map_err(|e| csv_row_error(e, 1))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["value", "count"] {
            return Err(ModelError::Table(format!(
                "expected header `value,count`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut entries = Vec::new();
        for row in rdr.records() {
            let row = row.map_err(|e| csv_row_error(e, 0))?;
            let line = row.position().map_or(0, |p| p.line());
            let count = row[1].trim().parse::<u64>().map_err(|e| ModelError::Field {
                line,
                field: "count",
                message: e.to_string(),
            })?;
            entries.push((row[0].to_string(), count));
        }
        Self::new(entries)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "value,count")?;
        for (v, c) in &self.entries {
            writeln!(w, "{v},{c}")?;
        }
        Ok(())
    }
}

/// An ordered collection of records plus a provenance label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub records: Vec<PersonRecord>,
    pub provenance: String,
}

impl Dataset {
    pub fn new(records: Vec<PersonRecord>, provenance: impl Into<String>) -> Self {
        Self {
            records,
            provenance: provenance.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn by_row_id(&self) -> HashMap<u64, &PersonRecord> {
        self.records.iter().map(|r| (r.row_id, r)).collect()
    }

    /// Sorted row ids.
    pub fn row_ids(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = self.records.iter().map(|r| r.row_id).collect();
        ids.sort_unstable();
        ids
    }
}

/// Column schema parameters for dataset CSVs.
#[derive(Debug, Clone, Copy)]
pub struct DatasetSchema {
    pub yob_range: (i32, i32),
    pub sa3_digits: usize,
}

impl Default for DatasetSchema {
    fn default() -> Self {
        Self {
            yob_range: DEFAULT_YOB_RANGE,
            sa3_digits: DEFAULT_SA3_DIGITS,
        }
    }
}

fn csv_row_error(e: csv::Error, fallback_line: u64) -> ModelError {
    let line = e.position().map_or(fallback_line, |p| p.line());
    ModelError::Row {
        line,
        message: e.to_string(),
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, ModelError> {
    let path = path.as_ref();
    let file = File::open(path)?;
    let mut ds = read_dataset(BufReader::new(file), &DatasetSchema::default())?;
    ds.provenance = path.display().to_string();
    Ok(ds)
}

pub fn read_dataset<R: Read>(reader: R, schema: &DatasetSchema) -> Result<Dataset, ModelError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_row_error(e, 1))?.clone();
    if headers.iter().collect::<Vec<_>>() != DATASET_HEADER {
        return Err(ModelError::Header {
            found: headers.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for row in rdr.records() {
        let row = row.map_err(|e| csv_row_error(e, 0))?;
        let line = row.position().map_or(0, |p| p.line());
        let field_err = |field: &'static str, message: String| ModelError::Field { line, field, message };

        let row_id: u64 = row[0]
            .trim()
            .parse()
            .map_err(|e: std::num::ParseIntError| field_err("row_id", e.to_string()))?;
        let middle = normalize_name(&row[2]);
        let middle_initial = match middle.chars().count() {
            0 => None,
            1 => middle.chars().next(),
            _ => return Err(field_err("middle_initial", format!("`{middle}` is not a single letter"))),
        };
        let yob: i32 = row[4]
            .trim()
            .parse()
            .map_err(|e: std::num::ParseIntError| field_err("yob", e.to_string()))?;
        let sex: Sex = row[5].parse().map_err(|m| field_err("sex", m))?;
        let rec = PersonRecord {
            row_id,
            first_name: normalize_name(&row[1]),
            middle_initial,
            last_name: normalize_name(&row[3]),
            yob,
            sex,
            meshblock: row[6].trim().to_string(),
            sa3: row[7].trim().to_string(),
        };
        rec.validate(schema.yob_range, schema.sa3_digits)
            .map_err(|(field, message)| field_err(field, message))?;
        if !seen.insert(row_id) {
            return Err(ModelError::DuplicateRowId { line, row_id });
        }
        records.push(rec);
    }
    Ok(Dataset::new(records, "csv"))
}

pub fn write_dataset<W: Write>(dataset: &Dataset, w: W) -> Result<(), ModelError> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    let io = |e: csv::Error| ModelError::Io(std::io::Error::other(e));
    wtr.write_record(DATASET_HEADER).map_err(io)?;
    for r in &dataset.records {
        let middle = r.middle_initial.map(String::from).unwrap_or_default();
        wtr.write_record([
            r.row_id.to_string().as_str(),
            &r.first_name,
            &middle,
            &r.last_name,
            &r.yob.to_string(),
            r.sex.as_str(),
            &r.meshblock,
            &r.sa3,
        ])
        .map_err(io)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let file = File::create(path)?;
    write_dataset(dataset, std::io::BufWriter::new(file))
}
