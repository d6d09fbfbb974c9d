//! HMAC linkage keys over attribute subsets, the inverted link index built
//! from them, uniqueness auditing and pruning.
//!
//! A [`LinkageKeySpec`] names an ordered list of [`Selector`]s. For each record
//! the selected values are canonically serialized and tagged with
//! HMAC-SHA256 under the run key. The [`LinkIndex`] maps every tag to the
//! row ids that produced it, one partition per spec.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::hashcore::{hmac_tag, HmacKey};
use crate::model::{canonical_serialize, Dataset, Field, ModelError, PersonRecord, Selector};

#[derive(Debug, Error)]
pub enum LinkKeyError {
    #[error("spec `{0}` has no attributes")]
    EmptySpec(String),
    #[error("duplicate spec name `{0}`")]
    DuplicateName(String),
    #[error("spec line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// A 32-byte HMAC linkage tag.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Tag(pub [u8; 32]);

impl Tag {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tag({}…)", &self.to_hex()[..12])
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkageKeySpec {
    pub name: String,
    pub selectors: Vec<Selector>,
}

impl LinkageKeySpec {
    pub fn new(name: impl Into<String>, selectors: Vec<Selector>) -> Result<Self, LinkKeyError> {
        let name = name.into();
        if selectors.is_empty() {
            return Err(LinkKeyError::EmptySpec(name));
        }
        Ok(Self { name, selectors })
    }

    /// Selectors used when this spec is probed with a query record.
    /// Transpositions are undone, so a query whose first and last names were
    /// swapped reproduces the original record's transposed tag.
    pub fn probe_selectors(&self) -> Vec<Selector> {
        self.selectors.iter().flat_map(|s| s.untransposed()).collect()
    }

    pub fn uses_field(&self, field: Field) -> bool {
        self.selectors.iter().any(|s| s.fields().contains(&field))
    }

    /// Whether `record` can contribute a tag: a spec over the middle initial
    /// yields nothing for records without one.
    pub fn applies_to(&self, record: &PersonRecord) -> bool {
        record.middle_initial.is_some() || !self.uses_field(Field::MiddleInitial)
    }

    pub fn tag(&self, record: &PersonRecord, key: &HmacKey) -> Option<Tag> {
        self.applies_to(record)
            .then(|| Tag(hmac_tag(key, &canonical_serialize(record, &self.selectors))))
    }

    pub fn probe_tag(&self, record: &PersonRecord, key: &HmacKey) -> Option<Tag> {
        self.applies_to(record)
            .then(|| Tag(hmac_tag(key, &canonical_serialize(record, &self.probe_selectors()))))
    }

    /// `name: sel, sel, ...` form used in spec files.
    pub fn to_line(&self) -> String {
        let sels: Vec<String> = self.selectors.iter().map(|s| s.to_string()).collect();
        format!("{}: {}", self.name, sels.join("; "))
    }
}

/// Parses a spec file: one `name: selector; selector; ...` per line.
pub fn parse_specs(text: &str) -> Result<Vec<LinkageKeySpec>, LinkKeyError> {
    let mut specs: Vec<LinkageKeySpec> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (name, body) = line.split_once(':').ok_or_else(|| LinkKeyError::Parse {
            line: i + 1,
            message: "expected `name: selectors`".into(),
        })?;
        let selectors = body
            .split(';')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.parse::<Selector>())
            .collect::<Result<Vec<_>, _>>()?;
        specs.push(LinkageKeySpec::new(name.trim(), selectors)?);
    }
    check_unique_names(&specs)?;
    Ok(specs)
}

fn check_unique_names(specs: &[LinkageKeySpec]) -> Result<(), LinkKeyError> {
    let mut seen = HashSet::new();
    for s in specs {
        if !seen.insert(s.name.as_str()) {
            return Err(LinkKeyError::DuplicateName(s.name.clone()));
        }
    }
    Ok(())
}

/// The eleven identifiers of the uniqueness table, in table order. This is
/// also the default hierarchy for first-unique linking.
pub fn default_specs() -> Vec<LinkageKeySpec> {
    use Field::*;
    use Selector::*;
    let f = FullField;
    let table: [(&str, Vec<Selector>); 11] = [
        ("ForenameSurnameYoBSexSA3", vec![f(Forename), f(Surname), f(YoB), f(Sex), f(Sa3)]),
        (
            "ForenameInitialSurnameInitialYoBSexMeshblock",
            vec![Initial(Forename), Initial(Surname), f(YoB), f(Sex), f(Meshblock)],
        ),
        ("ForenameSurnameYoBMeshblock", vec![f(Forename), f(Surname), f(YoB), f(Meshblock)]),
        (
            "SurnameForenameYoBSexMeshblockTrans",
            vec![Transposed(Forename, Surname), f(YoB), f(Sex), f(Meshblock)],
        ),
        (
            "ForenameSurnameYoBSexMeshblock",
            vec![f(Forename), f(Surname), f(YoB), f(Sex), f(Meshblock)],
        ),
        ("ForenameSurnameYoBSex", vec![f(Forename), f(Surname), f(YoB), f(Sex)]),
        (
            "ForenameBiSurnameBiYoBSexMeshblock",
            vec![Bigram2(Forename), Bigram2(Surname), f(YoB), f(Sex), f(Meshblock)],
        ),
        ("ForenameSurnameSexMeshblock", vec![f(Forename), f(Surname), f(Sex), f(Meshblock)]),
        (
            "SurnameInitialYoBSexMeshblock",
            vec![Initial(Surname), f(YoB), f(Sex), f(Meshblock)],
        ),
        (
            "ForenameInitialYoBSexMeshblock",
            vec![Initial(Forename), f(YoB), f(Sex), f(Meshblock)],
        ),
        (
            "MiddleNameSurnameYoBSexMeshblock",
            vec![f(MiddleInitial), f(Surname), f(YoB), f(Sex), f(Meshblock)],
        ),
    ];
    table
        .into_iter()
        .map(|(name, sels)| LinkageKeySpec::new(name, sels).expect("non-empty"))
        .collect()
}

/// One tag per applicable spec, keyed by spec name.
pub fn derive_digests(record: &PersonRecord, specs: &[LinkageKeySpec], key: &HmacKey) -> Vec<(String, Tag)> {
    specs
        .iter()
        .filter_map(|s| s.tag(record, key).map(|t| (s.name.clone(), t)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Partition {
    pub name: String,
    pub postings: HashMap<Tag, Vec<u64>>,
    /// Number of record contributions (sum of posting lengths).
    pub contributions: u64,
}

impl Partition {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            ..Default::default()
        }
    }

    fn add(&mut self, tag: Tag, row_id: u64) {
        self.postings.entry(tag).or_default().push(row_id);
        self.contributions += 1;
    }

    pub fn lookup(&self, tag: &Tag) -> &[u64] {
        self.postings.get(tag).map_or(&[], |v| v.as_slice())
    }

    /// (tag, postings) sorted by tag.
    pub fn sorted(&self) -> Vec<(&Tag, &Vec<u64>)> {
        let mut v: Vec<_> = self.postings.iter().collect();
        v.sort_by(|a, b| a.0.cmp(b.0));
        v
    }
}

/// Inverted index tag → row ids, one partition per spec, in hierarchy order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LinkIndex {
    pub partitions: Vec<Partition>,
}

impl LinkIndex {
    pub fn spec_order(&self) -> Vec<&str> {
        self.partitions.iter().map(|p| p.name.as_str()).collect()
    }

    pub fn partition(&self, name: &str) -> Option<&Partition> {
        self.partitions.iter().find(|p| p.name == name)
    }

    pub fn total_postings(&self) -> usize {
        self.partitions.iter().map(|p| p.postings.len()).sum()
    }
}

/// Builds the index. Tags are computed in parallel; postings are appended
/// in dataset order so the result does not depend on thread count.
pub fn build_index(dataset: &Dataset, specs: &[LinkageKeySpec], key: &HmacKey) -> LinkIndex {
    let tags: Vec<Vec<Option<Tag>>> = dataset
        .records
        .par_iter()
        .map(|r| specs.iter().map(|s| s.tag(r, key)).collect())
        .collect();
    let mut partitions: Vec<Partition> = specs.iter().map(|s| Partition::new(&s.name)).collect();
    for (rec, rec_tags) in dataset.records.iter().zip(tags) {
        for (p, tag) in partitions.iter_mut().zip(rec_tags) {
            if let Some(t) = tag {
                p.add(t, rec.row_id);
            }
        }
    }
    LinkIndex { partitions }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniquenessRow {
    pub spec: String,
    pub tags_total: usize,
    pub tags_unique: usize,
    /// 100 · (tags with exactly one row) / (distinct tags).
    pub percent_unique_tags: f64,
    pub records_contributing: u64,
    pub records_unique: u64,
    /// 100 · (records whose tag is unshared) / (records contributing a tag).
    pub percent_unique_records: f64,
    pub duplicate_group_count: usize,
    pub largest_group_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniquenessReport {
    pub dataset_size: usize,
    pub rows: Vec<UniquenessRow>,
}

impl UniquenessReport {
    pub fn row(&self, spec: &str) -> Option<&UniquenessRow> {
        self.rows.iter().find(|r| r.spec == spec)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "spec,percent_unique_records,percent_unique_tags,records_contributing,dataset_size,duplicate_groups,largest_group"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{:.3},{:.3},{},{},{},{}",
                r.spec,
                r.percent_unique_records,
                r.percent_unique_tags,
                r.records_contributing,
                self.dataset_size,
                r.duplicate_group_count,
                r.largest_group_size
            )?;
        }
        Ok(())
    }
}

fn percent(num: u64, den: u64) -> f64 {
    if den == 0 {
        100.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

pub fn uniqueness_report(index: &LinkIndex, dataset_size: usize) -> UniquenessReport {
    let rows = index
        .partitions
        .iter()
        .map(|p| {
            let tags_unique = p.postings.values().filter(|v| v.len() == 1).count();
            let dup: Vec<usize> = p.postings.values().map(Vec::len).filter(|&n| n > 1).collect();
            UniquenessRow {
                spec: p.name.clone(),
                tags_total: p.postings.len(),
                tags_unique,
                percent_unique_tags: percent(tags_unique as u64, p.postings.len() as u64),
                records_contributing: p.contributions,
                records_unique: tags_unique as u64,
                percent_unique_records: percent(tags_unique as u64, p.contributions),
                duplicate_group_count: dup.len(),
                largest_group_size: p.postings.values().map(Vec::len).max().unwrap_or(0),
            }
        })
        .collect();
    UniquenessReport { dataset_size, rows }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PrunePolicy {
    /// Remove every posting list holding more than one row.
    DropPostings,
    /// Remove whole partitions whose record-level uniqueness (percent) is
    /// below the threshold.
    DropSpec(f64),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PruneStats {
    /// (spec, postings removed, row contributions removed)
    pub dropped_postings: Vec<(String, usize, u64)>,
    pub dropped_specs: Vec<String>,
}

impl PruneStats {
    pub fn total_dropped_postings(&self) -> usize {
        self.dropped_postings.iter().map(|(_, n, _)| n).sum()
    }
}

pub fn prune_nonunique(index: &LinkIndex, policy: PrunePolicy) -> (LinkIndex, PruneStats) {
    let mut stats = PruneStats::default();
    let mut out = LinkIndex::default();
    match policy {
        PrunePolicy::DropPostings => {
            for p in &index.partitions {
                let mut kept = Partition::new(&p.name);
                let (mut n, mut rows) = (0usize, 0u64);
                for (tag, ids) in &p.postings {
                    if ids.len() == 1 {
                        kept.add(*tag, ids[0]);
                    } else {
                        n += 1;
                        rows += ids.len() as u64;
                    }
                }
                stats.dropped_postings.push((p.name.clone(), n, rows));
                out.partitions.push(kept);
            }
        }
        PrunePolicy::DropSpec(threshold) => {
            let report = uniqueness_report(index, 0);
            for (p, row) in index.partitions.iter().zip(&report.rows) {
                if row.percent_unique_records < threshold {
                    stats.dropped_specs.push(p.name.clone());
                } else {
                    out.partitions.push(p.clone());
                }
            }
        }
    }
    (out, stats)
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"PPRLIDX\0";
const SNAPSHOT_VERSION: u32 = 1;

/// Binary snapshot: magic, version, then per partition its name,
/// contribution count and tag-sorted (tag, postings) runs. Little-endian.
pub fn write_snapshot<W: Write>(index: &LinkIndex, mut w: W) -> Result<(), LinkKeyError> {
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
    w.write_all(&(index.partitions.len() as u32).to_le_bytes())?;
    for p in &index.partitions {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&p.contributions.to_le_bytes())?;
        w.write_all(&(p.postings.len() as u64).to_le_bytes())?;
        for (tag, ids) in p.sorted() {
            w.write_all(&tag.0)?;
            w.write_all(&(ids.len() as u32).to_le_bytes())?;
            for id in ids {
                w.write_all(&id.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N], LinkKeyError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| LinkKeyError::Snapshot(format!("truncated: {e}")))?;
    Ok(buf)
}

pub fn read_snapshot<R: Read>(mut r: R) -> Result<LinkIndex, LinkKeyError> {
    if &read_array::<8, _>(&mut r)? != SNAPSHOT_MAGIC {
        return Err(LinkKeyError::Snapshot("bad magic".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != SNAPSHOT_VERSION {
        return Err(LinkKeyError::Snapshot(format!("unsupported version {version}")));
    }
    let n_parts = u32::from_le_bytes(read_array(&mut r)?);
    let mut index = LinkIndex::default();
    for _ in 0..n_parts {
        let len = u16::from_le_bytes(read_array(&mut r)?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| LinkKeyError::Snapshot("name is not utf-8".into()))?;
        let contributions = u64::from_le_bytes(read_array(&mut r)?);
        let n_tags = u64::from_le_bytes(read_array(&mut r)?);
        let mut postings = HashMap::with_capacity(n_tags as usize);
        for _ in 0..n_tags {
            let tag = Tag(read_array(&mut r)?);
            let n = u32::from_le_bytes(read_array(&mut r)?);
            let ids = (0..n)
                .map(|_| read_array(&mut r).map(u64::from_le_bytes))
                .collect::<Result<Vec<_>, _>>()?;
            postings.insert(tag, ids);
        }
        index.partitions.push(Partition {
            name,
            postings,
            contributions,
        });
    }
    Ok(index)
}

/// Debug export `spec,tag_hex,row_id`. The first line marks it sensitive.
pub fn export_csv<W: Write>(index: &LinkIndex, mut w: W) -> std::io::Result<()> {
    writeln!(w, "# SENSITIVE: linkage tags with row ids; do not share")?;
    writeln!(w, "spec,tag_hex,row_id")?;
    for p in &index.partitions {
        for (tag, ids) in p.sorted() {
            for id in ids {
                writeln!(w, "{},{},{}", p.name, tag.to_hex(), id)?;
            }
        }
    }
    Ok(())
}
