//! Synthetic population generation and the distortion suite used to build
//! linking test pairs.

pub mod bundled;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use thiserror::Error;

use crate::model::{sa3_of, Dataset, FrequencyTable, PersonRecord, Sex, DEFAULT_SA3_DIGITS};
use crate::rng::{stream, StreamRng};

/// Year range ChangeYOB draws from.
pub const CHANGE_YOB_RANGE: (i32, i32) = (1916, 2016);

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("cannot distort an empty dataset")]
    EmptyDataset,
    #[error("unknown distortion `{0}`")]
    UnknownDistortion(String),
}

/// First-name tables keyed by (year of birth, sex), with nearest-year lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstNameTables {
    tables: BTreeMap<(i32, Sex), FrequencyTable>,
}

impl FirstNameTables {
    pub fn new(tables: BTreeMap<(i32, Sex), FrequencyTable>) -> Self {
        Self { tables }
    }

    pub fn tables(&self) -> &BTreeMap<(i32, Sex), FrequencyTable> {
        &self.tables
    }

    /// The year closest to `yob` that has a table for `sex`; ties go to the
    /// earlier year.
    pub fn nearest_year(&self, yob: i32, sex: Sex) -> Option<i32> {
        self.tables
            .keys()
            .filter(|(_, s)| *s == sex)
            .map(|(y, _)| *y)
            .min_by_key(|y| ((y - yob).abs(), *y))
    }

    pub fn table_for(&self, yob: i32, sex: Sex) -> &FrequencyTable {
        let year = self
            .nearest_year(yob, sex)
            .expect("validated config has tables for both sexes");
        &self.tables[&(year, sex)]
    }

    /// Reads a `yob,sex,value,count` CSV.
    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self, SynthError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut grouped: BTreeMap<(i32, Sex), Vec<(String, u64)>> = BTreeMap::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row.map_err(|e| SynthError::Config(e.to_string()))?;
            let bad = |what: &str| SynthError::Config(format!("first-name table line {}: bad {what}", i + 2));
            let yob: i32 = row.get(0).and_then(|v| v.trim().parse().ok()).ok_or_else(|| bad("yob"))?;
            let sex: Sex = row.get(1).and_then(|v| v.parse().ok()).ok_or_else(|| bad("sex"))?;
            let value = row.get(2).map(crate::model::normalize_name).ok_or_else(|| bad("value"))?;
            let count: u64 = row.get(3).and_then(|v| v.trim().parse().ok()).ok_or_else(|| bad("count"))?;
            grouped.entry((yob, sex)).or_default().push((value, count));
        }
        let tables = grouped
            .into_iter()
            .map(|(k, v)| Ok((k, FrequencyTable::new(v).map_err(|e| SynthError::Config(e.to_string()))?)))
            .collect::<Result<_, SynthError>>()?;
        Ok(Self { tables })
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "yob,sex,value,count")?;
        for ((yob, sex), t) in &self.tables {
            for (v, c) in t.entries() {
                writeln!(w, "{yob},{sex},{v},{c}")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GeneratorConfig {
    pub population_size: usize,
    pub seed: u64,
    pub last_name_table: FrequencyTable,
    pub first_name_tables: FirstNameTables,
    pub meshblock_table: FrequencyTable,
    /// Year-of-birth weights; values are years. Uniform over `yob_range` when absent.
    pub yob_table: Option<FrequencyTable>,
    pub yob_range: (i32, i32),
    pub middle_name_yob_offset: i32,
    /// Probability that a generated record carries a middle initial.
    pub middle_initial_rate: f64,
    pub sa3_digits: usize,
}

impl GeneratorConfig {
    /// Configuration over the bundled stand-in tables.
    pub fn bundled(population_size: usize, seed: u64) -> Self {
        Self {
            population_size,
            seed,
            last_name_table: bundled::surname_table(),
            first_name_tables: bundled::first_name_tables(),
            meshblock_table: bundled::meshblock_table(),
            yob_table: Some(bundled::yob_table()),
            yob_range: crate::model::DEFAULT_YOB_RANGE,
            middle_name_yob_offset: 20,
            middle_initial_rate: 0.85,
            sa3_digits: DEFAULT_SA3_DIGITS,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let cfg = |m: &str| Err(SynthError::Config(m.to_string()));
        if self.last_name_table.is_empty() || self.last_name_table.total() == 0 {
            return cfg("last-name table is empty");
        }
        if self.meshblock_table.is_empty() || self.meshblock_table.total() == 0 {
            return cfg("meshblock table is empty");
        }
        for sex in [Sex::M, Sex::F] {
            if self.first_name_tables.nearest_year(self.yob_range.0, sex).is_none() {
                return cfg(&format!("no first-name tables for sex {sex}"));
            }
        }
        if self.first_name_tables.tables().values().any(|t| t.is_empty() || t.total() == 0) {
            return cfg("a first-name table is empty");
        }
        if self.yob_range.0 >= self.yob_range.1 {
            return cfg("yob_range is degenerate");
        }
        if let Some(t) = &self.yob_table {
            if t.is_empty() || t.total() == 0 {
                return cfg("yob table is empty");
            }
            for (v, _) in t.entries() {
                match v.parse::<i32>() {
                    Ok(y) if y >= self.yob_range.0 && y <= self.yob_range.1 => {}
                    _ => return cfg(&format!("yob table value `{v}` outside yob_range")),
                }
            }
        }
        if !(0.0..=1.0).contains(&self.middle_initial_rate) {
            return cfg("middle_initial_rate must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Weighted sampler over a frequency table's values.
#[derive(Debug, Clone)]
struct TableSampler {
    values: Vec<String>,
    index: WeightedIndex<u64>,
}

impl TableSampler {
    fn new(table: &FrequencyTable) -> Result<Self, SynthError> {
        let index = WeightedIndex::new(table.entries().iter().map(|(_, c)| *c))
            .map_err(|e| SynthError::Config(format!("unsampleable table: {e}")))?;
        Ok(Self {
            values: table.entries().iter().map(|(v, _)| v.clone()).collect(),
            index,
        })
    }

    fn sample(&self, rng: &mut StreamRng) -> &str {
        &self.values[self.index.sample(rng)]
    }
}

/// Precomputed samplers for one generator configuration. Also drives the
/// distortions that redraw from the generation distribution.
#[derive(Debug, Clone)]
pub struct Generator {
    config: GeneratorConfig,
    last: TableSampler,
    meshblock: TableSampler,
    first: HashMap<(i32, Sex), TableSampler>,
    yob: Option<TableSampler>,
}

impl Generator {
    pub fn new(config: GeneratorConfig) -> Result<Self, SynthError> {
        config.validate()?;
        let first = config
            .first_name_tables
            .tables()
            .iter()
            .map(|(k, t)| Ok((*k, TableSampler::new(t)?)))
            .collect::<Result<_, SynthError>>()?;
        Ok(Self {
            last: TableSampler::new(&config.last_name_table)?,
            meshblock: TableSampler::new(&config.meshblock_table)?,
            yob: config.yob_table.as_ref().map(TableSampler::new).transpose()?,
            first,
            config,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    fn first_name(&self, yob: i32, sex: Sex, rng: &mut StreamRng) -> String {
        let year = self
            .config
            .first_name_tables
            .nearest_year(yob, sex)
            .expect("validated");
        self.first[&(year, sex)].sample(rng).to_string()
    }

    fn draw_meshblock(&self, rng: &mut StreamRng) -> String {
        self.meshblock.sample(rng).to_string()
    }

    /// `population_size` records, reproducible from the config's seed.
    pub fn generate(&self) -> Dataset {
        let c = &self.config;
        let mut rng = stream(c.seed, "generate");
        let records = (0..c.population_size)
            .map(|i| {
                let yob = match &self.yob {
                    Some(s) => s.sample(&mut rng).parse().expect("validated"),
                    None => rng.gen_range(c.yob_range.0..=c.yob_range.1),
                };
                let sex = if rng.gen_bool(0.5) { Sex::M } else { Sex::F };
                let first_name = self.first_name(yob, sex, &mut rng);
                let middle_initial = if rng.gen_bool(c.middle_initial_rate) {
                    self.first_name(yob - c.middle_name_yob_offset, sex, &mut rng)
                        .chars()
                        .next()
                } else {
                    None
                };
                let last_name = self.last.sample(&mut rng).to_string();
                let meshblock = self.draw_meshblock(&mut rng);
                PersonRecord {
                    row_id: i as u64 + 1,
                    first_name,
                    middle_initial,
                    last_name,
                    yob,
                    sex,
                    sa3: sa3_of(&meshblock, c.sa3_digits),
                    meshblock,
                }
            })
            .collect();
        Dataset::new(records, "original")
    }

    /// Applies `spec` to each record independently with the spec's probability.
    pub fn distort(&self, dataset: &Dataset, spec: DistortionSpec, seed: u64) -> Result<Distorted, SynthError> {
        if dataset.is_empty() {
            return Err(SynthError::EmptyDataset);
        }
        if !(0.0..=1.0).contains(&spec.probability) {
            return Err(SynthError::Config(format!(
                "distortion probability {} outside [0, 1]",
                spec.probability
            )));
        }
        let mut rng = stream(seed, &format!("distort:{}:{}", dataset.provenance, spec.kind));
        let mut out = Distorted {
            dataset: Dataset::new(Vec::with_capacity(dataset.len()), format!("distorted:{}", spec.kind)),
            applied: 0,
            skipped: 0,
        };
        for rec in &dataset.records {
            let mut r = rec.clone();
            if spec.kind != DistortionKind::Exact && rng.gen_bool(spec.probability) {
                if self.apply(spec.kind, &mut r, &mut rng) {
                    out.applied += 1;
                } else {
                    out.skipped += 1;
                }
            }
            out.dataset.records.push(r);
        }
        Ok(out)
    }

    /// Returns false when the distortion cannot apply to this record.
    fn apply(&self, kind: DistortionKind, r: &mut PersonRecord, rng: &mut StreamRng) -> bool {
        match kind {
            DistortionKind::Exact => false,
            DistortionKind::ChangeGender => {
                r.sex = r.sex.flipped();
                true
            }
            DistortionKind::ChangeMiddleInitial => {
                r.middle_initial = Some(random_letter_except(rng, r.middle_initial));
                true
            }
            DistortionKind::RemoveAddMiddleInitial => {
                r.middle_initial = match r.middle_initial {
                    Some(_) => None,
                    None => Some(random_letter_except(rng, None)),
                };
                true
            }
            DistortionKind::ChangeYob => {
                let (lo, hi) = CHANGE_YOB_RANGE;
                loop {
                    let y = rng.gen_range(lo..=hi);
                    if y != r.yob {
                        r.yob = y;
                        return true;
                    }
                }
            }
            DistortionKind::FirstLastTranspose => {
                std::mem::swap(&mut r.first_name, &mut r.last_name);
                true
            }
            DistortionKind::MeshblockChange => {
                if self.config.meshblock_table.len() < 2 {
                    return false;
                }
                loop {
                    let mb = self.draw_meshblock(rng);
                    if mb != r.meshblock {
                        r.sa3 = sa3_of(&mb, self.config.sa3_digits);
                        r.meshblock = mb;
                        return true;
                    }
                }
            }
            DistortionKind::LastName2LetterTranspose => match transpose_inner(&r.last_name, rng) {
                Some(n) => {
                    r.last_name = n;
                    true
                }
                None => false,
            },
            DistortionKind::FirstName2LetterTranspose => match transpose_inner(&r.first_name, rng) {
                Some(n) => {
                    r.first_name = n;
                    true
                }
                None => false,
            },
        }
    }
}

fn random_letter_except(rng: &mut StreamRng, current: Option<char>) -> char {
    loop {
        let c = (b'a' + rng.gen_range(0..26u8)) as char;
        if Some(c) != current {
            return c;
        }
    }
}

/// Swaps two adjacent inner letters, never touching the first or last
/// character. Only pairs of distinct letters are eligible; `None` when the
/// name is shorter than four characters or has no eligible pair.
pub fn transpose_inner(name: &str, rng: &mut impl Rng) -> Option<String> {
    let mut chars: Vec<char> = name.chars().collect();
    let n = chars.len();
    if n < 4 {
        return None;
    }
    let eligible: Vec<usize> = (1..=n - 3).filter(|&j| chars[j] != chars[j + 1]).collect();
    let &j = eligible.choose(rng)?;
    chars.swap(j, j + 1);
    Some(chars.into_iter().collect())
}

/// Result of a distortion pass.
#[derive(Debug, Clone)]
pub struct Distorted {
    pub dataset: Dataset,
    /// Records the distortion changed.
    pub applied: usize,
    /// Records selected for distortion that it could not apply to.
    pub skipped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DistortionKind {
    ChangeGender,
    ChangeMiddleInitial,
    ChangeYob,
    FirstLastTranspose,
    MeshblockChange,
    RemoveAddMiddleInitial,
    LastName2LetterTranspose,
    FirstName2LetterTranspose,
    Exact,
}

impl DistortionKind {
    pub const ALL: [DistortionKind; 9] = [
        DistortionKind::ChangeGender,
        DistortionKind::ChangeMiddleInitial,
        DistortionKind::ChangeYob,
        DistortionKind::FirstLastTranspose,
        DistortionKind::MeshblockChange,
        DistortionKind::RemoveAddMiddleInitial,
        DistortionKind::LastName2LetterTranspose,
        DistortionKind::FirstName2LetterTranspose,
        DistortionKind::Exact,
    ];

    /// The rows of the linking-results table, in table order.
    pub const RESULTS_SUITE: [DistortionKind; 8] = [
        DistortionKind::ChangeMiddleInitial,
        DistortionKind::FirstLastTranspose,
        DistortionKind::Exact,
        DistortionKind::LastName2LetterTranspose,
        DistortionKind::RemoveAddMiddleInitial,
        DistortionKind::FirstName2LetterTranspose,
        DistortionKind::MeshblockChange,
        DistortionKind::ChangeGender,
    ];

    pub fn label(self) -> &'static str {
        match self {
            DistortionKind::ChangeGender => "changeGender",
            DistortionKind::ChangeMiddleInitial => "changeInitial",
            DistortionKind::ChangeYob => "changeYOB",
            DistortionKind::FirstLastTranspose => "firstLastTranspose",
            DistortionKind::MeshblockChange => "meshblockChange",
            DistortionKind::RemoveAddMiddleInitial => "removeAddInitial",
            DistortionKind::LastName2LetterTranspose => "lastName2LetterTranspose",
            DistortionKind::FirstName2LetterTranspose => "firstName2LetterTranspose",
            DistortionKind::Exact => "exact",
        }
    }
}

impl fmt::Display for DistortionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for DistortionKind {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DistortionKind::ALL
            .into_iter()
            .find(|k| k.label().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| SynthError::UnknownDistortion(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistortionSpec {
    pub kind: DistortionKind,
    pub probability: f64,
}

impl DistortionSpec {
    /// Applies to every record.
    pub fn all(kind: DistortionKind) -> Self {
        Self { kind, probability: 1.0 }
    }
}

pub fn generate(config: GeneratorConfig) -> Result<Dataset, SynthError> {
    Ok(Generator::new(config)?.generate())
}

/// Seeded permutation of the records.
pub fn shuffle(dataset: &Dataset, seed: u64) -> Dataset {
    let mut rng = stream(seed, &format!("shuffle:{}", dataset.provenance));
    let mut records = dataset.records.clone();
    records.shuffle(&mut rng);
    Dataset::new(records, format!("shuffled:{}", dataset.provenance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn tiny_config(n: usize, seed: u64) -> GeneratorConfig {
        let ft = |pairs: &[(&str, u64)]| {
            FrequencyTable::new(pairs.iter().map(|(v, c)| (v.to_string(), *c)).collect()).unwrap()
        };
        let mut first = BTreeMap::new();
        first.insert((1960, Sex::M), ft(&[("john", 5), ("peter", 3), ("mark", 2)]));
        first.insert((1990, Sex::M), ft(&[("liam", 5), ("noah", 3)]));
        first.insert((1960, Sex::F), ft(&[("mary", 5), ("susan", 3)]));
        first.insert((1990, Sex::F), ft(&[("olivia", 5), ("emma", 3)]));
        GeneratorConfig {
            population_size: n,
            seed,
            last_name_table: ft(&[("smith", 10), ("jones", 5), ("li", 2), ("nguyen", 3)]),
            first_name_tables: FirstNameTables::new(first),
            meshblock_table: ft(&[("10100000001", 3), ("10100000002", 2), ("20200000003", 4)]),
            yob_table: None,
            yob_range: (1916, 2016),
            middle_name_yob_offset: 20,
            middle_initial_rate: 0.8,
            sa3_digits: 3,
        }
    }

    #[test]
    fn zero_population_is_empty() {
        assert!(generate(tiny_config(0, 1)).unwrap().is_empty());
    }

    #[test]
    fn degenerate_surname_table() {
        let mut c = tiny_config(200, 2);
        c.last_name_table = FrequencyTable::new(vec![("smith".into(), 1)]).unwrap();
        let ds = generate(c).unwrap();
        assert!(ds.records.iter().all(|r| r.last_name == "smith"));
    }

    #[test]
    fn empty_table_is_a_config_error() {
        let mut c = tiny_config(10, 2);
        c.last_name_table = FrequencyTable::new(vec![]).unwrap();
        assert!(matches!(generate(c), Err(SynthError::Config(_))));
        let mut c = tiny_config(10, 2);
        c.yob_range = (2000, 2000);
        assert!(matches!(generate(c), Err(SynthError::Config(_))));
    }

    #[test]
    fn nearest_year_fallback() {
        let c = tiny_config(1, 1);
        let t = &c.first_name_tables;
        assert_eq!(t.nearest_year(1916, Sex::M), Some(1960));
        assert_eq!(t.nearest_year(2016, Sex::F), Some(1990));
        assert_eq!(t.nearest_year(1975, Sex::M), Some(1960));
        assert_eq!(t.nearest_year(1976, Sex::M), Some(1990));
    }

    #[test]
    fn first_names_follow_year_and_sex_tables() {
        let ds = generate(tiny_config(2000, 3)).unwrap();
        let cfg = tiny_config(1, 1);
        for r in &ds.records {
            let year = if r.yob <= 1975 { 1960 } else { 1990 };
            let table = &cfg.first_name_tables.tables()[&(year, r.sex)];
            assert!(table.count_of(&r.first_name).is_some(), "{r:?}");
            assert_eq!(r.sa3, sa3_of(&r.meshblock, 3));
        }
    }

    // Oracle: the "smith" count is Binomial(100000, 0.02); mean 2000,
    // sigma = sqrt(100000 * 0.02 * 0.98) = 44.27.
    #[test]
    fn surname_frequencies_follow_table() {
        let mut c = tiny_config(100_000, 11);
        c.last_name_table = FrequencyTable::new(vec![("smith".into(), 2), ("other".into(), 98)]).unwrap();
        let ds = generate(c).unwrap();
        let smiths = ds.records.iter().filter(|r| r.last_name == "smith").count() as f64;
        let sigma = (100_000.0f64 * 0.02 * 0.98).sqrt();
        assert!((smiths - 2000.0).abs() <= 5.0 * sigma, "smith count {smiths}");
    }

    #[test]
    fn generation_is_reproducible() {
        assert_eq!(generate(tiny_config(500, 9)).unwrap(), generate(tiny_config(500, 9)).unwrap());
        assert_ne!(generate(tiny_config(500, 9)).unwrap(), generate(tiny_config(500, 10)).unwrap());
    }

    #[test]
    fn exact_is_identity() {
        let g = Generator::new(tiny_config(300, 4)).unwrap();
        let ds = g.generate();
        let d = g.distort(&ds, DistortionSpec::all(DistortionKind::Exact), 1).unwrap();
        assert_eq!(d.dataset.records, ds.records);
        assert_eq!(d.applied, 0);
    }

    #[test]
    fn first_last_transpose_and_gender_flip() {
        let g = Generator::new(tiny_config(1, 4)).unwrap();
        let rec = PersonRecord {
            row_id: 1,
            first_name: "anna".into(),
            middle_initial: None,
            last_name: "smith".into(),
            yob: 1980,
            sex: Sex::M,
            meshblock: "10100000001".into(),
            sa3: "101".into(),
        };
        let ds = Dataset::new(vec![rec], "t");
        let t = g.distort(&ds, DistortionSpec::all(DistortionKind::FirstLastTranspose), 1).unwrap();
        assert_eq!(t.dataset.records[0].first_name, "smith");
        assert_eq!(t.dataset.records[0].last_name, "anna");
        let s = g.distort(&ds, DistortionSpec::all(DistortionKind::ChangeGender), 1).unwrap();
        assert_eq!(s.dataset.records[0].sex, Sex::F);
    }

    #[test]
    fn short_names_are_skipped_and_counted() {
        let g = Generator::new(tiny_config(1, 4)).unwrap();
        let mut rec = g.generate().records.remove(0);
        rec.last_name = "li".into();
        let ds = Dataset::new(vec![rec.clone()], "t");
        let d = g.distort(&ds, DistortionSpec::all(DistortionKind::LastName2LetterTranspose), 3).unwrap();
        assert_eq!(d.skipped, 1);
        assert_eq!(d.dataset.records[0], rec);
    }

    #[test]
    fn empty_dataset_cannot_be_distorted() {
        let g = Generator::new(tiny_config(1, 4)).unwrap();
        let empty = Dataset::new(vec![], "e");
        assert!(matches!(
            g.distort(&empty, DistortionSpec::all(DistortionKind::ChangeGender), 1),
            Err(SynthError::EmptyDataset)
        ));
    }

    #[test]
    fn change_yob_stays_in_range() {
        let g = Generator::new(tiny_config(2000, 5)).unwrap();
        let ds = g.generate();
        let d = g.distort(&ds, DistortionSpec::all(DistortionKind::ChangeYob), 2).unwrap();
        for (a, b) in ds.records.iter().zip(&d.dataset.records) {
            assert_ne!(a.yob, b.yob);
            assert!((1916..=2016).contains(&b.yob));
        }
    }

    #[test]
    fn shuffle_cases() {
        let empty = Dataset::new(vec![], "e");
        assert!(shuffle(&empty, 1).is_empty());
        let one = generate(tiny_config(1, 1)).unwrap();
        assert_eq!(shuffle(&one, 5).records, one.records);
        let five = generate(tiny_config(5, 1)).unwrap();
        assert_eq!(shuffle(&five, 7).records, shuffle(&five, 7).records);
        let big = generate(tiny_config(100, 1)).unwrap();
        let s = shuffle(&big, 7);
        assert_ne!(s.records, big.records);
        assert_eq!(s.row_ids(), big.row_ids());
    }

    #[test]
    fn distortion_labels_parse() {
        for k in DistortionKind::ALL {
            assert_eq!(k.label().parse::<DistortionKind>().unwrap(), k);
        }
        assert!("wobble".parse::<DistortionKind>().is_err());
    }

    fn changed(a: &PersonRecord, b: &PersonRecord) -> bool {
        a != b
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn distortions_preserve_ids_and_change_records(seed in any::<u64>(), kind_idx in 0usize..9, p in 0.0f64..=1.0) {
            let g = Generator::new(tiny_config(60, seed)).unwrap();
            let ds = g.generate();
            let kind = DistortionKind::ALL[kind_idx];
            let d = g.distort(&ds, DistortionSpec { kind, probability: p }, seed ^ 1).unwrap();
            prop_assert_eq!(d.dataset.row_ids(), ds.row_ids());
            let n_changed = ds.records.iter().zip(&d.dataset.records).filter(|(a, b)| changed(a, b)).count();
            if kind == DistortionKind::Exact {
                prop_assert_eq!(n_changed, 0);
            } else if kind != DistortionKind::FirstLastTranspose {
                prop_assert_eq!(n_changed, d.applied);
            }
        }

        #[test]
        fn inner_transposition_preserves_letters(name in "[a-z]{1,12}", seed in any::<u64>()) {
            let mut rng = StreamRng::seed_from_u64(seed);
            match transpose_inner(&name, &mut rng) {
                Some(t) => {
                    let mut a: Vec<char> = name.chars().collect();
                    let mut b: Vec<char> = t.chars().collect();
                    prop_assert_ne!(&t, &name);
                    prop_assert_eq!(a.first(), b.first());
                    prop_assert_eq!(a.last(), b.last());
                    a.sort_unstable();
                    b.sort_unstable();
                    prop_assert_eq!(a, b);
                }
                None => {
                    let c: Vec<char> = name.chars().collect();
                    prop_assert!(c.len() < 4 || c[1..c.len() - 1].windows(2).all(|w| w[0] == w[1]));
                }
            }
        }
    }
}
