//! Bundled stand-in frequency tables.
//!
//! Real surname lists, baby-name releases and mesh block populations cannot
//! be redistributed, so the toolkit ships synthetic tables with the same
//! shape: a Zipf surname distribution with a dominant "smith", year- and
//! sex-specific top-100 first-name lists drawn from pools of 297 boys' and
//! 377 girls' names, and a skewed mesh block population table. Everything is
//! generated from fixed internal seeds, so the tables are identical on every
//! machine.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, LogNormal};

use crate::model::{FrequencyTable, Sex};
use crate::rng::{stream, StreamRng};

use super::FirstNameTables;

const TABLE_SEED: u64 = 0x5EED_7AB1E5;

/// Distinct surnames in the bundled table.
pub const SURNAME_COUNT: usize = 60_000;
/// Zipf exponent of the surname table.
pub const SURNAME_ZIPF: f64 = 0.8;
/// Extra weight on the rank-1 surname on top of its Zipf weight.
pub const DOMINANT_BOOST: f64 = 4.0;
pub const DOMINANT_SURNAME: &str = "smith";

pub const BOYS_POOL: usize = 297;
pub const GIRLS_POOL: usize = 377;
pub const FIRST_NAME_YEARS: (i32, i32) = (1952, 2015);
pub const FIRST_NAME_ZIPF: f64 = 0.8;

pub const MESHBLOCK_COUNT: usize = 40_000;
pub const SA3_COUNT: usize = 340;

/// Common surnames placed at the head of the ranking, in rank order.
const HEAD_SURNAMES: [&str; 24] = [
    "smith", "jones", "williams", "brown", "wilson", "taylor", "johnson", "white", "martin",
    "anderson", "thompson", "nguyen", "thomas", "walker", "harris", "lee", "ryan", "robinson",
    "kelly", "king", "davis", "wright", "evans", "roberts",
];

const ONSETS: [(&str, u32); 40] = [
    ("b", 8), ("c", 6), ("d", 7), ("f", 4), ("g", 5), ("h", 6), ("j", 2), ("k", 5), ("l", 7),
    ("m", 8), ("n", 5), ("p", 5), ("r", 7), ("s", 9), ("t", 7), ("v", 3), ("w", 5), ("y", 1),
    ("z", 1), ("br", 3), ("ch", 3), ("cl", 2), ("cr", 2), ("dr", 2), ("fr", 2), ("gr", 2),
    ("kr", 1), ("pr", 2), ("sh", 3), ("st", 3), ("th", 2), ("tr", 2), ("bl", 1), ("gl", 1),
    ("pl", 1), ("sl", 1), ("sp", 1), ("sw", 1), ("wh", 1), ("qu", 1),
];

const VOWELS: [(&str, u32); 14] = [
    ("a", 14), ("e", 12), ("i", 9), ("o", 9), ("u", 4), ("ai", 1), ("ea", 1), ("ee", 1),
    ("ie", 1), ("oo", 1), ("ou", 1), ("y", 1), ("au", 1), ("ei", 1),
];

const CODAS: [(&str, u32); 17] = [
    ("", 20), ("n", 6), ("r", 6), ("l", 5), ("s", 4), ("t", 3), ("m", 2), ("ck", 1), ("ng", 1),
    ("nd", 1), ("rt", 1), ("ll", 2), ("ss", 1), ("th", 1), ("rd", 1), ("x", 1), ("nn", 1),
];

const SURNAME_SUFFIXES: [(&str, u32); 20] = [
    ("", 30), ("son", 4), ("ton", 3), ("ley", 3), ("er", 4), ("man", 2), ("ford", 1),
    ("field", 1), ("well", 1), ("ski", 1), ("ez", 1), ("ini", 1), ("ello", 1), ("berg", 1),
    ("stein", 1), ("ham", 1), ("wood", 1), ("by", 1), ("ard", 1), ("ett", 1),
];

const BOY_ENDINGS: [(&str, u32); 8] = [
    ("", 10), ("n", 4), ("r", 2), ("el", 2), ("o", 2), ("an", 3), ("ey", 2), ("us", 1),
];

const GIRL_ENDINGS: [(&str, u32); 8] = [
    ("a", 8), ("ie", 3), ("elle", 2), ("ine", 2), ("y", 3), ("ah", 2), ("een", 1), ("ette", 1),
];

fn pick<'a>(rng: &mut StreamRng, items: &[(&'a str, u32)]) -> &'a str {
    items.choose_weighted(rng, |(_, w)| *w).expect("non-empty weights").0
}

fn syllable(rng: &mut StreamRng, coda: bool) -> String {
    let mut s = String::from(pick(rng, &ONSETS));
    s.push_str(pick(rng, &VOWELS));
    if coda {
        s.push_str(pick(rng, &CODAS));
    }
    s
}

fn surname_candidate(rng: &mut StreamRng) -> String {
    let n = match rng.gen_range(0..10) {
        0..=4 => 2,
        5..=7 => 1,
        _ => 3,
    };
    let mut name = String::new();
    for i in 0..n {
        let coda = i + 1 == n || rng.gen_bool(0.3);
        name.push_str(&syllable(rng, coda));
    }
    name.push_str(pick(rng, &SURNAME_SUFFIXES));
    name
}

fn first_name_candidate(rng: &mut StreamRng, sex: Sex) -> String {
    let n = if rng.gen_bool(0.6) { 2 } else { 1 };
    let mut name = String::new();
    for i in 0..n {
        let coda = i + 1 < n && rng.gen_bool(0.4);
        name.push_str(&syllable(rng, coda));
    }
    let endings = match sex {
        Sex::M => &BOY_ENDINGS,
        Sex::F => &GIRL_ENDINGS,
    };
    name.push_str(pick(rng, endings));
    name
}

/// `count` distinct synthetic surnames, deterministic in `seed`. Names in
/// `exclude` are skipped.
pub fn synthesize_surnames(count: usize, seed: u64, exclude: &HashSet<String>) -> Vec<String> {
    let mut rng = stream(seed, "bundled:surnames");
    let mut seen: HashSet<String> = exclude.clone();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let cand = surname_candidate(&mut rng);
        if cand.chars().count() >= 2 && seen.insert(cand.clone()) {
            out.push(cand);
        }
    }
    out
}

fn zipf_counts(n: usize, exponent: f64, scale: f64) -> Vec<u64> {
    (1..=n)
        .map(|rank| ((scale / (rank as f64).powf(exponent)).round() as u64).max(1))
        .collect()
}

/// Surname `value,count` table: "smith" first and dominant, then the other
/// head names, then synthetic names, Zipf-weighted by rank.
pub fn surname_table() -> FrequencyTable {
    let head: Vec<String> = HEAD_SURNAMES.iter().map(|s| s.to_string()).collect();
    let exclude: HashSet<String> = head.iter().cloned().collect();
    let tail = synthesize_surnames(SURNAME_COUNT - head.len(), TABLE_SEED, &exclude);
    let mut counts = zipf_counts(SURNAME_COUNT, SURNAME_ZIPF, 1_000_000.0);
    counts[0] = (counts[0] as f64 * DOMINANT_BOOST) as u64;
    let entries = head.into_iter().chain(tail).zip(counts).collect();
    FrequencyTable::new(entries).expect("synthesized names are distinct")
}

/// Dictionary of `size` distinct plausible surnames: the bundled table's
/// names first, then further synthetic names.
pub fn surname_dictionary(size: usize) -> Vec<String> {
    let table = surname_table();
    let mut names: Vec<String> = table.entries().iter().map(|(v, _)| v.clone()).collect();
    names.truncate(size);
    if names.len() < size {
        let exclude: HashSet<String> = names.iter().cloned().collect();
        names.extend(synthesize_surnames(size - names.len(), TABLE_SEED ^ 0xD1C7, &exclude));
    }
    names
}

fn first_name_pool(sex: Sex, size: usize) -> Vec<String> {
    let mut rng = stream(TABLE_SEED, &format!("bundled:first:{sex}"));
    let mut seen = HashSet::new();
    let mut pool = Vec::with_capacity(size);
    while pool.len() < size {
        let cand = first_name_candidate(&mut rng, sex);
        if cand.chars().count() >= 3 && seen.insert(cand.clone()) {
            pool.push(cand);
        }
    }
    pool
}

/// Per-(year, sex) top-100 tables for 1952–2015. Each year's list is a
/// window over the sex's pool that drifts by three places per year.
pub fn first_name_tables() -> FirstNameTables {
    let counts = zipf_counts(100, FIRST_NAME_ZIPF, 10_000.0);
    let mut tables = BTreeMap::new();
    for (sex, pool_size) in [(Sex::M, BOYS_POOL), (Sex::F, GIRLS_POOL)] {
        let pool = first_name_pool(sex, pool_size);
        for year in FIRST_NAME_YEARS.0..=FIRST_NAME_YEARS.1 {
            let offset = ((year - FIRST_NAME_YEARS.0) * 3) as usize;
            let entries = (0..100)
                .map(|rank| (pool[(offset + 2 * rank) % pool_size].clone(), counts[rank]))
                .collect();
            tables.insert(
                (year, sex),
                FrequencyTable::new(entries).expect("stride 2 is coprime with pool size"),
            );
        }
    }
    FirstNameTables::new(tables)
}

/// Mesh block population table. Codes are 11 digits whose first three are
/// the pseudo-SA3 area.
pub fn meshblock_table() -> FrequencyTable {
    let mut rng = stream(TABLE_SEED, "bundled:meshblocks");
    let weights = LogNormal::new(0.0, 0.7).expect("valid lognormal");
    let mut seen = HashSet::new();
    let mut entries = Vec::with_capacity(MESHBLOCK_COUNT);
    while entries.len() < MESHBLOCK_COUNT {
        let sa3 = 101 + rng.gen_range(0..SA3_COUNT as u32);
        let code = format!("{sa3:03}{:08}", rng.gen_range(0..100_000_000u32));
        if seen.insert(code.clone()) {
            let w: f64 = weights.sample(&mut rng);
            let w = (w * 100.0).round().max(1.0) as u64;
            entries.push((code, w));
        }
    }
    FrequencyTable::new(entries).expect("codes are distinct")
}

/// Year-of-birth weights over 1916–2016: flat from 1940, tapering toward
/// the oldest cohorts.
pub fn yob_table() -> FrequencyTable {
    let entries = (1916..=2016)
        .map(|y: i32| {
            let w = if y < 1940 {
                300 + (y - 1916) * 700 / 24
            } else {
                1000
            };
            (y.to_string(), w as u64)
        })
        .collect();
    FrequencyTable::new(entries).expect("distinct years")
}
