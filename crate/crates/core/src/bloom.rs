//! Bloom filters over bi-grams and the experiments measuring how well their
//! Dice coefficient tracks the plaintext bi-gram Dice coefficient.

use std::cmp::Ordering;
use std::io::Write;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::hashcore::{
    bigram_list, double_hash_indices, DoubleHashParams, Enhancement, HashError, HashPair,
    UniversalHashParams, MERSENNE_61,
};
use crate::rng;
use crate::synthgen::bundled::surname_dictionary;

#[derive(Debug, Error)]
pub enum BloomError {
    #[error("filters use different hash families or sizes")]
    FamilyMismatch,
    #[error(transparent)]
    Hash(#[from] HashError),
    #[error("name sample needs at least {min} names, got {got}")]
    SampleTooSmall { min: usize, got: usize },
}

/// The k index functions of a filter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HashFamily {
    Universal(Vec<UniversalHashParams>),
    Double(DoubleHashParams),
}

impl HashFamily {
    pub fn m(&self) -> usize {
        match self {
            HashFamily::Universal(v) => v[0].range() as usize,
            HashFamily::Double(p) => p.m(),
        }
    }

    pub fn k(&self) -> usize {
        match self {
            HashFamily::Universal(v) => v.len(),
            HashFamily::Double(p) => p.k(),
        }
    }

    pub fn indices(&self, element: &[u8]) -> Vec<usize> {
        match self {
            HashFamily::Universal(v) => {
                let x = element_integer(element);
                v.iter().map(|h| h.hash(x) as usize).collect()
            }
            HashFamily::Double(p) => double_hash_indices(p, element),
        }
    }
}

/// Big-endian fold of the bytes, reduced mod 2^61 − 1. A 2-byte bi-gram is
/// its 16-bit big-endian value.
pub fn element_integer(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(0u128, |acc, &b| (acc * 256 + b as u128) % MERSENNE_61 as u128) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FamilyConfig {
    Universal { m: usize, k: usize },
    Double { m: usize, k: usize, enhancement: Enhancement, pair: HashPair },
}

impl FamilyConfig {
    /// Plain double hashing over SHA-1/MD5.
    pub fn classic_double(m: usize, k: usize) -> Self {
        FamilyConfig::Double {
            m,
            k,
            enhancement: Enhancement::Plain,
            pair: HashPair::Sha1Md5,
        }
    }

    pub fn m(&self) -> usize {
        match *self {
            FamilyConfig::Universal { m, .. } | FamilyConfig::Double { m, .. } => m,
        }
    }

    pub fn k(&self) -> usize {
        match *self {
            FamilyConfig::Universal { k, .. } | FamilyConfig::Double { k, .. } => k,
        }
    }

    pub fn label(&self) -> String {
        match self {
            FamilyConfig::Universal { .. } => "universal".to_string(),
            FamilyConfig::Double { enhancement, pair, .. } => {
                let e = match enhancement {
                    Enhancement::Plain => "double",
                    Enhancement::Enhanced => "enhanced-double",
                };
                format!("{e}-{}", pair.name())
            }
        }
    }

    /// Universal members are drawn from a stream labelled by (m, k).
    pub fn build(&self, seed: u64) -> Result<HashFamily, BloomError> {
        match *self {
            FamilyConfig::Universal { m, k } => {
                if k == 0 || m < 2 {
                    return Err(HashError::BadDoubleHash { k, m }.into());
                }
                let mut r = rng::stream(seed, &format!("bloom:universal:{m}:{k}"));
                let members = (0..k)
                    .map(|_| UniversalHashParams::random(&mut r, m as u64))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(HashFamily::Universal(members))
            }
            FamilyConfig::Double { m, k, enhancement, pair } => {
                Ok(HashFamily::Double(DoubleHashParams::new(m, k, enhancement, pair)?))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BloomFilter {
    m: usize,
    bits: Vec<u64>,
    inserted: usize,
}

impl BloomFilter {
    pub fn new(m: usize) -> Self {
        Self {
            m,
            bits: vec![0; m.div_ceil(64)],
            inserted: 0,
        }
    }

    pub fn insert(&mut self, family: &HashFamily, element: &[u8]) {
        for i in family.indices(element) {
            self.set(i);
        }
        self.inserted += 1;
    }

    fn set(&mut self, i: usize) {
        self.bits[i / 64] |= 1 << (i % 64);
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn inserted_count(&self) -> usize {
        self.inserted
    }

    pub fn popcount(&self) -> u32 {
        self.bits.iter().map(|w| w.count_ones()).sum()
    }

    pub fn and_count(&self, other: &BloomFilter) -> u32 {
        self.bits.iter().zip(&other.bits).map(|(a, b)| (a & b).count_ones()).sum()
    }

    /// Bits from index 0 upward as `0`/`1`.
    pub fn to_bit_string(&self) -> String {
        (0..self.m).map(|i| if self.get(i) { '1' } else { '0' }).collect()
    }

    /// Filter holding the padded bi-grams of `name`.
    pub fn of_name(name: &str, family: &HashFamily) -> Result<Self, BloomError> {
        let mut f = BloomFilter::new(family.m());
        for g in bigram_list(name)? {
            f.insert(family, g.as_bytes());
        }
        Ok(f)
    }
}

/// A filter tied to the family that filled it, so comparisons can check
/// compatibility.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedFilter<'a> {
    pub filter: BloomFilter,
    pub family: &'a HashFamily,
}

pub fn bloom_dice(a: &TaggedFilter<'_>, b: &TaggedFilter<'_>) -> Result<f64, BloomError> {
    if a.family != b.family || a.filter.m != b.filter.m {
        return Err(BloomError::FamilyMismatch);
    }
    Ok(raw_dice(&a.filter, &b.filter))
}

fn raw_dice(a: &BloomFilter, b: &BloomFilter) -> f64 {
    let total = a.popcount() + b.popcount();
    if total == 0 {
        0.0
    } else {
        2.0 * a.and_count(b) as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniformityResult {
    pub family: String,
    pub counts: Vec<u64>,
    pub stddev: f64,
}

impl UniformityResult {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "bit_index,count")?;
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(w, "{i},{c}")?;
        }
        Ok(())
    }
}

const UNIFORMITY_CHUNK: usize = 10_000;

/// Builds `n_filters` filters of `inserts_per_filter` random 2-byte values
/// and counts, per bit, how many filters set it. Chunks draw from their own
/// streams, so the result does not depend on thread count.
pub fn uniformity_experiment(
    config: FamilyConfig,
    n_filters: usize,
    inserts_per_filter: usize,
    seed: u64,
) -> Result<UniformityResult, BloomError> {
    let family = config.build(seed)?;
    let m = family.m();
    let chunks = n_filters.div_ceil(UNIFORMITY_CHUNK);
    let counts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut r = rng::stream(seed, &format!("bloom:uniformity:{c}"));
            let mut counts = vec![0u64; m];
            let n = UNIFORMITY_CHUNK.min(n_filters - c * UNIFORMITY_CHUNK);
            for _ in 0..n {
                let mut f = BloomFilter::new(m);
                for _ in 0..inserts_per_filter {
                    let v: u16 = r.gen();
                    f.insert(&family, &v.to_be_bytes());
                }
                for (i, c) in counts.iter_mut().enumerate() {
                    *c += f.get(i) as u64;
                }
            }
            counts
        })
        .reduce(
            || vec![0u64; m],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    Ok(UniformityResult {
        family: config.label(),
        stddev: population_std(&counts),
        counts,
    })
}

fn population_std(counts: &[u64]) -> f64 {
    if counts.is_empty() {
        return 0.0;
    }
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<u64>() as f64 / n;
    (counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Running mean and variance, mergeable across shards.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Welford {
    pub n: u64,
    pub mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    /// Chan et al. pairwise combination.
    pub fn merge(&mut self, other: &Welford) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n as f64;
        self.m2 += other.m2 + d * d * self.n as f64 * other.n as f64 / n as f64;
        self.n = n;
    }

    /// Sample standard deviation; 0 below two observations.
    pub fn std(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).sqrt()
        }
    }
}

pub const EXTREME_EXAMPLES: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct ExtremeExample {
    pub bloom_score: f64,
    pub name_a: String,
    pub name_b: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverestimationStats {
    pub family: String,
    pub m: usize,
    pub k: usize,
    pub total_comparisons: u64,
    pub equal_count: u64,
    pub bloom_greater_count: u64,
    pub ngram_greater_count: u64,
    /// Over bloom-greater pairs only.
    pub diff: Welford,
    /// Highest Bloom scores among pairs sharing no bi-gram.
    pub extreme_examples: Vec<ExtremeExample>,
}

impl OverestimationStats {
    pub fn equal_fraction(&self) -> f64 {
        self.equal_count as f64 / self.total_comparisons.max(1) as f64
    }

    pub fn greater_fraction(&self) -> f64 {
        self.bloom_greater_count as f64 / self.total_comparisons.max(1) as f64
    }

    pub fn mean_diff(&self) -> f64 {
        self.diff.mean
    }

    pub fn std_diff(&self) -> f64 {
        self.diff.std()
    }
}

struct Encoded {
    filter: BloomFilter,
    pop: u32,
    grams: Vec<u16>,
}

fn encode_names(names: &[String], family: &HashFamily) -> Result<Vec<Encoded>, BloomError> {
    names
        .par_iter()
        .map(|n| {
            let filter = BloomFilter::of_name(n, family)?;
            let mut grams: Vec<u16> = bigram_list(n)?
                .iter()
                .map(|g| element_integer(g.as_bytes()) as u16)
                .collect();
            grams.sort_unstable();
            grams.dedup();
            Ok(Encoded {
                pop: filter.popcount(),
                filter,
                grams,
            })
        })
        .collect()
}

#[derive(Default)]
struct RowAcc {
    total: u64,
    equal: u64,
    greater: u64,
    less: u64,
    diff: Welford,
    // (bloom score numerator, denominator, i, j)
    extremes: Vec<(u32, u32, usize, usize)>,
}

/// Orders zero-overlap pairs: higher Bloom score first, then lower indices.
fn extreme_cmp(a: &(u32, u32, usize, usize), b: &(u32, u32, usize, usize)) -> Ordering {
    (b.0 as u64 * a.1 as u64)
        .cmp(&(a.0 as u64 * b.1 as u64))
        .then((a.2, a.3).cmp(&(b.2, b.3)))
}

fn keep_top(v: &mut Vec<(u32, u32, usize, usize)>) {
    v.sort_by(extreme_cmp);
    v.truncate(EXTREME_EXAMPLES);
}

fn compare_row(i: usize, enc: &[Encoded]) -> RowAcc {
    let mut acc = RowAcc::default();
    let a = &enc[i];
    for (j, b) in enc.iter().enumerate().skip(i + 1) {
        let ib = a.filter.and_count(&b.filter) as u64;
        let db = (a.pop + b.pop) as u64;
        let ip = overlap(&a.grams, &b.grams) as u64;
        let dp = (a.grams.len() + b.grams.len()) as u64;
        acc.total += 1;
        // Compare 2·ib/db with 2·ip/dp exactly.
        match (ib * dp).cmp(&(ip * db)) {
            Ordering::Equal => acc.equal += 1,
            Ordering::Greater => {
                acc.greater += 1;
                acc.diff.push(2.0 * ib as f64 / db as f64 - 2.0 * ip as f64 / dp as f64);
            }
            Ordering::Less => acc.less += 1,
        }
        if ip == 0 && ib > 0 {
            acc.extremes.push((2 * ib as u32, db as u32, i, j));
            if acc.extremes.len() >= 4 * EXTREME_EXAMPLES {
                keep_top(&mut acc.extremes);
            }
        }
    }
    keep_top(&mut acc.extremes);
    acc
}

fn overlap(a: &[u16], b: &[u16]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Compares Bloom Dice with plaintext bi-gram Dice over every unordered pair
/// of `names`. Rows are evaluated in parallel and merged in row order.
pub fn overestimation_experiment(
    names: &[String],
    config: FamilyConfig,
    seed: u64,
) -> Result<OverestimationStats, BloomError> {
    let family = config.build(seed)?;
    let enc = encode_names(names, &family)?;
    let rows: Vec<RowAcc> = (0..enc.len()).into_par_iter().map(|i| compare_row(i, &enc)).collect();
    let mut total = RowAcc::default();
    for r in rows {
        total.total += r.total;
        total.equal += r.equal;
        total.greater += r.greater;
        total.less += r.less;
        total.diff.merge(&r.diff);
        total.extremes.extend(r.extremes);
        keep_top(&mut total.extremes);
    }
    Ok(OverestimationStats {
        family: config.label(),
        m: config.m(),
        k: config.k(),
        total_comparisons: total.total,
        equal_count: total.equal,
        bloom_greater_count: total.greater,
        ngram_greater_count: total.less,
        diff: total.diff,
        extreme_examples: total
            .extremes
            .iter()
            .map(|&(num, den, i, j)| ExtremeExample {
                bloom_score: num as f64 / den as f64,
                name_a: names[i].clone(),
                name_b: names[j].clone(),
            })
            .collect(),
    })
}

/// Runs the over-estimation experiment for every (family, m, k) combination.
pub fn parameter_sweep(
    names: &[String],
    configs: &[FamilyConfig],
    seed: u64,
) -> Result<Vec<OverestimationStats>, BloomError> {
    if names.len() < 1000 {
        return Err(BloomError::SampleTooSmall {
            min: 1000,
            got: names.len(),
        });
    }
    configs.iter().map(|c| overestimation_experiment(names, *c, seed)).collect()
}

/// Size sweep at fixed k followed by a k sweep at fixed size, for one family.
pub fn sweep_grid(sizes: &[usize], k_at_sizes: usize, ks: &[usize], m_at_ks: usize, universal: bool) -> Vec<FamilyConfig> {
    let make = |m, k| {
        if universal {
            FamilyConfig::Universal { m, k }
        } else {
            FamilyConfig::classic_double(m, k)
        }
    };
    sizes
        .iter()
        .map(|&m| make(m, k_at_sizes))
        .chain(ks.iter().map(|&k| make(m_at_ks, k)))
        .collect()
}

pub fn write_sweep_csv<W: Write>(rows: &[OverestimationStats], mut w: W) -> std::io::Result<()> {
    writeln!(w, "family,m,k,total,equal_pct,bloom_greater_pct,mean_diff,std_diff")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{:.4},{:.4},{:.6},{:.6}",
            r.family,
            r.m,
            r.k,
            r.total_comparisons,
            100.0 * r.equal_fraction(),
            100.0 * r.greater_fraction(),
            r.mean_diff(),
            r.std_diff()
        )?;
    }
    Ok(())
}

/// `n` distinct surnames drawn uniformly without replacement from the
/// bundled dictionary.
pub fn name_sample(n: usize, seed: u64) -> Vec<String> {
    let dict = surname_dictionary(n.max(crate::synthgen::bundled::SURNAME_COUNT));
    let mut r = rng::stream(seed, "bloom:names");
    let mut idx = sample(&mut r, dict.len(), n).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| dict[i].clone()).collect()
}
