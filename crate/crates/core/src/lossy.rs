//! Lossy name encodings: many names share one bucket.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::io::Write;

use thiserror::Error;

use crate::hashcore::{hmac_tag, HmacKey};
use crate::model::FrequencyTable;

#[derive(Debug, Error, PartialEq)]
pub enum LossyError {
    #[error("need at least 2 buckets, got {0}")]
    TooFewBuckets(usize),
    #[error("{buckets} buckets exceed {names} distinct names")]
    TooManyBuckets { buckets: usize, names: usize },
    #[error("probe name `{0}` is not in the frequency table")]
    ProbeAbsent(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Construction {
    TruncatedHmac,
    FrequencySmoothed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BucketTable {
    pub mapping: BTreeMap<String, u32>,
    pub n_buckets: usize,
    pub construction: Construction,
}

impl BucketTable {
    pub fn bucket_of(&self, name: &str) -> Option<u32> {
        self.mapping.get(name).copied()
    }

    /// Distinct names per bucket.
    pub fn bucket_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_buckets];
        for &b in self.mapping.values() {
            sizes[b as usize] += 1;
        }
        sizes
    }

    /// Mean number of candidate names behind the code of a name drawn
    /// uniformly from the table.
    pub fn mean_candidate_set_size(&self) -> f64 {
        let sizes = self.bucket_sizes();
        let n = self.mapping.len();
        if n == 0 {
            return 0.0;
        }
        sizes.iter().map(|&s| (s * s) as f64).sum::<f64>() / n as f64
    }

    /// `name,bucket_id`, preceded by a sensitivity marker line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# SENSITIVE: name-to-bucket table; store encrypted")?;
        writeln!(w, "name,bucket_id")?;
        for (name, b) in &self.mapping {
            writeln!(w, "{name},{b}")?;
        }
        Ok(())
    }
}

/// First 8 bytes of the HMAC tag as a big-endian integer, mod `n_buckets`.
pub fn truncated_hmac_bucket(name: &str, key: &HmacKey, n_buckets: usize) -> Result<u32, LossyError> {
    if n_buckets < 2 {
        return Err(LossyError::TooFewBuckets(n_buckets));
    }
    let tag = hmac_tag(key, name.as_bytes());
    let v = u64::from_be_bytes(tag[..8].try_into().expect("tag has 32 bytes"));
    Ok((v % n_buckets as u64) as u32)
}

pub fn build_hmac_table<'a>(
    names: impl IntoIterator<Item = &'a str>,
    key: &HmacKey,
    n_buckets: usize,
) -> Result<BucketTable, LossyError> {
    let mapping = names
        .into_iter()
        .map(|n| truncated_hmac_bucket(n, key, n_buckets).map(|b| (n.to_string(), b)))
        .collect::<Result<_, _>>()?;
    Ok(BucketTable {
        mapping,
        n_buckets,
        construction: Construction::TruncatedHmac,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketMass {
    pub bucket_id: u32,
    pub mass: u64,
    pub distinct_names: usize,
    /// 1 = heaviest. Ties rank by bucket id.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketAnalysis {
    /// Sorted by rank.
    pub buckets: Vec<BucketMass>,
    pub probe_bucket: u32,
    pub probe_rank: usize,
}

impl BucketAnalysis {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "bucket_id,mass,distinct_names,rank")?;
        for b in &self.buckets {
            writeln!(w, "{},{},{},{}", b.bucket_id, b.mass, b.distinct_names, b.rank)?;
        }
        Ok(())
    }
}

/// Sums name frequencies per bucket and ranks the buckets by mass. Names in
/// `freq` that the table does not map are ignored.
pub fn bucket_frequency_analysis(
    table: &BucketTable,
    freq: &FrequencyTable,
    probe: &str,
) -> Result<BucketAnalysis, LossyError> {
    let probe_bucket = match (freq.count_of(probe), table.bucket_of(probe)) {
        (Some(_), Some(b)) => b,
        _ => return Err(LossyError::ProbeAbsent(probe.to_string())),
    };
    let mut mass = vec![0u64; table.n_buckets];
    for (name, count) in freq.entries() {
        if let Some(b) = table.bucket_of(name) {
            mass[b as usize] += count;
        }
    }
    let sizes = table.bucket_sizes();
    let mut order: Vec<u32> = (0..table.n_buckets as u32).collect();
    order.sort_by_key(|&b| (Reverse(mass[b as usize]), b));
    let buckets: Vec<BucketMass> = order
        .iter()
        .enumerate()
        .map(|(i, &b)| BucketMass {
            bucket_id: b,
            mass: mass[b as usize],
            distinct_names: sizes[b as usize],
            rank: i + 1,
        })
        .collect();
    let probe_rank = buckets
        .iter()
        .find(|b| b.bucket_id == probe_bucket)
        .map(|b| b.rank)
        .expect("probe bucket is in range");
    Ok(BucketAnalysis {
        buckets,
        probe_bucket,
        probe_rank,
    })
}

/// Rank of the probe's bucket under `trials` independent keys.
pub fn probe_rank_trials(
    freq: &FrequencyTable,
    probe: &str,
    n_buckets: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<usize>, LossyError> {
    (0..trials)
        .map(|t| {
            let key = HmacKey::from_seed(seed, format!("lossy-trial:{t}"));
            let table = build_hmac_table(freq.entries().iter().map(|(n, _)| n.as_str()), &key, n_buckets)?;
            Ok(bucket_frequency_analysis(&table, freq, probe)?.probe_rank)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingReport {
    pub table: BucketTable,
    pub masses: Vec<u64>,
    pub distinct_names: Vec<usize>,
    /// Heaviest over lightest bucket mass; infinite if a bucket is empty.
    pub max_min_ratio: f64,
    /// Number of least frequent names whose combined mass reaches the
    /// heaviest single name.
    pub names_to_match_dominant: usize,
}

/// Greedy smoothing: names by descending frequency, each into the currently
/// lightest bucket (lowest id on ties). A name is never split.
pub fn build_smoothed_table(freq: &FrequencyTable, n_buckets: usize) -> Result<SmoothingReport, LossyError> {
    if n_buckets < 2 {
        return Err(LossyError::TooFewBuckets(n_buckets));
    }
    if n_buckets > freq.len() {
        return Err(LossyError::TooManyBuckets {
            buckets: n_buckets,
            names: freq.len(),
        });
    }
    let ranked = freq.ranked();
    let mut heap: BinaryHeap<Reverse<(u64, u32)>> = (0..n_buckets as u32).map(|b| Reverse((0, b))).collect();
    let mut masses = vec![0u64; n_buckets];
    let mut distinct = vec![0usize; n_buckets];
    let mut mapping = BTreeMap::new();
    for (name, count) in &ranked {
        let Reverse((m, b)) = heap.pop().expect("n_buckets ≥ 2");
        masses[b as usize] = m + count;
        distinct[b as usize] += 1;
        mapping.insert(name.clone(), b);
        heap.push(Reverse((m + count, b)));
    }
    let max = *masses.iter().max().expect("non-empty");
    let min = *masses.iter().min().expect("non-empty");
    let max_min_ratio = if min == 0 { f64::INFINITY } else { max as f64 / min as f64 };
    let dominant = ranked.first().map_or(0, |(_, c)| *c);
    let mut acc = 0u64;
    let names_to_match_dominant = ranked
        .iter()
        .rev()
        .take_while(|(_, c)| {
            let before = acc;
            acc += c;
            before < dominant
        })
        .count();
    Ok(SmoothingReport {
        table: BucketTable {
            mapping,
            n_buckets,
            construction: Construction::FrequencySmoothed,
        },
        masses,
        distinct_names: distinct,
        max_min_ratio,
        names_to_match_dominant,
    })
}
