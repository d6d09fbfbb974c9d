//! Dictionary, frequency and bucket-chain attacks against this crate's own
//! encoders, plus the adversary's view of non-unique linkage-key postings.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::time::{Duration, Instant};

use rand_distr::{Distribution, WeightedIndex};
use rayon::prelude::*;

use crate::hashcore::{hmac_tag, sha256, sha256_hex, HmacKey};
use crate::linkkeys::{LinkIndex, Tag};
use crate::lossy::BucketTable;
use crate::model::FrequencyTable;
use crate::rng;

/// The exact per-name encoding under attack.
pub trait Encoder: Sync {
    fn encode(&self, name: &str) -> [u8; 32];
    fn label(&self) -> &'static str;
}

pub struct Sha256Encoder;

impl Encoder for Sha256Encoder {
    fn encode(&self, name: &str) -> [u8; 32] {
        sha256(name.as_bytes())
    }

    fn label(&self) -> &'static str {
        "sha256"
    }
}

pub struct HmacEncoder(pub HmacKey);

impl Encoder for HmacEncoder {
    fn encode(&self, name: &str) -> [u8; 32] {
        hmac_tag(&self.0, name.as_bytes())
    }

    fn label(&self) -> &'static str {
        "hmac-sha256"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    Dictionary,
    Frequency,
    BucketReversal,
    LinkageKeyProbe,
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackKind::Dictionary => "dictionary",
            AttackKind::Frequency => "frequency",
            AttackKind::BucketReversal => "bucket-reversal",
            AttackKind::LinkageKeyProbe => "linkage-key-probe",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Recovery {
    /// Hex of the attacked encoding, or a bucket/spec label.
    pub target: String,
    /// Recovered plaintext, or the candidate set.
    pub plaintexts: Vec<String>,
    /// Whether re-encoding the plaintext reproduces the target.
    pub verified: bool,
}

#[derive(Debug, Clone)]
pub struct AttackReport {
    pub kind: AttackKind,
    pub attempted: usize,
    pub recovered: usize,
    pub duration: Duration,
    pub recoveries: Vec<Recovery>,
}

impl AttackReport {
    /// Plaintexts replaced by a short SHA-256 fingerprint.
    pub fn redacted(&self) -> Self {
        let mut r = self.clone();
        for rec in &mut r.recoveries {
            for p in &mut rec.plaintexts {
                *p = format!("sha256:{}", &sha256_hex(p.as_bytes())[..16]);
            }
        }
        r
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "kind,target,plaintexts,verified")?;
        for r in &self.recoveries {
            writeln!(w, "{},{},{},{}", self.kind, r.target, r.plaintexts.join("|"), r.verified)?;
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        format!(
            "{} attack: recovered {} of {} targets in {:.3}s",
            self.kind,
            self.recovered,
            self.attempted,
            self.duration.as_secs_f64()
        )
    }
}

const SHARD: usize = 4096;

/// Encodes every dictionary name and matches against the targets. Hits are
/// re-encoded before they are reported.
pub fn dictionary_attack(targets: &[[u8; 32]], dictionary: &[String], encoder: &dyn Encoder) -> AttackReport {
    let start = Instant::now();
    let mut want: HashMap<[u8; 32], Vec<usize>> = HashMap::new();
    for (i, t) in targets.iter().enumerate() {
        want.entry(*t).or_default().push(i);
    }
    let hits: Vec<(usize, usize)> = dictionary
        .par_chunks(SHARD)
        .enumerate()
        .flat_map_iter(|(c, chunk)| {
            let want = &want;
            chunk.iter().enumerate().flat_map(move |(j, name)| {
                let idx = c * SHARD + j;
                want.get(&encoder.encode(name))
                    .into_iter()
                    .flatten()
                    .map(move |&t| (t, idx))
            })
        })
        .collect();
    let mut by_target: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    let mut sorted = hits;
    sorted.sort_unstable();
    for (t, d) in sorted {
        by_target.entry(t).or_default().push(dictionary[d].clone());
    }
    let recoveries: Vec<Recovery> = by_target
        .into_iter()
        .map(|(t, names)| Recovery {
            target: hex::encode(targets[t]),
            verified: names.iter().all(|n| encoder.encode(n) == targets[t]),
            plaintexts: names,
        })
        .collect();
    AttackReport {
        kind: AttackKind::Dictionary,
        attempted: targets.len(),
        recovered: recoveries.iter().filter(|r| r.verified).count(),
        duration: start.elapsed(),
        recoveries,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedPair {
    pub rank: usize,
    pub tag: [u8; 32],
    pub observed: u64,
    pub guess: String,
    pub public_count: u64,
}

#[derive(Debug, Clone)]
pub struct FrequencyAttack {
    pub report: AttackReport,
    pub alignment: Vec<AlignedPair>,
    /// Set only when a verifier was supplied.
    pub rank1_correct: Option<bool>,
    pub top_k_correct: Option<usize>,
}

/// Ranks tags by observed count and names by public frequency, and pairs
/// them rank for rank. The attack itself never sees a key; `verifier` is
/// only used afterwards to score the guesses.
pub fn frequency_attack(
    tags: &[[u8; 32]],
    public_freq: &FrequencyTable,
    top_k: usize,
    verifier: Option<&dyn Encoder>,
) -> FrequencyAttack {
    let start = Instant::now();
    let mut counts: HashMap<[u8; 32], u64> = HashMap::new();
    for t in tags {
        *counts.entry(*t).or_default() += 1;
    }
    let mut observed: Vec<([u8; 32], u64)> = counts.into_iter().collect();
    // Ties fall back to tag order, which carries no information.
    observed.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let alignment: Vec<AlignedPair> = observed
        .iter()
        .zip(public_freq.ranked())
        .take(top_k)
        .enumerate()
        .map(|(rank, (&(tag, observed), (guess, public_count)))| AlignedPair {
            rank: rank + 1,
            tag,
            observed,
            guess,
            public_count,
        })
        .collect();
    let recoveries: Vec<Recovery> = alignment
        .iter()
        .map(|p| Recovery {
            target: hex::encode(p.tag),
            plaintexts: vec![p.guess.clone()],
            verified: verifier.is_some_and(|v| v.encode(&p.guess) == p.tag),
        })
        .collect();
    let correct = recoveries.iter().filter(|r| r.verified).count();
    FrequencyAttack {
        rank1_correct: verifier.map(|_| recoveries.first().is_some_and(|r| r.verified)),
        top_k_correct: verifier.map(|_| correct),
        report: AttackReport {
            kind: AttackKind::Frequency,
            attempted: alignment.len(),
            recovered: correct,
            duration: start.elapsed(),
            recoveries,
        },
        alignment,
    }
}

/// `n` draws from `freq`, encoded.
pub fn sample_encoded(freq: &FrequencyTable, n: usize, encoder: &dyn Encoder, seed: u64) -> Vec<[u8; 32]> {
    let mut r = rng::stream(seed, "attack-sample");
    let w = WeightedIndex::new(freq.entries().iter().map(|e| e.1)).expect("frequency table is non-empty");
    (0..n).map(|_| encoder.encode(&freq.entries()[w.sample(&mut r)].0)).collect()
}

/// One row id for each of the `k` most common names: the re-identifications
/// an attacker is most likely to hold.
pub fn frequent_name_seeds(records: &[(u64, String)], k: usize) -> Vec<u64> {
    let mut first: HashMap<&str, (u64, u64)> = HashMap::new();
    for (id, n) in records {
        first.entry(n).or_insert((0, *id)).0 += 1;
    }
    let mut v: Vec<(&str, u64, u64)> = first.into_iter().map(|(n, (c, id))| (n, c, id)).collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    v.into_iter().take(k).map(|x| x.2).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReversalStep {
    pub seeds: usize,
    pub pairs_confirmed: usize,
    /// Fraction of records whose name is now pinned to its bucket.
    pub learned_mass: f64,
    /// Fraction of records sitting in a bucket that contains a confirmed name.
    pub narrowed_mass: f64,
}

#[derive(Debug, Clone)]
pub struct ReversalChain {
    pub report: AttackReport,
    pub curve: Vec<ReversalStep>,
}

impl ReversalChain {
    pub fn write_curve_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "seeds,pairs_confirmed,learned_mass,narrowed_mass")?;
        for s in &self.curve {
            writeln!(w, "{},{},{:.6},{:.6}", s.seeds, s.pairs_confirmed, s.learned_mass, s.narrowed_mass)?;
        }
        Ok(())
    }
}

/// `records` are (row id, true name) of the released data; the attacker
/// sees only each row's bucket. Every seed row re-identified by other means
/// pins its name to the row's bucket, and the bucket's names become the
/// candidate set for everyone else in it.
pub fn bucket_reversal_chain(table: &BucketTable, records: &[(u64, String)], seeds: &[u64]) -> ReversalChain {
    let start = Instant::now();
    let name_of: HashMap<u64, &str> = records.iter().map(|(id, n)| (*id, n.as_str())).collect();
    let mut name_mass: HashMap<&str, u64> = HashMap::new();
    let mut bucket_mass: HashMap<u32, u64> = HashMap::new();
    for (_, n) in records {
        *name_mass.entry(n).or_default() += 1;
        if let Some(b) = table.bucket_of(n) {
            *bucket_mass.entry(b).or_default() += 1;
        }
    }
    let mut bucket_names: BTreeMap<u32, Vec<String>> = BTreeMap::new();
    for (n, &b) in &table.mapping {
        bucket_names.entry(b).or_default().push(n.clone());
    }
    let total = records.len().max(1) as f64;
    let mut confirmed: BTreeMap<String, u32> = BTreeMap::new();
    let mut touched: BTreeSet<u32> = BTreeSet::new();
    let mut curve = vec![ReversalStep {
        seeds: 0,
        pairs_confirmed: 0,
        learned_mass: 0.0,
        narrowed_mass: 0.0,
    }];
    let mut used = 0;
    for s in seeds {
        let Some(name) = name_of.get(s) else { continue };
        let Some(bucket) = table.bucket_of(name) else { continue };
        used += 1;
        confirmed.insert(name.to_string(), bucket);
        touched.insert(bucket);
        let learned: u64 = confirmed.keys().map(|n| name_mass.get(n.as_str()).copied().unwrap_or(0)).sum();
        let narrowed: u64 = touched.iter().map(|b| bucket_mass.get(b).copied().unwrap_or(0)).sum();
        curve.push(ReversalStep {
            seeds: used,
            pairs_confirmed: confirmed.len(),
            learned_mass: learned as f64 / total,
            narrowed_mass: narrowed as f64 / total,
        });
    }
    let mut recoveries: Vec<Recovery> = confirmed
        .iter()
        .map(|(n, &b)| Recovery {
            target: format!("name->bucket:{b}"),
            plaintexts: vec![n.clone()],
            verified: table.bucket_of(n) == Some(b),
        })
        .collect();
    recoveries.extend(touched.iter().map(|b| Recovery {
        target: format!("candidates:bucket:{b}"),
        plaintexts: bucket_names.get(b).cloned().unwrap_or_default(),
        verified: true,
    }));
    ReversalChain {
        report: AttackReport {
            kind: AttackKind::BucketReversal,
            attempted: used,
            recovered: confirmed.len(),
            duration: start.elapsed(),
            recoveries,
        },
        curve,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeGroup {
    pub spec: String,
    pub tag: Tag,
    pub row_ids: Vec<u64>,
}

/// Every posting list longer than one, per spec in index order, largest
/// first. Needs no key.
pub fn linkage_key_frequency_probe(index: &LinkIndex) -> Vec<ProbeGroup> {
    let mut out = Vec::new();
    for p in &index.partitions {
        let mut groups: Vec<ProbeGroup> = p
            .postings
            .iter()
            .filter(|(_, ids)| ids.len() > 1)
            .map(|(t, ids)| ProbeGroup {
                spec: p.name.clone(),
                tag: *t,
                row_ids: ids.clone(),
            })
            .collect();
        groups.sort_by(|a, b| b.row_ids.len().cmp(&a.row_ids.len()).then(a.tag.0.cmp(&b.tag.0)));
        out.extend(groups);
    }
    out
}

pub fn probe_report(groups: &[ProbeGroup], duration: Duration) -> AttackReport {
    AttackReport {
        kind: AttackKind::LinkageKeyProbe,
        attempted: groups.len(),
        recovered: groups.len(),
        duration,
        recoveries: groups
            .iter()
            .map(|g| Recovery {
                target: format!("{}:{}", g.spec, g.tag.to_hex()),
                plaintexts: g.row_ids.iter().map(u64::to_string).collect(),
                verified: true,
            })
            .collect(),
    }
}
