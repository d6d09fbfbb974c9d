//! Deterministic linking over a [`LinkIndex`] and the blocked bi-gram matcher.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;

use crate::hashcore::{bigram_list, hmac_tag, HmacKey};
use crate::linkkeys::{LinkIndex, LinkageKeySpec, Partition, Tag};
use crate::model::{Dataset, PersonRecord};
use crate::rng;

pub const DEFAULT_BIGRAM_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    FirstUnique,
    Voting,
    BigramDice,
    BigramQgram,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::FirstUnique => "first-unique",
            Method::Voting => "voting",
            Method::BigramDice => "bigram-dice",
            Method::BigramQgram => "bigram-qgram",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpecOutcome {
    Unique,
    Multiple(usize),
    NoMatch,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Evidence {
    /// (position of the spec in the hierarchy, outcome), in probe order.
    Specs(Vec<(u16, SpecOutcome)>),
    Score(f64),
}

impl Evidence {
    /// Compact text form: `U`, `M<n>` or `-` per probed spec, or the score.
    pub fn render(&self) -> String {
        match self {
            Evidence::Specs(v) => v
                .iter()
                .map(|(i, o)| match o {
                    SpecOutcome::Unique => format!("{i}:U"),
                    SpecOutcome::Multiple(n) => format!("{i}:M{n}"),
                    SpecOutcome::NoMatch => format!("{i}:-"),
                })
                .collect::<Vec<_>>()
                .join(" "),
            Evidence::Score(s) => format!("{s:.6}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchDecision {
    pub query_row_id: u64,
    pub matched_row_id: Option<u64>,
    pub method: Method,
    pub evidence: Evidence,
}

impl MatchDecision {
    /// Index lookups (deterministic) or similarity computations (bi-gram)
    /// spent on this query.
    pub fn probes(&self) -> usize {
        match &self.evidence {
            Evidence::Specs(v) => v.len(),
            Evidence::Score(_) => 0,
        }
    }
}

/// Specs resolved against an index. Specs whose partition is absent (for
/// example dropped by pruning) are skipped.
pub struct Linker<'a> {
    probes: Vec<(u16, &'a LinkageKeySpec, &'a Partition)>,
    key: &'a HmacKey,
}

impl<'a> Linker<'a> {
    pub fn new(index: &'a LinkIndex, specs: &'a [LinkageKeySpec], key: &'a HmacKey) -> Self {
        let probes = specs
            .iter()
            .enumerate()
            .filter_map(|(i, s)| index.partition(&s.name).map(|p| (i as u16, s, p)))
            .collect();
        Self { probes, key }
    }

    pub fn spec_count(&self) -> usize {
        self.probes.len()
    }

    fn lookups<'q>(&'q self, query: &'q PersonRecord) -> impl Iterator<Item = (u16, &'a [u64])> + 'q {
        self.probes
            .iter()
            .filter_map(move |(i, spec, part)| spec.probe_tag(query, self.key).map(|t| (*i, part.lookup(&t))))
    }

    /// Walks the hierarchy and stops at the first singleton posting list.
    pub fn first_unique(&self, query: &PersonRecord) -> MatchDecision {
        let mut trace = Vec::new();
        let mut matched = None;
        for (i, ids) in self.lookups(query) {
            trace.push((i, outcome(ids)));
            if ids.len() == 1 {
                matched = Some(ids[0]);
                break;
            }
        }
        MatchDecision {
            query_row_id: query.row_id,
            matched_row_id: matched,
            method: Method::FirstUnique,
            evidence: Evidence::Specs(trace),
        }
    }

    /// Counts row ids over all posting lists; the most frequent wins and ties
    /// are broken from a stream seeded by `(seed, query row id)`.
    pub fn voting(&self, query: &PersonRecord, seed: u64) -> MatchDecision {
        let mut trace = Vec::new();
        let mut counts: Vec<(u64, u32)> = Vec::new();
        for (i, ids) in self.lookups(query) {
            trace.push((i, outcome(ids)));
            for &id in ids {
                match counts.iter_mut().find(|(r, _)| *r == id) {
                    Some((_, c)) => *c += 1,
                    None => counts.push((id, 1)),
                }
            }
        }
        MatchDecision {
            query_row_id: query.row_id,
            matched_row_id: vote_winner(counts, seed, query.row_id),
            method: Method::Voting,
            evidence: Evidence::Specs(trace),
        }
    }
}

fn outcome(ids: &[u64]) -> SpecOutcome {
    match ids.len() {
        0 => SpecOutcome::NoMatch,
        1 => SpecOutcome::Unique,
        n => SpecOutcome::Multiple(n),
    }
}

fn vote_winner(mut counts: Vec<(u64, u32)>, seed: u64, query_row_id: u64) -> Option<u64> {
    let best = counts.iter().map(|(_, c)| *c).max()?;
    counts.retain(|(_, c)| *c == best);
    if counts.len() == 1 {
        return Some(counts[0].0);
    }
    // Sort first so the draw does not depend on posting order.
    counts.sort_unstable();
    let mut r = rng::stream(seed, &format!("vote-tie:{query_row_id}"));
    Some(counts[r.gen_range(0..counts.len())].0)
}

pub fn link_first_unique(
    query: &PersonRecord,
    index: &LinkIndex,
    specs: &[LinkageKeySpec],
    key: &HmacKey,
) -> MatchDecision {
    Linker::new(index, specs, key).first_unique(query)
}

pub fn link_voting(
    query: &PersonRecord,
    index: &LinkIndex,
    specs: &[LinkageKeySpec],
    key: &HmacKey,
    tiebreak_seed: u64,
) -> MatchDecision {
    Linker::new(index, specs, key).voting(query, tiebreak_seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkRun {
    pub decisions: Vec<MatchDecision>,
    /// Index lookups issued, or similarity computations for bi-gram runs.
    pub work: u64,
}

/// Links every query in parallel; decisions come back in query order.
pub fn link_all(linker: &Linker<'_>, queries: &Dataset, method: Method, seed: u64) -> LinkRun {
    let decisions: Vec<MatchDecision> = queries
        .records
        .par_iter()
        .map(|q| match method {
            Method::Voting => linker.voting(q, seed),
            _ => linker.first_unique(q),
        })
        .collect();
    let work = decisions.iter().map(|d| d.probes() as u64).sum();
    LinkRun { decisions, work }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub blocking_key: String,
    pub members: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockingStrategy {
    ByMeshblockPrefix(usize),
    BySa3,
}

impl BlockingStrategy {
    pub fn key_of(self, r: &PersonRecord) -> String {
        match self {
            BlockingStrategy::ByMeshblockPrefix(n) => r.meshblock.chars().take(n).collect(),
            BlockingStrategy::BySa3 => r.sa3.clone(),
        }
    }
}

/// Partitions the rows by blocking key; blocks are sorted by key and members
/// keep dataset order.
pub fn block_dataset(dataset: &Dataset, strategy: BlockingStrategy) -> Vec<Block> {
    let mut map: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for r in &dataset.records {
        map.entry(strategy.key_of(r)).or_default().push(r.row_id);
    }
    map.into_iter()
        .map(|(blocking_key, members)| Block { blocking_key, members })
        .collect()
}

/// 2|a∩b| / (|a|+|b|) over sorted, deduplicated slices; 0 when both empty.
pub fn dice_sets<T: Ord>(a: &[T], b: &[T]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    2.0 * sorted_overlap(a, b) as f64 / (a.len() + b.len()) as f64
}

/// q-gram similarity over sorted multisets: (max − Σ|Δcount|) / max with
/// max = |a| + |b|; 0 when both empty.
pub fn qgram_similarity<T: Ord>(a: &[T], b: &[T]) -> f64 {
    let max = a.len() + b.len();
    if max == 0 {
        return 0.0;
    }
    // Σ|count_a − count_b| = |a| + |b| − 2·(multiset intersection).
    let dist = max - 2 * sorted_overlap(a, b);
    (max - dist) as f64 / max as f64
}

/// Size of the multiset intersection of two sorted slices.
fn sorted_overlap<T: Ord>(a: &[T], b: &[T]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// HMAC'd bi-grams of one name: sorted multiset and sorted set.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EncodedGrams {
    pub multiset: Vec<Tag>,
    pub set: Vec<Tag>,
}

impl EncodedGrams {
    pub fn encode(name: &str, key: &HmacKey) -> Self {
        let mut multiset: Vec<Tag> = bigram_list(name)
            .unwrap_or_default()
            .iter()
            .map(|g| Tag(hmac_tag(key, g.as_bytes())))
            .collect();
        multiset.sort_unstable();
        let mut set = multiset.clone();
        set.dedup();
        Self { multiset, set }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EncodedNames {
    pub first: EncodedGrams,
    pub last: EncodedGrams,
}

impl EncodedNames {
    pub fn encode(r: &PersonRecord, key: &HmacKey) -> Self {
        Self {
            first: EncodedGrams::encode(&r.first_name, key),
            last: EncodedGrams::encode(&r.last_name, key),
        }
    }

    fn swapped(&self) -> Self {
        Self {
            first: self.last.clone(),
            last: self.first.clone(),
        }
    }
}

/// Precomputed HMAC'd bi-grams for the indexed side.
pub struct BigramStore {
    encoded: HashMap<u64, EncodedNames>,
}

impl BigramStore {
    pub fn build(dataset: &Dataset, key: &HmacKey) -> Self {
        let encoded = dataset
            .records
            .par_iter()
            .map(|r| (r.row_id, EncodedNames::encode(r, key)))
            .collect();
        Self { encoded }
    }

    pub fn get(&self, row_id: u64) -> Option<&EncodedNames> {
        self.encoded.get(&row_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scoring {
    Dice,
    Qgram,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BigramConfig {
    pub scoring: Scoring,
    pub threshold: f64,
    /// Also score the query with first and last names swapped.
    pub transposed_pass: bool,
}

impl Default for BigramConfig {
    fn default() -> Self {
        Self {
            scoring: Scoring::Dice,
            threshold: DEFAULT_BIGRAM_THRESHOLD,
            transposed_pass: false,
        }
    }
}

fn combined_score(q: &EncodedNames, m: &EncodedNames, scoring: Scoring) -> f64 {
    let (f, l) = match scoring {
        Scoring::Dice => (dice_sets(&q.first.set, &m.first.set), dice_sets(&q.last.set, &m.last.set)),
        Scoring::Qgram => (
            qgram_similarity(&q.first.multiset, &m.first.multiset),
            qgram_similarity(&q.last.multiset, &m.last.multiset),
        ),
    };
    (f + l) / 2.0
}

/// Cross-compares the query with every block member. Returns the decision
/// and the number of similarity computations performed.
pub fn link_bigram(
    query: &PersonRecord,
    block: &Block,
    store: &BigramStore,
    key: &HmacKey,
    config: BigramConfig,
) -> (MatchDecision, u64) {
    let q = EncodedNames::encode(query, key);
    let qt = config.transposed_pass.then(|| q.swapped());
    let mut best: Option<(f64, u64)> = None;
    let mut comparisons = 0u64;
    for &id in &block.members {
        let Some(m) = store.get(id) else { continue };
        let mut s = combined_score(&q, m, config.scoring);
        comparisons += 1;
        if let Some(qt) = &qt {
            s = s.max(combined_score(qt, m, config.scoring));
            comparisons += 1;
        }
        let better = match best {
            None => true,
            Some((bs, bid)) => s > bs || (s == bs && id < bid),
        };
        if better {
            best = Some((s, id));
        }
    }
    let score = best.map_or(0.0, |(s, _)| s);
    let matched = best.filter(|(s, _)| *s >= config.threshold).map(|(_, id)| id);
    let method = match config.scoring {
        Scoring::Dice => Method::BigramDice,
        Scoring::Qgram => Method::BigramQgram,
    };
    let decision = MatchDecision {
        query_row_id: query.row_id,
        matched_row_id: matched,
        method,
        evidence: Evidence::Score(score),
    };
    (decision, comparisons)
}

/// Blocks the indexed dataset and links each query within the block sharing
/// its blocking key. Queries whose key has no block get no match.
pub fn link_all_bigram(
    indexed: &Dataset,
    queries: &Dataset,
    strategy: BlockingStrategy,
    key: &HmacKey,
    config: BigramConfig,
) -> LinkRun {
    let store = BigramStore::build(indexed, key);
    let blocks: HashMap<String, Block> = block_dataset(indexed, strategy)
        .into_iter()
        .map(|b| (b.blocking_key.clone(), b))
        .collect();
    let empty = Block {
        blocking_key: String::new(),
        members: Vec::new(),
    };
    let results: Vec<(MatchDecision, u64)> = queries
        .records
        .par_iter()
        .map(|q| {
            let block = blocks.get(&strategy.key_of(q)).unwrap_or(&empty);
            link_bigram(q, block, &store, key, config)
        })
        .collect();
    let work = results.iter().map(|(_, c)| c).sum();
    LinkRun {
        decisions: results.into_iter().map(|(d, _)| d).collect(),
        work,
    }
}

pub fn write_decisions_csv<W: Write>(decisions: &[MatchDecision], mut w: W) -> std::io::Result<()> {
    writeln!(w, "query_row_id,matched_row_id,method,score_or_evidence")?;
    for d in decisions {
        let matched = d.matched_row_id.map(|m| m.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{}", d.query_row_id, matched, d.method, d.evidence.render())?;
    }
    Ok(())
}
