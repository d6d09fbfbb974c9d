//! Precision/recall accounting and the linking benchmark harness.

use std::collections::HashSet;
use std::io::Write;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::hashcore::HmacKey;
use crate::linker::{
    link_all, link_all_bigram, BigramConfig, BlockingStrategy, Linker, MatchDecision, Method,
};
use crate::linkkeys::{build_index, LinkageKeySpec};
use crate::model::Dataset;
use crate::synthgen::{shuffle, DistortionKind, DistortionSpec, Generator, GeneratorConfig, SynthError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("decision for query {query} references unknown row id {row_id}")]
    UnknownRowId { query: u64, row_id: u64 },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("thread pool: {0}")]
    Threads(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub distortion: String,
    pub method: Method,
    pub n_queries: usize,
    pub true_match: usize,
    pub false_match: usize,
    pub no_match: usize,
    pub precision: f64,
    /// Convention A: queries that received any decision / total.
    pub recall_any: f64,
    /// Convention B: true matches / total.
    pub recall_true: f64,
}

/// Scores decisions against row-id identity. `indexed_ids` are the row ids
/// of the indexed side; a match outside it is an error.
pub fn evaluate(
    distortion: &str,
    method: Method,
    decisions: &[MatchDecision],
    indexed_ids: &HashSet<u64>,
) -> Result<EvalResult, EvalError> {
    let (mut tm, mut fm, mut nm) = (0, 0, 0);
    for d in decisions {
        match d.matched_row_id {
            None => nm += 1,
            Some(m) if !indexed_ids.contains(&m) => {
                return Err(EvalError::UnknownRowId {
                    query: d.query_row_id,
                    row_id: m,
                })
            }
            Some(m) if m == d.query_row_id => tm += 1,
            Some(_) => fm += 1,
        }
    }
    let n = decisions.len();
    let ratio = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    Ok(EvalResult {
        distortion: distortion.to_string(),
        method,
        n_queries: n,
        true_match: tm,
        false_match: fm,
        no_match: nm,
        precision: ratio(tm, tm + fm),
        recall_any: if n == 0 { 0.0 } else { (tm + fm) as f64 / n as f64 },
        recall_true: if n == 0 { 0.0 } else { tm as f64 / n as f64 },
    })
}

pub fn write_eval_csv<W: Write>(results: &[EvalResult], mut w: W) -> std::io::Result<()> {
    writeln!(w, "distortion,method,precision,recall,recall_true,n_queries,n_no_match")?;
    for r in results {
        writeln!(
            w,
            "{},{},{:.4},{:.4},{:.4},{},{}",
            r.distortion, r.method, r.precision, r.recall_any, r.recall_true, r.n_queries, r.no_match
        )?;
    }
    Ok(())
}

/// Links a distorted, shuffled copy of `original` under every requested
/// distortion and scores both deterministic strategies.
pub fn run_distortion_suite(
    generator: &Generator,
    original: &Dataset,
    kinds: &[DistortionKind],
    specs: &[LinkageKeySpec],
    key: &HmacKey,
    seed: u64,
) -> Result<Vec<EvalResult>, EvalError> {
    let index = build_index(original, specs, key);
    let linker = Linker::new(&index, specs, key);
    let ids: HashSet<u64> = original.row_ids().into_iter().collect();
    let mut out = Vec::new();
    for &kind in kinds {
        let distorted = generator.distort(original, DistortionSpec::all(kind), seed)?;
        let queries = shuffle(&distorted.dataset, seed);
        for method in [Method::FirstUnique, Method::Voting] {
            let run = link_all(&linker, &queries, method, seed);
            out.push(evaluate(kind.label(), method, &run.decisions, &ids)?);
        }
    }
    Ok(out)
}

/// Same as [`run_distortion_suite`] for the blocked bi-gram matcher.
pub fn run_bigram_suite(
    generator: &Generator,
    original: &Dataset,
    kinds: &[DistortionKind],
    strategy: BlockingStrategy,
    key: &HmacKey,
    config: BigramConfig,
    seed: u64,
) -> Result<Vec<(EvalResult, u64)>, EvalError> {
    let ids: HashSet<u64> = original.row_ids().into_iter().collect();
    let mut out = Vec::new();
    for &kind in kinds {
        let distorted = generator.distort(original, DistortionSpec::all(kind), seed)?;
        let run = link_all_bigram(original, &distorted.dataset, strategy, key, config);
        let method = match config.scoring {
            crate::linker::Scoring::Dice => Method::BigramDice,
            crate::linker::Scoring::Qgram => Method::BigramQgram,
        };
        out.push((evaluate(kind.label(), method, &run.decisions, &ids)?, run.work));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerfResult {
    pub n_records: usize,
    pub n_specs: usize,
    pub n_queries_issued: u64,
    pub wall: Duration,
    pub link_wall: Duration,
    pub queries_per_sec: f64,
    pub peak_posting_len: usize,
    pub threads: usize,
}

/// Generate → index → link an exact shuffled copy, timed end to end.
/// `threads == 0` uses the global pool.
pub fn perf_benchmark(
    n_records: usize,
    specs: &[LinkageKeySpec],
    method: Method,
    seed: u64,
    threads: usize,
) -> Result<PerfResult, EvalError> {
    let body = || -> Result<PerfResult, EvalError> {
        let start = Instant::now();
        let original = Generator::new(GeneratorConfig::bundled(n_records, seed))?.generate();
        let queries = shuffle(&original, seed);
        let key = HmacKey::from_seed(seed, "perf");
        let index = build_index(&original, specs, &key);
        let linker = Linker::new(&index, specs, &key);
        let link_start = Instant::now();
        let run = link_all(&linker, &queries, method, seed);
        let link_wall = link_start.elapsed();
        let wall = start.elapsed();
        let peak = index
            .partitions
            .iter()
            .flat_map(|p| p.postings.values().map(Vec::len))
            .max()
            .unwrap_or(0);
        Ok(PerfResult {
            n_records,
            n_specs: specs.len(),
            n_queries_issued: run.work,
            wall,
            link_wall,
            queries_per_sec: run.work as f64 / link_wall.as_secs_f64().max(1e-9),
            peak_posting_len: peak,
            threads: rayon::current_num_threads(),
        })
    };
    if threads == 0 {
        body()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| EvalError::Threads(e.to_string()))?
            .install(body)
    }
}

pub fn write_perf_csv<W: Write>(results: &[PerfResult], mut w: W) -> std::io::Result<()> {
    writeln!(w, "n_records,n_queries,wall_ms,qps,threads")?;
    for r in results {
        writeln!(
            w,
            "{},{},{},{:.0},{}",
            r.n_records,
            r.n_queries_issued,
            r.wall.as_millis(),
            r.queries_per_sec,
            r.threads
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linker::Evidence;

    fn d(q: u64, m: Option<u64>) -> MatchDecision {
        MatchDecision {
            query_row_id: q,
            matched_row_id: m,
            method: Method::Voting,
            evidence: Evidence::Specs(vec![]),
        }
    }

    fn ids(n: u64) -> HashSet<u64> {
        (1..=n).collect()
    }

    #[test]
    fn all_correct() {
        let ds: Vec<_> = (1..=5).map(|i| d(i, Some(i))).collect();
        let r = evaluate("exact", Method::Voting, &ds, &ids(5)).unwrap();
        assert_eq!((r.precision, r.recall_any, r.recall_true), (1.0, 1.0, 1.0));
    }

    #[test]
    fn all_no_match() {
        let ds: Vec<_> = (1..=5).map(|i| d(i, None)).collect();
        let r = evaluate("x", Method::Voting, &ds, &ids(5)).unwrap();
        assert_eq!((r.precision, r.recall_any, r.recall_true), (1.0, 0.0, 0.0));
    }

    #[test]
    fn nine_of_ten() {
        let mut ds: Vec<_> = (1..=9).map(|i| d(i, Some(i))).collect();
        ds.push(d(10, Some(3)));
        let r = evaluate("x", Method::Voting, &ds, &ids(10)).unwrap();
        assert!((r.precision - 0.9).abs() < 1e-12);
        assert_eq!(r.recall_any, 1.0);
        assert!((r.recall_true - 0.9).abs() < 1e-12);
    }

    #[test]
    fn unknown_row_is_error() {
        assert!(matches!(
            evaluate("x", Method::Voting, &[d(1, Some(77))], &ids(5)),
            Err(EvalError::UnknownRowId { row_id: 77, .. })
        ));
    }

    #[test]
    fn perf_query_bound() {
        let specs = crate::linkkeys::default_specs();
        let r = perf_benchmark(500, &specs, Method::Voting, 3, 2).unwrap();
        assert!(r.n_queries_issued <= 500 * 11);
        assert!(r.n_queries_issued >= 500 * 10);
        assert_eq!(r.threads, 2);
        let mut out = Vec::new();
        write_perf_csv(&[r], &mut out).unwrap();
        assert!(String::from_utf8(out).unwrap().starts_with("n_records,n_queries,wall_ms,qps,threads\n500,"));
    }
}
