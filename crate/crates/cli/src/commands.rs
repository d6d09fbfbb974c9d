use std::collections::HashSet;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use pprl_core::attacks::{
    bucket_reversal_chain, dictionary_attack, frequency_attack, linkage_key_frequency_probe, probe_report, AttackReport,
    HmacEncoder, Sha256Encoder,
};
use pprl_core::bloom::{
    name_sample, overestimation_experiment, parameter_sweep, sweep_grid, uniformity_experiment, write_sweep_csv,
    FamilyConfig, OverestimationStats,
};
use pprl_core::envelope::{pipeline_demo, split_key, Keypair};
use pprl_core::evalbench::{evaluate, write_eval_csv, EvalResult};
use pprl_core::hashcore::HmacKey;
use pprl_core::linker::{
    link_all, link_all_bigram, write_decisions_csv, BigramConfig, BlockingStrategy, Evidence, LinkRun, Linker,
    MatchDecision, Method, Scoring, SpecOutcome, DEFAULT_BIGRAM_THRESHOLD,
};
use pprl_core::linkkeys::{
    build_index, default_specs, parse_specs, prune_nonunique, read_snapshot, uniqueness_report, write_snapshot,
    LinkIndex, LinkageKeySpec, PrunePolicy,
};
use pprl_core::lossy::{bucket_frequency_analysis, build_hmac_table, build_smoothed_table, probe_rank_trials};
use pprl_core::model::{load_dataset, write_dataset, Dataset};
use pprl_core::rng;
use pprl_core::synthgen::{bundled, shuffle, DistortionKind, DistortionSpec, Generator, GeneratorConfig};

use crate::config::RunConfig;

pub const GENERATE_KEYS: &[&str] = &["n", "distortions", "probability"];
pub const DERIVE_KEYS: &[&str] = &["n", "specs", "prune"];
pub const LINK_KEYS: &[&str] = &["n", "specs", "distortions", "methods", "bigram_threshold", "blocking", "transposed_pass"];
pub const BLOOM_KEYS: &[&str] = &["filters", "inserts", "m", "k", "names", "sweep_names", "sweep"];
pub const ATTACK_KEYS: &[&str] = &["n", "dict_size", "targets", "samples", "top_k", "buckets", "reversal_seeds"];
pub const LOSSY_KEYS: &[&str] = &["buckets", "probe", "trials", "smooth_buckets"];
pub const ENVELOPE_KEYS: &[&str] = &["n", "share_threshold", "share_count"];

fn population(cfg: &RunConfig, input: Option<&Path>) -> Result<Dataset> {
    match input {
        Some(p) => load_dataset(p).with_context(|| format!("loading {}", p.display())),
        None => {
            let n = cfg.get("n", cfg.scale.pick(10_000, 100_000))?;
            Ok(Generator::new(GeneratorConfig::bundled(n, cfg.seed))?.generate())
        }
    }
}

fn specs(cfg: &RunConfig) -> Result<Vec<LinkageKeySpec>> {
    match cfg.get::<String>("specs", String::new())?.as_str() {
        "" => Ok(default_specs()),
        p => Ok(parse_specs(&fs::read_to_string(p).with_context(|| format!("reading spec file {p}"))?)?),
    }
}

fn save(cfg: &RunConfig, name: &str, ds: &Dataset) -> Result<PathBuf> {
    let path = cfg.path(name);
    let mut buf = format!("{}\n", cfg.header()).into_bytes();
    write_dataset(ds, &mut buf)?;
    fs::write(&path, buf)?;
    Ok(path)
}

pub fn generate(cfg: &RunConfig) -> Result<()> {
    let n = cfg.get("n", cfg.scale.pick(10_000, 100_000))?;
    let gen = Generator::new(GeneratorConfig::bundled(n, cfg.seed))?;
    let ds = gen.generate();
    save(cfg, "dataset.csv", &ds)?;
    let kinds: Vec<DistortionKind> = cfg.get_list("distortions", Vec::new())?;
    let probability = cfg.get("probability", 1.0)?;
    for kind in kinds {
        let d = gen.distort(&ds, DistortionSpec { kind, probability }, cfg.seed)?;
        save(cfg, &format!("distorted_{kind}.csv"), &shuffle(&d.dataset, cfg.seed))?;
    }
    println!("generated {n} records into {}", cfg.out.display());
    Ok(())
}

pub fn derive(cfg: &RunConfig, input: Option<&Path>) -> Result<()> {
    let ds = population(cfg, input)?;
    let specs = specs(cfg)?;
    let key = cfg.linkage_key()?;
    let mut index = build_index(&ds, &specs, &key);
    let report = uniqueness_report(&index, ds.len());
    cfg.write_csv("uniqueness.csv", |w| report.write_csv(w))?;
    let policy = match cfg.get::<String>("prune", "none".into())?.as_str() {
        "none" => None,
        "drop-postings" => Some(PrunePolicy::DropPostings),
        s => match s.strip_prefix("drop-spec:").map(str::parse::<f64>) {
            Some(Ok(t)) => Some(PrunePolicy::DropSpec(t)),
            _ => bail!("parameter `prune`: expected none, drop-postings or drop-spec:<percent>, got `{s}`"),
        },
    };
    if let Some(policy) = policy {
        let (pruned, stats) = prune_nonunique(&index, policy);
        cfg.write_csv("prune.csv", |w| {
            writeln!(w, "spec,postings_dropped,rows_dropped,spec_dropped")?;
            for (s, p, r) in &stats.dropped_postings {
                writeln!(w, "{s},{p},{r},false")?;
            }
            for s in &stats.dropped_specs {
                writeln!(w, "{s},,,true")?;
            }
            Ok(())
        })?;
        index = pruned;
    }
    let mut snap = Vec::new();
    write_snapshot(&index, &mut snap)?;
    cfg.write_bytes("index.bin", &snap)?;
    let min = report
        .rows
        .iter()
        .min_by(|a, b| a.percent_unique_records.total_cmp(&b.percent_unique_records));
    if let Some(m) = min {
        println!("indexed {} records under {} specs; least unique: {} ({:.3}%)", ds.len(), specs.len(), m.spec, m.percent_unique_records);
    }
    Ok(())
}

fn parse_method(s: &str) -> Result<Method> {
    Ok(match s {
        "first-unique" => Method::FirstUnique,
        "voting" => Method::Voting,
        "bigram-dice" => Method::BigramDice,
        "bigram-qgram" => Method::BigramQgram,
        _ => bail!("unknown method `{s}` (first-unique, voting, bigram-dice, bigram-qgram)"),
    })
}

fn parse_blocking(s: &str) -> Result<BlockingStrategy> {
    if s == "sa3" {
        return Ok(BlockingStrategy::BySa3);
    }
    match s.strip_prefix("meshblock:").map(str::parse::<usize>) {
        Some(Ok(n)) => Ok(BlockingStrategy::ByMeshblockPrefix(n)),
        _ => bail!("parameter `blocking`: expected sa3 or meshblock:<digits>, got `{s}`"),
    }
}

struct LinkSetup {
    methods: Vec<Method>,
    bigram: BigramConfig,
    blocking: BlockingStrategy,
}

impl LinkSetup {
    fn from(cfg: &RunConfig) -> Result<Self> {
        let methods = cfg
            .get_list::<String>("methods", vec!["first-unique".into(), "voting".into()])?
            .iter()
            .map(|m| parse_method(m))
            .collect::<Result<_>>()?;
        Ok(Self {
            methods,
            bigram: BigramConfig {
                scoring: Scoring::Dice,
                threshold: cfg.get("bigram_threshold", DEFAULT_BIGRAM_THRESHOLD)?,
                transposed_pass: cfg.get("transposed_pass", false)?,
            },
            blocking: parse_blocking(&cfg.get::<String>("blocking", "sa3".into())?)?,
        })
    }

    fn run(&self, method: Method, linker: &Linker, indexed: Option<&Dataset>, queries: &Dataset, key: &HmacKey, seed: u64) -> Result<LinkRun> {
        match method {
            Method::FirstUnique | Method::Voting => Ok(link_all(linker, queries, method, seed)),
            Method::BigramDice | Method::BigramQgram => {
                let Some(indexed) = indexed else {
                    bail!("bi-gram matching needs the indexed dataset (--input), not a snapshot");
                };
                let scoring = if method == Method::BigramDice { Scoring::Dice } else { Scoring::Qgram };
                Ok(link_all_bigram(indexed, queries, self.blocking, key, BigramConfig { scoring, ..self.bigram }))
            }
        }
    }
}

fn any_tag_hit(decisions: &[MatchDecision]) -> bool {
    decisions.iter().any(|d| match &d.evidence {
        Evidence::Specs(trace) => trace.iter().any(|(_, o)| *o != SpecOutcome::NoMatch),
        Evidence::Score(_) => true,
    })
}

pub fn link(cfg: &RunConfig, input: Option<&Path>, queries: Option<&Path>, index_path: Option<&Path>) -> Result<()> {
    let setup = LinkSetup::from(cfg)?;
    let specs = specs(cfg)?;
    let key = cfg.linkage_key()?;
    let mut results: Vec<EvalResult> = Vec::new();

    if let Some(qpath) = queries {
        let queries = load_dataset(qpath).with_context(|| format!("loading {}", qpath.display()))?;
        let indexed = input.map(load_dataset).transpose()?;
        let index: LinkIndex = match (index_path, &indexed) {
            (Some(p), _) => read_snapshot(BufReader::new(fs::File::open(p).with_context(|| format!("opening {}", p.display()))?))?,
            (None, Some(ds)) => build_index(ds, &specs, &key),
            (None, None) => bail!("linking --queries needs --input or --index"),
        };
        let ids: HashSet<u64> = match &indexed {
            Some(ds) => ds.row_ids().into_iter().collect(),
            None => index.partitions.iter().flat_map(|p| p.postings.values().flatten().copied()).collect(),
        };
        let linker = Linker::new(&index, &specs, &key);
        for &method in &setup.methods {
            let run = setup.run(method, &linker, indexed.as_ref(), &queries, &key, cfg.seed)?;
            if matches!(method, Method::FirstUnique | Method::Voting)
                && !queries.is_empty()
                && index.total_postings() > 0
                && !any_tag_hit(&run.decisions)
            {
                bail!(
                    "key mismatch suspected: none of {} queries matched any tag in the index; \
                     was the index built with a different key?",
                    queries.len()
                );
            }
            cfg.write_csv(&format!("decisions_{method}.csv"), |w| write_decisions_csv(&run.decisions, w))?;
            results.push(evaluate("input", method, &run.decisions, &ids)?);
        }
    } else {
        let original = population(cfg, input)?;
        let n = original.len();
        let gen = Generator::new(GeneratorConfig::bundled(n, cfg.seed))?;
        let kinds: Vec<DistortionKind> = cfg.get_list("distortions", DistortionKind::RESULTS_SUITE.to_vec())?;
        let index = build_index(&original, &specs, &key);
        let linker = Linker::new(&index, &specs, &key);
        let ids: HashSet<u64> = original.row_ids().into_iter().collect();
        for kind in kinds {
            let queries = shuffle(&gen.distort(&original, DistortionSpec::all(kind), cfg.seed)?.dataset, cfg.seed);
            for &method in &setup.methods {
                let run = setup.run(method, &linker, Some(&original), &queries, &key, cfg.seed)?;
                cfg.write_csv(&format!("decisions_{kind}_{method}.csv"), |w| write_decisions_csv(&run.decisions, w))?;
                results.push(evaluate(kind.label(), method, &run.decisions, &ids)?);
            }
        }
    }
    cfg.write_csv("eval.csv", |w| write_eval_csv(&results, w))?;
    for r in &results {
        println!("{:<26} {:<13} precision {:.4} recall {:.4}", r.distortion, r.method.as_str(), r.precision, r.recall_any);
    }
    Ok(())
}

fn extremes_csv(w: &mut dyn Write, stats: &[OverestimationStats]) -> std::io::Result<()> {
    writeln!(w, "family,m,k,bloom_score,name_a,name_b")?;
    for s in stats {
        for e in &s.extreme_examples {
            writeln!(w, "{},{},{},{:.6},{},{}", s.family, s.m, s.k, e.bloom_score, e.name_a, e.name_b)?;
        }
    }
    Ok(())
}

pub fn bloom(cfg: &RunConfig) -> Result<()> {
    let m = cfg.get("m", 101)?;
    let k = cfg.get("k", 3)?;
    let filters = cfg.get("filters", cfg.scale.pick(50_000, 500_000))?;
    let inserts = cfg.get("inserts", 5)?;
    for config in [FamilyConfig::classic_double(m, k), FamilyConfig::Universal { m, k }] {
        let u = uniformity_experiment(config, filters, inserts, cfg.seed)?;
        cfg.write_csv(&format!("uniformity_{}.csv", config.label()), |w| u.write_csv(w))?;
        println!("uniformity {:<18} m={m} k={k} stddev {:.1}", u.family, u.stddev);
    }

    let names = name_sample(cfg.get("names", cfg.scale.pick(2_000, 10_000))?, cfg.seed);
    let mut over = Vec::new();
    for mm in [100, 101] {
        over.push(overestimation_experiment(&names, FamilyConfig::classic_double(mm, 3), cfg.seed)?);
    }
    cfg.write_csv("overestimation.csv", |w| write_sweep_csv(&over, w))?;
    cfg.write_csv("overestimation_extremes.csv", |w| extremes_csv(w, &over))?;
    for s in &over {
        println!(
            "over-estimation m={} k={}: bloom greater {:.4}, mean diff {:.4}, std {:.4}",
            s.m,
            s.k,
            s.greater_fraction(),
            s.mean_diff(),
            s.std_diff()
        );
    }

    if cfg.get("sweep", true)? {
        let sweep_names = name_sample(cfg.get("sweep_names", cfg.scale.pick(1_000, 10_000))?, cfg.seed);
        let sizes: Vec<usize> = (1..=10).map(|i| i * 100).collect();
        let ks = [3, 5, 10, 15, 20, 25, 30];
        let mut configs = sweep_grid(&sizes, 3, &ks, 1000, false);
        configs.extend(sweep_grid(&sizes, 3, &ks, 1000, true));
        let rows = parameter_sweep(&sweep_names, &configs, cfg.seed)?;
        cfg.write_csv("sweep.csv", |w| write_sweep_csv(&rows, w))?;
    }
    Ok(())
}

fn emit(cfg: &RunConfig, name: &str, report: &AttackReport, summary: &mut Vec<String>) -> Result<()> {
    let shown = if cfg.redact { report.redacted() } else { report.clone() };
    cfg.write_csv(&format!("attack_{name}.csv"), |w| shown.write_csv(w))?;
    summary.push(report.summary());
    Ok(())
}

pub fn attack(cfg: &RunConfig) -> Result<()> {
    let mut summary = Vec::new();

    let dict = bundled::surname_dictionary(cfg.get("dict_size", cfg.scale.pick(100_000, 400_000))?);
    let n_targets: usize = cfg.get("targets", 1000)?;
    let mut r = rng::stream(cfg.seed, "attack:targets");
    let mut picks: Vec<&String> = dict.iter().collect();
    rand::seq::SliceRandom::shuffle(picks.as_mut_slice(), &mut r);
    let targets: Vec<[u8; 32]> = picks
        .iter()
        .take(n_targets)
        .map(|n| pprl_core::hashcore::sha256(n.as_bytes()))
        .collect();
    emit(cfg, "dictionary", &dictionary_attack(&targets, &dict, &Sha256Encoder), &mut summary)?;

    let freq = bundled::surname_table();
    let samples = cfg.get("samples", 100_000)?;
    let enc = HmacEncoder(HmacKey::from_seed(cfg.seed, "attack:frequency"));
    let tags = pprl_core::attacks::sample_encoded(&freq, samples, &enc, cfg.seed);
    let fa = frequency_attack(&tags, &freq, cfg.get("top_k", 10)?, Some(&enc));
    emit(cfg, "frequency", &fa.report, &mut summary)?;
    summary.push(format!("frequency attack rank-1 correct without the key: {}", fa.rank1_correct == Some(true)));

    let n = cfg.get("n", cfg.scale.pick(10_000, 100_000))?;
    let ds = Generator::new(GeneratorConfig::bundled(n, cfg.seed))?.generate();
    let recs: Vec<(u64, String)> = ds.records.iter().map(|r| (r.row_id, r.last_name.clone())).collect();
    let table = build_hmac_table(
        recs.iter().map(|r| r.1.as_str()),
        &HmacKey::from_seed(cfg.seed, "attack:lossy"),
        cfg.get("buckets", 50)?,
    )?;
    let seeds = pprl_core::attacks::frequent_name_seeds(&recs, cfg.get("reversal_seeds", 10)?);
    let chain = bucket_reversal_chain(&table, &recs, &seeds);
    emit(cfg, "reversal", &chain.report, &mut summary)?;
    cfg.write_csv("reversal_curve.csv", |w| chain.write_curve_csv(w))?;

    let start = Instant::now();
    let index = build_index(&ds, &default_specs(), &cfg.linkage_key()?);
    let groups = linkage_key_frequency_probe(&index);
    emit(cfg, "probe", &probe_report(&groups, start.elapsed()), &mut summary)?;

    let text = summary.join("\n") + "\n";
    cfg.write_bytes("attack_summary.txt", text.as_bytes())?;
    print!("{text}");
    Ok(())
}

pub fn lossy(cfg: &RunConfig) -> Result<()> {
    let freq = bundled::surname_table();
    let probe = cfg.get::<String>("probe", freq.ranked()[0].0.clone())?;
    let trials = cfg.get("trials", 10)?;
    let sizes: Vec<usize> = cfg.get_list("buckets", vec![10, 50, 100, 500])?;
    let key = HmacKey::from_seed(cfg.seed, "lossy");
    let mut rank_rows = Vec::new();
    for &n in &sizes {
        let table = build_hmac_table(freq.entries().iter().map(|(v, _)| v.as_str()), &key, n)?;
        cfg.write_csv(&format!("bucket_table_{n}.csv"), |w| table.write_csv(w))?;
        let analysis = bucket_frequency_analysis(&table, &freq, &probe)?;
        cfg.write_csv(&format!("bucket_analysis_{n}.csv"), |w| analysis.write_csv(w))?;
        let ranks = probe_rank_trials(&freq, &probe, n, trials, cfg.seed)?;
        println!("{n:>4} buckets: probe bucket rank {:?}", ranks);
        rank_rows.extend(ranks.into_iter().enumerate().map(|(t, r)| (n, t, r)));
    }
    cfg.write_csv("probe_ranks.csv", |w| {
        writeln!(w, "n_buckets,trial,probe_rank")?;
        for (n, t, r) in &rank_rows {
            writeln!(w, "{n},{t},{r}")?;
        }
        Ok(())
    })?;
    let smooth = build_smoothed_table(&freq, cfg.get("smooth_buckets", 100)?)?;
    cfg.write_csv("smoothed_buckets.csv", |w| {
        writeln!(w, "bucket_id,mass,distinct_names")?;
        for (b, (m, d)) in smooth.masses.iter().zip(&smooth.distinct_names).enumerate() {
            writeln!(w, "{b},{m},{d}")?;
        }
        Ok(())
    })?;
    println!(
        "smoothed: max/min mass {:.3}, {} rarest names to match the dominant one",
        smooth.max_min_ratio, smooth.names_to_match_dominant
    );
    Ok(())
}

pub fn envelope(cfg: &RunConfig, shares_out: Option<&Path>) -> Result<()> {
    let n = cfg.get("n", cfg.scale.pick(1_000, 10_000))?;
    let ds = Generator::new(GeneratorConfig::bundled(n, cfg.seed))?.generate();
    let mut r = rng::stream(cfg.seed, "envelope:linker-keypair");
    let keys = Keypair::generate(&mut r);
    let out = pipeline_demo(&ds, &keys, cfg.seed)?;
    let public_hex: String = keys.public_bytes().iter().map(|b| format!("{b:02x}")).collect();
    cfg.write_bytes("public_key.hex", format!("{public_hex}\n").as_bytes())?;
    cfg.write_bytes("left.enc", &out.left_file)?;
    cfg.write_bytes("right.enc", &out.right_file)?;
    cfg.write_csv("links.csv", |w| {
        writeln!(w, "query_row_id,matched_row_id")?;
        for (q, m) in &out.links {
            writeln!(w, "{q},{m}")?;
        }
        Ok(())
    })?;
    cfg.write_csv("forwarded_yob.csv", |w| {
        writeln!(w, "row_id,yob")?;
        for (id, y) in &out.forwarded_yob {
            writeln!(w, "{id},{y}")?;
        }
        Ok(())
    })?;
    cfg.write_csv("eval.csv", |w| write_eval_csv(std::slice::from_ref(&out.eval), w))?;
    if let Some(path) = shares_out {
        let t = cfg.get("share_threshold", 2)?;
        let count = cfg.get("share_count", 3)?;
        let shares = split_key(&keys.private_bytes(), t, count, &mut r)?;
        let text: String = shares.shares.iter().map(|s| s.to_line() + "\n").collect();
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {count} key shares (threshold {t}) to {}", path.display());
    }
    println!(
        "pipeline self-link of {n} records: precision {:.4} recall {:.4}",
        out.eval.precision, out.eval.recall_true
    );
    Ok(())
}

pub fn tables(cfg: &RunConfig) -> Result<()> {
    cfg.write_csv("surnames.csv", |w| bundled::surname_table().write_csv(w))?;
    cfg.write_csv("meshblocks.csv", |w| bundled::meshblock_table().write_csv(w))?;
    cfg.write_csv("yob.csv", |w| bundled::yob_table().write_csv(w))?;
    cfg.write_csv("first_names.csv", |w| bundled::first_name_tables().write_csv(w))?;
    println!("wrote bundled tables to {}", cfg.out.display());
    Ok(())
}

/// generate → derive → link → bloom → attack → lossy → envelope, each into
/// its own subdirectory.
pub fn repro(cfg: &RunConfig) -> Result<()> {
    generate(&cfg.sub("generate", cfg.path("generate"))?)?;
    derive(&cfg.sub("derive", cfg.path("derive"))?, None)?;
    link(&cfg.sub("link", cfg.path("link"))?, None, None, None)?;
    bloom(&cfg.sub("bloom", cfg.path("bloom"))?)?;
    attack(&cfg.sub("attack", cfg.path("attack"))?)?;
    lossy(&cfg.sub("lossy", cfg.path("lossy"))?)?;
    envelope(&cfg.sub("envelope", cfg.path("envelope"))?, None)?;
    Ok(())
}
