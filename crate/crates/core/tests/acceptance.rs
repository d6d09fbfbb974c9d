//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion.
//! Seed fixed before any run.

use std::collections::{BTreeMap, HashSet};
use std::time::{Duration, Instant};

use rand::RngCore;

use pprl_core::attacks::{
    dictionary_attack, frequency_attack, linkage_key_frequency_probe, sample_encoded, HmacEncoder, Sha256Encoder,
};
use pprl_core::bloom::{
    bloom_dice, name_sample, overestimation_experiment, parameter_sweep, sweep_grid, uniformity_experiment,
    BloomFilter, FamilyConfig, TaggedFilter,
};
use pprl_core::envelope::{recombine, split_key, write_linkage_file, Keypair};
use pprl_core::evalbench::{evaluate, perf_benchmark, run_distortion_suite, EvalResult};
use pprl_core::hashcore::{bigrams, sha256, HmacKey};
use pprl_core::linker::{
    block_dataset, dice_sets, link_all, link_all_bigram, BigramConfig, BlockingStrategy, Linker, Method,
};
use pprl_core::linkkeys::{build_index, default_specs, prune_nonunique, uniqueness_report, PrunePolicy};
use pprl_core::lossy::probe_rank_trials;
use pprl_core::model::{Dataset, Field};
use pprl_core::rng;
use pprl_core::synthgen::{bundled, shuffle, DistortionKind, Generator, GeneratorConfig};

const SEED: u64 = 1;
const N: usize = 100_000;

struct Line {
    id: u8,
    pass: bool,
    detail: String,
}

fn line(id: u8, pass: bool, detail: String) -> Line {
    println!("{} [{id:>2}] {detail}", if pass { "PASS" } else { "FAIL" });
    Line { id, pass, detail }
}

fn voting(results: &[EvalResult], kind: DistortionKind) -> &EvalResult {
    results
        .iter()
        .find(|r| r.distortion == kind.label() && r.method == Method::Voting)
        .expect("suite covers every distortion")
}

fn exact_linking(ds: &Dataset) -> Line {
    let start = Instant::now();
    let key = HmacKey::from_seed(SEED, "acceptance");
    let specs = default_specs();
    let index = build_index(ds, &specs, &key);
    let linker = Linker::new(&index, &specs, &key);
    let queries = shuffle(ds, SEED);
    let ids: HashSet<u64> = ds.row_ids().into_iter().collect();
    let mut out = Vec::new();
    for m in [Method::FirstUnique, Method::Voting] {
        let run = link_all(&linker, &queries, m, SEED);
        out.push(evaluate("exact", m, &run.decisions, &ids).unwrap());
    }
    let wall = start.elapsed();
    let perfect = out.iter().all(|r| r.precision == 1.0 && r.recall_any == 1.0 && r.recall_true == 1.0);
    line(
        1,
        perfect && wall < Duration::from_secs(120),
        format!(
            "exact copy at {N}: first-unique P={:.4} R={:.4}, voting P={:.4} R={:.4}, {:.1}s",
            out[0].precision,
            out[0].recall_any,
            out[1].precision,
            out[1].recall_any,
            wall.as_secs_f64()
        ),
    )
}

// Voting precision per distortion as published.
const PAPER_VOTING_PRECISION: [(DistortionKind, f64); 8] = [
    (DistortionKind::ChangeMiddleInitial, 0.999),
    (DistortionKind::FirstLastTranspose, 0.994),
    (DistortionKind::Exact, 1.000),
    (DistortionKind::LastName2LetterTranspose, 0.999),
    (DistortionKind::RemoveAddMiddleInitial, 0.999),
    (DistortionKind::FirstName2LetterTranspose, 0.999),
    (DistortionKind::MeshblockChange, 0.937),
    (DistortionKind::ChangeGender, 0.967),
];

fn distortion_robustness(gen: &Generator, ds: &Dataset) -> Line {
    let key = HmacKey::from_seed(SEED, "acceptance");
    let results = run_distortion_suite(gen, ds, &DistortionKind::RESULTS_SUITE, &default_specs(), &key, SEED).unwrap();
    let mut by_precision: Vec<(DistortionKind, f64)> = DistortionKind::RESULTS_SUITE
        .iter()
        .map(|&k| (k, voting(&results, k).precision))
        .collect();
    by_precision.sort_by(|a, b| a.1.total_cmp(&b.1));
    let bottom: HashSet<DistortionKind> = by_precision[..2].iter().map(|x| x.0).collect();
    let recall_ok = DistortionKind::RESULTS_SUITE.iter().all(|&k| voting(&results, k).recall_any == 1.0);
    let floor_ok = by_precision
        .iter()
        .filter(|(k, _)| !matches!(k, DistortionKind::MeshblockChange | DistortionKind::ChangeGender))
        .all(|(_, p)| *p >= 0.93);
    let bottom_ok = bottom == HashSet::from([DistortionKind::MeshblockChange, DistortionKind::ChangeGender]);
    let within = PAPER_VOTING_PRECISION
        .iter()
        .all(|&(k, p)| (voting(&results, k).precision - p).abs() <= 0.05);
    let detail: Vec<String> = by_precision.iter().map(|(k, p)| format!("{k}={p:.4}")).collect();
    line(
        2,
        recall_ok && floor_ok && bottom_ok && within,
        format!(
            "voting recall all 1: {recall_ok}; bottom two {{meshblockChange, changeGender}}: {bottom_ok}; \
             within 0.05 of published: {within}; precision ascending: {}",
            detail.join(" ")
        ),
    )
}

fn uniqueness(ds: &Dataset) -> Line {
    let specs = default_specs();
    let index = build_index(ds, &specs, &HmacKey::from_seed(SEED, "acceptance"));
    let report = uniqueness_report(&index, ds.len());
    let min = report
        .rows
        .iter()
        .min_by(|a, b| a.percent_unique_records.total_cmp(&b.percent_unique_records))
        .unwrap();
    let meshblock: Vec<(&str, f64)> = specs
        .iter()
        .filter(|s| s.uses_field(Field::Meshblock) && s.selectors.len() > 1)
        .map(|s| (s.name.as_str(), report.row(&s.name).unwrap().percent_unique_records))
        .collect();
    let worst_mb = meshblock.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
    line(
        3,
        worst_mb >= 99.5 && min.spec == "ForenameSurnameYoBSex",
        format!(
            "least unique meshblock spec {worst_mb:.3}%; minimum of suite {} at {:.3}%",
            min.spec, min.percent_unique_records
        ),
    )
}

fn bloom_overestimation() -> Line {
    let start = Instant::now();
    let names = name_sample(10_000, SEED);
    let a = overestimation_experiment(&names, FamilyConfig::classic_double(100, 3), SEED).unwrap();
    let b = overestimation_experiment(&names, FamilyConfig::classic_double(101, 3), SEED).unwrap();
    let wall = start.elapsed();
    let greater_ok = (a.greater_fraction() - 0.97).abs() <= 0.03;
    let mean_ok = (a.mean_diff() - 0.20).abs() <= 0.05;
    let same = (a.mean_diff() - b.mean_diff()).abs() <= 0.01 && (a.greater_fraction() - b.greater_fraction()).abs() <= 0.01;
    line(
        4,
        greater_ok && mean_ok && same && wall < Duration::from_secs(600),
        format!(
            "m=100 k=3: greater {:.4}, mean {:.4}, std {:.4}; m=101: greater {:.4}, mean {:.4}, std {:.4}; {} pairs each, {:.1}s",
            a.greater_fraction(),
            a.mean_diff(),
            a.std_diff(),
            b.greater_fraction(),
            b.mean_diff(),
            b.std_diff(),
            a.total_comparisons,
            wall.as_secs_f64()
        ),
    )
}

fn inversions(v: &[f64], increasing: bool) -> usize {
    v.windows(2)
        .filter(|w| if increasing { w[1] <= w[0] } else { w[1] >= w[0] })
        .count()
}

fn sweep_monotonicity() -> Line {
    let names = name_sample(2_000, SEED);
    let sizes: Vec<usize> = (1..=10).map(|i| i * 100).collect();
    let ks = [3, 5, 10, 15, 20, 25, 30];
    let rows = parameter_sweep(&names, &sweep_grid(&sizes, 3, &ks, 1000, false), SEED).unwrap();
    let by_m: Vec<f64> = rows[..sizes.len()].iter().map(|r| r.mean_diff()).collect();
    let by_k: Vec<f64> = rows[sizes.len()..].iter().map(|r| r.mean_diff()).collect();
    let (im, ik) = (inversions(&by_m, false), inversions(&by_k, true));
    let gap = (by_k[by_k.len() - 1] - by_m[0]).abs();
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    line(
        5,
        im <= 1 && ik <= 1 && gap <= 0.05,
        format!(
            "mean over-estimate by m (k=3): {} [{im} inversions]; by k (m=1000): {} [{ik} inversions]; |(1000,30)-(100,3)|={gap:.4}",
            fmt(&by_m),
            fmt(&by_k)
        ),
    )
}

fn uniformity() -> Line {
    let d = uniformity_experiment(FamilyConfig::classic_double(101, 3), 500_000, 5, SEED).unwrap();
    let u = uniformity_experiment(FamilyConfig::Universal { m: 101, k: 3 }, 500_000, 5, SEED).unwrap();
    let ratio = d.stddev / u.stddev;
    line(
        6,
        ratio >= 4.0,
        format!("bit-count stddev double {:.1}, universal {:.1}, ratio {ratio:.2}", d.stddev, u.stddev),
    )
}

fn dictionary() -> Line {
    let dict = bundled::surname_dictionary(400_000);
    let mut r = rng::stream(SEED, "acceptance:targets");
    let targets: Vec<[u8; 32]> = rand::seq::index::sample(&mut r, dict.len(), 1000)
        .into_iter()
        .map(|i| sha256(dict[i].as_bytes()))
        .collect();
    let distinct: HashSet<[u8; 32]> = targets.iter().copied().collect();
    let report = dictionary_attack(&targets, &dict, &Sha256Encoder);
    let verified = report.recoveries.iter().all(|x| x.verified);
    line(
        7,
        distinct.len() == 1000 && report.recovered == 1000 && verified && report.duration < Duration::from_secs(60),
        format!(
            "recovered {}/{} distinct targets from {} names in {:.2}s",
            report.recovered,
            distinct.len(),
            dict.len(),
            report.duration.as_secs_f64()
        ),
    )
}

fn frequency() -> Line {
    let freq = bundled::surname_table();
    let dominant = freq.ranked()[0].0.clone();
    let mut hits = 0;
    for t in 0..10 {
        let enc = HmacEncoder(HmacKey::from_seed(SEED, format!("acceptance:freq:{t}")));
        let tags = sample_encoded(&freq, 100_000, &enc, SEED + t);
        let blind = frequency_attack(&tags, &freq, 1, None);
        // Scored afterwards: does the keyless guess re-encode to the top tag?
        let truth = pprl_core::hashcore::hmac_tag(&enc.0, dominant.as_bytes());
        hits += usize::from(blind.alignment[0].guess == dominant && blind.alignment[0].tag == truth);
    }
    line(8, hits == 10, format!("rank-1 tag identified as `{dominant}` without the key in {hits}/10 trials"))
}

fn lossy() -> Line {
    let freq = bundled::surname_table();
    let probe = freq.ranked()[0].0.clone();
    let mut ranks = BTreeMap::new();
    for n in [10, 50, 100, 500] {
        ranks.insert(n, probe_rank_trials(&freq, &probe, n, 10, SEED).unwrap());
    }
    let pass = ranks.values().flatten().all(|&r| r == 1);
    let detail: Vec<String> = ranks
        .iter()
        .map(|(n, r)| format!("{n}:{}/10", r.iter().filter(|&&x| x == 1).count()))
        .collect();
    line(9, pass, format!("`{probe}` bucket rank 1 per bucket count: {}", detail.join(" ")))
}

fn median(mut v: Vec<Duration>) -> Duration {
    v.sort();
    v[v.len() / 2]
}

fn performance(ds: &Dataset) -> Line {
    let specs = default_specs();
    let small: Vec<Duration> = (0..5)
        .map(|_| perf_benchmark(1_000, &specs, Method::FirstUnique, SEED, 1).unwrap().link_wall)
        .collect();
    let large: Vec<Duration> = (0..5)
        .map(|_| perf_benchmark(10_000, &specs, Method::FirstUnique, SEED, 1).unwrap().link_wall)
        .collect();
    let ratio = median(large).as_secs_f64() / median(small).as_secs_f64();
    let full = perf_benchmark(N, &specs, Method::Voting, SEED, 0).unwrap();
    let bound = full.n_queries_issued <= (N * 11) as u64;

    // SA3 blocks here hold a few hundred records against the published
    // 15,000+; a two-digit meshblock prefix gives blocks of a few thousand.
    let key = HmacKey::from_seed(SEED, "acceptance");
    let block_gap = |strategy: BlockingStrategy| {
        let blocks = block_dataset(ds, strategy);
        let largest = blocks.iter().max_by_key(|b| b.members.len()).unwrap();
        let members: HashSet<u64> = largest.members.iter().copied().collect();
        let block = Dataset::new(
            ds.records.iter().filter(|r| members.contains(&r.row_id)).cloned().collect(),
            "block",
        );
        let queries = shuffle(&block, SEED);
        let bigram = link_all_bigram(&block, &queries, strategy, &key, BigramConfig::default());
        let index = build_index(&block, &specs, &key);
        let det = link_all(&Linker::new(&index, &specs, &key), &queries, Method::Voting, SEED);
        (block.len(), bigram.work, det.work)
    };
    let (sa3_n, sa3_sim, sa3_det) = block_gap(BlockingStrategy::BySa3);
    let (block_n, sim, lookups) = block_gap(BlockingStrategy::ByMeshblockPrefix(2));
    let gap = sim as f64 / lookups as f64;
    line(
        10,
        bound && (5.0..=20.0).contains(&ratio) && full.wall < Duration::from_secs(60) && gap >= 50.0,
        format!(
            "{} lookups for {N} queries (bound {}); 1k->10k link time ratio {ratio:.2}; {N} end to end {:.1}s; \
             block of {block_n}: {sim} similarity computations vs {lookups} lookups ({gap:.0}x); \
             largest SA3 block of {sa3_n}: {sa3_sim} vs {sa3_det} ({:.0}x)",
            full.n_queries_issued,
            N * 11,
            full.wall.as_secs_f64(),
            sa3_sim as f64 / sa3_det as f64
        ),
    )
}

// Rows of last names whose padded bi-gram sets coincide, as published.
const IDENTICAL_BIGRAM_ROWS: [[&str; 3]; 15] = [
    ["petitt", "pettit", "pettitt"],
    ["mamara", "marama", "maramara"],
    ["lewellyn", "llewellyn", "llewelyn"],
    ["takata", "takataka", "tataka"],
    ["linemann", "linneman", "linnemann"],
    ["mulally", "mullally", "mullaly"],
    ["bebee", "beebe", "beebee"],
    ["kirisits", "kiritsis", "kitsiris"],
    ["minisi", "minisini", "misini"],
    ["kaparas", "karapapas", "karapas"],
    ["hanemann", "hanneman", "hannemann"],
    ["amara", "amarama", "arama"],
    ["pulella", "pullela", "pullella"],
    ["debeen", "deebeen", "deeben"],
    ["peirrera", "pereirra", "perreira"],
];

fn properties(ds: &Dataset) -> Line {
    let family = FamilyConfig::classic_double(100, 3).build(SEED).unwrap();
    let mut bigram_ok = true;
    for row in IDENTICAL_BIGRAM_ROWS {
        for a in row {
            for b in row {
                let (sa, sb) = (bigrams(a).unwrap(), bigrams(b).unwrap());
                let va: Vec<&String> = sa.grams().iter().collect();
                let vb: Vec<&String> = sb.grams().iter().collect();
                let fa = BloomFilter::of_name(a, &family).unwrap();
                let fb = BloomFilter::of_name(b, &family).unwrap();
                let bd = bloom_dice(
                    &TaggedFilter { filter: fa, family: &family },
                    &TaggedFilter { filter: fb, family: &family },
                )
                .unwrap();
                bigram_ok &= dice_sets(&va, &vb) == 1.0 && bd == 1.0;
            }
        }
    }

    let mut r = rng::stream(SEED, "acceptance:shares");
    let mut sharing_ok = true;
    for _ in 0..200 {
        let mut secret = [0u8; 32];
        r.fill_bytes(&mut secret);
        let n = 1 + (r.next_u32() % 5) as usize;
        let t = 1 + (r.next_u32() as usize % n);
        let s = split_key(&secret, t, n, &mut r).unwrap().shares;
        sharing_ok &= recombine(&s[n - t..]).unwrap() == secret;
        if t > 1 {
            sharing_ok &= recombine(&s[..t - 1]).is_err();
        }
    }

    let sample = Dataset::new(ds.records[..2000].to_vec(), "sample");
    let kp = Keypair::generate(&mut r);
    let file = write_linkage_file(&sample, &kp.public_bytes(), &mut r);
    let scan_ok = sample
        .records
        .iter()
        .flat_map(|x| [&x.first_name, &x.last_name])
        .filter(|n| n.len() >= 5)
        .all(|n| !file.windows(n.len()).any(|w| w == n.as_bytes()));

    let index = build_index(ds, &default_specs(), &HmacKey::from_seed(SEED, "acceptance"));
    let before = linkage_key_frequency_probe(&index).len();
    let (pruned, _) = prune_nonunique(&index, PrunePolicy::DropPostings);
    let probe_ok = before > 0 && linkage_key_frequency_probe(&pruned).is_empty();

    line(
        11,
        bigram_ok && sharing_ok && scan_ok && probe_ok,
        format!(
            "identical bi-gram rows at Dice 1.0: {bigram_ok}; t-1 shares fail, t recover: {sharing_ok}; \
             no plaintext names in linkage file: {scan_ok}; probe empty after pruning ({before} groups before): {probe_ok}"
        ),
    )
}

#[test]
fn acceptance() {
    let gen = Generator::new(GeneratorConfig::bundled(N, SEED)).unwrap();
    let ds = gen.generate();
    let lines = vec![
        exact_linking(&ds),
        distortion_robustness(&gen, &ds),
        uniqueness(&ds),
        bloom_overestimation(),
        sweep_monotonicity(),
        uniformity(),
        dictionary(),
        frequency(),
        lossy(),
        performance(&ds),
        properties(&ds),
    ];
    let failed: Vec<String> = lines
        .iter()
        .filter(|l| !l.pass)
        .map(|l| format!("[{}] {}", l.id, l.detail))
        .collect();
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
}
