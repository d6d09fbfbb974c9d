use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pprl_core::envelope::Keypair;
use pprl_core::hashcore::HmacKey;
use pprl_core::rng;

fn pprl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pprl"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let o = pprl(dir, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

/// (distortion, method) → (precision, recall)
fn eval(path: PathBuf) -> Vec<(String, String, f64, f64)> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(2)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].into(), f[1].into(), f[2].parse().unwrap(), f[3].parse().unwrap())
        })
        .collect()
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn exact_copy_links_perfectly_and_meshblock_change_does_not() {
    let t = tempfile::tempdir().unwrap();
    let c = config(t.path(), "link.cfg", "n = 10000\ndistortions = exact, meshblockChange\n");
    ok(t.path(), &["link", "--config", &c, "--out", "o"]);
    let rows = eval(t.path().join("o/eval.csv"));
    for (d, m, p, r) in &rows {
        if d == "exact" {
            assert_eq!((*p, *r), (1.0, 1.0), "{m}");
        }
    }
    let fu = rows.iter().find(|r| r.0 == "meshblockChange" && r.1 == "first-unique").unwrap();
    assert!(fu.2 < 1.0 && fu.3 < 1.0, "{fu:?}");
}

#[test]
fn outputs_carry_header_and_are_reproducible() {
    let t = tempfile::tempdir().unwrap();
    let c = config(t.path(), "g.cfg", "n = 500\ndistortions = changeGender\n");
    for out in ["a", "b"] {
        ok(t.path(), &["generate", "--config", &c, "--seed", "9", "--out", out]);
        ok(t.path(), &["lossy", "--seed", "9", "--out", &format!("{out}/lossy")]);
        ok(t.path(), &["attack", "--seed", "9", "--out", &format!("{out}/attack")]);
        ok(t.path(), &["envelope", "--seed", "9", "--out", &format!("{out}/env")]);
    }
    let a = files(&t.path().join("a"));
    assert_eq!(a.len(), files(&t.path().join("b")).len());
    for p in a {
        let rel = p.strip_prefix(t.path().join("a")).unwrap();
        if p.extension().is_some_and(|e| e == "csv") {
            let text = fs::read_to_string(&p).unwrap();
            assert!(text.starts_with("# config_digest="), "{rel:?}");
            assert!(text.lines().next().unwrap().contains(" seed=9 version="), "{rel:?}");
        }
        if p.extension().is_some_and(|e| e == "txt") {
            continue;
        }
        assert_eq!(fs::read(&p).unwrap(), fs::read(t.path().join("b").join(rel)).unwrap(), "{rel:?}");
    }
}

#[test]
fn empty_queries_give_empty_decisions() {
    let t = tempfile::tempdir().unwrap();
    let c = config(t.path(), "g.cfg", "n = 200\n");
    ok(t.path(), &["generate", "--config", &c, "--out", "g"]);
    fs::write(
        t.path().join("empty.csv"),
        "row_id,first_name,middle_initial,last_name,yob,sex,meshblock,sa3\n",
    )
    .unwrap();
    ok(t.path(), &["link", "--input", "g/dataset.csv", "--queries", "empty.csv", "--out", "l"]);
    for m in ["first-unique", "voting"] {
        let text = fs::read_to_string(t.path().join(format!("l/decisions_{m}.csv"))).unwrap();
        assert_eq!(text.lines().count(), 2, "{text}");
    }
}

#[test]
fn linking_with_another_key_is_diagnosed() {
    let t = tempfile::tempdir().unwrap();
    let c = config(t.path(), "g.cfg", "n = 300\n");
    let ka = HmacKey::from_seed(1, "a");
    let kb = HmacKey::from_seed(2, "b");
    fs::write(t.path().join("a.key"), ka.to_key_line()).unwrap();
    fs::write(t.path().join("b.key"), kb.to_key_line()).unwrap();
    ok(t.path(), &["generate", "--config", &c, "--out", "g"]);
    ok(t.path(), &["derive", "--input", "g/dataset.csv", "--key-file", "a.key", "--out", "d"]);
    ok(
        t.path(),
        &["link", "--index", "d/index.bin", "--queries", "g/dataset.csv", "--key-file", "a.key", "--out", "l1"],
    );
    let rows = eval(t.path().join("l1/eval.csv"));
    assert!(rows.iter().all(|r| r.2 == 1.0 && r.3 == 1.0), "{rows:?}");
    let o = pprl(
        t.path(),
        &["link", "--index", "d/index.bin", "--queries", "g/dataset.csv", "--key-file", "b.key", "--out", "l2"],
    );
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("key mismatch suspected"));
}

#[test]
fn no_key_material_in_outputs() {
    let t = tempfile::tempdir().unwrap();
    let key = HmacKey::from_seed(77, "secret");
    fs::write(t.path().join("k.key"), key.to_key_line()).unwrap();
    let c = config(t.path(), "n.cfg", "n = 400\n");
    let common = ["--key-file", "k.key", "--seed", "5", "--config", &c];
    for (cmd, out) in [("derive", "o/derive"), ("link", "o/link"), ("attack", "o/attack"), ("envelope", "o/env")] {
        let mut args = vec![cmd, "--out", out];
        args.extend(common);
        ok(t.path(), &args);
    }
    let envelope_private = Keypair::generate(&mut rng::stream(5, "envelope:linker-keypair")).private_bytes();
    let seeded = HmacKey::from_seed(5, "linkage");
    let secrets: Vec<Vec<u8>> = [*key.expose_bytes(), *seeded.expose_bytes(), envelope_private]
        .iter()
        .flat_map(|b| [b.to_vec(), hex_lower(b).into_bytes(), hex_lower(b).to_uppercase().into_bytes()])
        .collect();
    for p in files(&t.path().join("o")) {
        let bytes = fs::read(&p).unwrap();
        for s in &secrets {
            assert!(!bytes.windows(s.len()).any(|w| w == s.as_slice()), "{p:?}");
        }
    }
}

fn hex_lower(b: &[u8]) -> String {
    b.iter().map(|x| format!("{x:02x}")).collect()
}

#[test]
fn redaction_and_bad_parameters() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["attack", "--redact", "--out", "a"]);
    let text = fs::read_to_string(t.path().join("a/attack_frequency.csv")).unwrap();
    assert!(!text.contains(",smith,"));
    assert!(text.contains("sha256:"));

    let c = config(t.path(), "bad.cfg", "colour = blue\n");
    let o = pprl(t.path(), &["link", "--config", &c, "--out", "x"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown parameter `colour`"));
    let c = config(t.path(), "bad2.cfg", "methods = psychic\n");
    assert!(!pprl(t.path(), &["link", "--config", &c, "--out", "x"]).status.success());
    assert!(!pprl(t.path(), &["derive", "--input", "missing.csv", "--out", "x"]).status.success());
}
