use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use pprl_core::hashcore::{sha256_hex, HmacKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scale {
    Desk,
    Paper,
}

impl Scale {
    pub fn pick<T>(self, desk: T, paper: T) -> T {
        match self {
            Scale::Desk => desk,
            Scale::Paper => paper,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Scale::Desk => "desk",
            Scale::Paper => "paper",
        }
    }
}

/// Flat `key = value` lines; blank lines and `#` comments ignored.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("config line {}: expected key=value", i + 1);
        };
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub struct RunConfig {
    pub command: &'static str,
    pub scale: Scale,
    pub seed: u64,
    pub out: PathBuf,
    pub redact: bool,
    pub key_file: Option<PathBuf>,
    params: BTreeMap<String, String>,
}

impl RunConfig {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        command: &'static str,
        allowed: &[&str],
        scale: Scale,
        seed: u64,
        out: PathBuf,
        redact: bool,
        key_file: Option<PathBuf>,
        params: BTreeMap<String, String>,
    ) -> Result<Self> {
        if let Some(k) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
            bail!("unknown parameter `{k}` for `{command}` (allowed: {})", allowed.join(", "));
        }
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Self {
            command,
            scale,
            seed,
            out,
            redact,
            key_file,
            params,
        })
    }

    /// Same parameters, different command and output directory.
    pub fn sub(&self, command: &'static str, out: PathBuf) -> Result<Self> {
        fs::create_dir_all(&out)?;
        Ok(Self {
            command,
            out,
            params: BTreeMap::new(),
            key_file: self.key_file.clone(),
            ..*self
        })
    }

    pub fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.params.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e| anyhow::anyhow!("parameter `{key}` = `{v}`: {e}")),
        }
    }

    pub fn get_list<T: FromStr>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.params.get(key) {
            None => Ok(default),
            Some(v) => v
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| s.trim().parse().map_err(|e| anyhow::anyhow!("parameter `{key}`: `{s}`: {e}")))
                .collect(),
        }
    }

    pub fn digest(&self) -> String {
        let mut text = format!("command={}\nscale={}\n", self.command, self.scale.as_str());
        for (k, v) in &self.params {
            text.push_str(&format!("{k}={v}\n"));
        }
        sha256_hex(text.as_bytes())[..16].to_string()
    }

    pub fn header(&self) -> String {
        format!(
            "# config_digest={} seed={} version={}",
            self.digest(),
            self.seed,
            env!("CARGO_PKG_VERSION")
        )
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Writes `name` under the output directory with the run header first.
    pub fn write_csv(&self, name: &str, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<PathBuf> {
        let path = self.path(name);
        let mut w = BufWriter::new(fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        writeln!(w, "{}", self.header())?;
        body(&mut w)?;
        w.flush()?;
        Ok(path)
    }

    pub fn write_bytes(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    /// First key of `--key-file`, else a key derived from the seed.
    pub fn linkage_key(&self) -> Result<HmacKey> {
        match &self.key_file {
            None => Ok(HmacKey::from_seed(self.seed, "linkage")),
            Some(p) => load_key(p),
        }
    }
}

fn load_key(path: &Path) -> Result<HmacKey> {
    let text = fs::read_to_string(path).with_context(|| format!("reading key file {}", path.display()))?;
    HmacKey::parse_key_file(&text)?
        .into_iter()
        .next()
        .with_context(|| format!("key file {} holds no key", path.display()))
}
