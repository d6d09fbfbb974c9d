//! Public-key envelope encryption of linkage fields, threshold sharing of
//! the private key, and the encrypt → decrypt → link → shuffle pipeline.

use std::collections::HashSet;
use std::fmt;
use std::sync::OnceLock;

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use hkdf::Hkdf;
use num_bigint::BigUint;
use num_traits::{One, Zero};
use rand::seq::SliceRandom;
use rand::{CryptoRng, RngCore};
use sha2::Sha256;
use thiserror::Error;
use x25519_dalek::{PublicKey, StaticSecret};

use crate::evalbench::{evaluate, EvalError, EvalResult};
use crate::hashcore::HmacKey;
use crate::linker::{link_all, Linker, Method};
use crate::linkkeys::{build_index, default_specs};
use crate::model::{Dataset, PersonRecord, Sex};
use crate::rng;

pub const LINKAGE_FILE_MAGIC: &[u8; 8] = b"PPRLENC1";
const KEK_INFO: &[u8] = b"pprl-envelope-kek";
const NONCE_LEN: usize = 12;
const WRAPPED_LEN: usize = 32 + 16;
const HEADER_LEN: usize = 32 + NONCE_LEN + WRAPPED_LEN + NONCE_LEN;
/// Bytes of secret per field element.
const LIMB: usize = 31;

#[derive(Debug, Error)]
pub enum EnvelopeError {
    #[error("ciphertext is malformed: {0}")]
    Malformed(String),
    #[error("authentication failed (wrong key or tampered data)")]
    Authentication,
    #[error("threshold must satisfy 1 <= t <= n <= 255, got t={t}, n={n}")]
    BadThreshold { t: usize, n: usize },
    #[error("need {need} shares, got {got}")]
    NotEnoughShares { need: usize, got: usize },
    #[error("inconsistent shares: {0}")]
    InconsistentShares(String),
    #[error("decrypted record is invalid: {0}")]
    Record(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

pub struct Keypair {
    public: PublicKey,
    private: StaticSecret,
}

impl fmt::Debug for Keypair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Keypair {{ public: {}, private: <redacted> }}", hex::encode(self.public.as_bytes()))
    }
}

impl Keypair {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut bytes = [0u8; 32];
        rng.fill_bytes(&mut bytes);
        Self::from_private_bytes(bytes)
    }

    pub fn from_private_bytes(bytes: [u8; 32]) -> Self {
        let private = StaticSecret::from(bytes);
        Self {
            public: PublicKey::from(&private),
            private,
        }
    }

    pub fn public_bytes(&self) -> [u8; 32] {
        *self.public.as_bytes()
    }

    pub fn private_bytes(&self) -> [u8; 32] {
        self.private.to_bytes()
    }
}

fn kek(shared: &[u8; 32], eph: &[u8; 32], recipient: &[u8; 32]) -> Key {
    let mut salt = [0u8; 64];
    salt[..32].copy_from_slice(eph);
    salt[32..].copy_from_slice(recipient);
    let mut out = [0u8; 32];
    Hkdf::<Sha256>::new(Some(&salt), shared)
        .expand(KEK_INFO, &mut out)
        .expect("32 bytes is a valid HKDF length");
    out.into()
}

fn encode_fields(fields: &[Vec<u8>]) -> Vec<u8> {
    let mut out = (fields.len() as u32).to_be_bytes().to_vec();
    for f in fields {
        out.extend_from_slice(&(f.len() as u32).to_be_bytes());
        out.extend_from_slice(f);
    }
    out
}

fn decode_fields(mut b: &[u8]) -> Result<Vec<Vec<u8>>, EnvelopeError> {
    let mut take = |n: usize| -> Result<&[u8], EnvelopeError> {
        if b.len() < n {
            return Err(EnvelopeError::Malformed("field list truncated".into()));
        }
        let (head, tail) = b.split_at(n);
        b = tail;
        Ok(head)
    };
    let count = u32::from_be_bytes(take(4)?.try_into().expect("4 bytes"));
    let mut out = Vec::new();
    for _ in 0..count {
        let len = u32::from_be_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        out.push(take(len)?.to_vec());
    }
    if !b.is_empty() {
        return Err(EnvelopeError::Malformed("trailing bytes".into()));
    }
    Ok(out)
}

/// Blob layout: ephemeral public key (32) ‖ wrap nonce (12) ‖ wrapped data
/// key (48) ‖ data nonce (12) ‖ ciphertext.
pub fn envelope_encrypt<R: RngCore + CryptoRng>(recipient: &[u8; 32], fields: &[Vec<u8>], rng: &mut R) -> Vec<u8> {
    let eph = Keypair::generate(rng);
    let eph_pub = eph.public_bytes();
    let shared = eph.private.diffie_hellman(&PublicKey::from(*recipient));
    let wrap = ChaCha20Poly1305::new(&kek(shared.as_bytes(), &eph_pub, recipient));
    let mut dek = [0u8; 32];
    let mut wrap_nonce = [0u8; NONCE_LEN];
    let mut data_nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut dek);
    rng.fill_bytes(&mut wrap_nonce);
    rng.fill_bytes(&mut data_nonce);
    let wrapped = wrap
        .encrypt(Nonce::from_slice(&wrap_nonce), dek.as_slice())
        .expect("encryption of 32 bytes cannot fail");
    let ct = ChaCha20Poly1305::new(Key::from_slice(&dek))
        .encrypt(
            Nonce::from_slice(&data_nonce),
            Payload {
                msg: &encode_fields(fields),
                aad: &eph_pub,
            },
        )
        .expect("in-memory encryption cannot fail");
    let mut out = Vec::with_capacity(HEADER_LEN + ct.len());
    out.extend_from_slice(&eph_pub);
    out.extend_from_slice(&wrap_nonce);
    out.extend_from_slice(&wrapped);
    out.extend_from_slice(&data_nonce);
    out.extend_from_slice(&ct);
    out
}

pub fn envelope_decrypt(keypair: &Keypair, blob: &[u8]) -> Result<Vec<Vec<u8>>, EnvelopeError> {
    if blob.len() < HEADER_LEN + 16 {
        return Err(EnvelopeError::Malformed(format!("blob of {} bytes is too short", blob.len())));
    }
    let eph_pub: [u8; 32] = blob[..32].try_into().expect("32 bytes");
    let wrap_nonce = &blob[32..44];
    let wrapped = &blob[44..44 + WRAPPED_LEN];
    let data_nonce = &blob[44 + WRAPPED_LEN..HEADER_LEN];
    let shared = keypair.private.diffie_hellman(&PublicKey::from(eph_pub));
    let dek = ChaCha20Poly1305::new(&kek(shared.as_bytes(), &eph_pub, &keypair.public_bytes()))
        .decrypt(Nonce::from_slice(wrap_nonce), wrapped)
        .map_err(|_| EnvelopeError::Authentication)?;
    let pt = ChaCha20Poly1305::new(Key::from_slice(&dek))
        .decrypt(
            Nonce::from_slice(data_nonce),
            Payload {
                msg: &blob[HEADER_LEN..],
                aad: &eph_pub,
            },
        )
        .map_err(|_| EnvelopeError::Authentication)?;
    decode_fields(&pt)
}

/// 2^256 − 189, the largest 256-bit prime.
pub fn share_prime() -> &'static BigUint {
    static P: OnceLock<BigUint> = OnceLock::new();
    P.get_or_init(|| (BigUint::one() << 256u32) - BigUint::from(189u32))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Share {
    pub index: u8,
    pub threshold: u8,
    pub secret_len: u16,
    /// One field element per 31-byte limb of the secret.
    pub values: Vec<BigUint>,
}

impl Share {
    /// `t ‖ secret_len (BE) ‖ 32-byte BE limb values`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![self.threshold];
        out.extend_from_slice(&self.secret_len.to_be_bytes());
        for v in &self.values {
            let b = v.to_bytes_be();
            out.extend(std::iter::repeat_n(0, 32 - b.len()));
            out.extend_from_slice(&b);
        }
        out
    }

    pub fn from_bytes(index: u8, b: &[u8]) -> Result<Self, EnvelopeError> {
        if b.len() < 3 || !(b.len() - 3).is_multiple_of(32) {
            return Err(EnvelopeError::Malformed("share length".into()));
        }
        let values: Vec<BigUint> = b[3..].chunks(32).map(BigUint::from_bytes_be).collect();
        if values.iter().any(|v| v >= share_prime()) {
            return Err(EnvelopeError::Malformed("share value out of field".into()));
        }
        Ok(Self {
            index,
            threshold: b[0],
            secret_len: u16::from_be_bytes([b[1], b[2]]),
            values,
        })
    }

    /// `index:hex` line of a shares file.
    pub fn to_line(&self) -> String {
        format!("{}:{}", self.index, hex::encode(self.to_bytes()))
    }

    pub fn parse_line(line: &str) -> Result<Self, EnvelopeError> {
        let (i, h) = line
            .trim()
            .split_once(':')
            .ok_or_else(|| EnvelopeError::Malformed("expected index:hex".into()))?;
        let index: u8 = i.parse().map_err(|_| EnvelopeError::Malformed(format!("bad index `{i}`")))?;
        let bytes = hex::decode(h).map_err(|e| EnvelopeError::Malformed(e.to_string()))?;
        Self::from_bytes(index, &bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecretShares {
    pub shares: Vec<Share>,
    pub threshold: usize,
    pub total: usize,
}

fn random_field_element<R: RngCore>(rng: &mut R) -> BigUint {
    loop {
        let mut b = [0u8; 32];
        rng.fill_bytes(&mut b);
        let v = BigUint::from_bytes_be(&b);
        if &v < share_prime() {
            return v;
        }
    }
}

/// Shamir sharing of `secret`, each 31-byte limb under its own polynomial
/// of degree t − 1. Shares are evaluated at x = 1..=n.
pub fn split_key<R: RngCore + CryptoRng>(
    secret: &[u8],
    t: usize,
    n: usize,
    rng: &mut R,
) -> Result<SecretShares, EnvelopeError> {
    if t == 0 || t > n || n > 255 {
        return Err(EnvelopeError::BadThreshold { t, n });
    }
    let p = share_prime();
    let polys: Vec<Vec<BigUint>> = secret
        .chunks(LIMB)
        .map(|limb| {
            let mut coeffs = vec![BigUint::from_bytes_be(limb)];
            coeffs.extend((1..t).map(|_| random_field_element(rng)));
            coeffs
        })
        .collect();
    let shares = (1..=n as u8)
        .map(|x| {
            let xb = BigUint::from(x);
            let values = polys
                .iter()
                .map(|c| c.iter().rev().fold(BigUint::zero(), |acc, a| (acc * &xb + a) % p))
                .collect();
            Share {
                index: x,
                threshold: t as u8,
                secret_len: secret.len() as u16,
                values,
            }
        })
        .collect();
    Ok(SecretShares {
        shares,
        threshold: t,
        total: n,
    })
}

/// Lagrange interpolation at 0 over the first t distinct shares.
pub fn recombine(shares: &[Share]) -> Result<Vec<u8>, EnvelopeError> {
    let first = shares.first().ok_or(EnvelopeError::NotEnoughShares { need: 1, got: 0 })?;
    let t = first.threshold as usize;
    let mut seen = HashSet::new();
    let distinct: Vec<&Share> = shares.iter().filter(|s| seen.insert(s.index)).collect();
    if distinct
        .iter()
        .any(|s| s.threshold != first.threshold || s.secret_len != first.secret_len || s.values.len() != first.values.len())
    {
        return Err(EnvelopeError::InconsistentShares("threshold, length or limb count differ".into()));
    }
    if distinct.iter().any(|s| s.index == 0) {
        return Err(EnvelopeError::InconsistentShares("share index 0".into()));
    }
    if distinct.len() < t {
        return Err(EnvelopeError::NotEnoughShares {
            need: t,
            got: distinct.len(),
        });
    }
    let used = &distinct[..t];
    let p = share_prime();
    let p_minus_2 = p - BigUint::from(2u32);
    // λ_j = Π_{m≠j} x_m / (x_m − x_j)
    let lambdas: Vec<BigUint> = used
        .iter()
        .map(|sj| {
            let (mut num, mut den) = (BigUint::one(), BigUint::one());
            for sm in used.iter().filter(|s| s.index != sj.index) {
                let xm = BigUint::from(sm.index);
                let xj = BigUint::from(sj.index);
                num = num * &xm % p;
                den = den * ((p + &xm - &xj) % p) % p;
            }
            num * den.modpow(&p_minus_2, p) % p
        })
        .collect();
    let len = first.secret_len as usize;
    let mut out = Vec::with_capacity(len);
    for (li, _) in first.values.iter().enumerate() {
        let v = used
            .iter()
            .zip(&lambdas)
            .fold(BigUint::zero(), |acc, (s, l)| (acc + &s.values[li] * l) % p);
        let limb_len = LIMB.min(len - li * LIMB);
        let b = v.to_bytes_be();
        if b.len() > limb_len {
            return Err(EnvelopeError::InconsistentShares("reconstructed limb overflows".into()));
        }
        out.extend(std::iter::repeat_n(0, limb_len - b.len()));
        out.extend_from_slice(&b);
    }
    Ok(out)
}

/// Fields of a record that go into the encrypted linkage file.
fn record_fields(r: &PersonRecord) -> Vec<Vec<u8>> {
    vec![
        r.first_name.clone().into_bytes(),
        r.middle_initial.map(|c| c.to_string()).unwrap_or_default().into_bytes(),
        r.last_name.clone().into_bytes(),
        r.yob.to_string().into_bytes(),
        r.sex.as_str().as_bytes().to_vec(),
        r.meshblock.clone().into_bytes(),
        r.sa3.clone().into_bytes(),
    ]
}

fn record_from_fields(row_id: u64, f: Vec<Vec<u8>>) -> Result<PersonRecord, EnvelopeError> {
    let bad = |m: &str| EnvelopeError::Record(format!("row {row_id}: {m}"));
    if f.len() != 7 {
        return Err(bad("expected 7 fields"));
    }
    let s: Vec<String> = f
        .into_iter()
        .map(|b| String::from_utf8(b).map_err(|_| bad("field is not utf-8")))
        .collect::<Result<_, _>>()?;
    Ok(PersonRecord {
        row_id,
        first_name: s[0].clone(),
        middle_initial: s[1].chars().next(),
        last_name: s[2].clone(),
        yob: s[3].parse().map_err(|_| bad("yob"))?,
        sex: s[4].parse::<Sex>().map_err(|_| bad("sex"))?,
        meshblock: s[5].clone(),
        sa3: s[6].clone(),
    })
}

/// Encrypted linkage file: magic ‖ record count (u64 BE) ‖ per record
/// row id (u64 BE) ‖ blob length (u32 BE) ‖ blob.
pub fn write_linkage_file<R: RngCore + CryptoRng>(dataset: &Dataset, recipient: &[u8; 32], rng: &mut R) -> Vec<u8> {
    let mut out = LINKAGE_FILE_MAGIC.to_vec();
    out.extend_from_slice(&(dataset.len() as u64).to_be_bytes());
    for r in &dataset.records {
        let blob = envelope_encrypt(recipient, &record_fields(r), rng);
        out.extend_from_slice(&r.row_id.to_be_bytes());
        out.extend_from_slice(&(blob.len() as u32).to_be_bytes());
        out.extend_from_slice(&blob);
    }
    out
}

pub fn read_linkage_file(bytes: &[u8], keypair: &Keypair, provenance: &str) -> Result<Dataset, EnvelopeError> {
    let truncated = || EnvelopeError::Malformed("linkage file truncated".into());
    if bytes.len() < 16 || &bytes[..8] != LINKAGE_FILE_MAGIC {
        return Err(EnvelopeError::Malformed("bad magic".into()));
    }
    let n = u64::from_be_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let mut pos = 16;
    let mut records = Vec::new();
    for _ in 0..n {
        let head = bytes.get(pos..pos + 12).ok_or_else(truncated)?;
        let row_id = u64::from_be_bytes(head[..8].try_into().expect("8 bytes"));
        let len = u32::from_be_bytes(head[8..].try_into().expect("4 bytes")) as usize;
        pos += 12;
        let blob = bytes.get(pos..pos + len).ok_or_else(truncated)?;
        pos += len;
        records.push(record_from_fields(row_id, envelope_decrypt(keypair, blob)?)?);
    }
    if pos != bytes.len() {
        return Err(EnvelopeError::Malformed("trailing bytes".into()));
    }
    Ok(Dataset::new(records, provenance))
}

#[derive(Debug)]
pub struct PipelineOutput {
    pub left_file: Vec<u8>,
    pub right_file: Vec<u8>,
    /// (right row id, matched left row id) in shuffled order.
    pub links: Vec<(u64, u64)>,
    /// Year of birth per left row, forwarded to the assembler after the
    /// linker decrypts it.
    pub forwarded_yob: Vec<(u64, i32)>,
    pub eval: EvalResult,
}

/// Encrypts both sides for the linker, which decrypts, links with HMAC
/// linkage keys and emits matches in shuffled order.
pub fn pipeline_link(
    left: &Dataset,
    right: &Dataset,
    linker_keys: &Keypair,
    method: Method,
    seed: u64,
) -> Result<PipelineOutput, EnvelopeError> {
    let mut r = rng::stream(seed, "envelope:pipeline");
    let recipient = linker_keys.public_bytes();
    let left_file = write_linkage_file(left, &recipient, &mut r);
    let right_file = write_linkage_file(right, &recipient, &mut r);

    let l = read_linkage_file(&left_file, linker_keys, "left")?;
    let q = read_linkage_file(&right_file, linker_keys, "right")?;
    let key = HmacKey::from_seed(seed, "pipeline");
    let specs = default_specs();
    let index = build_index(&l, &specs, &key);
    let run = link_all(&Linker::new(&index, &specs, &key), &q, method, seed);
    let ids: HashSet<u64> = l.row_ids().into_iter().collect();
    let eval = evaluate("pipeline", method, &run.decisions, &ids)?;

    let mut links: Vec<(u64, u64)> = run
        .decisions
        .iter()
        .filter_map(|d| d.matched_row_id.map(|m| (d.query_row_id, m)))
        .collect();
    links.shuffle(&mut r);
    let mut forwarded_yob: Vec<(u64, i32)> = l.records.iter().map(|x| (x.row_id, x.yob)).collect();
    forwarded_yob.shuffle(&mut r);
    Ok(PipelineOutput {
        left_file,
        right_file,
        links,
        forwarded_yob,
        eval,
    })
}

/// Self-link of a dataset against a shuffled copy of itself.
pub fn pipeline_demo(dataset: &Dataset, linker_keys: &Keypair, seed: u64) -> Result<PipelineOutput, EnvelopeError> {
    let copy = crate::synthgen::shuffle(dataset, seed);
    pipeline_link(dataset, &copy, linker_keys, Method::FirstUnique, seed)
}
