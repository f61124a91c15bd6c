//! Synthetic profile corpus.
//!
//! A base bigram table `G` is drawn once (`Dir(base_concentration)` per row);
//! each profile then draws its own table row-wise from `Dir(c·V·G_row)` with
//! `c = profile_concentration`. Small `c` gives peaked, profile-specific tables,
//! large `c` collapses every profile onto `G`.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use unlearn_core::rng::{stream, Stage};
use unlearn_core::{Error, Result, Split, TokenDataset, TokenSequence};

const FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub vocab_size: usize,
    pub n_profiles: usize,
    pub seqs_per_profile: usize,
    pub seq_len: usize,
    pub forget_fraction: f64,
    pub profile_concentration: f64,
    #[serde(default = "default_base")]
    pub base_concentration: f64,
    /// Fraction of the non-forget profiles held out.
    #[serde(default = "default_holdout")]
    pub holdout_fraction: f64,
}

fn default_base() -> f64 {
    1.0
}

fn default_holdout() -> f64 {
    0.1
}

impl CorpusSpec {
    pub fn n_forget(&self) -> usize {
        (self.forget_fraction * self.n_profiles as f64).round() as usize
    }

    pub fn n_holdout(&self) -> usize {
        let rest = self.n_profiles - self.n_forget();
        ((self.holdout_fraction * rest as f64).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Usage(format!("corpus: {m}")));
        if self.vocab_size < 2 || self.vocab_size > u32::MAX as usize {
            return bad("vocab_size must be >= 2");
        }
        if self.seqs_per_profile == 0 || self.seq_len == 0 {
            return bad("seqs_per_profile and seq_len must be >= 1");
        }
        if !(self.profile_concentration > 0.0 && self.base_concentration > 0.0) {
            return bad("concentrations must be > 0");
        }
        if !(self.forget_fraction > 0.0 && self.forget_fraction < 1.0) {
            return bad("forget_fraction must lie in (0, 1)");
        }
        if self.n_forget() == 0 {
            return bad("forget_fraction * n_profiles rounds to zero profiles");
        }
        if !(self.holdout_fraction >= 0.0 && self.holdout_fraction < 1.0) {
            return bad("holdout_fraction must lie in [0, 1)");
        }
        if self.n_forget() + self.n_holdout() >= self.n_profiles {
            return bad("no profiles left for the retain split");
        }
        Ok(())
    }
}

/// Row-stochastic `(V+1) x V` table; row `V` is the first-token distribution.
pub type Table = Vec<Vec<f64>>;

fn dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let mut x: Vec<f64> = alpha
        .iter()
        .map(|&a| Gamma::new(a.max(FLOOR), 1.0).expect("positive shape").sample(rng).max(FLOOR))
        .collect();
    let s: f64 = x.iter().sum();
    x.iter_mut().for_each(|v| *v /= s);
    x
}

/// Base table and one table per profile.
pub fn sample_tables<R: Rng + ?Sized>(spec: &CorpusSpec, rng: &mut R) -> (Table, Vec<Table>) {
    let v = spec.vocab_size;
    let base: Table = (0..=v).map(|_| dirichlet(&vec![spec.base_concentration; v], rng)).collect();
    let profiles = (0..spec.n_profiles)
        .map(|_| {
            base.iter()
                .map(|row| {
                    let alpha: Vec<f64> = row.iter().map(|g| spec.profile_concentration * v as f64 * g).collect();
                    dirichlet(&alpha, rng)
                })
                .collect()
        })
        .collect();
    (base, profiles)
}

fn draw<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> u32 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return i as u32;
        }
    }
    (row.len() - 1) as u32
}

/// Total-variation distance between two tables, averaged over rows.
pub fn table_tv(a: &Table, b: &Table) -> f64 {
    let rows = a.len() as f64;
    a.iter()
        .zip(b)
        .map(|(x, y)| 0.5 * x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum::<f64>())
        .sum::<f64>()
        / rows
}

/// A generated corpus with profile bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub dataset: TokenDataset,
    /// Profile id of every sequence.
    pub profile_of: Vec<usize>,
    pub forget_profiles: Vec<usize>,
    pub holdout_profiles: Vec<usize>,
}

/// Deterministic in `seed` (Data stream).
pub fn gen_corpus(spec: &CorpusSpec, seed: u64) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = stream(seed, Stage::Data);
    let (_, tables) = sample_tables(spec, &mut rng);
    let mut ids: Vec<usize> = (0..spec.n_profiles).collect();
    ids.shuffle(&mut rng);
    let mut forget = ids[..spec.n_forget()].to_vec();
    let mut holdout = ids[spec.n_forget()..spec.n_forget() + spec.n_holdout()].to_vec();
    forget.sort_unstable();
    holdout.sort_unstable();

    let v = spec.vocab_size;
    let mut seqs = Vec::with_capacity(spec.n_profiles * spec.seqs_per_profile);
    let mut splits = Vec::with_capacity(seqs.capacity());
    let mut profile_of = Vec::with_capacity(seqs.capacity());
    for (p, table) in tables.iter().enumerate() {
        let split = if forget.contains(&p) {
            Split::Unlearn
        } else if holdout.contains(&p) {
            Split::Holdout
        } else {
            Split::Retain
        };
        for _ in 0..spec.seqs_per_profile {
            let mut toks = Vec::with_capacity(spec.seq_len);
            let mut ctx = v;
            for _ in 0..spec.seq_len {
                let t = draw(&table[ctx], &mut rng);
                toks.push(t);
                ctx = t as usize;
            }
            seqs.push(TokenSequence::new(toks)?);
            splits.push(split);
            profile_of.push(p);
        }
    }
    Ok(Corpus { dataset: TokenDataset::new(v, seqs, splits)?, profile_of, forget_profiles: forget, holdout_profiles: holdout })
}

pub const DATASET_MAGIC: &[u8; 4] = b"ULDS";
pub const DATASET_VERSION: u32 = 1;

/// `magic | version u32 | vocab u32 | n u32 | per sequence: split u8, len u32, tokens u32…`
/// (all little-endian).
pub fn encode_dataset(ds: &TokenDataset) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(DATASET_MAGIC);
    for x in [DATASET_VERSION, ds.vocab_size() as u32, ds.len() as u32] {
        out.extend_from_slice(&x.to_le_bytes());
    }
    for (s, split) in ds.sequences().iter().zip(ds.splits()) {
        out.push(split.as_u8());
        out.extend_from_slice(&(s.len() as u32).to_le_bytes());
        for t in s.tokens() {
            out.extend_from_slice(&t.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn fail(&self, msg: &str) -> Error {
        Error::Format { path: self.path.to_path_buf(), msg: msg.to_string() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self.pos.checked_add(n).and_then(|end| self.bytes.get(self.pos..end)).ok_or_else(|| self.fail("truncated dataset"))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_dataset(bytes: &[u8], path: &Path) -> Result<TokenDataset> {
    let mut c = Cursor { bytes, pos: 0, path };
    if c.take(4)? != DATASET_MAGIC {
        return Err(c.fail("bad magic"));
    }
    if c.u32()? != DATASET_VERSION {
        return Err(c.fail("unsupported dataset version"));
    }
    let vocab = c.u32()? as usize;
    let n = c.u32()? as usize;
    let mut seqs = Vec::with_capacity(n.min(1 << 20));
    let mut splits = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let split = Split::from_u8(c.take(1)?[0]).ok_or_else(|| c.fail("unknown split tag"))?;
        let len = c.u32()? as usize;
        let toks = c
            .take(len.checked_mul(4).ok_or_else(|| c.fail("length overflow"))?)?
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        seqs.push(TokenSequence::new(toks).map_err(|e| c.fail(&e.to_string()))?);
        splits.push(split);
    }
    if c.pos != bytes.len() {
        return Err(c.fail("trailing bytes"));
    }
    TokenDataset::new(vocab, seqs, splits).map_err(|e| c.fail(&e.to_string()))
}

pub fn write_dataset(ds: &TokenDataset, path: &Path) -> Result<()> {
    fs::write(path, encode_dataset(ds)).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

pub fn read_dataset(path: &Path) -> Result<TokenDataset> {
    let bytes = fs::read(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    decode_dataset(&bytes, path)
}
