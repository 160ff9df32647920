//! Binary checkpoint container.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "MIRR" | version | config length | config JSON
//! | token count | (length | UTF-8 token)*
//! | param count | (name length | UTF-8 name | rank | extents* | f32 values*)*
//! ```
//!
//! The vocabulary section lists only non-reserved tokens, in id order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use mirror_core::corpus::Vocabulary;
use mirror_core::diff::{Array, ParamStore};
use mirror_core::model::{Dataset, MirrorModel, ModelConfig, Profile};
use serde::{Deserialize, Serialize};

pub const MAGIC: &[u8; 4] = b"MIRR";
pub const VERSION: u32 = 1;

/// Configuration snapshot stored with the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub model: ModelConfig,
    pub profile: Profile,
    pub dataset: Dataset,
    /// Epoch the parameters come from, if produced by training.
    pub epoch: Option<usize>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).context("value exceeds u32")?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) -> Result<()> {
    put_u32(out, b.len())?;
    out.extend_from_slice(b);
    Ok(())
}

pub fn encode(model: &MirrorModel<f32>, snapshot: &Snapshot) -> Result<Vec<u8>> {
    ensure!(snapshot.model == model.config, "snapshot config differs from model config");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_bytes(&mut out, &serde_json::to_vec(snapshot)?)?;
    let tokens = model.vocab.corpus_tokens();
    put_u32(&mut out, tokens.len())?;
    for t in tokens {
        put_bytes(&mut out, t.as_bytes())?;
    }
    put_u32(&mut out, model.params.len())?;
    for (name, a) in model.params.iter() {
        put_bytes(&mut out, name.as_bytes())?;
        put_u32(&mut out, a.shape().len())?;
        for &e in a.shape() {
            put_u32(&mut out, e)?;
        }
        for v in a.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            bail!("truncated checkpoint at byte {}", self.pos);
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        Ok(String::from_utf8(self.take(n)?.to_vec())?)
    }
}

pub fn decode(bytes: &[u8]) -> Result<(MirrorModel<f32>, Snapshot)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    ensure!(r.take(4)? == MAGIC, "not a checkpoint (bad magic)");
    let version = r.u32()?;
    ensure!(version == VERSION as usize, "unsupported checkpoint version {}", version);
    let n = r.u32()?;
    let snapshot: Snapshot = serde_json::from_slice(r.take(n)?)?;
    let n_tokens = r.u32()?;
    let mut tokens = Vec::with_capacity(n_tokens);
    for _ in 0..n_tokens {
        tokens.push(r.string()?);
    }
    let vocab = Vocabulary::from_tokens(tokens)?;
    let n_params = r.u32()?;
    let mut params = ParamStore::new();
    for _ in 0..n_params {
        let name = r.string()?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        let raw = r.take(count.checked_mul(4).context("parameter too large")?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        params.insert(name, Array::new(shape, data)?);
    }
    ensure!(r.pos == bytes.len(), "{} trailing bytes in checkpoint", bytes.len() - r.pos);
    let model = MirrorModel::from_parts(snapshot.model, vocab, params)?;
    Ok((model, snapshot))
}

pub fn save(path: &Path, model: &MirrorModel<f32>, snapshot: &Snapshot) -> Result<()> {
    let bytes = encode(model, snapshot)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(MirrorModel<f32>, Snapshot)> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .with_context(|| format!("opening {}", path.display()))?
        .read_to_end(&mut bytes)?;
    decode(&bytes).with_context(|| format!("loading {}", path.display()))
}

/// Identifier recorded in model-output files: the checkpoint's file stem.
pub fn checkpoint_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".into())
}
