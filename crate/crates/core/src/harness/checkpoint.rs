//! Binary checkpoint format.
//!
//! All integers are little-endian. Layout:
//!
//! ```text
//! magic       8 bytes   "RADACKPT"
//! version     u32       FORMAT_VERSION
//! hash        32 bytes  SHA-256 of the config (see RunConfig::hash)
//! config      u32 len + UTF-8 bytes, the full config text
//! epoch       u64       completed epochs
//! params      u32 count, then blobs
//! velocity    u32 count, then blobs (same names as params)
//! controller  u8 active, f64 best_entropy, u64 plateau_counter,
//!             u32 count + f64 entropy history
//! rngs        u32 count, then per rng: 32-byte seed, u64 stream, u128 word position
//! relabeled   u32 count + u64 dataset indices (persistent relabeling)
//! ```
//!
//! A blob is `u32 name len + name, u32 ndim, u64 dims..., f64 values`.
//! Trailing bytes, truncation and unknown versions are errors.

use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rada::RadaState;

pub const MAGIC: &[u8; 8] = b"RADACKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedBlob {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    pub config_text: String,
    pub epoch: u64,
    pub params: Vec<NamedBlob>,
    pub velocities: Vec<NamedBlob>,
    pub rada: RadaState,
    pub rngs: Vec<RngState>,
    pub persistent_relabels: Vec<u64>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u128(&mut self, v: u128) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("section too large for checkpoint"));
    }
    fn str(&mut self, s: &str) {
        self.len(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn blobs(&mut self, blobs: &[NamedBlob]) {
        self.len(blobs.len());
        for b in blobs {
            self.str(&b.name);
            self.len(b.tensor.shape().len());
            for &d in b.tensor.shape() {
                self.u64(d as u64);
            }
            for &v in b.tensor.data() {
                self.f64(v);
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated: need {n} bytes at offset {}, file has {}", self.pos, self.buf.len()))
        })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    fn len(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }
    fn str(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8 string".into()))
    }
    fn blobs(&mut self) -> Result<Vec<NamedBlob>> {
        let count = self.len()?;
        let mut out = Vec::new();
        for _ in 0..count {
            let name = self.str()?;
            let ndim = self.len()?;
            let mut shape = Vec::with_capacity(ndim.min(8));
            for _ in 0..ndim {
                shape.push(self.u64()? as usize);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= self.buf.len() - self.pos))
                .ok_or_else(|| Error::Checkpoint(format!("blob `{name}`: shape {shape:?} exceeds file size")))?;
            let mut values = Vec::with_capacity(numel);
            for _ in 0..numel {
                values.push(self.f64()?);
            }
            let tensor =
                Tensor::new(shape, values).map_err(|e| Error::Checkpoint(format!("blob `{name}`: {e}")))?;
            out.push(NamedBlob { name, tensor });
        }
        Ok(out)
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(FORMAT_VERSION);
        w.0.extend_from_slice(&self.config_hash);
        w.str(&self.config_text);
        w.u64(self.epoch);
        w.blobs(&self.params);
        w.blobs(&self.velocities);
        w.u8(self.rada.active as u8);
        w.f64(self.rada.best_entropy);
        w.u64(self.rada.plateau_counter as u64);
        w.len(self.rada.entropy_history.len());
        for &h in &self.rada.entropy_history {
            w.f64(h);
        }
        w.len(self.rngs.len());
        for r in &self.rngs {
            w.0.extend_from_slice(&r.seed);
            w.u64(r.stream);
            w.u128(r.word_pos);
        }
        w.len(self.persistent_relabels.len());
        for &i in &self.persistent_relabels {
            w.u64(i);
        }
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8).map_err(|_| Error::Checkpoint("not a checkpoint file".into()))? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}, expected {FORMAT_VERSION}")));
        }
        let config_hash = r.array()?;
        let config_text = r.str()?;
        let epoch = r.u64()?;
        let params = r.blobs()?;
        let velocities = r.blobs()?;
        let active = match r.u8()? {
            0 => false,
            1 => true,
            b => return Err(Error::Checkpoint(format!("bad controller flag {b}"))),
        };
        let best_entropy = r.f64()?;
        let plateau_counter = r.u64()? as usize;
        let n = r.len()?;
        let mut entropy_history = Vec::new();
        for _ in 0..n {
            entropy_history.push(r.f64()?);
        }
        let n = r.len()?;
        let mut rngs = Vec::new();
        for _ in 0..n {
            rngs.push(RngState { seed: r.array()?, stream: r.u64()?, word_pos: r.u128()? });
        }
        let n = r.len()?;
        let mut persistent_relabels = Vec::new();
        for _ in 0..n {
            persistent_relabels.push(r.u64()?);
        }
        if r.pos != buf.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Checkpoint {
            config_hash,
            config_text,
            epoch,
            params,
            velocities,
            rada: RadaState { active, best_entropy, plateau_counter, entropy_history },
            rngs,
            persistent_relabels,
        })
    }

    /// Writes to a sibling temp file and renames, so a crash never leaves a
    /// half-written checkpoint behind.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}
