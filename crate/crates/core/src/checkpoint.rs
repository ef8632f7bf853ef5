//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! "MABN"  u32 version
//! u64 len + JSON   model configuration
//! u64 len + JSON   vocabulary (array of words, index order)
//! u64 len + JSON   metadata (step, optimizer step count, RNG state, train config)
//! u64 count, then per tensor:
//!     u32 name len + name, u32 rank, rank × u64 dims, values as f64
//! ```
//!
//! Tensor names are `param/<name>`, `adam_m/<name>` and `adam_v/<name>`.

use std::io::Write;
use std::path::Path;

use mabn_autograd::{AdamState, ParamSet, Tensor};
use mabn_dataset::Vocabulary;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{io_err, CoreError, Result};
use crate::model::MultiAbn;

pub const MAGIC: &[u8; 4] = b"MABN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: MultiAbn,
    pub adam: AdamState,
    pub vocab: Vocabulary,
    pub step: u64,
    pub rng: ChaCha8Rng,
    /// Echo of the training configuration, if any.
    pub train_config: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    step: u64,
    adam_steps: u64,
    rng: ChaCha8Rng,
    train_config: serde_json::Value,
}

fn bad(msg: impl Into<String>) -> CoreError {
    CoreError::Checkpoint(msg.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(bad(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n).ok().filter(|&n| n <= self.bytes.len()).ok_or_else(|| bad(format!("implausible length {n}")))
    }

    fn json<T: for<'de> Deserialize<'de>>(&mut self, what: &str) -> Result<T> {
        let n = self.len()?;
        let raw = self.take(n)?;
        serde_json::from_slice(raw).map_err(|e| bad(format!("{what} block: {e}")))
    }
}

fn put_json<T: Serialize>(out: &mut Vec<u8>, value: &T) {
    let raw = serde_json::to_vec(value).expect("checkpoint JSON serializes");
    out.extend_from_slice(&(raw.len() as u64).to_le_bytes());
    out.extend_from_slice(&raw);
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Tensor record as stored, before it is matched to the model.
pub struct TensorRecord {
    pub name: String,
    pub tensor: Tensor,
}

/// Header blocks and raw tensor records of a checkpoint file.
pub struct RawCheckpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub vocab: Vec<String>,
    pub metadata: serde_json::Value,
    pub tensors: Vec<TensorRecord>,
}

impl RawCheckpoint {
    pub fn parse(bytes: &[u8]) -> Result<RawCheckpoint> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).ok() != Some(&MAGIC[..]) {
            return Err(bad("not a checkpoint (bad magic bytes)"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(bad(format!("format version {version} is not supported (expected {FORMAT_VERSION})")));
        }
        let config = r.json("config")?;
        let vocab = r.json("vocabulary")?;
        let metadata = r.json("metadata")?;
        let count = r.len()?;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| bad("tensor name is not UTF-8"))?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.len()?);
            }
            let len: usize = shape.iter().product();
            let raw = r.take(len.checked_mul(8).ok_or_else(|| bad("tensor too large"))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            let tensor = Tensor::new(shape, data).map_err(|e| bad(format!("{name}: {e}")))?;
            tensors.push(TensorRecord { name, tensor });
        }
        if r.pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(RawCheckpoint { version, config, vocab, metadata, tensors })
    }
}

impl Checkpoint {
    pub fn new(model: MultiAbn, vocab: Vocabulary, rng: ChaCha8Rng) -> Self {
        let adam = AdamState::new(model.params());
        Checkpoint { model, adam, vocab, step: 0, rng, train_config: serde_json::Value::Null }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        put_json(&mut out, self.model.config());
        put_json(&mut out, &self.vocab.words());
        put_json(
            &mut out,
            &Metadata {
                step: self.step,
                adam_steps: self.adam.step_count(),
                rng: self.rng.clone(),
                train_config: self.train_config.clone(),
            },
        );
        let params = self.model.params();
        out.extend_from_slice(&(3 * params.len() as u64).to_le_bytes());
        for (prefix, tensors) in [
            ("param", params.iter().map(|(_, t)| t).collect::<Vec<_>>()),
            ("adam_m", self.adam.first_moments().iter().collect()),
            ("adam_v", self.adam.second_moments().iter().collect()),
        ] {
            for (id, t) in params.ids().zip(tensors) {
                put_tensor(&mut out, &format!("{prefix}/{}", params.name(id)), t);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let raw = RawCheckpoint::parse(bytes)?;
        let meta: Metadata =
            serde_json::from_value(raw.metadata).map_err(|e| bad(format!("metadata block: {e}")))?;
        let vocab = Vocabulary::from_words(raw.vocab).map_err(|e| bad(e.to_string()))?;
        if vocab.len() != raw.config.vocab_size {
            return Err(bad(format!(
                "vocabulary has {} words but the model expects {}",
                vocab.len(),
                raw.config.vocab_size
            )));
        }
        let mut groups = [ParamSet::new(), ParamSet::new(), ParamSet::new()];
        for rec in raw.tensors {
            let (prefix, name) = rec.name.split_once('/').ok_or_else(|| bad(format!("bad tensor name {}", rec.name)))?;
            let g = match prefix {
                "param" => 0,
                "adam_m" => 1,
                "adam_v" => 2,
                _ => return Err(bad(format!("unknown tensor group in {}", rec.name))),
            };
            if groups[g].id(name).is_some() {
                return Err(bad(format!("duplicate tensor {}", rec.name)));
            }
            groups[g].insert(name, rec.tensor);
        }
        let [params, m, v] = groups;
        let model = MultiAbn::from_params(raw.config, params)?;
        let ordered = |set: &ParamSet, what: &str| -> Result<Vec<Tensor>> {
            model
                .params()
                .ids()
                .map(|id| {
                    let name = model.params().name(id);
                    set.id(name).map(|i| set.get(i).clone()).ok_or_else(|| bad(format!("missing {what}/{name}")))
                })
                .collect()
        };
        if m.len() != model.params().len() || v.len() != model.params().len() {
            return Err(bad("optimizer moments do not match the parameters"));
        }
        let adam = AdamState::from_parts(model.params(), meta.adam_steps, ordered(&m, "adam_m")?, ordered(&v, "adam_v")?)
            .map_err(|e| bad(e.to_string()))?;
        Ok(Checkpoint { model, adam, vocab, step: meta.step, rng: meta.rng, train_config: meta.train_config })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        // write to a sibling file first so a crash never leaves a torn checkpoint
        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(&self.to_bytes()).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
        std::fs::rename(&tmp, path).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        Checkpoint::from_bytes(&bytes)
    }
}

/// Human-readable listing of a checkpoint file.
pub fn dump(bytes: &[u8]) -> Result<String> {
    let raw = RawCheckpoint::parse(bytes)?;
    let mut out = String::new();
    out.push_str(&format!("format: MABN v{}\n", raw.version));
    out.push_str(&format!(
        "config: {}\n",
        serde_json::to_string(&raw.config).expect("config serializes")
    ));
    out.push_str(&format!("vocabulary: {} words\n", raw.vocab.len()));
    out.push_str(&format!("metadata: {}\n", raw.metadata));
    let params: usize = raw.tensors.iter().filter(|t| t.name.starts_with("param/")).map(|t| t.tensor.len()).sum();
    out.push_str(&format!("tensors: {} ({} parameter values)\n", raw.tensors.len(), params));
    for t in &raw.tensors {
        let d = t.tensor.data();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let max = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        out.push_str(&format!("{:<40} {:>18} mean {:+.6e} max|x| {:.6e}\n", t.name, format!("{:?}", t.tensor.shape()), mean, max));
    }
    Ok(out)
}
