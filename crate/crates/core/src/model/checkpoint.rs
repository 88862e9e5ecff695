//! Little-endian named-tensor container used for checkpoints and feature dumps.
//!
//! ```text
//! magic "CNNLSTM\0" | u32 version
//! u32 len | meta (UTF-8 key=value lines)
//! u32 len | vocab (UTF-8 TSV, may be empty)
//! u32 count | count x (u32 len | name | u32 rank | rank x u64 extent | f32 values)
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{parse_kv, Model, ModelDims, TrainConfig, Variant};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};
use crate::text::Vocab;

const MAGIC: &[u8; 8] = b"CNNLSTM\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub meta: String,
    pub vocab: String,
    pub tensors: Vec<NamedTensor>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Integrity(format!("file truncated while reading {what} at byte {}", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Integrity(format!("{what} is not valid UTF-8")))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl Container {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_str(&mut out, &self.meta);
        put_str(&mut out, &self.vocab);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            put_str(&mut out, &t.name);
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &e in &t.shape {
                out.extend_from_slice(&(e as u64).to_le_bytes());
            }
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic")? != MAGIC {
            return Err(Error::Integrity("bad magic header".into()));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: CHECKPOINT_VERSION,
            });
        }
        let meta = r.string("metadata")?;
        let vocab = r.string("vocabulary")?;
        let count = r.u32("tensor count")? as usize;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name = r.string("tensor name")?;
            let rank = r.u32("tensor rank")? as usize;
            if rank == 0 || rank > 8 {
                return Err(Error::Integrity(format!("tensor `{name}` has invalid rank {rank}")));
            }
            let shape = (0..rank)
                .map(|_| r.u64("tensor extent").map(|e| e as usize))
                .collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &e| acc.checked_mul(e))
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::Integrity(format!("tensor `{name}` has invalid extents {shape:?}")))?;
            let raw = r.take(n.saturating_mul(4), "tensor values")?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push(NamedTensor { name, shape, values });
        }
        if r.pos != bytes.len() {
            return Err(Error::Integrity(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { meta, vocab, tensors })
    }

    /// Writes to a sibling temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = std::path::PathBuf::from(tmp);
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// Everything needed to rebuild a trained model.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub variant: Variant,
    pub dims: ModelDims,
    pub config: TrainConfig,
    pub vocab: Vocab,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_model<F: Real>(model: &Model<F>, vocab: &Vocab, config: &TrainConfig) -> Self {
        let tensors = model
            .params
            .iter()
            .map(|(_, p)| NamedTensor {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
                values: p.tensor.values().iter().map(|v| v.as_f64() as f32).collect(),
            })
            .collect();
        Self {
            variant: model.variant(),
            dims: model.dims.clone(),
            config: config.clone(),
            vocab: vocab.clone(),
            tensors,
        }
    }

    fn meta(&self) -> String {
        format!(
            "variant={}\n{}block_order={}\n{}",
            self.variant,
            self.dims.to_kv(),
            self.dims.block_order(),
            self.config.to_kv()
        )
    }

    pub fn to_container(&self) -> Container {
        Container {
            meta: self.meta(),
            vocab: self.vocab.to_tsv(),
            tensors: self.tensors.clone(),
        }
    }

    pub fn from_container(c: Container) -> Result<Self> {
        let mut variant = None;
        let mut dims = ModelDims::default();
        let mut config = TrainConfig::default();
        let mut block_order = None;
        let integrity = |e: Error| Error::Integrity(format!("metadata: {e}"));
        for (k, v) in parse_kv(&c.meta).map_err(integrity)? {
            match k.as_str() {
                "variant" => variant = Some(Variant::parse(&v).map_err(integrity)?),
                "block_order" => block_order = Some(v),
                _ => {
                    let known = dims.set(&k, &v).map_err(integrity)? || config.set(&k, &v).map_err(integrity)?;
                    if !known {
                        return Err(Error::Integrity(format!("unknown metadata key `{k}`")));
                    }
                }
            }
        }
        let variant = variant.ok_or_else(|| Error::Integrity("metadata lacks the variant".into()))?;
        if block_order.as_deref() != Some(dims.block_order().as_str()) {
            return Err(Error::Integrity("block ordering does not match the windows".into()));
        }
        let vocab = Vocab::from_tsv(&c.vocab).map_err(integrity)?;
        if vocab.len() != dims.vocab_size {
            return Err(Error::Integrity(format!(
                "vocabulary holds {} tokens but the model expects {}",
                vocab.len(),
                dims.vocab_size
            )));
        }
        Ok(Self {
            variant,
            dims,
            config,
            vocab,
            tensors: c.tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(Container::load(path)?)
    }

    /// Copies every stored tensor into `model`, which must have the same
    /// parameter names and shapes.
    pub fn load_into<F: Real>(&self, model: &mut Model<F>) -> Result<()> {
        let mut seen = vec![false; model.params.len()];
        for t in &self.tensors {
            let id = model
                .params
                .find(&t.name)
                .ok_or_else(|| Error::Integrity(format!("unknown tensor `{}`", t.name)))?;
            if std::mem::replace(&mut seen[id.index()], true) {
                return Err(Error::Integrity(format!("tensor `{}` appears twice", t.name)));
            }
            let values = t.values.iter().map(|&v| F::from_f64_lossy(f64::from(v))).collect();
            let tensor = Tensor::new(t.shape.clone(), values).map_err(|_| Error::Integrity(format!("tensor `{}` is malformed", t.name)))?;
            model.params.load_values(&t.name, tensor)?;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            let name = &model.params.iter().nth(missing).expect("index").1.name;
            return Err(Error::Integrity(format!("tensor `{name}` is missing")));
        }
        Ok(())
    }

    pub fn to_model<F: Real>(&self) -> Result<Model<F>> {
        let mut model = Model::init(
            self.variant,
            &self.dims,
            self.config.init_range,
            self.config.forget_bias,
            self.config.seed,
        )?;
        self.load_into(&mut model)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::Corpus;

    fn fixture() -> (Model<f32>, Vocab, TrainConfig) {
        let corpus = Corpus::parse("the cat sat .\nthe dog ran .\n");
        let vocab = Vocab::from_corpus(&corpus, 100).unwrap();
        let dims = ModelDims {
            vocab_size: vocab.len(),
            embed_dim: 4,
            windows: vec![2, 3],
            maps_per_window: 2,
            hidden: 3,
            paragraph_hidden: 3,
            ..ModelDims::default()
        };
        let config = TrainConfig::default();
        (Model::init(Variant::Composite, &dims, 0.01, 3.0, 5).unwrap(), vocab, config)
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let (model, vocab, config) = fixture();
        let bytes = Checkpoint::from_model(&model, &vocab, &config).to_container().to_bytes();
        let back = Checkpoint::from_container(Container::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back.to_container().to_bytes(), bytes);
        let restored: Model<f32> = back.to_model().unwrap();
        for ((_, a), (_, b)) in model.params.iter().zip(restored.params.iter()) {
            assert_eq!(a.tensor.values(), b.tensor.values());
        }
    }

    #[test]
    fn every_truncation_is_an_integrity_error() {
        let (model, vocab, config) = fixture();
        let bytes = Checkpoint::from_model(&model, &vocab, &config).to_container().to_bytes();
        for cut in [0, 5, 11, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(Container::from_bytes(&bytes[..cut]), Err(Error::Integrity(_))), "cut {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(Container::from_bytes(&extra), Err(Error::Integrity(_))));
    }

    #[test]
    fn version_mismatch_is_reported() {
        let (model, vocab, config) = fixture();
        let mut bytes = Checkpoint::from_model(&model, &vocab, &config).to_container().to_bytes();
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            Container::from_bytes(&bytes),
            Err(Error::UnsupportedVersion { found: 7, supported: 1 })
        ));
    }

    #[test]
    fn mismatched_dims_name_the_tensor() {
        let (model, vocab, config) = fixture();
        let ckpt = Checkpoint::from_model(&model, &vocab, &config);
        let mut dims = model.dims.clone();
        dims.hidden = 5;
        let mut other = Model::<f32>::init(Variant::Composite, &dims, 0.01, 3.0, 5).unwrap();
        match ckpt.load_into(&mut other) {
            Err(Error::TensorShape { name, .. }) => assert!(name.starts_with("reconstruct")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
