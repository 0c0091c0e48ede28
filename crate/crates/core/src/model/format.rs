//! Binary model container.
//!
//! Layout, all integers little-endian:
//! `SSRM`, u32 format version, u32 length + JSON header (config and
//! manifest), u32 token count + (u32 length + UTF-8 bytes) per token,
//! u32 tensor count + per tensor (u32 name length, name, u32 rank, u32 dims),
//! then every tensor's values as f32 in table order.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{ParamSet, Tensor};
use super::{Model, ModelConfig};
use crate::codec::Vocabulary;
use crate::error::{Result, SsrError};

pub const MAGIC: &[u8; 4] = b"SSRM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    manifest: serde_json::Value,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| SsrError::ModelFormat(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) -> Result<()> {
    put_u32(out, b.len())?;
    out.extend_from_slice(b);
    Ok(())
}

pub fn to_bytes(m: &Model) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION as usize)?;
    let header = serde_json::to_vec(&Header {
        config: m.config.clone(),
        manifest: m.manifest.clone(),
    })?;
    put_bytes(&mut out, &header)?;
    put_u32(&mut out, m.vocab.len())?;
    for t in m.vocab.tokens() {
        put_bytes(&mut out, t.as_bytes())?;
    }
    let tensors = m.params.tensors();
    put_u32(&mut out, tensors.len())?;
    for t in tensors {
        put_bytes(&mut out, t.name.as_bytes())?;
        put_u32(&mut out, t.shape.len())?;
        for &d in &t.shape {
            put_u32(&mut out, d)?;
        }
    }
    for t in tensors {
        for &x in &t.data {
            out.extend_from_slice(&(x as f32).to_le_bytes());
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
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| SsrError::ModelFormat(format!("truncated file at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()?;
        self.take(n)
    }

    fn string(&mut self) -> Result<String> {
        String::from_utf8(self.bytes()?.to_vec()).map_err(|e| SsrError::ModelFormat(e.to_string()))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<Model> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(SsrError::ModelFormat("not a model file".into()));
    }
    let version = r.u32()? as u32;
    if version != FORMAT_VERSION {
        return Err(SsrError::ModelFormat(format!("unsupported format version {version}")));
    }
    let header: Header = serde_json::from_slice(r.bytes()?)?;
    let n_tokens = r.u32()?;
    let tokens = (0..n_tokens).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
    let vocab = Vocabulary::from_tokens(tokens)?;
    let n_tensors = r.u32()?;
    let mut table = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let name = r.string()?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        table.push((name, shape));
    }
    let mut tensors = Vec::with_capacity(n_tensors);
    for (name, shape) in table {
        let n: usize = shape.iter().product();
        let raw = r.take(
            n.checked_mul(4)
                .ok_or_else(|| SsrError::ModelFormat("tensor too large".into()))?,
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        tensors.push(Tensor { name, shape, data });
    }
    if r.pos != buf.len() {
        return Err(SsrError::ModelFormat(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    if header.config.vocab_size != vocab.len() {
        return Err(SsrError::VocabMismatch(format!(
            "config expects {} tokens, file has {}",
            header.config.vocab_size,
            vocab.len()
        )));
    }
    Ok(Model {
        config: header.config,
        vocab,
        params: ParamSet::from_tensors(tensors),
        manifest: header.manifest,
    })
}

pub fn save(m: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(m)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    from_bytes(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::build_vocab;
    use crate::event::{Corpus, Event, EventSequence, LabelSpace, RelationLabel};
    use crate::model::Architecture;

    fn model(arch: Architecture) -> Model {
        let s = EventSequence::new("a", (0..5).map(|i| Event::verb_only(format!("v{i}"))).collect())
            .with_relation(1, RelationLabel::Causes);
        let c = Corpus::new(LabelSpace::vidsitu(), vec![s]);
        let cfg = ModelConfig {
            architecture: arch,
            embed_dim: 8,
            num_heads: 2,
            ff_dim: 8,
            num_layers: 1,
            ..Default::default()
        };
        let mut m = Model::init(cfg, build_vocab(&c, 0)).unwrap();
        m.manifest = serde_json::json!({"seed": 0});
        m
    }

    #[test]
    fn round_trip_is_byte_exact() {
        for arch in [Architecture::EncoderClassifier, Architecture::EncoderDecoder] {
            let m = model(arch);
            let bytes = to_bytes(&m).unwrap();
            let back = from_bytes(&bytes).unwrap();
            assert_eq!(back, m);
            assert_eq!(to_bytes(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = to_bytes(&model(Architecture::EncoderClassifier)).unwrap();
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(from_bytes(&bad).is_err());
        let mut bad = bytes;
        bad[4] = 9;
        assert!(from_bytes(&bad).is_err());
    }
}
