//! Binary checkpoint container.
//!
//! Layout: `KGRELPRD`, `u32` version, `u32` header length, JSON header, `u32`
//! tensor count, then per tensor `u32` name length, name, `u32` rank, `u64`
//! extents and little-endian `f64` values. All integers are little-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{vocabulary_hash, KnowledgeGraph};
use crate::model::Model;
use crate::params::ParameterStore;
use crate::path_encoder::PathVocabulary;
use crate::tensor::Tensor;
use crate::trainer::TrainConfig;

pub const MAGIC: &[u8; 8] = b"KGRELPRD";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub entities: Vec<String>,
    pub relations: Vec<String>,
    pub model: Model,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    entities: Vec<String>,
    relations: Vec<String>,
    path_keys: Vec<u64>,
    vocabulary_hash: String,
}

impl Checkpoint {
    pub fn new(config: TrainConfig, graph: &KnowledgeGraph, model: Model) -> Self {
        Self {
            config,
            entities: graph.entities.names().to_vec(),
            relations: graph.relations.names().to_vec(),
            model,
        }
    }

    pub fn vocabulary_hash(&self) -> String {
        vocabulary_hash(&self.entities, &self.relations)
    }

    /// Refuses a dataset whose vocabularies differ from the training ones.
    pub fn check_graph(&self, graph: &KnowledgeGraph) -> Result<()> {
        let (ours, theirs) = (self.vocabulary_hash(), graph.vocabulary_hash());
        if ours != theirs {
            return Err(Error::ConfigMismatch(format!(
                "dataset vocabulary hash {theirs} differs from checkpoint {ours}"
            )));
        }
        Ok(())
    }

    /// Refuses a request for a path setting the checkpoint was not trained with.
    pub fn check_use_paths(&self, requested: Option<bool>) -> Result<()> {
        match requested {
            Some(want) if want != self.config.model.use_paths => {
                Err(Error::ConfigMismatch(format!(
                    "checkpoint was trained with use_paths={}, request has use_paths={want}",
                    self.config.model.use_paths
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            config: self.config.clone(),
            entities: self.entities.clone(),
            relations: self.relations.clone(),
            path_keys: self.model.paths.keys().to_vec(),
            vocabulary_hash: self.vocabulary_hash(),
        };
        let header = serde_json::to_vec(&header)
            .map_err(|e| Error::Checkpoint(format!("header encoding: {e}")))?;
        let mut out = Vec::with_capacity(self.model.params.total_values() * 8 + header.len() + 64);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&len_u32(header.len())?.to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&len_u32(self.model.params.len())?.to_le_bytes());
        for (_, p) in self.model.params.iter() {
            out.extend_from_slice(&len_u32(p.name.len())?.to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.extend_from_slice(&len_u32(p.value.rank())?.to_le_bytes());
            for &d in p.value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version}, expected {VERSION}"
            )));
        }
        let header_len = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(header_len)?)
            .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        if header.vocabulary_hash != vocabulary_hash(&header.entities, &header.relations) {
            return Err(Error::Checkpoint(
                "vocabulary hash does not match header".into(),
            ));
        }
        let mut params = ParameterStore::new();
        for _ in 0..r.u32()? {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let len = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| Error::Checkpoint(format!("tensor {name} is truncated")))?;
            let data = r
                .take(len * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            params.insert(&name, Tensor::new(shape, data)?)?;
        }
        if r.remaining() != 0 {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                r.remaining()
            )));
        }
        let model = Model {
            config: header.config.model.clone(),
            params,
            paths: PathVocabulary::from_keys(header.path_keys),
            num_relations: header.relations.len(),
        };
        Ok(Self {
            config: header.config,
            entities: header.entities,
            relations: header.relations,
            model,
        })
    }
}

fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Checkpoint(format!("length {n} exceeds u32")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Checkpoint("file is truncated".into()));
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
}

/// Writes to a temporary sibling first, so a failed save leaves no partial file.
pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = ckpt.to_bytes()?;
    let tmp = path.with_extension("partial");
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(&bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Checkpoint::from_bytes(&bytes)
}
