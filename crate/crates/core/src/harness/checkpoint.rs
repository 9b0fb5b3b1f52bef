//! Binary checkpoint: magic, version, a JSON manifest and a little-endian
//! `f32` payload.
//!
//! ```text
//! b"LKCP" | u32 version | u64 manifest length | manifest JSON | payload
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::TrainConfig;
use super::model::Model;
use crate::data::KnowledgeTree;
use crate::error::{Error, Result};
use crate::textgraph::{PmiEdges, Vocabulary};

pub const MAGIC: &[u8; 4] = b"LKCP";
pub const VERSION: u32 = 1;
const HEADER: usize = 4 + 4 + 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: TrainConfig,
    pub vocabulary: Vocabulary,
    pub pmi_edges: PmiEdges,
    pub knowledge: KnowledgeTree,
    pub knowledge_sha256: String,
    pub params: Vec<ParamEntry>,
    /// Total `f32` values in the payload.
    pub payload_values: usize,
    pub payload_sha256: String,
}

impl Manifest {
    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.shape[0] * p.shape[1]).sum()
    }
}

/// Serializes `model` to bytes.
pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let mut payload = Vec::with_capacity(model.store.scalar_count() * 4);
    let mut params = Vec::with_capacity(model.store.len());
    for (_, name, t) in model.store.iter() {
        params.push(ParamEntry {
            name: name.to_owned(),
            shape: t.shape(),
        });
        for &x in t.data() {
            payload.extend_from_slice(&x.to_le_bytes());
        }
    }
    let manifest = Manifest {
        config: model.config.clone(),
        vocabulary: model.vocab.clone(),
        pmi_edges: model.edges.clone(),
        knowledge: model.knowledge.clone(),
        knowledge_sha256: model.knowledge.content_hash(),
        params,
        payload_values: payload.len() / 4,
        payload_sha256: hex::encode(Sha256::digest(&payload)),
    };
    let json = serde_json::to_vec_pretty(&manifest)?;
    let mut out = Vec::with_capacity(HEADER + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Reads the manifest without touching the payload.
pub fn read_manifest(bytes: &[u8]) -> Result<(Manifest, &[u8])> {
    if bytes.len() < HEADER {
        return Err(Error::Corruption(format!("file is {} bytes, shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Corruption("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let end = usize::try_from(len)
        .ok()
        .and_then(|l| l.checked_add(HEADER))
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| Error::Corruption(format!("manifest length {len} exceeds file size {}", bytes.len())))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[HEADER..end])
        .map_err(|e| Error::Corruption(format!("unreadable manifest: {e}")))?;
    Ok((manifest, &bytes[end..]))
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let (manifest, payload) = read_manifest(bytes)?;
    if payload.len() != manifest.payload_values * 4 {
        return Err(Error::Corruption(format!(
            "payload holds {} bytes, manifest expects {}",
            payload.len(),
            manifest.payload_values * 4
        )));
    }
    if hex::encode(Sha256::digest(payload)) != manifest.payload_sha256 {
        return Err(Error::Corruption("payload checksum mismatch".into()));
    }
    if manifest.knowledge.content_hash() != manifest.knowledge_sha256 {
        return Err(Error::Corruption("knowledge tree hash mismatch".into()));
    }
    if manifest.parameter_count() != manifest.payload_values {
        return Err(Error::Corruption("parameter shapes do not cover the payload".into()));
    }
    let mut model = Model::assemble(
        manifest.config,
        manifest.vocabulary,
        manifest.pmi_edges,
        manifest.knowledge,
        0,
    )
    .map_err(|e| Error::Corruption(format!("manifest does not describe a valid model: {e}")))?;
    if model.store.len() != manifest.params.len() {
        return Err(Error::Corruption(format!(
            "manifest lists {} parameters, model has {}",
            manifest.params.len(),
            model.store.len()
        )));
    }
    let mut values = payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")));
    let ids: Vec<_> = model.store.ids().collect();
    for (id, entry) in ids.into_iter().zip(&manifest.params) {
        let t = model.store.get_mut(id);
        if t.shape() != entry.shape {
            return Err(Error::Corruption(format!(
                "parameter {} has shape {:?}, model expects {:?}",
                entry.name,
                entry.shape,
                t.shape()
            )));
        }
        t.data_mut().iter_mut().for_each(|x| *x = values.next().expect("length checked"));
    }
    let names_match = model.store.iter().zip(&manifest.params).all(|((_, n, _), e)| n == e.name);
    if !names_match {
        return Err(Error::Corruption("parameter names differ from the model layout".into()));
    }
    Ok(model)
}

/// Writes atomically: a sibling temp file is renamed over `path`.
pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(model)?;
    let mut tmp = PathBuf::from(path);
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    tmp.set_file_name(name);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
