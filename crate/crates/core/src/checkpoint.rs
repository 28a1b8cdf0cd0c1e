//! Binary checkpoints: `ADMG` magic, u32 version, u32 header length, a JSON
//! header naming every tensor, little-endian f32 tensor data, CRC32 trailer.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adam::{AdamState, Hyper};
use crate::error::{Error, Result};
use crate::fields::{FieldConfig, NeuralFieldSet};
use crate::model::{Group, Model};
use crate::scene::{GaussianSet, Keyframe, ObjectNode, SceneGraph, SkyNode, StaticNode, TraversalTable};

pub const MAGIC: &[u8; 4] = b"ADMG";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    group: Group,
    len: usize,
    /// Byte offset from the start of the tensor block.
    offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ObjectMeta {
    count: usize,
    feature_dim: usize,
    trajectory: Vec<Keyframe>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Structure {
    fields: FieldConfig,
    static_count: usize,
    geo_dim: usize,
    sky_count: usize,
    sky_radius: f64,
    objects: Vec<ObjectMeta>,
    traversals: usize,
    emb_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct AdamMeta {
    step: u64,
    hyper: Hyper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    iteration: usize,
    structure: Structure,
    tensors: Vec<TensorEntry>,
    adam: Option<AdamMeta>,
    meta: serde_json::Value,
}

/// Everything needed to resume training or render.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub iteration: usize,
    pub model: Model<f32>,
    pub adam: Option<AdamState<f32>>,
    /// Free-form echo of the producing configuration.
    pub meta: serde_json::Value,
}

fn structure(model: &Model<f32>) -> Structure {
    let s = &model.scene;
    Structure {
        fields: model.fields.config.clone(),
        static_count: s.static_node.len(),
        geo_dim: s.static_node.geo_dim,
        sky_count: s.sky.gaussians.len(),
        sky_radius: s.sky.radius,
        objects: s
            .objects
            .iter()
            .map(|o| ObjectMeta { count: o.canonical.len(), feature_dim: o.feature.len(), trajectory: o.trajectory.clone() })
            .collect(),
        traversals: s.traversals.len(),
        emb_dim: s.traversals.dim,
    }
}

fn zero_set(n: usize) -> GaussianSet<f32> {
    GaussianSet {
        positions: vec![0.0; 3 * n],
        log_scales: vec![0.0; 3 * n],
        rotations: vec![0.0; 4 * n],
        opacity_logits: vec![0.0; n],
    }
}

fn skeleton(s: &Structure) -> Model<f32> {
    let t = s.traversals;
    Model {
        scene: SceneGraph {
            static_node: StaticNode {
                gaussians: zero_set(s.static_count),
                f_geo: vec![0.0; s.static_count * s.geo_dim],
                geo_dim: s.geo_dim,
            },
            sky: SkyNode { gaussians: zero_set(s.sky_count), radius: s.sky_radius },
            objects: s
                .objects
                .iter()
                .map(|o| ObjectNode {
                    canonical: zero_set(o.count),
                    color_logits: vec![0.0; 3 * o.count],
                    trajectory: o.trajectory.clone(),
                    feature: vec![0.0; o.feature_dim],
                })
                .collect(),
            traversals: TraversalTable {
                embeddings: vec![0.0; t * s.emb_dim],
                affine_scale: vec![0.0; 3 * t],
                affine_bias: vec![0.0; 3 * t],
                dim: s.emb_dim,
            },
        },
        fields: NeuralFieldSet::new(&s.fields, &mut ChaCha8Rng::seed_from_u64(0)),
    }
}

pub fn encode(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut data: Vec<u8> = Vec::new();
    let mut push = |name: String, group: Group, t: &[f32]| {
        tensors.push(TensorEntry { name, group, len: t.len(), offset: data.len() });
        for v in t {
            data.extend_from_slice(&v.to_le_bytes());
        }
    };
    ck.model.visit(&mut |n, g, t| push(n, g, t));
    if let Some(a) = &ck.adam {
        let layout = ck.model.layout();
        if a.m.len() != layout.len() {
            return Err(Error::ContractViolation("optimizer state does not match the model".into()));
        }
        for (k, (n, g, _)) in layout.iter().enumerate() {
            push(format!("adam.m.{n}"), *g, &a.m[k]);
            push(format!("adam.v.{n}"), *g, &a.v[k]);
        }
    }
    let header = Header {
        iteration: ck.iteration,
        structure: structure(&ck.model),
        tensors,
        adam: ck.adam.as_ref().map(|a| AdamMeta { step: a.step, hyper: a.hyper() }),
        meta: ck.meta.clone(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + header.len() + data.len() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&data);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::format("checkpoint", "missing ADMG magic"));
    }
    if bytes.len() < 12 {
        return Err(Error::Truncated("file ends inside the fixed header".into()));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(Error::VersionMismatch { found: version, expected: VERSION });
    }
    let header_len = u32_at(bytes, 8) as usize;
    if bytes.len() < 12 + header_len + 4 {
        return Err(Error::Truncated("file ends inside the JSON header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[12..12 + header_len])
        .map_err(|e| Error::format("checkpoint", format!("bad header: {e}")))?;
    let data_start = 12 + header_len;
    let data_len: usize = header.tensors.iter().map(|t| 4 * t.len).sum();
    let end = data_start + data_len;
    if bytes.len() < end + 4 {
        return Err(Error::Truncated(format!("expected {} bytes, found {}", end + 4, bytes.len())));
    }
    if bytes.len() > end + 4 {
        return Err(Error::format("checkpoint", "trailing bytes after checksum"));
    }
    let stored = u32_at(bytes, end);
    let computed = crc32fast::hash(&bytes[..end]);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    let data = &bytes[data_start..end];
    let read = |e: &TensorEntry| -> Result<Vec<f32>> {
        let raw = data
            .get(e.offset..e.offset + 4 * e.len)
            .ok_or_else(|| Error::format("checkpoint", format!("tensor {} lies outside the data block", e.name)))?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    };

    let mut model = skeleton(&header.structure);
    let layout = model.layout();
    let mut entries = header.tensors.iter();
    let mut values = Vec::with_capacity(layout.len());
    for (name, group, len) in &layout {
        let e = entries.next().ok_or_else(|| Error::format("checkpoint", format!("missing tensor {name}")))?;
        if &e.name != name || e.group != *group || e.len != *len {
            return Err(Error::format(
                "checkpoint",
                format!("tensor {} ({} values) does not match expected {name} ({len} values)", e.name, e.len),
            ));
        }
        values.push(read(e)?);
    }
    let mut k = 0;
    model.visit_mut(&mut |_, _, t| {
        t.copy_from_slice(&values[k]);
        k += 1;
    });
    let adam = match &header.adam {
        None => None,
        Some(meta) => {
            let mut a = AdamState::with_hyper(&model, meta.hyper);
            a.step = meta.step;
            for (k, (name, _, len)) in layout.iter().enumerate() {
                for (prefix, dst) in [("adam.m.", &mut a.m[k]), ("adam.v.", &mut a.v[k])] {
                    let e = entries.next().ok_or_else(|| Error::format("checkpoint", format!("missing {prefix}{name}")))?;
                    if e.name != format!("{prefix}{name}") || e.len != *len {
                        return Err(Error::format("checkpoint", format!("unexpected tensor {}", e.name)));
                    }
                    *dst = read(e)?;
                }
            }
            Some(a)
        }
    };
    if let Some(e) = entries.next() {
        return Err(Error::format("checkpoint", format!("unexpected tensor {}", e.name)));
    }
    Ok(Checkpoint { iteration: header.iteration, model, adam, meta: header.meta })
}

pub fn save(ck: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode(ck)?;
    // Write beside the target and rename so a crash never leaves a torn file.
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
