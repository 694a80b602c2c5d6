//! Binary model files.
//!
//! Layout: `INCN` magic, format version (u32 LE), body length (u64 LE), body,
//! then a CRC-32 (u32 LE) over everything before it. The body holds a
//! length-prefixed JSON manifest followed by the parameter tensors, each as
//! `byte_len u64, ndim u32, dims u64.., data f64 LE..`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::graph::model::{BranchModel, IncrementalModel, Provenance};
use crate::graph::network::Layer;
use crate::graph::{Network, SharingConfig, Topology};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"INCN";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Serialize, Deserialize)]
struct Manifest {
    topology: Topology,
    selected: Option<SharingConfig>,
    base_seed: u64,
    consumed: Vec<usize>,
    trunk: NetManifest,
    base: BranchManifest,
    branches: Vec<BranchManifest>,
    provenance: Vec<Provenance>,
}

#[derive(Serialize, Deserialize)]
struct NetManifest {
    input_shape: Vec<usize>,
    layers: Vec<LayerManifest>,
}

#[derive(Serialize, Deserialize)]
struct LayerManifest {
    spec: String,
    in_shape: Vec<usize>,
    frozen_outputs: usize,
}

#[derive(Serialize, Deserialize)]
struct BranchManifest {
    split: usize,
    class_map: Vec<u32>,
    tail: NetManifest,
}

fn net_manifest(net: &Network, tensors: &mut Vec<Tensor>) -> NetManifest {
    let layers = net
        .layers()
        .iter()
        .map(|l| {
            tensors.extend(l.params.iter().cloned());
            LayerManifest {
                spec: l.spec.to_string(),
                in_shape: l.in_shape.clone(),
                frozen_outputs: l.frozen_outputs,
            }
        })
        .collect();
    NetManifest {
        input_shape: net.input_shape().to_vec(),
        layers,
    }
}

fn branch_manifest(b: &BranchModel, tensors: &mut Vec<Tensor>) -> BranchManifest {
    BranchManifest {
        split: b.split,
        class_map: b.class_map.clone(),
        tail: net_manifest(&b.tail, tensors),
    }
}

/// Serializes a model to bytes.
pub fn encode_model(model: &IncrementalModel) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let manifest = Manifest {
        topology: model.topology.clone(),
        selected: model.selected,
        base_seed: model.base_seed,
        consumed: model.consumed.clone(),
        trunk: net_manifest(&model.trunk, &mut tensors),
        base: branch_manifest(&model.base, &mut tensors),
        branches: model
            .branches
            .iter()
            .map(|b| branch_manifest(b, &mut tensors))
            .collect(),
        provenance: model.provenance.clone(),
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| Error::invalid(e.to_string()))?;

    let mut body = Vec::new();
    body.extend_from_slice(&(json.len() as u64).to_le_bytes());
    body.extend_from_slice(&json);
    body.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for t in &tensors {
        let byte_len = 4 + 8 * t.shape().len() + 8 * t.len();
        body.extend_from_slice(&(byte_len as u64).to_le_bytes());
        body.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            body.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            body.extend_from_slice(&v.to_le_bytes());
        }
    }

    let mut out = Vec::with_capacity(HEADER_LEN + body.len() + 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(&body);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(
            FormatError::Truncated {
                needed: self.pos.saturating_add(n),
                available: self.buf.len(),
            },
        )?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| FormatError::Malformed(format!("length {v} overflows")).into())
    }
}

fn malformed(msg: impl Into<String>) -> Error {
    FormatError::Malformed(msg.into()).into()
}

/// Parses bytes produced by [`encode_model`].
pub fn decode_model(bytes: &[u8]) -> Result<IncrementalModel> {
    if bytes.len() < HEADER_LEN + 4 {
        return Err(FormatError::Truncated {
            needed: HEADER_LEN + 4,
            available: bytes.len(),
        }
        .into());
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(FormatError::BadMagic(magic).into());
    }
    let mut header = Reader { buf: bytes, pos: 4 };
    let version = header.u32()?;
    if version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion(version).into());
    }
    let body_len = header.len()?;
    let total = HEADER_LEN
        .checked_add(body_len)
        .and_then(|n| n.checked_add(4))
        .ok_or_else(|| malformed("body length overflows"))?;
    if bytes.len() < total {
        return Err(FormatError::Truncated {
            needed: total,
            available: bytes.len(),
        }
        .into());
    }
    if bytes.len() > total {
        return Err(malformed(format!("{} trailing bytes", bytes.len() - total)));
    }
    let stored = u32::from_le_bytes(bytes[total - 4..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..total - 4]);
    if stored != computed {
        return Err(FormatError::ChecksumMismatch { stored, computed }.into());
    }

    let mut r = Reader {
        buf: &bytes[HEADER_LEN..total - 4],
        pos: 0,
    };
    let json_len = r.len()?;
    let manifest: Manifest =
        serde_json::from_slice(r.take(json_len)?).map_err(|e| malformed(e.to_string()))?;
    let count = r.len()?;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let byte_len = r.len()?;
        let mut t = Reader {
            buf: r.take(byte_len)?,
            pos: 0,
        };
        let ndim = t.u32()? as usize;
        let shape = (0..ndim).map(|_| t.len()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        if t.buf.len() != t.pos + 8 * n {
            return Err(malformed("tensor record length disagrees with its shape"));
        }
        let data = t
            .take(8 * n)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(Tensor::new(shape, data).map_err(|e| malformed(e.to_string()))?);
    }
    if r.pos != r.buf.len() {
        return Err(malformed("unread bytes after the tensor section"));
    }
    build(manifest, tensors)
}

fn build(m: Manifest, tensors: Vec<Tensor>) -> Result<IncrementalModel> {
    let mut it = tensors.into_iter();
    let trunk = build_net(m.trunk, &mut it)?;
    let base = build_branch(m.base, &mut it)?;
    let branches = m
        .branches
        .into_iter()
        .map(|b| build_branch(b, &mut it))
        .collect::<Result<Vec<_>>>()?;
    if it.next().is_some() {
        return Err(malformed("more tensors than the manifest describes"));
    }
    if let Some(cfg) = &m.selected {
        cfg.validate(&m.topology).map_err(|e| malformed(e.to_string()))?;
    }
    if m.provenance.len() != branches.len() {
        return Err(malformed("one provenance record per branch is required"));
    }
    let model = IncrementalModel {
        topology: m.topology,
        selected: m.selected,
        trunk,
        base,
        branches,
        provenance: m.provenance,
        base_seed: m.base_seed,
        consumed: m.consumed,
    };
    let full = model.base_network();
    if full.specs() != model.topology.layers() || model.trunk.layers().len() != model.split() {
        return Err(malformed("stored layers disagree with the stored topology"));
    }
    Ok(model)
}

fn build_net(m: NetManifest, tensors: &mut impl Iterator<Item = Tensor>) -> Result<Network> {
    let layers = m
        .layers
        .into_iter()
        .map(|l| {
            let spec = l.spec.parse().map_err(|e: Error| malformed(e.to_string()))?;
            let n = crate::graph::LayerSpec::param_shapes(&spec, &l.in_shape).len();
            let params: Vec<Tensor> = tensors.take(n).collect();
            let mut layer = Layer::new(spec, l.in_shape, params).map_err(|e| malformed(e.to_string()))?;
            layer.frozen_outputs = l.frozen_outputs;
            Ok(layer)
        })
        .collect::<Result<Vec<_>>>()?;
    Network::from_layers(m.input_shape, layers).map_err(|e| malformed(e.to_string()))
}

fn build_branch(m: BranchManifest, tensors: &mut impl Iterator<Item = Tensor>) -> Result<BranchModel> {
    let tail = build_net(m.tail, tensors)?;
    BranchModel::new(m.split, tail, m.class_map).map_err(|e| malformed(e.to_string()))
}

pub fn save_model(model: &IncrementalModel, path: &Path) -> Result<()> {
    let bytes = encode_model(model)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<IncrementalModel> {
    decode_model(&fs::read(path)?)
}
