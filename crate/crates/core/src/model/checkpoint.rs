use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_bases, Layout, Model, ModelConfig, Param};
use crate::data::Normalizer;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"MSGWTCN1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload.
    offset: u64,
    /// Number of f64 values.
    len: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    node_ids: Vec<String>,
    edges: Vec<(usize, usize)>,
    normalizer: Option<Normalizer>,
    params: Vec<Entry>,
}

/// A model plus the normalizer its inputs were scaled with.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub normalizer: Option<Normalizer>,
}

fn encode(model: &Model, normalizer: Option<&Normalizer>) -> Result<Vec<u8>> {
    let mut offset = 0u64;
    let params = model
        .params()
        .iter()
        .map(|p| {
            let e = Entry { name: p.name.clone(), shape: p.value.shape().to_vec(), offset, len: p.value.numel() as u64 };
            offset += 8 * e.len;
            e
        })
        .collect();
    let header = Header {
        format_version: FORMAT_VERSION,
        config: model.config().clone(),
        node_ids: model.graph().node_ids().to_vec(),
        edges: model.graph().directed_edges().to_vec(),
        normalizer: normalizer.cloned(),
        params,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Shape(format!("header encoding: {e}")))?;
    let mut out = Vec::with_capacity(8 + 8 + json.len() + offset as usize + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in model.params() {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 8 + 4 {
        return Err(Error::ChecksumMismatch);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().expect("4 bytes")) {
        return Err(Error::ChecksumMismatch);
    }
    if &body[..8] != MAGIC {
        return Err(Error::VersionMismatch("missing checkpoint magic".into()));
    }
    let hlen = u64::from_le_bytes(body[8..16].try_into().expect("8 bytes")) as usize;
    let payload_start = 16usize.checked_add(hlen).filter(|&e| e <= body.len()).ok_or(Error::ChecksumMismatch)?;
    let header: Header = serde_json::from_slice(&body[16..payload_start])
        .map_err(|e| Error::VersionMismatch(format!("unreadable header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::VersionMismatch(format!(
            "file version {}, supported {FORMAT_VERSION}",
            header.format_version
        )));
    }
    let payload = &body[payload_start..];
    let edges: Vec<(&str, &str)> = header
        .edges
        .iter()
        .map(|&(a, b)| match (header.node_ids.get(a), header.node_ids.get(b)) {
            (Some(x), Some(y)) => Ok((x.as_str(), y.as_str())),
            _ => Err(Error::shape("edge refers to a missing node")),
        })
        .collect::<Result<_>>()?;
    let graph = Graph::from_edges(&edges)?;
    if graph.node_ids() != header.node_ids.as_slice() {
        return Err(Error::shape("stored node list does not match its edges"));
    }
    let values = header
        .params
        .iter()
        .map(|e| {
            let (start, len) = (e.offset as usize, e.len as usize);
            let raw = payload
                .get(start..start + 8 * len)
                .ok_or_else(|| Error::shape(format!("parameter {} outside the payload", e.name)))?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            Ok((e.name.clone(), Tensor::new(e.shape.clone(), data)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let model = Model::from_parts(header.config, graph, values)?;
    if let Some(z) = &header.normalizer {
        if z.n() != model.graph().n() {
            return Err(Error::shape("normalizer size differs from the graph"));
        }
    }
    Ok(Checkpoint { model, normalizer: header.normalizer })
}

impl Model {
    /// Reassembles a model from stored parameters, checking names and shapes.
    pub(crate) fn from_parts(config: ModelConfig, graph: Graph, values: Vec<(String, Tensor)>) -> Result<Model> {
        config.validate()?;
        let (layout, specs) = Layout::build(&config, graph.n());
        if specs.len() != values.len() {
            return Err(Error::shape(format!("{} stored parameters, config needs {}", values.len(), specs.len())));
        }
        let params = specs
            .into_iter()
            .zip(values)
            .map(|((name, shape, _), (got_name, value))| {
                if name != got_name || shape != value.shape() {
                    return Err(Error::shape(format!(
                        "parameter {got_name} {:?} where {name} {shape:?} was expected",
                        value.shape()
                    )));
                }
                Ok(Param { name, value })
            })
            .collect::<Result<Vec<_>>>()?;
        let bases = build_bases(&config, &graph)?;
        Ok(Model { config, graph, bases, params, layout })
    }
}

pub fn save_checkpoint(model: &Model, normalizer: Option<&Normalizer>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode(model, normalizer)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode(&std::fs::read(path)?)
}

/// Loads and requires the stored model to be built on `graph`'s nodes.
pub fn load_checkpoint_for_graph(path: impl AsRef<Path>, graph: &Graph) -> Result<Checkpoint> {
    let ck = load_checkpoint(path)?;
    if ck.model.graph().node_ids() != graph.node_ids() {
        return Err(Error::shape(format!(
            "checkpoint has {} nodes, graph has {}",
            ck.model.graph().n(),
            graph.n()
        )));
    }
    Ok(ck)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::new_model;
    use crate::topology::random_connected_graph;

    fn small() -> Model {
        let cfg = ModelConfig { num_layers: 2, hidden_channels: 4, ..Default::default() };
        new_model(cfg, random_connected_graph(5, 2), 11).unwrap()
    }

    #[test]
    fn bytes_round_trip() {
        let m = small();
        let ck = decode(&encode(&m, None).unwrap()).unwrap();
        assert_eq!(ck.model.params(), m.params());
        assert_eq!(ck.model.config(), m.config());
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = encode(&small(), None).unwrap();
        assert!(matches!(decode(&bytes[..bytes.len() - 10]), Err(Error::ChecksumMismatch)));
        assert!(matches!(decode(&bytes[..5]), Err(Error::ChecksumMismatch)));
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(matches!(decode(&flipped), Err(Error::ChecksumMismatch)));
    }

    #[test]
    fn version_is_checked() {
        let bytes = encode(&small(), None).unwrap();
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let text = String::from_utf8(bytes[16..16 + hlen].to_vec()).unwrap();
        let bumped = text.replacen("\"format_version\":1", "\"format_version\":9", 1);
        let mut body = bytes[..16].to_vec();
        body.extend_from_slice(bumped.as_bytes());
        body.extend_from_slice(&bytes[16 + hlen..bytes.len() - 4]);
        let crc = crc32fast::hash(&body);
        body.extend_from_slice(&crc.to_le_bytes());
        assert!(matches!(decode(&body), Err(Error::VersionMismatch(_))));
    }
}
