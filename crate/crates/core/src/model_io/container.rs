//! Model container: a UTF-8 `key = value` manifest terminated by an
//! `end_manifest` line, followed by the weights as little-endian f32.
//!
//! ```text
//! format = softerr-model
//! version = 1
//! input_shape = 1,28,28
//! classes = 10
//! layers = 2
//! layer.0 = conv2d in=1 out=6 kernel=5 stride=1 padding=2
//! layer.0.activation_quant = bits=8 bound=3.25
//! layer.0.weight_quant = bits=8 bound=0.61
//! layer.0.weights = 0+150
//! layer.0.bias = 150+6
//! ...
//! blob_len = 1234
//! blob_sha256 = 9f86d0...
//! end_manifest
//! ```
//!
//! Offsets and lengths count f32 elements. Bounds are written with enough
//! digits to round-trip exactly.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::network::{LayerKind, LayerParams, LayerSpec, NetworkGraph};
use crate::quant::QuantConfig;
use crate::scalar::Real;
use crate::tensor::Tensor;

pub const FORMAT_NAME: &str = "softerr-model";
pub const FORMAT_VERSION: u32 = 1;
const END_MARKER: &str = "end_manifest";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn kind_line(kind: &LayerKind) -> String {
    match *kind {
        LayerKind::Conv2d { in_channels, out_channels, kernel, stride, padding } => format!(
            "conv2d in={in_channels} out={out_channels} kernel={kernel} stride={stride} padding={padding}"
        ),
        LayerKind::Dense { in_features, out_features } => format!("dense in={in_features} out={out_features}"),
        LayerKind::MaxPool { window } => format!("maxpool window={window}"),
        LayerKind::AvgPool { window } => format!("avgpool window={window}"),
        LayerKind::Relu => "relu".into(),
        LayerKind::Flatten => "flatten".into(),
    }
}

fn quant_line(cfg: &QuantConfig) -> String {
    format!("bits={} bound={:?}", cfg.bits(), cfg.bound())
}

/// Serializes a network. Parameters are stored as f32 whatever `T` is.
pub fn encode_network<T: Real>(net: &NetworkGraph<T>) -> Vec<u8> {
    let mut blob = Vec::new();
    let mut m = String::new();
    let join = |v: &[usize]| v.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",");
    m += &format!("format = {FORMAT_NAME}\nversion = {FORMAT_VERSION}\n");
    m += &format!("input_shape = {}\nclasses = {}\nlayers = {}\n", join(net.input_shape()), net.classes(), net.len());
    let mut offset = 0usize;
    for (l, spec) in net.layers().iter().enumerate() {
        m += &format!("layer.{l} = {}\n", kind_line(&spec.kind));
        if let Some(q) = &spec.activation_quant {
            m += &format!("layer.{l}.activation_quant = {}\n", quant_line(q));
        }
        if let Some(q) = &spec.weight_quant {
            m += &format!("layer.{l}.weight_quant = {}\n", quant_line(q));
        }
        if let Some(p) = net.params(l) {
            for (name, t) in [("weights", &p.weights), ("bias", &p.bias)] {
                m += &format!("layer.{l}.{name} = {offset}+{}\n", t.len());
                offset += t.len();
                for v in t.data() {
                    blob.extend_from_slice(&v.to_f32_le());
                }
            }
        }
    }
    m += &format!("blob_len = {}\nblob_sha256 = {}\n{END_MARKER}\n", blob.len(), sha256_hex(&blob));
    let mut out = m.into_bytes();
    out.extend_from_slice(&blob);
    out
}

/// SHA-256 of the serialized network; identifies a model for caching.
pub fn network_checksum<T: Real>(net: &NetworkGraph<T>) -> String {
    sha256_hex(&encode_network(net))
}

/// Splits `key = value` text into a map, rejecting duplicate keys.
pub(crate) fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Format(format!("line {}: expected `key = value`, got {raw:?}", n + 1)));
        };
        let k = k.trim().to_string();
        if map.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Format(format!("line {}: duplicate key {k}", n + 1)));
        }
    }
    Ok(map)
}

fn fields(desc: &str) -> Result<(String, BTreeMap<String, usize>)> {
    let mut parts = desc.split_whitespace();
    let name = parts.next().ok_or_else(|| Error::Format("empty layer description".into()))?;
    let mut map = BTreeMap::new();
    for p in parts {
        let (k, v) = p.split_once('=').ok_or_else(|| Error::Format(format!("bad layer field {p:?}")))?;
        let v = v.parse().map_err(|_| Error::Format(format!("bad value in layer field {p:?}")))?;
        map.insert(k.to_string(), v);
    }
    Ok((name.to_string(), map))
}

fn parse_kind(desc: &str) -> Result<LayerKind> {
    let (name, f) = fields(desc)?;
    let get = |k: &str| f.get(k).copied().ok_or_else(|| Error::Format(format!("{name}: missing field {k}")));
    let expect = |keys: &[&str]| -> Result<()> {
        match f.keys().find(|k| !keys.contains(&k.as_str())) {
            Some(k) => Err(Error::Format(format!("{name}: unknown field {k}"))),
            None => Ok(()),
        }
    };
    Ok(match name.as_str() {
        "conv2d" => {
            expect(&["in", "out", "kernel", "stride", "padding"])?;
            LayerKind::conv(get("in")?, get("out")?, get("kernel")?, get("stride")?, get("padding")?)
        }
        "dense" => {
            expect(&["in", "out"])?;
            LayerKind::dense(get("in")?, get("out")?)
        }
        "maxpool" => {
            expect(&["window"])?;
            LayerKind::MaxPool { window: get("window")? }
        }
        "avgpool" => {
            expect(&["window"])?;
            LayerKind::AvgPool { window: get("window")? }
        }
        "relu" => {
            expect(&[])?;
            LayerKind::Relu
        }
        "flatten" => {
            expect(&[])?;
            LayerKind::Flatten
        }
        other => return Err(Error::Format(format!("unknown layer kind {other:?}"))),
    })
}

fn parse_quant(s: &str) -> Result<QuantConfig> {
    let mut bits = None;
    let mut bound = None;
    for p in s.split_whitespace() {
        match p.split_once('=') {
            Some(("bits", v)) => bits = v.parse::<u32>().ok(),
            Some(("bound", v)) => bound = v.parse::<f64>().ok(),
            _ => return Err(Error::Format(format!("bad quantization field {p:?}"))),
        }
    }
    match (bits, bound) {
        (Some(b), Some(x)) => QuantConfig::new(b, x),
        _ => Err(Error::Format(format!("quantization needs bits and bound: {s:?}"))),
    }
}

fn parse_range(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Format(format!("bad blob range {s:?}"));
    let (a, b) = s.split_once('+').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

pub fn decode_network<T: Real>(bytes: &[u8]) -> Result<NetworkGraph<T>> {
    let marker = format!("\n{END_MARKER}\n");
    let split = bytes
        .windows(marker.len())
        .position(|w| w == marker.as_bytes())
        .ok_or_else(|| Error::Format("manifest terminator not found".into()))?;
    let header = std::str::from_utf8(&bytes[..split])
        .map_err(|_| Error::Format("manifest is not UTF-8".into()))?;
    let blob = &bytes[split + marker.len()..];
    let mut kv = parse_key_values(header)?;
    let mut take = |k: &str| kv.remove(k).ok_or_else(|| Error::Format(format!("missing key {k}")));
    let num = |k: &str, v: String| -> Result<usize> {
        v.parse().map_err(|_| Error::Format(format!("{k}: not an integer: {v:?}")))
    };

    if take("format")? != FORMAT_NAME {
        return Err(Error::Format("not a softerr model file".into()));
    }
    let version = take("version")?;
    let version: u32 = version.parse().map_err(|_| Error::Format(format!("bad version {version:?}")))?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion { found: version, supported: FORMAT_VERSION });
    }
    let blob_len = num("blob_len", take("blob_len")?)?;
    let expected = take("blob_sha256")?;
    if blob.len() != blob_len {
        return Err(Error::Format(format!("blob is {} bytes, manifest says {blob_len}", blob.len())));
    }
    let actual = sha256_hex(blob);
    if actual != expected {
        return Err(Error::Checksum { expected, actual });
    }
    let values: Vec<f32> = blob.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();

    let input_shape = take("input_shape")?
        .split(',')
        .map(|d| d.trim().parse::<usize>().map_err(|_| Error::Format(format!("bad input_shape entry {d:?}"))))
        .collect::<Result<Vec<_>>>()?;
    let classes = num("classes", take("classes")?)?;
    let count = num("layers", take("layers")?)?;

    let mut layers = Vec::with_capacity(count);
    let mut params = Vec::with_capacity(count);
    let mut ranges = Vec::new();
    for l in 0..count {
        let kind = parse_kind(&take(&format!("layer.{l}"))?)?;
        let mut spec = LayerSpec::new(kind);
        if let Ok(q) = take(&format!("layer.{l}.activation_quant")) {
            spec.activation_quant = Some(parse_quant(&q)?);
        }
        if let Ok(q) = take(&format!("layer.{l}.weight_quant")) {
            spec.weight_quant = Some(parse_quant(&q)?);
        }
        let p = match (kind.weight_shape(), kind.bias_len()) {
            (Some(ws), Some(bl)) => {
                let mut tensor = |name: &str, shape: Vec<usize>| -> Result<Tensor<T>> {
                    let (off, len) = parse_range(&take(&format!("layer.{l}.{name}"))?)?;
                    let end = off.checked_add(len).filter(|&e| e <= values.len()).ok_or_else(|| {
                        Error::Format(format!("layer {l} {name}: range {off}+{len} outside blob"))
                    })?;
                    ranges.push((off, end));
                    Tensor::new(shape, values[off..end].iter().map(|&v| T::of(v as f64)).collect())
                        .map_err(|e| e.at_layer(l))
                };
                Some(LayerParams { weights: tensor("weights", ws)?, bias: tensor("bias", vec![bl])? })
            }
            _ => None,
        };
        layers.push(spec);
        params.push(p);
    }
    if let Some(k) = kv.keys().next() {
        return Err(Error::Format(format!("unknown manifest key {k}")));
    }
    ranges.sort_unstable();
    if ranges.windows(2).any(|w| w[1].0 < w[0].1) {
        return Err(Error::Format("overlapping parameter ranges".into()));
    }
    NetworkGraph::new(input_shape, layers, params, classes)
}

pub fn save_network<T: Real>(net: &NetworkGraph<T>, path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = encode_network(net);
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub fn load_network<T: Real>(path: impl AsRef<Path>) -> Result<NetworkGraph<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_network(&bytes)
}
