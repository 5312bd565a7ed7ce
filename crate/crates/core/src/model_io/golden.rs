//! Golden (fault-free) outputs per image, cached on disk keyed by model and
//! dataset checksums.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::network::NetworkGraph;
use crate::reduce::pairwise_sum;
use crate::scalar::Real;
use crate::tensor::{slice_stats, Tensor};

use super::container::{network_checksum, parse_key_values};
use super::idx::Dataset;

const CACHE_FORMAT: &str = "softerr-golden";
const END_MARKER: &str = "end_golden";

#[derive(Clone, Debug, PartialEq)]
pub struct GoldenOutputs<T> {
    pub model_checksum: String,
    pub dataset_checksum: String,
    pub quantized: bool,
    /// Final-layer output per image.
    pub logits: Vec<Tensor<T>>,
    /// Per layer, the mean over images of the population variance of that
    /// layer's output.
    pub layer_variance: Vec<f64>,
}

impl<T: Real> GoldenOutputs<T> {
    /// Fraction of images whose argmax matches the label.
    pub fn accuracy(&self, dataset: &Dataset<T>) -> f64 {
        let hits = self.logits.iter().zip(dataset.labels()).filter(|(y, &l)| y.argmax() == l).count();
        hits as f64 / self.logits.len() as f64
    }
}

pub fn cache_golden_outputs<T: Real>(net: &NetworkGraph<T>, dataset: &Dataset<T>, quantized: bool) -> Result<GoldenOutputs<T>> {
    if dataset.is_empty() {
        return Err(Error::Dataset("dataset is empty".into()));
    }
    let per_image = dataset
        .images()
        .par_iter()
        .map(|x| {
            let trace = net.forward_full(x, quantized)?;
            let vars = trace
                .outputs()
                .iter()
                .map(|o| slice_stats(o.data()).map(|s| s.1))
                .collect::<Result<Vec<f64>>>()?;
            Ok((trace.final_output().clone(), vars))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per_image.len() as f64;
    let layer_variance = (0..net.len())
        .map(|l| pairwise_sum(&per_image.iter().map(|p| p.1[l]).collect::<Vec<_>>()) / n)
        .collect();
    Ok(GoldenOutputs {
        model_checksum: network_checksum(net),
        dataset_checksum: dataset.checksum().to_string(),
        quantized,
        logits: per_image.into_iter().map(|p| p.0).collect(),
        layer_variance,
    })
}

fn cache_path(dir: &Path, model: &str, data: &str, quantized: bool) -> PathBuf {
    let tag = if quantized { "q" } else { "f" };
    dir.join(format!("golden-{}-{}-{tag}.bin", &model[..16], &data[..16]))
}

fn encode<T: Real>(g: &GoldenOutputs<T>) -> Vec<u8> {
    let classes = g.logits.first().map_or(0, |t| t.len());
    let mut out = format!(
        "format = {CACHE_FORMAT}\nmodel_sha256 = {}\ndataset_sha256 = {}\nquantized = {}\nimages = {}\nclasses = {}\nlayers = {}\n{END_MARKER}\n",
        g.model_checksum,
        g.dataset_checksum,
        g.quantized,
        g.logits.len(),
        classes,
        g.layer_variance.len()
    )
    .into_bytes();
    for t in &g.logits {
        for v in t.data() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    for v in &g.layer_variance {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode<T: Real>(bytes: &[u8]) -> Result<GoldenOutputs<T>> {
    let marker = format!("\n{END_MARKER}\n");
    let split = bytes
        .windows(marker.len())
        .position(|w| w == marker.as_bytes())
        .ok_or_else(|| Error::Format("golden cache terminator not found".into()))?;
    let header = std::str::from_utf8(&bytes[..split]).map_err(|_| Error::Format("cache header is not UTF-8".into()))?;
    let kv = parse_key_values(header)?;
    let get = |k: &str| kv.get(k).cloned().ok_or_else(|| Error::Format(format!("cache: missing key {k}")));
    let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| Error::Format(format!("cache: bad {k}"))) };
    if get("format")? != CACHE_FORMAT {
        return Err(Error::Format("not a golden cache file".into()));
    }
    let (images, classes, layers) = (num("images")?, num("classes")?, num("layers")?);
    let body: Vec<f64> = bytes[split + marker.len()..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if body.len() != images * classes + layers {
        return Err(Error::Format("golden cache body has the wrong length".into()));
    }
    let logits = body[..images * classes]
        .chunks(classes.max(1))
        .map(|c| Tensor::new(vec![classes], c.iter().map(|&v| T::of(v)).collect()))
        .collect::<Result<Vec<_>>>()?;
    Ok(GoldenOutputs {
        model_checksum: get("model_sha256")?,
        dataset_checksum: get("dataset_sha256")?,
        quantized: get("quantized")? == "true",
        logits,
        layer_variance: body[images * classes..].to_vec(),
    })
}

/// Returns cached golden outputs when a valid entry for this exact model and
/// dataset exists in `dir`; otherwise computes and stores them. The flag is
/// true on a cache hit.
pub fn load_or_compute_golden<T: Real>(
    dir: impl AsRef<Path>,
    net: &NetworkGraph<T>,
    dataset: &Dataset<T>,
    quantized: bool,
) -> Result<(GoldenOutputs<T>, bool)> {
    let dir = dir.as_ref();
    let model = network_checksum(net);
    let path = cache_path(dir, &model, dataset.checksum(), quantized);
    if let Ok(bytes) = std::fs::read(&path) {
        if let Ok(g) = decode::<T>(&bytes) {
            if g.model_checksum == model && g.dataset_checksum == dataset.checksum() && g.quantized == quantized {
                return Ok((g, true));
            }
        }
    }
    let g = cache_golden_outputs(net, dataset, quantized)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, encode(&g)).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
    Ok((g, false))
}
