use crate::error::{Error, Result};
use crate::quant::QuantConfig;
use crate::scalar::Real;
use crate::tensor::Tensor;

use super::NetworkGraph;

/// Default activation-bound percentile of absolute values.
pub const DEFAULT_BOUND_PERCENTILE: f64 = 99.9;

/// Assigns quantization configs of width `bits` to every layer: activation
/// bounds at the given percentile of absolute float activations over
/// `samples`, weight bounds at the largest absolute weight of each layer.
pub fn calibrate_quantization<T: Real>(
    net: &NetworkGraph<T>,
    samples: &[Tensor<T>],
    bits: u32,
    percentile: f64,
) -> Result<NetworkGraph<T>> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("calibration needs at least one sample".into()));
    }
    if !(0.0..=100.0).contains(&percentile) {
        return Err(Error::InvalidArgument(format!("percentile {percentile} outside [0, 100]")));
    }
    let mut magnitudes: Vec<Vec<f64>> = vec![Vec::new(); net.len()];
    for x in samples {
        let trace = net.forward_full(x, false)?;
        for (l, out) in trace.outputs().iter().enumerate() {
            magnitudes[l].extend(out.data().iter().map(|v| v.as_f64().abs()));
        }
    }
    let bounds: Vec<f64> = magnitudes
        .into_iter()
        .map(|mut m| {
            m.sort_by(f64::total_cmp);
            let rank = ((percentile / 100.0) * (m.len() - 1) as f64).round() as usize;
            let b = m[rank.min(m.len() - 1)];
            if b > 0.0 { b } else { 1.0 }
        })
        .collect();
    net.map_specs(|l, s| {
        let mut s = s.clone();
        s.activation_quant = Some(QuantConfig::new(bits, bounds[l])?);
        s.weight_quant = match net.params(l) {
            Some(p) => {
                let max = p.weights.data().iter().fold(0.0f64, |m, w| m.max(w.as_f64().abs()));
                Some(QuantConfig::new(bits, if max > 0.0 { max } else { 1.0 })?)
            }
            None => None,
        };
        Ok(s)
    })
}
