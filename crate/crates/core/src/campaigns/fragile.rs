use crate::error::{Error, Result};
use crate::inject::{injectable_layers, InjectionMode, LayerSelector};
use crate::scalar::Real;
use crate::stats::{aggregate_rrmse, ber_rrmse_scaling, msb_rate_matching_rrmse, msb_to_standard_rrmse};

use super::measure::{CampaignSpec, Session};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FragileMethod {
    BruteForce,
    Accelerated,
}

impl FragileMethod {
    pub fn tag(&self) -> &'static str {
        match self {
            FragileMethod::BruteForce => "bruteforce",
            FragileMethod::Accelerated => "accelerated",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubsetScore {
    /// Layers kept fault-free.
    pub protected: Vec<usize>,
    /// Brute force: accuracy with the other layers injected (higher is
    /// better). Accelerated: aggregated RRMSE of the unprotected layers
    /// (lower is better).
    pub score: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FragileLayerReport {
    pub method: FragileMethod,
    pub k: usize,
    pub ber: f64,
    pub layers: Vec<usize>,
    /// Random-bit RRMSE at `ber` of each layer injected alone (accelerated only).
    pub per_layer_rrmse: Vec<(usize, f64)>,
    /// Best first.
    pub ranked: Vec<SubsetScore>,
    pub chosen: Vec<usize>,
    pub faulty_inferences: usize,
}

/// All `k`-subsets of `items`, in lexicographic order.
pub fn combinations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    fn rec(items: &[usize], k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..items.len() {
            if items.len() - i < k - cur.len() {
                break;
            }
            cur.push(items[i]);
            rec(items, k, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if k <= items.len() {
        rec(items, k, 0, &mut Vec::new(), &mut out);
    }
    out
}

fn target_layers<T: Real>(session: &Session<T>, spec: &CampaignSpec, k: usize) -> Result<Vec<usize>> {
    spec.validate()?;
    let layers = match &spec.fault.layers {
        LayerSelector::All => injectable_layers(session.net, spec.fault.target),
        LayerSelector::Layers(s) => s.iter().copied().collect(),
    };
    if k > layers.len() {
        return Err(Error::Campaign(format!("k = {k} exceeds the {} candidate layers", layers.len())));
    }
    Ok(layers)
}

/// Measures accuracy for every way of protecting `k` layers while the rest
/// are injected at `spec.fault.rate`. Every subset sees the same images and,
/// per layer, the same flips.
pub fn fragile_layers_bruteforce<T: Real>(session: &Session<T>, spec: &CampaignSpec, k: usize) -> Result<FragileLayerReport> {
    let layers = target_layers(session, spec, k)?;
    let mut ranked = Vec::new();
    let mut faulty = 0;
    for protected in combinations(&layers, k) {
        let exposed: Vec<usize> = layers.iter().copied().filter(|l| !protected.contains(l)).collect();
        let (score, stderr) = if exposed.is_empty() {
            (session.clean_accuracy_of(spec)?, 0.0)
        } else {
            let mut s = spec.clone();
            s.fault.layers = LayerSelector::only(exposed);
            let m = session.measure(&s)?;
            faulty += m.inferences;
            (m.accuracy.mean, m.accuracy.stderr)
        };
        ranked.push(SubsetScore { protected, score, stderr });
    }
    // stable: equal accuracies keep lexicographic order
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(FragileLayerReport {
        method: FragileMethod::BruteForce,
        k,
        ber: spec.fault.rate,
        chosen: ranked[0].protected.clone(),
        layers,
        per_layer_rrmse: Vec::new(),
        ranked,
        faulty_inferences: faulty,
    })
}

/// Measures each layer once with MSB-only injection, converts to random-bit
/// RRMSE at `spec.fault.rate`, and scores each `k`-subset by the aggregated
/// RRMSE of the layers it leaves unprotected.
pub fn fragile_layers_accelerated<T: Real>(session: &Session<T>, spec: &CampaignSpec, k: usize) -> Result<FragileLayerReport> {
    let layers = target_layers(session, spec, k)?;
    let p = spec.fault.rate;
    if !(p > 0.0) {
        return Err(Error::Campaign("accelerated fragile-layer search needs a positive BER".into()));
    }
    let mut per_layer = Vec::with_capacity(layers.len());
    let mut faulty = 0;
    for &l in &layers {
        let cfg = match spec.fault.target {
            crate::network::QuantTarget::Weights => session.net.layer(l).weight_quant,
            crate::network::QuantTarget::Activations => session.net.layer(l).activation_quant,
        }
        .ok_or_else(|| Error::Campaign(format!("layer {l} is not quantized")))?;
        let bits = cfg.bits();
        let q = msb_rate_matching_rrmse(p, bits).min(1.0);
        let mut s = spec.with_rate(q);
        s.fault.mode = InjectionMode::MsbOnly;
        s.fault.layers = LayerSelector::only([l]);
        let m = session.measure(&s)?;
        faulty += m.inferences;
        let r = ber_rrmse_scaling(msb_to_standard_rrmse(m.rrmse.mean, bits)?, q / bits as f64, p)?;
        per_layer.push((l, r));
    }
    let mut ranked: Vec<SubsetScore> = combinations(&layers, k)
        .into_iter()
        .map(|protected| {
            let parts: Vec<f64> = per_layer.iter().filter(|(l, _)| !protected.contains(l)).map(|p| p.1).collect();
            SubsetScore { protected, score: aggregate_rrmse(&parts), stderr: 0.0 }
        })
        .collect();
    ranked.sort_by(|a, b| a.score.total_cmp(&b.score));
    Ok(FragileLayerReport {
        method: FragileMethod::Accelerated,
        k,
        ber: p,
        chosen: ranked[0].protected.clone(),
        layers,
        per_layer_rrmse: per_layer,
        ranked,
        faulty_inferences: faulty,
    })
}
