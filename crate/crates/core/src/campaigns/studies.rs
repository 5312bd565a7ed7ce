use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::inject::{expected_flip_count, injectable_layers, run_plan, trial_rng, FaultPlan, FaultSpec, LayerSelector};
use crate::model_io::Dataset;
use crate::network::NetworkGraph;
use crate::reduce::{mean_stderr, pairwise_sum_by};
use crate::scalar::Real;
use crate::stats::{aggregate_rrmse, sigma_delta};
use crate::tensor::{slice_rmse, slice_stats};

use super::measure::{rrmse_estimate, CampaignSpec, Estimate, Session};

const SUBSET_STREAM: usize = usize::MAX - 1;
const COMBO_STREAM: usize = usize::MAX - 2;

#[derive(Clone, Debug, PartialEq)]
pub struct PropagationResult {
    pub inject_layer: usize,
    /// RRMSE of every layer's output, quadratic mean over inferences.
    pub per_layer: Vec<Estimate>,
    pub inferences: usize,
    pub flips: usize,
}

impl PropagationResult {
    /// Largest over smallest RRMSE among `layers`.
    pub fn spread(&self, layers: &[usize]) -> f64 {
        let v: Vec<f64> = layers.iter().map(|&l| self.per_layer[l].mean).collect();
        let max = v.iter().copied().fold(0.0, f64::max);
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        max / min
    }
}

/// Injects faults into layer `inject_layer` only and measures the RRMSE of
/// every layer output against the golden run.
pub fn layer_propagation_experiment<T: Real>(
    net: &NetworkGraph<T>,
    data: &Dataset<T>,
    spec: &CampaignSpec,
    inject_layer: usize,
) -> Result<PropagationResult> {
    let mut spec = spec.clone();
    spec.fault.layers = LayerSelector::only([inject_layer]);
    let layers = spec.fault.resolve(net)?;
    let session = Session::new(net, data)?;
    let rows = session.map_schedule(&spec, |img, idx| {
        let golden = net.forward_full(data.image(img), true)?;
        let plan = FaultPlan::sample(net, &spec.fault, &layers, idx);
        let flips = plan.record.flip_count();
        let mut r = vec![0.0; net.len()];
        if flips > 0 {
            let (start, outs) = run_plan(net, data.image(img), |l| golden.layer(l), &plan, true)?;
            for (i, out) in outs.iter().enumerate() {
                let l = start + i;
                let g = golden.layer(l).expect("full trace");
                let diff: Vec<T> = out.data().iter().zip(g.data()).map(|(&a, &b)| a - b).collect();
                let (_, var) = slice_stats(g.data())?;
                if var <= 0.0 {
                    return Err(Error::DegenerateReference.at_layer(l));
                }
                r[l] = slice_rmse(&diff)? / var.sqrt();
            }
        }
        Ok((r, flips))
    })?;
    let per_layer = (0..net.len())
        .map(|l| rrmse_estimate(&rows.iter().map(|(r, _)| r[l]).collect::<Vec<_>>()))
        .collect();
    Ok(PropagationResult {
        inject_layer,
        per_layer,
        inferences: rows.len(),
        flips: rows.iter().map(|r| r.1).sum(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SingleLayerRow {
    pub layer: usize,
    pub ber: f64,
    pub rrmse: Estimate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComboRow {
    /// `(layer, ber)` pairs injected together.
    pub layers: Vec<(usize, f64)>,
    pub measured: Estimate,
    pub predicted: f64,
    pub relative_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregationResult {
    pub singles: Vec<SingleLayerRow>,
    pub combos: Vec<ComboRow>,
    pub mean_relative_error: f64,
    pub faulty_inferences: usize,
}

impl AggregationResult {
    pub fn single(&self, layer: usize, ber: f64) -> Option<&SingleLayerRow> {
        self.singles.iter().find(|s| s.layer == layer && s.ber == ber)
    }

    /// Aggregated single-layer RRMSEs for an arbitrary combination.
    pub fn predict(&self, combo: &[(usize, f64)]) -> Result<f64> {
        let parts = combo
            .iter()
            .map(|&(l, b)| {
                self.single(l, b)
                    .map(|s| s.rrmse.mean)
                    .ok_or_else(|| Error::Campaign(format!("no single-layer measurement for layer {l} at BER {b}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(aggregate_rrmse(&parts))
    }
}

/// Measures each injectable layer alone at each BER level, then `n_combos`
/// random multi-layer combinations (2 or more layers, each at a random
/// level), and compares every combination with the aggregated prediction.
///
/// A layer's flips come from its own (seed, inference, layer) stream, so a
/// combination applies exactly the union of the flips its single-layer runs
/// applied.
pub fn aggregation_validation<T: Real>(
    session: &Session<T>,
    spec: &CampaignSpec,
    levels: &[f64],
    n_combos: usize,
) -> Result<AggregationResult> {
    spec.validate()?;
    let net = session.net;
    let layers = match &spec.fault.layers {
        LayerSelector::All => injectable_layers(net, spec.fault.target),
        LayerSelector::Layers(s) => s.iter().copied().collect(),
    };
    if layers.len() < 2 {
        return Err(Error::Campaign("aggregation needs at least two injectable layers".into()));
    }
    if levels.is_empty() || levels.iter().any(|&b| !(b > 0.0 && b <= 1.0)) {
        return Err(Error::Campaign("BER levels must be in (0, 1]".into()));
    }
    let layer_spec = |l: usize, ber: f64| FaultSpec {
        layers: LayerSelector::only([l]),
        rate: ber,
        ..spec.fault.clone()
    };
    let mut singles = Vec::new();
    let mut faulty = 0;
    for &l in &layers {
        for &b in levels {
            let m = session.measure(&CampaignSpec { fault: layer_spec(l, b), ..spec.clone() })?;
            faulty += m.inferences;
            singles.push(SingleLayerRow { layer: l, ber: b, rrmse: m.rrmse });
        }
    }
    let mut rng = trial_rng(spec.fault.seed, 0, COMBO_STREAM);
    let mut result = AggregationResult { singles, combos: Vec::new(), mean_relative_error: 0.0, faulty_inferences: 0 };
    for _ in 0..n_combos {
        let size = rng.random_range(2..=layers.len());
        let mut chosen: Vec<usize> = layers.choose_multiple(&mut rng, size).copied().collect();
        chosen.sort_unstable();
        let combo: Vec<(usize, f64)> = chosen.iter().map(|&l| (l, levels[rng.random_range(0..levels.len())])).collect();
        let specs: Vec<FaultSpec> = combo.iter().map(|&(l, b)| layer_spec(l, b)).collect();
        let outcomes = session.outcomes_with(spec, |idx| {
            let mut flips = Vec::new();
            for (s, &(l, _)) in specs.iter().zip(&combo) {
                flips.extend(FaultPlan::sample(net, s, &[l], idx).record.layers);
            }
            FaultPlan::from_flips(spec.fault.target, flips)
        })?;
        faulty += outcomes.len();
        let measured = session.summarize(spec.fault.seed, &outcomes).rrmse;
        let predicted = result.predict(&combo)?;
        let relative_error = if measured.mean > 0.0 { (measured.mean - predicted).abs() / measured.mean } else { 0.0 };
        result.combos.push(ComboRow { layers: combo, measured, predicted, relative_error });
    }
    result.mean_relative_error = if result.combos.is_empty() {
        0.0
    } else {
        pairwise_sum_by(&result.combos, |c| c.relative_error) / result.combos.len() as f64
    };
    result.faulty_inferences = faulty;
    Ok(result)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundRow {
    pub bound: f64,
    pub rrmse: Estimate,
    pub clean_accuracy: f64,
    pub flips: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundSweepResult {
    pub bits: u32,
    pub rows: Vec<BoundRow>,
    /// Coefficient of determination of a least-squares line through (bound, rrmse).
    pub r_squared: f64,
    pub slope: f64,
    pub intercept: f64,
}

/// Least-squares line `y = slope * x + intercept` and its R².
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, my - slope * mx, r2)
}

/// Re-quantizes the fault target of `net` with each bound (and `bits`) and
/// measures output RRMSE at `spec.fault.rate`.
pub fn bound_sweep<T: Real>(
    net: &NetworkGraph<T>,
    data: &Dataset<T>,
    spec: &CampaignSpec,
    bits: u32,
    bounds: &[f64],
) -> Result<BoundSweepResult> {
    if bounds.len() < 2 {
        return Err(Error::Campaign("bound sweep needs at least two bounds".into()));
    }
    let mut rows = Vec::with_capacity(bounds.len());
    for &b in bounds {
        let q = net.with_quant(spec.fault.target, Some(bits), Some(b))?;
        let session = Session::new(&q, data)?;
        let m = session.measure(spec)?;
        rows.push(BoundRow { bound: b, rrmse: m.rrmse, clean_accuracy: session.clean_accuracy(), flips: m.flips });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.bound).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.rrmse.mean).collect();
    let (slope, intercept, r_squared) = linear_fit(&xs, &ys);
    Ok(BoundSweepResult { bits, rows, r_squared, slope, intercept })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BitwidthResult {
    pub rrmse_int8: Estimate,
    pub rrmse_int16: Estimate,
    pub flips_int8: usize,
    pub flips_int16: usize,
    pub expected_flips_int8: f64,
    pub expected_flips_int16: f64,
    /// sigma_delta(8, b) / sigma_delta(16, b).
    pub sigma_ratio: f64,
}

impl BitwidthResult {
    pub fn relative_difference(&self) -> f64 {
        (self.rrmse_int8.mean - self.rrmse_int16.mean).abs() / self.rrmse_int8.mean
    }
}

/// Output RRMSE with the fault target stored as int8 and as int16 at the
/// same BER and bounds (`bound` overrides the stored bounds when given).
pub fn bitwidth_comparison<T: Real>(
    net: &NetworkGraph<T>,
    data: &Dataset<T>,
    spec: &CampaignSpec,
    bound: Option<f64>,
) -> Result<BitwidthResult> {
    let n8 = net.with_quant(spec.fault.target, Some(8), bound)?;
    let n16 = net.with_quant(spec.fault.target, Some(16), bound)?;
    let m8 = Session::new(&n8, data)?.measure(spec)?;
    let m16 = Session::new(&n16, data)?.measure(spec)?;
    Ok(BitwidthResult {
        rrmse_int8: m8.rrmse,
        rrmse_int16: m16.rrmse,
        flips_int8: m8.flips,
        flips_int16: m16.flips,
        expected_flips_int8: expected_flip_count(&n8, &spec.fault)?,
        expected_flips_int16: expected_flip_count(&n16, &spec.fault)?,
        sigma_ratio: sigma_delta(8, 1.0f64) / sigma_delta(16, 1.0f64),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassSubsetRow {
    pub ber: f64,
    pub nc: usize,
    pub accuracy: Estimate,
    pub rrmse: Estimate,
}

/// Accuracy when classification is restricted to `nc` of the classes, for
/// each subset size and BER.
///
/// Each image gets one random ordering of the wrong classes; the subset of
/// size `nc` is the true class plus the first `nc - 1` of them, so smaller
/// subsets are nested in larger ones. All sizes are scored on the same faulty
/// logits.
pub fn class_subset_experiment<T: Real>(
    session: &Session<T>,
    spec: &CampaignSpec,
    sizes: &[usize],
) -> Result<Vec<ClassSubsetRow>> {
    spec.validate()?;
    let classes = session.net.classes();
    if sizes.is_empty() || sizes.iter().any(|&s| s < 2 || s > classes) {
        return Err(Error::Campaign(format!("subset sizes must lie in [2, {classes}]")));
    }
    let data = session.data;
    let orders: Vec<Vec<usize>> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let label = data.label(i);
            let mut others: Vec<usize> = (0..classes).filter(|&c| c != label).collect();
            others.shuffle(&mut trial_rng(spec.fault.seed, i as u64, SUBSET_STREAM));
            others
        })
        .collect();
    let mut rows = Vec::new();
    for &ber in &spec.bers {
        let s = spec.with_rate(ber);
        let layers = s.fault.resolve(session.net)?;
        let per = session.map_schedule(&s, |img, idx| {
            let plan = FaultPlan::sample(session.net, &s.fault, &layers, idx);
            let y = if plan.record.flip_count() == 0 {
                session.golden.logits(img).clone()
            } else {
                session.golden.faulty_logits(session.net, data, img, &plan)?
            };
            let r = session.golden.rrmse_of(img, &y)?;
            let label = data.label(img);
            let hits = sizes
                .iter()
                .map(|&nc| {
                    let target = y.data()[label];
                    // ties go to the lowest class index
                    !orders[img][..nc - 1].iter().any(|&c| {
                        let v = y.data()[c];
                        v > target || (v == target && c < label)
                    })
                })
                .collect::<Vec<bool>>();
            Ok((r, hits))
        })?;
        let r = rrmse_estimate(&per.iter().map(|p| p.0).collect::<Vec<_>>());
        for (k, &nc) in sizes.iter().enumerate() {
            let hits: Vec<f64> = per.iter().map(|p| if p.1[k] { 1.0 } else { 0.0 }).collect();
            let (mean, stderr) = mean_stderr(&hits);
            rows.push(ClassSubsetRow { ber, nc, accuracy: Estimate { mean, stderr }, rrmse: r });
        }
    }
    Ok(rows)
}
