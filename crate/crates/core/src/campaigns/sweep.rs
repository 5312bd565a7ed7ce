use crate::error::{Error, Result};
use crate::inject::{InjectionMode, FaultSpec};
use crate::network::QuantTarget;
use crate::scalar::Real;
use crate::stats::{ber_rrmse_scaling, fit_empirical, msb_rate_matching_rrmse, msb_to_standard_rrmse, AccuracyModelEmpirical};

use super::measure::{CampaignSpec, Session};

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub ber: f64,
    pub mode: &'static str,
    pub trials: usize,
    pub images: usize,
    pub flips_total: usize,
    pub rrmse_mean: f64,
    pub rrmse_stderr: f64,
    pub accuracy: f64,
    pub accuracy_stderr: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    /// One row per requested BER, in request order.
    pub rows: Vec<SweepRow>,
    /// MSB-mode measurements behind an accelerated sweep; empty otherwise.
    pub anchors: Vec<SweepRow>,
    pub faulty_inferences: usize,
    pub clean_accuracy: f64,
    pub model: Option<AccuracyModelEmpirical>,
    pub fit_residual: Option<f64>,
}

/// Measures RRMSE and accuracy at every BER of `spec.bers`.
pub fn ber_sweep_standard<T: Real>(session: &Session<T>, spec: &CampaignSpec) -> Result<SweepResult> {
    spec.validate()?;
    let mut rows = Vec::with_capacity(spec.bers.len());
    let mut faulty = 0;
    for &ber in &spec.bers {
        let s = spec.with_rate(ber);
        let m = session.measure(&s)?;
        if ber > 0.0 {
            faulty += m.inferences;
        }
        rows.push(SweepRow {
            ber,
            mode: "standard",
            trials: spec.trials,
            images: m.inferences / spec.trials,
            flips_total: m.flips,
            rrmse_mean: m.rrmse.mean,
            rrmse_stderr: m.rrmse.stderr,
            accuracy: m.accuracy.mean,
            accuracy_stderr: m.accuracy.stderr,
            seed: spec.fault.seed,
        });
    }
    Ok(SweepResult {
        rows,
        anchors: Vec::new(),
        faulty_inferences: faulty,
        clean_accuracy: session.clean_accuracy(),
        model: None,
        fit_residual: None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AcceleratedOptions {
    pub anchor_count: usize,
    /// Images per trial at each anchor; defaults to the spec's.
    pub images: Option<usize>,
    pub trials: Option<usize>,
}

impl Default for AcceleratedOptions {
    fn default() -> Self {
        AcceleratedOptions { anchor_count: 4, images: None, trials: None }
    }
}

/// `count` log-evenly spaced BERs spanning the positive entries of `bers`.
pub fn anchor_bers(bers: &[f64], count: usize) -> Result<Vec<f64>> {
    let pos: Vec<f64> = bers.iter().copied().filter(|&b| b > 0.0).collect();
    if count < 2 {
        return Err(Error::Campaign("at least 2 anchors are needed".into()));
    }
    let lo = pos.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = pos.iter().copied().fold(0.0, f64::max);
    if pos.is_empty() || lo == hi {
        return Err(Error::Campaign("anchors need a BER range with two distinct positive values".into()));
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..count).map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp()).collect())
}

fn uniform_bits<T: Real>(session: &Session<T>, fault: &FaultSpec) -> Result<u32> {
    let layers = fault.resolve(session.net)?;
    let bits: Vec<u32> = layers
        .iter()
        .filter_map(|&l| match fault.target {
            QuantTarget::Weights => session.net.layer(l).weight_quant,
            QuantTarget::Activations => session.net.layer(l).activation_quant,
        })
        .map(|c| c.bits())
        .collect();
    match bits.first() {
        Some(&b) if bits.iter().all(|&x| x == b) => Ok(b),
        Some(_) => Err(Error::Campaign("accelerated sweep needs one bit width across targeted layers".into())),
        None => Err(Error::Campaign("no targeted layers".into())),
    }
}

/// Predicts the sweep from MSB-only runs at a few anchor BERs.
///
/// At each anchor BER `p` the MSB flip rate is chosen so that its expected
/// output disturbance equals random-bit injection at `p`. The measured MSB
/// RRMSE is converted to random-bit RRMSE and both it and the anchor accuracy
/// feed the empirical accuracy fit. Grid RRMSEs are scaled from the nearest
/// anchor (in log BER) and mapped through the fitted curve.
pub fn ber_sweep_accelerated<T: Real>(
    session: &Session<T>,
    spec: &CampaignSpec,
    opts: &AcceleratedOptions,
) -> Result<SweepResult> {
    spec.validate()?;
    let bits = uniform_bits(session, &spec.fault)?;
    let anchors = anchor_bers(&spec.bers, opts.anchor_count)?;
    let mut base = spec.clone();
    base.fault.mode = InjectionMode::MsbOnly;
    base.images = opts.images.unwrap_or(spec.images);
    base.trials = opts.trials.unwrap_or(spec.trials);

    let mut anchor_rows = Vec::with_capacity(anchors.len());
    let mut faulty = 0;
    for &p in &anchors {
        let q = msb_rate_matching_rrmse(p, bits);
        let m = session.measure(&base.with_rate(q.min(1.0)))?;
        faulty += m.inferences;
        // equal flip counts: MSB per-word rate q matches per-bit rate q / bits
        let to_p = |r: f64| -> Result<f64> { ber_rrmse_scaling(msb_to_standard_rrmse(r, bits)?, q / bits as f64, p) };
        anchor_rows.push(SweepRow {
            ber: p,
            mode: "msb_anchor",
            trials: base.trials,
            images: m.inferences / base.trials,
            flips_total: m.flips,
            rrmse_mean: to_p(m.rrmse.mean)?,
            rrmse_stderr: to_p(m.rrmse.stderr)?,
            accuracy: m.accuracy.mean,
            accuracy_stderr: m.accuracy.stderr,
            seed: spec.fault.seed,
        });
    }

    let acc_clean = session.clean_accuracy();
    let nc = session.net.classes();
    let points: Vec<(f64, f64)> = anchor_rows.iter().map(|r| (r.rrmse_mean, r.accuracy)).collect();
    let fit = fit_empirical(&points, acc_clean, nc)?;
    let rms_residual = (fit.residual / points.len() as f64).sqrt();

    let rows = spec
        .bers
        .iter()
        .map(|&ber| {
            if ber == 0.0 {
                return Ok((ber, 0.0, 0.0, acc_clean));
            }
            let nearest = anchor_rows
                .iter()
                .min_by(|a, b| (a.ber.ln() - ber.ln()).abs().total_cmp(&(b.ber.ln() - ber.ln()).abs()))
                .expect("anchors non-empty");
            let r = ber_rrmse_scaling(nearest.rrmse_mean, nearest.ber, ber)?;
            let se = ber_rrmse_scaling(nearest.rrmse_stderr, nearest.ber, ber)?;
            Ok((ber, r, se, fit.model.accuracy(r)))
        })
        .map(|row: Result<(f64, f64, f64, f64)>| {
            let (ber, r, se, acc) = row?;
            Ok(SweepRow {
                ber,
                mode: "accelerated",
                trials: 0,
                images: 0,
                flips_total: 0,
                rrmse_mean: r,
                rrmse_stderr: se,
                accuracy: acc,
                accuracy_stderr: if ber == 0.0 { 0.0 } else { rms_residual },
                seed: spec.fault.seed,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SweepResult {
        rows,
        anchors: anchor_rows,
        faulty_inferences: faulty,
        clean_accuracy: acc_clean,
        model: Some(fit.model),
        fit_residual: Some(fit.residual),
    })
}
