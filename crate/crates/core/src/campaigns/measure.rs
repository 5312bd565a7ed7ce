use rand::seq::index;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::inject::{trial_rng, FaultPlan, FaultSpec};
use crate::model_io::Dataset;
use crate::network::NetworkGraph;
use crate::reduce::{mean_stderr, pairwise_sum_by};
use crate::scalar::Real;

use super::golden::{Golden, Outcome};

/// RNG stream id reserved for image selection.
const IMAGE_STREAM: usize = usize::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageSampling {
    /// One fixed, correctly classified image; one inference per trial.
    Single,
    /// `images` distinct images drawn without replacement per trial.
    Multi,
}

impl ImageSampling {
    pub fn tag(&self) -> &'static str {
        match self {
            ImageSampling::Single => "single",
            ImageSampling::Multi => "multi",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CampaignSpec {
    /// Fault template; sweeps replace its rate with each entry of `bers`.
    pub fault: FaultSpec,
    pub bers: Vec<f64>,
    pub trials: usize,
    pub images: usize,
    pub sampling: ImageSampling,
}

impl CampaignSpec {
    pub fn new(fault: FaultSpec, trials: usize, images: usize) -> Self {
        let bers = vec![fault.rate];
        CampaignSpec { fault, bers, trials, images, sampling: ImageSampling::Multi }
    }

    pub fn with_bers(mut self, bers: Vec<f64>) -> Self {
        self.bers = bers;
        self
    }

    pub fn with_sampling(mut self, sampling: ImageSampling) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn with_rate(&self, rate: f64) -> Self {
        let mut s = self.clone();
        s.fault.rate = rate;
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 || self.images == 0 {
            return Err(Error::Campaign("trials and images must be at least 1".into()));
        }
        if self.bers.is_empty() {
            return Err(Error::Campaign("BER list is empty".into()));
        }
        if let Some(b) = self.bers.iter().find(|b| !(0.0..=1.0).contains(*b)) {
            return Err(Error::Campaign(format!("BER {b} outside [0, 1]")));
        }
        Ok(())
    }

    /// Faulty inferences per measurement point.
    pub fn inferences(&self) -> usize {
        match self.sampling {
            ImageSampling::Single => self.trials,
            ImageSampling::Multi => self.trials * self.images,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergencePoint {
    pub images: usize,
    pub rrmse: f64,
    pub accuracy: f64,
}

/// Running estimates against the number of inferences processed.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceTrace {
    pub seed: u64,
    pub points: Vec<ConvergencePoint>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    /// Root mean square of the per-inference output RRMSE.
    pub rrmse: Estimate,
    pub accuracy: Estimate,
    pub inferences: usize,
    pub flips: usize,
    pub trace: ConvergenceTrace,
}

/// Quadratic-mean RRMSE with a delta-method standard error.
pub(crate) fn rrmse_estimate(r: &[f64]) -> Estimate {
    let sq: Vec<f64> = r.iter().map(|v| v * v).collect();
    let (m2, se2) = mean_stderr(&sq);
    let mean = m2.sqrt();
    Estimate { mean, stderr: if mean > 0.0 { se2 / (2.0 * mean) } else { 0.0 } }
}

fn accuracy_estimate(outcomes: &[Outcome]) -> Estimate {
    let hits: Vec<f64> = outcomes.iter().map(|o| if o.correct { 1.0 } else { 0.0 }).collect();
    let (mean, stderr) = mean_stderr(&hits);
    Estimate { mean, stderr }
}

fn convergence(seed: u64, outcomes: &[Outcome]) -> ConvergenceTrace {
    let mut marks: Vec<usize> = std::iter::successors(Some(1usize), |n| n.checked_mul(2))
        .take_while(|&n| n < outcomes.len())
        .collect();
    marks.push(outcomes.len());
    let points = marks
        .into_iter()
        .map(|n| {
            let head = &outcomes[..n];
            ConvergencePoint {
                images: n,
                rrmse: (pairwise_sum_by(head, |o| o.rrmse * o.rrmse) / n as f64).sqrt(),
                accuracy: head.iter().filter(|o| o.correct).count() as f64 / n as f64,
            }
        })
        .collect();
    ConvergenceTrace { seed, points }
}

/// A network and dataset with their golden outputs, reused across
/// measurements.
pub struct Session<'a, T> {
    pub(crate) net: &'a NetworkGraph<T>,
    pub(crate) data: &'a Dataset<T>,
    pub(crate) golden: Golden<T>,
}

impl<'a, T: Real> Session<'a, T> {
    pub fn new(net: &'a NetworkGraph<T>, data: &'a Dataset<T>) -> Result<Self> {
        Ok(Session { net, data, golden: Golden::new(net, data)? })
    }

    pub fn network(&self) -> &NetworkGraph<T> {
        self.net
    }

    pub fn dataset(&self) -> &Dataset<T> {
        self.data
    }

    /// Quantized fault-free accuracy over the whole dataset.
    pub fn clean_accuracy(&self) -> f64 {
        self.golden.accuracy()
    }

    /// Fault-free accuracy over the images `spec` would visit.
    pub fn clean_accuracy_of(&self, spec: &CampaignSpec) -> Result<f64> {
        let s = self.schedule(spec)?;
        Ok(s.iter().filter(|&&(img, _)| self.golden.correct(img)).count() as f64 / s.len() as f64)
    }

    /// `(image, inference index)` for every inference of one measurement, in
    /// a fixed order.
    pub(crate) fn schedule(&self, spec: &CampaignSpec) -> Result<Vec<(usize, u64)>> {
        spec.validate()?;
        let n = self.data.len();
        match spec.sampling {
            ImageSampling::Single => {
                let img = (0..n)
                    .find(|&i| self.golden.correct(i))
                    .ok_or_else(|| Error::Campaign("no correctly classified image".into()))?;
                Ok((0..spec.trials as u64).map(|t| (img, t)).collect())
            }
            ImageSampling::Multi => {
                if spec.images > n {
                    return Err(Error::Campaign(format!("{} images requested, dataset has {n}", spec.images)));
                }
                let mut out = Vec::with_capacity(spec.inferences());
                for t in 0..spec.trials {
                    let mut rng = trial_rng(spec.fault.seed, t as u64, IMAGE_STREAM);
                    let picks = index::sample(&mut rng, n, spec.images);
                    for (j, img) in picks.into_iter().enumerate() {
                        out.push((img, (t * spec.images + j) as u64));
                    }
                }
                Ok(out)
            }
        }
    }

    /// Per-inference outcomes of one measurement at `fault.rate`, in schedule order.
    pub(crate) fn outcomes(&self, spec: &CampaignSpec) -> Result<Vec<Outcome>> {
        let layers = spec.fault.resolve(self.net)?;
        self.outcomes_with(spec, |idx| FaultPlan::sample(self.net, &spec.fault, &layers, idx))
    }

    /// Like [`Session::outcomes`] with an arbitrary plan per inference index.
    pub(crate) fn outcomes_with(&self, spec: &CampaignSpec, plan: impl Fn(u64) -> FaultPlan + Sync) -> Result<Vec<Outcome>> {
        self.map_schedule(spec, |img, idx| self.golden.infer(self.net, self.data, img, &plan(idx)))
    }

    pub(crate) fn map_schedule<R: Send>(
        &self,
        spec: &CampaignSpec,
        f: impl Fn(usize, u64) -> Result<R> + Sync,
    ) -> Result<Vec<R>> {
        self.schedule(spec)?.par_iter().map(|&(img, idx)| f(img, idx)).collect()
    }

    pub(crate) fn summarize(&self, seed: u64, outcomes: &[Outcome]) -> Measurement {
        let r: Vec<f64> = outcomes.iter().map(|o| o.rrmse).collect();
        Measurement {
            rrmse: rrmse_estimate(&r),
            accuracy: accuracy_estimate(outcomes),
            inferences: outcomes.len(),
            flips: outcomes.iter().map(|o| o.flips).sum(),
            trace: convergence(seed, outcomes),
        }
    }

    pub fn measure(&self, spec: &CampaignSpec) -> Result<Measurement> {
        let outcomes = self.outcomes(spec)?;
        Ok(self.summarize(spec.fault.seed, &outcomes))
    }
}

/// Output RRMSE under `spec.fault`, with its convergence trace.
pub fn measure_rrmse<T: Real>(
    net: &NetworkGraph<T>,
    data: &Dataset<T>,
    spec: &CampaignSpec,
) -> Result<(Estimate, ConvergenceTrace)> {
    let m = Session::new(net, data)?.measure(spec)?;
    Ok((m.rrmse, m.trace))
}

/// Classification accuracy under `spec.fault`.
pub fn measure_accuracy<T: Real>(net: &NetworkGraph<T>, data: &Dataset<T>, spec: &CampaignSpec) -> Result<Estimate> {
    Ok(Session::new(net, data)?.measure(spec)?.accuracy)
}
