use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::inject::{injectable_layers, run_plan, FaultPlan};
use crate::model_io::Dataset;
use crate::network::{NetworkGraph, QuantTarget};
use crate::scalar::Real;
use crate::tensor::{slice_rmse, slice_stats, Tensor};

/// Quantized golden outputs of the layers that faulty runs restart from,
/// for every image of a dataset.
pub(crate) struct Golden<T> {
    outputs: Vec<Vec<Option<Tensor<T>>>>,
    final_var: Vec<f64>,
    correct: Vec<bool>,
}

/// One faulty inference.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Outcome {
    pub rrmse: f64,
    pub correct: bool,
    pub flips: usize,
}

impl<T: Real> Golden<T> {
    pub fn new(net: &NetworkGraph<T>, data: &Dataset<T>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Campaign("dataset is empty".into()));
        }
        if data.image_shape() != net.input_shape() {
            return Err(Error::ShapeMismatch { expected: net.input_shape().to_vec(), actual: data.image_shape().to_vec() });
        }
        if data.classes() > net.classes() {
            return Err(Error::Campaign(format!(
                "dataset has {} classes, network only {}",
                data.classes(),
                net.classes()
            )));
        }
        let n = net.len();
        let mut keep = vec![false; n];
        keep[n - 1] = true;
        for l in net.parametric_layers() {
            if l > 0 {
                keep[l - 1] = true;
            }
        }
        for l in injectable_layers(net, QuantTarget::Activations) {
            keep[l] = true;
        }
        let per_image = data
            .images()
            .par_iter()
            .zip(data.labels())
            .map(|(x, &label)| {
                let trace = net.forward_full(x, true)?;
                let y = trace.final_output();
                let (_, var) = slice_stats(y.data())?;
                if var <= 0.0 {
                    return Err(Error::DegenerateReference.at_layer(n - 1));
                }
                let outs = trace
                    .outputs()
                    .iter()
                    .zip(&keep)
                    .map(|(o, &k)| k.then(|| o.clone()))
                    .collect::<Vec<_>>();
                Ok((outs, var, y.argmax() == label))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut g = Golden { outputs: Vec::new(), final_var: Vec::new(), correct: Vec::new() };
        for (o, v, c) in per_image {
            g.outputs.push(o);
            g.final_var.push(v);
            g.correct.push(c);
        }
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn logits(&self, image: usize) -> &Tensor<T> {
        self.outputs[image].last().and_then(|o| o.as_ref()).expect("final output kept")
    }

    pub fn correct(&self, image: usize) -> bool {
        self.correct[image]
    }

    pub fn accuracy(&self) -> f64 {
        self.correct.iter().filter(|&&c| c).count() as f64 / self.len() as f64
    }

    /// Runs one faulty inference of `image` and returns the faulty logits.
    pub fn faulty_logits(&self, net: &NetworkGraph<T>, data: &Dataset<T>, image: usize, plan: &FaultPlan) -> Result<Tensor<T>> {
        let outs = &self.outputs[image];
        let (_, mut y) = run_plan(net, data.image(image), |l| outs.get(l).and_then(|o| o.as_ref()), plan, false)?;
        Ok(y.pop().expect("final output"))
    }

    pub fn rrmse_of(&self, image: usize, faulty: &Tensor<T>) -> Result<f64> {
        let g = self.logits(image);
        let diff: Vec<T> = faulty.data().iter().zip(g.data()).map(|(&a, &b)| a - b).collect();
        Ok(slice_rmse(&diff)? / self.final_var[image].sqrt())
    }

    pub fn infer(&self, net: &NetworkGraph<T>, data: &Dataset<T>, image: usize, plan: &FaultPlan) -> Result<Outcome> {
        let flips = plan.record.flip_count();
        if flips == 0 {
            return Ok(Outcome { rrmse: 0.0, correct: self.correct[image], flips });
        }
        let y = self.faulty_logits(net, data, image, plan)?;
        Ok(Outcome { rrmse: self.rrmse_of(image, &y)?, correct: y.argmax() == data.label(image), flips })
    }
}
