//! Fault-injection campaigns: measurements, sweeps and the layer studies.
//!
//! All trials run on the current rayon pool. Results are collected in trial
//! order and reduced sequentially, so they do not depend on the pool size.

mod fragile;
mod golden;
mod measure;
mod studies;
mod sweep;

pub use fragile::{combinations, fragile_layers_accelerated, fragile_layers_bruteforce, FragileLayerReport, FragileMethod, SubsetScore};
pub use measure::{
    measure_accuracy, measure_rrmse, CampaignSpec, ConvergencePoint, ConvergenceTrace, Estimate, ImageSampling, Measurement,
    Session,
};
pub use studies::{
    aggregation_validation, bitwidth_comparison, bound_sweep, class_subset_experiment, layer_propagation_experiment,
    linear_fit, AggregationResult, BitwidthResult, BoundRow, BoundSweepResult, ClassSubsetRow, ComboRow,
    PropagationResult, SingleLayerRow,
};
pub use sweep::{anchor_bers, ber_sweep_accelerated, ber_sweep_standard, AcceleratedOptions, SweepResult, SweepRow};
