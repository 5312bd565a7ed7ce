//! Closed-form and fitted error models.

pub mod accuracy;
pub mod diagnostics;
pub mod fit;
pub mod models;
pub mod quadrature;
pub mod special;

pub use accuracy::{binary_accuracy, empirical_accuracy, multiclass_accuracy, AccuracyModelAnalytic, AccuracyModelEmpirical};
pub use diagnostics::{normality_diagnostics, NormalityReport};
pub use fit::{fit_empirical, EmpiricalFit};
pub use models::{
    aggregate_rrmse, ber_rrmse_scaling, msb_gain, msb_rate_matching_rrmse, msb_to_standard_rrmse,
    predict_rmse_activation_fault, predict_rmse_weight_fault, propagate_variance, sigma_delta, variance_product,
};
pub use special::{erf, normcdf, normpdf};
