//! Sparse variational Gaussian-process regression and profile construction.

pub mod hetero;
pub mod kernel;
pub mod profile;
pub mod sparse;
pub mod tune;

pub use hetero::{fit_heteroscedastic, heteroscedastic_variance, knn_bandwidth, KernelNoise};
pub use kernel::{ou_kernel, Kernel, KernelKind, KernelParams};
pub use profile::{combine_profile, profile_grid, Profile};
pub use sparse::{GprFit, NoiseModel, PriorMean};
pub use tune::{
    default_pseudo_count, stratified_pseudo_inputs, total_objective, tune_homoscedastic,
    tune_hyperparameters, TrainingSet, TuneResult,
};
