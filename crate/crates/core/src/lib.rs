//! Latent association mining for sparse binary data.
//!
//! Binary observations are modeled as thresholded latent Gaussians with
//! per-cell thresholds `theta_ij = 1 - exp(-tau_i alpha_j)`. After fitting
//! the thresholds, standardized residuals give a test statistic for latent
//! correlation between a variable and a set, and an iterative FDR-controlled
//! search grows seeds into coherent sets.
//!
//! ```
//! use lamb_core::{BinaryDataset, FitOptionsF64, fit_empirical, theta_matrix, default_eps_theta,
//!                 standardize, mine_all};
//!
//! let ds = BinaryDataset::parse_transactions("a b\na b c\nc\nb\na\n", 1 << 20).unwrap();
//! let fit = fit_empirical::<f64>(&ds, &FitOptionsF64::default()).unwrap();
//! let theta = theta_matrix(&fit, default_eps_theta(ds.n())).unwrap();
//! let u = standardize(&ds, &theta).unwrap();
//! let sets = mine_all(&u, &[0, 1, 2], 0.05, 100).unwrap();
//! assert!(sets.iter().all(|s| s.members.len() >= 2));
//! ```

pub mod dataset;
pub mod error;
pub mod latentcorr;
pub mod miner;
pub mod quadrature;
pub mod scalar;
pub mod simlab;
pub mod special;
pub mod threshold;

pub use dataset::{BinaryDataset, ColumnStats, DEFAULT_TOKEN_LIMIT};
pub use error::{Error, Result};
pub use latentcorr::{pairwise_psi, psi_matrix, pvalue, standardize, sweep, test_statistic, StandardizedMatrix, TestStatistic};
pub use miner::{by_reject, dedup, mine_all, neighborhood, search, step, CoherentSetResult, Neighborhood, Reason, SearchOutcome};
pub use scalar::Real;
pub use threshold::{
    default_eps_theta, fit_empirical, fit_gamma, theta_matrix, FitDocument, FitMethod, FitOptions, GammaPrior,
    ThetaMatrix, ThresholdFit, TauBounds,
};

pub type ThresholdFitF64 = ThresholdFit<f64>;
pub type ThresholdFitF32 = ThresholdFit<f32>;
pub type FitOptionsF64 = FitOptions<f64>;
pub type FitOptionsF32 = FitOptions<f32>;
pub type GammaPriorF64 = GammaPrior<f64>;
pub type GammaPriorF32 = GammaPrior<f32>;
pub type ThetaMatrixF64 = ThetaMatrix<f64>;
pub type ThetaMatrixF32 = ThetaMatrix<f32>;
pub type StandardizedMatrixF64 = StandardizedMatrix<f64>;
pub type StandardizedMatrixF32 = StandardizedMatrix<f32>;
pub type TestStatisticF64 = TestStatistic<f64>;
pub type TestStatisticF32 = TestStatistic<f32>;
