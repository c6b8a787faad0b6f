//! Degrees of freedom, kernel-quadrature compression and generalization
//! bounds for deep ReLU networks.
//!
//! Each hidden layer of a wide network defines a kernel through the previous
//! layer's activations. [`spectral`] estimates that kernel's spectrum and the
//! degree of freedom `N(λ) = Tr[(T̂+λ)^{-1} T̂]`; [`compress`] samples nodes by
//! leverage scores to build a narrow network of width `≈ 5 N(λ) log N(λ)`
//! per layer; [`bounds`] turns widths and `λ` into the bias and variance terms
//! of the generalization bound; [`estimators`] fits ERM and Bayesian
//! students to teacher data and measures empirical rates.
//!
//! Linear algebra, spectra and the network type are generic over [`Real`]
//! (`f32` or `f64`); compression, bounds and estimators work in `f64`.

pub mod bounds;
pub mod compress;
pub mod error;
pub mod estimators;
pub mod io;
pub mod linalg;
pub mod net;
pub mod scalar;
pub mod spectral;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Matrix = linalg::Matrix<f64>;
pub type Network = net::Network<f64>;
pub type Layer = net::Layer<f64>;
pub type NormBudget = net::NormBudget<f64>;
pub type Dataset = net::Dataset<f64>;
pub type Spectrum = spectral::Spectrum<f64>;

pub type Matrix32 = linalg::Matrix<f32>;
pub type Network32 = net::Network<f32>;
pub type Spectrum32 = spectral::Spectrum<f32>;
