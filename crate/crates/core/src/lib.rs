//! Phase-congruency similarity enhancement and affine registration for
//! multispectral and multimodal image pairs.
//!
//! The pipeline has three parts:
//!
//! - [`gabor`]: a bank of DC-free quadrature Gabor kernels whose taps are
//!   modulated elementwise by learnable weights.
//! - [`pc`]: the phase-congruency network that turns the bank responses
//!   into per-orientation feature maps in `[0, 1]`, with a trainable noise
//!   threshold (`alpha`) and phase-deviation penalty (`beta`).
//! - [`register`]: coarse-to-fine gradient descent on the mean squared
//!   difference between the feature maps of a reference and a floating
//!   image under an affine model.
//!
//! [`tuner`] fits the trainable parameters on aligned pairs by
//! simultaneous-perturbation stochastic approximation, [`metrics`] holds
//! SSIM, the training loss and the registration error measures, and
//! [`synth`] generates pseudo-multimodal fixtures with known transforms.

pub mod error;
pub mod gabor;
pub mod imgcore;
pub mod metrics;
pub mod pc;
pub mod register;
pub mod synth;
pub mod tuner;
pub mod weights;

pub use error::{Error, Result};
pub use gabor::{BankConfig, FilterBank, Modulation, QuadratureResponses};
pub use imgcore::{AffineParams, GrayImage, Pyramid, ValidityMask};
pub use metrics::LossConfig;
pub use pc::{FeatureStack, PcParams, Threshold};
pub use register::{RegConfig, RegResult};
pub use tuner::TrainConfig;
pub use weights::Weights;
