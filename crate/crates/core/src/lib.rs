//! State estimation for linear dynamic models whose state and observation
//! noise follow Dirichlet process mixtures of Gaussians.

pub mod apps;
pub mod dpm;
pub mod error;
pub mod gaussian;
pub mod linalg;
pub mod mcmc;
pub mod noise;
pub mod rbpf;
pub mod simulate;
pub mod statespace;

pub use dpm::{AlphaPrior, BaseMeasure, ClusterRegistry, DpHyper, PsiPrior};
pub use error::{Error, Result};
pub use gaussian::{GaussianCluster, NiwParams, RngStream};
pub use noise::{Label, NoiseProcess, NoiseSide, SpikeMass};
pub use statespace::{KalmanBelief, LinearGaussianModel, NoisePair, TimeVarying};
