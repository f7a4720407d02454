//! Hamiltonian Monte Carlo laboratory.
//!
//! Idealized HMC (exact Hamiltonian flow), unadjusted HMC driven by a
//! second-order integrator, random-walk Metropolis and unadjusted Langevin
//! baselines, synchronous couplings of HMC chains, and the statistics used to
//! check conservation laws, stationarity and contraction rates.
//!
//! ```
//! use hmc_lab::potentials::Potential;
//! use hmc_lab::samplers::{run_chain, SamplerConfig};
//! use nalgebra::DVector;
//!
//! let target = Potential::spherical(2).unwrap();
//! let cfg = SamplerConfig::idealized(std::f64::consts::FRAC_PI_2, 10, 42);
//! let trajectory = run_chain(&target, &cfg, &DVector::zeros(2)).unwrap();
//! assert_eq!(trajectory.len(), 10);
//! ```

pub mod coupling;
pub mod diagnostics;
pub mod dynamics;
mod error;
pub mod potentials;
pub mod samplers;

pub use error::{Error, Result};

/// Column vector of positions or velocities.
pub type Vector = nalgebra::DVector<f64>;
