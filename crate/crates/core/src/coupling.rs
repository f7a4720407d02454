//! Synchronous coupling of two HMC chains.
//!
//! Both chains receive the same momentum `ξ_i` at every step, so for a
//! quadratic target the difference `X_k - Y_k` evolves deterministically:
//! along a Hessian eigendirection with eigenvalue `λ` it is multiplied by
//! `cos(√λ T)` per step. For `f(x) = Σ c_j x_j²` that factor is
//! `cos(√(2 c_j) T)`.

use std::f64::consts::FRAC_PI_2;

use crate::diagnostics::least_squares_slope;
use crate::error::{check_dim, Error, Result};
use crate::potentials::Potential;
use crate::samplers::{
    exact_stationary_draw, idealized_hmc_step, idealized_transition, sample_momentum, stream_rng,
    unadjusted_transition, ChainState, SamplerConfig, SamplerKind,
};
use crate::Vector;

/// Idealized HMC steps used to approximate `Y_0 ~ π` when no exact draw is
/// available.
pub const WARM_START_STEPS: usize = 1_000;

/// Minimum trace length accepted by [`contraction_fit`].
pub const MIN_FIT_POINTS: usize = 5;

/// Distances `‖X_k - Y_k‖`, `k = 0..=steps`, of a coupled pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledTrace {
    pub distances: Vec<f64>,
    /// `per_coordinate[k][j] = |X_k[j] - Y_k[j]|`
    pub per_coordinate: Option<Vec<Vec<f64>>>,
    pub config: SamplerConfig,
}

impl CoupledTrace {
    pub fn steps(&self) -> usize {
        self.distances.len().saturating_sub(1)
    }

    /// First step index at which the distance is below `eps`.
    pub fn first_below(&self, eps: f64) -> Option<usize> {
        self.distances.iter().position(|&d| d < eps)
    }
}

/// Starting point for the reference chain `Y`.
///
/// Quadratic targets are Gaussian and are sampled exactly. Otherwise the
/// chain is warm-started with [`WARM_START_STEPS`] idealized HMC steps of
/// length `T` from the minimizer.
pub fn stationary_start(p: &Potential, t: f64, seed: u64) -> Result<Vector> {
    let mut rng = stream_rng(seed, 0);
    if let Some(y) = exact_stationary_draw(p, &mut rng) {
        return Ok(y);
    }
    let mut state = ChainState::new(p.minimizer().clone(), seed, 0);
    for _ in 0..WARM_START_STEPS {
        idealized_hmc_step(p, &mut state, t)?;
    }
    Ok(state.position().clone())
}

/// Coupled run from `x0` against `Y_0 ≈ π` drawn with `y0_seed`.
pub fn coupled_run(p: &Potential, cfg: &SamplerConfig, x0: &Vector, y0_seed: u64) -> Result<CoupledTrace> {
    check_hmc(cfg)?;
    let t = cfg.integration_time.unwrap_or_default();
    let y0 = stationary_start(p, t, y0_seed)?;
    coupled_run_from(p, cfg, x0, &y0, 0)
}

fn check_hmc(cfg: &SamplerConfig) -> Result<()> {
    if !cfg.sampler.is_hmc() {
        return Err(Error::InvalidConfig(format!(
            "coupling needs an HMC sampler, got {:?}",
            cfg.sampler
        )));
    }
    cfg.validate()
}

/// Coupled run with explicit starting points. Momenta come from stream
/// `stream` of `cfg.seed` and are shared by both chains.
pub fn coupled_run_from(
    p: &Potential,
    cfg: &SamplerConfig,
    x0: &Vector,
    y0: &Vector,
    stream: u64,
) -> Result<CoupledTrace> {
    check_hmc(cfg)?;
    check_dim(p.dim(), x0.len())?;
    check_dim(p.dim(), y0.len())?;
    let t = cfg.integration_time.unwrap_or_default();
    let eta = cfg.step_size.unwrap_or_default();
    let mut momenta = ChainState::new(x0.clone(), cfg.seed, stream);
    let (mut x, mut y) = (x0.clone(), y0.clone());

    let gap = |x: &Vector, y: &Vector| -> Vec<f64> { x.iter().zip(y.iter()).map(|(a, b)| (a - b).abs()).collect() };
    let mut distances = Vec::with_capacity(cfg.steps + 1);
    let mut per_coordinate = Vec::with_capacity(cfg.steps + 1);
    distances.push((&x - &y).norm());
    per_coordinate.push(gap(&x, &y));
    for _ in 0..cfg.steps {
        let xi = sample_momentum(&mut momenta, p.dim());
        (x, y) = match cfg.sampler {
            SamplerKind::IdealizedHmc => (
                idealized_transition(p, &x, &xi, t)?,
                idealized_transition(p, &y, &xi, t)?,
            ),
            _ => (
                unadjusted_transition(p, &x, &xi, t, eta)?,
                unadjusted_transition(p, &y, &xi, t, eta)?,
            ),
        };
        distances.push((&x - &y).norm());
        per_coordinate.push(gap(&x, &y));
    }
    Ok(CoupledTrace {
        distances,
        per_coordinate: Some(per_coordinate),
        config: *cfg,
    })
}

/// `cos(√(2 c_j) T)`: one-step contraction of coordinate `j` of
/// `f(x) = Σ c_j x_j²` under the exact flow.
pub fn predicted_coordinate_factor(c_j: f64, t: f64) -> f64 {
    ((2.0 * c_j).sqrt() * t).cos()
}

/// `T* = √m / (√2 M)` and `γ = m² / (2 M²)`, the integration time and
/// squared-distance contraction `‖x_T - y_T‖² ≤ (1 - γ) ‖x_0 - y_0‖²` for an
/// `m`-strongly convex, `M`-smooth potential (Hessian convention).
pub fn predicted_contraction_gamma(m: f64, big_m: f64) -> Result<(f64, f64)> {
    if !(m.is_finite() && big_m.is_finite() && m > 0.0 && m <= big_m) {
        return Err(Error::invalid(format!("need 0 < m <= M, got m = {m}, M = {big_m}")));
    }
    let t_star = m.sqrt() / (std::f64::consts::SQRT_2 * big_m);
    let gamma = m * m / (2.0 * big_m * big_m);
    Ok((t_star, gamma))
}

/// Both sides of `cos(s) ≤ 1 - s²/8` at `s = √(2m)·(π/2)·(1/√(2M))`.
pub fn cosine_bound(m: f64, big_m: f64) -> (f64, f64) {
    let s = (2.0 * m).sqrt() * FRAC_PI_2 / (2.0 * big_m).sqrt();
    (s.cos(), 1.0 - s * s / 8.0)
}

/// Least-squares slope of `ln d_k` against `k`: the per-step log contraction.
///
/// Only the leading run of strictly positive distances is fitted, since
/// coalesced chains have distance exactly zero.
pub fn contraction_fit(trace: &CoupledTrace) -> Result<f64> {
    log_distance_slope(&trace.distances)
}

pub fn log_distance_slope(distances: &[f64]) -> Result<f64> {
    if distances.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientData {
            needed: MIN_FIT_POINTS,
            got: distances.len(),
        });
    }
    if distances[0].is_nan() || distances[0] <= 0.0 {
        return Err(Error::UndefinedFit("initial distance is zero".into()));
    }
    let usable = distances.iter().take_while(|d| **d > 0.0 && d.is_finite()).count();
    if usable < 2 {
        return Err(Error::UndefinedFit("fewer than two positive distances".into()));
    }
    let ks: Vec<f64> = (0..usable).map(|k| k as f64).collect();
    let logs: Vec<f64> = distances[..usable].iter().map(|d| d.ln()).collect();
    least_squares_slope(&ks, &logs)
}
