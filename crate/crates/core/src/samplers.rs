//! Markov chains targeting `π ∝ exp(-f)`.
//!
//! * idealized HMC: fresh momentum `ξ ~ N(0, I)`, then the exact Hamiltonian
//!   flow for time `T` (fine-step leapfrog stands in for non-quadratic `f`);
//! * unadjusted HMC: the same with the flow replaced by `ceil(T/η)` steps of
//!   the second-order Euler integrator and no accept/reject;
//! * random-walk Metropolis and the unadjusted Langevin algorithm as baselines.
//!
//! Randomness comes from ChaCha8 streams. Chain `i` of a run with master seed
//! `s` uses `ChaCha8Rng::seed_from_u64(s)` with its stream set to `i`, so
//! chains are independent and reproducible regardless of execution order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::dynamics::{self, check_step_size, check_time, Integrator, PhasePoint};
use crate::error::{check_dim, Error, Result};
use crate::potentials::Potential;
use crate::Vector;

/// Position, step counter and random stream of one chain.
///
/// Not meant to be stepped from two places at once; move it between threads
/// instead.
#[derive(Debug, Clone)]
pub struct ChainState {
    position: Vector,
    step_index: u64,
    accepted: u64,
    rng: ChaCha8Rng,
}

impl ChainState {
    pub fn new(position: Vector, seed: u64, chain_id: u64) -> Self {
        ChainState {
            position,
            step_index: 0,
            accepted: 0,
            rng: stream_rng(seed, chain_id),
        }
    }

    pub fn position(&self) -> &Vector {
        &self.position
    }

    pub fn step_index(&self) -> u64 {
        self.step_index
    }

    /// Metropolis acceptances so far (RWM only).
    pub fn accepted(&self) -> u64 {
        self.accepted
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    fn advance(&mut self, position: Vector) {
        self.position = position;
        self.step_index += 1;
    }
}

/// Independent random stream `chain_id` of master seed `seed`.
pub fn stream_rng(seed: u64, chain_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain_id);
    rng
}

pub fn standard_normal_vector<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vector {
    Vector::from_iterator(d, (0..d).map(|_| StandardNormal.sample(rng)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SamplerKind {
    IdealizedHmc,
    UnadjustedHmc,
    Rwm,
    Ula,
}

impl SamplerKind {
    pub fn is_hmc(self) -> bool {
        matches!(self, SamplerKind::IdealizedHmc | SamplerKind::UnadjustedHmc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub sampler: SamplerKind,
    /// HMC integration time `T`.
    pub integration_time: Option<f64>,
    /// Integrator step size for unadjusted HMC; proposal scale for RWM/ULA.
    pub step_size: Option<f64>,
    /// Number of Markov steps `k`.
    pub steps: usize,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn idealized(t: f64, steps: usize, seed: u64) -> Self {
        SamplerConfig {
            sampler: SamplerKind::IdealizedHmc,
            integration_time: Some(t),
            step_size: None,
            steps,
            seed,
        }
    }

    pub fn unadjusted(t: f64, eta: f64, steps: usize, seed: u64) -> Self {
        SamplerConfig {
            sampler: SamplerKind::UnadjustedHmc,
            integration_time: Some(t),
            step_size: Some(eta),
            steps,
            seed,
        }
    }

    pub fn rwm(eta: f64, steps: usize, seed: u64) -> Self {
        SamplerConfig {
            sampler: SamplerKind::Rwm,
            integration_time: None,
            step_size: Some(eta),
            steps,
            seed,
        }
    }

    pub fn ula(eta: f64, steps: usize, seed: u64) -> Self {
        SamplerConfig {
            sampler: SamplerKind::Ula,
            integration_time: None,
            step_size: Some(eta),
            steps,
            seed,
        }
    }

    /// Checks that the parameters the sampler needs are present and positive.
    /// Parameters the sampler does not use are ignored.
    pub fn validate(&self) -> Result<()> {
        let need = |value: Option<f64>, name: &str| -> Result<f64> {
            match value {
                None => Err(Error::InvalidConfig(format!("{:?} requires `{name}`", self.sampler))),
                Some(v) if !(v.is_finite() && v > 0.0) => Err(Error::InvalidConfig(format!(
                    "`{name}` must be finite and > 0, found {v}"
                ))),
                Some(v) => Ok(v),
            }
        };
        match self.sampler {
            SamplerKind::IdealizedHmc => need(self.integration_time, "T").map(drop),
            SamplerKind::UnadjustedHmc => {
                need(self.integration_time, "T")?;
                need(self.step_size, "eta").map(drop)
            }
            SamplerKind::Rwm | SamplerKind::Ula => need(self.step_size, "eta").map(drop),
        }
    }
}

/// `d` fresh standard normal momenta from the chain's stream.
pub fn sample_momentum(state: &mut ChainState, d: usize) -> Vector {
    standard_normal_vector(&mut state.rng, d)
}

/// Position after following the idealized flow for time `t` from `(x, ξ)`.
pub fn idealized_transition(p: &Potential, x: &Vector, momentum: &Vector, t: f64) -> Result<Vector> {
    let z = PhasePoint::new(x.clone(), momentum.clone())?;
    Ok(dynamics::ideal_flow(p, &z, t)?.x)
}

/// Position after `ceil(t/eta)` second-order Euler steps from `(x, ξ)`.
pub fn unadjusted_transition(
    p: &Potential,
    x: &Vector,
    momentum: &Vector,
    t: f64,
    eta: f64,
) -> Result<Vector> {
    let z = PhasePoint::new(x.clone(), momentum.clone())?;
    Ok(dynamics::integrate(p, &Integrator::euler2(eta), &z, t)?.x)
}

/// One idealized HMC step; the final velocity is discarded.
pub fn idealized_hmc_step(p: &Potential, state: &mut ChainState, t: f64) -> Result<()> {
    check_dim(p.dim(), state.position.len())?;
    check_time(t)?;
    let xi = sample_momentum(state, p.dim());
    let next = idealized_transition(p, &state.position, &xi, t)?;
    state.advance(next);
    Ok(())
}

pub fn unadjusted_hmc_step(p: &Potential, state: &mut ChainState, t: f64, eta: f64) -> Result<()> {
    check_dim(p.dim(), state.position.len())?;
    check_time(t)?;
    check_step_size(eta)?;
    let xi = sample_momentum(state, p.dim());
    let next = unadjusted_transition(p, &state.position, &xi, t, eta)?;
    state.advance(next);
    Ok(())
}

/// Accept a move whose log target-density ratio is `log_ratio` with
/// probability `min(1, exp(log_ratio))`. Always consumes one uniform draw.
pub fn metropolis_accept(state: &mut ChainState, log_ratio: f64) -> bool {
    let u: f64 = state.rng.random();
    !log_ratio.is_nan() && (log_ratio >= 0.0 || u < log_ratio.exp())
}

/// Random-walk Metropolis: propose `X + η ξ`, accept with probability
/// `min(1, exp(f(X) - f(X̃)))`. Returns whether the proposal was accepted.
pub fn rwm_step(p: &Potential, state: &mut ChainState, eta: f64) -> Result<bool> {
    check_dim(p.dim(), state.position.len())?;
    if !(eta.is_finite() && eta >= 0.0) {
        return Err(Error::invalid(format!("RWM step size must be finite and >= 0, found {eta}")));
    }
    let xi = sample_momentum(state, p.dim());
    let proposal = &state.position + xi * eta;
    let log_ratio = p.value(&state.position) - p.value(&proposal);
    let accept = metropolis_accept(state, log_ratio);
    if accept {
        state.accepted += 1;
        state.advance(proposal);
    } else {
        state.step_index += 1;
    }
    Ok(accept)
}

/// Unadjusted Langevin: `X - η∇f(X) + √(2η) V`.
pub fn ula_step(p: &Potential, state: &mut ChainState, eta: f64) -> Result<()> {
    check_dim(p.dim(), state.position.len())?;
    check_step_size(eta)?;
    let noise = sample_momentum(state, p.dim());
    let next = &state.position - p.gradient(&state.position) * eta + noise * (2.0 * eta).sqrt();
    state.advance(next);
    Ok(())
}

/// One step of whichever sampler `cfg` names. `cfg` must be valid.
pub fn step(p: &Potential, cfg: &SamplerConfig, state: &mut ChainState) -> Result<()> {
    let t = cfg.integration_time.unwrap_or_default();
    let eta = cfg.step_size.unwrap_or_default();
    match cfg.sampler {
        SamplerKind::IdealizedHmc => idealized_hmc_step(p, state, t),
        SamplerKind::UnadjustedHmc => unadjusted_hmc_step(p, state, t, eta),
        SamplerKind::Rwm => rwm_step(p, state, eta).map(drop),
        SamplerKind::Ula => ula_step(p, state, eta),
    }
}

/// Advance `state` by `cfg.steps` steps and return the visited positions
/// `X_1..X_k`.
pub fn run_state(p: &Potential, cfg: &SamplerConfig, state: &mut ChainState) -> Result<Vec<Vector>> {
    cfg.validate()?;
    check_dim(p.dim(), state.position.len())?;
    let mut out = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        step(p, cfg, state)?;
        out.push(state.position.clone());
    }
    Ok(out)
}

/// Trajectory `X_1..X_k` of chain 0 from `x0`.
pub fn run_chain(p: &Potential, cfg: &SamplerConfig, x0: &Vector) -> Result<Vec<Vector>> {
    run_state(p, cfg, &mut ChainState::new(x0.clone(), cfg.seed, 0))
}

/// Runs chain `i` from `starts[i]` on stream `i`, in parallel. Output order
/// follows `starts`.
pub fn run_chains(p: &Potential, cfg: &SamplerConfig, starts: &[Vector]) -> Result<Vec<Vec<Vector>>> {
    cfg.validate()?;
    starts
        .par_iter()
        .enumerate()
        .map(|(i, x0)| run_state(p, cfg, &mut ChainState::new(x0.clone(), cfg.seed, i as u64)))
        .collect()
}

/// Exact draw from `π` for quadratic targets: `π = N(0, H⁻¹)`.
pub fn exact_stationary_draw<R: Rng + ?Sized>(p: &Potential, rng: &mut R) -> Option<Vector> {
    let modes = p.quadratic_modes()?;
    let xi = standard_normal_vector(rng, p.dim());
    let scaled = Vector::from_iterator(
        p.dim(),
        xi.iter().zip(&modes.eigenvalues).map(|(z, l)| z / l.sqrt()),
    );
    Some(match modes.basis {
        Some(q) => q * scaled,
        None => scaled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn momentum_moments() {
        let mut state = ChainState::new(v(&[0.0]), 7, 0);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_momentum(&mut state, 1)[0]).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() <= 4.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((0.97..=1.03).contains(&var), "var {var}");
    }

    #[test]
    fn equal_seeds_give_equal_momenta_and_streams_differ() {
        let mut a = ChainState::new(v(&[0.0; 3]), 99, 4);
        let mut b = ChainState::new(v(&[0.0; 3]), 99, 4);
        let mut c = ChainState::new(v(&[0.0; 3]), 99, 5);
        let da = sample_momentum(&mut a, 3);
        assert_eq!(da, sample_momentum(&mut b, 3));
        assert_ne!(da, sample_momentum(&mut c, 3));
    }

    #[test]
    fn quarter_period_step_returns_momentum() {
        let p = Potential::spherical(3).unwrap();
        let x0 = v(&[1.0, -2.0, 0.5]);
        let mut state = ChainState::new(x0.clone(), 3, 0);
        let mut shadow = ChainState::new(x0, 3, 0);
        idealized_hmc_step(&p, &mut state, FRAC_PI_2).unwrap();
        let xi = sample_momentum(&mut shadow, 3);
        assert!((state.position() - xi).amax() < 1e-15);
        assert_eq!(state.step_index(), 1);
    }

    #[test]
    fn vanishing_time_keeps_position() {
        let p = Potential::diagonal(vec![1.0, 2.0]).unwrap();
        let x0 = v(&[0.3, 0.4]);
        let mut state = ChainState::new(x0.clone(), 1, 0);
        idealized_hmc_step(&p, &mut state, 1e-12).unwrap();
        assert!((state.position() - x0).amax() < 1e-10);
    }

    #[test]
    fn unadjusted_single_inner_step() {
        let p = Potential::diagonal(vec![0.7, 1.3]).unwrap();
        let x0 = v(&[1.0, -0.5]);
        let t = 0.3;
        let mut state = ChainState::new(x0.clone(), 17, 0);
        let mut shadow = ChainState::new(x0.clone(), 17, 0);
        unadjusted_hmc_step(&p, &mut state, t, t).unwrap();
        let xi = sample_momentum(&mut shadow, 2);
        let expected = &x0 + &xi * t - p.grad_f(&x0).unwrap() * (0.5 * t * t);
        assert!((state.position() - expected).amax() < 1e-15);
    }

    #[test]
    fn unadjusted_approaches_idealized_with_shared_momentum() {
        let p = Potential::diagonal(vec![0.5, 1.0, 2.0]).unwrap();
        let x0 = v(&[1.0, 0.5, -1.0]);
        let xi = v(&[0.3, -0.8, 1.1]);
        let exact = idealized_transition(&p, &x0, &xi, 1.0).unwrap();
        let err = |eta: f64| (unadjusted_transition(&p, &x0, &xi, 1.0, eta).unwrap() - &exact).norm();
        let ratio = err(0.02) / err(0.01);
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
        assert!(err(0.001) < 1e-5);
    }

    #[test]
    fn rwm_downhill_always_accepted() {
        let mut state = ChainState::new(v(&[0.0]), 5, 0);
        for _ in 0..1000 {
            assert!(metropolis_accept(&mut state, 0.0));
            assert!(metropolis_accept(&mut state, 3.0));
        }
    }

    #[test]
    fn rwm_accepts_ln2_uphill_half_the_time() {
        let mut state = ChainState::new(v(&[0.0]), 5, 0);
        let n = 100_000;
        let hits = (0..n).filter(|_| metropolis_accept(&mut state, -std::f64::consts::LN_2)).count();
        let rate = hits as f64 / n as f64;
        assert!((0.494..=0.506).contains(&rate), "rate {rate}");
    }

    #[test]
    fn rwm_zero_step_never_moves() {
        let p = Potential::spherical(2).unwrap();
        let x0 = v(&[0.3, -0.2]);
        let mut state = ChainState::new(x0.clone(), 2, 0);
        for _ in 0..100 {
            rwm_step(&p, &mut state, 0.0).unwrap();
        }
        assert_eq!(state.position(), &x0);
        assert_eq!(state.step_index(), 100);
    }

    #[test]
    fn ula_with_zero_gradient_is_a_unit_kick() {
        let p = Potential::spherical(2).unwrap();
        let mut state = ChainState::new(Vector::zeros(2), 8, 0);
        let mut shadow = ChainState::new(Vector::zeros(2), 8, 0);
        ula_step(&p, &mut state, 0.5).unwrap();
        let kick = sample_momentum(&mut shadow, 2);
        assert!((state.position() - kick).amax() < 1e-15);
    }

    #[test]
    fn run_chain_composition_and_determinism() {
        let p = Potential::diagonal(vec![1.0, 2.0]).unwrap();
        let x0 = v(&[2.0, -1.0]);
        for cfg in [
            SamplerConfig::idealized(0.8, 3, 11),
            SamplerConfig::unadjusted(0.8, 0.1, 3, 11),
            SamplerConfig::rwm(0.5, 3, 11),
            SamplerConfig::ula(0.05, 3, 11),
        ] {
            let run = run_chain(&p, &cfg, &x0).unwrap();
            assert_eq!(run.len(), 3);
            assert_eq!(run, run_chain(&p, &cfg, &x0).unwrap());
            let mut state = ChainState::new(x0.clone(), 11, 0);
            let manual: Vec<Vector> = (0..3)
                .map(|_| {
                    step(&p, &cfg, &mut state).unwrap();
                    state.position().clone()
                })
                .collect();
            assert_eq!(run, manual);
        }
        let empty = run_chain(&p, &SamplerConfig::idealized(1.0, 0, 1), &x0).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(SamplerConfig::idealized(1.0, 1, 0).validate().is_ok());
        assert!(SamplerConfig::idealized(0.0, 1, 0).validate().is_err());
        assert!(SamplerConfig::unadjusted(1.0, -0.1, 1, 0).validate().is_err());
        let mut cfg = SamplerConfig::unadjusted(1.0, 0.1, 1, 0);
        cfg.step_size = None;
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        assert!(SamplerConfig::rwm(f64::INFINITY, 1, 0).validate().is_err());
        let p = Potential::spherical(1).unwrap();
        assert!(run_chain(&p, &SamplerConfig::ula(0.0, 2, 0), &v(&[0.0])).is_err());
    }

    #[test]
    fn exact_stationary_draw_covariance() {
        let p = Potential::dense(vec![0.5, 4.0], 21).unwrap();
        let mut rng = stream_rng(1, 0);
        let n = 200_000;
        let mut cov = nalgebra::DMatrix::<f64>::zeros(2, 2);
        for _ in 0..n {
            let x = exact_stationary_draw(&p, &mut rng).unwrap();
            cov += &x * x.transpose();
        }
        cov /= n as f64;
        let target = p.hessian(&Vector::zeros(2)).unwrap().try_inverse().unwrap();
        for (a, b) in cov.iter().zip(target.iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 0.03);
        }
        let q = Potential::perturbed_diagonal(vec![1.0], 1.0).unwrap();
        assert!(exact_stationary_draw(&q, &mut rng).is_none());
    }
}
