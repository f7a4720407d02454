//! Hamiltonian dynamics for `H(x, v) = f(x) + ½‖v‖²`.
//!
//! Exact closed-form flow for quadratic potentials, velocity-Verlet leapfrog,
//! the second-order Euler scheme used by unadjusted HMC, and executable checks
//! of energy conservation, volume preservation and time reversibility.

use nalgebra::DMatrix;

use crate::error::{check_dim, Error, Result};
use crate::potentials::Potential;
use crate::Vector;

/// Central finite-difference step used by the test utilities here.
pub const FD_STEP: f64 = 1e-5;

/// Number of evenly spaced sample times used when an exact flow has to be
/// reported as a trajectory.
pub const EXACT_TRAJECTORY_SAMPLES: usize = 64;

/// A point `(x, v)` in phase space.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub x: Vector,
    pub v: Vector,
}

impl PhasePoint {
    pub fn new(x: Vector, v: Vector) -> Result<Self> {
        check_dim(x.len(), v.len())?;
        Ok(PhasePoint { x, v })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// `(x, -v)`
    pub fn flip_velocity(&self) -> PhasePoint {
        PhasePoint {
            x: self.x.clone(),
            v: -&self.v,
        }
    }

    fn to_stacked(&self) -> Vector {
        let d = self.dim();
        Vector::from_iterator(2 * d, self.x.iter().chain(self.v.iter()).cloned())
    }

    fn from_stacked(z: &Vector) -> PhasePoint {
        let d = z.len() / 2;
        PhasePoint {
            x: z.rows(0, d).into_owned(),
            v: z.rows(d, d).into_owned(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    ExactQuadratic,
    Leapfrog,
    Euler2,
}

/// Integration scheme plus step size (`eta` is ignored by the exact flow).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integrator {
    pub scheme: Scheme,
    pub eta: f64,
}

impl Integrator {
    pub fn exact() -> Self {
        Integrator {
            scheme: Scheme::ExactQuadratic,
            eta: 0.0,
        }
    }

    pub fn leapfrog(eta: f64) -> Self {
        Integrator {
            scheme: Scheme::Leapfrog,
            eta,
        }
    }

    pub fn euler2(eta: f64) -> Self {
        Integrator {
            scheme: Scheme::Euler2,
            eta,
        }
    }

    fn validate(&self, p: &Potential) -> Result<()> {
        match self.scheme {
            Scheme::ExactQuadratic if !p.is_quadratic() => Err(Error::UnsupportedPotential(format!(
                "exact flow requires a quadratic potential, got {:?}",
                p.kind()
            ))),
            Scheme::ExactQuadratic => Ok(()),
            _ => check_step_size(self.eta),
        }
    }
}

pub(crate) fn check_step_size(eta: f64) -> Result<()> {
    if eta.is_finite() && eta > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("step size must be finite and > 0, found {eta}")))
    }
}

pub(crate) fn check_time(t: f64) -> Result<()> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("integration time must be finite and >= 0, found {t}")))
    }
}

fn check_point(p: &Potential, z: &PhasePoint) -> Result<()> {
    check_dim(p.dim(), z.x.len())?;
    check_dim(p.dim(), z.v.len())
}

/// Step sizes covering `[0, t]`: `n = ceil(t/eta)` steps of `eta`, the last
/// one shortened so they sum to `t`. Ratios within `1e-9` of an integer are
/// treated as exact multiples.
pub fn step_schedule(t: f64, eta: f64) -> impl Iterator<Item = f64> {
    let ratio = t / eta;
    let n = if t == 0.0 {
        0
    } else {
        (ratio - 1e-9 * ratio.max(1.0)).ceil().max(1.0) as usize
    };
    let last = t - (n.saturating_sub(1)) as f64 * eta;
    (0..n).map(move |i| if i + 1 == n { last } else { eta })
}

pub fn hamiltonian(p: &Potential, z: &PhasePoint) -> Result<f64> {
    check_point(p, z)?;
    Ok(p.value(&z.x) + 0.5 * z.v.norm_squared())
}

/// Closed-form flow of a quadratic potential at time `t`.
///
/// Each Hessian eigendirection with eigenvalue `λ` oscillates at `ω = √λ`:
/// `x_t = x_0 cos(ωt) + (v_0/ω) sin(ωt)`, `v_t = -x_0 ω sin(ωt) + v_0 cos(ωt)`.
pub fn exact_quadratic_flow(p: &Potential, z0: &PhasePoint, t: f64) -> Result<PhasePoint> {
    check_point(p, z0)?;
    check_time(t)?;
    let modes = p.quadratic_modes().ok_or_else(|| {
        Error::UnsupportedPotential(format!("no closed-form flow for {:?}", p.kind()))
    })?;
    let (mut x, mut v) = match &modes.basis {
        Some(q) => (q.tr_mul(&z0.x), q.tr_mul(&z0.v)),
        None => (z0.x.clone(), z0.v.clone()),
    };
    for (j, &lambda) in modes.eigenvalues.iter().enumerate() {
        let omega = lambda.sqrt();
        let (s, c) = (omega * t).sin_cos();
        let (x0, v0) = (x[j], v[j]);
        x[j] = x0 * c + v0 / omega * s;
        v[j] = -x0 * omega * s + v0 * c;
    }
    if let Some(q) = &modes.basis {
        x = q * x;
        v = q * v;
    }
    Ok(PhasePoint { x, v })
}

/// Velocity Verlet: half kick, drift, half kick.
pub fn leapfrog_step(p: &Potential, z: &PhasePoint, eta: f64) -> Result<PhasePoint> {
    check_point(p, z)?;
    check_step_size(eta)?;
    let g = p.gradient(&z.x);
    Ok(leapfrog_with_grad(p, z, &g, eta).0)
}

/// Second-order Euler step: `x' = x + ηv - ½η²∇f(x)`,
/// `v' = v - ½η(∇f(x) + ∇f(x'))`.
pub fn euler2_step(p: &Potential, z: &PhasePoint, eta: f64) -> Result<PhasePoint> {
    check_point(p, z)?;
    check_step_size(eta)?;
    let g = p.gradient(&z.x);
    Ok(euler2_with_grad(p, z, &g, eta).0)
}

fn leapfrog_with_grad(p: &Potential, z: &PhasePoint, g: &Vector, eta: f64) -> (PhasePoint, Vector) {
    let v_half = &z.v - g * (0.5 * eta);
    let x = &z.x + &v_half * eta;
    let g_new = p.gradient(&x);
    let v = v_half - &g_new * (0.5 * eta);
    (PhasePoint { x, v }, g_new)
}

fn euler2_with_grad(p: &Potential, z: &PhasePoint, g: &Vector, eta: f64) -> (PhasePoint, Vector) {
    let x = &z.x + &z.v * eta - g * (0.5 * eta * eta);
    let g_new = p.gradient(&x);
    let v = &z.v - (g + &g_new) * (0.5 * eta);
    (PhasePoint { x, v }, g_new)
}

fn numerical_run(
    p: &Potential,
    scheme: Scheme,
    z0: &PhasePoint,
    t: f64,
    eta: f64,
    mut visit: impl FnMut(&PhasePoint),
) -> PhasePoint {
    let step = match scheme {
        Scheme::Leapfrog => leapfrog_with_grad,
        Scheme::Euler2 => euler2_with_grad,
        Scheme::ExactQuadratic => unreachable!("exact flow has no inner steps"),
    };
    let mut z = z0.clone();
    let mut g = p.gradient(&z.x);
    for h in step_schedule(t, eta) {
        let (next, g_next) = step(p, &z, &g, h);
        z = next;
        g = g_next;
        visit(&z);
    }
    z
}

/// Advance `z0` by time `t` with the given integrator.
pub fn integrate(p: &Potential, integ: &Integrator, z0: &PhasePoint, t: f64) -> Result<PhasePoint> {
    check_point(p, z0)?;
    check_time(t)?;
    integ.validate(p)?;
    match integ.scheme {
        Scheme::ExactQuadratic => exact_quadratic_flow(p, z0, t),
        scheme => Ok(numerical_run(p, scheme, z0, t, integ.eta, |_| {})),
    }
}

/// Every iterate from `z0` (inclusive) to time `t`.
///
/// The exact flow has no inner steps; it is sampled at
/// [`EXACT_TRAJECTORY_SAMPLES`] evenly spaced times instead.
pub fn trajectory(p: &Potential, integ: &Integrator, z0: &PhasePoint, t: f64) -> Result<Vec<PhasePoint>> {
    check_point(p, z0)?;
    check_time(t)?;
    integ.validate(p)?;
    let mut out = vec![z0.clone()];
    match integ.scheme {
        Scheme::ExactQuadratic => {
            if t > 0.0 {
                let n = EXACT_TRAJECTORY_SAMPLES;
                for i in 1..=n {
                    out.push(exact_quadratic_flow(p, z0, t * i as f64 / n as f64)?);
                }
            }
        }
        scheme => {
            numerical_run(p, scheme, z0, t, integ.eta, |z| out.push(z.clone()));
        }
    }
    Ok(out)
}

/// Step size of the reference flow: `1e-3 / √M`.
pub fn reference_step_size(p: &Potential) -> f64 {
    1e-3 / p.convexity_bounds().1.sqrt()
}

/// Fine-step leapfrog stand-in for the continuous flow of any potential.
pub fn flow_reference(p: &Potential, z0: &PhasePoint, t: f64) -> Result<PhasePoint> {
    integrate(p, &Integrator::leapfrog(reference_step_size(p)), z0, t)
}

/// The flow used by idealized HMC: closed form when available, otherwise
/// [`flow_reference`].
pub fn ideal_flow(p: &Potential, z0: &PhasePoint, t: f64) -> Result<PhasePoint> {
    if p.is_quadratic() {
        exact_quadratic_flow(p, z0, t)
    } else {
        flow_reference(p, z0, t)
    }
}

/// Determinant of the phase-space Jacobian of `z ↦ integrate(z, t)`, by
/// central differences with step [`FD_STEP`]. Meant for small `d`.
pub fn jacobian_det_estimate(p: &Potential, integ: &Integrator, z0: &PhasePoint, t: f64) -> Result<f64> {
    jacobian_det_with_step(p, integ, z0, t, FD_STEP)
}

pub fn jacobian_det_with_step(
    p: &Potential,
    integ: &Integrator,
    z0: &PhasePoint,
    t: f64,
    h: f64,
) -> Result<f64> {
    check_point(p, z0)?;
    check_time(t)?;
    integ.validate(p)?;
    if t == 0.0 {
        return Ok(1.0);
    }
    let base = z0.to_stacked();
    let n = base.len();
    let mut jac = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut plus = base.clone();
        let mut minus = base.clone();
        plus[i] += h;
        minus[i] -= h;
        let fp = integrate(p, integ, &PhasePoint::from_stacked(&plus), t)?.to_stacked();
        let fm = integrate(p, integ, &PhasePoint::from_stacked(&minus), t)?.to_stacked();
        jac.set_column(i, &((fp - fm) / (2.0 * h)));
    }
    Ok(jac.determinant())
}

/// `‖x₂ - x₀‖ + ‖v₂ + v₀‖` where `z₁ = φ_t(z₀)` and `z₂ = φ_t(x₁, -v₁)`.
pub fn reversibility_defect(p: &Potential, integ: &Integrator, z0: &PhasePoint, t: f64) -> Result<f64> {
    let z1 = integrate(p, integ, z0, t)?;
    let z2 = integrate(p, integ, &z1.flip_velocity(), t)?;
    Ok((&z2.x - &z0.x).norm() + (&z2.v + &z0.v).norm())
}
