//! Target potentials `f` for Gibbs densities `π ∝ exp(-f)`.
//!
//! Every potential carries its Hessian eigenvalue bounds `(m, M)` with
//! `m I ⪯ ∇²f(x) ⪯ M I` for all `x`. For [`Potential::diagonal`] the energy is
//! `f(x) = Σ c_j x_j²`, so the Hessian is `2 diag(c)` and the reported bounds
//! are `m = 2 min c_j`, `M = 2 max c_j`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::Vector;

const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PotentialKind {
    SphericalQuadratic,
    DiagonalQuadratic,
    DenseQuadratic,
    PerturbedQuadratic,
}

impl PotentialKind {
    pub fn is_quadratic(self) -> bool {
        !matches!(self, PotentialKind::PerturbedQuadratic)
    }
}

#[derive(Debug, Clone)]
enum Form {
    /// `½ xᵀx`
    Spherical,
    /// `Σ c_j x_j²`
    Diagonal { coefficients: Vec<f64> },
    /// `½ xᵀ A x` with `A = Q Λ Qᵀ`
    Dense {
        matrix: DMatrix<f64>,
        eigenvalues: Vec<f64>,
        eigenvectors: DMatrix<f64>,
    },
    /// `½ xᵀ A x + a Σ softplus(x_j)`
    Perturbed { base: DMatrix<f64>, amplitude: f64 },
}

/// Hessian eigen-structure of a quadratic potential.
///
/// `basis` is `None` when the eigenvectors are the coordinate axes.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticModes {
    pub eigenvalues: Vec<f64>,
    pub basis: Option<DMatrix<f64>>,
}

/// A strongly convex, smooth potential with exact gradient.
///
/// Immutable after construction, so a single instance can be shared by any
/// number of concurrently running chains.
#[derive(Debug, Clone)]
pub struct Potential {
    dim: usize,
    form: Form,
    m: f64,
    big_m: f64,
    minimizer: Vector,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn require_dim(dim: usize) -> Result<()> {
    if dim == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    Ok(())
}

fn require_spd(matrix: &DMatrix<f64>, what: &str) -> Result<(f64, f64)> {
    if !matrix.is_square() || matrix.nrows() == 0 {
        return Err(Error::invalid(format!("{what} must be a non-empty square matrix")));
    }
    let scale = matrix.amax().max(1.0);
    if (matrix - matrix.transpose()).amax() > SYMMETRY_TOL * scale {
        return Err(Error::invalid(format!("{what} must be symmetric")));
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("{what} has non-finite entries")));
    }
    let eig = SymmetricEigen::new(matrix.clone());
    let lo = eig.eigenvalues.min();
    let hi = eig.eigenvalues.max();
    if lo <= 0.0 {
        return Err(Error::invalid(format!(
            "{what} must be positive definite (smallest eigenvalue {lo})"
        )));
    }
    Ok((lo, hi))
}

fn require_positive(values: &[f64], what: &str) -> Result<()> {
    if values.is_empty() {
        return Err(Error::invalid(format!("{what} must be non-empty")));
    }
    if let Some(bad) = values.iter().find(|c| !(c.is_finite() && **c > 0.0)) {
        return Err(Error::invalid(format!("{what} must be finite and > 0, found {bad}")));
    }
    Ok(())
}

/// Haar-distributed orthogonal matrix from a seeded Gaussian QR factorization.
pub fn random_orthogonal(dim: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(dim, dim, |_, _| StandardNormal.sample(&mut rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

impl Potential {
    /// `f(x) = ½ xᵀx`, so `m = M = 1`.
    pub fn spherical(dim: usize) -> Result<Self> {
        require_dim(dim)?;
        Ok(Potential {
            dim,
            form: Form::Spherical,
            m: 1.0,
            big_m: 1.0,
            minimizer: Vector::zeros(dim),
        })
    }

    /// `f(x) = Σ c_j x_j²` (harmonic oscillator with Hessian `2 diag(c)`).
    pub fn diagonal(coefficients: Vec<f64>) -> Result<Self> {
        require_positive(&coefficients, "diagonal coefficients")?;
        let lo = coefficients.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = coefficients.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let dim = coefficients.len();
        Ok(Potential {
            dim,
            form: Form::Diagonal { coefficients },
            m: 2.0 * lo,
            big_m: 2.0 * hi,
            minimizer: Vector::zeros(dim),
        })
    }

    /// `f(x) = ½ xᵀ A x` with `A = Q diag(spectrum) Qᵀ` and `Q` a random
    /// orthogonal matrix drawn from `seed`. The spectrum is the Hessian's.
    pub fn dense(spectrum: Vec<f64>, seed: u64) -> Result<Self> {
        require_positive(&spectrum, "spectrum")?;
        let dim = spectrum.len();
        let q = random_orthogonal(dim, seed);
        let lambda = DMatrix::from_diagonal(&Vector::from_vec(spectrum.clone()));
        let a = &q * lambda * q.transpose();
        let matrix = (&a + a.transpose()) * 0.5;
        let lo = spectrum.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = spectrum.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(Potential {
            dim,
            form: Form::Dense {
                matrix,
                eigenvalues: spectrum,
                eigenvectors: q,
            },
            m: lo,
            big_m: hi,
            minimizer: Vector::zeros(dim),
        })
    }

    /// `f(x) = ½ xᵀ A x + a Σ_j softplus(x_j)`.
    ///
    /// softplus'' lies in `(0, 1/4]`, hence `m = λ_min(A)` and
    /// `M = λ_max(A) + a/4`.
    pub fn perturbed(base: DMatrix<f64>, amplitude: f64) -> Result<Self> {
        if !(amplitude.is_finite() && amplitude >= 0.0) {
            return Err(Error::invalid(format!(
                "perturbation amplitude must be finite and >= 0, found {amplitude}"
            )));
        }
        let (lo, hi) = require_spd(&base, "base matrix")?;
        let dim = base.nrows();
        let mut p = Potential {
            dim,
            form: Form::Perturbed { base, amplitude },
            m: lo,
            big_m: hi + amplitude / 4.0,
            minimizer: Vector::zeros(dim),
        };
        p.minimizer = p.newton_minimizer();
        Ok(p)
    }

    /// [`Potential::perturbed`] with a diagonal base matrix.
    pub fn perturbed_diagonal(diagonal: Vec<f64>, amplitude: f64) -> Result<Self> {
        require_positive(&diagonal, "base diagonal")?;
        Self::perturbed(DMatrix::from_diagonal(&Vector::from_vec(diagonal)), amplitude)
    }

    /// Perturbation of a dense base `Q diag(spectrum) Qᵀ`.
    pub fn perturbed_dense(spectrum: Vec<f64>, seed: u64, amplitude: f64) -> Result<Self> {
        require_positive(&spectrum, "spectrum")?;
        let q = random_orthogonal(spectrum.len(), seed);
        let a = &q * DMatrix::from_diagonal(&Vector::from_vec(spectrum)) * q.transpose();
        Self::perturbed((&a + a.transpose()) * 0.5, amplitude)
    }

    fn newton_minimizer(&self) -> Vector {
        let Form::Perturbed { base, amplitude } = &self.form else {
            return Vector::zeros(self.dim);
        };
        let mut x = Vector::zeros(self.dim);
        for _ in 0..100 {
            let g = self.gradient(&x);
            if g.norm() < 1e-15 {
                break;
            }
            let mut h = base.clone();
            for j in 0..self.dim {
                let s = sigmoid(x[j]);
                h[(j, j)] += amplitude * s * (1.0 - s);
            }
            match h.cholesky() {
                Some(chol) => x -= chol.solve(&g),
                None => break,
            }
        }
        x
    }

    pub fn kind(&self) -> PotentialKind {
        match self.form {
            Form::Spherical => PotentialKind::SphericalQuadratic,
            Form::Diagonal { .. } => PotentialKind::DiagonalQuadratic,
            Form::Dense { .. } => PotentialKind::DenseQuadratic,
            Form::Perturbed { .. } => PotentialKind::PerturbedQuadratic,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_quadratic(&self) -> bool {
        self.kind().is_quadratic()
    }

    /// Hessian eigenvalue bounds `(m, M)`; tight for quadratics.
    pub fn convexity_bounds(&self) -> (f64, f64) {
        (self.m, self.big_m)
    }

    /// Coefficients `c_j` of a diagonal quadratic.
    pub fn diagonal_coefficients(&self) -> Option<&[f64]> {
        match &self.form {
            Form::Diagonal { coefficients } => Some(coefficients),
            _ => None,
        }
    }

    /// The unique minimizer `x*` (the origin for all quadratics).
    pub fn minimizer(&self) -> &Vector {
        &self.minimizer
    }

    pub fn eval_f(&self, x: &Vector) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        Ok(self.value(x))
    }

    pub fn grad_f(&self, x: &Vector) -> Result<Vector> {
        check_dim(self.dim, x.len())?;
        Ok(self.gradient(x))
    }

    /// Hessian at `x`.
    pub fn hessian(&self, x: &Vector) -> Result<DMatrix<f64>> {
        check_dim(self.dim, x.len())?;
        Ok(match &self.form {
            Form::Spherical => DMatrix::identity(self.dim, self.dim),
            Form::Diagonal { coefficients } => {
                DMatrix::from_diagonal(&Vector::from_iterator(self.dim, coefficients.iter().map(|c| 2.0 * c)))
            }
            Form::Dense { matrix, .. } => matrix.clone(),
            Form::Perturbed { base, amplitude } => {
                let mut h = base.clone();
                for j in 0..self.dim {
                    let s = sigmoid(x[j]);
                    h[(j, j)] += amplitude * s * (1.0 - s);
                }
                h
            }
        })
    }

    /// Eigen-structure of the (constant) Hessian, for quadratic kinds only.
    pub fn quadratic_modes(&self) -> Option<QuadraticModes> {
        match &self.form {
            Form::Spherical => Some(QuadraticModes {
                eigenvalues: vec![1.0; self.dim],
                basis: None,
            }),
            Form::Diagonal { coefficients } => Some(QuadraticModes {
                eigenvalues: coefficients.iter().map(|c| 2.0 * c).collect(),
                basis: None,
            }),
            Form::Dense {
                eigenvalues,
                eigenvectors,
                ..
            } => Some(QuadraticModes {
                eigenvalues: eigenvalues.clone(),
                basis: Some(eigenvectors.clone()),
            }),
            Form::Perturbed { .. } => None,
        }
    }

    /// `f(x)` without the dimension check.
    pub(crate) fn value(&self, x: &Vector) -> f64 {
        match &self.form {
            Form::Spherical => 0.5 * x.norm_squared(),
            Form::Diagonal { coefficients } => coefficients.iter().zip(x.iter()).map(|(c, xi)| c * xi * xi).sum(),
            Form::Dense { matrix, .. } => 0.5 * x.dot(&(matrix * x)),
            Form::Perturbed { base, amplitude } => {
                0.5 * x.dot(&(base * x)) + amplitude * x.iter().map(|&xi| softplus(xi)).sum::<f64>()
            }
        }
    }

    /// `∇f(x)` without the dimension check.
    pub(crate) fn gradient(&self, x: &Vector) -> Vector {
        match &self.form {
            Form::Spherical => x.clone(),
            Form::Diagonal { coefficients } => {
                Vector::from_iterator(self.dim, coefficients.iter().zip(x.iter()).map(|(c, xi)| 2.0 * c * xi))
            }
            Form::Dense { matrix, .. } => matrix * x,
            Form::Perturbed { base, amplitude } => {
                let mut g = base * x;
                for (gj, &xj) in g.iter_mut().zip(x.iter()) {
                    *gj += amplitude * sigmoid(xj);
                }
                g
            }
        }
    }
}
