//! Moment fits, Wasserstein-2 distances and integrator-order estimates.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::dynamics::{self, hamiltonian, Integrator, PhasePoint};
use crate::error::{check_dim, Error, Result};
use crate::potentials::Potential;
use crate::Vector;

/// Eigenvalues below this are treated as this when taking matrix square roots.
pub const EIGEN_FLOOR: f64 = 1e-14;

/// Allowed negative eigenvalue / asymmetry in a covariance before it is
/// rejected.
pub const SPD_TOL: f64 = 1e-12;

/// `n × d` samples, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub samples: DMatrix<f64>,
    pub source: String,
}

impl SampleSet {
    pub fn new(samples: DMatrix<f64>, source: impl Into<String>) -> Result<Self> {
        if samples.nrows() == 0 || samples.ncols() == 0 {
            return Err(Error::InsufficientData {
                needed: 1,
                got: samples.nrows(),
            });
        }
        Ok(SampleSet {
            samples,
            source: source.into(),
        })
    }

    pub fn from_rows<'a, I>(rows: I, source: impl Into<String>) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Vector>,
    {
        let rows: Vec<&Vector> = rows.into_iter().collect();
        let Some(first) = rows.first() else {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        };
        let d = first.len();
        for r in &rows {
            check_dim(d, r.len())?;
        }
        Self::new(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]), source)
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.samples.column(j).iter().cloned().collect()
    }
}

/// A Gaussian law `N(mean, covariance)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSpec {
    pub mean: Vector,
    pub covariance: DMatrix<f64>,
}

impl GaussianSpec {
    /// Validated constructor; the covariance must be symmetric positive
    /// (semi)definite up to [`SPD_TOL`].
    pub fn new(mean: Vector, covariance: DMatrix<f64>) -> Result<Self> {
        let spec = GaussianSpec { mean, covariance };
        spec.validate()?;
        Ok(spec)
    }

    pub fn standard(d: usize) -> Self {
        GaussianSpec {
            mean: Vector::zeros(d),
            covariance: DMatrix::identity(d, d),
        }
    }

    pub fn diagonal(mean: Vector, variances: &[f64]) -> Result<Self> {
        Self::new(mean, DMatrix::from_diagonal(&Vector::from_column_slice(variances)))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.mean.len();
        if self.covariance.nrows() != d || self.covariance.ncols() != d {
            return Err(Error::invalid(format!(
                "covariance is {}x{}, mean has length {d}",
                self.covariance.nrows(),
                self.covariance.ncols()
            )));
        }
        if self.covariance.iter().chain(self.mean.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite Gaussian parameters"));
        }
        let scale = self.covariance.amax().max(1.0);
        if (&self.covariance - self.covariance.transpose()).amax() > SPD_TOL * scale {
            return Err(Error::invalid("covariance is not symmetric"));
        }
        let lo = SymmetricEigen::new(self.covariance.clone()).eigenvalues.min();
        if lo < -SPD_TOL * scale {
            return Err(Error::invalid(format!(
                "covariance is not positive semidefinite (eigenvalue {lo})"
            )));
        }
        Ok(())
    }

    fn is_diagonal(&self) -> bool {
        let d = self.dim();
        (0..d).all(|i| (0..d).all(|j| i == j || self.covariance[(i, j)] == 0.0))
    }
}

/// Stationary law of a quadratic target, `N(0, H⁻¹)`.
pub fn target_gaussian(p: &Potential) -> Option<GaussianSpec> {
    let modes = p.quadratic_modes()?;
    let inv = Vector::from_iterator(p.dim(), modes.eigenvalues.iter().map(|l| 1.0 / l));
    let covariance = match modes.basis {
        Some(q) => {
            let c = &q * DMatrix::from_diagonal(&inv) * q.transpose();
            (&c + c.transpose()) * 0.5
        }
        None => DMatrix::from_diagonal(&inv),
    };
    Some(GaussianSpec {
        mean: Vector::zeros(p.dim()),
        covariance,
    })
}

/// Sample mean and unbiased sample covariance.
pub fn empirical_moments(s: &SampleSet) -> Result<GaussianSpec> {
    let n = s.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let mean: Vector = s.samples.row_mean().transpose();
    let centered = DMatrix::from_fn(n, s.dim(), |i, j| s.samples[(i, j)] - mean[j]);
    let covariance = centered.tr_mul(&centered) / (n - 1) as f64;
    Ok(GaussianSpec { mean, covariance })
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let roots = eig.eigenvalues.map(|l| l.max(EIGEN_FLOOR).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

fn bures_cross_trace(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let rb = psd_sqrt(b);
    psd_sqrt(&(&rb * a * &rb)).trace()
}

/// Closed-form `W₂` between Gaussians:
/// `√(‖μ_a - μ_b‖² + tr(Σ_a + Σ_b - 2 (Σ_b^{½} Σ_a Σ_b^{½})^{½}))`.
pub fn w2_gaussian(a: &GaussianSpec, b: &GaussianSpec) -> Result<f64> {
    check_dim(a.dim(), b.dim())?;
    a.validate()?;
    b.validate()?;
    if a == b {
        return Ok(0.0);
    }
    let mean_term = (&a.mean - &b.mean).norm_squared();
    let cov_term = if a.is_diagonal() && b.is_diagonal() {
        a.covariance
            .diagonal()
            .iter()
            .zip(b.covariance.diagonal().iter())
            .map(|(sa, sb)| (sa.max(0.0).sqrt() - sb.max(0.0).sqrt()).powi(2))
            .sum()
    } else {
        // Both orderings are averaged so that the result is exactly symmetric.
        let cross = 0.5 * (bures_cross_trace(&a.covariance, &b.covariance)
            + bures_cross_trace(&b.covariance, &a.covariance));
        (a.covariance.trace() + b.covariance.trace() - 2.0 * cross).max(0.0)
    };
    Ok((mean_term + cov_term).sqrt())
}

/// `W₂` between two equal-size 1-D samples via the sorted (monotone)
/// coupling.
pub fn w2_empirical_1d(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::invalid(format!(
            "sample sizes differ: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let mut a = xs.to_vec();
    let mut b = ys.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let sq: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
    Ok((sq / a.len() as f64).sqrt())
}

/// Largest `|H(z_j) - H(z_0)|` over the iterates of `integ` on `[0, t]`.
pub fn energy_drift(p: &Potential, integ: &Integrator, z0: &PhasePoint, t: f64) -> Result<f64> {
    let h0 = hamiltonian(p, z0)?;
    let path = dynamics::trajectory(p, integ, z0, t)?;
    Ok(path
        .iter()
        .map(|z| (p.value(&z.x) + 0.5 * z.v.norm_squared() - h0).abs())
        .fold(0.0, f64::max))
}

/// Ordinary least-squares slope of `ys` against `xs`.
pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::invalid("slope fit needs paired data"));
    }
    if xs.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: xs.len(),
        });
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::UndefinedFit("abscissae are all equal".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

/// Slope of `log(drift)` against `log(eta)`: the empirical order.
pub fn order_estimate(drifts: &[(f64, f64)]) -> Result<f64> {
    if drifts.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: drifts.len(),
        });
    }
    if let Some((eta, drift)) = drifts.iter().find(|(e, d)| !(*e > 0.0 && *d > 0.0)) {
        return Err(Error::invalid(format!(
            "order fit needs positive step sizes and drifts, got ({eta}, {drift})"
        )));
    }
    let mut etas: Vec<f64> = drifts.iter().map(|(e, _)| *e).collect();
    etas.sort_by(f64::total_cmp);
    if etas.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("order fit needs distinct step sizes"));
    }
    let xs: Vec<f64> = drifts.iter().map(|(e, _)| e.ln()).collect();
    let ys: Vec<f64> = drifts.iter().map(|(_, d)| d.ln()).collect();
    least_squares_slope(&xs, &ys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn normals(n: usize, sd: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); sd * z }).collect()
    }

    #[test]
    fn moments_by_hand() {
        let rows = [v(&[0.0]), v(&[2.0])];
        let g = empirical_moments(&SampleSet::from_rows(&rows, "hand").unwrap()).unwrap();
        assert_eq!(g.mean, v(&[1.0]));
        assert_eq!(g.covariance[(0, 0)], 2.0);

        let same = vec![v(&[1.5, -2.0]); 4];
        let g = empirical_moments(&SampleSet::from_rows(&same, "same").unwrap()).unwrap();
        assert_eq!(g.covariance, DMatrix::zeros(2, 2));
    }

    #[test]
    fn moments_need_two_samples() {
        let one = [v(&[1.0])];
        let err = empirical_moments(&SampleSet::from_rows(&one, "x").unwrap()).unwrap_err();
        assert_eq!(err, Error::InsufficientData { needed: 2, got: 1 });
        assert!(SampleSet::from_rows(&[], "x").is_err());
        assert!(SampleSet::from_rows(&[v(&[1.0]), v(&[1.0, 2.0])], "x").is_err());
    }

    #[test]
    fn moments_of_standard_normal_draws() {
        let n = 100_000;
        let xs = normals(n, 1.0, 3);
        let s = SampleSet::new(DMatrix::from_column_slice(n, 1, &xs), "n01").unwrap();
        let g = empirical_moments(&s).unwrap();
        assert!(g.mean[0].abs() <= 4.0 / (n as f64).sqrt());
        assert!((0.97..=1.03).contains(&g.covariance[(0, 0)]));
    }

    #[test]
    fn w2_gaussian_examples() {
        let a = GaussianSpec::standard(3);
        assert_eq!(w2_gaussian(&a, &a).unwrap(), 0.0);
        let b = GaussianSpec::diagonal(v(&[3.0]), &[1.0]).unwrap();
        let c = GaussianSpec::diagonal(v(&[0.0]), &[1.0]).unwrap();
        assert_abs_diff_eq!(w2_gaussian(&b, &c).unwrap(), 3.0, epsilon = 1e-15);
        let wide = GaussianSpec::diagonal(v(&[0.0]), &[4.0]).unwrap();
        assert_abs_diff_eq!(w2_gaussian(&c, &wide).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn w2_one_dimensional_quantile_oracle() {
        // Oracle: W₂² = ∫₀¹ (F_a⁻¹(u) - F_b⁻¹(u))² du with quantiles 1·z and
        // 2·z; midpoint rule on the normal quantile function.
        let n = 200_000;
        let integral: f64 = (0..n)
            .map(|i| {
                let u = (i as f64 + 0.5) / n as f64;
                let z = normal_quantile(u);
                (z - 2.0 * z).powi(2)
            })
            .sum::<f64>()
            / n as f64;
        let full_a = GaussianSpec::new(v(&[0.0]), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let full_b = GaussianSpec::new(v(&[0.0]), DMatrix::from_element(1, 1, 4.0)).unwrap();
        assert!((integral.sqrt() - 1.0).abs() < 1e-3);
        assert_abs_diff_eq!(w2_gaussian(&full_a, &full_b).unwrap(), integral.sqrt(), epsilon = 1e-3);
    }

    // Acklam's rational approximation (relative error ~1e-9).
    #[allow(clippy::excessive_precision)]
    fn normal_quantile(p: f64) -> f64 {
        let a = [-3.969683028665376e1, 2.209460984245205e2, -2.759285104469687e2, 1.383577518672690e2, -3.066479806614716e1, 2.506628277459239];
        let b = [-5.447609879822406e1, 1.615858368580409e2, -1.556989798598866e2, 6.680131188771972e1, -1.328068155288572e1];
        let c = [-7.784894002430293e-3, -3.223964580411365e-1, -2.400758277161838, -2.549732539343734, 4.374664141464968, 2.938163982698783];
        let d = [7.784695709041462e-3, 3.224671290700398e-1, 2.445134137142996, 3.754408661907416];
        let pl = 0.02425;
        if p < pl {
            let q = (-2.0 * p.ln()).sqrt();
            (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5])
                / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
        } else if p <= 1.0 - pl {
            let q = p - 0.5;
            let r = q * q;
            (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q
                / (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)
        } else {
            -normal_quantile(1.0 - p)
        }
    }

    #[test]
    fn w2_rejects_bad_input() {
        let a = GaussianSpec::standard(2);
        let b = GaussianSpec::standard(3);
        assert!(w2_gaussian(&a, &b).is_err());
        let bad = GaussianSpec {
            mean: v(&[0.0, 0.0]),
            covariance: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]),
        };
        assert!(w2_gaussian(&a, &bad).is_err());
        assert!(GaussianSpec::diagonal(v(&[0.0]), &[-1.0]).is_err());
    }

    #[test]
    fn w2_full_matches_diagonal_formula_after_rotation() {
        let q = crate::potentials::random_orthogonal(3, 4);
        let da = DMatrix::from_diagonal(&v(&[1.0, 2.0, 0.5]));
        let db = DMatrix::from_diagonal(&v(&[3.0, 0.2, 0.5]));
        let rot = |m: &DMatrix<f64>| {
            let r = &q * m * q.transpose();
            (&r + r.transpose()) * 0.5
        };
        let a = GaussianSpec::new(v(&[0.0, 1.0, 0.0]), rot(&da)).unwrap();
        let b = GaussianSpec::new(v(&[0.5, 0.0, 0.0]), rot(&db)).unwrap();
        let expected = (0.25f64
            + 1.0
            + (1.0f64.sqrt() - 3.0f64.sqrt()).powi(2)
            + (2.0f64.sqrt() - 0.2f64.sqrt()).powi(2))
        .sqrt();
        assert_abs_diff_eq!(w2_gaussian(&a, &b).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn w2_empirical_examples() {
        assert_eq!(w2_empirical_1d(&[3.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(w2_empirical_1d(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!(w2_empirical_1d(&[0.0], &[1.0, 2.0]).is_err());
        assert!(w2_empirical_1d(&[], &[]).is_err());
    }

    #[test]
    fn w2_empirical_converges_to_closed_form() {
        for (n, tol) in [(1_000, 0.1), (100_000, 0.02)] {
            let xs = normals(n, 1.0, 10);
            let ys = normals(n, 2.0, 11);
            let w = w2_empirical_1d(&xs, &ys).unwrap();
            assert!((w - 1.0).abs() <= tol, "n={n}: {w}");
        }
    }

    #[test]
    fn energy_drift_examples() {
        let s = Potential::spherical(2).unwrap();
        let z0 = PhasePoint::new(v(&[1.0, -0.5]), v(&[0.3, 0.8])).unwrap();
        assert!(energy_drift(&s, &Integrator::exact(), &z0, 3.0).unwrap() <= 1e-9);
        let d1 = energy_drift(&s, &Integrator::leapfrog(0.1), &z0, 2.0).unwrap();
        let d2 = energy_drift(&s, &Integrator::leapfrog(0.05), &z0, 2.0).unwrap();
        assert!((3.5..=4.5).contains(&(d1 / d2)), "{}", d1 / d2);
        let rest = PhasePoint::new(Vector::zeros(2), Vector::zeros(2)).unwrap();
        assert_eq!(energy_drift(&s, &Integrator::leapfrog(0.1), &rest, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn order_estimate_on_synthetic_powers() {
        let etas = [0.2, 0.1, 0.05, 0.025];
        let sq: Vec<(f64, f64)> = etas.iter().map(|&e| (e, e * e)).collect();
        assert_abs_diff_eq!(order_estimate(&sq).unwrap(), 2.0, epsilon = 1e-10);
        let cube: Vec<(f64, f64)> = etas.iter().map(|&e| (e, e * e * e)).collect();
        assert_abs_diff_eq!(order_estimate(&cube).unwrap(), 3.0, epsilon = 1e-10);
    }

    #[test]
    fn order_estimate_rejects_bad_data() {
        assert!(order_estimate(&[(0.1, 1.0), (0.2, 2.0)]).is_err());
        assert!(order_estimate(&[(0.1, 1.0), (0.2, 0.0), (0.3, 1.0)]).is_err());
        assert!(order_estimate(&[(0.1, 1.0), (0.1, 2.0), (0.3, 1.0)]).is_err());
    }

    #[test]
    fn target_gaussian_of_quadratics() {
        let d = Potential::diagonal(vec![0.5, 2.0]).unwrap();
        let g = target_gaussian(&d).unwrap();
        assert_eq!(g.covariance, DMatrix::from_diagonal(&v(&[1.0, 0.25])));
        let dense = Potential::dense(vec![2.0, 5.0], 1).unwrap();
        let g = target_gaussian(&dense).unwrap();
        let h = dense.hessian(&Vector::zeros(2)).unwrap();
        assert!((h * &g.covariance - DMatrix::identity(2, 2)).amax() < 1e-12);
        assert!(target_gaussian(&Potential::perturbed_diagonal(vec![1.0], 1.0).unwrap()).is_none());
    }
}
