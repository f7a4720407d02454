//! Runs a validated [`ExperimentConfig`] and writes its CSV artifacts.
//!
//! | experiment        | data file         | columns                                             |
//! |-------------------|-------------------|-----------------------------------------------------|
//! | `sample`          | `trajectory.csv`  | `chain_id,step,x_0..x_{d-1}`                        |
//! | `couple`          | `coupled.csv`     | `rep,step,distance,dist_0..dist_{d-1}`              |
//! | `integrate-check` | `integrate.csv`   | `rep,energy_drift,jacobian_det,reversibility_defect` |
//! | `convergence`     | `convergence.csv` | `step,w2`                                           |
//!
//! Every experiment also writes `summary.csv` with columns `metric,value`.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use hmc_lab::coupling::{coupled_run_from, log_distance_slope, predicted_contraction_gamma, stationary_start};
use hmc_lab::diagnostics::{empirical_moments, energy_drift, target_gaussian, w2_gaussian, SampleSet};
use hmc_lab::dynamics::{jacobian_det_estimate, reversibility_defect, PhasePoint};
use hmc_lab::potentials::Potential;
use hmc_lab::samplers::{standard_normal_vector, step, stream_rng, ChainState, SamplerKind};
use hmc_lab::Vector;
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigErrors, Expectation, ExperimentConfig, ExperimentKind};

pub const SUMMARY_FILE: &str = "summary.csv";

/// Distances below this are treated as coalesced when estimating per-step
/// contraction factors.
const COALESCED: f64 = 1e-300;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigErrors),
    #[error(transparent)]
    Core(#[from] hmc_lab::Error),
    #[error("refusing to overwrite {0} (pass --overwrite)")]
    WouldOverwrite(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpectationOutcome {
    pub expectation: Expectation,
    /// `None` when the experiment does not produce the metric.
    pub value: Option<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExitReport {
    pub experiment: ExperimentKind,
    pub metrics: Vec<(String, f64)>,
    pub outcomes: Vec<ExpectationOutcome>,
    pub files: Vec<PathBuf>,
}

impl ExitReport {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }

    /// Contents of `summary.csv`.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (name, value) in &self.metrics {
            let _ = writeln!(out, "{name},{}", num(*value));
        }
        out
    }
}

/// 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

struct Artifact {
    name: &'static str,
    body: String,
}

fn data_file(kind: ExperimentKind) -> &'static str {
    match kind {
        ExperimentKind::Sample => "trajectory.csv",
        ExperimentKind::Couple => "coupled.csv",
        ExperimentKind::IntegrateCheck => "integrate.csv",
        ExperimentKind::Convergence => "convergence.csv",
    }
}

/// Validate, run, write artifacts into `output_dir` and evaluate expectations.
pub fn run_experiment(cfg: &ExperimentConfig, output_dir: &Path, overwrite: bool) -> Result<ExitReport, RunError> {
    cfg.validate()?;
    let kind = cfg.kind();
    let targets = [data_file(kind), SUMMARY_FILE].map(|f| output_dir.join(f));
    if !overwrite {
        if let Some(existing) = targets.iter().find(|p| p.exists()) {
            return Err(RunError::WouldOverwrite(existing.clone()));
        }
    }

    let p = cfg.build_potential()?;
    let (data, metrics) = match kind {
        ExperimentKind::Sample => run_sample(cfg, &p)?,
        ExperimentKind::Couple => run_couple(cfg, &p)?,
        ExperimentKind::IntegrateCheck => run_integrate_check(cfg, &p)?,
        ExperimentKind::Convergence => run_convergence(cfg, &p)?,
    };

    let outcomes = cfg
        .expectations
        .iter()
        .map(|e| {
            let value = metrics.iter().find(|(n, _)| *n == e.metric).map(|(_, v)| *v);
            ExpectationOutcome {
                expectation: e.clone(),
                value,
                passed: value.is_some_and(|v| e.comparator.holds(v, e.threshold)),
            }
        })
        .collect();
    let report = ExitReport {
        experiment: kind,
        metrics,
        outcomes,
        files: targets.to_vec(),
    };

    fs::create_dir_all(output_dir).map_err(io_err(output_dir))?;
    let summary = Artifact {
        name: SUMMARY_FILE,
        body: report.summary_csv(),
    };
    for artifact in [data, summary] {
        let path = output_dir.join(artifact.name);
        fs::write(&path, artifact.body).map_err(io_err(&path))?;
    }
    Ok(report)
}

fn start_point(cfg: &ExperimentConfig, p: &Potential) -> Vector {
    match &cfg.x0 {
        Some(x) => Vector::from_column_slice(x),
        None => p.minimizer().clone(),
    }
}

fn header(first: &[&str], prefix: &str, d: usize) -> String {
    let mut cols: Vec<String> = first.iter().map(|s| s.to_string()).collect();
    cols.extend((0..d).map(|j| format!("{prefix}{j}")));
    cols.join(",") + "\n"
}

/// Moment-fit `W₂` against the Gaussian target, if there is one.
fn w2_to_target(p: &Potential, rows: &[&Vector]) -> Result<Option<f64>, RunError> {
    let Some(target) = target_gaussian(p) else {
        return Ok(None);
    };
    if rows.len() < 2 {
        return Ok(None);
    }
    let set = SampleSet::from_rows(rows.iter().copied(), "chains")?;
    Ok(Some(w2_gaussian(&empirical_moments(&set)?, &target)?))
}

fn run_sample(cfg: &ExperimentConfig, p: &Potential) -> Result<(Artifact, Vec<(String, f64)>), RunError> {
    let sc = cfg.sampler_config();
    sc.validate()?;
    let x0 = start_point(cfg, p);
    let chains: Vec<(Vec<Vector>, u64)> = (0..cfg.repetitions())
        .into_par_iter()
        .map(|i| {
            let mut state = ChainState::new(x0.clone(), sc.seed, i as u64);
            let mut path = Vec::with_capacity(sc.steps);
            for _ in 0..sc.steps {
                step(p, &sc, &mut state)?;
                path.push(state.position().clone());
            }
            Ok((path, state.accepted()))
        })
        .collect::<Result<_, hmc_lab::Error>>()?;

    let d = p.dim();
    let mut body = header(&["chain_id", "step"], "x_", d);
    for (i, (path, _)) in chains.iter().enumerate() {
        for (k, x) in path.iter().enumerate() {
            let _ = write!(body, "{i},{}", k + 1);
            for v in x.iter() {
                let _ = write!(body, ",{}", num(*v));
            }
            body.push('\n');
        }
    }

    let n = chains.len() as f64;
    let mut metrics = vec![
        ("chains".to_string(), n),
        ("steps".to_string(), sc.steps as f64),
    ];
    if sc.sampler == SamplerKind::Rwm && sc.steps > 0 {
        let accepted: u64 = chains.iter().map(|(_, a)| a).sum();
        metrics.push(("acceptance_rate".into(), accepted as f64 / (n * sc.steps as f64)));
    }
    if sc.steps > 0 {
        let finals: Vec<&Vector> = chains.iter().map(|(path, _)| path.last().unwrap()).collect();
        for j in 0..d {
            let mean = finals.iter().map(|x| x[j]).sum::<f64>() / n;
            metrics.push((format!("final_mean_{j}"), mean));
        }
        if finals.len() >= 2 {
            for j in 0..d {
                let mean = finals.iter().map(|x| x[j]).sum::<f64>() / n;
                let var = finals.iter().map(|x| (x[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
                metrics.push((format!("final_var_{j}"), var));
            }
        }
        if let Some(w2) = w2_to_target(p, &finals)? {
            metrics.push(("w2_final".into(), w2));
        }
    }
    Ok((
        Artifact {
            name: data_file(ExperimentKind::Sample),
            body,
        },
        metrics,
    ))
}

fn run_couple(cfg: &ExperimentConfig, p: &Potential) -> Result<(Artifact, Vec<(String, f64)>), RunError> {
    let sc = cfg.sampler_config();
    sc.validate()?;
    let x0 = start_point(cfg, p);
    let t = sc.integration_time.unwrap_or_default();
    let traces = (0..cfg.repetitions())
        .into_par_iter()
        .map(|r| {
            let y0 = stationary_start(p, t, cfg.y0_seed().wrapping_add(r as u64))?;
            coupled_run_from(p, &sc, &x0, &y0, r as u64)
        })
        .collect::<Result<Vec<_>, hmc_lab::Error>>()?;

    let d = p.dim();
    let mut body = header(&["rep", "step", "distance"], "dist_", d);
    for (r, trace) in traces.iter().enumerate() {
        let per = trace.per_coordinate.as_deref().unwrap_or_default();
        for (k, dist) in trace.distances.iter().enumerate() {
            let _ = write!(body, "{r},{k},{}", num(*dist));
            if let Some(coords) = per.get(k) {
                for c in coords {
                    let _ = write!(body, ",{}", num(*c));
                }
            }
            body.push('\n');
        }
    }

    let slopes: Vec<f64> = traces.iter().filter_map(|tr| log_distance_slope(&tr.distances).ok()).collect();
    let max_of = |f: &dyn Fn(&[f64]) -> f64| traces.iter().map(|tr| f(&tr.distances)).fold(0.0, f64::max);
    let max_sq_contraction = max_of(&|ds| {
        ds.windows(2)
            .filter(|w| w[0] > COALESCED)
            .map(|w| (w[1] / w[0]).powi(2))
            .fold(0.0, f64::max)
    });
    let (m, big_m) = p.convexity_bounds();
    let (t_star, gamma) = predicted_contraction_gamma(m, big_m)?;

    let mut metrics = vec![
        ("repetitions".to_string(), traces.len() as f64),
        ("initial_distance_max".into(), max_of(&|ds| ds[0])),
        ("distance_step1_max".into(), max_of(&|ds| ds.get(1).copied().unwrap_or(f64::NAN))),
        ("final_distance_max".into(), max_of(&|ds| *ds.last().unwrap())),
        ("max_sq_contraction".into(), max_sq_contraction),
    ];
    if !slopes.is_empty() {
        metrics.push(("contraction_slope_mean".into(), slopes.iter().sum::<f64>() / slopes.len() as f64));
        metrics.push(("contraction_slope_max".into(), slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max)));
    }
    metrics.extend([
        ("m".to_string(), m),
        ("M".to_string(), big_m),
        ("t_star".to_string(), t_star),
        ("gamma".to_string(), gamma),
    ]);
    Ok((
        Artifact {
            name: data_file(ExperimentKind::Couple),
            body,
        },
        metrics,
    ))
}

fn run_integrate_check(cfg: &ExperimentConfig, p: &Potential) -> Result<(Artifact, Vec<(String, f64)>), RunError> {
    let integ = cfg.integrator();
    let t = cfg.sampler.t.unwrap_or_default();
    let d = p.dim();
    let rows = (0..cfg.repetitions())
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(cfg.seed(), r as u64);
            let x = match &cfg.x0 {
                Some(x) => Vector::from_column_slice(x),
                None => p.minimizer() + standard_normal_vector(&mut rng, d),
            };
            let z0 = PhasePoint::new(x, standard_normal_vector(&mut rng, d))?;
            Ok([
                energy_drift(p, &integ, &z0, t)?,
                jacobian_det_estimate(p, &integ, &z0, t)?,
                reversibility_defect(p, &integ, &z0, t)?,
            ])
        })
        .collect::<Result<Vec<_>, hmc_lab::Error>>()?;

    let mut body = String::from("rep,energy_drift,jacobian_det,reversibility_defect\n");
    for (r, [drift, det, rev]) in rows.iter().enumerate() {
        let _ = writeln!(body, "{r},{},{},{}", num(*drift), num(*det), num(*rev));
    }
    let col = |i: usize| rows.iter().map(move |row| row[i]);
    let metrics = vec![
        ("energy_drift_max".to_string(), col(0).fold(0.0, f64::max)),
        ("jacobian_det_min".into(), col(1).fold(f64::INFINITY, f64::min)),
        ("jacobian_det_max".into(), col(1).fold(f64::NEG_INFINITY, f64::max)),
        ("jacobian_det_deviation_max".into(), col(1).map(|x| (x - 1.0).abs()).fold(0.0, f64::max)),
        ("reversibility_defect_max".into(), col(2).fold(0.0, f64::max)),
    ];
    Ok((
        Artifact {
            name: data_file(ExperimentKind::IntegrateCheck),
            body,
        },
        metrics,
    ))
}

fn run_convergence(cfg: &ExperimentConfig, p: &Potential) -> Result<(Artifact, Vec<(String, f64)>), RunError> {
    let sc = cfg.sampler_config();
    sc.validate()?;
    let x0 = start_point(cfg, p);
    let chains = (0..cfg.repetitions())
        .into_par_iter()
        .map(|i| {
            let mut state = ChainState::new(x0.clone(), sc.seed, i as u64);
            let mut path = Vec::with_capacity(sc.steps + 1);
            path.push(x0.clone());
            for _ in 0..sc.steps {
                step(p, &sc, &mut state)?;
                path.push(state.position().clone());
            }
            Ok(path)
        })
        .collect::<Result<Vec<_>, hmc_lab::Error>>()?;

    let mut w2s = Vec::with_capacity(sc.steps + 1);
    for k in 0..=sc.steps {
        let rows: Vec<&Vector> = chains.iter().map(|c| &c[k]).collect();
        let w2 = w2_to_target(p, &rows)?.expect("validated: quadratic target and >= 2 chains");
        w2s.push(w2);
    }
    let mut body = String::from("step,w2\n");
    for (k, w) in w2s.iter().enumerate() {
        let _ = writeln!(body, "{k},{}", num(*w));
    }
    let mut metrics = vec![
        ("w2_initial".to_string(), w2s[0]),
        ("w2_final".into(), *w2s.last().unwrap()),
        ("w2_min".into(), w2s.iter().copied().fold(f64::INFINITY, f64::min)),
        (
            "w2_max_increase".into(),
            w2s.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max).max(0.0),
        ),
    ];
    if let Ok(slope) = log_distance_slope(&w2s) {
        metrics.push(("w2_decay_slope".into(), slope));
    }
    Ok((
        Artifact {
            name: data_file(ExperimentKind::Convergence),
            body,
        },
        metrics,
    ))
}
