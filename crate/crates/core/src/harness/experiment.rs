use rayon::prelude::*;

use crate::baseline::{grid_search, TrialGrid};
use crate::engine::{run, Diagnostics};
use crate::error::{Error, Result};
use crate::geometry::{sample_observations, wrap_angle, Observations, Scenario, StateVector};
use crate::harness::config::{noise_label_deg, ExperimentConfig};
use crate::seed::derive_seed;

/// Root mean square of the Euclidean norms of `errors`. Orientation errors
/// must already be wrapped.
pub fn compute_rmse<E: AsRef<[f64]>>(errors: &[E]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::InvalidInput("RMSE of an empty error set".into()));
    }
    let sum: f64 = errors
        .iter()
        .map(|e| e.as_ref().iter().map(|x| x * x).sum::<f64>())
        .sum();
    Ok((sum / errors.len() as f64).sqrt())
}

pub fn orientation_error(estimate: f64, truth: f64) -> f64 {
    wrap_angle(estimate - truth)
}

/// Errors of one estimate against the scenario truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialErrors {
    /// ‖p̂ − p*‖, meters.
    pub p: f64,
    /// Wrapped α̂ − α*, radians.
    pub alpha: f64,
    /// Norm of the stacked incidence-point error, meters.
    pub s_joint: f64,
    /// Largest single incidence-point error, meters.
    pub s_max: f64,
}

impl TrialErrors {
    pub fn of(estimate: &StateVector, truth: &Scenario) -> Self {
        let s: Vec<f64> = estimate
            .incidence_points
            .iter()
            .zip(&truth.incidence_points)
            .map(|(a, b)| a.distance(*b))
            .collect();
        TrialErrors {
            p: estimate.mobile.position.distance(truth.mobile.position),
            alpha: orientation_error(estimate.mobile.orientation(), truth.mobile.orientation()),
            s_joint: s.iter().map(|e| e * e).sum::<f64>().sqrt(),
            s_max: s.iter().copied().fold(0.0, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub noise_index: usize,
    pub trial: usize,
    /// Seed of the observation draw; the engine seed is derived from it.
    pub seed: u64,
    /// Checksum of the observations both estimators consumed.
    pub obs_checksum: u64,
    /// Estimator errors after every iteration.
    pub nbp: Vec<TrialErrors>,
    pub ls: Option<TrialErrors>,
    /// The baseline ran and failed.
    pub ls_failed: bool,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub noise_deg: f64,
    pub iteration: usize,
    pub rmse_p: f64,
    pub rmse_alpha: f64,
    pub rmse_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsRecord {
    pub noise_deg: f64,
    pub rmse_p: f64,
    pub rmse_alpha: f64,
    pub rmse_s: f64,
    /// Trials without an LS estimate; excluded from the RMSEs above.
    pub failed_trials: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    /// One row per (noise level, iteration), noise-major.
    pub iterations: Vec<IterationRecord>,
    /// One row per noise level when the baseline ran.
    pub ls: Vec<LsRecord>,
    /// Every trial, ordered by (noise level, trial).
    pub trials: Vec<TrialRecord>,
}

impl ExperimentReport {
    pub fn trials_at(&self, noise_index: usize) -> impl Iterator<Item = &TrialRecord> {
        self.trials.iter().filter(move |t| t.noise_index == noise_index)
    }

    pub fn flagged_trials(&self) -> usize {
        self.trials.iter().filter(|t| t.diagnostics.flagged()).count()
    }

    pub fn iteration(&self, noise_index: usize, iteration: usize) -> Option<&IterationRecord> {
        self.iterations
            .get(noise_index * self.config.engine.n_iterations + iteration.checked_sub(1)?)
    }
}

/// Seed of trial `trial` at noise level `noise_index`.
pub fn trial_seed(master: u64, noise_index: usize, trial: usize) -> u64 {
    derive_seed(master, &[noise_index as u64, trial as u64])
}

/// FNV-1a over the bit patterns of every observed value and noise level.
pub fn observation_checksum(obs: &Observations) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let values = obs
        .triplets
        .iter()
        .flat_map(|t| [t.d, t.theta_tx, t.theta_rx])
        .chain(obs.noise.paths.iter().flat_map(|n| [n.sigma_d, n.sigma_tx, n.sigma_rx]));
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

fn run_trial(cfg: &ExperimentConfig, grid: Option<&TrialGrid>, noise_index: usize, trial: usize) -> Result<TrialRecord> {
    let seed = trial_seed(cfg.master_seed, noise_index, trial);
    let obs = sample_observations(&cfg.scenario, &cfg.sweep[noise_index], seed)?;
    let q = cfg.scenario.base_station;
    let mut engine = cfg.engine.clone();
    engine.seed = derive_seed(seed, &[1]);
    engine.dump_iterations.clear();
    let out = run(&obs, q, &engine)?;
    let nbp = out
        .trace
        .estimates
        .iter()
        .map(|e| TrialErrors::of(e, &cfg.scenario))
        .collect();
    let (ls, ls_failed) = match grid {
        Some(g) => match grid_search(&obs, q, g) {
            Ok(est) => (Some(TrialErrors::of(&est, &cfg.scenario)), false),
            Err(Error::EstimationFailed(_) | Error::SingularGeometry { .. }) => (None, true),
            Err(e) => return Err(e),
        },
        None => (None, false),
    };
    Ok(TrialRecord {
        noise_index,
        trial,
        seed,
        obs_checksum: observation_checksum(&obs),
        nbp,
        ls,
        ls_failed,
        diagnostics: out.diagnostics,
    })
}

/// Runs every (noise level, trial) pair in parallel and aggregates RMSEs.
/// The result depends only on the config, never on scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let grid = if cfg.run_ls {
        Some(TrialGrid::new(cfg.ls_delta_alpha)?)
    } else {
        None
    };
    let jobs: Vec<(usize, usize)> = (0..cfg.sweep.len())
        .flat_map(|i| (0..cfg.n_trials).map(move |t| (i, t)))
        .collect();
    let trials = jobs
        .par_iter()
        .map(|&(i, t)| run_trial(cfg, grid.as_ref(), i, t))
        .collect::<Result<Vec<_>>>()?;

    let n_iter = cfg.engine.n_iterations;
    let mut iterations = Vec::with_capacity(cfg.sweep.len() * n_iter);
    let mut ls = Vec::new();
    for (i, spec) in cfg.sweep.iter().enumerate() {
        let noise_deg = noise_label_deg(spec);
        let level: Vec<&TrialRecord> = trials.iter().filter(|t| t.noise_index == i).collect();
        for l in 0..n_iter {
            let errs: Vec<TrialErrors> = level.iter().map(|t| t.nbp[l]).collect();
            iterations.push(IterationRecord {
                noise_deg,
                iteration: l + 1,
                rmse_p: compute_rmse(&errs.iter().map(|e| [e.p]).collect::<Vec<_>>())?,
                rmse_alpha: compute_rmse(&errs.iter().map(|e| [e.alpha]).collect::<Vec<_>>())?,
                rmse_s: compute_rmse(&errs.iter().map(|e| [e.s_joint]).collect::<Vec<_>>())?,
            });
        }
        if cfg.run_ls {
            let errs: Vec<TrialErrors> = level.iter().filter_map(|t| t.ls).collect();
            let rmse = |f: fn(&TrialErrors) -> f64| -> f64 {
                compute_rmse(&errs.iter().map(|e| [f(e)]).collect::<Vec<_>>()).unwrap_or(f64::NAN)
            };
            ls.push(LsRecord {
                noise_deg,
                rmse_p: rmse(|e| e.p),
                rmse_alpha: rmse(|e| e.alpha),
                rmse_s: rmse(|e| e.s_joint),
                failed_trials: level.len() - errs.len(),
            });
        }
    }
    Ok(ExperimentReport {
        config: cfg.clone(),
        iterations,
        ls,
        trials,
    })
}
