use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::baseline::DEFAULT_DELTA_ALPHA;
use crate::engine::{EngineConfig, DEFAULT_SUBSAMPLE};
use crate::error::{Error, Result};
use crate::geometry::{NoiseSpec, Point2, Pose, Scenario};

/// One `key = value` line of a config file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyValue {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Splits a flat config into dotted keys and raw values. Blank lines and
/// `#` comments are skipped; repeated keys are rejected.
pub fn parse_key_values(text: &str) -> Result<Vec<KeyValue>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
            line,
            message: format!("expected `key = value`, got `{content}`"),
        })?;
        let key = key.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(Error::Config {
                line,
                message: format!("bad key `{key}`"),
            });
        }
        if !seen.insert(key.to_string()) {
            return Err(Error::Config {
                line,
                message: format!("duplicate key `{key}`"),
            });
        }
        out.push(KeyValue {
            line,
            key: key.to_string(),
            value: value.trim().to_string(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    /// Noise levels; each is run for `n_trials` trials.
    pub sweep: Vec<NoiseSpec>,
    pub engine: EngineConfig,
    pub n_trials: usize,
    /// Also run the grid-search LS baseline on every trial.
    pub run_ls: bool,
    pub ls_delta_alpha: f64,
    pub output_dir: PathBuf,
    pub master_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let scenario = Scenario::benchmark();
        let n = scenario.n_paths();
        ExperimentConfig {
            scenario,
            sweep: vec![NoiseSpec::uniform(n, 0.2, 1f64.to_radians(), 1f64.to_radians()).expect("valid noise")],
            engine: EngineConfig::default(),
            n_trials: 100,
            run_ls: true,
            ls_delta_alpha: DEFAULT_DELTA_ALPHA,
            output_dir: PathBuf::from("out"),
            master_seed: 0,
        }
    }
}

fn config_err(kv: &KeyValue, message: impl Into<String>) -> Error {
    Error::Config {
        line: kv.line,
        message: format!("{}: {}", kv.key, message.into()),
    }
}

fn numbers(kv: &KeyValue) -> Result<Vec<f64>> {
    kv.value
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| config_err(kv, format!("`{t}` is not a number")))
        })
        .collect()
}

fn number(kv: &KeyValue) -> Result<f64> {
    match numbers(kv)?.as_slice() {
        [x] => Ok(*x),
        _ => Err(config_err(kv, "expected one number")),
    }
}

fn point(kv: &KeyValue) -> Result<Point2> {
    match numbers(kv)?.as_slice() {
        [x, y] => Ok(Point2::new(*x, *y)),
        _ => Err(config_err(kv, "expected two numbers")),
    }
}

fn count(kv: &KeyValue) -> Result<usize> {
    kv.value
        .parse()
        .map_err(|_| config_err(kv, format!("`{}` is not a count", kv.value)))
}

fn flag(kv: &KeyValue) -> Result<bool> {
    match kv.value.as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        v => Err(config_err(kv, format!("`{v}` is not a boolean"))),
    }
}

fn join(xs: impl IntoIterator<Item = f64>) -> String {
    xs.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

impl ExperimentConfig {
    /// Full published scale: 1000 trials with 10^4 particles. Expect hours.
    pub fn paper_scale(mut self) -> Self {
        self.n_trials = 1000;
        self.engine.n_particles = 10_000;
        self.engine.incoming_subsample = DEFAULT_SUBSAMPLE;
        self
    }

    /// Angle sweep in degrees (transmit and receive alike) at a fixed distance noise.
    pub fn angle_sweep(&self, sigma_d: f64, degrees: &[f64]) -> Result<Vec<NoiseSpec>> {
        degrees
            .iter()
            .map(|d| NoiseSpec::uniform(self.scenario.n_paths(), sigma_d, d.to_radians(), d.to_radians()))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.sweep.is_empty() {
            return Err(Error::InvalidInput("the noise sweep is empty".into()));
        }
        for spec in &self.sweep {
            spec.validate()?;
            if spec.paths.len() != self.scenario.n_paths() {
                return Err(Error::InvalidInput(format!(
                    "noise spec has {} paths, scenario has {}",
                    spec.paths.len(),
                    self.scenario.n_paths()
                )));
            }
        }
        if self.n_trials == 0 {
            return Err(Error::InvalidInput("n_trials must be at least 1".into()));
        }
        if !(self.ls_delta_alpha > 0.0 && self.ls_delta_alpha.is_finite()) {
            return Err(Error::InvalidInput("LS grid step must be positive".into()));
        }
        self.engine.validate()
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies a config text on top of the defaults. Keys under `resolved.`
    /// are informational and ignored, so run metadata can be read back.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut q = cfg.scenario.base_station;
        let mut p = cfg.scenario.mobile.position;
        let mut alpha = cfg.scenario.mobile.orientation();
        let mut s = cfg.scenario.incidence_points.clone();
        let mut sigma_d = 0.2;
        let mut angles = vec![1.0];
        let mut subsample = None;
        for kv in parse_key_values(text)? {
            match kv.key.as_str() {
                "scenario.q" => q = point(&kv)?,
                "scenario.p" => p = point(&kv)?,
                "scenario.alpha_deg" => alpha = number(&kv)?.to_radians(),
                "scenario.s" => {
                    let xs = numbers(&kv)?;
                    if xs.is_empty() || xs.len() % 2 != 0 {
                        return Err(config_err(&kv, "expected x y pairs"));
                    }
                    s = xs.chunks_exact(2).map(|c| Point2::new(c[0], c[1])).collect();
                }
                "noise.sigma_d_m" => sigma_d = number(&kv)?,
                "noise.sigma_angles_deg" => {
                    angles = numbers(&kv)?;
                    if angles.is_empty() {
                        return Err(config_err(&kv, "empty sweep"));
                    }
                }
                "engine.particles" => cfg.engine.n_particles = count(&kv)?,
                "engine.iterations" => cfg.engine.n_iterations = count(&kv)?,
                "engine.subsample" => subsample = Some(count(&kv)?),
                "engine.bandwidth_position_m" => cfg.engine.bandwidth_position = Some(number(&kv)?),
                "engine.bandwidth_orientation_deg" => {
                    cfg.engine.bandwidth_orientation = Some(number(&kv)?.to_radians())
                }
                "engine.cover_radius" => cfg.engine.cover_radius = number(&kv)?,
                "engine.max_redraws" => cfg.engine.max_redraws = count(&kv)?,
                "engine.strict" => cfg.engine.strict = flag(&kv)?,
                "engine.dump_iterations" => {
                    cfg.engine.dump_iterations = kv
                        .value
                        .split_whitespace()
                        .map(|t| t.parse().map_err(|_| config_err(&kv, format!("`{t}` is not a count"))))
                        .collect::<Result<_>>()?
                }
                "experiment.trials" => cfg.n_trials = count(&kv)?,
                "experiment.seed" => {
                    cfg.master_seed = kv
                        .value
                        .parse()
                        .map_err(|_| config_err(&kv, "not a 64-bit seed"))?
                }
                "experiment.ls" => cfg.run_ls = flag(&kv)?,
                "experiment.ls_delta_alpha_rad" => cfg.ls_delta_alpha = number(&kv)?,
                "experiment.output_dir" => cfg.output_dir = PathBuf::from(&kv.value),
                k if k.starts_with("resolved.") => {}
                _ => return Err(config_err(&kv, "unknown key")),
            }
        }
        cfg.engine.incoming_subsample = subsample.unwrap_or(cfg.engine.n_particles.min(DEFAULT_SUBSAMPLE));
        cfg.scenario = Scenario::new(q, Pose::new(p, alpha), s)?;
        cfg.sweep = cfg.angle_sweep(sigma_d, &angles)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every setting, resolved, in the config format. Per-level bandwidth
    /// defaults appear under `resolved.`.
    pub fn to_metadata(&self) -> String {
        let e = &self.engine;
        let sc = &self.scenario;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("scenario.q", join([sc.base_station.x, sc.base_station.y]));
        kv("scenario.p", join([sc.mobile.position.x, sc.mobile.position.y]));
        kv("scenario.alpha_deg", sc.mobile.orientation().to_degrees().to_string());
        kv("scenario.s", join(sc.incidence_points.iter().flat_map(|s| [s.x, s.y])));
        if let Some(sd) = self.uniform_sigma_d() {
            kv("noise.sigma_d_m", sd.to_string());
            kv("noise.sigma_angles_deg", join(self.sweep.iter().map(noise_label_deg)));
        }
        kv("engine.particles", e.n_particles.to_string());
        kv("engine.iterations", e.n_iterations.to_string());
        kv("engine.subsample", e.incoming_subsample.to_string());
        if let Some(b) = e.bandwidth_position {
            kv("engine.bandwidth_position_m", b.to_string());
        }
        if let Some(b) = e.bandwidth_orientation {
            kv("engine.bandwidth_orientation_deg", b.to_degrees().to_string());
        }
        kv("engine.cover_radius", e.cover_radius.to_string());
        kv("engine.max_redraws", e.max_redraws.to_string());
        kv("engine.strict", e.strict.to_string());
        if !e.dump_iterations.is_empty() {
            kv("engine.dump_iterations", e.dump_iterations.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(" "));
        }
        kv("experiment.trials", self.n_trials.to_string());
        kv("experiment.seed", self.master_seed.to_string());
        kv("experiment.ls", self.run_ls.to_string());
        kv("experiment.ls_delta_alpha_rad", self.ls_delta_alpha.to_string());
        kv("experiment.output_dir", self.output_dir.display().to_string());
        for (i, spec) in self.sweep.iter().enumerate() {
            let sd = spec.paths.iter().map(|n| n.sigma_d).fold(0.0, f64::max);
            let srx = spec.paths.iter().map(|n| n.sigma_rx).fold(0.0, f64::max);
            let bp = e.bandwidth_position.unwrap_or_else(|| crate::engine::default_position_bandwidth(sd));
            let bo = e
                .bandwidth_orientation
                .unwrap_or_else(|| crate::engine::default_orientation_bandwidth(srx));
            kv(&format!("resolved.level{i}.noise_deg"), noise_label_deg(spec).to_string());
            kv(&format!("resolved.level{i}.bandwidth_position_m"), bp.to_string());
            kv(&format!("resolved.level{i}.bandwidth_orientation_rad"), bo.to_string());
        }
        out
    }

    fn uniform_sigma_d(&self) -> Option<f64> {
        let first = self.sweep.first()?.paths.first()?.sigma_d;
        let uniform = self
            .sweep
            .iter()
            .flat_map(|s| &s.paths)
            .all(|n| n.sigma_d == first && n.sigma_tx == n.sigma_rx);
        uniform.then_some(first)
    }
}

/// Label of a noise level: its largest transmit-angle deviation in degrees.
pub(crate) fn noise_label_deg(spec: &NoiseSpec) -> f64 {
    spec.paths.iter().map(|n| n.sigma_tx).fold(0.0, f64::max).to_degrees()
}
