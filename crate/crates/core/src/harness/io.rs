use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::engine::MessageDump;
use crate::error::{Error, Result};
use crate::geometry::{NoiseSpec, Observations, PathNoise, PathTriple};
use crate::harness::experiment::ExperimentReport;

const OBS_HEADER: &str = "path,d_m,theta_tx_rad,theta_rx_rad,sigma_d_m,sigma_tx_rad,sigma_rx_rad";

pub fn observations_to_csv(obs: &Observations) -> String {
    let mut out = String::from(OBS_HEADER);
    out.push('\n');
    for (j, (t, n)) in obs.triplets.iter().zip(&obs.noise.paths).enumerate() {
        let _ = writeln!(
            out,
            "{j},{},{},{},{},{},{}",
            t.d, t.theta_tx, t.theta_rx, n.sigma_d, n.sigma_tx, n.sigma_rx
        );
    }
    out
}

pub fn parse_observations(text: &str) -> Result<Observations> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == OBS_HEADER => {}
        _ => {
            return Err(Error::Config {
                line: 1,
                message: format!("expected header `{OBS_HEADER}`"),
            })
        }
    }
    let mut triplets = Vec::new();
    let mut noise = Vec::new();
    for (i, line) in lines {
        let bad = |message: String| Error::Config { line: i + 1, message };
        let fields: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>().map_err(|_| bad(format!("`{f}` is not a number"))))
            .collect::<Result<_>>()?;
        if fields.len() != 7 {
            return Err(bad(format!("expected 7 fields, got {}", fields.len())));
        }
        if fields[0] != triplets.len() as f64 {
            return Err(bad("paths must be numbered 0, 1, 2, ... in order".into()));
        }
        triplets.push(PathTriple {
            d: fields[1],
            theta_tx: fields[2],
            theta_rx: fields[3],
        });
        noise.push(PathNoise {
            sigma_d: fields[4],
            sigma_tx: fields[5],
            sigma_rx: fields[6],
        });
    }
    Observations::new(triplets, NoiseSpec::new(noise)?)
}

pub fn write_observations(obs: &Observations, path: &Path) -> Result<()> {
    fs::write(path, observations_to_csv(obs)).map_err(|e| Error::io(path, e))
}

pub fn read_observations(path: &Path) -> Result<Observations> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_observations(&text)
}

/// Writes one CSV per dumped message into `dir`; returns the paths.
pub fn write_dumps(dumps: &[MessageDump], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    dumps
        .iter()
        .map(|d| {
            let path = dir.join(d.file_name());
            d.particles.write_csv(&path)?;
            Ok(path)
        })
        .collect()
}

/// Writes `rmse_vs_iteration.csv`, `rmse_vs_noise.csv`, `trials.csv` and
/// `run_metadata.cfg` into `dir`.
pub fn export_report(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n_iter = report.config.engine.n_iterations;

    let mut by_iter = String::from("noise_deg,iteration,rmse_p_m,rmse_alpha_rad,rmse_s_m\n");
    for r in &report.iterations {
        let _ = writeln!(by_iter, "{},{},{},{},{}", r.noise_deg, r.iteration, r.rmse_p, r.rmse_alpha, r.rmse_s);
    }

    let mut by_noise = String::from("noise_deg,estimator,rmse_p_m,rmse_alpha_rad,rmse_s_m\n");
    for r in report.iterations.iter().filter(|r| r.iteration == n_iter) {
        let _ = writeln!(by_noise, "{},nbp,{},{},{}", r.noise_deg, r.rmse_p, r.rmse_alpha, r.rmse_s);
        if let Some(l) = report.ls.iter().find(|l| l.noise_deg == r.noise_deg) {
            let _ = writeln!(by_noise, "{},ls,{},{},{}", l.noise_deg, l.rmse_p, l.rmse_alpha, l.rmse_s);
        }
    }

    let mut trials = String::from(
        "noise_deg,trial,seed,obs_checksum,p_err_m,alpha_err_rad,s_err_m,ls_p_err_m,ls_alpha_err_rad,ls_s_err_m,recovered,fallbacks,flagged\n",
    );
    for t in &report.trials {
        let deg = report.iterations[t.noise_index * n_iter].noise_deg;
        let last = t.nbp.last().expect("at least one iteration");
        let (lp, la, ls) = t.ls.map_or((String::new(), String::new(), String::new()), |e| {
            (e.p.to_string(), e.alpha.to_string(), e.s_joint.to_string())
        });
        let _ = writeln!(
            trials,
            "{deg},{},{},{:016x},{},{},{},{lp},{la},{ls},{},{},{}",
            t.trial,
            t.seed,
            t.obs_checksum,
            last.p,
            last.alpha,
            last.s_joint,
            t.diagnostics.recovered,
            t.diagnostics.fallbacks,
            t.diagnostics.flagged() || t.ls_failed,
        );
    }

    let files = [
        ("rmse_vs_iteration.csv", by_iter),
        ("rmse_vs_noise.csv", by_noise),
        ("trials.csv", trials),
        ("run_metadata.cfg", report.config.to_metadata()),
    ];
    files
        .into_iter()
        .map(|(name, body)| {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}
