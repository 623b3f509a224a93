//! `gradgibbs walk-decay`: decay-rate fit for second differences of the
//! annealed heat kernel over an environment ensemble.

use serde::{Deserialize, Serialize};

use gradgibbs::walk::{derivative_decay_check, DecayCheck};

use super::load_environments;
use crate::config::RunConfig;
use crate::manifest::Run;
use crate::CliResult;

#[derive(Debug, Serialize, Deserialize)]
pub struct WalkDecayReport {
    pub d: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub n_env: usize,
    /// The diffusive reference `−(d/2 + 1)` the fitted slope is judged
    /// against.
    pub reference_slope: f64,
    pub fit: DecayCheck,
}

pub const REPORT_NAME: &str = "walk_decay_report.json";

pub fn run(run: &mut Run, cfg: &RunConfig) -> CliResult<()> {
    let envs = run.stage("environments", || load_environments(cfg))?;
    let torus = envs[0].torus();
    let times = cfg.decay.times()?;

    let fit = run.stage("evolve", || Ok(derivative_decay_check(&envs, &times)?))?;

    let rows: Vec<String> = fit
        .times
        .iter()
        .zip(&fit.envelope)
        .map(|(t, e)| format!("{t},{e}"))
        .collect();
    run.write_csv("decay.csv", "t,envelope", &rows)?;

    let report = WalkDecayReport {
        d: torus.d(),
        l: torus.l(),
        n_env: envs.len(),
        reference_slope: -(torus.d() as f64 / 2.0 + 1.0),
        fit,
    };
    run.write_json(REPORT_NAME, &report)
}
