//! `gradgibbs homogenize`: effective matrix by the corrector and walk
//! routes over an environment ensemble, with their discrepancy.

use serde::{Deserialize, Serialize};

use gradgibbs::homogenize::{effective_matrix_ensemble, EffectiveMatrix};
use gradgibbs::walk::annealed_q_estimate;

use super::{load_environments, matrix_rows};
use crate::config::RunConfig;
use crate::manifest::Run;
use crate::CliResult;

/// One estimator's matrix, JSON-friendly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixBlock {
    pub method: String,
    pub n_env: usize,
    pub q: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub se: Option<Vec<Vec<f64>>>,
}

impl From<&EffectiveMatrix> for MatrixBlock {
    fn from(m: &EffectiveMatrix) -> Self {
        MatrixBlock {
            method: m.method.clone(),
            n_env: m.n_env,
            q: matrix_rows(m.d, &m.q),
            se: m.se.as_ref().map(|se| matrix_rows(m.d, se)),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HomogenizeReport {
    pub d: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub n_env: usize,
    pub corrector: MatrixBlock,
    pub walk: MatrixBlock,
    /// `max_jk |q̂_corr − q̂_walk|`, absolute and relative to the mean
    /// corrector-route diagonal.
    pub max_abs_difference: f64,
    pub max_rel_difference: f64,
}

pub const REPORT_NAME: &str = "homogenize_report.json";

pub fn run(run: &mut Run, cfg: &RunConfig) -> CliResult<()> {
    let envs = run.stage("environments", || load_environments(cfg))?;
    let torus = envs[0].torus();

    let corr = run.stage("corrector_route", || {
        Ok(effective_matrix_ensemble(&envs, cfg.corrector.tol)?)
    })?;
    let walk = run.stage("walk_route", || {
        Ok(annealed_q_estimate(
            &envs,
            cfg.walk.t,
            cfg.walk.paths_per_env,
            cfg.seed,
        )?)
    })?;

    let max_abs = corr
        .q
        .iter()
        .zip(&walk.q)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let report = HomogenizeReport {
        d: torus.d(),
        l: torus.l(),
        n_env: envs.len(),
        max_abs_difference: max_abs,
        max_rel_difference: max_abs / corr.scale(),
        corrector: MatrixBlock::from(&corr),
        walk: MatrixBlock::from(&walk),
    };
    run.write_json(REPORT_NAME, &report)
}
