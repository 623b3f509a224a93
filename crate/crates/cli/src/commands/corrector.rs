//! `gradgibbs corrector`: solve the cell problem per environment, report
//! harmonicity residuals and the corrector-route effective matrix.

use std::fs::File;
use std::io::{BufWriter, Write};

use serde::{Deserialize, Serialize};

use gradgibbs::homogenize::{
    corrector_closed_form_1d, effective_matrix_ensemble, Corrector,
};
use gradgibbs::io::{write_record, FieldKind};

use super::{homogenize::MatrixBlock, load_environments};
use crate::config::RunConfig;
use crate::manifest::Run;
use crate::CliResult;

#[derive(Debug, Serialize, Deserialize)]
pub struct CorrectorReport {
    pub d: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub n_env: usize,
    pub tol: f64,
    /// Worst harmonicity residual per environment.
    pub residuals: Vec<f64>,
    pub residual_max: f64,
    pub qhat: MatrixBlock,
    /// Worst deviation from the d = 1 ring closed form, when applicable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed_form_max_dev: Option<f64>,
}

pub const REPORT_NAME: &str = "corrector_report.json";
pub const FIELDS_NAME: &str = "correctors.bin";

pub fn run(run: &mut Run, cfg: &RunConfig) -> CliResult<()> {
    let envs = run.stage("environments", || load_environments(cfg))?;
    let torus = envs[0].torus();
    let tol = cfg.corrector.tol;

    let correctors = run.stage("solve", || {
        envs.iter()
            .map(|kappa| Ok(Corrector::solve(kappa, tol)?))
            .collect::<CliResult<Vec<Corrector>>>()
    })?;
    let residuals: Vec<f64> = correctors.iter().map(|c| c.max_residual()).collect();
    let residual_max = residuals.iter().fold(0.0f64, |a, &b| a.max(b));

    let closed_form_max_dev = if torus.d() == 1 {
        let mut dev = 0.0f64;
        for (kappa, corr) in envs.iter().zip(&correctors) {
            let exact = corrector_closed_form_1d(kappa)?;
            for (a, b) in corr.chi(0).iter().zip(&exact) {
                dev = dev.max((a - b).abs());
            }
        }
        Some(dev)
    } else {
        None
    };

    let qhat = run.stage("effective_matrix", || {
        Ok(effective_matrix_ensemble(&envs, tol)?)
    })?;

    if cfg.corrector.write_fields {
        let path = run.dir().join(FIELDS_NAME);
        let mut w = BufWriter::new(File::create(&path)?);
        for corr in &correctors {
            for j in 0..torus.d() {
                write_record(&mut w, torus, FieldKind::Site, Some(j), corr.chi(j))?;
            }
        }
        w.flush()?;
        drop(w);
        run.register(FIELDS_NAME)?;
    }

    let report = CorrectorReport {
        d: torus.d(),
        l: torus.l(),
        n_env: envs.len(),
        tol,
        residuals,
        residual_max,
        qhat: MatrixBlock::from(&qhat),
        closed_form_max_dev,
    };
    run.write_json(REPORT_NAME, &report)
}
