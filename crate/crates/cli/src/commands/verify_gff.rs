//! `gradgibbs verify-gff`: compare the empirical characteristic function of
//! sampled height pairings against the Gaussian free field predicted by an
//! effective matrix, with pass/fail per check and the raw tables attached.

use serde::{Deserialize, Serialize};

use gradgibbs::homogenize::{effective_matrix_ensemble, EffectiveMatrix};
use gradgibbs::io::FieldKind;
use gradgibbs::lattice::{ConductanceField, HeightField, Torus};
use gradgibbs::sampler::Chain;
use gradgibbs::scaling::{
    discretize, gff_limit_test, quadratic_form_limit_scan, DiscretizedTestFunction, FormScanRow,
};

use super::homogenize::{HomogenizeReport, MatrixBlock};
use super::matrix_flat;
use crate::config::RunConfig;
use crate::manifest::Run;
use crate::{archive, CliError, CliResult};

/// One characteristic-function comparison.
#[derive(Debug, Serialize, Deserialize)]
pub struct CfRow {
    pub name: String,
    pub epsilon: f64,
    /// Sample count behind the estimate.
    pub n: usize,
    pub re: f64,
    pub re_se: f64,
    pub im: f64,
    pub im_se: f64,
    /// `(f, (-Q̂)^{-1} f)` and the predicted `exp(-½ ·)`.
    pub green_form: f64,
    pub target: f64,
    pub discrepancy: f64,
}

/// A named pass/fail comparison, `statistic ≤ bound`.
#[derive(Debug, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub statistic: f64,
    pub bound: f64,
    pub pass: bool,
}

impl Check {
    fn new(name: String, statistic: f64, bound: f64) -> Check {
        Check {
            name,
            statistic,
            bound,
            pass: statistic <= bound,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VerifyReport {
    pub epsilon: f64,
    pub samples: usize,
    /// Where the effective matrix came from: "computed", "inline", or the
    /// report path it was read from.
    pub qhat_source: String,
    pub qhat_scale: f64,
    pub qhat: MatrixBlock,
    pub cf: Vec<CfRow>,
    /// Quadratic-form concentration rows, when scan scales were requested.
    pub form_scan: Vec<FormScanRow>,
    pub checks: Vec<Check>,
    pub pass: bool,
}

pub const REPORT_NAME: &str = "verify_gff_report.json";

pub fn run(run: &mut Run, cfg: &RunConfig, end_to_end: bool) -> CliResult<()> {
    let torus = cfg.torus()?;
    let eps = cfg.gff.epsilon;
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(CliError::Config("gff.epsilon: must lie in (0, 1]".into()));
    }
    let specs = cfg.gff.specs()?;
    let f_eps: Vec<DiscretizedTestFunction> = specs
        .iter()
        .map(|(_, s)| Ok(discretize(&s.rescaled(eps), torus)?))
        .collect::<CliResult<_>>()?;

    let inputs = if end_to_end {
        gather_end_to_end(run, cfg, torus, &f_eps)?
    } else {
        gather_from_archive(run, cfg, torus, &f_eps)?
    };
    let Inputs {
        mut qhat,
        qhat_source,
        pairings,
        envs,
    } = inputs;

    if qhat.d != torus.d() {
        return Err(CliError::Config(format!(
            "gff.qhat: matrix is {}×{} but the torus has d = {}",
            qhat.d,
            qhat.d,
            torus.d()
        )));
    }
    if cfg.gff.qhat_scale != 1.0 {
        for v in &mut qhat.q {
            *v *= cfg.gff.qhat_scale;
        }
    }

    let samples = pairings[0].len();
    let mut cf = Vec::new();
    let mut checks = Vec::new();
    for ((name, spec), pair) in specs.iter().zip(&pairings) {
        let rep = gff_limit_test(pair, spec, &qhat, eps, cfg.gff.batches)?;
        let e = &rep.estimate;
        checks.push(Check::new(
            format!("{name}: |Re CF - target|"),
            rep.discrepancy,
            3.0 * e.re_se + cfg.gff.slack,
        ));
        checks.push(Check::new(
            format!("{name}: |Im CF|"),
            e.im.abs(),
            3.0 * e.im_se,
        ));
        cf.push(CfRow {
            name: name.clone(),
            epsilon: eps,
            n: e.n,
            re: e.re,
            re_se: e.re_se,
            im: e.im,
            im_se: e.im_se,
            green_form: rep.green_form,
            target: rep.target,
            discrepancy: rep.discrepancy,
        });
    }

    let form_scan = if cfg.gff.scan_epsilons.is_empty() {
        Vec::new()
    } else if envs.is_empty() {
        return Err(CliError::Config(
            "gff.scan_epsilons: the archive holds no conductance records to scan over".into(),
        ));
    } else {
        run.stage("form_scan", || {
            Ok(quadratic_form_limit_scan(
                &envs,
                &specs[0].1,
                &cfg.gff.scan_epsilons,
            )?)
        })?
    };

    let pass = checks.iter().all(|c| c.pass);
    let report = VerifyReport {
        epsilon: eps,
        samples,
        qhat_source,
        qhat_scale: cfg.gff.qhat_scale,
        qhat: MatrixBlock::from(&qhat),
        cf,
        form_scan,
        checks,
        pass,
    };

    run.write_json(REPORT_NAME, &report)?;
    let cf_rows: Vec<String> = report
        .cf
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{},{},{},{}",
                r.name, r.epsilon, r.n, r.re, r.re_se, r.im, r.im_se, r.target, r.discrepancy
            )
        })
        .collect();
    run.write_csv(
        "cf.csv",
        "name,epsilon,n,re,re_se,im,im_se,target,discrepancy",
        &cf_rows,
    )?;
    if !report.form_scan.is_empty() {
        let rows: Vec<String> = report
            .form_scan
            .iter()
            .map(|r| {
                format!(
                    "{},{},{},{},{}",
                    r.epsilon,
                    r.mean,
                    r.sd,
                    r.h_norm_sq,
                    r.mean / r.h_norm_sq
                )
            })
            .collect();
        run.write_csv("form_scan.csv", "epsilon,mean,sd,h_norm_sq,ratio", &rows)?;
    }

    if report.pass {
        Ok(())
    } else {
        let failed: Vec<&str> = report
            .checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| c.name.as_str())
            .collect();
        Err(CliError::Check(format!(
            "{} of {} checks failed: {}",
            failed.len(),
            report.checks.len(),
            failed.join("; ")
        )))
    }
}

struct Inputs {
    qhat: EffectiveMatrix,
    qhat_source: String,
    /// One pairing series per test function.
    pairings: Vec<Vec<f64>>,
    /// Conductance environments available for the form scan.
    envs: Vec<ConductanceField>,
}

/// Run the chain in-process: pairings from every thinned sample, an
/// environment ensemble from evenly spaced conductance snapshots, and the
/// effective matrix from the corrector route over that ensemble.
fn gather_end_to_end(
    run: &mut Run,
    cfg: &RunConfig,
    torus: Torus,
    f_eps: &[DiscretizedTestFunction],
) -> CliResult<Inputs> {
    if cfg.gff.archive.is_some() || cfg.gff.qhat.is_some() {
        return Err(CliError::Config(
            "gff.archive and gff.qhat conflict with --end-to-end".into(),
        ));
    }
    let samples = cfg.chain.samples;
    if samples == 0 {
        return Err(CliError::Config("chain.samples: must be at least 1".into()));
    }
    let n_env = cfg.ensemble.count.max(1);
    let keep_every = (samples / n_env).max(1);

    let mut chain = Chain::new(cfg.measure()?, torus, cfg.chain.checked(cfg.seed)?)?;
    run.stage("burn_in", || Ok(chain.run_burn_in()?))?;

    let mut pairings = vec![Vec::with_capacity(samples); f_eps.len()];
    let mut envs: Vec<ConductanceField> = Vec::new();
    run.stage("sample", || {
        for i in 0..samples {
            chain.advance(cfg.chain.thinning)?;
            for (series, f) in pairings.iter_mut().zip(f_eps) {
                series.push(f.pairing(chain.phi()));
            }
            if (i + 1) % keep_every == 0 && envs.len() < n_env {
                envs.push(chain.kappa().clone());
            }
        }
        Ok(())
    })?;

    let qhat = run.stage("effective_matrix", || {
        Ok(effective_matrix_ensemble(&envs, cfg.corrector.tol)?)
    })?;
    Ok(Inputs {
        qhat,
        qhat_source: "computed".into(),
        pairings,
        envs,
    })
}

/// Read pairings (and any conductance records) from a sample archive and the
/// effective matrix from the configuration.
fn gather_from_archive(
    run: &mut Run,
    cfg: &RunConfig,
    torus: Torus,
    f_eps: &[DiscretizedTestFunction],
) -> CliResult<Inputs> {
    let path = cfg.gff.archive.as_deref().ok_or_else(|| {
        CliError::Config("gff.archive: required unless --end-to-end is given".into())
    })?;
    let (qhat, qhat_source) = load_qhat(cfg)?;

    let n_env = cfg.ensemble.count;
    let mut pairings = vec![Vec::new(); f_eps.len()];
    let mut envs: Vec<ConductanceField> = Vec::new();
    run.stage("read_archive", || {
        let mut r = archive::open("gff.archive", path)?;
        archive::for_each(&mut r, |header, values| {
            let record_torus = header.torus()?;
            if record_torus != torus {
                return Err(CliError::Config(format!(
                    "gff.archive: record on d = {}, L = {} but the config torus is d = {}, L = {}",
                    record_torus.d(),
                    record_torus.l(),
                    torus.d(),
                    torus.l()
                )));
            }
            match header.kind {
                FieldKind::Height => {
                    let phi = HeightField::new(torus, values)?;
                    for (series, f) in pairings.iter_mut().zip(f_eps) {
                        series.push(f.pairing(&phi));
                    }
                }
                FieldKind::Conductance if envs.len() < n_env => {
                    envs.push(ConductanceField::new(torus, values)?);
                }
                _ => {}
            }
            Ok(())
        })
    })?;
    if pairings[0].is_empty() {
        return Err(CliError::Config(format!(
            "gff.archive: {} holds no height records",
            path.display()
        )));
    }
    Ok(Inputs {
        qhat,
        qhat_source,
        pairings,
        envs,
    })
}

fn load_qhat(cfg: &RunConfig) -> CliResult<(EffectiveMatrix, String)> {
    let q = cfg.gff.qhat.as_ref().ok_or_else(|| {
        CliError::Config("gff.qhat: required unless --end-to-end is given".into())
    })?;
    match (&q.matrix, &q.report) {
        (Some(rows), None) => {
            let (d, flat) = matrix_flat("gff.qhat.matrix", rows)?;
            Ok((
                EffectiveMatrix {
                    d,
                    q: flat,
                    se: None,
                    method: "inline".into(),
                    n_env: 0,
                },
                "inline".into(),
            ))
        }
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Config(format!("gff.qhat.report: cannot read {}: {e}", path.display()))
            })?;
            let rep: HomogenizeReport = serde_json::from_str(&text).map_err(|e| {
                CliError::Config(format!(
                    "gff.qhat.report: {} is not a homogenize report: {e}",
                    path.display()
                ))
            })?;
            let (d, flat) = matrix_flat("gff.qhat.report: corrector.q", &rep.corrector.q)?;
            Ok((
                EffectiveMatrix {
                    d,
                    q: flat,
                    se: None,
                    method: rep.corrector.method.clone(),
                    n_env: rep.corrector.n_env,
                },
                path.display().to_string(),
            ))
        }
        _ => Err(CliError::Config(
            "gff.qhat: give exactly one of `matrix` or `report`".into(),
        )),
    }
}
