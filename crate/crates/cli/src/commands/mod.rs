//! One module per subcommand, plus the shared environment loader.

pub mod corrector;
pub mod homogenize;
pub mod report;
pub mod sample;
pub mod verify_gff;
pub mod walk_decay;

use gradgibbs::ensemble::{chain_kappa_ensemble, iid_ensemble};
use gradgibbs::lattice::ConductanceField;
use gradgibbs::sampler::Chain;

use crate::config::{EnvSource, RunConfig};
use crate::{archive, CliError, CliResult};

/// Conductance environments from the configured source.
pub fn load_environments(cfg: &RunConfig) -> CliResult<Vec<ConductanceField>> {
    let n = cfg.ensemble.count;
    if n == 0 {
        return Err(CliError::Config("ensemble.count: must be at least 1".into()));
    }
    match cfg.ensemble.source {
        EnvSource::Iid => Ok(iid_ensemble(&cfg.measure()?, cfg.torus()?, n, cfg.seed)?),
        EnvSource::Chain => {
            let mut chain = Chain::new(cfg.measure()?, cfg.torus()?, cfg.chain.checked(cfg.seed)?)?;
            chain.run_burn_in()?;
            Ok(chain_kappa_ensemble(&mut chain, n)?)
        }
        EnvSource::Archive => {
            let path = cfg.ensemble.archive.as_deref().ok_or_else(|| {
                CliError::Config(
                    "ensemble.archive: required when ensemble.source is \"archive\"".into(),
                )
            })?;
            archive::read_conductances("ensemble.archive", path, n)
        }
    }
}

/// Row-major flat matrix as nested rows for JSON.
pub fn matrix_rows(d: usize, flat: &[f64]) -> Vec<Vec<f64>> {
    (0..d).map(|j| flat[j * d..(j + 1) * d].to_vec()).collect()
}

/// Nested rows back to a row-major flat matrix, validating squareness.
pub fn matrix_flat(field: &str, rows: &[Vec<f64>]) -> CliResult<(usize, Vec<f64>)> {
    let d = rows.len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(CliError::Config(format!("{field}: must be a square matrix")));
    }
    Ok((d, rows.iter().flatten().copied().collect()))
}
