//! Environment ensembles: collections of conductance fields over which
//! annealed quantities are averaged.

use crate::error::{Error, Result};
use crate::lattice::{ConductanceField, Torus};
use crate::potential::MixtureMeasure;
use crate::rng::CounterStream;
use crate::sampler::Chain;

const ENSEMBLE_STREAM: u64 = 21;

/// Environments with iid edge conductances drawn from the mixture's prior
/// weights.  Deterministic in `(seed, index)`.
pub fn iid_ensemble(
    rho: &MixtureMeasure,
    torus: Torus,
    n_env: usize,
    seed: u64,
) -> Result<Vec<ConductanceField>> {
    if n_env == 0 {
        return Err(Error::invalid("need at least one environment"));
    }
    let sampler = rho.posterior_sampler();
    (0..n_env)
        .map(|e| {
            let mut stream = CounterStream::new(seed, &[ENSEMBLE_STREAM, e as u64]);
            ConductanceField::new(
                torus,
                (0..torus.edges())
                    .map(|i| sampler.draw(0.0, stream.uniform_at(i)))
                    .collect(),
            )
        })
        .collect()
}

/// Thinned conductance marginals of a joint chain (burn-in is the caller's
/// responsibility).  These sample the κ-marginal of the gradient Gibbs
/// measure rather than the iid prior.
pub fn chain_kappa_ensemble(chain: &mut Chain, n_env: usize) -> Result<Vec<ConductanceField>> {
    let mut out = Vec::with_capacity(n_env);
    chain.for_each_sample(n_env, |kappa, _| out.push(kappa.clone()))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::ChainConfig;

    #[test]
    fn iid_edges_have_prior_frequencies_and_no_correlation() {
        let t = Torus::new(2, 8).unwrap();
        let rho = MixtureMeasure::two_atom(1.0, 4.0, 0.25).unwrap();
        let envs = iid_ensemble(&rho, t, 400, 17).unwrap();
        let n = (envs.len() * t.edges()) as f64;
        let hits: usize = envs
            .iter()
            .map(|e| e.values().iter().filter(|&&k| k == 1.0).count())
            .sum();
        let freq = hits as f64 / n;
        let se = (0.25 * 0.75 / n).sqrt();
        assert!((freq - 0.25).abs() <= 3.0 * se, "freq {freq}");

        // two fixed edges across environments are uncorrelated
        let a: Vec<f64> = envs.iter().map(|e| e.values()[3]).collect();
        let b: Vec<f64> = envs.iter().map(|e| e.values()[77]).collect();
        let ma = crate::stats::mean(&a);
        let mb = crate::stats::mean(&b);
        let cov: f64 = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - ma) * (y - mb))
            .sum::<f64>()
            / (a.len() - 1) as f64;
        let va = crate::stats::variance(&a);
        assert!(cov.abs() <= 3.0 * va / (a.len() as f64).sqrt(), "cov {cov}");
    }

    #[test]
    fn ensembles_are_reproducible() {
        let t = Torus::new(1, 16).unwrap();
        let rho = MixtureMeasure::two_atom(1.0, 4.0, 0.5).unwrap();
        let a = iid_ensemble(&rho, t, 3, 5).unwrap();
        let b = iid_ensemble(&rho, t, 3, 5).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.values(), y.values());
        }
        let c = iid_ensemble(&rho, t, 3, 6).unwrap();
        assert!(a.iter().zip(&c).any(|(x, y)| x.values() != y.values()));
    }

    #[test]
    fn chain_marginals_come_from_the_joint_law() {
        let t = Torus::new(1, 3).unwrap();
        let rho = MixtureMeasure::two_atom(1.0, 4.0, 0.5).unwrap();
        let mut cfg = ChainConfig::new(31);
        cfg.burn_in = 200;
        cfg.thinning = 5;
        let mut chain = Chain::new(rho, t, cfg).unwrap();
        chain.run_burn_in().unwrap();
        let envs = chain_kappa_ensemble(&mut chain, 50).unwrap();
        assert_eq!(envs.len(), 50);
        assert!(envs.iter().all(|e| e.min() >= 1.0 && e.max() <= 4.0));
        // consecutive thinned draws differ (the chain actually moves)
        assert!(envs.windows(2).any(|w| w[0].values() != w[1].values()));
    }
}
