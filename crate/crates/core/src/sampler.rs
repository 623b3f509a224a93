//! Gibbs sampling of the joint field `(φ, κ)`.
//!
//! The chain alternates two exact conditional updates:
//!
//! * every edge conductance is redrawn independently from its posterior
//!   given the current gradient on that edge;
//! * the heights are redrawn given the conductances, either exactly (one
//!   sparse Cholesky draw of the pinned Gaussian) or by checkerboard
//!   heat-bath passes.
//!
//! All randomness is counter-based: each sweep derives its own streams from
//! `(seed, purpose, sweep)` and indexes draws by edge or site, so a chain is
//! a pure function of its seed and can be checkpointed as `(seed, sweep,
//! state)` and resumed bit-for-bit.

use crate::error::{Error, Result};
use crate::lattice::{ConductanceField, HeightField, Torus};
use crate::linalg::PinnedFactor;
use crate::potential::MixtureMeasure;
use crate::rng::CounterStream;
use serde::{Deserialize, Serialize};

const INIT_STREAM: u64 = 1;
const KAPPA_STREAM: u64 = 2;
const PHI_STREAM: u64 = 3;

/// How the height field is redrawn given the conductances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiUpdate {
    /// One exact draw of the pinned Gaussian per sweep.
    Exact,
    /// `sweeps` full checkerboard heat-bath passes per sweep.
    HeatBath { sweeps: usize },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ChainConfig {
    pub seed: u64,
    pub burn_in: usize,
    /// Sweeps between emitted samples.
    pub thinning: usize,
    pub phi_update: PhiUpdate,
}

impl ChainConfig {
    pub fn new(seed: u64) -> Self {
        ChainConfig {
            seed,
            burn_in: 1000,
            thinning: 10,
            phi_update: PhiUpdate::Exact,
        }
    }
}

/// Serializable snapshot sufficient to resume a chain exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainCheckpoint {
    pub seed: u64,
    pub sweep: u64,
    pub d: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub kappa: Vec<f64>,
    pub phi: Vec<f64>,
}

pub struct Chain {
    measure: MixtureMeasure,
    config: ChainConfig,
    torus: Torus,
    kappa: ConductanceField,
    phi: HeightField,
    sweep: u64,
    /// Cholesky factor of the last conductance field used by an exact
    /// height draw, reused verbatim while the conductances are unchanged
    /// (a single-atom mixture never changes them, so the factorization
    /// cost is paid once instead of per sweep).
    factor_cache: Option<(Vec<f64>, PinnedFactor)>,
}

impl Chain {
    /// Starts a chain with conductances drawn from the prior and flat
    /// heights.
    pub fn new(measure: MixtureMeasure, torus: Torus, config: ChainConfig) -> Result<Self> {
        let sampler = measure.posterior_sampler();
        let mut stream = CounterStream::new(config.seed, &[INIT_STREAM]);
        let kappa_vals: Vec<f64> = (0..torus.edges())
            .map(|e| sampler.draw(0.0, stream.uniform_at(e)))
            .collect();
        Ok(Chain {
            measure,
            config,
            torus,
            kappa: ConductanceField::new(torus, kappa_vals)?,
            phi: HeightField::zeros(torus),
            sweep: 0,
            factor_cache: None,
        })
    }

    pub fn torus(&self) -> Torus {
        self.torus
    }

    pub fn kappa(&self) -> &ConductanceField {
        &self.kappa
    }

    pub fn phi(&self) -> &HeightField {
        &self.phi
    }

    pub fn sweep_count(&self) -> u64 {
        self.sweep
    }

    pub fn config(&self) -> &ChainConfig {
        &self.config
    }

    /// Redraws every edge conductance from its conditional given the current
    /// heights.
    pub fn kappa_sweep(&mut self) {
        let sampler = self.measure.posterior_sampler();
        let mut stream = CounterStream::new(self.config.seed, &[KAPPA_STREAM, self.sweep]);
        let d = self.torus.d();
        let phi = self.phi.values();
        let kappa = self.kappa.values_mut();
        for s in 0..self.torus.sites() {
            for dir in 0..d {
                let e = s * d + dir;
                let eta = phi[self.torus.neighbor(s, dir, true)] - phi[s];
                kappa[e] = sampler.draw(eta, stream.uniform_at(e));
            }
        }
    }

    /// Redraws the heights from their conditional given the conductances.
    pub fn phi_sweep(&mut self) -> Result<()> {
        match self.config.phi_update {
            PhiUpdate::Exact => self.phi_sweep_exact(),
            PhiUpdate::HeatBath { sweeps } => {
                self.phi_sweep_heat_bath(sweeps);
                Ok(())
            }
        }
    }

    fn phi_sweep_exact(&mut self) -> Result<()> {
        let stale = match &self.factor_cache {
            Some((snapshot, _)) => snapshot.as_slice() != self.kappa.values(),
            None => true,
        };
        if stale {
            let factor = PinnedFactor::new(&self.kappa)?;
            self.factor_cache = Some((self.kappa.values().to_vec(), factor));
        }
        let factor = &self.factor_cache.as_ref().unwrap().1;
        let mut stream = CounterStream::new(self.config.seed, &[PHI_STREAM, self.sweep]);
        let z: Vec<f64> = (0..factor.dim()).map(|i| stream.normal_at(i)).collect();
        self.phi = HeightField::new(self.torus, factor.sample(&z))?;
        Ok(())
    }

    fn phi_sweep_heat_bath(&mut self, sweeps: usize) {
        let d = self.torus.d();
        let n = self.torus.sites();
        for pass in 0..sweeps {
            for color in 0..2u64 {
                let mut stream = CounterStream::new(
                    self.config.seed,
                    &[PHI_STREAM, self.sweep, pass as u64, color],
                );
                let phi = self.phi.values_mut();
                for s in 1..n {
                    let c = self.torus.coords(s);
                    if ((c[0] + c[1] + c[2]) % 2) as u64 != color {
                        continue;
                    }
                    let mut weight = 0.0;
                    let mut mean = 0.0;
                    for dir in 0..d {
                        let fwd = self.torus.neighbor(s, dir, false);
                        let k_out = self.kappa.value(s, dir);
                        let k_in = self.kappa.value(fwd, dir);
                        weight += k_out + k_in;
                        mean += k_out * phi[self.torus.neighbor(s, dir, true)] + k_in * phi[fwd];
                    }
                    phi[s] = mean / weight + stream.normal_at(s) / weight.sqrt();
                }
            }
        }
    }

    /// One full Gibbs sweep: conductances, then heights.
    pub fn advance(&mut self, sweeps: usize) -> Result<()> {
        for _ in 0..sweeps {
            self.kappa_sweep();
            self.phi_sweep()?;
            self.sweep += 1;
        }
        Ok(())
    }

    pub fn run_burn_in(&mut self) -> Result<()> {
        self.advance(self.config.burn_in)
    }

    /// Emits `n` thinned samples; burn-in is the caller's responsibility.
    pub fn for_each_sample(
        &mut self,
        n: usize,
        mut visit: impl FnMut(&ConductanceField, &HeightField),
    ) -> Result<()> {
        for _ in 0..n {
            self.advance(self.config.thinning)?;
            visit(&self.kappa, &self.phi);
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> ChainCheckpoint {
        ChainCheckpoint {
            seed: self.config.seed,
            sweep: self.sweep,
            d: self.torus.d(),
            l: self.torus.l(),
            kappa: self.kappa.values().to_vec(),
            phi: self.phi.values().to_vec(),
        }
    }

    /// Rebuilds a chain from a checkpoint; continues bit-for-bit because all
    /// stream keys derive from `(seed, sweep)`.
    pub fn restore(
        measure: MixtureMeasure,
        config: ChainConfig,
        cp: &ChainCheckpoint,
    ) -> Result<Self> {
        if cp.seed != config.seed {
            return Err(Error::invalid(format!(
                "checkpoint seed {} does not match config seed {}",
                cp.seed, config.seed
            )));
        }
        let torus = Torus::new(cp.d, cp.l)?;
        Ok(Chain {
            measure,
            config,
            torus,
            kappa: ConductanceField::new(torus, cp.kappa.clone())?,
            phi: HeightField::new(torus, cp.phi.clone())?,
            sweep: cp.sweep,
            factor_cache: None,
        })
    }
}

/// Conditional mean and variance of a single height given its neighbors:
/// `N(Σ κ φ_nbr / Σ κ, 1 / Σ κ)` over all incident edges.
pub fn heat_bath_site_params(
    kappa: &ConductanceField,
    phi: &HeightField,
    site: usize,
) -> (f64, f64) {
    let t = kappa.torus();
    let phi = phi.values();
    let mut weight = 0.0;
    let mut mean = 0.0;
    for dir in 0..t.d() {
        let bwd = t.neighbor(site, dir, false);
        let k_out = kappa.value(site, dir);
        let k_in = kappa.value(bwd, dir);
        weight += k_out + k_in;
        mean += k_out * phi[t.neighbor(site, dir, true)] + k_in * phi[bwd];
    }
    (mean / weight, 1.0 / weight)
}
