//! Atomic conductance mixtures and the single-bond potential
//! `V(s) = -log Σ_i w_i exp(-κ_i s²/2)`.
//!
//! The mixture weights are the prior on the auxiliary edge conductance; the
//! posterior after observing a gradient `s` tilts every atom by its Gaussian
//! likelihood.  All log-sum manipulations are max-shifted so huge `κ s²`
//! never overflows.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub const DEFAULT_ELLIPTICITY_FLOOR: f64 = 1e-3;

/// One atom `w δ_κ` of a conductance mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub kappa: f64,
    pub weight: f64,
}

/// A finite atomic measure on conductances, `ϱ = Σ_i w_i δ_{κ_i}`.
///
/// Atoms are kept in construction order; weights need not be normalized on
/// input but a normalized view is always available.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureMeasure {
    atoms: Vec<Atom>,
    #[serde(default = "default_floor")]
    ellipticity_floor: f64,
}

fn default_floor() -> f64 {
    DEFAULT_ELLIPTICITY_FLOOR
}

impl MixtureMeasure {
    /// Builds a mixture with the default ellipticity floor of `1e-3`.
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        Self::with_floor(atoms, DEFAULT_ELLIPTICITY_FLOOR)
    }

    /// Builds a mixture whose conductances must lie in `[floor, 1/floor]`.
    pub fn with_floor(atoms: Vec<Atom>, floor: f64) -> Result<Self> {
        if !(floor > 0.0 && floor.is_finite()) {
            return Err(Error::invalid("ellipticity floor must be positive"));
        }
        if atoms.is_empty() {
            return Err(Error::invalid("mixture needs at least one atom"));
        }
        for a in &atoms {
            if !a.kappa.is_finite() || !a.weight.is_finite() {
                return Err(Error::invalid("non-finite atom"));
            }
            if a.weight <= 0.0 {
                return Err(Error::invalid(format!(
                    "atom weight {} must be positive",
                    a.weight
                )));
            }
            if a.kappa < floor || a.kappa > 1.0 / floor {
                return Err(Error::invalid(format!(
                    "conductance {} outside [{:e}, {:e}]",
                    a.kappa,
                    floor,
                    1.0 / floor
                )));
            }
        }
        for (i, a) in atoms.iter().enumerate() {
            if atoms[..i].iter().any(|b| b.kappa == a.kappa) {
                return Err(Error::invalid(format!("duplicate atom at κ = {}", a.kappa)));
            }
        }
        Ok(MixtureMeasure {
            atoms,
            ellipticity_floor: floor,
        })
    }

    /// Convenience constructor for the two-atom mixture `p δ_{κ1} + (1-p) δ_{κ2}`.
    pub fn two_atom(kappa1: f64, kappa2: f64, p: f64) -> Result<Self> {
        if !(0.0 < p && p < 1.0) {
            return Err(Error::invalid("mixing weight must lie in (0, 1)"));
        }
        Self::new(vec![
            Atom {
                kappa: kappa1,
                weight: p,
            },
            Atom {
                kappa: kappa2,
                weight: 1.0 - p,
            },
        ])
    }

    /// Single atom `δ_κ` (the Gaussian case).
    pub fn single(kappa: f64) -> Result<Self> {
        Self::new(vec![Atom { kappa, weight: 1.0 }])
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: MixtureMeasure = serde_json::from_str(s)?;
        Self::with_floor(raw.atoms, raw.ellipticity_floor)
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn ellipticity_floor(&self) -> f64 {
        self.ellipticity_floor
    }

    pub fn min_kappa(&self) -> f64 {
        self.atoms.iter().map(|a| a.kappa).fold(f64::INFINITY, f64::min)
    }

    pub fn max_kappa(&self) -> f64 {
        self.atoms.iter().map(|a| a.kappa).fold(0.0, f64::max)
    }

    /// Weights rescaled to sum to one (exactly, up to one final division each).
    pub fn normalized_weights(&self) -> Vec<f64> {
        let total: f64 = self.atoms.iter().map(|a| a.weight).sum();
        self.atoms.iter().map(|a| a.weight / total).collect()
    }

    /// The potential `V(s) = -log Σ_i ŵ_i exp(-κ_i s²/2)`, max-shifted.
    pub fn eval_v(&self, s: f64) -> f64 {
        let w = self.normalized_weights();
        let exponents: Vec<f64> = self
            .atoms
            .iter()
            .zip(&w)
            .map(|(a, wi)| wi.ln() - 0.5 * a.kappa * s * s)
            .collect();
        let m = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = exponents.iter().map(|e| (e - m).exp()).sum();
        -(m + sum.ln())
    }

    /// Precomputes the log prior weights so the per-edge posterior draw in
    /// the Gibbs sweep allocates nothing.
    pub fn posterior_sampler(&self) -> PosteriorSampler {
        let w = self.normalized_weights();
        PosteriorSampler {
            kappas: self.atoms.iter().map(|a| a.kappa).collect(),
            log_prior: w.iter().map(|wi| wi.ln()).collect(),
        }
    }

    /// Posterior atom weights after observing the gradient `s` on an edge.
    pub fn kappa_posterior(&self, s: f64) -> KappaPosterior {
        let w = self.normalized_weights();
        let exponents: Vec<f64> = self
            .atoms
            .iter()
            .zip(&w)
            .map(|(a, wi)| wi.ln() - 0.5 * a.kappa * s * s)
            .collect();
        let m = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut weights: Vec<f64> = exponents.iter().map(|e| (e - m).exp()).collect();
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        KappaPosterior {
            kappas: self.atoms.iter().map(|a| a.kappa).collect(),
            weights,
        }
    }
}

/// Posterior distribution of one edge conductance given its gradient.
#[derive(Debug, Clone)]
pub struct KappaPosterior {
    pub kappas: Vec<f64>,
    pub weights: Vec<f64>,
}

impl KappaPosterior {
    /// Draws an atom index by inverting the cumulative weights at `u ∈ [0,1)`.
    pub fn sample_index(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        self.weights.len() - 1
    }

    pub fn sample(&self, u: f64) -> f64 {
        self.kappas[self.sample_index(u)]
    }

    pub fn mean(&self) -> f64 {
        self.kappas
            .iter()
            .zip(&self.weights)
            .map(|(k, w)| k * w)
            .sum()
    }
}

/// Allocation-free edge-conductance redraw for the Gibbs sweep hot loop.
#[derive(Debug, Clone)]
pub struct PosteriorSampler {
    kappas: Vec<f64>,
    log_prior: Vec<f64>,
}

impl PosteriorSampler {
    /// Draws a conductance from the posterior given the edge gradient `s`,
    /// inverting the cumulative weights at `u ∈ [0,1)`.  At `s = 0` this is
    /// a draw from the prior.
    pub fn draw(&self, s: f64, u: f64) -> f64 {
        let exponent = |i: usize| self.log_prior[i] - 0.5 * self.kappas[i] * s * s;
        let mut m = f64::NEG_INFINITY;
        for i in 0..self.kappas.len() {
            m = m.max(exponent(i));
        }
        let mut total = 0.0;
        for i in 0..self.kappas.len() {
            total += (exponent(i) - m).exp();
        }
        let mut acc = 0.0;
        for i in 0..self.kappas.len() {
            acc += (exponent(i) - m).exp() / total;
            if u < acc {
                return self.kappas[i];
            }
        }
        *self.kappas.last().unwrap()
    }
}

/// The weight `p` at which the two-atom mixture `p δ_{κ1} + (1-p) δ_{κ2}`
/// is self-dual: `p/(1-p) = (κ2/κ1)^{1/4}`.
pub fn self_dual_p(kappa1: f64, kappa2: f64) -> Result<f64> {
    if !(kappa1 > 0.0 && kappa2 > 0.0) || !kappa1.is_finite() || !kappa2.is_finite() {
        return Err(Error::invalid("self-dual point needs positive conductances"));
    }
    let r = (kappa2 / kappa1).powf(0.25);
    Ok(r / (1.0 + r))
}
