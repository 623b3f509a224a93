//! Correctors, harmonic coordinates, and the effective diffusion matrix.
//!
//! For a conductance field κ the corrector `χ_j` makes `x_j + χ_j(x)`
//! κ-harmonic.  Its gradient defines the harmonic coordinate increments
//! `Y_j = ê_j + ∇χ_j`, which are curl-free, wind exactly once around axis
//! `j`, and carry the effective matrix
//!
//! ```text
//! q̂_jk = (2/N) Σ_x Σ_i κ(x, i) (Y_j)_i(x) (Y_k)_i(x).
//! ```
//!
//! Any curl-free edge field splits uniquely as `Σ_j λ_j Y_j + ∇g` with `g`
//! periodic; the split is κ-orthogonal and `λ` reads off winding numbers.

use crate::error::{Error, Result};
use crate::lattice::{ConductanceField, GradientField, HeightField, Torus};
use crate::operator::{solve_neg_l, LatticeOp, DEFAULT_SOLVE_TOL};
use serde::{Deserialize, Serialize};

/// Effective diffusion matrix `q̂` with optional ensemble standard errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectiveMatrix {
    pub d: usize,
    /// Row-major `d × d` entries.
    pub q: Vec<f64>,
    /// Entrywise standard errors when averaged over environments.
    pub se: Option<Vec<f64>>,
    /// Which estimator produced this: `"corrector"` or `"walk"`.
    pub method: String,
    pub n_env: usize,
}

impl EffectiveMatrix {
    pub fn entry(&self, j: usize, k: usize) -> f64 {
        self.q[j * self.d + k]
    }

    pub fn se_entry(&self, j: usize, k: usize) -> Option<f64> {
        self.se.as_ref().map(|s| s[j * self.d + k])
    }

    /// Largest diagonal entry, a natural comparison scale.
    pub fn scale(&self) -> f64 {
        (0..self.d)
            .map(|j| self.entry(j, j))
            .fold(0.0f64, f64::max)
    }

    /// `½ kᵀ q̂ k` — the quadratic symbol this matrix induces.
    pub fn half_form(&self, k: &[f64]) -> f64 {
        let mut s = 0.0;
        for j in 0..self.d {
            for i in 0..self.d {
                s += k[j] * self.entry(j, i) * k[i];
            }
        }
        0.5 * s
    }
}

/// `div(κ u)(x) = Σ_j [κ(x,j) u_j(x) − κ(x−ê_j,j) u_j(x−ê_j)]`, the adjoint
/// of the forward gradient.  Its total over the torus always vanishes.
pub fn divergence(kappa: &ConductanceField, u: &GradientField) -> Vec<f64> {
    let t = kappa.torus();
    let d = t.d();
    let mut out = vec![0.0; t.sites()];
    for s in 0..t.sites() {
        for j in 0..d {
            let flux = kappa.value(s, j) * u.value(s, j);
            out[s] += flux;
            out[t.neighbor(s, j, true)] -= flux;
        }
    }
    // out currently holds div at the *tail* with the opposite sign pattern:
    // entry x accumulated +κ(x,j)u_j(x) and −κ(y−ê_j,j)u_j(y−ê_j); that is
    // exactly the formula above.
    out
}

/// The correctors `χ_1..χ_d` (mean-zero) and the residuals of their defining
/// equations.
#[derive(Debug, Clone)]
pub struct Corrector {
    torus: Torus,
    chi: Vec<Vec<f64>>,
    max_residual: f64,
}

impl Corrector {
    /// Solves `(-L_κ) χ_j = κ(·,j) − κ(·−ê_j,j)` for each direction and
    /// verifies the pointwise residual against `tol` (max norm, relative to
    /// the largest conductance).
    pub fn solve(kappa: &ConductanceField, tol: f64) -> Result<Self> {
        let t = kappa.torus();
        let op = LatticeOp::new(kappa);
        let mut chi = Vec::with_capacity(t.d());
        let mut max_residual = 0.0f64;
        let mut lchi = vec![0.0; t.sites()];
        for j in 0..t.d() {
            let mut rhs = vec![0.0; t.sites()];
            for s in 0..t.sites() {
                let k = kappa.value(s, j);
                rhs[s] += k;
                rhs[t.neighbor(s, j, true)] -= k;
            }
            let (chi_j, _) = solve_neg_l(kappa, &rhs, DEFAULT_SOLVE_TOL)?;
            op.apply(&chi_j, &mut lchi);
            for s in 0..t.sites() {
                max_residual = max_residual.max((rhs[s] + lchi[s]).abs() / kappa.max());
            }
            chi.push(chi_j);
        }
        if max_residual > tol {
            return Err(Error::numerical(format!(
                "corrector residual {max_residual:e} exceeds {tol:e}"
            )));
        }
        Ok(Corrector {
            torus: t,
            chi,
            max_residual,
        })
    }

    pub fn torus(&self) -> Torus {
        self.torus
    }

    pub fn max_residual(&self) -> f64 {
        self.max_residual
    }

    /// Mean-zero corrector for direction `j`.
    pub fn chi(&self, j: usize) -> &[f64] {
        &self.chi[j]
    }

    /// Harmonic coordinate increments `Y_j = ê_j + ∇χ_j` as an edge field.
    pub fn harmonic_increments(&self, j: usize) -> GradientField {
        let t = self.torus;
        let d = t.d();
        let chi = &self.chi[j];
        let mut vals = vec![0.0; t.edges()];
        for s in 0..t.sites() {
            for i in 0..d {
                let delta = if i == j { 1.0 } else { 0.0 };
                vals[s * d + i] = delta + chi[t.neighbor(s, i, true)] - chi[s];
            }
        }
        GradientField::new(t, vals).expect("edge count matches torus")
    }

    /// Mean of the tilted field given the environment: site `x` maps to
    /// `Σ_j tilt_j (x_j + χ_j(x) − χ_j(0))`.
    pub fn tilted_mean(&self, tilt: &[f64]) -> Vec<f64> {
        let t = self.torus;
        let mut out = vec![0.0; t.sites()];
        for s in 0..t.sites() {
            let c = t.coords(s);
            let mut m = 0.0;
            for (j, &tj) in tilt.iter().enumerate().take(t.d()) {
                m += tj * (c[j] as f64 + self.chi[j][s] - self.chi[j][0]);
            }
            out[s] = m;
        }
        out
    }
}

/// Exact mean-zero corrector on a 1d ring: the flux `κ_x (1 + χ'(x))` is
/// constant, pinned by periodicity to the harmonic mean of κ.
pub fn corrector_closed_form_1d(kappa: &ConductanceField) -> Result<Vec<f64>> {
    let t = kappa.torus();
    if t.d() != 1 {
        return Err(Error::invalid("closed form requires d = 1"));
    }
    let inv_mean: f64 =
        kappa.values().iter().map(|k| 1.0 / k).sum::<f64>() / t.sites() as f64;
    let c = 1.0 / inv_mean;
    let mut chi = Vec::with_capacity(t.sites());
    let mut acc = 0.0;
    for k in kappa.values() {
        chi.push(acc);
        acc += c / k - 1.0;
    }
    let mean = chi.iter().sum::<f64>() / chi.len() as f64;
    for v in &mut chi {
        *v -= mean;
    }
    Ok(chi)
}

/// `q̂` from one environment via the corrector route.
pub fn effective_matrix_from_corrector(
    kappa: &ConductanceField,
    tol: f64,
) -> Result<EffectiveMatrix> {
    let corr = Corrector::solve(kappa, tol)?;
    Ok(effective_matrix_given_corrector(kappa, &corr))
}

fn effective_matrix_given_corrector(
    kappa: &ConductanceField,
    corr: &Corrector,
) -> EffectiveMatrix {
    let t = kappa.torus();
    let d = t.d();
    let ys: Vec<GradientField> = (0..d).map(|j| corr.harmonic_increments(j)).collect();
    let mut q = vec![0.0; d * d];
    for j in 0..d {
        for k in j..d {
            let mut s = 0.0;
            for site in 0..t.sites() {
                for i in 0..d {
                    s += kappa.value(site, i) * ys[j].value(site, i) * ys[k].value(site, i);
                }
            }
            let v = 2.0 * s / t.sites() as f64;
            q[j * d + k] = v;
            q[k * d + j] = v;
        }
    }
    EffectiveMatrix {
        d,
        q,
        se: None,
        method: "corrector".into(),
        n_env: 1,
    }
}

/// `q̂` averaged over an environment ensemble, with entrywise standard
/// errors across environments.
pub fn effective_matrix_ensemble(
    envs: &[ConductanceField],
    tol: f64,
) -> Result<EffectiveMatrix> {
    if envs.is_empty() {
        return Err(Error::invalid("empty environment ensemble"));
    }
    let d = envs[0].torus().d();
    let mut sum = vec![0.0; d * d];
    let mut sum_sq = vec![0.0; d * d];
    for kappa in envs {
        let m = effective_matrix_from_corrector(kappa, tol)?;
        for i in 0..d * d {
            sum[i] += m.q[i];
            sum_sq[i] += m.q[i] * m.q[i];
        }
    }
    let n = envs.len() as f64;
    let q: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let se = if envs.len() > 1 {
        Some(
            (0..d * d)
                .map(|i| ((sum_sq[i] / n - q[i] * q[i]).max(0.0) / (n - 1.0)).sqrt())
                .collect(),
        )
    } else {
        None
    };
    Ok(EffectiveMatrix {
        d,
        q,
        se,
        method: "corrector".into(),
        n_env: envs.len(),
    })
}

/// The unique split of a curl-free edge field into harmonic and potential
/// parts: `u = Σ_j λ_j Y_j + ∇g`.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub lambda: Vec<f64>,
    pub g: HeightField,
    /// Max-norm recombination defect.
    pub residual: f64,
}

/// Splits `u` against the harmonic coordinates of `corr`.  Requires `u`
/// curl-free (plaquette circulations within `tol`); the coefficients are the
/// per-direction site averages, which equal winding numbers over `L`.
pub fn decompose(corr: &Corrector, u: &GradientField, tol: f64) -> Result<Decomposition> {
    let t = corr.torus();
    let d = t.d();
    if u.torus() != t {
        return Err(Error::invalid("edge field torus does not match corrector"));
    }
    let defect = u.plaquette_defect();
    if defect > tol {
        return Err(Error::invalid(format!(
            "edge field is not curl-free: worst plaquette circulation {defect:e}"
        )));
    }
    let mut lambda = vec![0.0; d];
    for s in 0..t.sites() {
        for j in 0..d {
            lambda[j] += u.value(s, j);
        }
    }
    for l in &mut lambda {
        *l /= t.sites() as f64;
    }
    let mut grad_g = u.values().to_vec();
    for j in 0..d {
        let y = corr.harmonic_increments(j);
        for (gv, yv) in grad_g.iter_mut().zip(y.values()) {
            *gv -= lambda[j] * yv;
        }
    }
    let grad_g = GradientField::new(t, grad_g)?;
    let g = grad_g.integrate(tol.max(1e-12) * t.sites() as f64)?;
    // recombination check
    let gg = g.grad();
    let mut residual = 0.0f64;
    for s in 0..t.sites() {
        for j in 0..d {
            let mut v = gg.value(s, j);
            for (k, &lk) in lambda.iter().enumerate() {
                v += lk * corr.harmonic_increments(k).value(s, j);
            }
            residual = residual.max((v - u.value(s, j)).abs());
        }
    }
    Ok(Decomposition {
        lambda,
        g,
        residual,
    })
}

/// Solves the regularized orbit equation `(ε + 1 − T_1) h = −u` along
/// direction-1 lines, where `T_1` translates by `ê_1`.  Closed form: a
/// geometric sum over the orbit,
///
/// ```text
/// h_ε(x) = −(1 − (1+ε)^{-L})^{-1} Σ_{r=0}^{L-1} u(x + r ê_1) (1+ε)^{-(r+1)}.
/// ```
pub fn regularized_poisson(torus: Torus, u: &[f64], eps: f64) -> Result<Vec<f64>> {
    if u.len() != torus.sites() {
        return Err(Error::invalid("field length does not match torus"));
    }
    if !(eps > 0.0) {
        return Err(Error::invalid("regularization must be positive"));
    }
    let l = torus.l();
    let decay = 1.0 / (1.0 + eps);
    let front = 1.0 / (1.0 - decay.powi(l as i32));
    let mut out = vec![0.0; u.len()];
    for start in 0..torus.sites() {
        let mut acc = 0.0;
        let mut site = start;
        let mut w = decay;
        for _ in 0..l {
            acc += u[site] * w;
            site = torus.neighbor(site, 0, true);
            w *= decay;
        }
        out[start] = -front * acc;
    }
    Ok(out)
}

/// Sliding orbit average `(A_n u)(x) = n^{-1} Σ_{r<n} u(x + r ê_1)`.
pub fn orbit_average(torus: Torus, u: &[f64], n: usize) -> Result<Vec<f64>> {
    if u.len() != torus.sites() {
        return Err(Error::invalid("field length does not match torus"));
    }
    if n == 0 || n > torus.l() {
        return Err(Error::invalid("window must satisfy 1 ≤ n ≤ L"));
    }
    let mut out = vec![0.0; u.len()];
    for start in 0..torus.sites() {
        let mut acc = 0.0;
        let mut site = start;
        for _ in 0..n {
            acc += u[site];
            site = torus.neighbor(site, 0, true);
        }
        out[start] = acc / n as f64;
    }
    Ok(out)
}
