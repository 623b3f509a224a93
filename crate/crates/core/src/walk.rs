//! The variable-speed random walk among conductances and its heat kernel.
//!
//! The walk at site `x` waits an exponential time with rate `Σ κ` over
//! incident edges, then crosses an edge with probability proportional to its
//! conductance.  Its generator is exactly `L_κ`, so `E[X_i X_j]/t` estimates
//! the effective matrix `q̂` and the kernel `p_t = e^{tL_κ} δ_0` can be
//! evolved deterministically and compared against simulated paths.
//!
//! Displacements are tracked on the unfolded lattice `Z^d`; when a sizable
//! fraction of paths travels further than half the torus, the periodized
//! medium stops being a faithful stand-in for an iid environment and the
//! estimate is refused rather than silently biased.

use crate::error::{Error, Result};
use crate::homogenize::EffectiveMatrix;
use crate::lattice::{ConductanceField, Torus};
use crate::operator::{evolve_heat, LatticeOp};
use crate::rng::stream_rng;
use crate::stats;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const WALK_STREAM: u64 = 11;

/// Minimal value of `t · κ_min` for a trustworthy diffusive estimate.
pub const MIN_DIMENSIONLESS_TIME: f64 = 10.0;
/// Largest tolerated fraction of paths that leave the half-torus.
pub const MAX_WRAP_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy)]
pub struct WalkStats {
    /// Unfolded displacement at the final time.
    pub displacement: [i64; 3],
    pub jumps: u64,
    /// Whether any coordinate ever exceeded `L/2` in absolute value.
    pub wrapped: bool,
}

/// Precomputed jump rates for repeated path simulation in one environment.
pub struct Walker<'a> {
    kappa: &'a ConductanceField,
    torus: Torus,
    rates: Vec<f64>,
}

impl<'a> Walker<'a> {
    pub fn new(kappa: &'a ConductanceField) -> Self {
        let op = LatticeOp::new(kappa);
        Walker {
            kappa,
            torus: kappa.torus(),
            rates: op.diagonal(),
        }
    }

    /// Runs one path from the origin until `t_end`.
    pub fn run(&self, t_end: f64, rng: &mut ChaCha8Rng) -> WalkStats {
        let t = self.torus;
        let d = t.d();
        let half = (t.l() / 2) as i64;
        let mut site = 0usize;
        let mut unfolded = [0i64; 3];
        let mut clock = 0.0;
        let mut jumps = 0u64;
        let mut wrapped = false;
        loop {
            let rate = self.rates[site];
            clock += -(1.0 - rng.gen::<f64>()).ln() / rate;
            if clock > t_end {
                break;
            }
            let mut pick = rng.gen::<f64>() * rate;
            let mut moved = false;
            'pick: for dir in 0..d {
                let fwd = self.kappa.value(site, dir);
                if pick < fwd {
                    site = t.neighbor(site, dir, true);
                    unfolded[dir] += 1;
                    moved = true;
                    break 'pick;
                }
                pick -= fwd;
                let back_site = t.neighbor(site, dir, false);
                let bwd = self.kappa.value(back_site, dir);
                if pick < bwd {
                    site = back_site;
                    unfolded[dir] -= 1;
                    moved = true;
                    break 'pick;
                }
                pick -= bwd;
            }
            if !moved {
                // rounding pushed the pick past the last edge
                site = t.neighbor(site, d - 1, false);
                unfolded[d - 1] -= 1;
            }
            jumps += 1;
            if unfolded.iter().any(|&c| c.abs() > half) {
                wrapped = true;
            }
        }
        WalkStats {
            displacement: unfolded,
            jumps,
            wrapped,
        }
    }

    /// Final folded site of one path (for kernel histogram checks).
    pub fn run_folded(&self, t_end: f64, rng: &mut ChaCha8Rng) -> usize {
        let s = self.run(t_end, rng);
        self.torus
            .site_wrapped([s.displacement[0], s.displacement[1], s.displacement[2]])
    }
}

/// Estimates `q̂_jk = E[X_j X_k]/t` over an ensemble of environments.
///
/// Paths are independent across `(environment, path)` pairs and indexed by
/// counter-derived streams, so the result is reproducible under any thread
/// schedule.  Standard errors are taken across environments when there are
/// several, across paths otherwise.
pub fn annealed_q_estimate(
    envs: &[ConductanceField],
    t: f64,
    paths_per_env: usize,
    seed: u64,
) -> Result<EffectiveMatrix> {
    if envs.is_empty() || paths_per_env == 0 {
        return Err(Error::invalid("need at least one environment and one path"));
    }
    let torus = envs[0].torus();
    if envs.iter().any(|e| e.torus() != torus) {
        return Err(Error::invalid("environments live on different tori"));
    }
    let kappa_min = envs.iter().map(|e| e.min()).fold(f64::INFINITY, f64::min);
    if t * kappa_min < MIN_DIMENSIONLESS_TIME {
        return Err(Error::invalid(format!(
            "horizon too short for a diffusive estimate: t κ_min = {:.3} < {MIN_DIMENSIONLESS_TIME}",
            t * kappa_min
        )));
    }
    let d = torus.d();
    let mut per_env: Vec<Vec<f64>> = Vec::with_capacity(envs.len());
    let mut wrapped_total = 0usize;
    let mut path_se: Vec<f64> = vec![0.0; d * d];
    for (ei, kappa) in envs.iter().enumerate() {
        let walker = Walker::new(kappa);
        let results: Vec<([f64; 9], bool)> = (0..paths_per_env)
            .into_par_iter()
            .map(|pi| {
                let mut rng = stream_rng(seed, &[WALK_STREAM, ei as u64, pi as u64]);
                let s = walker.run(t, &mut rng);
                let mut outer = [0.0; 9];
                for j in 0..d {
                    for k in 0..d {
                        outer[j * d + k] =
                            s.displacement[j] as f64 * s.displacement[k] as f64 / t;
                    }
                }
                (outer, s.wrapped)
            })
            .collect();
        let mut mean = vec![0.0; d * d];
        for (outer, wrapped) in &results {
            for i in 0..d * d {
                mean[i] += outer[i];
            }
            wrapped_total += *wrapped as usize;
        }
        for m in &mut mean {
            *m /= paths_per_env as f64;
        }
        if envs.len() == 1 {
            for i in 0..d * d {
                let series: Vec<f64> = results.iter().map(|(o, _)| o[i]).collect();
                path_se[i] = stats::standard_error(&series);
            }
        }
        per_env.push(mean);
    }
    let wrap_fraction = wrapped_total as f64 / (envs.len() * paths_per_env) as f64;
    if wrap_fraction > MAX_WRAP_FRACTION {
        return Err(Error::Resolution(format!(
            "{:.2}% of paths left the half-torus (limit {:.0}%); enlarge L or shorten t",
            100.0 * wrap_fraction,
            100.0 * MAX_WRAP_FRACTION
        )));
    }
    let n = envs.len() as f64;
    let mut q = vec![0.0; d * d];
    for env in &per_env {
        for i in 0..d * d {
            q[i] += env[i] / n;
        }
    }
    let se = if envs.len() > 1 {
        Some(
            (0..d * d)
                .map(|i| {
                    let series: Vec<f64> = per_env.iter().map(|e| e[i]).collect();
                    stats::standard_error(&series)
                })
                .collect(),
        )
    } else {
        Some(path_se)
    };
    Ok(EffectiveMatrix {
        d,
        q,
        se,
        method: "walk".into(),
        n_env: envs.len(),
    })
}

/// Heat kernel snapshots `p_t(·; 0)` at the requested ascending times.
/// Total mass is conserved by the edge-antisymmetric generator and is
/// verified to `1e-9` at every snapshot.
pub fn heat_kernel(kappa: &ConductanceField, times: &[f64]) -> Result<Vec<Vec<f64>>> {
    heat_kernel_from(kappa, 0, times)
}

/// Heat kernel snapshots `p_t(·; start)` for an arbitrary starting site.
pub fn heat_kernel_from(
    kappa: &ConductanceField,
    start: usize,
    times: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let n = kappa.torus().sites();
    if start >= n {
        return Err(Error::invalid("starting site outside the torus"));
    }
    let mut delta = vec![0.0; n];
    delta[start] = 1.0;
    let mut snaps: Vec<Vec<f64>> = Vec::with_capacity(times.len());
    evolve_heat(kappa, &delta, times, None, |_, u| snaps.push(u.to_vec()))?;
    for (i, p) in snaps.iter().enumerate() {
        let mass: f64 = p.iter().sum();
        if (mass - 1.0).abs() > 1e-9 {
            return Err(Error::numerical(format!(
                "kernel mass drifted to {mass} at t = {}",
                times[i]
            )));
        }
    }
    Ok(snaps)
}

/// Forward second difference `D_i D_j p` of a site field, both differences
/// acting on the same argument.
///
/// In a disordered environment this stencil keeps the lattice-scale
/// roughness of the kernel, so its annealed envelope only decays like a
/// first derivative; the decay check below therefore uses
/// [`mixed_second_difference`], which differentiates the starting point and
/// the endpoint once each.
pub fn second_difference(torus: Torus, p: &[f64], i: usize, j: usize) -> Vec<f64> {
    let mut out = vec![0.0; torus.sites()];
    for s in 0..torus.sites() {
        let si = torus.neighbor(s, i, true);
        let sj = torus.neighbor(s, j, true);
        let sij = torus.neighbor(si, j, true);
        out[s] = p[sij] - p[si] - p[sj] + p[s];
    }
    out
}

/// Mixed second difference `D_i^{start} D_j^{end} p_t(0 → x)` from two
/// kernel snapshots: `p0` started at `0` and `pi` started at `ê_i`.
pub fn mixed_second_difference(
    torus: Torus,
    p0: &[f64],
    pi: &[f64],
    j: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; torus.sites()];
    for s in 0..torus.sites() {
        let sj = torus.neighbor(s, j, true);
        out[s] = (pi[sj] - pi[s]) - (p0[sj] - p0[s]);
    }
    out
}

/// Envelope of second-derivative decay of annealed kernels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayCheck {
    pub times: Vec<f64>,
    /// `max_{x,ij} E_env |D_i^{start} D_j^{end} p_t(0 → x)|`, with the
    /// absolute value inside the environment average.
    pub envelope: Vec<f64>,
    /// Slope of `log envelope` against `log t` with its standard error.
    pub slope: f64,
    pub slope_se: f64,
}

/// Evolves kernels from `0` and from each `ê_i` in every environment,
/// averages `|D_i^{start} D_j^{end} p_t|` over environments pointwise, takes
/// the sup over sites and direction pairs, and fits the log-log decay rate.
///
/// Differentiating start and end once each is what makes the envelope decay
/// at the full second-derivative rate `t^{-(d/2+1)}` uniformly in the
/// disorder; put both differences on the endpoint and the corrector
/// roughness of the kernel caps the decay at the first-derivative rate
/// `t^{-(d+1)/2}`.
///
/// Refuses horizons past `t_max κ_max λ_1(L) > 3`, where the periodic
/// spectral gap flattens the kernel exponentially and the polynomial fit
/// would silently saturate.
pub fn derivative_decay_check(envs: &[ConductanceField], times: &[f64]) -> Result<DecayCheck> {
    if envs.is_empty() || times.len() < 3 {
        return Err(Error::invalid(
            "need at least one environment and three times",
        ));
    }
    let torus = envs[0].torus();
    if envs.iter().any(|e| e.torus() != torus) {
        return Err(Error::invalid("environments live on different tori"));
    }
    let d = torus.d();
    let l = torus.l();
    let t_max = *times.last().unwrap();
    let kappa_max = envs.iter().map(|e| e.max()).fold(0.0f64, f64::max);
    let gap = kappa_max * 4.0 * (std::f64::consts::PI / l as f64).sin().powi(2);
    if t_max * gap > 3.0 {
        return Err(Error::Resolution(format!(
            "t_max κ_max λ_1 = {:.2} > 3: kernel differences saturate on L = {l}",
            t_max * gap
        )));
    }
    let pairs: Vec<(usize, usize)> = (0..d)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .collect();
    let mut accum = vec![vec![0.0f64; torus.sites()]; times.len() * pairs.len()];
    // kernels from the origin and from each unit neighbor, per environment
    let snaps_per_env: Vec<Vec<Vec<Vec<f64>>>> = envs
        .par_iter()
        .map(|kappa| {
            let mut starts = Vec::with_capacity(d + 1);
            starts.push(heat_kernel_from(kappa, 0, times)?);
            for i in 0..d {
                starts.push(heat_kernel_from(kappa, torus.neighbor(0, i, true), times)?);
            }
            Ok(starts)
        })
        .collect::<Result<_>>()?;
    for starts in &snaps_per_env {
        for ti in 0..times.len() {
            for (pi_idx, &(i, j)) in pairs.iter().enumerate() {
                let dd = mixed_second_difference(torus, &starts[0][ti], &starts[1 + i][ti], j);
                let slot = &mut accum[ti * pairs.len() + pi_idx];
                for (a, v) in slot.iter_mut().zip(&dd) {
                    *a += v.abs();
                }
            }
        }
    }
    let n_env = envs.len() as f64;
    let mut envelope = vec![0.0f64; times.len()];
    for ti in 0..times.len() {
        for pi_idx in 0..pairs.len() {
            for v in &accum[ti * pairs.len() + pi_idx] {
                envelope[ti] = envelope[ti].max(v / n_env);
            }
        }
    }
    for (w, ts) in envelope.windows(2).zip(times.windows(2)) {
        if w[1] >= w[0] {
            return Err(Error::numerical(format!(
                "kernel derivative envelope failed to decay between t = {} and {}",
                ts[0], ts[1]
            )));
        }
    }
    let log_t: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    let log_e: Vec<f64> = envelope.iter().map(|e| e.ln()).collect();
    let (slope, _, slope_se) = stats::linear_fit(&log_t, &log_e);
    Ok(DecayCheck {
        times: times.to_vec(),
        envelope,
        slope,
        slope_se,
    })
}

/// The same envelope and fit for a precomputed family of kernel snapshots
/// (used to pin the exponent with exact Fourier kernels).
pub fn decay_fit_from_kernels(
    torus: Torus,
    times: &[f64],
    snaps: &[Vec<f64>],
) -> (Vec<f64>, f64, f64) {
    let d = torus.d();
    let mut envelope = vec![0.0f64; times.len()];
    for (ti, p) in snaps.iter().enumerate() {
        for i in 0..d {
            for j in i..d {
                let dd = second_difference(torus, p, i, j);
                for v in &dd {
                    envelope[ti] = envelope[ti].max(v.abs());
                }
            }
        }
    }
    let log_t: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    let log_e: Vec<f64> = envelope.iter().map(|e| e.ln()).collect();
    let (slope, _, slope_se) = stats::linear_fit(&log_t, &log_e);
    (envelope, slope, slope_se)
}
