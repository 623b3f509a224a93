//! The conductance Laplacian `(L_κ f)(x) = Σ_{y~x} κ_xy (f(y) - f(x))`,
//! its inverse on the mean-zero subspace, and the heat semigroup `e^{tL_κ}`.
//!
//! Three independent routes to the same quadratic forms live here on
//! purpose: conjugate gradients for `(f, (-L_κ)^{-1} f)`, explicit RK4 heat
//! flow for `(f, e^{tL_κ} f)`, and exact Fourier diagonalization for
//! constant conductances.  The estimator modules cross-check one against
//! another instead of trusting any single one.

use crate::error::{Error, Result};
use crate::fourier::{fft_nd, laplacian_symbol};
use crate::lattice::{ConductanceField, Torus};
use crate::linalg::tridiag_eig;
use rustfft::num_complex::Complex;

/// Reusable applier for `L_κ` with a precomputed neighbor table.
pub struct LatticeOp<'a> {
    torus: Torus,
    kappa: &'a [f64],
    nbr: Vec<u32>,
}

impl<'a> LatticeOp<'a> {
    pub fn new(kappa: &'a ConductanceField) -> Self {
        LatticeOp {
            torus: kappa.torus(),
            kappa: kappa.values(),
            nbr: kappa.torus().plus_neighbors(),
        }
    }

    pub fn torus(&self) -> Torus {
        self.torus
    }

    /// `out = L_κ f`.
    pub fn apply(&self, f: &[f64], out: &mut [f64]) {
        let d = self.torus.d();
        out.fill(0.0);
        for s in 0..self.torus.sites() {
            for j in 0..d {
                let e = s * d + j;
                let t = self.nbr[e] as usize;
                let w = self.kappa[e] * (f[t] - f[s]);
                out[s] += w;
                out[t] -= w;
            }
        }
    }

    /// Diagonal of `-L_κ` (total conductance at each site).
    pub fn diagonal(&self) -> Vec<f64> {
        let d = self.torus.d();
        let mut diag = vec![0.0; self.torus.sites()];
        for s in 0..self.torus.sites() {
            for j in 0..d {
                let e = s * d + j;
                diag[s] += self.kappa[e];
                diag[self.nbr[e] as usize] += self.kappa[e];
            }
        }
        diag
    }
}

/// `L_κ f` as a one-shot call.
pub fn apply_l(kappa: &ConductanceField, f: &[f64]) -> Vec<f64> {
    let op = LatticeOp::new(kappa);
    let mut out = vec![0.0; f.len()];
    op.apply(f, &mut out);
    out
}

#[derive(Debug, Clone, Copy)]
pub struct QuadraticFormResult {
    /// `(f, (-L_κ)^{-1} f)`.
    pub value: f64,
    /// Final relative residual `‖f + L_κ u‖ / ‖f‖`.
    pub residual: f64,
    pub iterations: usize,
}

pub const DEFAULT_SOLVE_TOL: f64 = 1e-10;

fn project_mean_zero(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    for x in v {
        *x -= m;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `(-L_κ) u = f` on the mean-zero subspace by Jacobi-preconditioned
/// conjugate gradients.  `f` must have zero mean (within `1e-9 ‖f‖`); the
/// returned `u` is mean-zero, and the iteration re-projects every 50 steps
/// to keep rounding from leaking into the constant mode.
pub fn solve_neg_l(
    kappa: &ConductanceField,
    f: &[f64],
    rel_tol: f64,
) -> Result<(Vec<f64>, QuadraticFormResult)> {
    let n = kappa.torus().sites();
    if f.len() != n {
        return Err(Error::invalid("rhs length does not match torus"));
    }
    let norm_f = dot(f, f).sqrt();
    if norm_f == 0.0 {
        return Ok((
            vec![0.0; n],
            QuadraticFormResult {
                value: 0.0,
                residual: 0.0,
                iterations: 0,
            },
        ));
    }
    if f.iter().sum::<f64>().abs() > 1e-9 * norm_f {
        return Err(Error::invalid(format!(
            "rhs must be mean-zero: Σf = {:e} vs ‖f‖ = {:e}",
            f.iter().sum::<f64>(),
            norm_f
        )));
    }

    let op = LatticeOp::new(kappa);
    let diag = op.diagonal();
    let max_iter = 20 * n;

    let mut r = f.to_vec();
    project_mean_zero(&mut r);
    let mut x = vec![0.0; n];
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(ri, di)| ri / di).collect();
    project_mean_zero(&mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut q = vec![0.0; n];
    let mut iterations = 0;
    let mut best = f64::INFINITY;

    while iterations < max_iter {
        iterations += 1;
        op.apply(&p, &mut q);
        for v in q.iter_mut() {
            *v = -*v;
        }
        let pq = dot(&p, &q);
        if pq <= 0.0 {
            return Err(Error::numerical(format!(
                "conjugate gradients met a nonpositive curvature {pq:e}"
            )));
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        if iterations % 50 == 0 {
            project_mean_zero(&mut x);
            project_mean_zero(&mut r);
        }
        let rn = dot(&r, &r).sqrt();
        best = best.min(rn / norm_f);
        if rn <= rel_tol * norm_f {
            project_mean_zero(&mut x);
            let value = dot(f, &x);
            return Ok((
                x,
                QuadraticFormResult {
                    value,
                    residual: rn / norm_f,
                    iterations,
                },
            ));
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        project_mean_zero(&mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::Convergence {
        iterations,
        residual: best,
    })
}

/// Stable explicit step for `du/dt = L_κ u`: `0.2 / (2d κ_max)`.
pub fn default_step(kappa: &ConductanceField) -> f64 {
    0.2 / (2.0 * kappa.torus().d() as f64 * kappa.max())
}

fn rk4_step(op: &LatticeOp, u: &mut [f64], h: f64, scratch: &mut [Vec<f64>]) {
    let n = u.len();
    let [k1, k2, k3, k4, tmp] = scratch else { unreachable!() };
    op.apply(u, k1);
    for i in 0..n {
        tmp[i] = u[i] + 0.5 * h * k1[i];
    }
    op.apply(tmp, k2);
    for i in 0..n {
        tmp[i] = u[i] + 0.5 * h * k2[i];
    }
    op.apply(tmp, k3);
    for i in 0..n {
        tmp[i] = u[i] + h * k3[i];
    }
    op.apply(tmp, k4);
    for i in 0..n {
        u[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Evolves `u' = L_κ u` from `u0` and hands `u(t)` to `on_checkpoint` at
/// every requested time (ascending, starting at ≥ 0).
///
/// `monitor`, when given, is paired against each step: the scalar
/// `(monitor, u)` must be nonincreasing (true for the exact flow whenever
/// `monitor = u0`); on violation the whole evolution restarts with half the
/// step, and after six halvings it reports a numerical failure.
pub fn evolve_heat(
    kappa: &ConductanceField,
    u0: &[f64],
    checkpoints: &[f64],
    monitor: Option<&[f64]>,
    mut on_checkpoint: impl FnMut(usize, &[f64]),
) -> Result<()> {
    let n = kappa.torus().sites();
    if u0.len() != n {
        return Err(Error::invalid("initial state length does not match torus"));
    }
    if checkpoints.windows(2).any(|w| w[1] < w[0]) || checkpoints.first().is_some_and(|&t| t < 0.0)
    {
        return Err(Error::invalid("checkpoints must be ascending and nonnegative"));
    }
    let op = LatticeOp::new(kappa);
    let h0 = default_step(kappa);

    'halving: for halving in 0..=6 {
        let h_target = h0 / (1 << halving) as f64;
        let mut u = u0.to_vec();
        let mut scratch = vec![vec![0.0; n]; 5];
        let mut t = 0.0;
        let mut guard = monitor.map(|m| dot(m, &u));
        let slack = monitor.map_or(0.0, |m| 1e-10 * dot(m, m).max(1e-300));
        for (ci, &tc) in checkpoints.iter().enumerate() {
            let span = tc - t;
            if span > 0.0 {
                let steps = (span / h_target).ceil().max(1.0) as usize;
                let h = span / steps as f64;
                for _ in 0..steps {
                    rk4_step(&op, &mut u, h, &mut scratch);
                    if let (Some(m), Some(prev)) = (monitor, guard.as_mut()) {
                        let now = dot(m, &u);
                        if now > *prev + slack {
                            continue 'halving;
                        }
                        *prev = now;
                    }
                }
                t = tc;
            }
            on_checkpoint(ci, &u);
        }
        return Ok(());
    }
    Err(Error::numerical(
        "heat flow stayed non-monotone after six step halvings",
    ))
}

/// `(f, e^{tL_κ} f)` by explicit heat flow.
pub fn semigroup_pair(kappa: &ConductanceField, f: &[f64], t: f64) -> Result<f64> {
    let mut out = 0.0;
    evolve_heat(kappa, f, &[t], Some(f), |_, u| out = dot(f, u))?;
    Ok(out)
}

/// `(f, e^{tL_κ} f)` at several ascending times from one evolution.
pub fn semigroup_pairs(kappa: &ConductanceField, f: &[f64], ts: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; ts.len()];
    evolve_heat(kappa, f, ts, Some(f), |ci, u| out[ci] = dot(f, u))?;
    Ok(out)
}

/// `∫_0^T (f, e^{tL_κ} f) dt` by composite Simpson on the RK4 grid.
///
/// Once `T` is large enough that `e^{-T λ_min}` is negligible this converges
/// to `(f, (-L_κ)^{-1} f)` for mean-zero `f`.
pub fn semigroup_form_integral(kappa: &ConductanceField, f: &[f64], t_max: f64) -> Result<f64> {
    let n = kappa.torus().sites();
    if f.len() != n {
        return Err(Error::invalid("f length does not match torus"));
    }
    let op = LatticeOp::new(kappa);
    let h0 = default_step(kappa);
    let mut steps = (t_max / h0).ceil() as usize;
    if steps % 2 == 1 {
        steps += 1;
    }
    let h = t_max / steps as f64;
    let mut u = f.to_vec();
    let mut scratch = vec![vec![0.0; n]; 5];
    let mut qs = Vec::with_capacity(steps + 1);
    qs.push(dot(f, &u));
    for s in 0..steps {
        rk4_step(&op, &mut u, h, &mut scratch);
        let q = dot(f, &u);
        if q > qs[s] + 1e-10 * qs[0].abs() {
            return Err(Error::numerical(format!(
                "semigroup pairing increased at step {s}: {} -> {q}",
                qs[s]
            )));
        }
        qs.push(q);
    }
    let mut integral = 0.0;
    for pair in (0..steps).step_by(2) {
        integral += h / 3.0 * (qs[pair] + 4.0 * qs[pair + 1] + qs[pair + 2]);
    }
    Ok(integral)
}

/// Exact `(f, (-L)^{-1} f)` for unit conductances via the Fourier symbol.
pub fn homogeneous_form_fourier(torus: Torus, f: &[f64]) -> Result<f64> {
    spectral_sum(torus, f, |lam| 1.0 / lam)
}

/// Exact `(f, e^{tL} f)` for unit conductances.
pub fn homogeneous_semigroup_fourier(torus: Torus, f: &[f64], t: f64) -> Result<f64> {
    let sum = spectral_sum(torus, f, |lam| (-t * lam).exp())?;
    // the zero mode is killed by the mean-zero precondition, e^{0} ■ 0 weight
    Ok(sum)
}

fn spectral_sum(torus: Torus, f: &[f64], weight: impl Fn(f64) -> f64) -> Result<f64> {
    let n = torus.sites();
    if f.len() != n {
        return Err(Error::invalid("f length does not match torus"));
    }
    let norm = dot(f, f).sqrt();
    if norm > 0.0 && f.iter().sum::<f64>().abs() > 1e-9 * norm {
        return Err(Error::invalid("f must be mean-zero for the spectral form"));
    }
    let dims: Vec<usize> = (0..torus.d()).map(|_| torus.l()).collect();
    let mut data: Vec<Complex<f64>> = f.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fft_nd(&dims, &mut data, false);
    let mut total = 0.0;
    for (mode, v) in data.iter().enumerate() {
        if mode == 0 {
            continue;
        }
        total += weight(laplacian_symbol(torus, mode)) * v.norm_sqr();
    }
    Ok(total / n as f64)
}

/// Exact heat kernel `p_t(·; 0)` for unit conductances.
pub fn homogeneous_heat_kernel_fourier(torus: Torus, t: f64) -> Vec<f64> {
    let n = torus.sites();
    let dims: Vec<usize> = (0..torus.d()).map(|_| torus.l()).collect();
    let mut data: Vec<Complex<f64>> = (0..n)
        .map(|mode| Complex::new((-t * laplacian_symbol(torus, mode)).exp(), 0.0))
        .collect();
    fft_nd(&dims, &mut data, true);
    data.iter().map(|v| v.re / n as f64).collect()
}

/// `(f, e^{tL_κ} f)` for a whole grid of times by Lanczos quadrature.
///
/// The explicit flow above costs `O(t)`; this costs `O(m)` matrix applies
/// for any horizon, which is what the diffusively rescaled scans need
/// (`t ε^{-2}` reaches 10^5).  The basis is fully reorthogonalized and the
/// order grows in blocks until every requested value stabilizes; the result
/// is cross-checked against the RK4 flow and the Fourier route in tests.
pub fn lanczos_forms(kappa: &ConductanceField, f: &[f64], ts: &[f64]) -> Result<Vec<f64>> {
    let n = kappa.torus().sites();
    if f.len() != n {
        return Err(Error::invalid("f length does not match torus"));
    }
    let norm2 = dot(f, f);
    if norm2 == 0.0 {
        return Ok(vec![0.0; ts.len()]);
    }
    let op = LatticeOp::new(kappa);
    let max_m = 400.min(n);
    let block = 40;

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(max_m);
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let scale = norm2.sqrt();
    basis.push(f.iter().map(|x| x / scale).collect());
    let mut w = vec![0.0; n];
    let mut prev: Option<Vec<f64>> = None;

    let forms = |alpha: &[f64], beta: &[f64]| -> Result<Vec<f64>> {
        let m = alpha.len();
        let (vals, vecs) = tridiag_eig(alpha, &beta[..m - 1])?;
        let mut out = vec![0.0; ts.len()];
        for (j, &lam) in vals.iter().enumerate() {
            let lam = lam.min(0.0); // spectrum of L_κ is nonpositive
            let w1 = vecs[j]; // first component of eigenvector j
            for (ti, &t) in ts.iter().enumerate() {
                out[ti] += w1 * w1 * (t * lam).exp();
            }
        }
        for v in &mut out {
            *v *= norm2;
        }
        Ok(out)
    };

    loop {
        for _ in 0..block {
            let m = alpha.len();
            let v = &basis[m];
            op.apply(v, &mut w);
            let a = dot(v, &w);
            alpha.push(a);
            for i in 0..n {
                w[i] -= a * v[i];
            }
            if m > 0 {
                let b_prev = beta[m - 1];
                let vm1 = &basis[m - 1];
                for i in 0..n {
                    w[i] -= b_prev * vm1[i];
                }
            }
            // full reorthogonalization (twice is enough)
            for _ in 0..2 {
                for u in &basis {
                    let c = dot(u, &w);
                    if c != 0.0 {
                        for i in 0..n {
                            w[i] -= c * u[i];
                        }
                    }
                }
            }
            let b = dot(&w, &w).sqrt();
            beta.push(b);
            if b < 1e-12 * scale || alpha.len() == max_m {
                return forms(&alpha, &beta);
            }
            basis.push(w.iter().map(|x| x / b).collect());
        }
        let now = forms(&alpha, &beta)?;
        if let Some(p) = &prev {
            let drift = now
                .iter()
                .zip(p)
                .map(|(a, b)| (a - b).abs() / (a.abs().max(1e-300)))
                .fold(0.0f64, f64::max);
            if drift < 1e-10 {
                return Ok(now);
            }
        }
        prev = Some(now);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_kappa(t: Torus, seed: u64, lo: f64, hi: f64) -> ConductanceField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ConductanceField::new(t, (0..t.edges()).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
    }

    fn random_mean_zero(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m = f.iter().sum::<f64>() / n as f64;
        for v in &mut f {
            *v -= m;
        }
        f
    }

    #[test]
    fn three_ring_example() {
        let t = Torus::new(1, 3).unwrap();
        let kappa = ConductanceField::new(t, vec![1.0, 2.0, 3.0]).unwrap();
        let out = apply_l(&kappa, &[1.0, 0.0, 0.0]);
        assert_eq!(out, vec![-4.0, 1.0, 3.0]);
        assert!(out.iter().sum::<f64>().abs() < 1e-15);
    }

    #[test]
    fn operator_is_symmetric_and_negative() {
        let t = Torus::new(2, 5).unwrap();
        let kappa = random_kappa(t, 1, 0.3, 4.0);
        let f = random_mean_zero(t.sites(), 2);
        let g = random_mean_zero(t.sites(), 3);
        let lf = apply_l(&kappa, &f);
        let lg = apply_l(&kappa, &g);
        let a = dot(&f, &lg);
        let b = dot(&g, &lf);
        assert!((a - b).abs() <= 1e-10 * a.abs().max(b.abs()));
        assert!(dot(&f, &lf) < 0.0);
        // row sums vanish: L applied to constants is zero
        let ones = vec![1.0; t.sites()];
        let l1 = apply_l(&kappa, &ones);
        assert!(l1.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn dirichlet_form_dominates_the_homogeneous_one() {
        let t = Torus::new(2, 4).unwrap();
        let kappa = random_kappa(t, 7, 0.5, 3.0);
        let a = kappa.min();
        let unit = ConductanceField::constant(t, 1.0).unwrap();
        for seed in 10..15 {
            let f = random_mean_zero(t.sites(), seed);
            let e_kappa = -dot(&f, &apply_l(&kappa, &f));
            let e_unit = -dot(&f, &apply_l(&unit, &f));
            assert!(e_kappa >= a * e_unit - 1e-12);
        }
    }

    #[test]
    fn solver_inverts_a_fourier_mode() {
        let t = Torus::new(2, 8).unwrap();
        let kappa = ConductanceField::constant(t, 1.0).unwrap();
        let k1 = 2.0 * std::f64::consts::PI / 8.0;
        let f: Vec<f64> = (0..t.sites())
            .map(|s| (k1 * t.coords(s)[0] as f64).cos())
            .collect();
        let lam = 4.0 * (std::f64::consts::PI / 8.0).sin().powi(2);
        let (u, res) = solve_neg_l(&kappa, &f, 1e-12).unwrap();
        for (ui, fi) in u.iter().zip(&f) {
            assert!((ui - fi / lam).abs() < 1e-9);
        }
        assert!(res.residual <= 1e-12);
        let want = dot(&f, &f) / lam;
        assert!((res.value - want).abs() < 1e-8 * want);
    }

    #[test]
    fn solver_agrees_with_fourier_on_unit_conductances() {
        for (d, l) in [(1, 16), (2, 8), (3, 4)] {
            let t = Torus::new(d, l).unwrap();
            let kappa = ConductanceField::constant(t, 1.0).unwrap();
            let f = random_mean_zero(t.sites(), 31 + d as u64);
            let (_, res) = solve_neg_l(&kappa, &f, 1e-12).unwrap();
            let exact = homogeneous_form_fourier(t, &f).unwrap();
            assert!(
                (res.value - exact).abs() <= 1e-8 * exact,
                "d={d}: {} vs {exact}",
                res.value
            );
        }
    }

    #[test]
    fn solver_rejects_biased_rhs_and_checks_residual() {
        let t = Torus::new(2, 4).unwrap();
        let kappa = random_kappa(t, 4, 0.5, 2.0);
        let biased = vec![1.0; t.sites()];
        assert!(matches!(
            solve_neg_l(&kappa, &biased, 1e-10),
            Err(Error::InvalidInput(_))
        ));
        let f = random_mean_zero(t.sites(), 5);
        let (u, res) = solve_neg_l(&kappa, &f, 1e-10).unwrap();
        // direct residual check
        let lu = apply_l(&kappa, &u);
        let rnorm: f64 = f
            .iter()
            .zip(&lu)
            .map(|(fi, li)| (fi + li) * (fi + li))
            .sum::<f64>()
            .sqrt();
        assert!(rnorm <= 1.5e-10 * dot(&f, &f).sqrt());
        assert!(res.value > 0.0);
        assert!(u.iter().sum::<f64>().abs() < 1e-12 * t.sites() as f64);
    }

    #[test]
    fn semigroup_pair_decays_and_matches_fourier() {
        let t = Torus::new(2, 6).unwrap();
        let kappa = ConductanceField::constant(t, 1.0).unwrap();
        let f = random_mean_zero(t.sites(), 8);
        let ts = [0.0, 0.5, 1.0, 2.0, 5.0];
        let vals = semigroup_pairs(&kappa, &f, &ts).unwrap();
        assert!((vals[0] - dot(&f, &f)).abs() < 1e-12);
        for w in vals.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        // RK4's own local error is (λh)^5/120 per mode per unit time, so the
        // achievable accuracy at time t is t h^4 max_λ λ^5 e^{-λt} / 120.
        let h = default_step(&kappa);
        let lam_max = 8.0;
        for (i, &t_i) in ts.iter().enumerate().skip(1) {
            let exact = homogeneous_semigroup_fourier(t, &f, t_i).unwrap();
            let lam_star = (5.0 / t_i).min(lam_max);
            let budget =
                t_i * h.powi(4) * lam_star.powi(5) * (-lam_star * t_i).exp() / 120.0 * vals[0];
            assert!(
                (vals[i] - exact).abs() < 3.0 * budget + 1e-13,
                "t = {t_i}: {} vs {exact} (budget {budget:e})",
                vals[i]
            );
        }
        // by t = 5 the stiff modes are gone: 1e-8 absolute on the ‖f‖² scale
        let exact5 = homogeneous_semigroup_fourier(t, &f, 5.0).unwrap();
        assert!((vals[4] - exact5).abs() <= 1e-8 * vals[0]);
    }

    #[test]
    fn integral_identity_reaches_the_green_form() {
        let t = Torus::new(2, 6).unwrap();
        let kappa = random_kappa(t, 12, 0.5, 2.0);
        let f = random_mean_zero(t.sites(), 13);
        // spectral gap of -L_κ is at least κ_min times the unit-conductance gap
        let gap = kappa.min() * 4.0 * (std::f64::consts::PI / 6.0).sin().powi(2);
        let t_max = -(1e-6f64).ln() / gap;
        let integral = semigroup_form_integral(&kappa, &f, t_max).unwrap();
        let (_, res) = solve_neg_l(&kappa, &f, 1e-12).unwrap();
        assert!(
            (integral - res.value).abs() <= 0.01 * res.value,
            "{integral} vs {}",
            res.value
        );
    }

    #[test]
    fn lanczos_matches_fourier_across_nine_decades() {
        let t = Torus::new(2, 16).unwrap();
        let kappa = ConductanceField::constant(t, 1.0).unwrap();
        let f = random_mean_zero(t.sites(), 21);
        let ts = [0.5, 5.0, 500.0, 5.0e4];
        let got = lanczos_forms(&kappa, &f, &ts).unwrap();
        for (i, &t_i) in ts.iter().enumerate() {
            let exact = homogeneous_semigroup_fourier(t, &f, t_i).unwrap();
            let tol = 1e-8 * exact.abs().max(1e-12);
            assert!(
                (got[i] - exact).abs() <= tol.max(1e-13),
                "t = {t_i}: {} vs {exact}",
                got[i]
            );
        }
    }

    #[test]
    fn lanczos_matches_rk4_on_a_random_environment() {
        let t = Torus::new(2, 6).unwrap();
        let kappa = random_kappa(t, 17, 0.5, 3.5);
        let f = random_mean_zero(t.sites(), 18);
        let ts = [0.7, 3.0, 11.0];
        let a = lanczos_forms(&kappa, &f, &ts).unwrap();
        let b = semigroup_pairs(&kappa, &f, &ts).unwrap();
        for i in 0..ts.len() {
            assert!(
                (a[i] - b[i]).abs() <= 1e-6 * b[i].abs().max(1e-9),
                "t = {}: {} vs {}",
                ts[i],
                a[i],
                b[i]
            );
        }
    }

    #[test]
    fn heat_kernel_fourier_is_a_probability_kernel() {
        let t = Torus::new(2, 8).unwrap();
        let p = homogeneous_heat_kernel_fourier(t, 1.5);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&v| v > 0.0));
        // symmetry under x -> -x
        for s in 0..t.sites() {
            let c = t.coords(s);
            let neg = t.site_wrapped([-(c[0] as i64), -(c[1] as i64), 0]);
            assert!((p[s] - p[neg]).abs() < 1e-14);
        }
    }

    #[test]
    fn checkpoints_must_ascend() {
        let t = Torus::new(1, 4).unwrap();
        let kappa = ConductanceField::constant(t, 1.0).unwrap();
        let f = vec![0.5, -0.5, 0.5, -0.5];
        assert!(evolve_heat(&kappa, &f, &[1.0, 0.5], None, |_, _| {}).is_err());
        assert!(evolve_heat(&kappa, &f, &[-1.0], None, |_, _| {}).is_err());
    }
}
