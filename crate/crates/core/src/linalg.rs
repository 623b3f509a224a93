//! Direct linear algebra for the pinned Gaussian conditional.
//!
//! The pinned precision matrix `-L_κ` (origin row/column removed) is banded
//! except for the torus wrap couplings into the last hyperplane of sites.
//! Ordering that hyperplane last gives a "band + border" structure
//!
//! ```text
//!   A = [ B  Cᵀ ]     B banded (bandwidth L^{d-1}),  border size L^{d-1}
//!       [ C  D  ]
//! ```
//!
//! which factors as `A = MᵀM` with `M = [[R_B, V], [0, R_S]]`, where
//! `B = R_BᵀR_B`, `V = R_B^{-T}Cᵀ` and `S = D - VᵀV = R_SᵀR_S`.  Solving
//! `M x = z` with standard normal `z` then samples exactly from
//! `N(0, A^{-1})` at `O(L^d · L^{2(d-1)})` factor cost.

use crate::error::{Error, Result};
use crate::lattice::ConductanceField;

/// Dense upper Cholesky factor, `A = RᵀR`.
pub struct DenseChol {
    n: usize,
    r: Vec<f64>, // row-major upper triangle (full square storage)
}

impl DenseChol {
    pub fn factor(n: usize, a: &[f64]) -> Result<Self> {
        assert_eq!(a.len(), n * n);
        let mut r = a.to_vec();
        for i in 0..n {
            for k in 0..i {
                let lki = r[k * n + i];
                if lki != 0.0 {
                    for j in i..n {
                        r[i * n + j] -= lki * r[k * n + j];
                    }
                }
            }
            let d = r[i * n + i];
            if !(d > 0.0) {
                return Err(Error::numerical(format!(
                    "matrix not positive definite at pivot {i} ({d:e})"
                )));
            }
            let s = d.sqrt();
            r[i * n + i] = s;
            for j in i + 1..n {
                r[i * n + j] /= s;
            }
        }
        for i in 0..n {
            for j in 0..i {
                r[i * n + j] = 0.0;
            }
        }
        Ok(DenseChol { n, r })
    }

    /// Back-substitution `R x = b`.
    /// Entry `(i, j)` of the upper factor `R` (zero below the diagonal).
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if i <= j {
            self.r[i * self.n + j]
        } else {
            0.0
        }
    }

    pub fn solve_upper(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for i in (0..n).rev() {
            for j in i + 1..n {
                x[i] -= self.r[i * n + j] * x[j];
            }
            x[i] /= self.r[i * n + i];
        }
        x
    }

    /// Forward substitution `Rᵀ y = b`.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                y[i] -= self.r[k * n + i] * y[k];
            }
            y[i] /= self.r[i * n + i];
        }
        y
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.solve_upper(&self.solve_lower(b))
    }

    pub fn log_det(&self) -> f64 {
        (0..self.n).map(|i| self.r[i * self.n + i].ln()).sum::<f64>() * 2.0
    }
}

/// Upper Cholesky factor of a symmetric banded matrix (bandwidth `b`),
/// stored row-major as `band[i*(b+1) + (j-i)]` for `j ∈ [i, i+b]`.
pub struct BandedChol {
    n: usize,
    b: usize,
    band: Vec<f64>,
}

impl BandedChol {
    pub fn factor(n: usize, b: usize, band: Vec<f64>) -> Result<Self> {
        assert_eq!(band.len(), n * (b + 1));
        let mut r = band;
        let w = b + 1;
        for i in 0..n {
            for k in i.saturating_sub(b)..i {
                let lki = r[k * w + (i - k)];
                if lki != 0.0 {
                    let jmax = (k + b).min(n - 1);
                    for j in i..=jmax {
                        r[i * w + (j - i)] -= lki * r[k * w + (j - k)];
                    }
                }
            }
            let d = r[i * w];
            if !(d > 0.0) {
                return Err(Error::numerical(format!(
                    "banded matrix not positive definite at pivot {i} ({d:e})"
                )));
            }
            let s = d.sqrt();
            r[i * w] = s;
            let jmax = b.min(n - 1 - i);
            for off in 1..=jmax {
                r[i * w + off] /= s;
            }
        }
        Ok(BandedChol { n, b, band: r })
    }

    /// Forward substitution `Rᵀ y = rhs`.
    pub fn solve_lower(&self, rhs: &mut [f64]) {
        let w = self.b + 1;
        for i in 0..self.n {
            let mut v = rhs[i];
            for k in i.saturating_sub(self.b)..i {
                v -= self.band[k * w + (i - k)] * rhs[k];
            }
            rhs[i] = v / self.band[i * w];
        }
    }

    /// Back-substitution `R x = rhs`.
    pub fn solve_upper(&self, rhs: &mut [f64]) {
        let w = self.b + 1;
        for i in (0..self.n).rev() {
            let mut v = rhs[i];
            let jmax = self.b.min(self.n - 1 - i);
            for off in 1..=jmax {
                v -= self.band[i * w + off] * rhs[i + off];
            }
            rhs[i] = v / self.band[i * w];
        }
    }

    pub fn log_det(&self) -> f64 {
        let w = self.b + 1;
        (0..self.n).map(|i| self.band[i * w].ln()).sum::<f64>() * 2.0
    }
}

/// Exact factorization of the pinned precision matrix `-L_κ` on the torus.
pub struct PinnedFactor {
    n: usize,
    nb: usize,
    m: usize,
    rb: Option<BandedChol>,
    /// `V = R_B^{-T} Cᵀ`, column-major: `v[col * nb + row]`.
    v: Vec<f64>,
    rs: DenseChol,
}

impl PinnedFactor {
    pub fn new(kappa: &ConductanceField) -> Result<Self> {
        let t = kappa.torus();
        let d = t.d();
        let l = t.l();
        let sites = t.sites();
        let n = sites - 1; // pinned dimension
        let m = l.pow((d - 1) as u32).min(n); // border: last hyperplane
        let nb = n - m;
        let b = if nb > 1 { m.min(nb - 1) } else { 0 };

        let w = b + 1;
        let mut band = vec![0.0; nb * w];
        let mut c_rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
        let mut dblock = vec![0.0; m * m];

        let mut add = |i: usize, j: usize, val: f64| -> Result<()> {
            // i, j are pinned indices (site - 1); i may equal j.
            let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
            match (lo < nb, hi < nb) {
                (true, true) => {
                    if hi - lo > b {
                        return Err(Error::numerical(format!(
                            "coupling ({lo},{hi}) escapes bandwidth {b}"
                        )));
                    }
                    band[lo * w + (hi - lo)] += val;
                    Ok(())
                }
                (true, false) => {
                    c_rows[hi - nb].push((lo, val));
                    Ok(())
                }
                (false, false) => {
                    dblock[(lo - nb) * m + (hi - nb)] += val;
                    if lo != hi {
                        dblock[(hi - nb) * m + (lo - nb)] += val;
                    }
                    Ok(())
                }
                (false, true) => unreachable!(),
            }
        };

        for s in 0..sites {
            for dir in 0..d {
                let k = kappa.value(s, dir);
                let tgt = t.neighbor(s, dir, true);
                match (s == 0, tgt == 0) {
                    (true, true) => {} // self-loop cannot happen (L ≥ 2)
                    (true, false) => add(tgt - 1, tgt - 1, k)?,
                    (false, true) => add(s - 1, s - 1, k)?,
                    (false, false) => {
                        add(s - 1, s - 1, k)?;
                        add(tgt - 1, tgt - 1, k)?;
                        add(s - 1, tgt - 1, -k)?;
                    }
                }
            }
        }

        let rb = if nb > 0 {
            Some(BandedChol::factor(nb, b, band)?)
        } else {
            None
        };

        // V = R_B^{-T} Cᵀ, one forward solve per border column.
        let mut v = vec![0.0; nb * m];
        if let Some(rb) = &rb {
            for col in 0..m {
                let slot = &mut v[col * nb..(col + 1) * nb];
                for &(row, val) in &c_rows[col] {
                    slot[row] += val;
                }
                rb.solve_lower(slot);
            }
        }

        // Schur complement S = D - VᵀV.
        let mut schur = dblock;
        for c1 in 0..m {
            for c2 in c1..m {
                let dot: f64 = v[c1 * nb..(c1 + 1) * nb]
                    .iter()
                    .zip(&v[c2 * nb..(c2 + 1) * nb])
                    .map(|(a, b)| a * b)
                    .sum();
                schur[c1 * m + c2] -= dot;
                if c1 != c2 {
                    schur[c2 * m + c1] -= dot;
                }
            }
        }
        let rs = DenseChol::factor(m, &schur)?;

        Ok(PinnedFactor { n, nb, m, rb, v, rs })
    }

    /// Pinned dimension (`sites - 1`).
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Maps standard normal `z` to a sample of `N(0, A^{-1})` by solving
    /// `M x = z`; returns the full height vector with the origin pinned at 0.
    pub fn sample(&self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.n);
        let (z1, z2) = z.split_at(self.nb);
        let x2 = self.rs.solve_upper(z2);
        let mut x1 = z1.to_vec();
        for col in 0..self.m {
            let xc = x2[col];
            if xc != 0.0 {
                for (a, vv) in x1.iter_mut().zip(&self.v[col * self.nb..(col + 1) * self.nb]) {
                    *a -= vv * xc;
                }
            }
        }
        if let Some(rb) = &self.rb {
            rb.solve_upper(&mut x1);
        }
        let mut phi = Vec::with_capacity(self.n + 1);
        phi.push(0.0);
        phi.extend_from_slice(&x1);
        phi.extend_from_slice(&x2);
        phi
    }

    /// Solves `A u = rhs` (pinned indexing, length `sites - 1`).
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        assert_eq!(rhs.len(), self.n);
        // Mᵀ y = rhs
        let (r1, r2) = rhs.split_at(self.nb);
        let mut y1 = r1.to_vec();
        if let Some(rb) = &self.rb {
            rb.solve_lower(&mut y1);
        }
        let mut y2 = r2.to_vec();
        for col in 0..self.m {
            let dot: f64 = self.v[col * self.nb..(col + 1) * self.nb]
                .iter()
                .zip(&y1)
                .map(|(a, b)| a * b)
                .sum();
            y2[col] -= dot;
        }
        let y2 = self.rs.solve_lower(&y2);
        // M x = y
        let x2 = self.rs.solve_upper(&y2);
        let mut x1 = y1;
        for col in 0..self.m {
            let xc = x2[col];
            if xc != 0.0 {
                for (a, vv) in x1.iter_mut().zip(&self.v[col * self.nb..(col + 1) * self.nb]) {
                    *a -= vv * xc;
                }
            }
        }
        if let Some(rb) = &self.rb {
            rb.solve_upper(&mut x1);
        }
        let mut x = x1;
        x.extend_from_slice(&x2);
        x
    }

    /// `log det(-L_κ restricted)`, free from the factorization.
    pub fn log_det_precision(&self) -> f64 {
        self.rb.as_ref().map_or(0.0, |r| r.log_det()) + self.rs.log_det()
    }
}

/// Eigendecomposition of a symmetric tridiagonal matrix (implicit QL with
/// shifts).  Returns ascending eigenvalues and the full eigenvector matrix
/// `z` (column `j` ↔ eigenvalue `j`), row-major.
pub fn tridiag_eig(diag: &[f64], offdiag: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = diag.len();
    assert_eq!(offdiag.len(), n.saturating_sub(1));
    let mut d = diag.to_vec();
    let mut e = vec![0.0; n];
    e[..n - 1].copy_from_slice(offdiag);
    let mut z = vec![0.0; n * n];
    for i in 0..n {
        z[i * n + i] = 1.0;
    }

    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut mm = l;
            while mm + 1 < n {
                let dd = d[mm].abs() + d[mm + 1].abs();
                if e[mm].abs() <= f64::EPSILON * dd {
                    break;
                }
                mm += 1;
            }
            if mm == l {
                break;
            }
            iter += 1;
            if iter > 50 {
                return Err(Error::numerical("tridiagonal QL did not converge"));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[mm] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c) = (1.0, 1.0);
            let mut p = 0.0;
            let mut i = mm;
            while i > l {
                i -= 1;
                let mut f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[mm] = 0.0;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for k in 0..n {
                    f = z[k * n + i + 1];
                    z[k * n + i + 1] = s * z[k * n + i] + c * f;
                    z[k * n + i] = c * z[k * n + i] - s * f;
                }
            }
            if r == 0.0 && i > l {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[mm] = 0.0;
        }
    }

    // sort ascending, permuting eigenvector columns
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].partial_cmp(&d[b]).unwrap());
    let vals: Vec<f64> = order.iter().map(|&i| d[i]).collect();
    let mut vecs = vec![0.0; n * n];
    for (new, &old) in order.iter().enumerate() {
        for k in 0..n {
            vecs[k * n + new] = z[k * n + old];
        }
    }
    Ok((vals, vecs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Torus;
    use nalgebra::DMatrix;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_kappa(t: Torus, seed: u64) -> ConductanceField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ConductanceField::new(t, (0..t.edges()).map(|_| rng.gen_range(0.5..3.0)).collect()).unwrap()
    }

    fn dense_pinned(kappa: &ConductanceField) -> DMatrix<f64> {
        let t = kappa.torus();
        let n = t.sites() - 1;
        let mut a = DMatrix::zeros(n, n);
        for s in 0..t.sites() {
            for dir in 0..t.d() {
                let k = kappa.value(s, dir);
                let tgt = t.neighbor(s, dir, true);
                if s != 0 {
                    a[(s - 1, s - 1)] += k;
                }
                if tgt != 0 {
                    a[(tgt - 1, tgt - 1)] += k;
                }
                if s != 0 && tgt != 0 {
                    a[(s - 1, tgt - 1)] -= k;
                    a[(tgt - 1, s - 1)] -= k;
                }
            }
        }
        a
    }

    #[test]
    fn dense_chol_solves_and_logdets() {
        let a = [4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0];
        let ch = DenseChol::factor(3, &a).unwrap();
        let x = ch.solve(&[1.0, 2.0, 3.0]);
        let m = DMatrix::from_row_slice(3, 3, &a);
        let want = m.clone().lu().solve(&nalgebra::DVector::from_vec(vec![1.0, 2.0, 3.0])).unwrap();
        for i in 0..3 {
            assert!((x[i] - want[i]).abs() < 1e-12);
        }
        assert!((ch.log_det() - m.determinant().ln()).abs() < 1e-12);
        // not PD
        assert!(DenseChol::factor(2, &[1.0, 5.0, 5.0, 1.0]).is_err());
    }

    #[test]
    fn banded_chol_matches_dense_on_random_spd() {
        let n = 30;
        let b = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut band = vec![0.0; n * (b + 1)];
        let mut dense = DMatrix::zeros(n, n);
        for i in 0..n {
            band[i * (b + 1)] = 10.0 + rng.gen::<f64>();
            dense[(i, i)] = band[i * (b + 1)];
            for off in 1..=b.min(n - 1 - i) {
                let v = rng.gen_range(-1.0..1.0);
                band[i * (b + 1) + off] = v;
                dense[(i, i + off)] = v;
                dense[(i + off, i)] = v;
            }
        }
        let ch = BandedChol::factor(n, b, band).unwrap();
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut x = rhs.clone();
        ch.solve_lower(&mut x);
        ch.solve_upper(&mut x);
        let want = dense.clone().lu().solve(&nalgebra::DVector::from_vec(rhs)).unwrap();
        for i in 0..n {
            assert!((x[i] - want[i]).abs() < 1e-10);
        }
        assert!((ch.log_det() - dense.determinant().ln()).abs() < 1e-9);
    }

    #[test]
    fn pinned_factor_inverts_the_pinned_precision() {
        for (d, l, seed) in [(1, 2, 1), (1, 7, 2), (2, 2, 3), (2, 5, 4), (3, 3, 5)] {
            let t = Torus::new(d, l).unwrap();
            let kappa = random_kappa(t, seed);
            let fact = PinnedFactor::new(&kappa).unwrap();
            let a = dense_pinned(&kappa);
            let n = t.sites() - 1;
            // A · solve(e_i) = e_i for a few probes
            for probe in [0, n / 2, n - 1] {
                let mut e = vec![0.0; n];
                e[probe] = 1.0;
                let x = fact.solve(&e);
                let ax = &a * nalgebra::DVector::from_vec(x);
                for i in 0..n {
                    let want = if i == probe { 1.0 } else { 0.0 };
                    assert!(
                        (ax[i] - want).abs() < 1e-9,
                        "d={d} L={l} probe {probe} row {i}: {}",
                        ax[i]
                    );
                }
            }
            let logdet = a.clone().cholesky().unwrap().l().diagonal().iter().map(|x| x.ln()).sum::<f64>() * 2.0;
            assert!((fact.log_det_precision() - logdet).abs() < 1e-8);
        }
    }

    #[test]
    fn pinned_samples_have_the_right_covariance() {
        let t = Torus::new(2, 3).unwrap();
        let kappa = random_kappa(t, 9);
        let fact = PinnedFactor::new(&kappa).unwrap();
        let cov = dense_pinned(&kappa).try_inverse().unwrap();
        let n = t.sites() - 1;
        let reps = 60_000;
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut acc = DMatrix::<f64>::zeros(n, n);
        for _ in 0..reps {
            let z: Vec<f64> = (0..n).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
            let phi = fact.sample(&z);
            assert_eq!(phi[0], 0.0);
            for i in 0..n {
                for j in 0..n {
                    acc[(i, j)] += phi[i + 1] * phi[j + 1];
                }
            }
        }
        acc /= reps as f64;
        for i in 0..n {
            for j in 0..n {
                // 3-sigma-ish MC band for second moments
                let tol = 3.0 * ((cov[(i, i)] * cov[(j, j)] + cov[(i, j)].powi(2)) / reps as f64).sqrt() + 1e-12;
                assert!(
                    (acc[(i, j)] - cov[(i, j)]).abs() < tol,
                    "cov[{i},{j}] = {} want {}",
                    acc[(i, j)],
                    cov[(i, j)]
                );
            }
        }
    }

    #[test]
    fn tridiag_eig_matches_the_path_laplacian_spectrum() {
        // Path Laplacian (Dirichlet): eigenvalues 2 - 2 cos(kπ/(n+1)).
        let n = 12;
        let (vals, vecs) = tridiag_eig(&vec![2.0; n], &vec![-1.0; n - 1]).unwrap();
        for k in 1..=n {
            let want = 2.0 - 2.0 * (k as f64 * std::f64::consts::PI / (n as f64 + 1.0)).cos();
            assert!((vals[k - 1] - want).abs() < 1e-12);
        }
        // columns are orthonormal
        for a in 0..n {
            for b in a..n {
                let dot: f64 = (0..n).map(|k| vecs[k * n + a] * vecs[k * n + b]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn tridiag_eig_matches_nalgebra_on_random_input() {
        let n = 40;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let e: Vec<f64> = (0..n - 1).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (vals, _) = tridiag_eig(&d, &e).unwrap();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = d[i];
            if i + 1 < n {
                m[(i, i + 1)] = e[i];
                m[(i + 1, i)] = e[i];
            }
        }
        let mut want: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().cloned().collect();
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for i in 0..n {
            assert!((vals[i] - want[i]).abs() < 1e-9);
        }
    }
}
