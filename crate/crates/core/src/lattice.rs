//! The discrete torus `(Z/LZ)^d`, `d ∈ {1,2,3}`, and the field containers
//! that live on it.
//!
//! Sites are indexed row-major with coordinate 0 fastest:
//! `site = c0 + L c1 + L² c2`.  Each site owns the `d` positively oriented
//! edges leaving it, so edge `(site, dir)` has flat index `site·d + dir`.
//! Height fields are pinned to `φ(0) = 0`; gradient fields store one value
//! per oriented edge; conductance fields are symmetric by construction
//! (`κ_{xy}` is stored once on the oriented edge).

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Torus {
    d: usize,
    l: usize,
}

impl Torus {
    pub fn new(d: usize, l: usize) -> Result<Self> {
        if !(1..=3).contains(&d) {
            return Err(Error::invalid(format!("dimension {d} not in 1..=3")));
        }
        if l < 2 {
            return Err(Error::invalid(format!("side length {l} must be ≥ 2")));
        }
        let mut vol: usize = 1;
        for _ in 0..d {
            vol = vol
                .checked_mul(l)
                .ok_or_else(|| Error::invalid("torus volume overflows usize"))?;
        }
        if vol > (u32::MAX as usize) {
            return Err(Error::invalid("torus volume exceeds u32 site indexing"));
        }
        Ok(Torus { d, l })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn l(&self) -> usize {
        self.l
    }

    /// Number of sites, `L^d`.
    pub fn sites(&self) -> usize {
        self.l.pow(self.d as u32)
    }

    /// Number of positively oriented edges, `d·L^d`.
    pub fn edges(&self) -> usize {
        self.d * self.sites()
    }

    pub fn coords(&self, site: usize) -> [usize; 3] {
        let mut c = [0usize; 3];
        let mut rest = site;
        for j in 0..self.d {
            c[j] = rest % self.l;
            rest /= self.l;
        }
        c
    }

    /// Site index of reduced coordinates (each in `0..L`).
    pub fn site(&self, c: [usize; 3]) -> usize {
        let mut s = 0;
        for j in (0..self.d).rev() {
            s = s * self.l + c[j];
        }
        s
    }

    /// Site index of arbitrary integer coordinates, wrapped onto the torus.
    pub fn site_wrapped(&self, c: [i64; 3]) -> usize {
        let l = self.l as i64;
        let mut r = [0usize; 3];
        for j in 0..self.d {
            r[j] = c[j].rem_euclid(l) as usize;
        }
        self.site(r)
    }

    /// Neighbor one step along `dir` (`forward = false` steps backwards).
    pub fn neighbor(&self, site: usize, dir: usize, forward: bool) -> usize {
        let stride = self.l.pow(dir as u32);
        let coord = (site / stride) % self.l;
        if forward {
            if coord + 1 == self.l {
                site - (self.l - 1) * stride
            } else {
                site + stride
            }
        } else if coord == 0 {
            site + (self.l - 1) * stride
        } else {
            site - stride
        }
    }

    pub fn edge_index(&self, site: usize, dir: usize) -> usize {
        site * self.d + dir
    }

    /// Inverse of [`edge_index`](Self::edge_index).
    pub fn edge_site_dir(&self, edge: usize) -> (usize, usize) {
        (edge / self.d, edge % self.d)
    }

    /// Per-site table of the `d` forward neighbors, `table[site*d + dir]`.
    pub fn plus_neighbors(&self) -> Vec<u32> {
        let n = self.sites();
        let mut table = vec![0u32; n * self.d];
        for s in 0..n {
            for j in 0..self.d {
                table[s * self.d + j] = self.neighbor(s, j, true) as u32;
            }
        }
        table
    }

    fn shift_sites(&self, v: [i64; 3]) -> Vec<u32> {
        let n = self.sites();
        let mut table = vec![0u32; n];
        for s in 0..n {
            let c = self.coords(s);
            let mut t = [0i64; 3];
            for j in 0..self.d {
                t[j] = c[j] as i64 + v[j];
            }
            table[s] = self.site_wrapped(t) as u32;
        }
        table
    }
}

/// Pinned height field, `φ(0) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightField {
    torus: Torus,
    values: Vec<f64>,
}

impl HeightField {
    pub fn new(torus: Torus, values: Vec<f64>) -> Result<Self> {
        if values.len() != torus.sites() {
            return Err(Error::invalid(format!(
                "height field has {} values, torus has {} sites",
                values.len(),
                torus.sites()
            )));
        }
        if values[0] != 0.0 {
            return Err(Error::invalid(format!(
                "height field must be pinned, φ(0) = {}",
                values[0]
            )));
        }
        Ok(HeightField { torus, values })
    }

    pub fn zeros(torus: Torus) -> Self {
        HeightField {
            values: vec![0.0; torus.sites()],
            torus,
        }
    }

    /// Pins an arbitrary site function by subtracting its value at the origin.
    pub fn from_unpinned(torus: Torus, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != torus.sites() {
            return Err(Error::invalid("height field length mismatch"));
        }
        let v0 = values[0];
        for v in &mut values {
            *v -= v0;
        }
        values[0] = 0.0;
        Ok(HeightField { torus, values })
    }

    pub fn torus(&self) -> Torus {
        self.torus
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// In-crate mutable access for the Gibbs sweeps; callers must keep the
    /// origin pinned at zero.
    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Forward difference field `η(x, j) = φ(x + ê_j) - φ(x)`.
    pub fn grad(&self) -> GradientField {
        let t = self.torus;
        let mut eta = vec![0.0; t.edges()];
        for s in 0..t.sites() {
            for j in 0..t.d() {
                eta[s * t.d() + j] = self.values[t.neighbor(s, j, true)] - self.values[s];
            }
        }
        GradientField { torus: t, values: eta }
    }

    /// Translated field `x ↦ φ(x + v)`, re-pinned at the origin.
    pub fn shifted(&self, v: [i64; 3]) -> HeightField {
        let map = self.torus.shift_sites(v);
        let mut values: Vec<f64> = map.iter().map(|&s| self.values[s as usize]).collect();
        let v0 = values[0];
        for x in &mut values {
            *x -= v0;
        }
        values[0] = 0.0;
        HeightField {
            torus: self.torus,
            values,
        }
    }
}

/// One value per positively oriented edge; the reverse edge carries `-η`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    torus: Torus,
    values: Vec<f64>,
}

/// Location of the worst plaquette or winding violation.
#[derive(Debug, Clone, Copy)]
pub struct LoopDefect {
    /// Largest absolute plaquette circulation, with its base site and plane.
    pub plaquette: f64,
    pub plaquette_site: usize,
    pub plaquette_plane: (usize, usize),
    /// Largest absolute winding sum, with its direction and a base site.
    pub winding: f64,
    pub winding_dir: usize,
    pub winding_site: usize,
}

impl GradientField {
    pub fn new(torus: Torus, values: Vec<f64>) -> Result<Self> {
        if values.len() != torus.edges() {
            return Err(Error::invalid(format!(
                "gradient field has {} values, torus has {} edges",
                values.len(),
                torus.edges()
            )));
        }
        Ok(GradientField { torus, values })
    }

    pub fn torus(&self) -> Torus {
        self.torus
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, site: usize, dir: usize) -> f64 {
        self.values[site * self.torus.d() + dir]
    }

    /// Worst loop violations: oriented plaquette circulations and the
    /// winding sums along all axis cycles.
    pub fn loop_defect(&self) -> LoopDefect {
        loop_defect(self.torus, &self.values)
    }

    /// Maximum absolute plaquette circulation (0 in d = 1).
    pub fn plaquette_defect(&self) -> f64 {
        self.loop_defect().plaquette
    }

    /// Path-integrates the field back to a pinned height field.
    ///
    /// Fails with the worst offending loop if any plaquette circulation or
    /// winding sum exceeds `tol` — the integral would depend on the path.
    pub fn integrate(&self, tol: f64) -> Result<HeightField> {
        let defect = self.loop_defect();
        if defect.plaquette.abs() > tol {
            let c = self.torus.coords(defect.plaquette_site);
            return Err(Error::Inconsistent {
                what: "plaquette circulation",
                location: format!(
                    "site {:?}, plane ({}, {})",
                    &c[..self.torus.d()],
                    defect.plaquette_plane.0,
                    defect.plaquette_plane.1
                ),
                defect: defect.plaquette,
            });
        }
        if defect.winding.abs() > tol {
            let c = self.torus.coords(defect.winding_site);
            return Err(Error::Inconsistent {
                what: "winding sum",
                location: format!(
                    "axis {} line through {:?}",
                    defect.winding_dir,
                    &c[..self.torus.d()]
                ),
                defect: defect.winding,
            });
        }
        let t = self.torus;
        let d = t.d();
        let mut phi = vec![0.0; t.sites()];
        // Row-major order guarantees the predecessor along the highest
        // nonzero coordinate is already integrated.
        for s in 1..t.sites() {
            let c = t.coords(s);
            let j = (0..d).rev().find(|&j| c[j] > 0).unwrap();
            let prev = s - t.l().pow(j as u32);
            phi[s] = phi[prev] + self.values[prev * d + j];
        }
        Ok(HeightField { torus: t, values: phi })
    }

    /// Translated field `(x, j) ↦ η(x + v, j)`.
    pub fn shifted(&self, v: [i64; 3]) -> GradientField {
        GradientField {
            torus: self.torus,
            values: shift_edge_values(self.torus, &self.values, v),
        }
    }
}

/// Strictly positive symmetric edge conductances.
#[derive(Debug, Clone, PartialEq)]
pub struct ConductanceField {
    torus: Torus,
    values: Vec<f64>,
}

impl ConductanceField {
    pub fn new(torus: Torus, values: Vec<f64>) -> Result<Self> {
        if values.len() != torus.edges() {
            return Err(Error::invalid(format!(
                "conductance field has {} values, torus has {} edges",
                values.len(),
                torus.edges()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::invalid(format!("conductance {bad} must be positive")));
        }
        Ok(ConductanceField { torus, values })
    }

    pub fn constant(torus: Torus, kappa: f64) -> Result<Self> {
        Self::new(torus, vec![kappa; torus.edges()])
    }

    pub fn torus(&self) -> Torus {
        self.torus
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, site: usize, dir: usize) -> f64 {
        self.values[site * self.torus.d() + dir]
    }

    /// In-crate mutable access for the Gibbs sweeps; callers must keep every
    /// entry positive.
    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Checks the uniform ellipticity window `[floor, 1/floor]`.
    pub fn check_floor(&self, floor: f64) -> Result<()> {
        let lo = self.values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.values.iter().cloned().fold(0.0f64, f64::max);
        if lo < floor || hi > 1.0 / floor {
            return Err(Error::invalid(format!(
                "conductances span [{lo:e}, {hi:e}], outside [{floor:e}, {:e}]",
                1.0 / floor
            )));
        }
        Ok(())
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0f64, f64::max)
    }

    /// Total conductance incident to a site (the diagonal of `-L_κ`).
    pub fn incident_sum(&self, site: usize) -> f64 {
        let t = self.torus;
        let d = t.d();
        let mut sum = 0.0;
        for j in 0..d {
            sum += self.values[site * d + j];
            sum += self.values[t.neighbor(site, j, false) * d + j];
        }
        sum
    }

    /// Symmetric pair access `κ(x, y)` for nearest neighbors `y = x ± ê_j`.
    ///
    /// For `L = 2` the two sites are joined by two distinct parallel edges
    /// and the pair is ambiguous; use edge indexing there instead.
    pub fn between(&self, x: usize, y: usize) -> Option<f64> {
        let t = self.torus;
        for j in 0..t.d() {
            if t.neighbor(x, j, true) == y {
                return Some(self.values[x * t.d() + j]);
            }
            if t.neighbor(y, j, true) == x {
                return Some(self.values[y * t.d() + j]);
            }
        }
        None
    }

    /// Translated environment `(x, j) ↦ κ(x + v, j)`.
    pub fn shifted(&self, v: [i64; 3]) -> ConductanceField {
        ConductanceField {
            torus: self.torus,
            values: shift_edge_values(self.torus, &self.values, v),
        }
    }
}

fn shift_edge_values(t: Torus, values: &[f64], v: [i64; 3]) -> Vec<f64> {
    let map = t.shift_sites(v);
    let d = t.d();
    let mut out = vec![0.0; values.len()];
    for s in 0..t.sites() {
        let src = map[s] as usize;
        out[s * d..s * d + d].copy_from_slice(&values[src * d..src * d + d]);
    }
    out
}

/// Loop sums for any per-edge field (shared by gradient fields and the
/// vector fields of the homogenization module).
pub(crate) fn loop_defect(t: Torus, values: &[f64]) -> LoopDefect {
    let d = t.d();
    let mut worst = LoopDefect {
        plaquette: 0.0,
        plaquette_site: 0,
        plaquette_plane: (0, usize::min(1, d - 1)),
        winding: 0.0,
        winding_dir: 0,
        winding_site: 0,
    };
    for s in 0..t.sites() {
        for i in 0..d {
            for j in (i + 1)..d {
                let si = t.neighbor(s, i, true);
                let sj = t.neighbor(s, j, true);
                // x → x+êi → x+êi+êj → x+êj → x
                let c = values[s * d + i] + values[si * d + j]
                    - values[sj * d + i]
                    - values[s * d + j];
                if c.abs() > worst.plaquette.abs() {
                    worst.plaquette = c;
                    worst.plaquette_site = s;
                    worst.plaquette_plane = (i, j);
                }
            }
        }
    }
    for dir in 0..d {
        let stride = t.l().pow(dir as u32);
        for s in 0..t.sites() {
            let c = t.coords(s);
            if c[dir] != 0 {
                continue;
            }
            let mut sum = 0.0;
            let mut x = s;
            for _ in 0..t.l() {
                sum += values[x * d + dir];
                x = if (x / stride) % t.l() + 1 == t.l() {
                    x - (t.l() - 1) * stride
                } else {
                    x + stride
                };
            }
            if sum.abs() > worst.winding.abs() {
                worst.winding = sum;
                worst.winding_dir = dir;
                worst.winding_site = s;
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn site_and_edge_counts() {
        let t = Torus::new(3, 4).unwrap();
        assert_eq!(t.sites(), 64);
        assert_eq!(t.edges(), 192);
        assert!(Torus::new(4, 4).is_err());
        assert!(Torus::new(0, 4).is_err());
        assert!(Torus::new(2, 1).is_err());
    }

    #[test]
    fn coords_round_trip_and_neighbors() {
        let t = Torus::new(3, 5).unwrap();
        for s in 0..t.sites() {
            assert_eq!(t.site(t.coords(s)), s);
            for j in 0..3 {
                let fwd = t.neighbor(s, j, true);
                assert_eq!(t.neighbor(fwd, j, false), s);
            }
        }
        // explicit row-major check: coordinate 0 is fastest
        assert_eq!(t.site([1, 0, 0]), 1);
        assert_eq!(t.site([0, 1, 0]), 5);
        assert_eq!(t.site([0, 0, 1]), 25);
    }

    #[test]
    fn grad_on_the_three_ring() {
        let t = Torus::new(1, 3).unwrap();
        let phi = HeightField::new(t, vec![0.0, 2.0, 5.0]).unwrap();
        let eta = phi.grad();
        assert_eq!(eta.values(), &[2.0, 3.0, -5.0]);
        // windings of an exact gradient vanish identically
        assert_eq!(eta.loop_defect().winding, 0.0);
    }

    #[test]
    fn constant_gradient_has_zero_plaquettes_but_winds() {
        let t = Torus::new(2, 4).unwrap();
        let eta = GradientField::new(t, vec![0.7; t.edges()]).unwrap();
        assert_eq!(eta.plaquette_defect(), 0.0);
        let defect = eta.loop_defect();
        assert!((defect.winding - 0.7 * 4.0).abs() < 1e-12);
        assert!(matches!(
            eta.integrate(1e-8),
            Err(Error::Inconsistent { what: "winding sum", .. })
        ));
    }

    #[test]
    fn integrate_reports_the_worst_plaquette() {
        let t = Torus::new(2, 4).unwrap();
        let phi: Vec<f64> = (0..t.sites()).map(|s| (s as f64 * 0.37).sin()).collect();
        let phi = HeightField::from_unpinned(t, phi).unwrap();
        let mut eta = phi.grad();
        let broken = t.edge_index(t.site([1, 2, 0]), 0);
        eta.values[broken] += 1e-3;
        match eta.integrate(1e-8) {
            Err(Error::Inconsistent { what, defect, .. }) => {
                assert_eq!(what, "plaquette circulation");
                assert!((defect.abs() - 1e-3).abs() < 1e-12);
            }
            other => panic!("expected inconsistency, got {other:?}"),
        }
    }

    #[test]
    fn pinning_is_enforced() {
        let t = Torus::new(1, 4).unwrap();
        assert!(HeightField::new(t, vec![0.1, 0.0, 0.0, 0.0]).is_err());
        let h = HeightField::from_unpinned(t, vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(h.values(), &[0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn conductance_validation_and_symmetric_access() {
        let t = Torus::new(2, 3).unwrap();
        assert!(ConductanceField::new(t, vec![-1.0; t.edges()]).is_err());
        assert!(ConductanceField::new(t, vec![f64::NAN; t.edges()]).is_err());
        let vals: Vec<f64> = (0..t.edges()).map(|e| 1.0 + e as f64).collect();
        let k = ConductanceField::new(t, vals).unwrap();
        let x = t.site([1, 1, 0]);
        let y = t.neighbor(x, 0, true);
        assert_eq!(k.between(x, y), k.between(y, x));
        assert_eq!(k.between(x, y).unwrap(), k.value(x, 0));
        assert_eq!(k.between(x, x), None);
        k.check_floor(1e-3).unwrap();
        assert!(k.check_floor(0.5).is_err());
    }

    #[test]
    fn incident_sum_counts_all_edges() {
        // On L = 2 parallel edges are distinct and both count.
        let t = Torus::new(2, 2).unwrap();
        let k = ConductanceField::new(t, (1..=8).map(f64::from).collect()).unwrap();
        let s = 0usize;
        let mut expect = 0.0;
        for j in 0..2 {
            expect += k.value(s, j) + k.value(t.neighbor(s, j, false), j);
        }
        assert_eq!(k.incident_sum(s), expect);
    }

    fn random_height(t: Torus, seed: u64) -> HeightField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals: Vec<f64> = (0..t.sites()).map(|_| rng.gen_range(-3.0..3.0)).collect();
        HeightField::from_unpinned(t, vals).unwrap()
    }

    #[test]
    fn grad_integrate_round_trip() {
        for (d, l) in [(1, 7), (2, 5), (3, 4)] {
            let t = Torus::new(d, l).unwrap();
            let phi = random_height(t, 42 + d as u64);
            let back = phi.grad().integrate(1e-8).unwrap();
            for (a, b) in phi.values().iter().zip(back.values()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shift_round_trips_heights() {
        let t = Torus::new(2, 5).unwrap();
        let phi = random_height(t, 7);
        let back = phi.shifted([2, 3, 0]).shifted([-2, -3, 0]);
        for (a, b) in phi.values().iter().zip(back.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        // shifting commutes with taking gradients
        let a = phi.shifted([1, 4, 0]).grad();
        let b = phi.grad().shifted([1, 4, 0]);
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn shift_is_a_group_action_on_edge_fields(
            seed in 0u64..1000,
            ux in -6i64..6, uy in -6i64..6,
            vx in -6i64..6, vy in -6i64..6,
        ) {
            let t = Torus::new(2, 4).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let vals: Vec<f64> = (0..t.edges()).map(|_| rng.gen_range(0.5..2.0)).collect();
            let k = ConductanceField::new(t, vals).unwrap();
            // identity, full wrap, composition — all exact relabelings
            let ident = k.shifted([0, 0, 0]);
            prop_assert_eq!(ident.values(), k.values());
            let wrap = k.shifted([4, 8, 0]);
            prop_assert_eq!(wrap.values(), k.values());
            let lhs = k.shifted([ux, uy, 0]).shifted([vx, vy, 0]);
            let rhs = k.shifted([ux + vx, uy + vy, 0]);
            prop_assert_eq!(lhs.values(), rhs.values());
        }
    }
}
