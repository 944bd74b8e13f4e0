//! Discrete sideways energy `J(ρ)`, time energy `E(s)`, the pointwise
//! multiplier identities and the integrated identity/inequality gaps.
//!
//! Fields are given by their angular coefficients `W_n(r, t)` on the lattice
//! `(i h, j h)`. With `dx = r² dr dθ` every `r^{-2}`-weighted volume integral
//! becomes a plain `dr dθ dt` integral, and sphere integrals of products are
//! coefficient sums; `Σ_{i<j} ∫ (Ω_ij f)(Ω_ij g) = Σ_n l(l+1) f_n g_n`.

use rayon::prelude::*;
use serde::Serialize;

use crate::assembly::{HarmonicPotential, VolumetricField};
use crate::error::{Error, Result};
use crate::goursat1d::{lattice_derivative, CharGrid, ModeCone};
use crate::radial::{derivative, node_count, trapezoid, RadialProfile};
use crate::sphgrid::{build_basis, matvec, HarmonicBasis, SphereTransform, PAIRS};

/// Angular coefficients of a field on the integer lattice of a [`CharGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeField {
    pub basis: HarmonicBasis,
    pub grid: CharGrid,
    /// `values[n][lattice_index(i, j)]`.
    pub values: Vec<Vec<f64>>,
}

/// Row-major index of `(i, j)`: rows `i = 0..=n`, columns `j = i..=2n−i`.
#[inline]
pub fn lattice_index(n: usize, i: usize, j: usize) -> usize {
    i * (2 * n + 1) - i * (i.saturating_sub(1)) + (j - i)
}

pub fn lattice_len(n: usize) -> usize {
    (n + 1) * (n + 1)
}

impl LatticeField {
    pub fn zeros(lmax: usize, grid: CharGrid) -> Self {
        let basis = build_basis(lmax);
        let values = vec![vec![0.0; lattice_len(grid.n)]; basis.len()];
        LatticeField {
            basis,
            grid,
            values,
        }
    }

    /// `W_n(r, t) = f(n, r, t)`.
    pub fn from_fn(lmax: usize, grid: CharGrid, f: impl Fn(usize, f64, f64) -> f64 + Sync) -> Self {
        let mut out = Self::zeros(lmax, grid);
        let n = grid.n;
        let h = grid.h;
        out.values.par_iter_mut().enumerate().for_each(|(m, vals)| {
            for i in 0..=n {
                for j in i..=(2 * n - i) {
                    vals[lattice_index(n, i, j)] = f(m, i as f64 * h, j as f64 * h);
                }
            }
        });
        out
    }

    /// Angular coefficients `U_n = r^k u_n` of an assembled field.
    pub fn from_volumetric(f: &VolumetricField) -> Self {
        let modes = &f.modes;
        Self::from_fn(f.lmax(), f.grid, |m, r, t| {
            let h = f.grid.h;
            let i = (r / h).round() as usize;
            let j = (t / h).round() as usize;
            modes[m].at(i, j).expect("lattice node") * r.powi(modes[m].degree as i32)
        })
    }

    #[inline]
    pub fn get(&self, m: usize, i: usize, j: usize) -> f64 {
        self.values[m][lattice_index(self.grid.n, i, j)]
    }

    fn try_get(&self, m: usize, i: i64, j: i64) -> Option<f64> {
        if self.grid.contains(i, j) {
            Some(self.get(m, i as usize, j as usize))
        } else {
            None
        }
    }

    pub fn nmodes(&self) -> usize {
        self.basis.len()
    }

    fn map(&self, f: impl Fn(usize, usize, usize, f64) -> f64) -> Self {
        let n = self.grid.n;
        let mut out = self.clone();
        for (m, vals) in out.values.iter_mut().enumerate() {
            for i in 0..=n {
                for j in i..=(2 * n - i) {
                    let k = lattice_index(n, i, j);
                    vals[k] = f(m, i, j, vals[k]);
                }
            }
        }
        out
    }

    /// `r · W`, e.g. `v = r u`.
    pub fn times_radius(&self) -> Self {
        let h = self.grid.h;
        self.map(|_, i, _, v| v * i as f64 * h)
    }

    pub fn scaled(&self, a: f64) -> Self {
        self.map(|_, _, _, v| a * v)
    }

    /// `Ω_ij W` node by node in coefficient space.
    pub fn omega(&self, i: usize, j: usize) -> Result<Self> {
        let sph = SphereTransform::for_degree(self.basis.lmax);
        let mat = sph.omega_matrix(i, j)?;
        let nm = self.nmodes();
        let mut out = self.clone();
        let len = lattice_len(self.grid.n);
        for k in 0..len {
            let c: Vec<f64> = (0..nm).map(|m| self.values[m][k]).collect();
            let o = matvec(&mat, &c);
            for m in 0..nm {
                out.values[m][k] = o[m];
            }
        }
        Ok(out)
    }

    /// `W_tt − W_rr + l(l+1)/r² W`, the coefficients of `w_tt − w_rr − r^{-2}Ωw`,
    /// by second-order differences (zero on the axis).
    pub fn wave_residual(&self) -> Self {
        let h = self.grid.h;
        let mut out = self.clone();
        let n = self.grid.n;
        for m in 0..self.nmodes() {
            let l = self.basis.modes[m].degree as f64;
            for i in 0..=n {
                for j in i..=(2 * n - i) {
                    let k = lattice_index(n, i, j);
                    out.values[m][k] = if i == 0 {
                        0.0
                    } else {
                        let r = i as f64 * h;
                        let (ii, jj) = (i as i64, j as i64);
                        let tt = second_derivative(|d| self.try_get(m, ii, jj + d), h);
                        let rr = second_derivative(|d| self.try_get(m, ii + d, jj), h);
                        tt - rr + l * (l + 1.0) / (r * r) * self.get(m, i, j)
                    };
                }
            }
        }
        out
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid || self.basis.lmax != other.basis.lmax {
            return Err(Error::SizeMismatch {
                what: "lattice fields",
                expected: self.nmodes() * lattice_len(self.grid.n),
                got: other.nmodes() * lattice_len(other.grid.n),
            });
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().flatten().fold(0.0, |a, v| a.max(v.abs()))
    }
}

/// First difference at offset 0: centred where possible, otherwise the
/// four-point one-sided stencil, so that quantities built from it can be
/// differenced again without dropping to first order at the lattice edge.
fn first_derivative(f: impl Fn(i64) -> Option<f64>, h: f64) -> f64 {
    let c = f(0).expect("centre node exists");
    match (f(-1), f(1)) {
        (Some(m), Some(p)) => (p - m) / (2.0 * h),
        (None, Some(p1)) => match (f(2), f(3)) {
            (Some(p2), Some(p3)) => (-11.0 * c + 18.0 * p1 - 9.0 * p2 + 2.0 * p3) / (6.0 * h),
            _ => lattice_derivative(f, h),
        },
        (Some(m1), None) => match (f(-2), f(-3)) {
            (Some(m2), Some(m3)) => (11.0 * c - 18.0 * m1 + 9.0 * m2 - 2.0 * m3) / (6.0 * h),
            _ => lattice_derivative(f, h),
        },
        (None, None) => 0.0,
    }
}

/// Second difference at offset 0, centred where possible, one-sided otherwise.
fn second_derivative(f: impl Fn(i64) -> Option<f64>, h: f64) -> f64 {
    let c = f(0).expect("centre node exists");
    let h2 = h * h;
    match (f(-1), f(1)) {
        (Some(m), Some(p)) => (p - 2.0 * c + m) / h2,
        (None, Some(p1)) => match (f(2), f(3)) {
            (Some(p2), Some(p3)) => (2.0 * c - 5.0 * p1 + 4.0 * p2 - p3) / h2,
            (Some(p2), None) => (c - 2.0 * p1 + p2) / h2,
            _ => 0.0,
        },
        (Some(m1), None) => match (f(-2), f(-3)) {
            (Some(m2), Some(m3)) => (2.0 * c - 5.0 * m1 + 4.0 * m2 - m3) / h2,
            (Some(m2), None) => (c - 2.0 * m1 + m2) / h2,
            _ => 0.0,
        },
        (None, None) => 0.0,
    }
}

/// Regions of the measurement geometry in lattice units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub radius: f64,
    pub t_end: f64,
    pub h: f64,
    /// `R / h`.
    pub ir: usize,
    /// `T / h`.
    pub jt: usize,
    /// `(R+T) / (2h)`.
    pub imid: usize,
}

/// Node classes of `K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Outside,
    Interior,
    Cylinder,
    LowerCone,
    UpperCone,
}

impl Geometry {
    pub fn new(radius: f64, t_end: f64, grid: &CharGrid) -> Result<Self> {
        let h = grid.h;
        let ir = grid.align("R", radius)?;
        let jt = grid.align("T", t_end)?;
        if ir == 0 || jt <= ir {
            return Err(Error::InvalidParameter(format!(
                "need 0 < R < T (R={radius}, T={t_end})"
            )));
        }
        if (ir + jt) % 2 != 0 {
            return Err(Error::Misaligned {
                what: "(R+T)/2",
                value: 0.5 * (radius + t_end),
                h,
            });
        }
        let imid = (ir + jt) / 2;
        if imid > grid.n {
            return Err(Error::InvalidParameter(format!(
                "grid radius {} does not cover (R+T)/2 = {}",
                grid.rho,
                0.5 * (radius + t_end)
            )));
        }
        Ok(Geometry {
            radius,
            t_end,
            h,
            ir,
            jt,
            imid,
        })
    }

    /// `(R+T)/h`: the upper cone is `j = jrt − i`.
    pub fn jrt(&self) -> usize {
        self.ir + self.jt
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.radius + self.t_end)
    }

    pub fn classify(&self, i: usize, j: usize) -> Region {
        if i < self.ir || i > self.imid || j < i || j + i > self.jrt() {
            Region::Outside
        } else if i == self.ir {
            Region::Cylinder
        } else if j == i {
            Region::LowerCone
        } else if j + i == self.jrt() {
            Region::UpperCone
        } else {
            Region::Interior
        }
    }

    fn align_radius(&self, what: &'static str, rho: f64) -> Result<usize> {
        let i = node_count(rho, self.h).ok_or(Error::Misaligned {
            what,
            value: rho,
            h: self.h,
        })?;
        if i < self.ir || i > self.imid {
            return Err(Error::InvalidParameter(format!(
                "{what} = {rho} outside [R, (R+T)/2] = [{}, {}]",
                self.radius,
                self.mid()
            )));
        }
        Ok(i)
    }

    fn align_time(&self, s: f64) -> Result<usize> {
        let j = node_count(s, self.h).ok_or(Error::Misaligned {
            what: "s",
            value: s,
            h: self.h,
        })?;
        if j < self.ir || j > self.jt {
            return Err(Error::InvalidParameter(format!(
                "s = {s} outside [R, T] = [{}, {}]",
                self.radius, self.t_end
            )));
        }
        Ok(j)
    }
}

/// Radial and time derivatives of a lattice field, one mode at a time.
struct Derivs<'a> {
    w: &'a LatticeField,
}

impl Derivs<'_> {
    fn r(&self, m: usize, i: usize, j: usize) -> f64 {
        let (i, j) = (i as i64, j as i64);
        first_derivative(|d| self.w.try_get(m, i + d, j), self.w.grid.h)
    }

    fn t(&self, m: usize, i: usize, j: usize) -> f64 {
        let (i, j) = (i as i64, j as i64);
        first_derivative(|d| self.w.try_get(m, i, j + d), self.w.grid.h)
    }

    fn rr(&self, m: usize, i: usize, j: usize) -> f64 {
        let (i, j) = (i as i64, j as i64);
        second_derivative(|d| self.w.try_get(m, i + d, j), self.w.grid.h)
    }

    fn tt(&self, m: usize, i: usize, j: usize) -> f64 {
        let (i, j) = (i as i64, j as i64);
        second_derivative(|d| self.w.try_get(m, i, j + d), self.w.grid.h)
    }
}

fn eigen(basis: &HarmonicBasis) -> Vec<f64> {
    basis
        .modes
        .iter()
        .map(|m| (m.degree * (m.degree + 1)) as f64)
        .collect()
}

/// `∫_S (w_t² + w_r² + w² + r^{-2} Σ(Ω_ij w)²)` at lattice node `(i, j)`.
fn density(w: &LatticeField, d: &Derivs<'_>, lam: &[f64], i: usize, j: usize) -> f64 {
    let r = i as f64 * w.grid.h;
    (0..w.nmodes())
        .map(|m| {
            let v = w.get(m, i, j);
            let ang = if r > 0.0 { lam[m] / (r * r) } else { 0.0 };
            d.t(m, i, j).powi(2) + d.r(m, i, j).powi(2) + (1.0 + ang) * v * v
        })
        .sum()
}

/// Cone restriction `r ↦ W_n(r, j(r))` for `i = lo..=hi`, and `∫ (f_r² + f² + r^{-2}Σ(Ωf)²) dr`.
fn cone_integral(w: &LatticeField, lam: &[f64], lo: usize, hi: usize, time: impl Fn(usize) -> usize) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let h = w.grid.h;
    let mut dens = vec![0.0; hi - lo + 1];
    for m in 0..w.nmodes() {
        // Extend the restriction one node past each end when available for
        // centred differences.
        let first = lo.saturating_sub(1);
        let last = (hi + 1).min(w.grid.n);
        let mut idx = Vec::new();
        let mut vals = Vec::new();
        for i in first..=last {
            let j = time(i);
            if w.grid.contains(i as i64, j as i64) {
                idx.push(i);
                vals.push(w.get(m, i, j));
            }
        }
        let dv = derivative(&vals, h);
        for (k, &i) in idx.iter().enumerate() {
            if i < lo || i > hi {
                continue;
            }
            let r = i as f64 * h;
            let ang = if r > 0.0 { lam[m] / (r * r) } else { 0.0 };
            dens[i - lo] += dv[k].powi(2) + (1.0 + ang) * vals[k].powi(2);
        }
    }
    trapezoid(&dens, h)
}

/// `J(ρ) = ∫_ρ^{R+T−ρ} ∫_S (w_t² + w_r² + w² + ρ^{-2}Σ(Ω_ij w)²)(ρθ, t) dθ dt`.
pub fn sideways_energy(w: &LatticeField, geo: &Geometry, rho: f64) -> Result<f64> {
    let i = geo.align_radius("rho", rho)?;
    Ok(sideways_at(w, geo, i))
}

fn sideways_at(w: &LatticeField, geo: &Geometry, i: usize) -> f64 {
    let d = Derivs { w };
    let lam = eigen(&w.basis);
    let row: Vec<f64> = (i..=(geo.jrt() - i)).map(|j| density(w, &d, &lam, i, j)).collect();
    trapezoid(&row, w.grid.h)
}

/// `E(s)`: the annulus integral at time `s`, plus the upper-cone term once `s > (R+T)/2`.
pub fn time_energy(w: &LatticeField, geo: &Geometry, s: f64) -> Result<f64> {
    let js = geo.align_time(s)?;
    Ok(time_energy_at(w, geo, js))
}

fn time_energy_at(w: &LatticeField, geo: &Geometry, js: usize) -> f64 {
    let d = Derivs { w };
    let lam = eigen(&w.basis);
    let outer = js.min(geo.jrt() - js);
    let row: Vec<f64> = (geo.ir..=outer).map(|i| density(w, &d, &lam, i, js)).collect();
    let mut e = trapezoid(&row, w.grid.h);
    if js > geo.imid {
        let jrt = geo.jrt();
        e += cone_integral(w, &lam, jrt - js, geo.imid, |i| jrt - i);
    }
    e
}

/// Pointwise values on the sphere grid at one lattice node.
struct NodeData {
    w: Vec<f64>,
    wr: Vec<f64>,
    wt: Vec<f64>,
    wrr: Vec<f64>,
    wtt: Vec<f64>,
    /// `Δ_S w` on the unit sphere.
    lap: Vec<f64>,
    ow: [Vec<f64>; 3],
    or: [Vec<f64>; 3],
    ot: [Vec<f64>; 3],
    oow: [Vec<f64>; 3],
}

struct Pointwise<'a> {
    w: &'a LatticeField,
    sph: SphereTransform,
    omega: [Vec<f64>; 3],
    lam: Vec<f64>,
}

impl<'a> Pointwise<'a> {
    fn new(w: &'a LatticeField) -> Self {
        let sph = SphereTransform::for_degree(w.basis.lmax);
        let omega = PAIRS.map(|(a, b)| sph.omega_matrix(a, b).expect("valid pair"));
        let lam = eigen(&w.basis);
        Pointwise { w, sph, omega, lam }
    }

    fn node(&self, i: usize, j: usize) -> NodeData {
        let d = Derivs { w: self.w };
        let nm = self.w.nmodes();
        let c: Vec<f64> = (0..nm).map(|m| self.w.get(m, i, j)).collect();
        let cr: Vec<f64> = (0..nm).map(|m| d.r(m, i, j)).collect();
        let ct: Vec<f64> = (0..nm).map(|m| d.t(m, i, j)).collect();
        let crr: Vec<f64> = (0..nm).map(|m| d.rr(m, i, j)).collect();
        let ctt: Vec<f64> = (0..nm).map(|m| d.tt(m, i, j)).collect();
        let clap: Vec<f64> = c.iter().zip(&self.lam).map(|(v, l)| -l * v).collect();
        let syn = |x: &[f64]| self.sph.synthesize_slice(x);
        let per_pair = |x: &[f64]| -> [Vec<f64>; 3] {
            [0, 1, 2].map(|p| syn(&matvec(&self.omega[p], x)))
        };
        let oow = [0, 1, 2].map(|p| {
            let once = matvec(&self.omega[p], &c);
            syn(&matvec(&self.omega[p], &once))
        });
        NodeData {
            w: syn(&c),
            wr: syn(&cr),
            wt: syn(&ct),
            wrr: syn(&crr),
            wtt: syn(&ctt),
            lap: syn(&clap),
            ow: per_pair(&c),
            or: per_pair(&cr),
            ot: per_pair(&ct),
            oow,
        }
    }

    fn interior(&self, geo: &Geometry) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in geo.ir..=geo.imid {
            for j in i..=(geo.jrt() - i) {
                if geo.classify(i, j) == Region::Interior {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// Max-norm over interior nodes and sphere nodes of LHS − RHS of
///
/// ```text
/// 2w_r(w_tt − w_rr − r^{-2}Ωw − w) − 4r^{-2}Ω_ij w_r Ω_ij w + 2r^{-3}(Ω_ij w)²
///   = −(w_t² + w_r² + r^{-2}(Ω_ij w)² + w²)_r + 2(w_r w_t)_t − 2Ω_ij(r^{-2} w_r Ω_ij w)
/// ```
pub fn identity_residual_wr(w: &LatticeField, geo: &Geometry) -> Result<f64> {
    let pw = Pointwise::new(w);
    let h = w.grid.h;
    let np = pw.sph.grid.len();
    let nodes = pw.interior(geo);
    let worst = nodes
        .par_iter()
        .map(|&(i, j)| {
            let r = i as f64 * h;
            let c = pw.node(i, j);
            let energy = |ii: i64| -> Option<Vec<f64>> {
                if !w.grid.contains(ii, j as i64) {
                    return None;
                }
                let ri = ii as f64 * h;
                let d = pw.node(ii as usize, j);
                Some(
                    (0..np)
                        .map(|g| {
                            let ang: f64 = (0..3).map(|p| d.ow[p][g].powi(2)).sum();
                            d.wt[g].powi(2) + d.wr[g].powi(2) + ang / (ri * ri) + d.w[g].powi(2)
                        })
                        .collect(),
                )
            };
            let flux = |jj: i64| -> Option<Vec<f64>> {
                if !w.grid.contains(i as i64, jj) {
                    return None;
                }
                let d = pw.node(i, jj as usize);
                Some((0..np).map(|g| d.wr[g] * d.wt[g]).collect())
            };
            let e_nb: Vec<Option<Vec<f64>>> = (-2..=2).map(|d| energy(i as i64 + d)).collect();
            let p_nb: Vec<Option<Vec<f64>>> = (-2..=2).map(|d| flux(j as i64 + d)).collect();
            let mut worst: f64 = 0.0;
            for g in 0..np {
                let ang2: f64 = (0..3).map(|p| c.ow[p][g].powi(2)).sum();
                let cross: f64 = (0..3).map(|p| c.or[p][g] * c.ow[p][g]).sum();
                let lhs = 2.0 * c.wr[g] * (c.wtt[g] - c.wrr[g] - c.lap[g] / (r * r) - c.w[g])
                    - 4.0 / (r * r) * cross
                    + 2.0 / (r * r * r) * ang2;
                let de = lattice_derivative(|d| e_nb[(d + 2) as usize].as_ref().map(|v| v[g]), h);
                let dp = lattice_derivative(|d| p_nb[(d + 2) as usize].as_ref().map(|v| v[g]), h);
                let div: f64 = (0..3)
                    .map(|p| c.or[p][g] * c.ow[p][g] + c.wr[g] * c.oow[p][g])
                    .sum();
                let rhs = -de + 2.0 * dp - 2.0 / (r * r) * div;
                worst = worst.max((lhs - rhs).abs());
            }
            worst
        })
        .reduce(|| 0.0, f64::max);
    Ok(worst)
}

/// Max-norm over interior nodes and sphere nodes of LHS − RHS of
///
/// ```text
/// 2w_t(w_tt − w_rr − r^{-2}Ωw + w)
///   = (w² + w_t² + w_r² + r^{-2}(Ω_kl w)²)_t − 2(w_t w_r)_r − 2r^{-2}Ω_kl(w_t Ω_kl w)
/// ```
pub fn identity_residual_wt(w: &LatticeField, geo: &Geometry) -> Result<f64> {
    let pw = Pointwise::new(w);
    let h = w.grid.h;
    let np = pw.sph.grid.len();
    let nodes = pw.interior(geo);
    let worst = nodes
        .par_iter()
        .map(|&(i, j)| {
            let r = i as f64 * h;
            let c = pw.node(i, j);
            let energy = |jj: i64| -> Option<Vec<f64>> {
                if !w.grid.contains(i as i64, jj) {
                    return None;
                }
                let d = pw.node(i, jj as usize);
                Some(
                    (0..np)
                        .map(|g| {
                            let ang: f64 = (0..3).map(|p| d.ow[p][g].powi(2)).sum();
                            d.w[g].powi(2) + d.wt[g].powi(2) + d.wr[g].powi(2) + ang / (r * r)
                        })
                        .collect(),
                )
            };
            let flux = |ii: i64| -> Option<Vec<f64>> {
                if !w.grid.contains(ii, j as i64) {
                    return None;
                }
                let d = pw.node(ii as usize, j);
                Some((0..np).map(|g| d.wt[g] * d.wr[g]).collect())
            };
            let e_nb: Vec<Option<Vec<f64>>> = (-2..=2).map(|d| energy(j as i64 + d)).collect();
            let p_nb: Vec<Option<Vec<f64>>> = (-2..=2).map(|d| flux(i as i64 + d)).collect();
            let mut worst: f64 = 0.0;
            for g in 0..np {
                let lhs = 2.0 * c.wt[g] * (c.wtt[g] - c.wrr[g] - c.lap[g] / (r * r) + c.w[g]);
                let de = lattice_derivative(|d| e_nb[(d + 2) as usize].as_ref().map(|v| v[g]), h);
                let dp = lattice_derivative(|d| p_nb[(d + 2) as usize].as_ref().map(|v| v[g]), h);
                let div: f64 = (0..3)
                    .map(|p| c.ot[p][g] * c.ow[p][g] + c.wt[g] * c.oow[p][g])
                    .sum();
                let rhs = de - 2.0 * dp - 2.0 / (r * r) * div;
                worst = worst.max((lhs - rhs).abs());
            }
            worst
        })
        .reduce(|| 0.0, f64::max);
    Ok(worst)
}

/// Both sides of the integrated sideways identity at radius index `ip`.
fn sideways_sides(w: &LatticeField, f: &LatticeField, geo: &Geometry, ip: usize) -> (f64, f64) {
    let h = w.grid.h;
    let lam = eigen(&w.basis);
    let d = Derivs { w };
    let jrt = geo.jrt();
    let j_rho = sideways_at(w, geo, ip);
    let j_r = sideways_at(w, geo, geo.ir);
    let lower = cone_integral(w, &lam, geo.ir, ip, |i| i);
    let upper = cone_integral(w, &lam, geo.ir, ip, |i| jrt - i);
    let mut bulk_l = Vec::with_capacity(ip - geo.ir + 1);
    let mut bulk_r = Vec::with_capacity(ip - geo.ir + 1);
    for i in geo.ir..=ip {
        let r = i as f64 * h;
        let mut col_l = Vec::with_capacity(jrt - 2 * i + 1);
        let mut col_r = Vec::with_capacity(jrt - 2 * i + 1);
        for j in i..=(jrt - i) {
            let mut sl = 0.0;
            let mut sr = 0.0;
            for m in 0..w.nmodes() {
                let v = w.get(m, i, j);
                let vr = d.r(m, i, j);
                sl += 2.0 * lam[m] * v * v / (r * r * r);
                sr += 2.0 * v * vr + 4.0 * lam[m] * vr * v / (r * r) - 2.0 * f.get(m, i, j) * vr;
            }
            col_l.push(sl);
            col_r.push(sr);
        }
        bulk_l.push(trapezoid(&col_l, h));
        bulk_r.push(trapezoid(&col_r, h));
    }
    let lhs = j_rho + upper + lower + trapezoid(&bulk_l, h);
    let rhs = j_r + trapezoid(&bulk_r, h);
    (lhs, rhs)
}

/// `|LHS − RHS|` of the integrated sideways energy identity at `ρ`, for
/// `F = w_tt − w_rr − r^{-2}Ωw`.
pub fn sideways_identity_gap(w: &LatticeField, f: &LatticeField, geo: &Geometry, rho: f64) -> Result<f64> {
    w.check_compatible(f)?;
    let ip = geo.align_radius("rho", rho)?;
    let (l, r) = sideways_sides(w, f, geo, ip);
    Ok((l - r).abs())
}

/// Signed slack `RHS − E(s)` of the energy inequality
/// `E(s) ≤ ∫_A r^{-2}(w̄² + |∇w̄|²) + 2∫_{K^s} r^{-2} w_t(F + w) + ∫_C r^{-2}(w_t² + w_r²)`.
pub fn energy_inequality_gap(w: &LatticeField, f: &LatticeField, geo: &Geometry, s: f64) -> Result<f64> {
    w.check_compatible(f)?;
    let js = geo.align_time(s)?;
    Ok(inequality_slack(w, f, geo, js))
}

fn inequality_slack(w: &LatticeField, f: &LatticeField, geo: &Geometry, js: usize) -> f64 {
    let h = w.grid.h;
    let lam = eigen(&w.basis);
    let d = Derivs { w };
    let jrt = geo.jrt();
    let cone = cone_integral(w, &lam, geo.ir, geo.imid, |i| i);
    let mut cols = Vec::new();
    let outer = js.min(geo.imid);
    for i in geo.ir..=outer {
        let top = js.min(jrt - i);
        let col: Vec<f64> = (i..=top)
            .map(|j| {
                (0..w.nmodes())
                    .map(|m| 2.0 * d.t(m, i, j) * (f.get(m, i, j) + w.get(m, i, j)))
                    .sum()
            })
            .collect();
        cols.push(trapezoid(&col, h));
    }
    let bulk = trapezoid(&cols, h);
    let cyl: Vec<f64> = (geo.ir..=geo.jt)
        .map(|j| {
            (0..w.nmodes())
                .map(|m| d.t(m, geo.ir, j).powi(2) + d.r(m, geo.ir, j).powi(2))
                .sum()
        })
        .collect();
    let rhs = cone + bulk + trapezoid(&cyl, h);
    rhs - time_energy_at(w, geo, js)
}

/// Energies and identity diagnostics over the `ρ` and `s` node sweeps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyReport {
    pub h: f64,
    pub rho: Vec<f64>,
    pub sideways: Vec<f64>,
    pub sideways_gap: Vec<f64>,
    pub s: Vec<f64>,
    pub time: Vec<f64>,
    pub inequality_slack: Vec<f64>,
    pub residual_wr: f64,
    pub residual_wt: f64,
    /// `J(R)`.
    pub j_at_r: f64,
}

pub fn energy_report(w: &LatticeField, f: &LatticeField, geo: &Geometry) -> Result<EnergyReport> {
    w.check_compatible(f)?;
    let h = w.grid.h;
    let rho_idx: Vec<usize> = (geo.ir..=geo.imid).collect();
    let s_idx: Vec<usize> = (geo.ir..=geo.jt).collect();
    let sideways: Vec<f64> = rho_idx.par_iter().map(|&i| sideways_at(w, geo, i)).collect();
    let sideways_gap: Vec<f64> = rho_idx
        .par_iter()
        .map(|&i| {
            let (l, r) = sideways_sides(w, f, geo, i);
            (l - r).abs()
        })
        .collect();
    let time: Vec<f64> = s_idx.par_iter().map(|&j| time_energy_at(w, geo, j)).collect();
    let inequality_slack: Vec<f64> = s_idx.par_iter().map(|&j| inequality_slack(w, f, geo, j)).collect();
    Ok(EnergyReport {
        h,
        rho: rho_idx.iter().map(|&i| i as f64 * h).collect(),
        j_at_r: sideways[0],
        sideways,
        sideways_gap,
        s: s_idx.iter().map(|&j| j as f64 * h).collect(),
        time,
        inequality_slack,
        residual_wr: identity_residual_wr(w, geo)?,
        residual_wt: identity_residual_wt(w, geo)?,
    })
}

impl EnergyReport {
    /// `rho,J,gap` rows.
    pub fn sideways_csv(&self) -> String {
        let mut out = String::from("rho,J,gap\n");
        for ((r, j), g) in self.rho.iter().zip(&self.sideways).zip(&self.sideways_gap) {
            out.push_str(&format!("{r},{j:e},{g:e}\n"));
        }
        out
    }

    /// `s,E,slack` rows.
    pub fn time_csv(&self) -> String {
        let mut out = String::from("s,E,slack\n");
        for ((s, e), g) in self.s.iter().zip(&self.time).zip(&self.inequality_slack) {
            out.push_str(&format!("{s},{e:e},{g:e}\n"));
        }
        out
    }

    pub fn summary_json(&self) -> serde_json::Value {
        let fold = |v: &[f64], f: fn(f64, f64) -> f64, init: f64| v.iter().copied().fold(init, f);
        serde_json::json!({
            "h": self.h,
            "j_at_r": self.j_at_r,
            "max_sideways_gap": fold(&self.sideways_gap, f64::max, 0.0),
            "min_inequality_slack": fold(&self.inequality_slack, f64::min, f64::INFINITY),
            "residual_wr": self.residual_wr,
            "residual_wt": self.residual_wt,
        })
    }
}

/// Pointwise identity residuals of a fixed smooth field over a refinement sequence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityAudit {
    pub h: Vec<f64>,
    pub wr: Vec<f64>,
    pub wt: Vec<f64>,
}

impl IdentityAudit {
    /// Observed orders between consecutive spacings, `(wr, wt)`.
    pub fn orders(&self) -> Vec<(f64, f64)> {
        (1..self.h.len())
            .map(|k| {
                (
                    (self.wr[k - 1] / self.wr[k]).log2(),
                    (self.wt[k - 1] / self.wt[k]).log2(),
                )
            })
            .collect()
    }

    pub fn passed(&self, min_order: f64) -> bool {
        self.orders().iter().all(|&(a, b)| a >= min_order && b >= min_order)
    }
}

/// Smooth band-limited test field used by the identity audit.
pub fn audit_field(lmax: usize, grid: CharGrid) -> LatticeField {
    LatticeField::from_fn(lmax, grid, |m, r, t| {
        let k = m as f64;
        ((k + 1.0) * 0.7 * r + 0.3 * t + 0.2 * k).sin() * (1.0 + 0.5 * t * r)
    })
}

/// Residuals of both multiplier identities for [`audit_field`] on
/// `R = 1/4, T = 5/4` at each spacing in `hs`.
pub fn audit_identities(lmax: usize, hs: &[f64]) -> Result<IdentityAudit> {
    let mut out = IdentityAudit {
        h: Vec::new(),
        wr: Vec::new(),
        wt: Vec::new(),
    };
    for &h in hs {
        let grid = CharGrid::new(h, 1.0)?;
        let geo = Geometry::new(0.25, 1.25, &grid)?;
        let w = audit_field(lmax, grid);
        out.h.push(h);
        out.wr.push(identity_residual_wr(&w, &geo)?);
        out.wt.push(identity_residual_wt(&w, &geo)?);
    }
    Ok(out)
}

/// Forcing of `w = Ω_ij v` for `v = r u` with `u` the linearized field about a
/// radial background: `F = q_b w + (Ω_ij q) v_b`.
pub fn mdef_forcing(
    w: &LatticeField,
    q_b: &RadialProfile,
    q: &HarmonicPotential,
    background: &ModeCone,
    pair: (usize, usize),
) -> Result<LatticeField> {
    let sph = SphereTransform::for_degree(q.lmax());
    if q.lmax() != w.basis.lmax {
        return Err(Error::SizeMismatch {
            what: "potential vs field modes",
            expected: w.nmodes(),
            got: q.basis.len(),
        });
    }
    let mat = sph.omega_matrix(pair.0, pair.1)?;
    let profiles: Vec<RadialProfile> = (0..q.basis.len()).map(|n| q.mode_profile(n)).collect();
    let n = w.grid.n;
    let h = w.grid.h;
    let mut out = w.clone();
    for i in 0..=n {
        let r = i as f64 * h;
        let a: Vec<f64> = q
            .basis
            .modes
            .iter()
            .map(|m| profiles[m.index].eval(r) * r.powi(m.degree as i32))
            .collect();
        let oa = matvec(&mat, &a);
        let qb = q_b.eval(r);
        for j in i..=(2 * n - i) {
            let vb = r * background.at(i, j).expect("lattice node");
            for m in 0..w.nmodes() {
                let k = lattice_index(n, i, j);
                out.values[m][k] = qb * w.values[m][k] + oa[m] * vb;
            }
        }
    }
    Ok(out)
}
