//! Real spherical harmonics on Gauss–Legendre × uniform-longitude grids.
//!
//! Modes are ordered by degree ascending and, within a degree, by order
//! `m = -l..=l` ascending. Negative orders carry `sin(|m| φ)`, positive
//! orders `cos(m φ)`. All basis functions are orthonormal on the unit sphere.
//!
//! Angular vector fields `Ω_ij = x_i ∂_j − x_j ∂_i` are represented as dense
//! (block-diagonal by degree) matrices acting on coefficient vectors. They
//! are built by projecting pointwise derivatives of the basis onto the
//! basis, which is exact because each `Ω_ij` preserves the degree.

use std::f64::consts::PI;

use crate::assembly::HarmonicPotential;
use crate::error::{Error, Result};
use crate::radial::cumulative_simpson;

/// One real spherical harmonic `φ_n` with degree `k(n) = l` and order `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mode {
    pub index: usize,
    pub degree: usize,
    pub order: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicBasis {
    pub lmax: usize,
    pub modes: Vec<Mode>,
}

pub fn mode_count(lmax: usize) -> usize {
    (lmax + 1) * (lmax + 1)
}

/// Index of mode `(l, m)` in the canonical ordering.
pub fn mode_index(l: usize, m: i64) -> usize {
    l * l + (m + l as i64) as usize
}

pub fn build_basis(lmax: usize) -> HarmonicBasis {
    let mut modes = Vec::with_capacity(mode_count(lmax));
    for l in 0..=lmax {
        for m in -(l as i64)..=(l as i64) {
            modes.push(Mode {
                index: modes.len(),
                degree: l,
                order: m,
            });
        }
    }
    HarmonicBasis { lmax, modes }
}

impl HarmonicBasis {
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn degrees(&self) -> impl Iterator<Item = usize> + '_ {
        self.modes.iter().map(|m| m.degree)
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "gauss_legendre needs at least one node");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess for the i-th largest root.
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        dp = if d != 0.0 { d } else { dp };
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let d = nf * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Legendre polynomial `P_l(x)`.
pub fn legendre(l: usize, x: f64) -> f64 {
    legendre_with_derivative(l, x).0
}

/// Product quadrature: Gauss–Legendre in `cos θ`, uniform trapezoid in `φ`.
/// Node `(it, ip)` is stored at `it * n_phi + ip`.
#[derive(Debug, Clone)]
pub struct SphereGrid {
    pub n_theta: usize,
    pub n_phi: usize,
    pub cos_theta: Vec<f64>,
    pub theta_weights: Vec<f64>,
    pub phi: Vec<f64>,
}

impl SphereGrid {
    pub fn new(n_theta: usize, n_phi: usize) -> Result<Self> {
        if n_theta == 0 || n_phi == 0 {
            return Err(Error::InvalidParameter("sphere grid needs nodes".into()));
        }
        let (cos_theta, theta_weights) = gauss_legendre(n_theta);
        let phi = (0..n_phi)
            .map(|k| 2.0 * PI * k as f64 / n_phi as f64)
            .collect();
        Ok(SphereGrid {
            n_theta,
            n_phi,
            cos_theta,
            theta_weights,
            phi,
        })
    }

    /// Smallest grid integrating products of two degree-`lmax` functions exactly.
    pub fn for_degree(lmax: usize) -> Self {
        Self::new(lmax + 1, 2 * lmax + 1).expect("nonzero sizes")
    }

    pub fn len(&self) -> usize {
        self.n_theta * self.n_phi
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn weight(&self, node: usize) -> f64 {
        self.theta_weights[node / self.n_phi] * 2.0 * PI / self.n_phi as f64
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.weight(k)).collect()
    }

    /// Unit vector of node `node`.
    pub fn direction(&self, node: usize) -> [f64; 3] {
        let ct = self.cos_theta[node / self.n_phi];
        let st = (1.0 - ct * ct).max(0.0).sqrt();
        let ph = self.phi[node % self.n_phi];
        [st * ph.cos(), st * ph.sin(), ct]
    }

    /// Largest degree for which band-limited products are integrated exactly.
    pub fn exact_degree(&self) -> usize {
        (self.n_theta.saturating_sub(1)).min((self.n_phi.saturating_sub(1)) / 2)
    }

    /// Integral over the unit sphere of sampled values.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        values
            .iter()
            .enumerate()
            .map(|(k, v)| v * self.weight(k))
            .sum()
    }
}

/// Values on `SphereGrid` nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularField {
    pub values: Vec<f64>,
}

impl AngularField {
    pub fn zeros(grid: &SphereGrid) -> Self {
        AngularField {
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_fn(grid: &SphereGrid, f: impl Fn([f64; 3]) -> f64) -> Self {
        AngularField {
            values: (0..grid.len()).map(|k| f(grid.direction(k))).collect(),
        }
    }
}

/// One coefficient per basis mode.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicCoeffs {
    pub values: Vec<f64>,
}

impl HarmonicCoeffs {
    pub fn zeros(basis: &HarmonicBasis) -> Self {
        HarmonicCoeffs {
            values: vec![0.0; basis.len()],
        }
    }

    pub fn unit(basis: &HarmonicBasis, n: usize) -> Self {
        let mut c = Self::zeros(basis);
        c.values[n] = 1.0;
        c
    }
}

/// Real spherical harmonics and their `θ`, `φ` derivatives at one direction.
#[derive(Debug, Clone)]
pub struct HarmonicSample {
    pub value: Vec<f64>,
    pub d_theta: Vec<f64>,
    pub d_phi: Vec<f64>,
}

/// Evaluate every basis function at `(cos θ, φ)`.
pub fn eval_harmonics(lmax: usize, cos_theta: f64, phi: f64) -> HarmonicSample {
    let n = mode_count(lmax);
    let x = cos_theta;
    let s = (1.0 - x * x).max(0.0).sqrt();
    // plm[l][m]: fully normalized associated Legendre functions (no Condon–Shortley phase).
    let mut plm = vec![vec![0.0; lmax + 1]; lmax + 1];
    plm[0][0] = 1.0 / (4.0 * PI).sqrt();
    for m in 1..=lmax {
        let mf = m as f64;
        plm[m][m] = ((2.0 * mf + 1.0) / (2.0 * mf)).sqrt() * s * plm[m - 1][m - 1];
    }
    for m in 0..lmax {
        plm[m + 1][m] = (2.0 * m as f64 + 3.0).sqrt() * x * plm[m][m];
    }
    for m in 0..=lmax {
        for l in (m + 2)..=lmax {
            let (lf, mf) = (l as f64, m as f64);
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0).powi(2) - mf * mf) / (4.0 * (lf - 1.0).powi(2) - 1.0)).sqrt();
            plm[l][m] = a * (x * plm[l - 1][m] - b * plm[l - 2][m]);
        }
    }
    let mut value = vec![0.0; n];
    let mut d_theta = vec![0.0; n];
    let mut d_phi = vec![0.0; n];
    for l in 0..=lmax {
        let lf = l as f64;
        for m in 0..=l {
            let mf = m as f64;
            let p = plm[l][m];
            let prev = if l > m { plm[l - 1][m] } else { 0.0 };
            let c = if l > 0 {
                ((2.0 * lf + 1.0) / (2.0 * lf - 1.0) * (lf - mf) * (lf + mf)).sqrt()
            } else {
                0.0
            };
            let dp = if s > 0.0 { (lf * x * p - c * prev) / s } else { 0.0 };
            if m == 0 {
                let k = mode_index(l, 0);
                value[k] = p;
                d_theta[k] = dp;
            } else {
                let r2 = 2f64.sqrt();
                let (sn, cs) = (mf * phi).sin_cos();
                let kc = mode_index(l, m as i64);
                let ks = mode_index(l, -(m as i64));
                value[kc] = r2 * p * cs;
                value[ks] = r2 * p * sn;
                d_theta[kc] = r2 * dp * cs;
                d_theta[ks] = r2 * dp * sn;
                d_phi[kc] = -r2 * p * mf * sn;
                d_phi[ks] = r2 * p * mf * cs;
            }
        }
    }
    HarmonicSample {
        value,
        d_theta,
        d_phi,
    }
}

/// Evaluate the basis at a unit vector.
pub fn eval_at_direction(lmax: usize, dir: [f64; 3]) -> Vec<f64> {
    let ct = dir[2].clamp(-1.0, 1.0);
    let phi = dir[1].atan2(dir[0]);
    eval_harmonics(lmax, ct, phi).value
}

/// Pointwise `Ω_ij` applied to a function with given `θ`, `φ` derivatives.
fn omega_pointwise(pair: (usize, usize), ct: f64, phi: f64, d_theta: f64, d_phi: f64) -> f64 {
    let st = (1.0 - ct * ct).max(0.0).sqrt();
    let cot = ct / st;
    let (sp, cp) = phi.sin_cos();
    match pair {
        (1, 2) => d_phi,
        (1, 3) => -cp * d_theta + cot * sp * d_phi,
        (2, 3) => -sp * d_theta - cot * cp * d_phi,
        _ => unreachable!("validated pair"),
    }
}

fn validate_pair(i: usize, j: usize) -> Result<()> {
    if (1..=3).contains(&i) && (1..=3).contains(&j) && i < j {
        Ok(())
    } else {
        Err(Error::InvalidAxisPair(i, j))
    }
}

/// The three angular pairs `(1,2), (1,3), (2,3)`.
pub const PAIRS: [(usize, usize); 3] = [(1, 2), (1, 3), (2, 3)];

/// Basis tables on a grid plus the `Ω_ij` coefficient matrices.
#[derive(Debug, Clone)]
pub struct SphereTransform {
    pub basis: HarmonicBasis,
    pub grid: SphereGrid,
    /// `table[node * nmodes + n] = φ_n(node)`.
    table: Vec<f64>,
    d_theta: Vec<f64>,
    d_phi: Vec<f64>,
    weights: Vec<f64>,
    /// Row-major `nmodes × nmodes` matrices for the pairs in [`PAIRS`].
    omega: [Vec<f64>; 3],
}

impl SphereTransform {
    pub fn new(basis: HarmonicBasis, grid: SphereGrid) -> Result<Self> {
        if grid.exact_degree() < basis.lmax {
            return Err(Error::InvalidParameter(format!(
                "grid {}x{} cannot resolve lmax {} (need n_theta >= lmax+1, n_phi >= 2 lmax+1)",
                grid.n_theta, grid.n_phi, basis.lmax
            )));
        }
        let nm = basis.len();
        let np = grid.len();
        let mut table = vec![0.0; np * nm];
        let mut d_theta = vec![0.0; np * nm];
        let mut d_phi = vec![0.0; np * nm];
        for node in 0..np {
            let ct = grid.cos_theta[node / grid.n_phi];
            let ph = grid.phi[node % grid.n_phi];
            let s = eval_harmonics(basis.lmax, ct, ph);
            table[node * nm..(node + 1) * nm].copy_from_slice(&s.value);
            d_theta[node * nm..(node + 1) * nm].copy_from_slice(&s.d_theta);
            d_phi[node * nm..(node + 1) * nm].copy_from_slice(&s.d_phi);
        }
        let weights = grid.weights();
        let mut t = SphereTransform {
            basis,
            grid,
            table,
            d_theta,
            d_phi,
            weights,
            omega: [Vec::new(), Vec::new(), Vec::new()],
        };
        for (slot, &pair) in PAIRS.iter().enumerate() {
            t.omega[slot] = t.project_omega(pair);
        }
        Ok(t)
    }

    /// Transform on the smallest exact grid for `lmax`.
    pub fn for_degree(lmax: usize) -> Self {
        Self::new(build_basis(lmax), SphereGrid::for_degree(lmax)).expect("grid sized for lmax")
    }

    pub fn nmodes(&self) -> usize {
        self.basis.len()
    }

    pub fn basis_value(&self, node: usize, n: usize) -> f64 {
        self.table[node * self.nmodes() + n]
    }

    fn project_omega(&self, pair: (usize, usize)) -> Vec<f64> {
        let nm = self.nmodes();
        let np = self.grid.len();
        let mut mat = vec![0.0; nm * nm];
        for node in 0..np {
            let ct = self.grid.cos_theta[node / self.grid.n_phi];
            let ph = self.grid.phi[node % self.grid.n_phi];
            let w = self.weights[node];
            for col in 0..nm {
                let dt = self.d_theta[node * nm + col];
                let dp = self.d_phi[node * nm + col];
                if dt == 0.0 && dp == 0.0 {
                    continue;
                }
                let om = omega_pointwise(pair, ct, ph, dt, dp) * w;
                let deg = self.basis.modes[col].degree;
                // Ω_ij preserves degree: only project onto the same block.
                let lo = deg * deg;
                let hi = (deg + 1) * (deg + 1);
                for row in lo..hi {
                    mat[row * nm + col] += self.table[node * nm + row] * om;
                }
            }
        }
        mat
    }

    fn check_field(&self, f: &AngularField) -> Result<()> {
        if f.values.len() != self.grid.len() {
            return Err(Error::SizeMismatch {
                what: "angular field vs grid",
                expected: self.grid.len(),
                got: f.values.len(),
            });
        }
        Ok(())
    }

    fn check_coeffs(&self, c: &HarmonicCoeffs) -> Result<()> {
        if c.values.len() != self.nmodes() {
            return Err(Error::SizeMismatch {
                what: "coefficients vs basis",
                expected: self.nmodes(),
                got: c.values.len(),
            });
        }
        Ok(())
    }

    pub fn analyze(&self, f: &AngularField) -> Result<HarmonicCoeffs> {
        self.check_field(f)?;
        Ok(HarmonicCoeffs {
            values: self.analyze_slice(&f.values),
        })
    }

    pub(crate) fn analyze_slice(&self, f: &[f64]) -> Vec<f64> {
        let nm = self.nmodes();
        let mut out = vec![0.0; nm];
        for (node, &v) in f.iter().enumerate() {
            let wv = v * self.weights[node];
            if wv == 0.0 {
                continue;
            }
            let row = &self.table[node * nm..(node + 1) * nm];
            for (o, y) in out.iter_mut().zip(row) {
                *o += wv * y;
            }
        }
        out
    }

    pub fn synthesize(&self, c: &HarmonicCoeffs) -> Result<AngularField> {
        self.check_coeffs(c)?;
        Ok(AngularField {
            values: self.synthesize_slice(&c.values),
        })
    }

    pub(crate) fn synthesize_slice(&self, c: &[f64]) -> Vec<f64> {
        let nm = self.nmodes();
        (0..self.grid.len())
            .map(|node| {
                self.table[node * nm..(node + 1) * nm]
                    .iter()
                    .zip(c)
                    .map(|(y, c)| y * c)
                    .sum()
            })
            .collect()
    }

    /// Coefficient matrix of `Ω_ij`; for `i > j` the negated matrix of `Ω_ji`.
    pub fn omega_matrix(&self, i: usize, j: usize) -> Result<Vec<f64>> {
        let (a, b, sign) = if i < j { (i, j, 1.0) } else { (j, i, -1.0) };
        validate_pair(a, b)?;
        let slot = PAIRS.iter().position(|&p| p == (a, b)).expect("validated");
        Ok(self.omega[slot].iter().map(|v| sign * v).collect())
    }

    /// `Ω_ij c` in coefficient space.
    pub fn omega_coeffs(&self, i: usize, j: usize, c: &HarmonicCoeffs) -> Result<HarmonicCoeffs> {
        self.check_coeffs(c)?;
        let m = self.omega_matrix(i, j)?;
        Ok(HarmonicCoeffs {
            values: matvec(&m, &c.values),
        })
    }

    /// `Ω_ij f` for a band-limited field, computed spectrally.
    pub fn apply_omega(&self, i: usize, j: usize, f: &AngularField) -> Result<AngularField> {
        validate_pair(i, j)?;
        let c = self.analyze(f)?;
        let oc = self.omega_coeffs(i, j, &c)?;
        self.synthesize(&oc)
    }

    /// Squared surface gradient `(∂_θ f)² + (∂_φ f)²/sin²θ` on the unit sphere, pointwise.
    pub fn surface_gradient_sq(&self, c: &HarmonicCoeffs) -> Result<AngularField> {
        self.check_coeffs(c)?;
        let nm = self.nmodes();
        let values = (0..self.grid.len())
            .map(|node| {
                let ct = self.grid.cos_theta[node / self.grid.n_phi];
                let st2 = 1.0 - ct * ct;
                let (mut dt, mut dp) = (0.0, 0.0);
                for n in 0..nm {
                    dt += self.d_theta[node * nm + n] * c.values[n];
                    dp += self.d_phi[node * nm + n] * c.values[n];
                }
                dt * dt + dp * dp / st2
            })
            .collect();
        Ok(AngularField { values })
    }
}

pub(crate) fn matvec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n)
        .map(|r| m[r * n..(r + 1) * n].iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

/// Laplace–Beltrami operator on the unit sphere: degree-`l` coefficients scale by `−l(l+1)`.
pub fn laplace_beltrami(basis: &HarmonicBasis, c: &HarmonicCoeffs) -> HarmonicCoeffs {
    HarmonicCoeffs {
        values: basis
            .modes
            .iter()
            .zip(&c.values)
            .map(|(m, v)| -((m.degree * (m.degree + 1)) as f64) * v)
            .collect(),
    }
}

/// Sobolev order for [`sobolev_norm`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SobolevOrder {
    L2 = 0,
    H1 = 1,
    H2 = 2,
}

/// Spectral `H^s(S_r)` norm: `‖f‖² = r² Σ (1 + l(l+1)/r²)^s c²` where `c` are the
/// unit-sphere coefficients of `θ ↦ f(rθ)`.
pub fn sobolev_norm(
    basis: &HarmonicBasis,
    c: &HarmonicCoeffs,
    order: SobolevOrder,
    radius: f64,
) -> Result<f64> {
    if radius <= 0.0 || !radius.is_finite() {
        return Err(Error::InvalidParameter(format!("radius {radius} must be > 0")));
    }
    Ok(sobolev_norm_slice(basis, &c.values, order as i32, radius))
}

fn sobolev_norm_slice(basis: &HarmonicBasis, c: &[f64], order: i32, radius: f64) -> f64 {
    let r2 = radius * radius;
    let s: f64 = basis
        .modes
        .iter()
        .zip(c)
        .map(|(m, v)| {
            let lam = (m.degree * (m.degree + 1)) as f64 / r2;
            (1.0 + lam).powi(order) * v * v
        })
        .sum();
    (r2 * s).sqrt()
}

/// Per-radius class ratio for the angular-control condition on the radial primitive `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct QGammaReport {
    pub radii: Vec<f64>,
    /// `None` where the denominator falls below the floor.
    pub ratios: Vec<Option<f64>>,
    pub gamma: f64,
}

impl QGammaReport {
    pub fn undefined_radii(&self) -> Vec<f64> {
        self.radii
            .iter()
            .zip(&self.ratios)
            .filter(|(_, g)| g.is_none())
            .map(|(r, _)| *r)
            .collect()
    }
}

/// Relative denominator floor for `γ(r)`.
pub const QGAMMA_FLOOR: f64 = 1e-12;

/// Evaluate `γ(r) = (‖p‖_{H²} + ‖∂_r p‖_{H¹}) / (‖p‖_{H¹} + ‖∂_r p‖_{L²})` on `nr`
/// radii spanning `[R, (R+T)/2]`, with `p(rθ) = ∫_0^r q(σθ) dσ`.
///
/// The radii are taken from the potential's own sample nodes when they are
/// aligned; otherwise the coefficients are interpolated.
pub fn qgamma(q: &HarmonicPotential, r_in: f64, t_end: f64, nr: usize) -> Result<QGammaReport> {
    if nr < 2 {
        return Err(Error::InvalidParameter("qgamma needs nr >= 2".into()));
    }
    if !(0.0 < r_in && r_in < t_end) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < R < T, got R={r_in}, T={t_end}"
        )));
    }
    let outer = 0.5 * (r_in + t_end);
    if outer > q.r_max() + 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "potential defined to {} but annulus reaches {outer}",
            q.r_max()
        )));
    }
    let basis = &q.basis;
    let h = q.h;
    // Angular coefficients a_n(r) = q_n(r) r^k and their primitives P_n(r).
    let angular: Vec<Vec<f64>> = (0..basis.len())
        .map(|n| {
            let k = basis.modes[n].degree as i32;
            q.coeffs[n]
                .iter()
                .enumerate()
                .map(|(i, v)| v * (i as f64 * h).powi(k))
                .collect()
        })
        .collect();
    let primitive: Vec<Vec<f64>> = angular.iter().map(|a| cumulative_simpson(a, h)).collect();

    let radii: Vec<f64> = (0..nr)
        .map(|i| r_in + (outer - r_in) * i as f64 / (nr - 1) as f64)
        .collect();
    let mut ratios = Vec::with_capacity(nr);
    for &r in &radii {
        let a: Vec<f64> = angular.iter().map(|s| sample_cubic(s, h, r)).collect();
        let p: Vec<f64> = primitive.iter().map(|s| sample_cubic(s, h, r)).collect();
        let num = sobolev_norm_slice(basis, &p, 2, r) + sobolev_norm_slice(basis, &a, 1, r);
        let den = sobolev_norm_slice(basis, &p, 1, r) + sobolev_norm_slice(basis, &a, 0, r);
        let scale = num.max(f64::MIN_POSITIVE);
        if den <= QGAMMA_FLOOR * scale || den == 0.0 {
            ratios.push(None);
        } else {
            ratios.push(Some(num / den));
        }
    }
    let gamma = ratios
        .iter()
        .flatten()
        .fold(f64::NEG_INFINITY, |acc, &g| acc.max(g));
    if !gamma.is_finite() {
        return Err(Error::DegenerateDenominator);
    }
    Ok(QGammaReport {
        radii,
        ratios,
        gamma,
    })
}

fn sample_cubic(samples: &[f64], h: f64, r: f64) -> f64 {
    crate::radial::interp_cubic(samples, h, r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_coeffs(basis: &HarmonicBasis, seed: u64) -> HarmonicCoeffs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        HarmonicCoeffs {
            values: (0..basis.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(6);
        let total: f64 = w.iter().sum();
        assert!((total - 2.0).abs() < 1e-14);
        // x^10 is degree 10 <= 2n-1 = 11.
        let i: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(10)).sum();
        assert!((i - 2.0 / 11.0).abs() < 1e-14);
    }

    #[test]
    fn basis_counts_and_degrees() {
        assert_eq!(build_basis(0).len(), 1);
        let b = build_basis(2);
        let d: Vec<usize> = b.degrees().collect();
        assert_eq!(d, vec![0, 1, 1, 1, 2, 2, 2, 2, 2]);
        assert_eq!(mode_index(2, -2), 4);
    }

    #[test]
    fn constant_mode_value() {
        let v = eval_harmonics(0, 0.3, 1.0).value[0];
        assert!((v - 1.0 / (4.0 * PI).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn weights_sum_to_sphere_area() {
        let g = SphereGrid::new(9, 17).unwrap();
        let s: f64 = g.weights().iter().sum();
        assert!((s / (4.0 * PI) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gram_matrix_identity_lmax8() {
        let t = SphereTransform::for_degree(8);
        let nm = t.nmodes();
        let mut worst: f64 = 0.0;
        for a in 0..nm {
            let fa: Vec<f64> = (0..t.grid.len()).map(|k| t.basis_value(k, a)).collect();
            let c = t.analyze_slice(&fa);
            for (b, v) in c.iter().enumerate() {
                let e = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((v - e).abs());
            }
        }
        assert!(worst < 1e-10, "gram error {worst}");
    }

    #[test]
    fn analyze_single_mode_and_zero() {
        let t = SphereTransform::for_degree(4);
        let f = t.synthesize(&HarmonicCoeffs::unit(&t.basis, 3)).unwrap();
        let c = t.analyze(&f).unwrap();
        for (n, v) in c.values.iter().enumerate() {
            let e = if n == 3 { 1.0 } else { 0.0 };
            assert!((v - e).abs() < 1e-10);
        }
        let z = t.analyze(&AngularField::zeros(&t.grid)).unwrap();
        assert!(z.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn synthesize_constant_mode() {
        let t = SphereTransform::for_degree(3);
        let f = t.synthesize(&HarmonicCoeffs::unit(&t.basis, 0)).unwrap();
        for v in f.values {
            assert!((v - 1.0 / (4.0 * PI).sqrt()).abs() < 1e-14);
        }
    }

    #[test]
    fn size_mismatch_is_reported() {
        let t = SphereTransform::for_degree(2);
        let bad = AngularField { values: vec![0.0; 3] };
        assert!(matches!(t.analyze(&bad), Err(Error::SizeMismatch { .. })));
        let badc = HarmonicCoeffs { values: vec![0.0; 2] };
        assert!(matches!(t.synthesize(&badc), Err(Error::SizeMismatch { .. })));
    }

    #[test]
    fn round_trip_lmax12() {
        let t = SphereTransform::for_degree(12);
        let c = random_coeffs(&t.basis, 7);
        let back = t.analyze(&t.synthesize(&c).unwrap()).unwrap();
        for (a, b) in c.values.iter().zip(&back.values) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn omega_kills_constants_and_rejects_bad_pairs() {
        let t = SphereTransform::for_degree(3);
        let f = AngularField {
            values: vec![2.5; t.grid.len()],
        };
        let g = t.apply_omega(1, 3, &f).unwrap();
        assert!(g.values.iter().all(|v| v.abs() < 1e-12));
        assert!(matches!(t.apply_omega(2, 1, &f), Err(Error::InvalidAxisPair(2, 1))));
        assert!(matches!(t.apply_omega(0, 1, &f), Err(Error::InvalidAxisPair(0, 1))));
    }

    #[test]
    fn omega_12_is_azimuthal_derivative() {
        // f = x on the unit sphere, Ω_12 f = x ∂_y x − y ∂_x x = −y.
        let t = SphereTransform::for_degree(2);
        let f = AngularField::from_fn(&t.grid, |d| d[0]);
        let g = t.apply_omega(1, 2, &f).unwrap();
        for (k, v) in g.values.iter().enumerate() {
            assert!((v + t.grid.direction(k)[1]).abs() < 1e-12);
        }
        // Ω_13 x = −z, Ω_23 y = −z.
        let g = t.apply_omega(1, 3, &f).unwrap();
        for (k, v) in g.values.iter().enumerate() {
            assert!((v + t.grid.direction(k)[2]).abs() < 1e-12);
        }
        let fy = AngularField::from_fn(&t.grid, |d| d[1]);
        let g = t.apply_omega(2, 3, &fy).unwrap();
        for (k, v) in g.values.iter().enumerate() {
            assert!((v + t.grid.direction(k)[2]).abs() < 1e-12);
        }
    }

    #[test]
    fn laplace_beltrami_eigenvalues() {
        let b = build_basis(2);
        let c = HarmonicCoeffs::unit(&b, mode_index(2, 1));
        let l = laplace_beltrami(&b, &c);
        assert_eq!(l.values[mode_index(2, 1)], -6.0);
        let c0 = HarmonicCoeffs::unit(&b, 0);
        assert_eq!(laplace_beltrami(&b, &c0).values[0], 0.0);
    }

    #[test]
    fn omega_squares_sum_to_laplacian() {
        let t = SphereTransform::for_degree(6);
        let c = random_coeffs(&t.basis, 3);
        let mut acc = vec![0.0; t.nmodes()];
        for &(i, j) in &PAIRS {
            let once = t.omega_coeffs(i, j, &c).unwrap();
            let twice = t.omega_coeffs(i, j, &once).unwrap();
            for (a, v) in acc.iter_mut().zip(twice.values) {
                *a += v;
            }
        }
        let lb = laplace_beltrami(&t.basis, &c);
        for (a, b) in acc.iter().zip(&lb.values) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn sobolev_norm_cases() {
        let b = build_basis(3);
        let z = HarmonicCoeffs::zeros(&b);
        for o in [SobolevOrder::L2, SobolevOrder::H1, SobolevOrder::H2] {
            assert_eq!(sobolev_norm(&b, &z, o, 1.3).unwrap(), 0.0);
        }
        // Constant a on S_r has coefficient a √(4π).
        let a = 0.7;
        let mut c = HarmonicCoeffs::zeros(&b);
        c.values[0] = a * (4.0 * PI).sqrt();
        let r = 1.7;
        let n = sobolev_norm(&b, &c, SobolevOrder::L2, r).unwrap();
        assert!((n - a * (4.0 * PI).sqrt() * r).abs() < 1e-12);
        assert!(sobolev_norm(&b, &c, SobolevOrder::L2, 0.0).is_err());
    }

    #[test]
    fn sobolev_h2_ratio_matches_quadrature_of_laplacian() {
        // Oracle: ‖f‖_{H²}² computed as r² ∫ (f − r^{-2}Δ_S f)² on the grid
        // (pointwise Δ_S from Σ Ω_ij² applied on the grid), divided by the L² norm.
        let t = SphereTransform::for_degree(4);
        let l = 3;
        let c = HarmonicCoeffs::unit(&t.basis, mode_index(l, 2));
        let r = 0.8;
        let f = t.synthesize(&c).unwrap();
        let mut lap = vec![0.0; t.grid.len()];
        for &(i, j) in &PAIRS {
            let g = t.apply_omega(i, j, &t.apply_omega(i, j, &f).unwrap()).unwrap();
            for (a, v) in lap.iter_mut().zip(g.values) {
                *a += v;
            }
        }
        let h2_sq: Vec<f64> = f
            .values
            .iter()
            .zip(&lap)
            .map(|(v, d)| (v - d / (r * r)).powi(2))
            .collect();
        let l2_sq: Vec<f64> = f.values.iter().map(|v| v * v).collect();
        let oracle = (t.grid.integrate(&h2_sq) / t.grid.integrate(&l2_sq)).sqrt();
        let ratio = sobolev_norm(&t.basis, &c, SobolevOrder::H2, r).unwrap()
            / sobolev_norm(&t.basis, &c, SobolevOrder::L2, r).unwrap();
        let closed = 1.0 + (l * (l + 1)) as f64 / (r * r);
        assert!((ratio - oracle).abs() < 1e-10);
        assert!((ratio - closed).abs() < 1e-12);
    }
}
