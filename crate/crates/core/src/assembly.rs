//! Potentials, 3D fields assembled from mode solutions, the linearized and
//! coupled forward problems, and cylinder traces.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::goursat1d::{
    cone_from_potential, cylinder_indices, cylinder_trace_mode, march, solve_background,
    solve_mode, unweight, CharGrid, MarchProblem, ModeCoefficient, ModeCone, ModeForcing, ModeTrace,
};
use crate::radial::{node_count, RadialProfile};
use crate::sphgrid::{build_basis, eval_at_direction, HarmonicBasis, SphereGrid, SphereTransform};

/// `q(rθ) = Σ_n q_n(r) r^{k(n)} φ_n(θ)` with `q_n` sampled at `i h`.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicPotential {
    pub basis: HarmonicBasis,
    pub h: f64,
    /// `coeffs[n][i] = q_n(i h)`.
    pub coeffs: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct PotentialFile {
    lmax: usize,
    #[serde(rename = "R_max")]
    r_max: f64,
    nr: usize,
    coeffs: Vec<Vec<f64>>,
}

impl HarmonicPotential {
    pub fn new(lmax: usize, h: f64, coeffs: Vec<Vec<f64>>) -> Result<Self> {
        let basis = build_basis(lmax);
        if coeffs.len() != basis.len() {
            return Err(Error::SizeMismatch {
                what: "potential modes",
                expected: basis.len(),
                got: coeffs.len(),
            });
        }
        let nr = coeffs[0].len();
        if nr < 2 {
            return Err(Error::InvalidParameter("potential needs >= 2 radial samples".into()));
        }
        if let Some(bad) = coeffs.iter().find(|c| c.len() != nr) {
            return Err(Error::SizeMismatch {
                what: "potential radial samples",
                expected: nr,
                got: bad.len(),
            });
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidParameter(format!("spacing {h} must be > 0")));
        }
        if coeffs.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("potential coefficients".into()));
        }
        Ok(HarmonicPotential { basis, h, coeffs })
    }

    pub fn zeros(lmax: usize, h: f64, rho: f64) -> Result<Self> {
        Self::from_fn(lmax, h, rho, |_, _| 0.0)
    }

    /// `coeffs[n][i] = f(n, i h)`.
    pub fn from_fn(lmax: usize, h: f64, rho: f64, f: impl Fn(usize, f64) -> f64) -> Result<Self> {
        let nr = node_count(rho, h).ok_or(Error::Misaligned {
            what: "rho",
            value: rho,
            h,
        })? + 1;
        let nm = build_basis(lmax).len();
        let coeffs = (0..nm)
            .map(|n| (0..nr).map(|i| f(n, i as f64 * h)).collect())
            .collect();
        Self::new(lmax, h, coeffs)
    }

    /// Radial potential `q(x) = q(|x|)`, stored in the constant mode.
    pub fn radial(lmax: usize, q: &RadialProfile) -> Result<Self> {
        let c0 = (4.0 * std::f64::consts::PI).sqrt();
        let nr = q.samples.len();
        let rho = (nr - 1) as f64 * q.h;
        Self::from_fn(lmax, q.h, rho, |n, r| if n == 0 { c0 * q.eval(r) } else { 0.0 })
    }

    pub fn lmax(&self) -> usize {
        self.basis.lmax
    }

    pub fn nr(&self) -> usize {
        self.coeffs[0].len()
    }

    pub fn r_max(&self) -> f64 {
        (self.nr() - 1) as f64 * self.h
    }

    pub fn mode_profile(&self, n: usize) -> RadialProfile {
        RadialProfile {
            h: self.h,
            samples: self.coeffs[n].clone(),
        }
    }

    /// `q(x)` at a point with `|x| ≤ R_max`.
    pub fn eval(&self, x: [f64; 3]) -> f64 {
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        let dir = if r > 0.0 {
            [x[0] / r, x[1] / r, x[2] / r]
        } else {
            [0.0, 0.0, 1.0]
        };
        let y = eval_at_direction(self.lmax(), dir);
        self.basis
            .modes
            .iter()
            .map(|m| self.mode_profile(m.index).eval(r) * r.powi(m.degree as i32) * y[m.index])
            .sum()
    }

    pub fn scaled(&self, a: f64) -> Self {
        HarmonicPotential {
            basis: self.basis.clone(),
            h: self.h,
            coeffs: self
                .coeffs
                .iter()
                .map(|c| c.iter().map(|v| a * v).collect())
                .collect(),
        }
    }

    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        if other.basis.lmax != self.basis.lmax || other.nr() != self.nr() || other.h != self.h {
            return Err(Error::SizeMismatch {
                what: "potential layout",
                expected: self.coeffs.len() * self.nr(),
                got: other.coeffs.len() * other.nr(),
            });
        }
        Ok(HarmonicPotential {
            basis: self.basis.clone(),
            h: self.h,
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(x, y)| x.iter().zip(y).map(|(x, y)| a * x + b * y).collect())
                .collect(),
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&PotentialFile {
            lmax: self.lmax(),
            r_max: self.r_max(),
            nr: self.nr(),
            coeffs: self.coeffs.clone(),
        })?)
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let f: PotentialFile = serde_json::from_str(text).map_err(|e| Error::Malformed {
            path: origin.into(),
            reason: e.to_string(),
        })?;
        if f.nr < 2 || f.coeffs.is_empty() {
            return Err(Error::Malformed {
                path: origin.into(),
                reason: "potential has no radial samples".into(),
            });
        }
        if f.coeffs.iter().any(|c| c.len() != f.nr) {
            return Err(Error::Malformed {
                path: origin.into(),
                reason: format!("every mode needs nr = {} samples", f.nr),
            });
        }
        Self::new(f.lmax, f.r_max / (f.nr - 1) as f64, f.coeffs)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }
}

/// Per-mode solutions `u_n(r, t)` sharing one grid; `u = Σ u_n r^k φ_n`.
#[derive(Debug, Clone)]
pub struct VolumetricField {
    pub basis: HarmonicBasis,
    pub grid: CharGrid,
    pub modes: Vec<ModeCone>,
}

impl VolumetricField {
    pub fn zeros(lmax: usize, grid: CharGrid) -> Self {
        let basis = build_basis(lmax);
        let modes = basis
            .modes
            .iter()
            .map(|m| ModeCone::zeros(m.degree, m.degree as i32 + 1, grid))
            .collect();
        VolumetricField { basis, grid, modes }
    }

    pub fn lmax(&self) -> usize {
        self.basis.lmax
    }

    /// Angular coefficient `U_n = u_n r^k` at lattice node `(i, j)`.
    pub fn angular(&self, n: usize, i: usize, j: usize) -> Option<f64> {
        let k = self.basis.modes[n].degree as i32;
        let r = i as f64 * self.grid.h;
        self.modes[n].at(i, j).map(|u| u * r.powi(k))
    }

    /// Regular part `u(x, t)` by interpolation of the mode sum; `None` outside the cone.
    pub fn value(&self, x: [f64; 3], t: f64) -> Option<f64> {
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        let dir = if r > 0.0 {
            [x[0] / r, x[1] / r, x[2] / r]
        } else {
            [0.0, 0.0, 1.0]
        };
        let y = eval_at_direction(self.lmax(), dir);
        let mut s = 0.0;
        for m in &self.basis.modes {
            s += self.modes[m.index].interpolate(r, t)? * r.powi(m.degree as i32) * y[m.index];
        }
        Some(s)
    }

    pub fn max_abs(&self) -> f64 {
        self.modes.iter().fold(0.0, |m, c| m.max(c.max_abs()))
    }

    /// `a·self + b·other`, node by node.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        if other.grid != self.grid || other.basis.lmax != self.basis.lmax {
            return Err(Error::SizeMismatch {
                what: "field layout",
                expected: self.modes.len() * self.grid.len(),
                got: other.modes.len() * other.grid.len(),
            });
        }
        let modes = self
            .modes
            .iter()
            .zip(&other.modes)
            .map(|(x, y)| ModeCone {
                degree: x.degree,
                delta: x.delta,
                grid: x.grid,
                values: x.values.iter().zip(&y.values).map(|(p, q)| a * p + b * q).collect(),
                weighted: x
                    .weighted
                    .iter()
                    .zip(&y.weighted)
                    .map(|(p, q)| a * p + b * q)
                    .collect(),
            })
            .collect();
        Ok(VolumetricField {
            basis: self.basis.clone(),
            grid: self.grid,
            modes,
        })
    }
}

/// Assembled trace samples on `SphereGrid × time`; index `[j * nodes + node]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledTrace {
    pub n_theta: usize,
    pub n_phi: usize,
    pub u: Vec<f64>,
    pub u_t: Vec<f64>,
    pub u_r: Vec<f64>,
}

/// Data on `C = {|x| = R, R ≤ t ≤ T}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CylinderTrace {
    pub radius: f64,
    pub t_end: f64,
    pub h: f64,
    pub lmax: usize,
    /// Reduced coefficients `u_n`, `∂_t u_n`, `∂_r u_n` per mode.
    pub modes: Vec<ModeTrace>,
    pub assembled: Option<AssembledTrace>,
}

/// Angular coefficients `(U, U_t, U_r)` with `U = R^k u_n` of one trace mode.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularTrace {
    pub u: Vec<f64>,
    pub u_t: Vec<f64>,
    pub u_r: Vec<f64>,
}

impl CylinderTrace {
    pub fn zeros(lmax: usize, radius: f64, t_end: f64, h: f64) -> Result<Self> {
        let basis = build_basis(lmax);
        let ir = node_count(radius, h).ok_or(Error::Misaligned {
            what: "R",
            value: radius,
            h,
        })?;
        let jt = node_count(t_end, h).ok_or(Error::Misaligned {
            what: "T",
            value: t_end,
            h,
        })?;
        if ir == 0 || jt <= ir {
            return Err(Error::InvalidParameter(format!(
                "need 0 < R < T (R={radius}, T={t_end})"
            )));
        }
        let len = jt - ir + 1;
        let modes = basis
            .modes
            .iter()
            .map(|m| ModeTrace {
                degree: m.degree,
                radius,
                t_start: radius,
                t_end,
                h,
                u: vec![0.0; len],
                u_t: vec![0.0; len],
                u_r: vec![0.0; len],
            })
            .collect();
        Ok(CylinderTrace {
            radius,
            t_end,
            h,
            lmax,
            modes,
            assembled: None,
        })
    }

    pub fn len(&self) -> usize {
        self.modes.first().map_or(0, |m| m.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|j| self.radius + j as f64 * self.h).collect()
    }

    pub fn angular(&self, n: usize) -> AngularTrace {
        let m = &self.modes[n];
        let k = m.degree as i32;
        let r = self.radius;
        let rk = r.powi(k);
        let drk = if k > 0 { k as f64 * r.powi(k - 1) } else { 0.0 };
        AngularTrace {
            u: m.u.iter().map(|v| v * rk).collect(),
            u_t: m.u_t.iter().map(|v| v * rk).collect(),
            u_r: m.u_r.iter().zip(&m.u).map(|(ur, u)| ur * rk + drk * u).collect(),
        }
    }

    /// Fill the assembled representation on the smallest exact grid for `lmax`.
    pub fn assemble(&mut self) {
        let sph = SphereTransform::for_degree(self.lmax);
        let np = sph.grid.len();
        let nt = self.len();
        let ang: Vec<AngularTrace> = (0..self.modes.len()).map(|n| self.angular(n)).collect();
        let mut u = Vec::with_capacity(nt * np);
        let mut u_t = Vec::with_capacity(nt * np);
        let mut u_r = Vec::with_capacity(nt * np);
        for j in 0..nt {
            let col = |f: &dyn Fn(&AngularTrace) -> &Vec<f64>| -> Vec<f64> {
                ang.iter().map(|a| f(a)[j]).collect()
            };
            u.extend(sph.synthesize_slice(&col(&|a| &a.u)));
            u_t.extend(sph.synthesize_slice(&col(&|a| &a.u_t)));
            u_r.extend(sph.synthesize_slice(&col(&|a| &a.u_r)));
        }
        self.assembled = Some(AssembledTrace {
            n_theta: sph.grid.n_theta,
            n_phi: sph.grid.n_phi,
            u,
            u_t,
            u_r,
        });
    }

    /// Add iid Gaussian perturbations produced by `noise` to every per-mode sample.
    pub fn perturbed(&self, mut noise: impl FnMut() -> f64) -> Self {
        let mut out = self.clone();
        for m in &mut out.modes {
            for v in m.u.iter_mut().chain(m.u_t.iter_mut()).chain(m.u_r.iter_mut()) {
                *v += noise();
            }
        }
        if out.assembled.is_some() {
            out.assemble();
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.modes
            .iter()
            .flat_map(|m| m.u.iter().chain(&m.u_t).chain(&m.u_r))
            .fold(0.0, |a, v| a.max(v.abs()))
    }
}

/// `U = 2 δ(t − |x|)/|x| + u H(t − |x|)`: the regular part and the wavefront descriptor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TotalFieldSample {
    pub regular: f64,
    /// Wavefront time `|x|`.
    pub wavefront: f64,
    /// Singular amplitude `2/|x|`.
    pub amplitude: f64,
}

fn linearized_mode(
    q: &HarmonicPotential,
    n: usize,
    background: &ModeCone,
    q_b: &RadialProfile,
    grid: CharGrid,
    coefficient: ModeCoefficient,
) -> Result<ModeCone> {
    let k = q.basis.modes[n].degree;
    let qn = q.mode_profile(n);
    if qn.samples.iter().all(|v| *v == 0.0) {
        return Ok(ModeCone::zeros(k, coefficient.weight_exponent(k)?, grid));
    }
    let mut forcing = ModeForcing::zeros(grid);
    for b in 0..=grid.levels() {
        for a in 0..=b {
            let (r, _) = grid.node_rt(a, b);
            let node = grid.idx(a, b);
            forcing.values[node] = qn.eval(r) * background.values[node];
        }
    }
    let (_, cone_u) = cone_from_potential(&qn, k, &grid);
    let half = 0.5 * grid.h;
    let cone = move |r: f64| cone_u[(r / half).round() as usize];
    solve_mode(k, coefficient, q_b, &forcing, &cone, grid)
}

/// Linearization about the radial background: each mode solves its equation
/// with forcing `q_n u_b` and cone data `∫_0^1 σ^k q_n(σr) dσ`.
pub fn forward_linearized(
    q_b: &RadialProfile,
    q: &HarmonicPotential,
    grid: CharGrid,
    radius: f64,
    t_end: f64,
) -> Result<(VolumetricField, CylinderTrace)> {
    forward_linearized_with(q_b, q, grid, radius, t_end, ModeCoefficient::Derived)
}

pub fn forward_linearized_with(
    q_b: &RadialProfile,
    q: &HarmonicPotential,
    grid: CharGrid,
    radius: f64,
    t_end: f64,
    coefficient: ModeCoefficient,
) -> Result<(VolumetricField, CylinderTrace)> {
    check_potential(q, &grid)?;
    cylinder_indices(&grid, radius, t_end)?;
    let background = solve_background(q_b, grid)?;
    let modes = (0..q.basis.len())
        .into_par_iter()
        .map(|n| linearized_mode(q, n, &background, q_b, grid, coefficient))
        .collect::<Result<Vec<_>>>()?;
    let field = VolumetricField {
        basis: q.basis.clone(),
        grid,
        modes,
    };
    let trace = extract_trace(&field, radius, t_end)?;
    Ok((field, trace))
}

fn check_potential(q: &HarmonicPotential, grid: &CharGrid) -> Result<()> {
    if q.r_max() + 1e-12 < grid.rho {
        return Err(Error::InvalidParameter(format!(
            "potential covers [0, {}] but grid needs [0, {}]",
            q.r_max(),
            grid.rho
        )));
    }
    Ok(())
}

/// `G[(n * nm + p) * nm + s] = ∫ φ_n φ_p φ_s`, computed on a grid exact for degree `3 lmax`.
pub(crate) fn triple_products(lmax: usize) -> Vec<f64> {
    let basis = build_basis(lmax);
    let nm = basis.len();
    let grid = SphereGrid::for_degree((3 * lmax).div_ceil(2));
    let sph = SphereTransform::new(basis, grid).expect("grid exceeds lmax");
    let mut g = vec![0.0; nm * nm * nm];
    let weights = sph.grid.weights();
    for (node, w) in weights.iter().enumerate() {
        let y: Vec<f64> = (0..nm).map(|n| sph.basis_value(node, n)).collect();
        for n in 0..nm {
            for p in n..nm {
                let wnp = w * y[n] * y[p];
                for s in 0..nm {
                    g[(n * nm + p) * nm + s] += wnp * y[s];
                }
            }
        }
    }
    for n in 0..nm {
        for p in 0..n {
            for s in 0..nm {
                g[(n * nm + p) * nm + s] = g[(p * nm + n) * nm + s];
            }
        }
    }
    g
}

/// Coupled forward problem `u_tt − Δu − q u = 0`, `u(x, |x|) = ∫_0^1 q(σx) dσ`.
///
/// Each mode is marched in `w_n = r^{k+1} u_n`; the product `q u` enters through
/// `M_np(r) = ∫ q(rθ) φ_n φ_p dθ`, which is the dealiased pointwise product
/// truncated back to `lmax`.
pub fn forward_nonlinear(q: &HarmonicPotential, grid: CharGrid) -> Result<VolumetricField> {
    check_potential(q, &grid)?;
    let basis = q.basis.clone();
    let nm = basis.len();
    let gaunt = triple_products(basis.lmax);
    let radii = grid.half_radii();
    let profiles: Vec<RadialProfile> = (0..nm).map(|n| q.mode_profile(n)).collect();
    let coupling: Vec<Vec<f64>> = radii
        .par_iter()
        .map(|&r| {
            let a: Vec<f64> = basis
                .modes
                .iter()
                .map(|m| profiles[m.index].eval(r) * r.powi(m.degree as i32))
                .collect();
            let mut mat = vec![0.0; nm * nm];
            for n in 0..nm {
                for p in 0..nm {
                    let row = &gaunt[(n * nm + p) * nm..(n * nm + p + 1) * nm];
                    mat[n * nm + p] = row.iter().zip(&a).map(|(g, a)| g * a).sum();
                }
            }
            mat
        })
        .collect();
    let deltas: Vec<i32> = basis.modes.iter().map(|m| m.degree as i32 + 1).collect();
    let cones: Vec<(Vec<f64>, Vec<f64>)> = basis
        .modes
        .iter()
        .map(|m| cone_from_potential(&profiles[m.index], m.degree, &grid))
        .collect();
    let mut cone = vec![0.0; radii.len() * nm];
    for (n, (w, _)) in cones.iter().enumerate() {
        for (b, v) in w.iter().enumerate() {
            cone[b * nm + n] = *v;
        }
    }
    let w = march(&MarchProblem {
        grid,
        deltas: &deltas,
        coupling: &coupling,
        forcing: None,
        cone: &cone,
        sweeps: 3,
    })?;
    let modes = basis
        .modes
        .iter()
        .map(|m| {
            let n = m.index;
            let wn: Vec<f64> = (0..grid.len()).map(|node| w[node * nm + n]).collect();
            let values = unweight(&grid, deltas[n], &wn, &cones[n].1);
            ModeCone {
                degree: m.degree,
                delta: deltas[n],
                grid,
                values,
                weighted: wn,
            }
        })
        .collect();
    Ok(VolumetricField { basis, grid, modes })
}

/// Per-mode traces plus the assembled samples on the sphere grid.
pub fn extract_trace(f: &VolumetricField, radius: f64, t_end: f64) -> Result<CylinderTrace> {
    let modes = f
        .modes
        .iter()
        .map(|m| cylinder_trace_mode(m, radius, t_end))
        .collect::<Result<Vec<_>>>()?;
    let mut tr = CylinderTrace {
        radius,
        t_end,
        h: f.grid.h,
        lmax: f.lmax(),
        modes,
        assembled: None,
    };
    tr.assemble();
    Ok(tr)
}

pub fn eval_total(f: &VolumetricField, x: [f64; 3], t: f64) -> Result<TotalFieldSample> {
    let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
    if r == 0.0 {
        return Err(Error::InvalidParameter("total field is singular at x = 0".into()));
    }
    let regular = if t < r {
        0.0
    } else {
        f.value(x, t).ok_or_else(|| {
            Error::InvalidParameter(format!("(|x|={r}, t={t}) lies outside the double cone"))
        })?
    };
    Ok(TotalFieldSample {
        regular,
        wavefront: r,
        amplitude: 2.0 / r,
    })
}

pub const TRACE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TraceHeader {
    #[serde(rename = "R")]
    radius: f64,
    #[serde(rename = "T")]
    t_end: f64,
    h: f64,
    lmax: usize,
    version: u32,
}

/// Text form of a trace:
///
/// ```text
/// {"R":..,"T":..,"h":..,"lmax":..,"version":1}
/// [mode n degree k]
/// t,u,u_t,u_r
/// ...one row per time...
/// [assembled n_theta n_phi]        (optional)
/// t,node,u,u_t,u_r
/// ...
/// [end]
/// ```
pub fn trace_to_string(tr: &CylinderTrace) -> Result<String> {
    let mut s = serde_json::to_string(&TraceHeader {
        radius: tr.radius,
        t_end: tr.t_end,
        h: tr.h,
        lmax: tr.lmax,
        version: TRACE_VERSION,
    })?;
    s.push('\n');
    let times = tr.times();
    for (n, m) in tr.modes.iter().enumerate() {
        let _ = writeln!(s, "[mode {n} degree {}]", m.degree);
        s.push_str("t,u,u_t,u_r\n");
        for j in 0..m.len() {
            let _ = writeln!(s, "{},{},{},{}", times[j], m.u[j], m.u_t[j], m.u_r[j]);
        }
    }
    if let Some(a) = &tr.assembled {
        let _ = writeln!(s, "[assembled {} {}]", a.n_theta, a.n_phi);
        s.push_str("t,node,u,u_t,u_r\n");
        let np = a.n_theta * a.n_phi;
        for (j, t) in times.iter().enumerate() {
            for node in 0..np {
                let i = j * np + node;
                let _ = writeln!(s, "{t},{node},{},{},{}", a.u[i], a.u_t[i], a.u_r[i]);
            }
        }
    }
    s.push_str("[end]\n");
    Ok(s)
}

pub fn trace_from_str(text: &str, origin: &str) -> Result<CylinderTrace> {
    let malformed = |reason: String| Error::Malformed {
        path: origin.into(),
        reason,
    };
    let missing = |section: String| Error::MissingSection {
        path: origin.into(),
        section,
    };
    let mut lines = text.lines().peekable();
    let head = lines.next().ok_or_else(|| missing("header".into()))?;
    let hdr: TraceHeader =
        serde_json::from_str(head).map_err(|e| malformed(format!("header: {e}")))?;
    if hdr.version != TRACE_VERSION {
        return Err(Error::Version(hdr.version));
    }
    let mut tr = CylinderTrace::zeros(hdr.lmax, hdr.radius, hdr.t_end, hdr.h)?;
    let nt = tr.len();
    let parse = |v: &str, line: &str| -> Result<f64> {
        v.trim()
            .parse::<f64>()
            .map_err(|_| malformed(format!("bad number in '{line}'")))
    };
    for n in 0..tr.modes.len() {
        let section = format!("mode {n}");
        let tag = lines.next().ok_or_else(|| missing(section.clone()))?;
        if !tag.starts_with(&format!("[mode {n} ")) {
            return Err(malformed(format!("expected [{section} ...], found '{tag}'")));
        }
        lines.next().ok_or_else(|| missing(section.clone()))?;
        for j in 0..nt {
            let line = lines.next().ok_or_else(|| missing(section.clone()))?;
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 4 {
                return Err(malformed(format!("{section}: expected 4 columns in '{line}'")));
            }
            tr.modes[n].u[j] = parse(cols[1], line)?;
            tr.modes[n].u_t[j] = parse(cols[2], line)?;
            tr.modes[n].u_r[j] = parse(cols[3], line)?;
        }
    }
    let tag = lines.next().ok_or_else(|| missing("end".into()))?;
    if let Some(rest) = tag.strip_prefix("[assembled ") {
        let dims: Vec<usize> = rest
            .trim_end_matches(']')
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| malformed(format!("bad tag '{tag}'"))))
            .collect::<Result<_>>()?;
        if dims.len() != 2 {
            return Err(malformed(format!("bad tag '{tag}'")));
        }
        let np = dims[0] * dims[1];
        lines.next().ok_or_else(|| missing("assembled".into()))?;
        let mut a = AssembledTrace {
            n_theta: dims[0],
            n_phi: dims[1],
            u: Vec::with_capacity(np * nt),
            u_t: Vec::with_capacity(np * nt),
            u_r: Vec::with_capacity(np * nt),
        };
        for _ in 0..np * nt {
            let line = lines.next().ok_or_else(|| missing("assembled".into()))?;
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 5 {
                return Err(malformed(format!("assembled: expected 5 columns in '{line}'")));
            }
            a.u.push(parse(cols[2], line)?);
            a.u_t.push(parse(cols[3], line)?);
            a.u_r.push(parse(cols[4], line)?);
        }
        tr.assembled = Some(a);
        let end = lines.next().ok_or_else(|| missing("end".into()))?;
        if end != "[end]" {
            return Err(malformed(format!("expected [end], found '{end}'")));
        }
    } else if tag != "[end]" {
        return Err(malformed(format!("expected [end], found '{tag}'")));
    }
    Ok(tr)
}

pub fn save_trace(tr: &CylinderTrace, path: &Path) -> Result<()> {
    std::fs::write(path, trace_to_string(tr)?).map_err(|e| Error::io(path, e))
}

pub fn load_trace(path: &Path) -> Result<CylinderTrace> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    trace_from_str(&text, &path.display().to_string())
}

pub const FIELD_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct FieldHeader {
    version: u32,
    h: f64,
    rho: f64,
    lmax: usize,
    degrees: Vec<usize>,
    deltas: Vec<i32>,
}

/// Write `field.json` and `mode_<n>.csv` (columns `i,j,value` on the `(i h, j h)` lattice).
pub fn save_field(f: &VolumetricField, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let header = FieldHeader {
        version: FIELD_VERSION,
        h: f.grid.h,
        rho: f.grid.rho,
        lmax: f.lmax(),
        degrees: f.modes.iter().map(|m| m.degree).collect(),
        deltas: f.modes.iter().map(|m| m.delta).collect(),
    };
    let mut written = Vec::new();
    let hp = dir.join("field.json");
    std::fs::write(&hp, serde_json::to_string(&header)?).map_err(|e| Error::io(&hp, e))?;
    written.push(hp);
    for (n, m) in f.modes.iter().enumerate() {
        let mut s = String::from("i,j,value\n");
        for i in 0..=f.grid.n {
            for j in i..=(2 * f.grid.n - i) {
                let _ = writeln!(s, "{i},{j},{}", m.at(i, j).expect("inside"));
            }
        }
        let p = dir.join(format!("mode_{n}.csv"));
        std::fs::write(&p, s).map_err(|e| Error::io(&p, e))?;
        written.push(p);
    }
    Ok(written)
}

/// Inverse of [`save_field`]. Off-lattice characteristic nodes are restored by
/// averaging their lattice neighbours.
pub fn load_field(dir: &Path) -> Result<VolumetricField> {
    let hp = dir.join("field.json");
    let text = std::fs::read_to_string(&hp).map_err(|e| Error::io(&hp, e))?;
    let header: FieldHeader = serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path: hp.clone(),
        reason: e.to_string(),
    })?;
    if header.version != FIELD_VERSION {
        return Err(Error::Version(header.version));
    }
    let grid = CharGrid::new(header.h, header.rho)?;
    let basis = build_basis(header.lmax);
    if header.degrees.len() != basis.len() || header.deltas.len() != basis.len() {
        return Err(Error::Malformed {
            path: hp.clone(),
            reason: "mode list does not match lmax".into(),
        });
    }
    let mut modes = Vec::with_capacity(basis.len());
    for n in 0..basis.len() {
        let p = dir.join(format!("mode_{n}.csv"));
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let mut cone = ModeCone::zeros(header.degrees[n], header.deltas[n], grid);
        let mut seen = 0usize;
        for line in text.lines().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            let bad = || Error::Malformed {
                path: p.clone(),
                reason: format!("bad row '{line}'"),
            };
            if cols.len() != 3 {
                return Err(bad());
            }
            let i: usize = cols[0].parse().map_err(|_| bad())?;
            let j: usize = cols[1].parse().map_err(|_| bad())?;
            let v: f64 = cols[2].parse().map_err(|_| bad())?;
            let (a, b) = grid.lattice(i, j).ok_or_else(bad)?;
            cone.values[grid.idx(a, b)] = v;
            seen += 1;
        }
        let expected = (0..=grid.n).map(|i| 2 * (grid.n - i) + 1).sum::<usize>();
        if seen != expected {
            return Err(Error::MissingSection {
                path: p.clone(),
                section: format!("{} of {expected} lattice rows", expected - seen.min(expected)),
            });
        }
        for b in 0..=grid.levels() {
            for a in 0..=b {
                if (b - a) % 2 == 1 {
                    let mut s = 0.0;
                    let mut c = 0.0;
                    if a >= 1 {
                        s += cone.values[grid.idx(a - 1, b)];
                        c += 1.0;
                    }
                    if a < b {
                        s += cone.values[grid.idx(a + 1, b)];
                        c += 1.0;
                    }
                    cone.values[grid.idx(a, b)] = s / c;
                }
            }
        }
        for b in 0..=grid.levels() {
            for a in 0..=b {
                let (r, _) = grid.node_rt(a, b);
                let node = grid.idx(a, b);
                cone.weighted[node] = cone.values[node] * r.powi(cone.delta);
            }
        }
        modes.push(cone);
    }
    Ok(VolumetricField { basis, grid, modes })
}

/// Radial background field `u_b` as a single-mode volumetric field.
pub fn background_field(q_b: &RadialProfile, lmax: usize, grid: CharGrid) -> Result<VolumetricField> {
    let mut f = VolumetricField::zeros(lmax, grid);
    let mut bg = solve_background(q_b, grid)?;
    let c0 = (4.0 * std::f64::consts::PI).sqrt();
    bg.values.iter_mut().for_each(|v| *v *= c0);
    bg.weighted.iter_mut().for_each(|v| *v *= c0);
    f.modes[0] = bg;
    Ok(f)
}
