//! Reconstruction: radial layer stripping, mode-wise linearized inversion,
//! Kirchhoff-formula recovery inside the measurement sphere, and the
//! empirical stability ratio.
//!
//! The sideways march works with `V = r U` where `U` is an angular
//! coefficient of the field. Along the light cone `d/dr V(r, r) = a(r)`, the
//! matching angular coefficient of the potential, and off the cone
//!
//! ```text
//! V_rr = V_tt + c(r) V − a(r) B(r, t)
//! ```
//!
//! with `c = 0, B = V` for the radial problem and `c = k(k+1)/r² − q_b`,
//! `B = r u_b` for a linearized mode.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::assembly::{extract_trace, forward_nonlinear, CylinderTrace, HarmonicPotential};
use crate::error::{Error, Result};
use crate::goursat1d::{solve_background, CharGrid, ModeCone, ModeTrace};
use crate::radial::{derivative, interp_cubic, node_count, trapezoid, RadialProfile};
use crate::sphgrid::{eval_at_direction, gauss_legendre, SphereTransform};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InversionConfig {
    /// Depth step; must match the trace spacing when set.
    pub step: Option<f64>,
    /// Fixed-point passes of the per-layer extraction.
    pub sweeps: usize,
    /// Per-layer Tikhonov weight tying each layer to the previous one.
    pub smoothing: f64,
    /// Trace samples with magnitude below this are zeroed before marching.
    pub noise_floor: f64,
    /// Requested depth; clamped to `(R+T)/2`.
    pub depth: Option<f64>,
}

impl Default for InversionConfig {
    fn default() -> Self {
        InversionConfig {
            step: None,
            sweeps: 3,
            smoothing: 0.0,
            noise_floor: 0.0,
            depth: None,
        }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(h) = self.step {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::InvalidParameter(format!("step {h} must be > 0")));
            }
        }
        if self.sweeps == 0 {
            return Err(Error::InvalidParameter("sweeps must be >= 1".into()));
        }
        if !(self.smoothing >= 0.0 && self.smoothing.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "smoothing {} must be >= 0",
                self.smoothing
            )));
        }
        if !(self.noise_floor >= 0.0 && self.noise_floor.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "noise floor {} must be >= 0",
                self.noise_floor
            )));
        }
        Ok(())
    }

    fn check_step(&self, h: f64) -> Result<()> {
        match self.step {
            Some(s) if (s - h).abs() > 1e-12 * h => Err(Error::InvalidParameter(format!(
                "step {s} differs from trace spacing {h}"
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Domain {
    /// `inner ≤ |x| ≤ outer`.
    Annulus { inner: f64, outer: f64 },
    /// `|x| ≤ radius`.
    Ball { radius: f64 },
}

impl Domain {
    pub fn contains(&self, r: f64) -> bool {
        let eps = 1e-12;
        match *self {
            Domain::Annulus { inner, outer } => r >= inner - eps && r <= outer + eps,
            Domain::Ball { radius } => r <= radius + eps,
        }
    }

    pub fn outer(&self) -> f64 {
        match *self {
            Domain::Annulus { outer, .. } => outer,
            Domain::Ball { radius } => radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Representation {
    Radial(RadialProfile),
    Harmonic(HarmonicPotential),
}

/// One marched layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LayerDiagnostic {
    pub layer: usize,
    pub mode: Option<usize>,
    pub r: f64,
    /// Extracted coefficient at this depth.
    pub value: f64,
    /// `max |V|` over the continued layer.
    pub growth: f64,
    /// Size of the last fixed-point correction.
    pub update: f64,
}

/// Samples are stored from `r = 0`; only nodes inside `domain` carry data.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredPotential {
    pub domain: Domain,
    pub potential: Representation,
    pub diagnostics: Vec<LayerDiagnostic>,
}

impl RecoveredPotential {
    /// Harmonic form; a radial profile becomes the `l = 0` mode.
    pub fn as_harmonic(&self) -> Result<HarmonicPotential> {
        match &self.potential {
            Representation::Radial(p) => HarmonicPotential::radial(0, p),
            Representation::Harmonic(q) => Ok(q.clone()),
        }
    }

    /// Relative `L²(dx)` error against `truth` over the domain nodes.
    pub fn relative_error(&self, truth: &HarmonicPotential) -> Result<f64> {
        let got = self.as_harmonic()?;
        let (num, den) = domain_norms(&got, truth, &self.domain, None);
        Ok(ratio(num, den))
    }

    /// Per-mode relative `L²(dr)` errors of `q_n` over the domain; absolute
    /// where the true mode vanishes.
    pub fn mode_errors(&self, truth: &HarmonicPotential) -> Result<Vec<f64>> {
        let got = self.as_harmonic()?;
        let nm = got.basis.len().max(truth.basis.len());
        Ok((0..nm)
            .map(|n| {
                let (num, den) = domain_norms(&got, truth, &self.domain, Some(n));
                if den == 0.0 {
                    num.sqrt()
                } else {
                    (num / den).sqrt()
                }
            })
            .collect())
    }

    /// `layer,mode,r,value,growth,update` rows.
    pub fn diagnostics_csv(&self) -> String {
        let mut out = String::from("layer,mode,r,value,growth,update\n");
        for d in &self.diagnostics {
            let mode = d.mode.map_or(String::new(), |m| m.to_string());
            out.push_str(&format!(
                "{},{},{},{:e},{:e},{:e}\n",
                d.layer, mode, d.r, d.value, d.growth, d.update
            ));
        }
        out
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (num / den).sqrt()
    }
}

/// `(∫|a − a*|², ∫|a*|²)` over the domain nodes of `got`: with `mode = None`
/// the full `r² dr` volume norm of the angular coefficients, otherwise the
/// plain `dr` norm of `q_n`.
fn domain_norms(
    got: &HarmonicPotential,
    truth: &HarmonicPotential,
    domain: &Domain,
    mode: Option<usize>,
) -> (f64, f64) {
    let h = got.h;
    let nodes: Vec<usize> = (0..got.nr())
        .filter(|&i| domain.contains(i as f64 * h))
        .collect();
    let nm = got.basis.len().max(truth.basis.len());
    let modes: Vec<usize> = match mode {
        Some(n) => vec![n],
        None => (0..nm).collect(),
    };
    let mut diff = vec![0.0; nodes.len()];
    let mut norm = vec![0.0; nodes.len()];
    for &n in &modes {
        let k = crate::sphgrid::build_basis(got.basis.lmax.max(truth.basis.lmax)).modes[n].degree;
        let g = (n < got.basis.len()).then(|| got.mode_profile(n));
        let t = (n < truth.basis.len()).then(|| truth.mode_profile(n));
        for (slot, &i) in nodes.iter().enumerate() {
            let r = i as f64 * h;
            let scale = if mode.is_some() { 1.0 } else { r.powi(k as i32) * r };
            let a = g.as_ref().map_or(0.0, |p| p.samples[i]) * scale;
            let b = t.as_ref().map_or(0.0, |p| p.eval(r)) * scale;
            diff[slot] += (a - b) * (a - b);
            norm[slot] += b * b;
        }
    }
    (trapezoid(&diff, h), trapezoid(&norm, h))
}

/// Cylinder data `(V, V_r, V_t)` on `t = R + j h`.
struct SidewaysData {
    v: Vec<f64>,
    v_r: Vec<f64>,
    v_t: Vec<f64>,
}

impl SidewaysData {
    fn from_angular(u: &[f64], u_t: &[f64], u_r: &[f64], radius: f64, floor: f64) -> Self {
        let clip = |x: f64| if x.abs() < floor { 0.0 } else { x };
        SidewaysData {
            v: u.iter().map(|&x| radius * clip(x)).collect(),
            v_r: u.iter().zip(u_r).map(|(&x, &xr)| clip(x) + radius * clip(xr)).collect(),
            v_t: u_t.iter().map(|&x| radius * clip(x)).collect(),
        }
    }
}

enum Coupling<'a> {
    /// `B = V`.
    Radial,
    /// `c(r) = k(k+1)/r² − q_b(r)`, `B = r u_b`.
    Mode {
        degree: usize,
        q_b: &'a RadialProfile,
        background: &'a ModeCone,
        /// Lattice index of `R`.
        ir: usize,
    },
}

impl Coupling<'_> {
    fn c(&self, r: f64) -> f64 {
        match self {
            Coupling::Radial => 0.0,
            Coupling::Mode { degree, q_b, .. } => {
                let k = *degree as f64;
                k * (k + 1.0) / (r * r) - q_b.eval(r)
            }
        }
    }

    /// `B` at layer `i`, time node `j` (`t = R + j h`).
    fn b(&self, layer: &[f64], i: usize, j: usize, h: f64) -> f64 {
        match self {
            Coupling::Radial => layer[j],
            Coupling::Mode { background, ir, .. } => {
                let r = (ir + i) as f64 * h;
                r * background.at(ir + i, ir + j).expect("background covers K")
            }
        }
    }
}

/// March `V` sideways from `R` and extract the cone coefficient `a(r)` layer
/// by layer. Returns `a` at `r = R + i h` for `i = 0..=last`.
fn march(
    data: &SidewaysData,
    radius: f64,
    h: f64,
    last: usize,
    coupling: &Coupling<'_>,
    cfg: &InversionConfig,
    mode: Option<usize>,
) -> Result<(Vec<f64>, Vec<LayerDiagnostic>)> {
    let n = data.v.len() - 1;
    let h2 = h * h;
    let tt = |layer: &[f64], j: usize| (layer[j + 1] - 2.0 * layer[j] + layer[j - 1]) / h2;
    let fail = |layer: usize, reason: String| Error::LayerFailure {
        layer,
        mode,
        reason,
    };
    let mut a = Vec::with_capacity(last + 1);
    let mut diag = Vec::with_capacity(last + 1);
    let mut p = Vec::with_capacity(last + 1);

    // Layer 0 from the data; the first step is a Taylor step.
    let a0 = data.v_r[0] + data.v_t[0];
    a.push(a0);
    p.push(data.v[0]);
    diag.push(LayerDiagnostic {
        layer: 0,
        mode,
        r: radius,
        value: a0,
        growth: data.v.iter().fold(0.0, |m, v| m.max(v.abs())),
        update: 0.0,
    });
    let mut prev = data.v.clone();
    let mut cur = vec![0.0; n + 1];
    let c0 = coupling.c(radius);
    for j in 1..n {
        let vrr = tt(&data.v, j) + c0 * data.v[j] - a0 * coupling.b(&data.v, 0, j, h);
        cur[j] = data.v[j] + h * data.v_r[j] + 0.5 * h2 * vrr;
    }
    p.push(cur[1]);
    check_layer(&cur, 1, n - 1).map_err(|r| fail(1, r))?;

    for i in 1..last {
        let r = radius + i as f64 * h;
        let c = coupling.c(r);
        let j = i + 1;
        let star = 2.0 * cur[j] - prev[j] + h2 * (tt(&cur, j) + c * cur[j]);
        let b = coupling.b(&cur, i, j, h);
        let rhs = (star - p[i - 1]) / (2.0 * h);
        let denom = 1.0 + 0.5 * h * b;
        if denom.abs() < 1e-10 {
            return Err(fail(i, format!("extraction denominator {denom:e} below 1e-10")));
        }
        let (mut ai, mut update) = (a[i - 1], 0.0);
        if (0.5 * h * b).abs() < 0.5 {
            for _ in 0..cfg.sweeps {
                let next = rhs - 0.5 * h * b * ai;
                update = (next - ai).abs();
                ai = next;
            }
        } else {
            ai = rhs / denom;
        }
        if cfg.smoothing > 0.0 {
            ai = (ai + cfg.smoothing * a[i - 1]) / (1.0 + cfg.smoothing);
        }
        if !ai.is_finite() {
            return Err(fail(i, "non-finite extracted value".into()));
        }
        let mut next = vec![0.0; n + 1];
        for jj in (i + 1)..=(n - i - 1) {
            next[jj] = 2.0 * cur[jj] - prev[jj] + h2 * (tt(&cur, jj) + c * cur[jj] - ai * coupling.b(&cur, i, jj, h));
        }
        let growth = check_layer(&next, i + 1, n - i - 1).map_err(|r| fail(i + 1, r))?;
        a.push(ai);
        p.push(next[i + 1]);
        diag.push(LayerDiagnostic {
            layer: i,
            mode,
            r,
            value: ai,
            growth,
            update,
        });
        prev = std::mem::replace(&mut cur, next);
    }
    // Deepest layer: one-sided difference of the diagonal.
    let al = (3.0 * p[last] - 4.0 * p[last - 1] + p[last - 2]) / (2.0 * h);
    a.push(al);
    diag.push(LayerDiagnostic {
        layer: last,
        mode,
        r: radius + last as f64 * h,
        value: al,
        growth: cur[last..=(n - last)].iter().fold(0.0, |m, v| m.max(v.abs())),
        update: 0.0,
    });
    Ok((a, diag))
}

fn check_layer(v: &[f64], lo: usize, hi: usize) -> std::result::Result<f64, String> {
    let mut m: f64 = 0.0;
    for x in &v[lo..=hi] {
        if !x.is_finite() {
            return Err("non-finite growth in continued field".into());
        }
        m = m.max(x.abs());
    }
    Ok(m)
}

/// Number of layers below `R`, capped by `(R+T)/2` and the requested depth.
fn layer_count(radius: f64, t_end: f64, h: f64, depth: Option<f64>) -> Result<usize> {
    let n = node_count(t_end - radius, h).ok_or(Error::Misaligned {
        what: "T - R",
        value: t_end - radius,
        h,
    })?;
    let mut last = n / 2;
    if let Some(d) = depth {
        let want = ((d - radius) / h + 1e-9).floor();
        if want < last as f64 {
            last = want.max(0.0) as usize;
        }
    }
    if last < 2 {
        return Err(Error::WindowExhausted {
            depth: depth.unwrap_or(0.5 * (radius + t_end)),
        });
    }
    Ok(last)
}

/// Radial layer stripping from a `k = 0` trace of `u`.
pub fn layer_strip_radial(trace: &ModeTrace, cfg: &InversionConfig) -> Result<RecoveredPotential> {
    cfg.validate()?;
    if trace.degree != 0 {
        return Err(Error::InvalidParameter(format!(
            "layer stripping needs a degree-0 trace, got degree {}",
            trace.degree
        )));
    }
    let h = trace.h;
    cfg.check_step(h)?;
    let (radius, t_end) = (trace.radius, trace.t_end);
    let last = layer_count(radius, t_end, h, cfg.depth)?;
    let data = SidewaysData::from_angular(&trace.u, &trace.u_t, &trace.u_r, radius, cfg.noise_floor);
    let (a, diagnostics) = march(&data, radius, h, last, &Coupling::Radial, cfg, None)?;
    let ir = node_count(radius, h).expect("trace radius aligned");
    let mut samples = vec![0.0; ir + last + 1];
    samples[ir..].copy_from_slice(&a);
    Ok(RecoveredPotential {
        domain: Domain::Annulus {
            inner: radius,
            outer: radius + last as f64 * h,
        },
        potential: Representation::Radial(RadialProfile::new(h, samples)?),
        diagnostics,
    })
}

/// Layer stripping on the constant mode of a stored trace.
pub fn layer_strip_trace(trace: &CylinderTrace, cfg: &InversionConfig) -> Result<RecoveredPotential> {
    let c0 = (4.0 * PI).sqrt();
    let m = trace.modes.first().ok_or_else(|| Error::InvalidParameter("trace has no modes".into()))?;
    let scale = |v: &[f64]| v.iter().map(|x| x / c0).collect::<Vec<_>>();
    let radial = ModeTrace {
        u: scale(&m.u),
        u_t: scale(&m.u_t),
        u_r: scale(&m.u_r),
        ..m.clone()
    };
    layer_strip_radial(&radial, cfg)
}

/// Mode-by-mode inversion of linearized data about the radial background `q_b`.
pub fn invert_linearized_modes(
    trace: &CylinderTrace,
    q_b: &RadialProfile,
    cfg: &InversionConfig,
) -> Result<RecoveredPotential> {
    cfg.validate()?;
    let h = trace.h;
    cfg.check_step(h)?;
    let (radius, t_end) = (trace.radius, trace.t_end);
    let last = layer_count(radius, t_end, h, cfg.depth)?;
    let ir = node_count(radius, h).ok_or(Error::Misaligned {
        what: "R",
        value: radius,
        h,
    })?;
    let n_rho = (ir + node_count(t_end, h).expect("aligned")).div_ceil(2);
    let grid = CharGrid::new(h, n_rho as f64 * h)?;
    if q_b.r_max() + 1e-12 < grid.rho {
        return Err(Error::InvalidParameter(format!(
            "background potential covers [0, {}] but inversion needs [0, {}]",
            q_b.r_max(),
            grid.rho
        )));
    }
    let background = solve_background(q_b, grid)?;
    let per_mode = (0..trace.modes.len())
        .into_par_iter()
        .map(|n| {
            let ang = trace.angular(n);
            let data = SidewaysData::from_angular(&ang.u, &ang.u_t, &ang.u_r, radius, cfg.noise_floor);
            let coupling = Coupling::Mode {
                degree: trace.modes[n].degree,
                q_b,
                background: &background,
                ir,
            };
            march(&data, radius, h, last, &coupling, cfg, Some(n))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut coeffs = Vec::with_capacity(per_mode.len());
    let mut diagnostics = Vec::new();
    for (n, (a, d)) in per_mode.into_iter().enumerate() {
        let k = trace.modes[n].degree as i32;
        let mut samples = vec![0.0; ir + last + 1];
        for (i, v) in a.iter().enumerate() {
            let r = (ir + i) as f64 * h;
            samples[ir + i] = v / r.powi(k);
        }
        coeffs.push(samples);
        diagnostics.extend(d);
    }
    Ok(RecoveredPotential {
        domain: Domain::Annulus {
            inner: radius,
            outer: radius + last as f64 * h,
        },
        potential: Representation::Harmonic(HarmonicPotential::new(trace.lmax, h, coeffs)?),
        diagnostics,
    })
}

/// Cauchy data `(u, u_t, u_r)` on the sphere `|y| = R` over a time range.
pub trait CauchyData: Sync {
    fn radius(&self) -> f64;
    fn time_range(&self) -> (f64, f64);
    /// Samples at `y = R·dir`, time `tau`.
    fn sample(&self, dir: [f64; 3], tau: f64) -> Result<[f64; 3]>;

    /// Samples at several directions sharing one time.
    fn sample_ring(&self, dirs: &[[f64; 3]], tau: f64, out: &mut Vec<[f64; 3]>) -> Result<()> {
        out.clear();
        for d in dirs {
            out.push(self.sample(*d, tau)?);
        }
        Ok(())
    }
}

fn check_time(range: (f64, f64), tau: f64) -> Result<()> {
    let tol = 1e-9 * range.1.abs().max(1.0);
    if tau < range.0 - tol || tau > range.1 + tol {
        return Err(Error::InvalidParameter(format!(
            "retarded time {tau} outside the data window [{}, {}]",
            range.0, range.1
        )));
    }
    Ok(())
}

/// Trace-backed Cauchy data: angular coefficients interpolated cubically in time.
pub struct TraceData {
    radius: f64,
    t_end: f64,
    h: f64,
    lmax: usize,
    /// `[n][field][j]` with fields `U, U_t, U_r`.
    coeffs: Vec<[Vec<f64>; 3]>,
}

impl TraceData {
    pub fn new(trace: &CylinderTrace) -> Self {
        let coeffs = (0..trace.modes.len())
            .map(|n| {
                let a = trace.angular(n);
                [a.u, a.u_t, a.u_r]
            })
            .collect();
        TraceData {
            radius: trace.radius,
            t_end: trace.t_end,
            h: trace.h,
            lmax: trace.lmax,
            coeffs,
        }
    }

    fn coefficients_at(&self, tau: f64) -> Result<Vec<[f64; 3]>> {
        check_time(self.time_range(), tau)?;
        let s = (tau - self.radius).clamp(0.0, self.t_end - self.radius);
        Ok(self
            .coeffs
            .iter()
            .map(|c| [0, 1, 2].map(|f| interp_cubic(&c[f], self.h, s)))
            .collect())
    }
}

impl CauchyData for TraceData {
    fn radius(&self) -> f64 {
        self.radius
    }

    fn time_range(&self) -> (f64, f64) {
        (self.radius, self.t_end)
    }

    fn sample(&self, dir: [f64; 3], tau: f64) -> Result<[f64; 3]> {
        let c = self.coefficients_at(tau)?;
        let y = eval_at_direction(self.lmax, dir);
        let mut out = [0.0; 3];
        for (cn, yn) in c.iter().zip(&y) {
            for f in 0..3 {
                out[f] += cn[f] * yn;
            }
        }
        Ok(out)
    }

    fn sample_ring(&self, dirs: &[[f64; 3]], tau: f64, out: &mut Vec<[f64; 3]>) -> Result<()> {
        let c = self.coefficients_at(tau)?;
        out.clear();
        for d in dirs {
            let y = eval_at_direction(self.lmax, *d);
            let mut v = [0.0; 3];
            for (cn, yn) in c.iter().zip(&y) {
                for f in 0..3 {
                    v[f] += cn[f] * yn;
                }
            }
            out.push(v);
        }
        Ok(())
    }
}

/// Cauchy data from a closed-form solution `f(y, t) -> (u, u_t, u_r)`.
pub struct AnalyticCauchy<F> {
    pub radius: f64,
    pub t_end: f64,
    pub f: F,
}

impl<F> CauchyData for AnalyticCauchy<F>
where
    F: Fn([f64; 3], f64) -> [f64; 3] + Sync,
{
    fn radius(&self) -> f64 {
        self.radius
    }

    fn time_range(&self) -> (f64, f64) {
        (self.radius, self.t_end)
    }

    fn sample(&self, dir: [f64; 3], tau: f64) -> Result<[f64; 3]> {
        check_time(self.time_range(), tau)?;
        let r = self.radius;
        Ok((self.f)([r * dir[0], r * dir[1], r * dir[2]], tau))
    }
}

/// Kernel variant of the surface integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum KirchhoffForm {
    /// `u_r/ρ + (u/ρ² − u_t/ρ) ∂_n ρ` at `τ = t + ρ`.
    Corrected,
    /// `u_r/ρ + (u/ρ² + u_t/ρ) (y−x)·y/ρ` at `τ = t + ρ`.
    Printed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KirchhoffConfig {
    pub kappa: f64,
    /// Gauss–Legendre nodes in `ln ρ`; the azimuthal grid has twice as many.
    pub order: usize,
    pub form: KirchhoffForm,
    pub calibrated: bool,
}

impl KirchhoffConfig {
    pub fn uncalibrated(order: usize, form: KirchhoffForm) -> Self {
        KirchhoffConfig {
            kappa: 1.0,
            order,
            form,
            calibrated: false,
        }
    }
}

fn check_window(data: &dyn CauchyData) -> Result<()> {
    let r = data.radius();
    let (_, t_end) = data.time_range();
    if t_end < 3.0 * r - 1e-12 {
        return Err(Error::Precondition(format!(
            "Kirchhoff recovery needs T >= 3R (R={r}, T={t_end})"
        )));
    }
    Ok(())
}

fn orthonormal_frame(e3: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let helper = if e3[2].abs() < 0.9 { [0.0, 0.0, 1.0] } else { [1.0, 0.0, 0.0] };
    let dot = helper[0] * e3[0] + helper[1] * e3[1] + helper[2] * e3[2];
    let mut e1 = [helper[0] - dot * e3[0], helper[1] - dot * e3[1], helper[2] - dot * e3[2]];
    let n = (e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]).sqrt();
    e1.iter_mut().for_each(|v| *v /= n);
    let e2 = [
        e3[1] * e1[2] - e3[2] * e1[1],
        e3[2] * e1[0] - e3[0] * e1[2],
        e3[0] * e1[1] - e3[1] * e1[0],
    ];
    (e1, e2)
}

/// Unnormalized surface integral over `|y| = R`, using rings of constant
/// `ρ = |x − y|` with Gauss–Legendre nodes in `ln ρ` (`dS = (R/|x|) ρ² d(ln ρ) dφ`).
fn kirchhoff_raw(data: &dyn CauchyData, x: [f64; 3], t: f64, order: usize, form: KirchhoffForm) -> Result<f64> {
    let big_r = data.radius();
    let d = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
    if d >= big_r {
        return Err(Error::InvalidParameter(format!(
            "evaluation point |x| = {d} must lie inside the sphere of radius {big_r}"
        )));
    }
    if order < 2 {
        return Err(Error::InvalidParameter("quadrature order must be >= 2".into()));
    }
    let n_phi = 2 * order;
    let (nodes, weights) = gauss_legendre(order);
    let e3 = if d > 1e-12 * big_r { [x[0] / d, x[1] / d, x[2] / d] } else { [0.0, 0.0, 1.0] };
    let (e1, e2) = orthonormal_frame(e3);
    let dphi = 2.0 * PI / n_phi as f64;
    let mut dirs = Vec::with_capacity(n_phi);
    let mut samples = Vec::with_capacity(n_phi);
    let mut total = 0.0;
    for (s, w) in nodes.iter().zip(&weights) {
        // Ring: polar angle γ about x̂, distance ρ, surface weight per unit φ.
        let (cos_g, rho, ring_w) = if d > 1e-12 * big_r {
            let (lo, hi) = ((big_r - d).ln(), (big_r + d).ln());
            let rho = (0.5 * (hi - lo) * s + 0.5 * (hi + lo)).exp();
            let cos_g = ((big_r * big_r + d * d - rho * rho) / (2.0 * big_r * d)).clamp(-1.0, 1.0);
            (cos_g, rho, 0.5 * (hi - lo) * w * big_r / d * rho * rho)
        } else {
            (*s, big_r, w * big_r * big_r)
        };
        let sin_g = (1.0 - cos_g * cos_g).max(0.0).sqrt();
        dirs.clear();
        for k in 0..n_phi {
            let (sp, cp) = (k as f64 * dphi).sin_cos();
            dirs.push([0, 1, 2].map(|c| sin_g * cp * e1[c] + sin_g * sp * e2[c] + cos_g * e3[c]));
        }
        let tau = t + rho;
        data.sample_ring(&dirs, tau, &mut samples)?;
        // (y − x)·y / R for y = R·dir.
        let normal = big_r - d * cos_g;
        let mut ring = 0.0;
        for [u, u_t, u_r] in samples.iter().copied() {
            ring += match form {
                KirchhoffForm::Corrected => u_r / rho + (u / (rho * rho) - u_t / rho) * normal / rho,
                KirchhoffForm::Printed => u_r / rho + (u / (rho * rho) + u_t / rho) * big_r * normal / rho,
            };
        }
        total += ring_w * dphi * ring;
    }
    Ok(total)
}

/// `u(x, t)` inside the measurement sphere from the Cauchy data on `C`.
pub fn kirchhoff_field(data: &dyn CauchyData, x: [f64; 3], t: f64, kcfg: &KirchhoffConfig) -> Result<f64> {
    check_window(data)?;
    let d = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
    if t > data.radius() + 1e-12 || t < d - 1e-12 {
        return Err(Error::Precondition(format!(
            "need |x| <= t <= R (|x|={d}, t={t}, R={})",
            data.radius()
        )));
    }
    Ok(kcfg.kappa * kirchhoff_raw(data, x, t, kcfg.order, kcfg.form)?)
}

/// An analytic free solution with interior reference values `(x, t, u(x, t))`.
pub struct KirchhoffOracle {
    pub data: Box<dyn CauchyData>,
    pub points: Vec<([f64; 3], f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KirchhoffCalibration {
    pub config: KirchhoffConfig,
    /// Relative residual of the least-squares fit.
    pub residual: f64,
}

pub const KIRCHHOFF_FIT_LIMIT: f64 = 1e-3;

/// Least-squares fit of `κ` so the formula reproduces every oracle value.
pub fn calibrate_kirchhoff(
    oracles: &[KirchhoffOracle],
    order: usize,
    form: KirchhoffForm,
) -> Result<KirchhoffCalibration> {
    if oracles.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "calibration needs at least two oracles, got {}",
            oracles.len()
        )));
    }
    let mut pairs = Vec::new();
    for o in oracles {
        check_window(o.data.as_ref())?;
        for &(x, t, v) in &o.points {
            pairs.push((kirchhoff_raw(o.data.as_ref(), x, t, order, form)?, v));
        }
    }
    let saa: f64 = pairs.iter().map(|(a, _)| a * a).sum();
    let sab: f64 = pairs.iter().map(|(a, b)| a * b).sum();
    if saa == 0.0 {
        return Err(Error::InvalidParameter("oracle integrals all vanish".into()));
    }
    let kappa = sab / saa;
    let num: f64 = pairs.iter().map(|(a, b)| (kappa * a - b).powi(2)).sum();
    let den: f64 = pairs.iter().map(|(_, b)| b * b).sum();
    let residual = ratio(num, den);
    if residual.is_nan() || residual > KIRCHHOFF_FIT_LIMIT {
        return Err(Error::Calibration {
            residual,
            limit: KIRCHHOFF_FIT_LIMIT,
        });
    }
    Ok(KirchhoffCalibration {
        config: KirchhoffConfig {
            kappa,
            order,
            form,
            calibrated: true,
        },
        residual,
    })
}

/// Evaluation points inside the ball used by the built-in oracles.
pub fn oracle_points(radius: f64) -> Vec<([f64; 3], f64)> {
    let mut pts = vec![([0.0; 3], 0.5 * radius), ([0.0; 3], radius)];
    for (frac, dir) in [
        (0.3, [1.0, 0.0, 0.0]),
        (0.5, [0.0, 0.6, 0.8]),
        (0.7, [-0.48, 0.6, 0.64]),
    ] {
        let x = dir.map(|c: f64| frac * radius * c);
        pts.push((x, frac * radius));
        pts.push((x, radius));
    }
    pts
}

/// Oracles `u ≡ 1` and `u = t` on `|y| = R`, `t ∈ [R, T]`.
pub fn standard_oracles(radius: f64, t_end: f64) -> Vec<KirchhoffOracle> {
    let pts = oracle_points(radius);
    vec![
        KirchhoffOracle {
            data: Box::new(AnalyticCauchy {
                radius,
                t_end,
                f: |_: [f64; 3], _: f64| [1.0, 0.0, 0.0],
            }),
            points: pts.iter().map(|&(x, t)| (x, t, 1.0)).collect(),
        },
        KirchhoffOracle {
            data: Box::new(AnalyticCauchy {
                radius,
                t_end,
                f: |_: [f64; 3], t: f64| [t, 1.0, 0.0],
            }),
            points: pts.iter().map(|&(x, t)| (x, t, t)).collect(),
        },
    ]
}

/// `q = (r ū)_r` on the ball `|x| ≤ R` from `ū(x) = u(x, |x|)`.
///
/// `ū` comes from the Kirchhoff formula at `r = i h < R` and directly from the
/// trace at `t = R` on the sphere itself.
pub fn kirchhoff_recover_q(trace: &CylinderTrace, grid: &CharGrid, kcfg: &KirchhoffConfig) -> Result<RecoveredPotential> {
    if !kcfg.calibrated {
        return Err(Error::Precondition("Kirchhoff normalization not calibrated".into()));
    }
    let h = grid.h;
    let radius = trace.radius;
    let n = node_count(radius, h).ok_or(Error::Misaligned {
        what: "R",
        value: radius,
        h,
    })?;
    let data = TraceData::new(trace);
    check_window(&data)?;
    let sph = SphereTransform::for_degree(trace.lmax);
    let np = sph.grid.len();
    let nm = sph.nmodes();
    let jobs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..np).map(move |g| (i, g))).collect();
    let values = jobs
        .par_iter()
        .map(|&(i, g)| {
            let r = i as f64 * h;
            if i == 0 && g > 0 {
                return Ok(f64::NAN);
            }
            let d = sph.grid.direction(g);
            kirchhoff_field(&data, d.map(|c| r * c), r, kcfg)
        })
        .collect::<Result<Vec<f64>>>()?;
    // Angular coefficients of ū at each radius.
    let mut c = vec![vec![0.0; n + 1]; nm];
    for i in 1..n {
        let coeffs = sph.analyze_slice(&values[i * np..(i + 1) * np]);
        for m in 0..nm {
            c[m][i] = coeffs[m];
        }
    }
    c[0][0] = values[0] * (4.0 * PI).sqrt();
    for (m, cm) in c.iter_mut().enumerate() {
        cm[n] = trace.angular(m).u[0];
    }
    let mut coeffs = Vec::with_capacity(nm);
    for (m, cm) in c.iter().enumerate() {
        let k = sph.basis.modes[m].degree as i32;
        let rc: Vec<f64> = cm.iter().enumerate().map(|(i, v)| i as f64 * h * v).collect();
        let a = derivative(&rc, h);
        let mut q: Vec<f64> = a
            .iter()
            .enumerate()
            .map(|(i, v)| if i == 0 { 0.0 } else { v / (i as f64 * h).powi(k) })
            .collect();
        q[0] = if k == 0 { cm[0] } else { 3.0 * q[1] - 3.0 * q[2] + q[3] };
        coeffs.push(q);
    }
    Ok(RecoveredPotential {
        domain: Domain::Ball { radius },
        potential: Representation::Harmonic(HarmonicPotential::new(trace.lmax, h, coeffs)?),
        diagnostics: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityRatio {
    pub ratio: f64,
    /// `∫_{|x|≤R} |q₁ − q₂|²`.
    pub numerator: f64,
    /// `∫_C |Δu|² + |∇Δu|² + |Δu_t|²`.
    pub denominator: f64,
    /// Set when both potentials coincide and the ratio is reported as 0.
    pub identical: bool,
}

/// Potential misfit on the ball over trace misfit on the cylinder, from two
/// nonlinear forward runs.
pub fn stability_ratio(
    q1: &HarmonicPotential,
    q2: &HarmonicPotential,
    grid: CharGrid,
    radius: f64,
    t_end: f64,
) -> Result<StabilityRatio> {
    if t_end < 3.0 * radius - 1e-12 {
        return Err(Error::Precondition(format!(
            "stability ratio needs T >= 3R (R={radius}, T={t_end})"
        )));
    }
    if q1.lmax() != q2.lmax() || (q1.h - q2.h).abs() > 1e-15 || q1.nr() != q2.nr() {
        return Err(Error::SizeMismatch {
            what: "potentials",
            expected: q1.basis.len() * q1.nr(),
            got: q2.basis.len() * q2.nr(),
        });
    }
    let diff = q1.combine(1.0, q2, -1.0)?;
    let zero = HarmonicPotential::zeros(q1.lmax(), q1.h, q1.r_max())?;
    let numerator = {
        let (num, _) = domain_norms(&diff, &zero, &Domain::Ball { radius }, None);
        num
    };
    let (f1, f2) = rayon::join(|| forward_nonlinear(q1, grid), || forward_nonlinear(q2, grid));
    let t1 = extract_trace(&f1?, radius, t_end)?;
    let t2 = extract_trace(&f2?, radius, t_end)?;
    let mut dens = vec![0.0; t1.len()];
    for n in 0..t1.modes.len() {
        let (a, b) = (t1.angular(n), t2.angular(n));
        let l = t1.modes[n].degree as f64;
        for j in 0..dens.len() {
            let du = a.u[j] - b.u[j];
            let dur = a.u_r[j] - b.u_r[j];
            let dut = a.u_t[j] - b.u_t[j];
            dens[j] += du * du * (1.0 + l * (l + 1.0) / (radius * radius)) + dur * dur + dut * dut;
        }
    }
    let denominator = radius * radius * trapezoid(&dens, grid.h);
    if numerator == 0.0 {
        return Ok(StabilityRatio {
            ratio: 0.0,
            numerator,
            denominator,
            identical: true,
        });
    }
    if denominator == 0.0 {
        return Err(Error::Instability { numerator });
    }
    Ok(StabilityRatio {
        ratio: numerator / denominator,
        numerator,
        denominator,
        identical: false,
    })
}
