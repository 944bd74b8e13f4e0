//! Acceptance suite: one PASS/FAIL line per criterion.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use conewave::energy::{
    audit_field, audit_identities, energy_report, mdef_forcing, sideways_energy, sideways_identity_gap,
};
use conewave::goursat1d::calibration::{calibrate_mode_coefficient, ACCEPT, REJECT};
use conewave::goursat1d::ClosedForm;
use conewave::inverse::{
    calibrate_kirchhoff, invert_linearized_modes, kirchhoff_field, kirchhoff_recover_q, layer_strip_radial,
    stability_ratio, standard_oracles, AnalyticCauchy, InversionConfig, KirchhoffForm,
};
use conewave::sphgrid::{mode_index, qgamma, HarmonicCoeffs, PAIRS};
use conewave::*;

type Outcome = (bool, String);
type Criterion = (&'static str, fn() -> Outcome);

fn orders(errs: &[f64]) -> Vec<f64> {
    errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", parts.join(", "))
}

/// Regular part for constant `q_b = c`: `2√c I₁(√c s)/s`, `s² = t² − r²`.
fn constant_background(c: f64, r: f64, t: f64) -> f64 {
    let x = 0.25 * (t * t - r * r);
    let mut term = c;
    let mut sum = term;
    for m in 0..60 {
        term *= c * x / ((m + 1) as f64 * (m + 2) as f64);
        sum += term;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    sum
}

const HS: [f64; 3] = [1.0 / 64.0, 1.0 / 128.0, 1.0 / 256.0];

fn c1_solver_order() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();

    let c = 0.7;
    let errs: Vec<f64> = HS
        .iter()
        .map(|&h| {
            let g = CharGrid::new(h, 1.0).unwrap();
            let qb = RadialProfile::from_fn(h, 1.0, |_| c).unwrap();
            let u = solve_background(&qb, g).unwrap();
            let mut e: f64 = 0.0;
            for i in 0..=g.n {
                for j in i..=(2 * g.n - i) {
                    let (r, t) = (i as f64 * h, j as f64 * h);
                    e = e.max((u.at(i, j).unwrap() - constant_background(c, r, t)).abs());
                }
            }
            e
        })
        .collect();
    let o = orders(&errs);
    ok &= o.iter().all(|&x| x >= 1.8);
    notes.push(format!("background {}", fmt(&o)));

    // Self-convergence for a localized background.
    let bump = |r: f64| 0.3 * (-(r - 0.5f64).powi(2) / 0.02).exp();
    let sols: Vec<(CharGrid, ModeCone)> = [1.0 / 64.0, 1.0 / 128.0, 1.0 / 256.0, 1.0 / 512.0]
        .iter()
        .map(|&h| {
            let g = CharGrid::new(h, 1.0).unwrap();
            let qb = RadialProfile::from_fn(h, 1.0, bump).unwrap();
            (g, solve_background(&qb, g).unwrap())
        })
        .collect();
    let diffs: Vec<f64> = sols
        .windows(2)
        .map(|w| {
            let (gc, uc) = &w[0];
            let (_, uf) = &w[1];
            let mut e: f64 = 0.0;
            for i in 0..=gc.n {
                for j in i..=(2 * gc.n - i) {
                    e = e.max((uc.at(i, j).unwrap() - uf.at(2 * i, 2 * j).unwrap()).abs());
                }
            }
            e
        })
        .collect();
    let o = orders(&diffs);
    ok &= o.iter().all(|&x| x >= 1.8);
    notes.push(format!("background bump self {}", fmt(&o)));

    for k in [0usize, 1, 2, 4] {
        let errs: Vec<f64> = HS
            .iter()
            .map(|&h| {
                let g = CharGrid::new(h, 1.0).unwrap();
                let qb = RadialProfile::from_fn(h, 1.0, |r| 0.5 + 0.25 * r * r).unwrap();
                let ex = ClosedForm::new(
                    |r, t| (1.0 + r * r) * (t + 0.5).sin(),
                    |r, t| -(1.0 + r * r) * (t + 0.5).sin(),
                    |r, t| 2.0 * r * (t + 0.5).sin(),
                    |_, t| 2.0 * (t + 0.5).sin(),
                );
                let f = manufactured_residual(&ex, k, ModeCoefficient::Derived, &qb, g);
                let cone = |r: f64| (1.0 + r * r) * (r + 0.5).sin();
                let s = solve_mode(k, ModeCoefficient::Derived, &qb, &f, &cone, g).unwrap();
                let mut e: f64 = 0.0;
                for i in 0..=g.n {
                    for j in i..=(2 * g.n - i) {
                        let (r, t) = (i as f64 * h, j as f64 * h);
                        let exact = (1.0 + r * r) * (t + 0.5).sin();
                        e = e.max((s.at(i, j).unwrap() - exact).abs() * r.powi(k as i32));
                    }
                }
                e
            })
            .collect();
        let o = orders(&errs);
        ok &= o.iter().all(|&x| x >= 1.8);
        notes.push(format!("k={k} {}", fmt(&o)));
    }
    (ok, notes.join("; "))
}

fn c2_goursat_contract() -> Outcome {
    let h = 1.0 / 64.0;
    let g = CharGrid::new(h, 1.0).unwrap();
    let base = |r: f64| 0.4 * (-(r - 0.4f64).powi(2) / 0.05).exp();
    let maxima: Vec<f64> = [1.0, 0.5, 0.25]
        .iter()
        .map(|s| {
            let qb = RadialProfile::from_fn(h, 1.0, |r| s * base(r)).unwrap();
            solve_background(&qb, g).unwrap().max_abs()
        })
        .collect();
    let monotone = maxima.windows(2).all(|w| w[1] < w[0]);
    let shrinking = maxima[2] < 0.3 * maxima[0];
    let zero = solve_background(&RadialProfile::zeros(h, 1.0).unwrap(), g).unwrap().max_abs();
    let q0 = HarmonicPotential::zeros(2, h, 1.0).unwrap();
    let zero_nl = forward_nonlinear(&q0, g).unwrap().max_abs();
    let ok = monotone && shrinking && zero <= 1e-14 && zero_nl <= 1e-14;
    (
        ok,
        format!(
            "max|u| {} ; q=0 gives {:.1e} (radial), {:.1e} (harmonic)",
            fmt(&maxima),
            zero,
            zero_nl
        ),
    )
}

fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                c[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    c
}

fn c3_spherical_algebra() -> Outcome {
    let t = SphereTransform::for_degree(8);
    let nm = t.nmodes();
    let np = t.grid.len();
    let w = t.grid.weights();
    let mut gram: f64 = 0.0;
    for a in 0..nm {
        for b in 0..nm {
            let s: f64 = (0..np).map(|g| w[g] * t.basis_value(g, a) * t.basis_value(g, b)).sum();
            gram = gram.max((s - if a == b { 1.0 } else { 0.0 }).abs());
        }
    }
    let om = |i, j| t.omega_matrix(i, j).unwrap();
    let mut stokes: f64 = 0.0;
    for &(i, j) in &PAIRS {
        let m = om(i, j);
        for a in 0..nm {
            for b in 0..nm {
                stokes = stokes.max((m[a * nm + b] + m[b * nm + a]).abs());
            }
        }
    }
    // [Ω_ij, Ω_ik] = Ω_kj and [Ω_ij, Ω] = 0.
    let mut comm: f64 = 0.0;
    for (i, j, k) in [(1, 2, 3), (2, 1, 3), (3, 1, 2), (1, 3, 2), (2, 3, 1), (3, 2, 1)] {
        let (a, b, c) = (om(i, j), om(i, k), om(k, j));
        let ab = matmul(&a, &b, nm);
        let ba = matmul(&b, &a, nm);
        for x in 0..nm * nm {
            comm = comm.max((ab[x] - ba[x] - c[x]).abs());
        }
    }
    let mut lap = vec![0.0; nm * nm];
    for &(i, j) in &PAIRS {
        let m = om(i, j);
        for (l, v) in lap.iter_mut().zip(matmul(&m, &m, nm)) {
            *l += v;
        }
    }
    for &(i, j) in &PAIRS {
        let m = om(i, j);
        let (x, y) = (matmul(&m, &lap, nm), matmul(&lap, &m, nm));
        for z in 0..nm * nm {
            comm = comm.max((x[z] - y[z]).abs() / 100.0);
        }
    }
    // |∇_S f|² = Σ_{i<j} (Ω_ij f)² pointwise.
    let c = HarmonicCoeffs {
        values: (0..nm).map(|n| ((n * 37 % 11) as f64 - 5.0) / 5.0).collect(),
    };
    let grad = t.surface_gradient_sq(&c).unwrap();
    let mut sum = vec![0.0; np];
    for &(i, j) in &PAIRS {
        let f = t.synthesize(&t.omega_coeffs(i, j, &c).unwrap()).unwrap();
        for (s, v) in sum.iter_mut().zip(&f.values) {
            *s += v * v;
        }
    }
    let scale = grad.values.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let decomposition = grad
        .values
        .iter()
        .zip(&sum)
        .fold(0.0f64, |a, (g, s)| a.max((g - s).abs()))
        / scale;
    let ok = gram < 1e-10 && stokes < 1e-10 && comm < 1e-8 && decomposition < 1e-8;
    (
        ok,
        format!(
            "gram {gram:.1e}, antisymmetry {stokes:.1e}, commutators {comm:.1e}, gradient split {decomposition:.1e}"
        ),
    )
}

fn c4_energy() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    let hs = [1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0];
    let audit = audit_identities(2, &hs).unwrap();
    ok &= audit.passed(0.9);
    let o = audit.orders();
    notes.push(format!(
        "wr {} wt {}",
        fmt(&o.iter().map(|x| x.0).collect::<Vec<_>>()),
        fmt(&o.iter().map(|x| x.1).collect::<Vec<_>>())
    ));

    let gaps: Vec<f64> = hs
        .iter()
        .map(|&h| {
            let g = CharGrid::new(h, 1.0).unwrap();
            let geo = Geometry::new(0.25, 1.25, &g).unwrap();
            let w = audit_field(2, g);
            let f = w.wave_residual();
            sideways_identity_gap(&w, &f, &geo, 0.75).unwrap()
        })
        .collect();
    let o = orders(&gaps);
    ok &= o.iter().all(|&x| x >= 0.9);
    notes.push(format!("sideways gap {}", fmt(&o)));

    let g = CharGrid::new(1.0 / 64.0, 1.0).unwrap();
    let geo = Geometry::new(0.25, 1.25, &g).unwrap();
    let w = LatticeField::from_fn(2, g, |m, r, t| (r - 0.25).powi(2) * (1.0 + t + m as f64).sin());
    let jr = sideways_energy(&w, &geo, 0.25).unwrap();
    let scale = w.max_abs().powi(2).max(1.0);
    ok &= jr < 1e-12 * scale;
    notes.push(format!("J(R) {jr:.1e}"));

    let h = 1.0 / 64.0;
    let qb = RadialProfile::from_fn(h, 1.0, |r| 0.5 + 0.25 * r * r).unwrap();
    let q = HarmonicPotential::from_fn(2, h, 1.0, |n, r| {
        if n == 0 {
            0.0
        } else {
            0.3 * (0.4 * n as f64 + r).cos()
        }
    })
    .unwrap();
    let (field, _) = forward_linearized(&qb, &q, g, 0.25, 1.25).unwrap();
    let bg = solve_background(&qb, g).unwrap();
    let v = LatticeField::from_volumetric(&field).times_radius();
    let mut worst = f64::INFINITY;
    for &(i, j) in &PAIRS {
        let wij = v.omega(i, j).unwrap();
        let f = mdef_forcing(&wij, &qb, &q, &bg, (i, j)).unwrap();
        let rep = energy_report(&wij, &f, &geo).unwrap();
        worst = rep.inequality_slack.iter().fold(worst, |a, &s| a.min(s));
    }
    ok &= worst >= -5.0 * h;
    notes.push(format!("min pipeline slack {worst:.3e} (bound {:.3e})", -5.0 * h));
    (ok, notes.join("; "))
}

fn c5_calibration() -> Outcome {
    let rep = calibrate_mode_coefficient(1.0 / 64.0).unwrap();
    let accepted = rep.candidates.iter().filter(|c| c.mismatch < ACCEPT).count();
    let rejected = rep.candidates.iter().filter(|c| c.mismatch > REJECT).count();
    let ok = accepted == 1 && rejected == rep.candidates.len() - 1 && rep.selected == Some(ModeCoefficient::Derived);
    let detail: Vec<String> = rep
        .candidates
        .iter()
        .map(|c| format!("{:?} (c={}) mismatch {:.3e}", c.candidate, c.coefficient, c.mismatch))
        .collect();
    (ok, format!("{}; selected {:?}", detail.join(", "), rep.selected))
}

fn bump(r: f64) -> f64 {
    0.3 * (-(r - 0.6f64).powi(2) / 0.02).exp()
}

fn c6_layer_stripping() -> Outcome {
    let errs: Vec<f64> = [1.0 / 64.0, 1.0 / 128.0]
        .iter()
        .map(|&h| {
            let g = CharGrid::new(h, 1.0).unwrap();
            let q = RadialProfile::from_fn(h, 1.0, bump).unwrap();
            let ub = solve_background(&q, g).unwrap();
            let tr = cylinder_trace_mode(&ub, 0.5, 1.5).unwrap();
            let rec = layer_strip_radial(&tr, &InversionConfig::default()).unwrap();
            rec.relative_error(&HarmonicPotential::radial(0, &q).unwrap()).unwrap()
        })
        .collect();
    let ratio = errs[0] / errs[1];
    let ok = errs[1] < 0.02 && ratio >= 1.7;
    (ok, format!("rel L2 {:.3e} at h=1/128, ratio {ratio:.2}", errs[1]))
}

fn c7_linearized() -> Outcome {
    let h = 1.0 / 128.0;
    let g = CharGrid::new(h, 1.0).unwrap();
    let qb = RadialProfile::from_fn(h, 1.0, |r| 0.5 + 0.25 * r * r).unwrap();
    let active = [
        mode_index(0, 0),
        mode_index(1, -1),
        mode_index(2, 1),
        mode_index(3, 0),
        mode_index(4, -3),
        mode_index(4, 4),
    ];
    let q = HarmonicPotential::from_fn(4, h, 1.0, |n, r| match active.iter().position(|&a| a == n) {
        Some(p) => 0.3 * (1.0 + 0.2 * p as f64) * (-(r - 0.55 - 0.03 * p as f64).powi(2) / 0.03).exp(),
        None => 0.0,
    })
    .unwrap();
    let (_, tr) = forward_linearized(&qb, &q, g, 0.5, 1.5).unwrap();
    let rec = invert_linearized_modes(&tr, &qb, &InversionConfig::default()).unwrap();
    let errs = rec.mode_errors(&q).unwrap();
    let worst_active = active.iter().map(|&n| errs[n]).fold(0.0, f64::max);
    let worst_idle = (0..errs.len())
        .filter(|n| !active.contains(n))
        .map(|n| errs[n])
        .fold(0.0, f64::max);

    let zero = CylinderTrace::zeros(4, 0.5, 1.5, h).unwrap();
    let rz = invert_linearized_modes(&zero, &qb, &InversionConfig::default()).unwrap();
    let zq = rz.as_harmonic().unwrap();
    let exact_zero = zq.coeffs.iter().flatten().all(|v| *v == 0.0);
    let ok = worst_active < 0.02 && worst_idle < 1e-10 && exact_zero;
    (
        ok,
        format!("worst active mode {worst_active:.3e}, idle {worst_idle:.1e}, zero trace exact: {exact_zero}"),
    )
}

fn c8_kirchhoff() -> Outcome {
    let (radius, t_end) = (0.625, 2.0);
    let cals: Vec<_> = [16, 32, 64]
        .iter()
        .map(|&o| calibrate_kirchhoff(&standard_oracles(radius, t_end), o, KirchhoffForm::Corrected).unwrap())
        .collect();
    let max_res = cals.iter().map(|c| c.residual).fold(0.0, f64::max);
    let k0 = cals[0].config.kappa;
    let spread = cals.iter().map(|c| (c.config.kappa - k0).abs() / k0).fold(0.0, f64::max);
    let printed_rejected =
        calibrate_kirchhoff(&standard_oracles(radius, t_end), 32, KirchhoffForm::Printed).is_err();

    let h = 1.0 / 64.0;
    let rho = 1.3125;
    let g = CharGrid::new(h, rho).unwrap();
    let qb = RadialProfile::zeros(h, rho).unwrap();
    let q = HarmonicPotential::from_fn(2, h, rho, |n, r| match n {
        0 => 0.5 * (-(r / 0.3f64).powi(2)).exp(),
        2 => 0.3 * (-(r / 0.3f64).powi(2)).exp(),
        6 => 0.4 * (-(r / 0.3f64).powi(2)).exp(),
        _ => 0.0,
    })
    .unwrap();
    let (_, tr) = forward_linearized(&qb, &q, g, radius, t_end).unwrap();
    let rec = kirchhoff_recover_q(&tr, &g, &cals[1].config).unwrap();
    let err = rec.relative_error(&q).unwrap();

    let short = AnalyticCauchy {
        radius,
        t_end: 2.0 * radius,
        f: |_: [f64; 3], t: f64| [t, 1.0, 0.0],
    };
    let refused = kirchhoff_field(&short, [0.0; 3], 0.5 * radius, &cals[1].config).is_err();
    let ok = max_res < 1e-6 && spread < 1e-4 && err < 0.05 && refused && printed_rejected;
    (
        ok,
        format!(
            "fit residual {max_res:.1e}, kappa {k0:.10} (4 pi kappa = {:.6}), spread {spread:.1e}, recovery {err:.3e}, T=2R refused: {refused}, printed kernel rejected: {printed_rejected}",
            4.0 * PI * k0
        ),
    )
}

fn c9_qgamma() -> Outcome {
    let h = 1.0 / 64.0;
    let radial = HarmonicPotential::from_fn(2, h, 1.0, |n, r| if n == 0 { 1.0 + r } else { 0.0 }).unwrap();
    let g_radial = qgamma(&radial, 0.25, 1.25, 17).unwrap().gamma;

    // q_n = 1 for (l, m) = (2, 0): a = r², p = r³/3.
    let n = mode_index(2, 0);
    let single = HarmonicPotential::from_fn(2, h, 1.0, |m, _| if m == n { 1.0 } else { 0.0 }).unwrap();
    let rep = qgamma(&single, 0.25, 1.25, 17).unwrap();
    let mut worst: f64 = 0.0;
    for (r, g) in rep.radii.iter().zip(&rep.ratios) {
        let s = (1.0 + 6.0 / (r * r)).sqrt();
        let (p, a) = (r.powi(3) / 3.0, r * r);
        let closed = (p * s * s + a * s) / (p * s + a);
        worst = worst.max((g.unwrap() - closed).abs());
    }
    let multi = HarmonicPotential::from_fn(2, h, 1.0, |m, r| (m as f64 + 1.0) * (1.0 + r).recip()).unwrap();
    let g_multi = qgamma(&multi, 0.25, 1.25, 17).unwrap().gamma;
    let ok = g_radial == 1.0 && worst < 1e-6 && g_multi.is_finite();
    (
        ok,
        format!("radial gamma {g_radial}, single-mode closed-form error {worst:.1e}, finite-mode gamma {g_multi:.4}"),
    )
}

fn c10_stability() -> Outcome {
    let h = 1.0 / 64.0;
    let rho = 1.0625;
    let g = CharGrid::new(h, rho).unwrap();
    let m = 1.0;
    let gauss = |r: f64, c: f64, w: f64| (-((r - c) / w).powi(2)).exp();
    let q1 = HarmonicPotential::from_fn(2, h, rho, |n, r| match n {
        0 => 0.2 * gauss(r, 0.0, 0.3),
        2 => 0.1 * gauss(r, 0.0, 0.3),
        _ => 0.0,
    })
    .unwrap();
    let ratios: Vec<f64> = [0.1, 0.05, 0.01]
        .iter()
        .map(|s| {
            let q2 = HarmonicPotential::from_fn(2, h, rho, |n, r| match n {
                0 => s * m * gauss(r, 0.2, 0.25),
                6 => 0.5 * s * m * gauss(r, 0.0, 0.3),
                _ => 0.0,
            })
            .unwrap();
            stability_ratio(&q1, &q2, g, 0.5, 1.625).unwrap().ratio
        })
        .collect();
    let spread = ratios.iter().cloned().fold(0.0, f64::max) / ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    (
        spread < 10.0 && ratios.iter().all(|r| r.is_finite()),
        format!("ratios {} (max/min {spread:.2})", fmt(&ratios)),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("solver order", c1_solver_order),
        ("Goursat contract", c2_goursat_contract),
        ("spherical algebra", c3_spherical_algebra),
        ("energy identities", c4_energy),
        ("mode-coefficient calibration", c5_calibration),
        ("layer stripping", c6_layer_stripping),
        ("linearized mode inversion", c7_linearized),
        ("Kirchhoff recovery", c8_kirchhoff),
        ("Q_gamma", c9_qgamma),
        ("stability ratio", c10_stability),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (ok, detail) = f();
        if !ok {
            failed += 1;
        }
        println!(
            "{} criterion {} ({name}): {detail} [{:.1}s]",
            if ok { "PASS" } else { "FAIL" },
            i + 1,
            start.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
