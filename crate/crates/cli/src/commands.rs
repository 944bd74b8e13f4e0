use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use conewave::assembly::{background_field, load_field, save_field};
use conewave::energy::{audit_field, energy_report, mdef_forcing, EnergyReport};
use conewave::goursat1d::ClosedForm;
use conewave::inverse::{
    calibrate_kirchhoff, invert_linearized_modes, kirchhoff_recover_q, layer_strip_radial, layer_strip_trace,
    standard_oracles, KirchhoffForm, RecoveredPotential,
};
use conewave::sphgrid::qgamma as qgamma_report;
use conewave::{
    cylinder_trace_mode, extract_trace, forward_linearized, forward_nonlinear, load_trace, manufactured_residual,
    save_trace, solve_background, solve_mode, CharGrid, CylinderTrace, Geometry, HarmonicPotential, LatticeField,
    ModeCoefficient, RadialProfile, VolumetricField,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{load_potential, Experiment, ExperimentConfig, Model, PotentialSpec};
use crate::manifest::{sha256_hex, Run, SubRun};
use crate::{CliError, Method};

/// Run `body`, then write the manifest whether or not it succeeded.
fn with_run(
    command: &str,
    cfg: &ExperimentConfig,
    out: &Path,
    body: impl FnOnce(&mut Run) -> Result<(), CliError>,
) -> Result<bool, CliError> {
    let mut run = Run::new(command, cfg, out)?;
    match body(&mut run) {
        Ok(()) => run.finish(None),
        Err(e) => {
            run.finish(Some(e.to_string()))?;
            Err(e)
        }
    }
}

fn finite(values: impl IntoIterator<Item = f64>) -> bool {
    values.into_iter().all(f64::is_finite)
}

fn trace_values(tr: &CylinderTrace) -> impl Iterator<Item = f64> + '_ {
    tr.modes
        .iter()
        .flat_map(|m| m.u.iter().chain(&m.u_t).chain(&m.u_r).copied())
}

fn radial_profile(cfg: &ExperimentConfig, q: &HarmonicPotential) -> Result<RadialProfile, CliError> {
    if q.coeffs.iter().skip(1).flatten().any(|v| *v != 0.0) {
        return Err(CliError::validation("model", "radial model needs a radial potential"));
    }
    let c0 = (4.0 * PI).sqrt();
    Ok(RadialProfile::new(
        cfg.h,
        q.coeffs[0].iter().map(|v| v / c0).collect(),
    )?)
}

fn simulate(cfg: &ExperimentConfig, q: &HarmonicPotential) -> Result<(VolumetricField, CylinderTrace), CliError> {
    let grid = cfg.grid()?;
    let out = match cfg.model {
        Model::Radial => {
            let f = background_field(&radial_profile(cfg, q)?, cfg.lmax, grid)?;
            let tr = extract_trace(&f, cfg.radius, cfg.t_end)?;
            (f, tr)
        }
        Model::Linearized => forward_linearized(&cfg.background()?, q, grid, cfg.radius, cfg.t_end)?,
        Model::Nonlinear => {
            let f = forward_nonlinear(q, grid)?;
            let tr = extract_trace(&f, cfg.radius, cfg.t_end)?;
            (f, tr)
        }
    };
    Ok(out)
}

fn check_potential_shape(cfg: &ExperimentConfig, q: &HarmonicPotential) -> Result<(), CliError> {
    if q.lmax() != cfg.lmax {
        return Err(CliError::validation(
            "lmax",
            format!("potential has lmax {} but config says {}", q.lmax(), cfg.lmax),
        ));
    }
    if (q.h - cfg.h).abs() > 1e-12 * cfg.h || q.r_max() + 1e-12 < cfg.rho {
        return Err(CliError::validation(
            "h",
            format!("potential sampled at h = {} on [0, {}] does not cover the config grid", q.h, q.r_max()),
        ));
    }
    Ok(())
}

/// `forward`: trace (`trace.txt`), per-mode summary (`summary.csv`), optional field dump.
pub fn forward(cfg: &ExperimentConfig, out: &Path) -> Result<bool, CliError> {
    let q = cfg.require_potential()?;
    check_potential_shape(cfg, &q)?;
    with_run("forward", cfg, out, |run| {
        let (field, trace) = simulate(cfg, &q)?;
        save_trace(&trace, &run.out.join("trace.txt"))?;
        run.record("trace.txt")?;
        let mut csv = String::from("mode,l,m,max_abs_field,max_abs_trace\n");
        for (n, mode) in field.basis.modes.iter().enumerate() {
            let tm = &trace.modes[n];
            let tmax = tm.u.iter().chain(&tm.u_r).fold(0.0f64, |a, v| a.max(v.abs()));
            let _ = writeln!(
                csv,
                "{n},{},{},{:e},{:e}",
                mode.degree,
                mode.order,
                field.modes[n].max_abs(),
                tmax
            );
        }
        run.write("summary.csv", &csv)?;
        if cfg.save_field {
            for p in save_field(&field, &run.out.join("field"))? {
                let rel = p.strip_prefix(&run.out).unwrap_or(&p).to_string_lossy().into_owned();
                run.record(&rel)?;
            }
        }
        run.check("trace_finite", finite(trace_values(&trace)), trace.max_abs());
        Ok(())
    })
}

fn add_noise(cfg: &ExperimentConfig, trace: &CylinderTrace) -> Result<CylinderTrace, CliError> {
    if cfg.noise == 0.0 {
        return Ok(trace.clone());
    }
    let normal = Normal::new(0.0, cfg.noise).map_err(|e| CliError::validation("noise", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(trace.perturbed(|| normal.sample(&mut rng)))
}

fn check_trace(cfg: &ExperimentConfig, trace: &CylinderTrace) -> Result<(), CliError> {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1.0);
    if !close(trace.radius, cfg.radius) || !close(trace.t_end, cfg.t_end) || !close(trace.h, cfg.h) {
        return Err(CliError::validation(
            "trace",
            format!(
                "trace has R = {}, T = {}, h = {} but config has R = {}, T = {}, h = {}",
                trace.radius, trace.t_end, trace.h, cfg.radius, cfg.t_end, cfg.h
            ),
        ));
    }
    Ok(())
}

fn error_report(run: &mut Run, rec: &RecoveredPotential, truth: &HarmonicPotential, threshold: f64) -> Result<(), CliError> {
    let total = rec.relative_error(truth)?;
    let modes = rec.mode_errors(truth)?;
    let mut csv = String::from("mode,l,m,error\n");
    for (n, e) in modes.iter().enumerate() {
        let m = &truth.basis.modes[n];
        let _ = writeln!(csv, "{n},{},{},{e:e}", m.degree, m.order);
    }
    let _ = writeln!(csv, "all,,,{total:e}");
    run.write("errors.csv", &csv)?;
    run.check("relative_l2_below_threshold", total < threshold, total);
    Ok(())
}

/// `invert`: `recovered.json`, `diagnostics.csv` (layer, mode, r, value, growth, update)
/// and, when the config names the true potential, `errors.csv`.
pub fn invert(cfg: &ExperimentConfig, out: &Path, trace_path: &Path, method: Method) -> Result<bool, CliError> {
    if matches!(method, Method::Kirchhoff) && cfg.t_end < 3.0 * cfg.radius - 1e-12 {
        return Err(CliError::validation(
            "T",
            format!("kirchhoff needs T >= 3R, got T = {} and 3R = {}", cfg.t_end, 3.0 * cfg.radius),
        ));
    }
    let trace = load_trace(trace_path)?;
    check_trace(cfg, &trace)?;
    let truth = cfg.potential()?;
    if let Some(q) = &truth {
        check_potential_shape(cfg, q)?;
    }
    let q_b = cfg.background()?;
    let grid = cfg.grid()?;
    with_run("invert", cfg, out, |run| {
        let data = add_noise(cfg, &trace)?;
        let rec = match method {
            Method::LayerStrip => layer_strip_trace(&data, &cfg.inversion)?,
            Method::Linearized => invert_linearized_modes(&data, &q_b, &cfg.inversion)?,
            Method::Kirchhoff => {
                let cal = calibrate_kirchhoff(
                    &standard_oracles(cfg.radius, cfg.t_end),
                    cfg.kirchhoff_order,
                    KirchhoffForm::Corrected,
                )?;
                let summary = serde_json::json!({
                    "kappa": cal.config.kappa,
                    "four_pi_kappa": 4.0 * PI * cal.config.kappa,
                    "residual": cal.residual,
                    "order": cfg.kirchhoff_order,
                });
                run.write("calibration.json", &serde_json::to_string_pretty(&summary).expect("json"))?;
                run.check("kirchhoff_calibration", cal.residual < 1e-6, cal.residual);
                kirchhoff_recover_q(&data, &grid, &cal.config)?
            }
        };
        run.write("recovered.json", &rec.as_harmonic()?.to_json()?)?;
        run.write("diagnostics.csv", &rec.diagnostics_csv())?;
        if let Some(q) = &truth {
            error_report(run, &rec, q, cfg.threshold)?;
        }
        Ok(())
    })
}

fn write_energy(run: &mut Run, tag: &str, rep: &EnergyReport) -> Result<(), CliError> {
    run.write(&format!("energy_{tag}_sideways.csv"), &rep.sideways_csv())?;
    run.write(&format!("energy_{tag}_time.csv"), &rep.time_csv())?;
    let text = serde_json::to_string_pretty(&rep.summary_json()).expect("json");
    run.write(&format!("energy_{tag}_summary.json"), &text)?;
    run.check(
        &format!("{tag}_finite"),
        finite(
            rep.sideways
                .iter()
                .chain(&rep.sideways_gap)
                .chain(&rep.time)
                .chain(&rep.inequality_slack)
                .copied()
                .chain([rep.residual_wr, rep.residual_wt]),
        ),
        rep.j_at_r,
    );
    Ok(())
}

fn max_gap(rep: &EnergyReport) -> f64 {
    rep.sideways_gap.iter().fold(0.0, |a, v| a.max(*v))
}

/// `energy-audit`: `energy_<tag>_{sideways,time}.csv` with headers `rho,J,gap` and
/// `s,E,slack`, plus `energy_<tag>_summary.json`.
///
/// With `--field`, the field `v = r U` is audited with its own discrete wave
/// residual as forcing; for a linearized config with `lmax >= 1` the angular
/// derivative `Ω_12 v` is audited as well. Without a field, the built-in smooth
/// field is audited at `h` and `h/2` and the refinement ratios are recorded.
pub fn energy_audit(cfg: &ExperimentConfig, out: &Path, field: Option<&Path>) -> Result<bool, CliError> {
    let loaded = field.map(load_field).transpose()?;
    let q = cfg.potential()?;
    if let Some(f) = &loaded {
        Geometry::new(cfg.radius, cfg.t_end, &f.grid)?;
    } else {
        Geometry::new(cfg.radius, cfg.t_end, &cfg.grid()?)?;
        Geometry::new(cfg.radius, cfg.t_end, &cfg.refined(2).grid()?)?;
    }
    with_run("energy-audit", cfg, out, |run| {
        match &loaded {
            Some(f) => {
                let geo = Geometry::new(cfg.radius, cfg.t_end, &f.grid)?;
                let v = LatticeField::from_volumetric(f).times_radius();
                let rep = energy_report(&v, &v.wave_residual(), &geo)?;
                write_energy(run, "field", &rep)?;
                if let (Model::Linearized, Some(q), true) = (cfg.model, &q, f.lmax() >= 1) {
                    let q_b = RadialProfile::from_fn(f.grid.h, f.grid.rho, |r| cfg.q_b.eval(r))?;
                    let bg = solve_background(&q_b, f.grid)?;
                    let w = v.omega(1, 2)?;
                    let forcing = mdef_forcing(&w, &q_b, q, &bg, (1, 2))?;
                    let rep = energy_report(&w, &forcing, &geo)?;
                    let slack = rep.inequality_slack.iter().fold(f64::INFINITY, |a, v| a.min(*v));
                    write_energy(run, "omega12", &rep)?;
                    run.check("inequality_slack", slack >= -5.0 * f.grid.h, slack);
                }
            }
            None => {
                let mut reps = Vec::new();
                for factor in [1, 2] {
                    let c = cfg.refined(factor);
                    let grid = c.grid()?;
                    let geo = Geometry::new(cfg.radius, cfg.t_end, &grid)?;
                    let w = audit_field(cfg.lmax, grid);
                    reps.push(energy_report(&w, &w.wave_residual(), &geo)?);
                }
                write_energy(run, "audit", &reps[0])?;
                write_energy(run, "audit_half", &reps[1])?;
                let gap_ratio = max_gap(&reps[0]) / max_gap(&reps[1]);
                let wr_ratio = reps[0].residual_wr / reps[1].residual_wr;
                let wt_ratio = reps[0].residual_wt / reps[1].residual_wt;
                let text = serde_json::to_string_pretty(&serde_json::json!({
                    "sideways_gap_ratio": gap_ratio,
                    "residual_wr_ratio": wr_ratio,
                    "residual_wt_ratio": wt_ratio,
                }))
                .expect("json");
                run.write("refinement.json", &text)?;
                run.check("sideways_gap_ratio", gap_ratio >= 1.8, gap_ratio);
            }
        }
        Ok(())
    })
}

/// `qgamma`: `qgamma.csv` (`r,ratio`; `undefined` where the denominator vanishes).
pub fn qgamma(cfg: &ExperimentConfig, out: &Path, potential: Option<&Path>) -> Result<bool, CliError> {
    let q = match potential {
        Some(p) => load_potential(p)?,
        None => cfg.require_potential()?,
    };
    with_run("qgamma", cfg, out, |run| {
        let rep = qgamma_report(&q, cfg.radius, cfg.t_end, cfg.qgamma_points)?;
        let mut csv = String::from("r,ratio\n");
        for (r, g) in rep.radii.iter().zip(&rep.ratios) {
            match g {
                Some(g) => writeln!(csv, "{r},{g:e}"),
                None => writeln!(csv, "{r},undefined"),
            }
            .expect("string write");
        }
        run.write("qgamma.csv", &csv)?;
        let text = serde_json::to_string_pretty(&serde_json::json!({
            "gamma": rep.gamma,
            "undefined_radii": rep.undefined_radii(),
        }))
        .expect("json");
        run.write("qgamma.json", &text)?;
        run.check("gamma_finite", rep.gamma.is_finite(), rep.gamma);
        Ok(())
    })
}

/// Weighted max error `max r^k |u_h − u|` of the manufactured mode problem.
fn mms_error(k: usize, grid: CharGrid, q_b: &RadialProfile) -> Result<f64, CliError> {
    let exact = |r: f64, t: f64| (1.0 + r * r) * (t + 0.5).sin();
    let ex = ClosedForm::new(
        exact,
        move |r, t| -exact(r, t),
        |r, t| 2.0 * r * (t + 0.5).sin(),
        |_, t| 2.0 * (t + 0.5).sin(),
    );
    let f = manufactured_residual(&ex, k, ModeCoefficient::Derived, q_b, grid);
    let cone = move |r: f64| exact(r, r);
    let s = solve_mode(k, ModeCoefficient::Derived, q_b, &f, &cone, grid)?;
    let mut e: f64 = 0.0;
    for i in 0..=grid.n {
        for j in i..=(2 * grid.n - i) {
            let (r, t) = (i as f64 * grid.h, j as f64 * grid.h);
            let v = s.at(i, j).expect("lattice node");
            e = e.max((v - exact(r, t)).abs() * r.powi(k as i32));
        }
    }
    Ok(e)
}

fn experiment_error(cfg: &ExperimentConfig) -> Result<f64, CliError> {
    let grid = cfg.grid()?;
    match cfg.experiment {
        Experiment::Mms => mms_error(cfg.k, grid, &cfg.background()?),
        Experiment::LayerStrip => {
            let q = radial_profile(cfg, &cfg.require_potential()?)?;
            let ub = solve_background(&q, grid)?;
            let tr = cylinder_trace_mode(&ub, cfg.radius, cfg.t_end)?;
            let rec = layer_strip_radial(&tr, &cfg.inversion)?;
            Ok(rec.relative_error(&HarmonicPotential::radial(0, &q)?)?)
        }
        Experiment::Zero => Ok(solve_background(&RadialProfile::zeros(cfg.h, cfg.rho)?, grid)?.max_abs()),
    }
}

/// `convergence`: `convergence.csv` (`h,error,order`; order `undefined` when an error vanishes).
pub fn convergence(cfg: &ExperimentConfig, out: &Path) -> Result<bool, CliError> {
    let levels: Vec<ExperimentConfig> = [1, 2, 4].iter().map(|&f| cfg.refined(f)).collect();
    for c in &levels {
        c.grid()?;
        if c.experiment == Experiment::LayerStrip {
            match &c.potential {
                Some(PotentialSpec::Formula { modes, .. }) if modes.is_empty() => {}
                Some(PotentialSpec::Formula { .. }) | Some(PotentialSpec::File(_)) | None => {
                    return Err(CliError::validation("q", "layer-strip convergence needs a radial `q` formula"))
                }
            }
        }
    }
    with_run("convergence", cfg, out, |run| {
        let mut errors = Vec::new();
        for c in &levels {
            let e = experiment_error(c)?;
            run.sub_run(SubRun {
                h: c.h,
                config_hash: c.hash(),
                result_hash: sha256_hex(format!("{},{e:e}", c.h).as_bytes()),
            });
            errors.push(e);
        }
        let orders: Vec<Option<f64>> = errors
            .windows(2)
            .map(|w| (w[0] > 0.0 && w[1] > 0.0).then(|| (w[0] / w[1]).log2()))
            .collect();
        let mut csv = String::from("h,error,order\n");
        for (i, (c, e)) in levels.iter().zip(&errors).enumerate() {
            let order = match i.checked_sub(1).map(|k| orders[k]) {
                None => String::new(),
                Some(Some(o)) => format!("{o:.4}"),
                Some(None) => "undefined".to_string(),
            };
            let _ = writeln!(csv, "{},{e:e},{order}", c.h);
        }
        run.write("convergence.csv", &csv)?;
        if cfg.experiment == Experiment::Zero {
            run.check("orders_undefined_flagged", orders.iter().all(Option::is_none), &orders);
        } else {
            let ok = orders.iter().all(|o| o.is_some_and(|o| o >= cfg.min_order));
            run.check("observed_order", ok, &orders);
        }
        Ok(())
    })
}
