use conewave::energy::{
    audit_field, energy_inequality_gap, energy_report, sideways_energy, sideways_identity_gap, time_energy,
};
use conewave::{CharGrid, Geometry, LatticeField};

fn setup(h: f64) -> (CharGrid, Geometry) {
    let g = CharGrid::new(h, 1.0).unwrap();
    let geo = Geometry::new(0.25, 1.25, &g).unwrap();
    (g, geo)
}

#[test]
fn report_matches_single_evaluations() {
    let (g, geo) = setup(1.0 / 32.0);
    let w = audit_field(1, g);
    let f = w.wave_residual();
    let rep = energy_report(&w, &f, &geo).unwrap();
    assert_eq!(rep.rho.first().copied(), Some(0.25));
    assert_eq!(rep.j_at_r, rep.sideways[0]);
    let k = rep.rho.len() / 2;
    assert!((rep.sideways[k] - sideways_energy(&w, &geo, rep.rho[k]).unwrap()).abs() < 1e-13);
    assert!((rep.sideways_gap[k] - sideways_identity_gap(&w, &f, &geo, rep.rho[k]).unwrap()).abs() < 1e-13);
    let k = rep.s.len() / 3;
    assert!((rep.time[k] - time_energy(&w, &geo, rep.s[k]).unwrap()).abs() < 1e-13);
    assert!((rep.inequality_slack[k] - energy_inequality_gap(&w, &f, &geo, rep.s[k]).unwrap()).abs() < 1e-13);
    assert!(rep.sideways_csv().starts_with("rho,J,gap\n"));
    assert!(rep.time_csv().starts_with("s,E,slack\n"));
}

#[test]
fn energies_are_quadratic_and_nonnegative() {
    let (g, geo) = setup(1.0 / 32.0);
    let w = audit_field(2, g);
    let w3 = w.scaled(3.0);
    for rho in [0.25, 0.5, 0.625] {
        let (a, b) = (sideways_energy(&w, &geo, rho).unwrap(), sideways_energy(&w3, &geo, rho).unwrap());
        assert!(a > 0.0 && (b - 9.0 * a).abs() < 1e-10 * b, "{a} {b}");
    }
    for s in [0.5, 1.0] {
        assert!(time_energy(&w, &geo, s).unwrap() >= 0.0);
    }
}

#[test]
fn misaligned_requests_are_rejected() {
    let (g, geo) = setup(1.0 / 32.0);
    let w = audit_field(0, g);
    assert!(sideways_energy(&w, &geo, 0.26).is_err());
    assert!(sideways_energy(&w, &geo, 0.9).is_err());
    assert!(Geometry::new(0.25, 1.28125, &g).is_err());
}

#[test]
fn gap_converges_at_second_order() {
    let gaps: Vec<f64> = [1.0 / 32.0, 1.0 / 64.0]
        .iter()
        .map(|&h| {
            let (g, geo) = setup(h);
            let w = LatticeField::from_fn(1, g, |m, r, t| (r + 0.5 * t + m as f64).cos() * (1.0 + r * t));
            sideways_identity_gap(&w, &w.wave_residual(), &geo, 0.625).unwrap()
        })
        .collect();
    assert!(gaps[0] / gaps[1] > 3.0, "{gaps:?}");
}
