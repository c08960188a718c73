use std::sync::{Arc, OnceLock};

use num_complex::Complex;
use proptest::prelude::*;

use css_core::evolve::{pseudoconformal, rescale};
use css_core::functionals::{conserved_report, energy, mass};
use css_core::gauge::compute_gauge;
use css_core::grid::{make_uniform_grid, RadialField, RadialGrid};
use css_core::linops::{reduce_angle, FitMode, Modulator};
use css_core::soliton::{solve_standing_wave, SolverOptions};
use css_core::Soliton;

fn fine_grid() -> Arc<RadialGrid<f64>> {
    static GRID: OnceLock<Arc<RadialGrid<f64>>> = OnceLock::new();
    GRID.get_or_init(|| make_uniform_grid(4001, 20.0).unwrap()).clone()
}

fn soliton() -> &'static (Soliton, Modulator<f64>) {
    static Q: OnceLock<(Soliton, Modulator<f64>)> = OnceLock::new();
    Q.get_or_init(|| {
        let q = solve_standing_wave(1, 1.5, 1.0, make_uniform_grid(600, 24.0).unwrap(), &SolverOptions::default()).unwrap();
        let md = Modulator::new(&q).unwrap();
        (q, md)
    })
}

fn bump(amp: f64, width: f64, twist: f64) -> RadialField<f64> {
    RadialField::from_fn(fine_grid(), 1, 1.5, |r| {
        let s = r / width;
        Complex::from_polar(amp * s * (-s * s).exp(), twist * s * s)
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn phase_rotation_changes_no_observable(gamma in -3.2f64..3.2, amp in 0.1f64..2.0, twist in -1.0f64..1.0) {
        let u = bump(amp, 1.5, twist);
        let v = u.rotate_phase(gamma);
        let (a, b) = (conserved_report(&u).unwrap(), conserved_report(&v).unwrap());
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * x.abs().max(1.0);
        prop_assert!(close(a.mass, b.mass) && close(a.energy, b.energy) && close(a.virial_dv, b.virial_dv));
        let (ga, gb) = (compute_gauge(&u).unwrap(), compute_gauge(&v).unwrap());
        prop_assert!(ga.a_theta.iter().zip(&gb.a_theta).all(|(x, y)| close(*x, *y)));
    }

    #[test]
    fn rescaling_is_mass_critical(lambda in 0.6f64..1.8, twist in -0.5f64..0.5) {
        let u = bump(1.0, 1.5, twist);
        let v = rescale(&u, lambda).unwrap();
        let (m0, m1) = (mass(&u), mass(&v));
        prop_assert!((m1 - m0).abs() < 1e-8 * m0, "mass {} vs {}", m0, m1);
        let (e0, e1) = (energy(&u).unwrap(), energy(&v).unwrap());
        prop_assert!((e1 - lambda * lambda * e0).abs() < 1e-5 * e1.abs(), "energy {} vs λ²·{}", e1, e0);
    }

    #[test]
    fn pseudoconformal_map_keeps_mass(t in prop_oneof![-2.0f64..-0.7, 0.7f64..2.0]) {
        let u = bump(1.0, 1.0, 0.3);
        let v = pseudoconformal(&u, t).unwrap();
        prop_assert!((mass(&v) - mass(&u)).abs() < 1e-8 * mass(&u));
    }

    #[test]
    fn fits_recover_points_of_the_orbit(lambda in 0.7f64..1.4, gamma in -3.0f64..3.0) {
        let (_, md) = soliton();
        let u = md.orbit_point(lambda, gamma).unwrap();
        let f = md.fit(&u, FitMode::Nearest, None, None).unwrap();
        prop_assert!((f.lambda - lambda).abs() < 1e-8, "λ {} vs {}", f.lambda, lambda);
        prop_assert!(reduce_angle(f.gamma - gamma).abs() < 1e-8, "γ {} vs {}", f.gamma, gamma);
    }

    #[test]
    fn fits_commute_with_the_symmetries(dl in 0.8f64..1.25, dg in -1.0f64..1.0) {
        // Moving a perturbed soliton along the orbit moves its fit the same way.
        let (q, md) = soliton();
        let r_max = q.grid().r_max();
        let kick = |r: f64| 0.02 * r * (-r * r / 4.0).exp() * (1.0 - r / r_max);
        let vals = q.field.values().iter().zip(q.grid().nodes()).map(|(a, &r)| a + Complex::new(0.0, kick(r)));
        let u = q.field.with_values(vals.collect()).unwrap();
        let base = md.fit(&u, FitMode::Nearest, None, None).unwrap();
        let moved = rescale(&u, 1.0 / dl).unwrap().rotate_phase(-dg);
        let f = md.fit(&moved, FitMode::Nearest, None, None).unwrap();
        prop_assert!((f.lambda / base.lambda - dl).abs() < 1e-4, "λ ratio {} vs {}", f.lambda / base.lambda, dl);
        prop_assert!(reduce_angle(f.gamma - base.gamma - dg).abs() < 1e-4, "γ shift {} vs {}", f.gamma - base.gamma, dg);
    }
}
