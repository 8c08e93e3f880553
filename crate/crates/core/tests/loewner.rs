//! Radial Loewner solver against closed forms and flow invariants.
//!
//! For a constant driver W the radial equation `dg = g (W + g)/(W - g) dt` separates in `u = g/W`:
//! `log u - 2 log(1 + u) = t + const`, so `F(u) = u / (1 + u)^2` grows exactly like `e^t`.

use std::f64::consts::{PI, TAU};

use motsim::batch::{child_seed, trial_rng};
use motsim::loewner::{
    caratheodory_distance, compose_bubble_maps, conformal_radius, solve_radial_loewner, CaratheodoryGrid, DrivingProcess,
};
use motsim::verify::brownian_driver;
use num_complex::Complex64 as C;
use proptest::prelude::*;
use rand::Rng;

fn koebe(u: C) -> C {
    u / ((1.0 + u) * (1.0 + u))
}

/// `f_t(w)` for the constant driver at `angle`: the root inside the disk of `K u^2 + (2K - 1) u + K = 0`.
fn constant_inverse(angle: f64, t: f64, w: C) -> C {
    let wd = C::from_polar(1.0, angle);
    let k = (-t).exp() * koebe(w / wd);
    let b = 2.0 * k - 1.0;
    let disc = (b * b - 4.0 * k * k).sqrt();
    let (r1, r2) = ((-b + disc) / (2.0 * k), (-b - disc) / (2.0 * k));
    wd * if r1.norm() < r2.norm() { r1 } else { r2 }
}

#[test]
fn constant_driver_matches_closed_form() {
    let angle = 0.7;
    let wd = C::from_polar(1.0, angle);
    let d = DrivingProcess::constant(angle, 1e-3, 0.5).unwrap();
    let pts = [C::new(0.2, -0.3), C::new(-0.6, 0.1), C::new(0.05, 0.8), C::new(-0.1, -0.85)];
    let chain = solve_radial_loewner(&d, &pts, 0.5).unwrap();
    for p in &chain.points {
        let f0 = koebe(p.z0 / wd);
        for (k, &g) in p.trajectory.iter().enumerate() {
            let t = k as f64 * 1e-3;
            let want = (t).exp() * f0;
            let got = koebe(g / wd);
            assert!((got - want).norm() <= 1e-6 * want.norm(), "z0 = {} t = {t}: {got} vs {want}", p.z0);
        }
    }
}

#[test]
fn derivative_at_center_is_exponential() {
    let d = DrivingProcess::constant(1.0, 1e-3, 0.5).unwrap();
    let chain = solve_radial_loewner(&d, &[], 0.5).unwrap();
    let last = *chain.center_log_deriv.last().unwrap();
    assert!((last.exp() - 0.5f64.exp()).abs() < 1e-4);
    let d = DrivingProcess::constant(0.0, 1e-3, 1.0).unwrap();
    let chain = solve_radial_loewner(&d, &[], 1.0).unwrap();
    assert!((conformal_radius(&chain, 0.0).unwrap() - 1.0).abs() < 1e-12);
    assert!((conformal_radius(&chain, 1.0).unwrap() - (-1.0f64).exp()).abs() < 1e-3);
}

#[test]
fn identity_at_time_zero_and_root_swallowed_at_once() {
    let d = DrivingProcess::constant(0.0, 1e-3, 0.2).unwrap();
    let pts = [C::new(0.3, 0.4), C::new(1.0, 0.0)];
    let chain = solve_radial_loewner(&d, &pts, 0.2).unwrap();
    assert_eq!(chain.points[0].trajectory[0], pts[0]);
    assert_eq!(chain.points[1].swallow_time, Some(0.0));
}

#[test]
fn bubble_composition_adds_log_derivatives() {
    let empty = compose_bubble_maps(&[]).unwrap();
    assert_eq!(empty.horizon, 0.0);
    let a = DrivingProcess::constant(0.0, 1e-3, 0.3).unwrap();
    let one = compose_bubble_maps(std::slice::from_ref(&a)).unwrap();
    assert!((one.horizon - 0.3).abs() < 1e-9);
    let b = DrivingProcess::constant(2.0, 1e-3, 0.45).unwrap();
    let two = compose_bubble_maps(&[a, b]).unwrap();
    assert!((*two.center_log_deriv.last().unwrap() - 0.75).abs() < 1e-6);
}

#[test]
fn caratheodory_distance_examples() {
    let grid = CaratheodoryGrid::default();
    let d = DrivingProcess::constant(0.0, 1e-3, 0.6).unwrap();
    let a = solve_radial_loewner(&d, &[], 0.6).unwrap();
    assert_eq!(caratheodory_distance(&a, &a, 0.5, 0.5, &grid).unwrap(), 0.0);

    // one Brownian driver against itself started 0.1 later
    let bm = brownian_driver(6.0, 1e-3, 0.7, 5).unwrap();
    let early = solve_radial_loewner(&bm, &[], 0.6).unwrap();
    let late = solve_radial_loewner(&DrivingProcess::new(1e-3, bm.angles[100..].to_vec()).unwrap(), &[], 0.6).unwrap();
    assert!(caratheodory_distance(&early, &late, 0.5, 0.5, &grid).unwrap() > 0.0);

    // drivers at 0 and pi against the closed-form inverse maps on the same sample grid
    let b_drv = DrivingProcess::constant(PI, 1e-3, 0.6).unwrap();
    let b = solve_radial_loewner(&b_drv, &[], 0.6).unwrap();
    let (r, t_max) = (0.5, 0.5);
    let got = caratheodory_distance(&a, &b, r, t_max, &grid).unwrap();
    let mut want = 0.0f64;
    for i in 1..=grid.n_times {
        let t = t_max * i as f64 / grid.n_times as f64;
        want = want.max((constant_inverse(0.0, t, C::new(0.0, 0.0)) - constant_inverse(PI, t, C::new(0.0, 0.0))).norm());
        for ri in 1..=grid.n_radii {
            for j in 0..grid.n_angles {
                let w = C::from_polar(r * ri as f64 / grid.n_radii as f64, TAU * j as f64 / grid.n_angles as f64);
                want = want.max((constant_inverse(0.0, t, w) - constant_inverse(PI, t, w)).norm());
            }
        }
    }
    assert!((got - want).abs() <= 0.01 * want, "{got} vs closed form {want}");
}

#[test]
fn log_derivative_tracks_time_for_brownian_drivers() {
    for i in 0..5 {
        let d = brownian_driver(6.0, 1e-3, 2.0, child_seed(3, i)).unwrap();
        let chain = solve_radial_loewner(&d, &[], 2.0).unwrap();
        for (k, l) in chain.center_log_deriv.iter().enumerate() {
            assert!((l - k as f64 * 1e-3).abs() < 1e-3);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn modulus_never_decreases(seed in any::<u64>(), kappa in 1.0f64..8.0) {
        let d = brownian_driver(kappa, 1e-3, 0.5, seed).unwrap();
        let mut rng = trial_rng(seed, 9);
        let pts: Vec<C> = (0..8).map(|_| C::from_polar(rng.random::<f64>().sqrt() * 0.98, rng.random::<f64>() * TAU)).collect();
        let chain = solve_radial_loewner(&d, &pts, 0.5).unwrap();
        for p in &chain.points {
            for w in p.trajectory.windows(2) {
                prop_assert!(w[1].norm() >= w[0].norm() - 1e-8, "{} -> {}", w[0].norm(), w[1].norm());
            }
            prop_assert!(p.trajectory.iter().all(|g| g.norm() <= 1.0 + 1e-8));
        }
    }

    #[test]
    fn constant_driver_invariant_holds_everywhere(angle in 0.0f64..TAU, r in 0.0f64..0.9, phi in 0.0f64..TAU) {
        let z = C::from_polar(r, phi);
        let wd = C::from_polar(1.0, angle);
        prop_assume!((z - wd).norm() > 0.3);
        let d = DrivingProcess::constant(angle, 1e-3, 0.2).unwrap();
        let chain = solve_radial_loewner(&d, &[z], 0.2).unwrap();
        let p = &chain.points[0];
        prop_assume!(p.swallow_time.is_none());
        let want = 0.2f64.exp() * koebe(z / wd);
        let got = koebe(*p.trajectory.last().unwrap() / wd);
        prop_assert!((got - want).norm() <= 1e-6 * want.norm().max(1e-12));
    }
}
