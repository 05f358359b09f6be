use mcflab::mesh::shapes::{capsule, icosphere, torus};
use mcflab::topology::genus_and_components;
use mcflab::*;
use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;

fn max_gap(a: &TriMesh, b: &TriMesh, map: impl Fn(&Point) -> Point) -> f64 {
    a.positions().iter().zip(b.positions()).map(|(p, q)| (map(p) - q).norm()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn evolution_commutes_with_translation(vx in -5.0f64..5.0, vy in -5.0f64..5.0, vz in -5.0f64..5.0) {
        let v = Point::new(vx, vy, vz);
        let policy = StepPolicy::default();
        let a = evolve(icosphere(2.0, 2), &ForceSpec::Zero, &policy, 0.0, 0.3).unwrap();
        let b = evolve(icosphere(2.0, 2).translated(&v).unwrap(), &ForceSpec::Zero, &policy, 0.0, 0.3).unwrap();
        prop_assert_eq!(a.snapshots.len(), b.snapshots.len());
        let gap = max_gap(&a.last().mesh, &b.last().mesh, |p| p + v);
        prop_assert!(gap < 1e-10, "gap {}", gap);
    }

    #[test]
    fn f_is_invariant_under_rigid_motion_and_scaling(
        ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in 0.1f64..1.0, angle in 0.0f64..std::f64::consts::TAU,
        lambda in 0.3f64..4.0, tau in 0.05f64..3.0,
    ) {
        let mesh = torus(2.0, 0.6, 32, 16);
        let y = Point::new(0.4, -1.7, 0.2);
        let base = f_functional(&mesh, &y, tau).unwrap();
        let rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(Vector3::new(ax, ay, az)), angle);
        let shift = Point::new(1.5, -0.5, 3.0);
        let moved = mesh.mapped(|p| rot * p * lambda + shift).unwrap();
        let v = f_functional(&moved, &(rot * y * lambda + shift), tau * lambda * lambda).unwrap();
        prop_assert!((v - base).abs() < 1e-10, "{} vs {}", v, base);
    }
}

#[test]
fn parabolic_scaling_is_consistent() {
    let force = ForceSpec::constant(Vector3::new(0.0, 0.0, -0.1));
    let policy = StepPolicy::default();
    let t = 0.3;
    let base = evolve(icosphere(2.0, 3), &force, &policy, 0.0, t).unwrap();
    for lambda in [0.5, 2.0] {
        let scaled_force = rescale_force(&force, &Point::zeros(), 1.0 / lambda).unwrap();
        let m = icosphere(2.0, 3).scaled(lambda).unwrap();
        let traj = evolve(m, &scaled_force, &policy.scaled(lambda), 0.0, lambda * lambda * t).unwrap();
        assert_eq!(traj.steps, base.steps);
        let gap = max_gap(&base.last().mesh, &traj.last().mesh, |p| p * lambda);
        assert!(gap < 1e-6 * lambda, "λ = {lambda}: gap {gap}");
    }
}

#[test]
fn genus_does_not_depend_on_resolution() {
    for (n, m) in [(12, 6), (24, 12), (48, 24), (96, 32)] {
        let rep = genus_and_components(&torus(2.0, 0.5, n, m), None).unwrap();
        assert_eq!((rep.total_genus(), rep.count()), (1, 1), "{n}x{m}");
    }
    for level in 0..5 {
        let rep = genus_and_components(&icosphere(1.0, level), None).unwrap();
        assert_eq!((rep.total_genus(), rep.count()), (0, 1), "level {level}");
    }
    for segments in [8, 16, 32] {
        assert_eq!(genus_and_components(&capsule(3.0, 0.5, segments), None).unwrap().total_genus(), 0);
    }
}

#[test]
fn area_decreases_along_unforced_flow() {
    let traj = evolve(torus(2.0, 0.7, 32, 16), &ForceSpec::Zero, &StepPolicy::default(), 0.0, 0.2).unwrap();
    for w in traj.snapshots.windows(2) {
        let (a, b) = (w[0].mesh.total_area(), w[1].mesh.total_area());
        assert!(b <= a * (1.0 + 1e-8 * (w[1].step - w[0].step) as f64), "t = {}: {a} -> {b}", w[1].t);
    }
}
