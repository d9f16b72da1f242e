use nalgebra::Matrix3;
use proptest::prelude::*;
use stochastic_es::numerics::{cubic_roots, poly_eval, rk4_integrate};

fn decay_error(h: f64) -> f64 {
    let steps = (5.0 / h).round() as usize;
    let x = rk4_integrate(&|x: &[f64], out: &mut [f64]| out[0] = -x[0], &[1.0], h, steps).unwrap();
    (x[steps] - (-5.0f64).exp()).abs()
}

#[test]
fn rk4_is_fourth_order() {
    for h in [0.1, 0.05, 0.025] {
        let ratio = decay_error(h) / decay_error(h / 2.0);
        assert!((ratio - 16.0).abs() <= 0.3 * 16.0, "h={h}: {ratio}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn cubic_roots_match_companion_eigenvalues(c2 in -5.0f64..5.0, c1 in -5.0f64..5.0, c0 in -5.0f64..5.0) {
        let roots = cubic_roots([1.0, c2, c1, c0]);
        let companion = Matrix3::new(-c2, -c1, -c0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0);
        let eig = companion.complex_eigenvalues();
        for z in &roots {
            prop_assert!(poly_eval(&[1.0, c2, c1, c0], *z).norm() < 1e-9);
            let nearest = eig.iter().map(|e| (e - z).norm()).fold(f64::INFINITY, f64::min);
            prop_assert!(nearest < 1e-6, "{roots:?} vs {eig:?}");
        }
    }
}
