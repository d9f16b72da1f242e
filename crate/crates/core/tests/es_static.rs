use proptest::prelude::*;
use stochastic_es::averaging::{estimate_average_field, iterate_discrete_average, iterate_original};
use stochastic_es::es_static::{
    average_error_factor, average_error_field, average_gain, epsilon_star, error_experiment, error_system_model,
    error_system_step, es_static_step, run_static_replication, BandCheck, EsStaticParams, NoiseSpec, StaticMap,
};
use stochastic_es::processes::ReplaySampler;

fn band_setup() -> (StaticMap<f64>, EsStaticParams<f64>) {
    (
        StaticMap::new(1.0, 1.0, 1.0).unwrap(),
        EsStaticParams {
            amplitude: 0.8,
            epsilon: 0.002,
            probe_sigma: 2.0,
            noise: Some(NoiseSpec { sigma: 0.2, bound: 1.0 }),
            initial_estimate: 5.0,
        },
    )
}

#[test]
fn generic_model_reproduces_the_estimator() {
    let (map, params) = band_setup();
    let band = BandCheck {
        half_width: 0.25,
        from: 0,
        to: 3000,
    };
    let run = run_static_replication(&map, &params, 3000, 8, 2, &band).unwrap();
    let exp = error_experiment(&map, &params, 8).unwrap();
    let errors = exp.original(2, 3000).unwrap();
    for (k, x) in run.estimates.iter().enumerate() {
        assert!((x - map.optimizer - errors.state(k)[0]).abs() < 1e-12, "k={k}");
    }
}

#[test]
fn empirical_average_matches_closed_form_field() {
    let (map, params) = band_setup();
    let model = error_system_model(&map, &params).unwrap();
    let gain = average_gain(&map, &params);
    for (i, x) in [-2.0, -0.5, 0.0, 1.0, 2.0].into_iter().enumerate() {
        let est = estimate_average_field(&model, &params.perturbation(), 50 + i as u64, &[x], 200_000).unwrap();
        let expected = -gain * x;
        assert!((est.mean[0] - expected).abs() <= 3.0 * est.std_error[0], "x={x}");
    }
}

#[test]
fn average_system_decays_with_exact_factor() {
    let (map, params) = band_setup();
    for eps in [0.002, 0.5, 2.0] {
        let p = EsStaticParams { epsilon: eps, ..params };
        assert!(eps < epsilon_star(&map, &p).unwrap());
        let gamma = average_error_factor(&map, &p);
        let traj = iterate_discrete_average(&average_error_field(&map, &p), eps, &[4.0], 500).unwrap();
        for (k, x) in traj.states().enumerate() {
            let exact = 4.0 * gamma.powi(k as i32);
            assert!((x[0] - exact).abs() <= 1e-12 * 4.0, "ε={eps} k={k}");
        }
    }
}

#[test]
fn noise_free_error_system_without_probe_noise_term() {
    let (map, mut params) = band_setup();
    params.noise = None;
    let model = error_system_model(&map, &params).unwrap();
    assert_eq!(model.noise_dim(), 1);
    let mut probe = ReplaySampler::new(1, vec![0.4, -1.1, 2.5]).unwrap();
    let traj = iterate_original(&model, &mut probe, &[4.0], 9).unwrap();
    let mut x = 4.0;
    for (k, v) in [0.4, -1.1, 2.5].iter().cycle().take(9).enumerate() {
        x = error_system_step(&map, &params, x, *v, 0.0);
        assert!((traj.state(k + 1)[0] - x).abs() < 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shift_equivariance(
        shift in -50.0f64..50.0,
        x_tilde in -4.0f64..4.0,
        v in -10.0f64..10.0,
        w in -1.0f64..1.0,
    ) {
        let (map, params) = band_setup();
        let shifted = StaticMap { optimizer: map.optimizer + shift, ..map };
        let x_hat = shifted.optimizer + x_tilde;
        let next = es_static_step(&shifted, &params, x_hat, v, w) - shifted.optimizer;
        let expected = error_system_step(&map, &params, x_hat - shifted.optimizer, v, w);
        let scale = 1.0f64.max(x_hat.abs()).max(shifted.optimizer.abs());
        prop_assert!((next - expected).abs() <= 4.0 * f64::EPSILON * scale);
    }

    #[test]
    fn curvature_and_step_scaling_leave_factor_unchanged(c in 0.01f64..100.0, curvature in 0.1f64..5.0) {
        let (map, params) = band_setup();
        let map1 = StaticMap { curvature, ..map };
        let map2 = StaticMap { curvature: curvature * c, ..map };
        let p2 = EsStaticParams { epsilon: params.epsilon / c, ..params };
        let f1 = average_error_factor(&map1, &params);
        let f2 = average_error_factor(&map2, &p2);
        prop_assert!((f1 - f2).abs() <= 1e-15);
    }

    #[test]
    fn half_threshold_gives_half_factor(a in 0.05f64..3.0, curvature in 0.1f64..5.0, sigma in 0.2f64..3.0) {
        let map = StaticMap::new(0.0, curvature, 0.0).unwrap();
        let params = EsStaticParams { amplitude: a, epsilon: 1.0, probe_sigma: sigma, noise: None, initial_estimate: 0.0 };
        let star = epsilon_star(&map, &params).unwrap();
        let half = average_error_factor(&map, &EsStaticParams { epsilon: star / 2.0, ..params });
        prop_assert!((half - 0.5).abs() < 1e-14);
    }
}
