use proptest::prelude::*;
use stochastic_es::processes::{
    gaussian_sine_moment, stationary_distribution, JointStream, PerturbationStream, ProcessSpec, Sampler,
};
use stochastic_es::stats::{batch_means, correlation};

const N: usize = 1_000_000;

fn kinds() -> Vec<ProcessSpec> {
    vec![
        ProcessSpec::IidGaussian { sigma: 1.3 },
        ProcessSpec::TruncatedGaussian { sigma: 0.8, bound: 1.0 },
        ProcessSpec::FiniteMarkov {
            transition: vec![vec![0.5, 0.3, 0.2], vec![0.1, 0.6, 0.3], vec![0.4, 0.4, 0.2]],
            states: vec![-1.5, 0.25, 2.0],
        },
        ProcessSpec::SampledOu {
            mean_reversion: 1.0,
            volatility: 1.2,
            sample_period: 0.5,
        },
    ]
}

type Observable = fn(f64) -> f64;

#[test]
fn birkhoff_averages_match_invariant_law() {
    let tests: [(&str, Observable); 3] = [
        ("sin", f64::sin),
        ("sin^2", |x: f64| x.sin().powi(2)),
        ("min(|x|,1)", |x: f64| x.abs().min(1.0)),
    ];
    for (i, spec) in kinds().into_iter().enumerate() {
        let law = spec.invariant_law().unwrap();
        let mut stream = PerturbationStream::from_seed(&spec, 1000 + i as u64).unwrap();
        let samples: Vec<f64> = (0..N).map(|_| stream.next_sample()).collect();
        for (name, g) in tests {
            let values: Vec<f64> = samples.iter().map(|&x| g(x)).collect();
            let (mean, se) = batch_means(&values, 200);
            let exact = law.expect(g);
            assert!(
                (mean - exact).abs() <= 3.0 * se,
                "{spec:?} {name}: empirical {mean} vs {exact} (se {se})"
            );
        }
    }
}

#[test]
fn second_sine_moment_matches_monte_carlo() {
    for (i, sigma) in [0.5, 1.0, 2.0].into_iter().enumerate() {
        let spec = ProcessSpec::IidGaussian { sigma };
        let mut stream = PerturbationStream::from_seed(&spec, 77 + i as u64).unwrap();
        let values: Vec<f64> = (0..N).map(|_| stream.next_sample().sin().powi(2)).collect();
        let (mean, se) = batch_means(&values, 200);
        let m2: f64 = gaussian_sine_moment(sigma, 2).unwrap();
        assert!((mean - m2).abs() <= 3.0 * se, "σ={sigma}: {mean} vs {m2}");
    }
}

#[test]
fn equal_seeds_repeat_and_different_seeds_decorrelate() {
    for spec in kinds() {
        let draw = |seed| {
            let mut s = PerturbationStream::from_seed(&spec, seed).unwrap();
            (0..10_000).map(|_| s.next_sample()).collect::<Vec<f64>>()
        };
        let a = draw(5);
        assert_eq!(a, draw(5));
        let b = draw(6);
        let r = correlation(&a, &b);
        assert!(r.abs() < 0.05, "{spec:?}: correlation {r}");
    }
}

#[test]
fn joint_components_are_independent() {
    let specs = [
        ProcessSpec::IidGaussian { sigma: 1.0 },
        ProcessSpec::IidGaussian { sigma: 1.0 },
    ];
    let mut joint = JointStream::new(&specs, 3, 0).unwrap();
    let mut row = [0.0; 2];
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for _ in 0..10_000 {
        joint.sample_into(&mut row);
        a.push(row[0]);
        b.push(row[1]);
    }
    assert!(correlation(&a, &b).abs() < 0.05);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn truncated_samples_respect_bound(sigma in 0.01f64..5.0, bound in 0.0f64..3.0, seed in any::<u64>()) {
        let spec = ProcessSpec::TruncatedGaussian { sigma, bound };
        let mut s = PerturbationStream::from_seed(&spec, seed).unwrap();
        for _ in 0..500 {
            let x = s.next_sample();
            prop_assert!(x.abs() <= bound);
        }
    }

    #[test]
    fn stationary_distribution_is_left_fixed_point(rows in prop::collection::vec(prop::collection::vec(0.05f64..1.0, 4), 4)) {
        let p: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                let s: f64 = r.iter().sum();
                r.iter().map(|v| v / s).collect()
            })
            .collect();
        let pi = stationary_distribution(&p).unwrap();
        prop_assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for j in 0..4 {
            let next: f64 = (0..4).map(|i| pi[i] * p[i][j]).sum();
            prop_assert!((next - pi[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn markov_samples_stay_in_state_space(seed in any::<u64>()) {
        let spec = ProcessSpec::FiniteMarkov {
            transition: vec![vec![0.0, 1.0], vec![0.5, 0.5]],
            states: vec![-1.0, 3.0],
        };
        let mut s = PerturbationStream::from_seed(&spec, seed).unwrap();
        for _ in 0..200 {
            let x = s.next_sample();
            prop_assert!(x == -1.0 || x == 3.0);
        }
    }
}
