use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use spinmem::fit::fit_biexp_decay;
use spinmem::params::BiExp;

fn delays() -> Vec<f64> {
    (0..16).map(|k| 1e-6 + 1e-6 * k as f64).collect()
}

#[test]
fn single_exponential_gives_vanishing_b() {
    let tau = delays();
    let y: Vec<f64> = tau.iter().map(|t| 0.8 * (-2.0 * t / 7e-6).exp()).collect();
    let f = fit_biexp_decay(&tau, &y).unwrap();
    assert!(f.b.abs() < 0.02, "{f:?}");
    assert!((f.t2a / 7e-6 - 1.0).abs() < 1e-6);
}

#[test]
fn recovers_nominal_decay_from_noisy_data() {
    let truth = BiExp::nominal();
    let tau: Vec<f64> = (0..24).map(|k| 0.5e-6 + 1e-6 * k as f64).collect();
    let noise = Normal::new(0.0, 0.01).unwrap();
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<f64> = tau
            .iter()
            .map(|&t| truth.f(t) * (1.0 + noise.sample(&mut rng)))
            .collect();
        let f = fit_biexp_decay(&tau, &y).unwrap();
        assert!(!f.single);
        assert!((f.t2a / truth.t2a - 1.0).abs() < 0.1, "seed {seed}: {f:?}");
        assert!((f.t2b / truth.t2b - 1.0).abs() < 0.1, "seed {seed}: {f:?}");
        assert!((f.a - truth.weight_a).abs() < 0.05);
        assert!(f.std_err(2) > 0.0 && f.std_err(3) > 0.0);
    }
}

#[test]
fn normalization_and_order() {
    let truth = BiExp {
        t2a: 3e-6,
        t2b: 20e-6,
        weight_a: 0.4,
        weight_b: 0.6,
    };
    let tau = delays();
    let y: Vec<f64> = tau.iter().map(|&t| 2.5 * truth.f(t)).collect();
    let f = fit_biexp_decay(&tau, &y).unwrap();
    assert!((f.a + f.b - 1.0).abs() < 1e-15);
    assert!(f.t2a < f.t2b);
    assert!((f.scale / 2.5 - 1.0).abs() < 1e-4, "{f:?}");
    assert!((f.eval(0.0) - 2.5).abs() < 1e-3);
}
