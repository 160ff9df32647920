use mirror_core::latent::{gaussian_kl, GaussianParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn reparameterized_draws_have_the_right_moments() {
    let q = GaussianParams::new(vec![0.5, -1.0, 2.0], vec![0.0, -1.5, 1.2]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 100_000;
    let mut sum = [0.0f64; 3];
    let mut sq = [0.0f64; 3];
    for _ in 0..n {
        let s = q.sample(&mut rng);
        assert_eq!(s.z, q.apply_noise(&s.noise));
        for i in 0..3 {
            sum[i] += s.z[i];
            sq[i] += s.z[i] * s.z[i];
        }
    }
    for i in 0..3 {
        let mean = sum[i] / n as f64;
        let var = sq[i] / n as f64 - mean * mean;
        let want_var = q.log_var[i].exp();
        // Five standard errors of the sample mean and variance.
        assert!((mean - q.mean[i]).abs() < 5.0 * (want_var / n as f64).sqrt(), "mean {} vs {}", mean, q.mean[i]);
        assert!((var - want_var).abs() < 5.0 * want_var * (2.0 / n as f64).sqrt(), "var {} vs {}", var, want_var);
    }
}

#[test]
fn kl_matches_a_monte_carlo_estimate() {
    let q = GaussianParams::new(vec![0.3, -0.2], vec![-0.5, 0.4]).unwrap();
    let p = GaussianParams::new(vec![-0.1, 0.6], vec![0.2, -0.3]).unwrap();
    let exact = gaussian_kl(&q, &p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 100_000;
    let est: f64 = (0..n)
        .map(|_| {
            let z = q.sample(&mut rng).z;
            q.log_density(&z) - p.log_density(&z)
        })
        .sum::<f64>()
        / n as f64;
    assert!((est - exact).abs() / exact < 0.02, "{} vs {}", est, exact);
}

#[test]
fn kl_is_zero_only_for_equal_distributions() {
    let q = GaussianParams::new(vec![0.3, -0.2], vec![-0.5, 0.4]).unwrap();
    assert!(gaussian_kl::<f64>(&q, &q).unwrap().abs() < 1e-15);
    let p = GaussianParams::new(vec![0.3, -0.2], vec![-0.5, 0.41]).unwrap();
    assert!(gaussian_kl(&q, &p).unwrap() > 0.0);
    assert!(GaussianParams::new(vec![0.0], vec![f64::NAN]).is_err());
    assert!(GaussianParams::new(vec![0.0, 1.0], vec![0.0]).is_err());
}
