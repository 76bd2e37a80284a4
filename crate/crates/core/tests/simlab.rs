use blipvar::simlab::{draw_dataset, perturb_controlled_noise, true_params, DgpSpec, WELLSPEC_PRESETS};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const DRAWS: usize = 2_000_000;

#[test]
fn case1_truth_matches_reported_values() {
    let t = true_params(&DgpSpec::Case1, DRAWS, 1).unwrap();
    assert!((t.ate0 - 0.078).abs() <= 0.001, "ate0 {}", t.ate0);
    assert!((t.vte0 - 0.085).abs() <= 0.001, "vte0 {}", t.vte0);
    assert!(t.mc_se_vte < 1e-4);
}

#[test]
fn literal_case1_display_has_smaller_truth() {
    let t = true_params(&DgpSpec::Case1AsPrinted, DRAWS, 2).unwrap();
    assert!((t.ate0 - 0.0539).abs() <= 0.001, "ate0 {}", t.ate0);
    assert!((t.vte0 - 0.0458).abs() <= 0.001, "vte0 {}", t.vte0);
}

#[test]
fn controlled_noise_truth_by_monte_carlo() {
    let t = true_params(&DgpSpec::ControlledNoise { rate: -1.0 / 3.0 }, DRAWS, 3).unwrap();
    assert!((t.ate0 + 0.1716).abs() <= 0.001, "ate0 {}", t.ate0);
    assert!((t.vte0 - 0.0506).abs() <= 0.001, "vte0 {}", t.vte0);
}

#[test]
fn wellspec_presets_hit_their_targets() {
    for ((a, b), target) in WELLSPEC_PRESETS.iter().zip([0.01, 0.025, 0.06]) {
        let t = true_params(&DgpSpec::Wellspec { a: *a, b: *b }, DRAWS, 4).unwrap();
        assert!((t.vte0 - target).abs() <= 5e-4, "a=b={a}: vte0 {}", t.vte0);
    }
}

#[test]
fn controlled_noise_shrinks_at_the_stated_rate() {
    let spec = DgpSpec::ControlledNoise { rate: -1.0 / 3.0 };
    let m = 20_000;
    let data = draw_dataset(&spec, m, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let truth: Vec<f64> = (0..m).map(|i| spec.blip0(&data.w_row(i))).collect();
    let mut points = Vec::new();
    for (k, n) in [250usize, 1000, 4000].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + k as u64);
        let (q1, q0) = perturb_controlled_noise(&spec, data.w(), n, -1.0 / 3.0, &mut rng).unwrap();
        let ms = (0..m).map(|i| (q1[i] - q0[i] - truth[i]).powi(2)).sum::<f64>() / m as f64;
        points.push(((n as f64).ln(), ms.sqrt().ln()));
    }
    let xbar = points.iter().map(|p| p.0).sum::<f64>() / 3.0;
    let ybar = points.iter().map(|p| p.1).sum::<f64>() / 3.0;
    let slope = points.iter().map(|p| (p.0 - xbar) * (p.1 - ybar)).sum::<f64>()
        / points.iter().map(|p| (p.0 - xbar).powi(2)).sum::<f64>();
    assert!((slope + 1.0 / 3.0).abs() <= 0.05, "log-log slope {slope}");
}

#[test]
fn noise_rate_must_be_negative() {
    let spec = DgpSpec::ControlledNoise { rate: -0.3 };
    let data = draw_dataset(&spec, 10, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    assert!(perturb_controlled_noise(&spec, data.w(), 10, 0.1, &mut ChaCha8Rng::seed_from_u64(7)).is_err());
}
