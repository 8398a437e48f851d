use diffsumm::diffusion::*;
use diffsumm::rng::seeded;
use diffsumm::FrameFeatures;
use proptest::prelude::*;

// Cumulative products computed at 100-digit precision (mpmath).
const ALPHA_BAR_50: f64 = 0.971_015_722_939_440_4;
const ALPHA_BAR_200: f64 = 0.659_038_508_231_794_1;
const ALPHA_BAR_1000: f64 = 4.035_829_765_375_683e-5;
const SIGMA_2: f64 = 0.007_384_570_171_176_252;
const SIGMA_200: f64 = 0.063_498_103_207_108_59;

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

fn schedule(t_active: usize) -> NoiseSchedule {
    NoiseSchedule::standard().with_active(t_active).unwrap()
}

struct ConstEps(f64);

impl NoisePredictor for ConstEps {
    fn predict_noise(&self, x_t: &NoisyScores, _: &FrameFeatures) -> diffsumm::Result<Vec<f64>> {
        Ok(vec![self.0; x_t.len()])
    }
}

#[test]
fn schedule_endpoints_are_exact() {
    let s = schedule(1000);
    assert_eq!(s.beta(1), 1e-4);
    assert_eq!(s.beta(1000), 0.02);
    assert_eq!(s.alpha_bar(0), 1.0);
    assert_eq!(s.alpha_bar(1), 0.9999);
    for t in 2..=1000 {
        assert!(s.beta(t) > s.beta(t - 1));
        assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
    }
}

#[test]
fn schedule_matches_extended_precision() {
    let s = schedule(1000);
    assert!(rel(s.alpha_bar(50), ALPHA_BAR_50) < 1e-12);
    assert!(rel(s.alpha_bar(200), ALPHA_BAR_200) < 1e-12);
    assert!(rel(s.alpha_bar(1000), ALPHA_BAR_1000) < 1e-12);
    assert!(rel(s.sigma(2).unwrap(), SIGMA_2) < 1e-10);
    assert!(rel(s.sigma(200).unwrap(), SIGMA_200) < 1e-10);
    assert_eq!(s.sigma(1).unwrap(), 0.0);
}

#[test]
fn horizon_truncates_without_respanning() {
    let full = schedule(1000);
    let short = build_schedule(1000, 1e-4, 0.02, 50).unwrap();
    for t in 1..=50 {
        assert_eq!(short.beta(t), full.beta(t));
        assert_eq!(short.alpha_bar(t), full.alpha_bar(t));
    }
    assert!(short.sigma(51).is_err());
    assert!(build_schedule(1000, 1e-4, 0.02, 0).is_err());
    assert!(build_schedule(1000, 1e-4, 0.02, 1001).is_err());
    assert!(build_schedule(0, 1e-4, 0.02, 1).is_err());
    assert!(build_schedule(10, 0.0, 0.02, 1).is_err());
    assert!(build_schedule(10, 0.03, 0.02, 1).is_err());
    assert!(build_schedule(10, 1e-4, 1.0, 1).is_err());
}

#[test]
fn schedule_table_dump() {
    let text = schedule(1000).to_tsv();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1001);
    assert!(lines[0].starts_with("t\tbeta"));
    let first: Vec<f64> = lines[1].split('\t').map(|v| v.parse().unwrap()).collect();
    assert_eq!(first[0], 1.0);
    assert_eq!(first[1], 1e-4);
    let last: Vec<f64> = lines[1000].split('\t').map(|v| v.parse().unwrap()).collect();
    assert_eq!(last[1], 0.02);
}

#[test]
fn q_sample_hand_case() {
    let s = schedule(200);
    let x0 = ScaledScores::new(vec![1.0, -1.0]).unwrap();
    let eps = GaussianDraw {
        values: vec![0.0, 2.0],
        ..GaussianDraw::zeros(2)
    };
    let x = q_sample(&s, &x0, 1, &eps).unwrap();
    assert_eq!(x.step, 1);
    assert!((x.values[0] - 0.9999f64.sqrt()).abs() < 1e-12);
    assert!((x.values[1] - (-(0.9999f64.sqrt()) + 2.0 * 0.0001f64.sqrt())).abs() < 1e-12);
    assert!(q_sample(&s, &x0, 0, &eps).is_err());
    assert!(q_sample(&s, &x0, 201, &eps).is_err());
    assert!(q_sample(&s, &x0, 5, &GaussianDraw::zeros(3)).is_err());
}

#[test]
fn zero_horizon_is_identity() {
    let s = schedule(0);
    let init = RawScores::new(vec![0.1, 0.5, 0.93, 0.0, 1.0]).unwrap();
    let f = FrameFeatures::from_rows(&vec![vec![0.0; 3]; 5]).unwrap();
    let mut rng = seeded(1);
    let out = generate_scores(&s, &ConstEps(3.0), &f, &init, &mut rng).unwrap();
    for (a, b) in out.values().iter().zip(init.values()) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn sampler_output_is_clamped_and_deterministic() {
    let s = schedule(200);
    let init = RawScores::new(vec![0.3; 8]).unwrap();
    let f = FrameFeatures::from_rows(&vec![vec![1.0; 2]; 8]).unwrap();
    // A constant negative estimate pushes scores far above 1.
    let a = generate_scores(&s, &ConstEps(-2.0), &f, &init, &mut seeded(5)).unwrap();
    assert!(a.values().iter().all(|v| *v == 1.0));
    let b = generate_scores(&s, &ConstEps(0.0), &f, &init, &mut seeded(5)).unwrap();
    let c = generate_scores(&s, &ConstEps(0.0), &f, &init, &mut seeded(5)).unwrap();
    assert_eq!(b, c);
    assert!(b.values().iter().all(|v| (0.0..=1.0).contains(v)));

    let short = RawScores::new(vec![0.3; 7]).unwrap();
    assert!(generate_scores(&s, &ConstEps(0.0), &f, &short, &mut seeded(5)).is_err());
}

#[test]
fn last_step_is_noise_free() {
    let s = schedule(200);
    let x = NoisyScores::new(vec![0.2, -0.4], 1);
    let f = FrameFeatures::from_rows(&[vec![0.0], vec![0.0]]).unwrap();
    let z = GaussianDraw {
        values: vec![5.0, -5.0],
        ..GaussianDraw::zeros(2)
    };
    let a = denoise_step(&s, &ConstEps(0.1), &x, &f, &z).unwrap();
    let b = denoise_step(&s, &ConstEps(0.1), &x, &f, &GaussianDraw::zeros(2)).unwrap();
    assert_eq!(a.values, b.values);
    assert_eq!(a.step, 0);
}

#[test]
fn stepwise_and_closed_form_moments_agree() {
    let s = schedule(200);
    let x0 = ScaledScores::new(vec![0.6]).unwrap();
    let mut rng = seeded(17);
    let draws = 20_000;
    for t in [1usize, 50, 200] {
        let (mut m1, mut v1, mut m2, mut v2) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..draws {
            let a = q_sample(&s, &x0, t, &GaussianDraw::sample(&mut rng, 1)).unwrap().values[0];
            let b = q_sample_stepwise(&s, &x0, t, &mut rng).unwrap().values[0];
            m1 += a;
            v1 += a * a;
            m2 += b;
            v2 += b * b;
        }
        let n = draws as f64;
        let (m1, m2) = (m1 / n, m2 / n);
        let (v1, v2) = (v1 / n - m1 * m1, v2 / n - m2 * m2);
        let mean = s.alpha_bar(t).sqrt() * 0.6;
        let var = 1.0 - s.alpha_bar(t);
        // Loose bounds at this sample size; the acceptance suite runs 1e5 draws.
        assert!((m1 - mean).abs() < 5.0 * (var / n).sqrt(), "t={t} mean {m1} vs {mean}");
        assert!((m2 - mean).abs() < 5.0 * (var / n).sqrt(), "t={t} stepwise mean {m2}");
        assert!(rel(v1, var) < 0.05, "t={t} var {v1} vs {var}");
        assert!(rel(v2, var) < 0.05, "t={t} stepwise var {v2} vs {var}");
    }
}

proptest! {
    #[test]
    fn posterior_mean_has_noise_form(
        x0 in prop::collection::vec(-1.0f64..=1.0, 1..16),
        seed in any::<u64>(),
        t in 2usize..=1000,
    ) {
        let s = schedule(1000);
        let mut rng = seeded(seed);
        let eps = GaussianDraw::sample(&mut rng, x0.len());
        let clean = ScaledScores::new(x0).unwrap();
        let x_t = q_sample(&s, &clean, t, &eps).unwrap();
        let mu = posterior_mean(&s, &x_t, &clean).unwrap();
        let coef = s.beta(t) / (1.0 - s.alpha_bar(t)).sqrt();
        for ((m, x), e) in mu.iter().zip(&x_t.values).zip(&eps.values) {
            let alt = (x - coef * e) / s.alpha(t).sqrt();
            prop_assert!((m - alt).abs() < 1e-10, "{} vs {}", m, alt);
        }
    }

    #[test]
    fn x0_estimate_inverts_noising(
        x0 in prop::collection::vec(-1.0f64..=1.0, 1..16),
        seed in any::<u64>(),
        t in 1usize..=1000,
    ) {
        let s = schedule(1000);
        let eps = GaussianDraw::sample(&mut seeded(seed), x0.len());
        let clean = ScaledScores::new(x0.clone()).unwrap();
        let x_t = q_sample(&s, &clean, t, &eps).unwrap();
        let back = predict_x0_from_eps(&s, &x_t, &eps.values).unwrap();
        for (a, b) in back.iter().zip(&x0) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn scale_roundtrip(raw in prop::collection::vec(0.0f64..=1.0, 0..32)) {
        let r = RawScores::new(raw.clone()).unwrap();
        let scaled = scale_scores(&r);
        prop_assert!(scaled.values().iter().all(|v| (-1.0..=1.0).contains(v)));
        let back = unscale_scores(scaled.values());
        for (a, b) in back.values().iter().zip(&raw) {
            prop_assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn unscale_always_in_unit_interval(x in prop::collection::vec(-1e6f64..1e6, 0..32)) {
        prop_assert!(unscale_scores(&x).values().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn sigma_bounded_by_beta(t in 1usize..=1000) {
        let s = schedule(1000);
        let sigma = s.sigma(t).unwrap();
        prop_assert!(sigma >= 0.0 && sigma * sigma <= s.beta(t) + 1e-18);
    }
}

#[test]
fn raw_scores_reject_out_of_range() {
    assert!(RawScores::new(vec![0.5, 1.2]).is_err());
    assert!(RawScores::new(vec![f64::NAN]).is_err());
    assert!(ScaledScores::new(vec![-1.5]).is_err());
}
