use approx::assert_relative_eq;
use smallball_core::montecarlo::{run_sharded, std_normal};
use smallball_core::quadform::{
    cdf_gil_pelaez, cdf_monte_carlo, cdf_saddlepoint, distortion_constant, Method, WeightSeq,
};
use std::f64::consts::PI;

fn bridge_weights(n: usize) -> WeightSeq {
    let head: Vec<f64> = (1..=n).map(|k| (PI * k as f64).powi(-2)).collect();
    let tail = 1.0 / 6.0 - head.iter().sum::<f64>();
    WeightSeq::new(head, tail.max(0.0), "bridge").unwrap()
}

#[test]
fn single_and_repeated_weights_match_chi_square() {
    let mu = 0.7;
    let one = WeightSeq::new(vec![mu], 0.0, "one").unwrap();
    let two = WeightSeq::new(vec![mu, mu], 0.0, "two").unwrap();
    let four = WeightSeq::new(vec![mu; 4], 0.0, "four").unwrap();
    for r in [0.05, 0.3, 1.0, 2.5, 6.0] {
        let x = r / mu;
        assert_relative_eq!(
            cdf_gil_pelaez(&one, r).unwrap().value,
            libm::erf((x / 2.0).sqrt()),
            max_relative = 1e-9
        );
        assert_relative_eq!(
            cdf_gil_pelaez(&two, r).unwrap().value,
            -(-x / 2.0f64).exp_m1(),
            max_relative = 1e-9
        );
        assert_relative_eq!(
            cdf_gil_pelaez(&four, r).unwrap().value,
            1.0 - (-x / 2.0).exp() * (1.0 + x / 2.0),
            max_relative = 1e-9
        );
    }
}

#[test]
fn gil_pelaez_and_monte_carlo_agree_within_bounds() {
    let w = bridge_weights(100);
    for r in [0.03, 0.15, 0.6] {
        let gp = cdf_gil_pelaez(&w, r).unwrap();
        let mc = cdf_monte_carlo(&w, r, 1_000_000, 11).unwrap();
        assert!((1e-4..=1.0 - 1e-4).contains(&gp.value));
        assert_eq!(mc.method, Method::MonteCarlo);
        assert!(
            (gp.value - mc.value).abs() <= gp.error_bound + mc.error_bound,
            "r = {r}: {} vs {}",
            gp.value,
            mc.value
        );
    }
}

#[test]
fn saddlepoint_tracks_inversion_in_the_left_tail() {
    let w = bridge_weights(500);
    let mut last = f64::INFINITY;
    for r in [0.03, 0.02, 0.012, 0.008] {
        let gp = cdf_gil_pelaez(&w, r).unwrap();
        let sp = cdf_saddlepoint(&w, r).unwrap();
        assert!(gp.value < 0.05);
        let rel = (sp.value / gp.value - 1.0).abs();
        assert!(rel < 0.05 && rel < last, "r = {r}: relative gap {rel}");
        last = rel;
    }
}

#[test]
fn truncation_error_is_covered_by_the_bound() {
    let full = bridge_weights(2000);
    let short = full.truncate(20);
    assert_eq!(short.len(), 20);
    assert_relative_eq!(
        short.head_sum() + short.tail_sum_bound(),
        full.head_sum() + full.tail_sum_bound(),
        max_relative = 1e-12
    );
    for r in [0.05, 0.1, 0.2] {
        let reference = cdf_gil_pelaez(&full, r).unwrap();
        let truncated = cdf_gil_pelaez(&short, r).unwrap();
        assert!(truncated.error_bound > 0.0);
        assert!(
            (reference.value - truncated.value).abs()
                <= truncated.error_bound + reference.error_bound
        );
    }
}

#[test]
fn cdf_matches_pathwise_bridge_simulation() {
    let steps = 500;
    let reps = 20_000;
    let r = 0.12;
    let hits: Vec<usize> = run_sharded(5, reps, |_, count, rng| {
        let mut hit = 0;
        let mut path = vec![0.0; steps];
        for _ in 0..count {
            let mut w = 0.0;
            for p in path.iter_mut() {
                w += std_normal(rng) / (steps as f64).sqrt();
                *p = w;
            }
            let end = w;
            let integral: f64 = path
                .iter()
                .enumerate()
                .map(|(i, wi)| {
                    let b = wi - (i + 1) as f64 / steps as f64 * end;
                    b * b
                })
                .sum::<f64>()
                / steps as f64;
            hit += usize::from(integral <= r);
        }
        hit
    });
    let p_hat = hits.iter().sum::<usize>() as f64 / reps as f64;
    let se = (p_hat * (1.0 - p_hat) / reps as f64).sqrt();
    let exact = cdf_gil_pelaez(&bridge_weights(2000), r).unwrap().value;
    assert!(
        (p_hat - exact).abs() < 3.0 * se + 2e-3,
        "{p_hat} vs {exact}"
    );
}

#[test]
fn monte_carlo_is_seed_deterministic() {
    let w = bridge_weights(50);
    let a = cdf_monte_carlo(&w, 0.1, 50_000, 3).unwrap();
    let b = cdf_monte_carlo(&w, 0.1, 50_000, 3).unwrap();
    let c = cdf_monte_carlo(&w, 0.1, 50_000, 4).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.value, c.value);
}

#[test]
fn cdf_is_monotone_and_bounded() {
    let w = bridge_weights(200);
    let mut last = 0.0;
    for i in 1..40 {
        let r = 0.01 * i as f64;
        let v = cdf_gil_pelaez(&w, r).unwrap().value;
        assert!(v >= last && v <= 1.0);
        last = v;
    }
    assert!(cdf_gil_pelaez(&w, 0.0).unwrap_err().is_argument());
    assert!(cdf_gil_pelaez(&w, -1.0).is_err());
}

#[test]
fn weight_files_round_trip() {
    let w = bridge_weights(25);
    let mut buf = Vec::new();
    w.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("# tail_sum_bound="));
    let back = WeightSeq::parse_csv(&text, "back").unwrap();
    assert_eq!(back.head(), w.head());
    assert_eq!(back.tail_sum_bound(), w.tail_sum_bound());

    let table = "k,mu_k\n1,0.5\n2,0.25\n";
    let t = WeightSeq::parse_csv(table, "table").unwrap();
    assert_eq!(t.head(), &[0.5, 0.25]);
    assert!(WeightSeq::parse_csv("0.1\n0.2\n", "bad").is_err());
    assert!(WeightSeq::parse_csv("0.1\nfoo\n", "bad").is_err());
}

#[test]
fn distortion_constant_of_convergent_and_divergent_products() {
    let n = 100_000;
    let base = WeightSeq::from_fn(n, |k| (k as f64).powi(-2), 0.0, "base").unwrap();
    let bent = WeightSeq::from_fn(
        n,
        |k| (k as f64).powi(-2) * (1.0 + (k as f64).powi(-2)),
        0.0,
        "bent",
    )
    .unwrap();
    let d = distortion_constant(&bent, &base, 1e-4).unwrap();
    assert_relative_eq!(d.value, (PI.sinh() / PI).sqrt(), max_relative = 1e-5);

    let harmonic = WeightSeq::from_fn(
        n,
        |k| (k as f64).powi(-2) * (1.0 + 1.0 / k as f64),
        0.0,
        "harm",
    )
    .unwrap();
    assert!(distortion_constant(&harmonic, &base, 1e-2).is_err());
}
