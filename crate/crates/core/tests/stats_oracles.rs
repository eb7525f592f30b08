use replay_lab::rng::RngStream;
use replay_lab::stats::{
    ln_gamma, mann_whitney_u, mann_whitney_u_exact, mann_whitney_u_normal, normal_two_sided, paired_t_test, spearman,
    student_t_cdf, TestMethod,
};

/// Γ(m/2) from Γ(1/2) = √π, Γ(1) = 1 and Γ(x+1) = xΓ(x).
fn gamma_half(m: u32) -> f64 {
    let (mut x, mut g) = if m.is_multiple_of(2) {
        (1.0, 1.0)
    } else {
        (0.5, std::f64::consts::PI.sqrt())
    };
    while x < m as f64 / 2.0 {
        g *= x;
        x += 1.0;
    }
    g
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let h = (b - a) / intervals as f64;
    let inner: f64 = (1..intervals)
        .map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 })
        .sum();
    (f(a) + f(b) + inner) * h / 3.0
}

fn t_cdf_by_quadrature(t: f64, df: u32) -> f64 {
    let nu = df as f64;
    let c = gamma_half(df + 1) / ((nu * std::f64::consts::PI).sqrt() * gamma_half(df));
    let density = |x: f64| c * (1.0 + x * x / nu).powf(-(nu + 1.0) / 2.0);
    0.5 + simpson(density, 0.0, t, 20_000)
}

#[test]
fn ln_gamma_matches_factorials_and_half_integers() {
    let mut factorial = 1.0f64;
    for n in 1..30u32 {
        assert!((ln_gamma(n as f64) - factorial.ln()).abs() < 1e-10, "n = {n}");
        factorial *= n as f64;
    }
    for m in 1..60 {
        assert!((ln_gamma(m as f64 / 2.0) - gamma_half(m).ln()).abs() < 1e-10, "m = {m}");
    }
}

#[test]
fn student_t_cdf_matches_quadrature() {
    for df in [1, 2, 5, 30] {
        for step in -20..=20 {
            let t = step as f64 * 0.5;
            let oracle = t_cdf_by_quadrature(t, df);
            let got = student_t_cdf(t, df as f64);
            assert!((got - oracle).abs() < 1e-8, "df {df}, t {t}: {got} vs {oracle}");
        }
    }
}

#[test]
fn normal_tail_matches_quadrature() {
    let phi = |x: f64| (-x * x / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
    for step in 0..=16 {
        let z = step as f64 * 0.5;
        let oracle = 1.0 - 2.0 * simpson(phi, 0.0, z, 20_000);
        assert!((normal_two_sided(z) - oracle).abs() < 1e-9, "z {z}");
        assert_eq!(normal_two_sided(z), normal_two_sided(-z));
    }
}

#[test]
fn paired_t_reference_values() {
    let r = paired_t_test(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]).unwrap();
    assert!((r.statistic - 1.7321).abs() < 1e-4);
    assert!((r.p_value - 0.2254).abs() < 1e-3);
    // t with 2 df has a closed-form CDF: 1/2 + t / (2√(2 + t²))
    let t: f64 = 3f64.sqrt();
    let closed = 1.0 - t / (2.0 + t * t).sqrt();
    assert!((r.p_value - closed).abs() < 1e-12);
}

#[test]
fn paired_t_degenerate_cases() {
    let zero = paired_t_test(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
    assert_eq!(
        (zero.statistic, zero.p_value, zero.method),
        (0.0, 1.0, TestMethod::Degenerate)
    );
    let shift = paired_t_test(&[2.0, 3.0], &[1.0, 2.0]).unwrap();
    assert_eq!((shift.statistic, shift.p_value), (f64::INFINITY, 0.0));
}

/// Ranks by definition: 1 + #smaller + (#equal − 1)/2.
fn naive_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let less = v.iter().filter(|&&y| y < x).count() as f64;
            let equal = v.iter().filter(|&&y| y == x).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

fn naive_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

#[test]
fn spearman_matches_rank_correlation_oracle() {
    assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap().statistic, -0.5);
    let mut rng = RngStream::new(11, "spearman");
    for _ in 0..50 {
        let n = 3 + rng.next_below(30) as usize;
        // coarse values force ties
        let x: Vec<f64> = (0..n).map(|_| rng.next_below(6) as f64).collect();
        let y: Vec<f64> = (0..n).map(|i| x[i] + rng.next_below(4) as f64).collect();
        let Ok(r) = spearman(&x, &y) else { continue };
        let oracle = naive_pearson(&naive_ranks(&x), &naive_ranks(&y));
        assert!((r.statistic - oracle).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&r.p_value));
    }
}

/// Null distribution of U by the recurrence
/// `N(u; m, n) = N(u − n; m − 1, n) + N(u; m, n − 1)`.
fn u_counts(m: usize, n: usize) -> Vec<f64> {
    if m == 0 || n == 0 {
        return vec![1.0];
    }
    let a = u_counts(m - 1, n);
    let b = u_counts(m, n - 1);
    (0..=m * n)
        .map(|u| {
            let from_a = if u >= n {
                a.get(u - n).copied().unwrap_or(0.0)
            } else {
                0.0
            };
            from_a + b.get(u).copied().unwrap_or(0.0)
        })
        .collect()
}

fn exact_p_oracle(u: usize, m: usize, n: usize) -> f64 {
    let counts = u_counts(m, n);
    let total: f64 = counts.iter().sum();
    let lower: f64 = counts[..=u].iter().sum();
    let upper: f64 = counts[u..].iter().sum();
    (2.0 * lower.min(upper) / total).min(1.0)
}

/// Tie-free samples of sizes m and n whose U equals `u`: the second sample
/// is 0..n and each first-sample value sits just above `above` of them.
fn samples_with_u(u: usize, m: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut remaining = u;
    let a = (0..m)
        .map(|i| {
            let above = remaining.min(n);
            remaining -= above;
            above as f64 - 0.5 + 0.01 * i as f64
        })
        .collect();
    (a, (0..n).map(|j| j as f64).collect())
}

#[test]
fn exact_mann_whitney_matches_recurrence() {
    let r = mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
    assert_eq!(r.statistic, 0.0);
    assert!((r.p_value - 0.3333).abs() < 1e-4);
    assert_eq!(r.method, TestMethod::Exact);
    for (m, n) in [(2, 3), (3, 4), (4, 4), (5, 7), (6, 6)] {
        for u in 0..=m * n {
            let (a, b) = samples_with_u(u, m, n);
            let r = mann_whitney_u_exact(&a, &b).unwrap();
            assert_eq!(r.statistic, u as f64, "m {m} n {n}");
            assert!((r.p_value - exact_p_oracle(u, m, n)).abs() < 1e-12);
        }
    }
}

#[test]
fn exact_and_normal_agree_at_six_per_group() {
    let mut worst: f64 = 0.0;
    for u in 0..=36 {
        let (a, b) = samples_with_u(u, 6, 6);
        let exact = mann_whitney_u_exact(&a, &b).unwrap().p_value;
        let normal = mann_whitney_u_normal(&a, &b).unwrap().p_value;
        worst = worst.max((exact - normal).abs());
    }
    assert!(worst <= 0.03, "worst disagreement {worst}");
}

#[test]
fn ties_or_large_samples_use_the_normal_approximation() {
    let tied = mann_whitney_u(&[1.0, 2.0, 2.0], &[2.0, 3.0]).unwrap();
    assert_eq!(tied.method, TestMethod::NormalApproximation);
    let a: Vec<f64> = (0..10).map(f64::from).collect();
    let b: Vec<f64> = (10..20).map(f64::from).collect();
    let large = mann_whitney_u(&a, &b).unwrap();
    assert_eq!(large.method, TestMethod::NormalApproximation);
    assert_eq!(large.statistic, 0.0);
    assert!(large.p_value < 1e-3);
}
