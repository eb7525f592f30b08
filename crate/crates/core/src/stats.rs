//! Paired t-test, Spearman rank correlation and Mann-Whitney U, with the
//! Student-t tail evaluated through the regularized incomplete beta
//! function.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestMethod {
    StudentT,
    Exact,
    NormalApproximation,
    /// Zero variance: the statistic is 0 or infinite.
    Degenerate,
}

impl fmt::Display for TestMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TestMethod::StudentT => "student-t",
            TestMethod::Exact => "exact enumeration",
            TestMethod::NormalApproximation => "normal approximation (tie + continuity corrected)",
            TestMethod::Degenerate => "degenerate (zero variance)",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n1: usize,
    /// Second sample size; equals `n1` for paired and correlation tests.
    pub n2: usize,
    pub method: TestMethod,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    /// Bessel-corrected; `None` for a single value.
    pub std: Option<f64>,
    pub n: usize,
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.std {
            Some(s) => write!(f, "{:.2} ± {:.2}", self.mean, s),
            None => write!(f, "{:.2} ± n/a", self.mean),
        }
    }
}

pub fn mean_std(values: &[f64]) -> Result<MeanStd> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("mean of an empty sample".into()));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = (n > 1).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
    Ok(MeanStd { mean, std, n })
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let t = x + LANCZOS_G + 0.5;
    let series = LANCZOS[1..]
        .iter()
        .enumerate()
        .fold(LANCZOS[0], |acc, (i, c)| acc + c / (x + i as f64 + 1.0));
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + series.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// `P(|T| ≥ |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

/// `P(T ≤ t)`.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    let tail = 0.5 * student_t_two_sided(t, df);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// `P(|Z| ≥ |z|)` for a standard normal.
pub fn normal_two_sided(z: f64) -> f64 {
    libm::erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

/// Two-sided paired t-test on `a − b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "paired samples differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidArgument("paired t-test needs at least two pairs".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let summary = mean_std(&diffs)?;
    let sd = summary.std.unwrap_or(0.0);
    if sd == 0.0 {
        let (statistic, p_value) = if summary.mean == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(summary.mean), 0.0)
        };
        return Ok(TestResult {
            statistic,
            p_value,
            n1: n,
            n2: n,
            method: TestMethod::Degenerate,
        });
    }
    let t = summary.mean / (sd / (n as f64).sqrt());
    Ok(TestResult {
        statistic: t,
        p_value: student_t_two_sided(t, (n - 1) as f64),
        n1: n,
        n2: n,
        method: TestMethod::StudentT,
    })
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's ρ with a two-sided p-value from the t approximation.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<TestResult> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "spearman inputs differ in length ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::InvalidArgument("spearman needs at least three pairs".into()));
    }
    let rho = pearson(&average_ranks(x), &average_ranks(y))
        .ok_or_else(|| Error::Undefined("spearman correlation of a constant vector".into()))?;
    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * ((n - 2) as f64 / (1.0 - rho * rho)).sqrt();
        student_t_two_sided(t, (n - 2) as f64)
    };
    Ok(TestResult {
        statistic: rho,
        p_value,
        n1: n,
        n2: n,
        method: TestMethod::StudentT,
    })
}

/// Largest combined sample size for which the exact null distribution is
/// enumerated.
pub const MWU_EXACT_LIMIT: usize = 12;

struct RankSums {
    u: f64,
    n1: usize,
    n2: usize,
    has_ties: bool,
    tie_term: f64,
}

fn rank_sums(a: &[f64], b: &[f64]) -> RankSums {
    let (n1, n2) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = average_ranks(&pooled);
    let r1: f64 = ranks[..n1].iter().sum();
    let u = r1 - (n1 * (n1 + 1)) as f64 / 2.0;

    let mut sorted = pooled;
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut has_ties = false;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        if j - i > 1 {
            has_ties = true;
        }
        tie_term += t * t * t - t;
        i = j;
    }
    RankSums {
        u,
        n1,
        n2,
        has_ties,
        tie_term,
    }
}

fn check_mwu_sizes(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument(
            "mann-whitney needs two non-empty samples".into(),
        ));
    }
    Ok(())
}

/// Exact two-sided p-value by enumerating every assignment of ranks to the
/// first sample. Requires tie-free data and `n1 + n2 ≤ MWU_EXACT_LIMIT`.
pub fn mann_whitney_u_exact(a: &[f64], b: &[f64]) -> Result<TestResult> {
    check_mwu_sizes(a, b)?;
    let sums = rank_sums(a, b);
    let n = sums.n1 + sums.n2;
    if sums.has_ties || n > MWU_EXACT_LIMIT {
        return Err(Error::InvalidArgument(
            "exact mann-whitney requires tie-free samples of combined size <= 12".into(),
        ));
    }
    let offset = (sums.n1 * (sums.n1 + 1) / 2) as u32;
    let mut counts = vec![0u64; sums.n1 * sums.n2 + 1];
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != sums.n1 {
            continue;
        }
        let rank_sum: u32 = (0..n as u32).filter(|i| mask & (1 << i) != 0).map(|i| i + 1).sum();
        counts[(rank_sum - offset) as usize] += 1;
    }
    let total: u64 = counts.iter().sum();
    let u = sums.u.round() as usize;
    let lower: u64 = counts[..=u].iter().sum();
    let upper: u64 = counts[u..].iter().sum();
    let p = (2.0 * lower.min(upper) as f64 / total as f64).min(1.0);
    Ok(TestResult {
        statistic: sums.u,
        p_value: p,
        n1: sums.n1,
        n2: sums.n2,
        method: TestMethod::Exact,
    })
}

/// Normal approximation with tie-corrected variance and a 0.5 continuity
/// correction.
pub fn mann_whitney_u_normal(a: &[f64], b: &[f64]) -> Result<TestResult> {
    check_mwu_sizes(a, b)?;
    let sums = rank_sums(a, b);
    let (n1, n2) = (sums.n1 as f64, sums.n2 as f64);
    let n = n1 + n2;
    let mu = n1 * n2 / 2.0;
    let tie_adjust = if n > 1.0 { sums.tie_term / (n * (n - 1.0)) } else { 0.0 };
    let var = n1 * n2 / 12.0 * ((n + 1.0) - tie_adjust);
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = ((sums.u - mu).abs() - 0.5).max(0.0) / var.sqrt();
        normal_two_sided(z)
    };
    Ok(TestResult {
        statistic: sums.u,
        p_value: p,
        n1: sums.n1,
        n2: sums.n2,
        method: TestMethod::NormalApproximation,
    })
}

/// Two-sided Mann-Whitney U for the first sample. Exact when the samples
/// are tie-free with `n1 + n2 ≤ 12`, normal approximation otherwise.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<TestResult> {
    check_mwu_sizes(a, b)?;
    let sums = rank_sums(a, b);
    if !sums.has_ties && sums.n1 + sums.n2 <= MWU_EXACT_LIMIT {
        mann_whitney_u_exact(a, b)
    } else {
        mann_whitney_u_normal(a, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn mean_std_examples() {
        assert_eq!(
            mean_std(&[3.0, 3.0, 3.0]).unwrap(),
            MeanStd {
                mean: 3.0,
                std: Some(0.0),
                n: 3
            }
        );
        let m = mean_std(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((m.mean, m.std), (2.0, Some(1.0)));
        assert!(mean_std(&[]).is_err());
        assert_eq!(mean_std(&[4.0]).unwrap().std, None);
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!(ln_gamma(2.0).abs() < 1e-14);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
        assert!((ln_gamma(10.0) - 362_880f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn incomplete_beta_closed_forms() {
        // I_x(1, 1) = x; I_x(a, 1) = x^a
        assert!((regularized_incomplete_beta(1.0, 1.0, 0.3) - 0.3).abs() < 1e-14);
        assert!((regularized_incomplete_beta(3.0, 1.0, 0.7) - 0.343).abs() < 1e-14);
    }

    #[test]
    fn paired_t_hand_example() {
        let r = paired_t_test(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]).unwrap();
        assert!((r.statistic - 3f64.sqrt()).abs() < 1e-12);
        // df = 2: P(|T| > t) = 1 - t / sqrt(2 + t²)
        let exact = 1.0 - 3f64.sqrt() / 5f64.sqrt();
        assert!((r.p_value - exact).abs() < 1e-12);
        assert!((r.p_value - 0.2254).abs() < 1e-3);
    }

    #[test]
    fn paired_t_identical_and_constant_shift() {
        let r = paired_t_test(&[1.0, 5.0, 2.0], &[1.0, 5.0, 2.0]).unwrap();
        assert_eq!((r.statistic, r.p_value, r.method), (0.0, 1.0, TestMethod::Degenerate));
        let r = paired_t_test(&[2.0, 6.0, 3.0], &[1.0, 5.0, 2.0]).unwrap();
        assert_eq!((r.statistic, r.p_value), (f64::INFINITY, 0.0));
    }

    #[test]
    fn paired_t_swap_negates() {
        let a = [0.41, 0.46, 0.39, 0.52, 0.47];
        let b = [0.38, 0.45, 0.40, 0.47, 0.43];
        let ab = paired_t_test(&a, &b).unwrap();
        let ba = paired_t_test(&b, &a).unwrap();
        assert_eq!(ab.statistic, -ba.statistic);
        assert_eq!(ab.p_value, ba.p_value);
    }

    #[test]
    fn paired_t_input_errors() {
        assert!(paired_t_test(&[1.0], &[1.0]).is_err());
        assert!(paired_t_test(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn spearman_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(spearman(&x, &x).unwrap().statistic, 1.0);
        assert_eq!(spearman(&x, &x).unwrap().p_value, 0.0);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(spearman(&x, &neg).unwrap().statistic, -1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap().statistic, -0.5);
        assert!(matches!(spearman(&x, &[2.0; 4]), Err(Error::Undefined(_))));
    }

    #[test]
    fn average_ranks_share_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn mwu_separated_pairs() {
        let r = mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.method, TestMethod::Exact);
        assert!((r.p_value - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn mwu_identical_samples() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let r = mann_whitney_u(&a, &a).unwrap();
        assert_eq!(r.statistic, 8.0);
        assert!(r.p_value > 0.99);
    }

    #[test]
    fn mwu_shift_invariant() {
        let a = [0.3, 1.7, 2.2, 0.9];
        let b = [1.1, 2.9, 3.3];
        let r = mann_whitney_u(&a, &b).unwrap();
        let sa: Vec<f64> = a.iter().map(|v| v + 11.0).collect();
        let sb: Vec<f64> = b.iter().map(|v| v + 11.0).collect();
        assert_eq!(r, mann_whitney_u(&sa, &sb).unwrap());
    }

    #[test]
    fn mwu_u_statistics_complement() {
        let mut rng = RngStream::new(4, "mwu");
        for _ in 0..50 {
            let a: Vec<f64> = (0..7).map(|_| rng.next_f64()).collect();
            let b: Vec<f64> = (0..9).map(|_| rng.next_f64()).collect();
            let ua = mann_whitney_u(&a, &b).unwrap().statistic;
            let ub = mann_whitney_u(&b, &a).unwrap().statistic;
            assert_eq!(ua + ub, 63.0);
        }
    }

    #[test]
    fn mwu_exact_requires_small_tie_free() {
        assert!(mann_whitney_u_exact(&[1.0, 1.0], &[2.0]).is_err());
        let big: Vec<f64> = (0..13).map(f64::from).collect();
        assert!(mann_whitney_u_exact(&big[..6], &big[6..]).is_err());
        assert_eq!(
            mann_whitney_u(&big[..6], &big[6..]).unwrap().method,
            TestMethod::NormalApproximation
        );
    }

    proptest::proptest! {
        #[test]
        fn spearman_invariant_under_monotone_maps(xs in proptest::collection::vec(-100.0f64..100.0, 3..40),
                                                  ys in proptest::collection::vec(-100.0f64..100.0, 40)) {
            let ys = &ys[..xs.len()];
            if let Ok(r) = spearman(&xs, ys) {
                let fx: Vec<f64> = xs.iter().map(|v| (v / 50.0).exp()).collect();
                let fy: Vec<f64> = ys.iter().map(|v| v * v * v + 3.0 * v).collect();
                let r2 = spearman(&fx, &fy).unwrap();
                proptest::prop_assert!((r.statistic - r2.statistic).abs() < 1e-12);
            }
        }

        #[test]
        fn p_values_in_unit_interval(a in proptest::collection::vec(-5.0f64..5.0, 2..20),
                                      b in proptest::collection::vec(-5.0f64..5.0, 2..20)) {
            let n = a.len().min(b.len());
            let t = paired_t_test(&a[..n], &b[..n]).unwrap();
            proptest::prop_assert!((0.0..=1.0).contains(&t.p_value));
            let u = mann_whitney_u(&a, &b).unwrap();
            proptest::prop_assert!((0.0..=1.0).contains(&u.p_value));
        }
    }
}
