//! Labelled SplitMix64 streams.
//!
//! Every consumer of randomness in a trial (buffer updates, data order,
//! weight generation, replay sampling, model init) owns its own stream
//! derived from `(seed, label)`, so draining one stream never perturbs
//! another.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

fn label_key(label: &str) -> u64 {
    // The empty label leaves the seed untouched, so `(seed, "")` is plain
    // SplitMix64 seeded with `seed`.
    if label.is_empty() {
        0
    } else {
        fnv1a64(label.as_bytes())
    }
}

#[derive(Debug, Clone)]
pub struct RngStream {
    state: u64,
    label: String,
    spare_gaussian: Option<f64>,
}

impl RngStream {
    pub fn new(seed: u64, label: &str) -> Self {
        RngStream {
            state: seed ^ label_key(label),
            label: label.to_owned(),
            spare_gaussian: None,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via trigonometric Box-Muller. Each pair of outputs
    /// consumes exactly two uniforms; the second output is cached.
    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare_gaussian.take() {
            return z;
        }
        let u1 = self.next_f64();
        let u2 = self.next_f64();
        // 1 - u1 lies in (0, 1], keeping the log finite.
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_gaussian = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Uniform integer in `[0, bound)` by modulo reduction.
    #[inline]
    pub fn next_below(&mut self, bound: u64) -> u64 {
        debug_assert!(bound > 0);
        self.next_u64() % bound
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Hand evaluation of the three mixing lines for state 0:
    // state = 0x9E3779B97F4A7C15, then xor-shift-multiply twice.
    fn splitmix_reference(state: u64) -> u64 {
        let s = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let a = (s ^ (s >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        let b = (a ^ (a >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        b ^ (b >> 31)
    }

    #[test]
    fn seed_zero_empty_label_matches_reference() {
        let mut s = RngStream::new(0, "");
        assert_eq!(s.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(splitmix_reference(0), 0xE220_A839_7B1D_CDAF);
    }

    #[test]
    fn fnv_published_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x8594_4171_f739_67e8);
    }

    #[test]
    fn same_seed_and_label_repeat() {
        let mut a = RngStream::new(7, "buffer");
        let mut b = RngStream::new(7, "buffer");
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn labels_separate_streams() {
        let mut a = RngStream::new(7, "buffer");
        let mut b = RngStream::new(7, "sampling");
        let xs: Vec<u64> = (0..100).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..100).map(|_| b.next_u64()).collect();
        assert_ne!(xs, ys);
    }

    #[test]
    fn distinct_labels_differ_over_ten_thousand_draws() {
        let labels = ["buffer", "data", "init", "weights", "sampling"];
        for (i, la) in labels.iter().enumerate() {
            for lb in &labels[i + 1..] {
                let mut a = RngStream::new(3, la);
                let mut b = RngStream::new(3, lb);
                assert!((0..10_000).any(|_| a.next_u64() != b.next_u64()));
            }
        }
    }

    #[test]
    fn consecutive_outputs_distinct() {
        let mut s = RngStream::new(0, "");
        let x = s.next_u64();
        let y = s.next_u64();
        assert_ne!(x, y);
    }

    #[test]
    fn top_bit_is_fair() {
        let mut s = RngStream::new(11, "bits");
        let n = 1_000_000;
        let ones = (0..n).filter(|_| s.next_u64() >> 63 == 1).count();
        let mean = ones as f64 / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "{mean}");
    }

    #[test]
    fn uniform_moments() {
        let mut s = RngStream::new(12, "uniform");
        let n = 1_000_000;
        let xs: Vec<f64> = (0..n).map(|_| s.next_f64()).collect();
        assert!(xs.iter().all(|&x| (0.0..1.0).contains(&x)));
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.003, "{mean}");
        assert!((var - 1.0 / 12.0).abs() < 0.002, "{var}");
    }

    #[test]
    fn gaussian_moments() {
        let mut s = RngStream::new(13, "gauss");
        let n = 1_000_000;
        let xs: Vec<f64> = (0..n).map(|_| s.next_gaussian()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "{mean}");
        assert!((var - 1.0).abs() < 0.02, "{var}");
    }

    #[test]
    fn ten_gaussians_consume_ten_uniforms() {
        let mut g = RngStream::new(5, "count");
        for _ in 0..10 {
            g.next_gaussian();
        }
        let mut u = RngStream::new(5, "count");
        for _ in 0..10 {
            u.next_u64();
        }
        assert_eq!(g.next_u64(), u.next_u64());
    }

    #[test]
    fn draining_one_stream_leaves_another_alone() {
        let mut reference = RngStream::new(9, "b");
        let expected: Vec<u64> = (0..50).map(|_| reference.next_u64()).collect();

        let mut a = RngStream::new(9, "a");
        let mut b = RngStream::new(9, "b");
        for _ in 0..12_345 {
            a.next_u64();
        }
        let got: Vec<u64> = (0..50).map(|_| b.next_u64()).collect();
        assert_eq!(got, expected);
    }
}
