//! Fixed-capacity replay memory with reservoir insertion and per-slot
//! sampling weights.
//!
//! Weights belong to slot positions, not to samples: they are drawn once for
//! all `capacity` slots when the buffer is created and never change. A sample
//! that replaces the occupant of slot `k` is replayed under `weights[k]`.

use std::fmt;
use std::io::Write;

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Lower bound of the random weight range `(ε, 1]`.
pub const WEIGHT_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ReplaySlot {
    pub sample: Vec<f64>,
    pub label: usize,
    pub stored_logits: Option<Vec<f64>>,
    /// Online step at which the sample was offered to the buffer.
    pub inserted_at: u64,
    pub sample_uid: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeightKind {
    Uniform,
    RandomFixed,
}

impl WeightKind {
    pub fn as_str(self) -> &'static str {
        match self {
            WeightKind::Uniform => "uniform",
            WeightKind::RandomFixed => "random_fixed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "uniform" => Some(WeightKind::Uniform),
            "random_fixed" => Some(WeightKind::RandomFixed),
            _ => None,
        }
    }
}

impl fmt::Display for WeightKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeightPolicy {
    pub kind: WeightKind,
    pub trial_id: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    Stored(usize),
    Discarded,
}

/// All ones for [`WeightKind::Uniform`]; otherwise `capacity` independent
/// draws from `Uniform(ε, 1]`.
pub fn generate_weights(capacity: usize, policy: WeightPolicy, weight_stream: &mut RngStream) -> Result<Vec<f64>> {
    if capacity == 0 {
        return Err(Error::InvalidArgument("buffer capacity must be positive".into()));
    }
    Ok(match policy.kind {
        WeightKind::Uniform => vec![1.0; capacity],
        WeightKind::RandomFixed => (0..capacity)
            .map(|_| 1.0 - (1.0 - WEIGHT_EPSILON) * weight_stream.next_f64())
            .collect(),
    })
}

/// `p_i = w_i / Σ_{j<occupied} w_j` over the occupied prefix.
pub fn normalize_weights(weights: &[f64], occupied: usize) -> Result<Vec<f64>> {
    if occupied == 0 {
        return Err(Error::EmptyBuffer);
    }
    if occupied > weights.len() {
        return Err(Error::InvalidArgument(format!(
            "{occupied} occupied slots but only {} weights",
            weights.len()
        )));
    }
    let total: f64 = weights[..occupied].iter().sum();
    Ok(weights[..occupied].iter().map(|w| w / total).collect())
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    slots: Vec<Option<ReplaySlot>>,
    weights: Vec<f64>,
    /// `cumulative[k] = Σ_{j≤k} weights[j]`
    cumulative: Vec<f64>,
    seen: u64,
}

impl ReplayBuffer {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidArgument("buffer capacity must be positive".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "slot weights must be positive, got {w}"
            )));
        }
        let cumulative = weights
            .iter()
            .scan(0.0, |acc, &w| {
                *acc += w;
                Some(*acc)
            })
            .collect();
        Ok(ReplayBuffer {
            slots: vec![None; weights.len()],
            weights,
            cumulative,
            seen: 0,
        })
    }

    pub fn with_policy(capacity: usize, policy: WeightPolicy, weight_stream: &mut RngStream) -> Result<Self> {
        Self::new(generate_weights(capacity, policy, weight_stream)?)
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn occupied(&self) -> usize {
        self.seen.min(self.capacity() as u64) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.seen == 0
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn slot(&self, index: usize) -> Option<&ReplaySlot> {
        self.slots.get(index).and_then(Option::as_ref)
    }

    pub fn slot_mut(&mut self, index: usize) -> Option<&mut ReplaySlot> {
        self.slots.get_mut(index).and_then(Option::as_mut)
    }

    /// Occupied slots in slot order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &ReplaySlot)> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.as_ref().map(|s| (i, s)))
    }

    pub fn probabilities(&self) -> Result<Vec<f64>> {
        normalize_weights(&self.weights, self.occupied())
    }

    /// Reservoir sampling (Algorithm R). The fill phase consumes no
    /// randomness; afterwards one `next_u64` decides each offer.
    pub fn reservoir_insert(&mut self, item: ReplaySlot, buffer_stream: &mut RngStream) -> InsertOutcome {
        let capacity = self.capacity() as u64;
        let n = self.seen;
        self.seen += 1;
        if n < capacity {
            self.slots[n as usize] = Some(item);
            return InsertOutcome::Stored(n as usize);
        }
        let j = buffer_stream.next_below(n + 1);
        if j < capacity {
            self.slots[j as usize] = Some(item);
            InsertOutcome::Stored(j as usize)
        } else {
            InsertOutcome::Discarded
        }
    }

    /// `batch_size` slot indices drawn with replacement by inverse CDF over
    /// the occupied prefix.
    pub fn sample_batch(&self, batch_size: usize, sampling_stream: &mut RngStream) -> Result<Vec<usize>> {
        let occupied = self.occupied();
        if occupied == 0 {
            return Err(Error::EmptyBuffer);
        }
        let prefix = &self.cumulative[..occupied];
        let total = prefix[occupied - 1];
        Ok((0..batch_size)
            .map(|_| {
                let u = sampling_stream.next_f64() * total;
                prefix.partition_point(|&c| c <= u).min(occupied - 1)
            })
            .collect())
    }

    /// CSV snapshot: `slot,sample_uid,label,weight,inserted_at`.
    pub fn write_snapshot<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "slot,sample_uid,label,weight,inserted_at")?;
        for (k, slot) in self.iter() {
            writeln!(
                out,
                "{k},{},{},{:.16e},{}",
                slot.sample_uid, slot.label, self.weights[k], slot.inserted_at
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(uid: u64) -> ReplaySlot {
        ReplaySlot {
            sample: vec![uid as f64],
            label: 0,
            stored_logits: None,
            inserted_at: uid,
            sample_uid: uid,
        }
    }

    fn uniform(capacity: usize) -> ReplayBuffer {
        ReplayBuffer::new(vec![1.0; capacity]).unwrap()
    }

    #[test]
    fn fill_phase_is_front_to_back() {
        let mut b = uniform(3);
        let mut s = RngStream::new(0, "buffer");
        for uid in 0..3 {
            assert_eq!(
                b.reservoir_insert(item(uid), &mut s),
                InsertOutcome::Stored(uid as usize)
            );
        }
        assert_eq!(b.occupied(), 3);
        // no randomness consumed while filling
        assert_eq!(s.next_u64(), RngStream::new(0, "buffer").next_u64());
    }

    #[test]
    fn fourth_item_discarded_when_draw_exceeds_capacity() {
        // find a seed whose first draw is 3 mod 4
        let seed = (0..)
            .find(|&seed| RngStream::new(seed, "buffer").next_u64() % 4 == 3)
            .unwrap();
        let mut b = uniform(3);
        let mut s = RngStream::new(seed, "buffer");
        for uid in 0..3 {
            b.reservoir_insert(item(uid), &mut s);
        }
        assert_eq!(b.reservoir_insert(item(3), &mut s), InsertOutcome::Discarded);
        assert_eq!(b.seen(), 4);
        assert_eq!(b.iter().map(|(_, s)| s.sample_uid).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn occupied_is_min_of_seen_and_capacity() {
        let mut b = uniform(5);
        let mut s = RngStream::new(1, "buffer");
        for uid in 0..40 {
            b.reservoir_insert(item(uid), &mut s);
            assert_eq!(b.occupied(), (uid as usize + 1).min(5));
            assert_eq!(b.iter().count(), b.occupied());
        }
    }

    #[test]
    fn uniform_policy_is_all_ones() {
        let policy = WeightPolicy {
            kind: WeightKind::Uniform,
            trial_id: 50,
        };
        let w = generate_weights(4, policy, &mut RngStream::new(0, "weights")).unwrap();
        assert_eq!(w, vec![1.0; 4]);
    }

    #[test]
    fn random_weights_repeat_and_stay_in_range() {
        let policy = WeightPolicy {
            kind: WeightKind::RandomFixed,
            trial_id: 3,
        };
        let a = generate_weights(4, policy, &mut RngStream::new(9, "weights")).unwrap();
        let b = generate_weights(4, policy, &mut RngStream::new(9, "weights")).unwrap();
        assert_eq!(a, b);
        let many = generate_weights(100_000, policy, &mut RngStream::new(10, "weights")).unwrap();
        assert!(many.iter().all(|&w| w > WEIGHT_EPSILON && w <= 1.0));
        let mean = many.iter().sum::<f64>() / many.len() as f64;
        assert!((mean - 0.5).abs() < 0.01, "{mean}");
    }

    #[test]
    fn zero_capacity_rejected() {
        let policy = WeightPolicy {
            kind: WeightKind::Uniform,
            trial_id: 0,
        };
        assert!(generate_weights(0, policy, &mut RngStream::new(0, "w")).is_err());
        assert!(ReplayBuffer::new(vec![]).is_err());
        assert!(ReplayBuffer::new(vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_weights(&[1.0; 4], 4).unwrap(), vec![0.25; 4]);
        assert_eq!(normalize_weights(&[1.0, 3.0], 2).unwrap(), vec![0.25, 0.75]);
        assert_eq!(normalize_weights(&[2.0, 2.0, 2.0, 100.0], 2).unwrap(), vec![0.5, 0.5]);
        assert!(matches!(normalize_weights(&[1.0], 0), Err(Error::EmptyBuffer)));
    }

    #[test]
    fn sampling_empty_buffer_fails() {
        let b = uniform(4);
        assert!(matches!(
            b.sample_batch(3, &mut RngStream::new(0, "sampling")),
            Err(Error::EmptyBuffer)
        ));
    }

    #[test]
    fn single_occupied_slot_always_drawn() {
        let mut b = ReplayBuffer::new(vec![0.3, 5.0, 7.0]).unwrap();
        b.reservoir_insert(item(0), &mut RngStream::new(0, "buffer"));
        let idx = b.sample_batch(64, &mut RngStream::new(1, "sampling")).unwrap();
        assert!(idx.iter().all(|&i| i == 0));
    }

    #[test]
    fn snapshot_lists_occupied_slots() {
        let mut b = ReplayBuffer::new(vec![0.5, 0.25, 1.0]).unwrap();
        let mut s = RngStream::new(0, "buffer");
        b.reservoir_insert(item(10), &mut s);
        b.reservoir_insert(item(11), &mut s);
        let mut out = Vec::new();
        b.write_snapshot(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "slot,sample_uid,label,weight,inserted_at");
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("1,11,0,2.5"));
    }

    proptest::proptest! {
        #[test]
        fn probabilities_sum_to_one(ws in proptest::collection::vec(1e-6f64..1.0, 1..300), frac in 0.0f64..1.0) {
            let occupied = 1 + ((ws.len() - 1) as f64 * frac) as usize;
            let p = normalize_weights(&ws, occupied).unwrap();
            proptest::prop_assert_eq!(p.len(), occupied);
            proptest::prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn sampled_indices_stay_in_occupied_prefix(seed in 0u64..1000, n in 1u64..30) {
            let mut b = ReplayBuffer::with_policy(
                12,
                WeightPolicy { kind: WeightKind::RandomFixed, trial_id: 0 },
                &mut RngStream::new(seed, "weights"),
            ).unwrap();
            let mut s = RngStream::new(seed, "buffer");
            for uid in 0..n {
                b.reservoir_insert(item(uid), &mut s);
            }
            let idx = b.sample_batch(50, &mut RngStream::new(seed, "sampling")).unwrap();
            proptest::prop_assert!(idx.iter().all(|&i| i < b.occupied()));
        }
    }
}
