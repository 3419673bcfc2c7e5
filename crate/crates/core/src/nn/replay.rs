use ndarray::{Array1, Array2};
use rand::seq::index;

use super::Scalar;
use crate::error::{Error, Result};
use crate::rng::RandomStream;

/// Ring buffer of `(s, a, r, s')` transitions with flat row storage.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer<S = f64> {
    capacity: usize,
    state_dim: usize,
    action_dim: usize,
    states: Vec<S>,
    actions: Vec<S>,
    rewards: Vec<S>,
    next_states: Vec<S>,
    cursor: usize,
    len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch<S = f64> {
    pub s: Array2<S>,
    pub a: Array2<S>,
    pub r: Array1<S>,
    pub s2: Array2<S>,
}

impl<S: Scalar> ReplayBuffer<S> {
    pub fn new(capacity: usize, state_dim: usize, action_dim: usize) -> Self {
        ReplayBuffer {
            capacity,
            state_dim,
            action_dim,
            states: vec![S::zero(); capacity * state_dim],
            actions: vec![S::zero(); capacity * action_dim],
            rewards: vec![S::zero(); capacity],
            next_states: vec![S::zero(); capacity * state_dim],
            cursor: 0,
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, s: &[S], a: &[S], r: S, s2: &[S]) -> Result<()> {
        if s.len() != self.state_dim || s2.len() != self.state_dim {
            return Err(Error::shape("replay state", self.state_dim, s.len().max(s2.len())));
        }
        if a.len() != self.action_dim {
            return Err(Error::shape("replay action", self.action_dim, a.len()));
        }
        let i = self.cursor;
        let (sd, ad) = (self.state_dim, self.action_dim);
        self.states[i * sd..(i + 1) * sd].copy_from_slice(s);
        self.actions[i * ad..(i + 1) * ad].copy_from_slice(a);
        self.rewards[i] = r;
        self.next_states[i * sd..(i + 1) * sd].copy_from_slice(s2);
        self.cursor = (self.cursor + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
        Ok(())
    }

    /// Stored rows oldest first.
    fn row_order(&self) -> impl Iterator<Item = usize> + '_ {
        let start = if self.len < self.capacity { 0 } else { self.cursor };
        (0..self.len).map(move |i| (start + i) % self.capacity)
    }

    pub fn rewards_in_order(&self) -> Vec<S> {
        self.row_order().map(|i| self.rewards[i]).collect()
    }

    fn gather(&self, rows: &[usize]) -> Batch<S> {
        let (sd, ad) = (self.state_dim, self.action_dim);
        let n = rows.len();
        let pick = |src: &[S], dim: usize| {
            let mut out = Vec::with_capacity(n * dim);
            for &i in rows {
                out.extend_from_slice(&src[i * dim..(i + 1) * dim]);
            }
            Array2::from_shape_vec((n, dim), out).expect("row count matches")
        };
        Batch {
            s: pick(&self.states, sd),
            a: pick(&self.actions, ad),
            r: rows.iter().map(|&i| self.rewards[i]).collect(),
            s2: pick(&self.next_states, sd),
        }
    }

    /// Uniform batch without replacement.
    pub fn sample(&self, batch: usize, rng: &mut RandomStream) -> Result<Batch<S>> {
        if self.len < batch {
            return Err(Error::BufferUnderfilled { len: self.len, batch });
        }
        let rows: Vec<usize> = index::sample(rng, self.len, batch).into_iter().collect();
        Ok(self.gather(&rows))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_overwrites_oldest() {
        let mut b = ReplayBuffer::<f64>::new(2, 1, 1);
        for (i, r) in [1.0, 2.0, 3.0].into_iter().enumerate() {
            b.push(&[i as f64], &[0.0], r, &[0.0]).unwrap();
        }
        assert_eq!(b.len(), 2);
        assert_eq!(b.rewards_in_order(), vec![2.0, 3.0]);
        assert!(b.push(&[0.0, 1.0], &[0.0], 0.0, &[0.0]).is_err());
    }

    #[test]
    fn full_sample_is_a_permutation() {
        let mut b = ReplayBuffer::<f64>::new(10, 1, 1);
        for i in 0..7 {
            b.push(&[i as f64], &[0.0], i as f64, &[0.0]).unwrap();
        }
        let batch = b.sample(7, &mut RandomStream::from_seed(1)).unwrap();
        let mut r = batch.r.to_vec();
        r.sort_by(f64::total_cmp);
        assert_eq!(r, (0..7).map(|i| i as f64).collect::<Vec<_>>());
        assert!(matches!(b.sample(8, &mut RandomStream::from_seed(1)), Err(Error::BufferUnderfilled { .. })));
    }

    #[test]
    fn single_draws_are_uniform() {
        let mut b = ReplayBuffer::<f64>::new(10, 1, 1);
        for i in 0..10 {
            b.push(&[0.0], &[0.0], i as f64, &[0.0]).unwrap();
        }
        let mut rng = RandomStream::from_seed(9);
        let n = 100_000;
        let mut counts = [0usize; 10];
        for _ in 0..n {
            counts[b.sample(1, &mut rng).unwrap().r[0] as usize] += 1;
        }
        let expected = n as f64 / 10.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 99th percentile of chi-square with 9 degrees of freedom.
        assert!(chi2 < 21.666, "chi2 = {chi2}");
    }
}
