//! Transitions and a fixed-capacity ring buffer with uniform sampling.

use rand::Rng;
use rlbus_core::dynamics::Vector;

use crate::{Result, RlError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition<const N: usize, const M: usize> {
    pub x: Vector<N>,
    pub u: Vector<M>,
    pub r: f64,
    pub x_next: Vector<N>,
}

impl<const N: usize, const M: usize> Transition<N, M> {
    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(self.u.iter()).chain(self.x_next.iter()).all(|v| v.is_finite()) && self.r.is_finite()
    }
}

/// Once full, each push overwrites the oldest entry.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<const N: usize, const M: usize> {
    data: Vec<Transition<N, M>>,
    capacity: usize,
    head: usize,
}

impl<const N: usize, const M: usize> ReplayBuffer<N, M> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(RlError::Config("replay capacity must be positive".into()));
        }
        Ok(Self { data: Vec::with_capacity(capacity.min(1 << 16)), capacity, head: 0 })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rejects non-finite transitions.
    pub fn push(&mut self, t: Transition<N, M>) -> Result<()> {
        if !t.is_finite() {
            return Err(RlError::Diverged(format!("non-finite transition {t:?}")));
        }
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
        Ok(())
    }

    pub fn extend<I: IntoIterator<Item = Transition<N, M>>>(&mut self, items: I) -> Result<()> {
        items.into_iter().try_for_each(|t| self.push(t))
    }

    pub fn get(&self, i: usize) -> Option<&Transition<N, M>> {
        self.data.get(i)
    }

    /// `batch` indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<usize>> {
        if batch == 0 || batch > self.data.len() {
            return Err(RlError::Config(format!("batch of {batch} from a buffer holding {}", self.data.len())));
        }
        Ok((0..batch).map(|_| rng.random_range(0..self.data.len())).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<Transition<N, M>>> {
        Ok(self.sample_indices(batch, rng)?.into_iter().map(|i| self.data[i]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(v: f64) -> Transition<1, 1> {
        Transition { x: Vector::<1>::new(v), u: Vector::<1>::new(0.0), r: v, x_next: Vector::<1>::new(v) }
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut b = ReplayBuffer::new(3).unwrap();
        for i in 0..5 {
            b.push(t(i as f64)).unwrap();
        }
        assert_eq!(b.len(), 3);
        let mut rs: Vec<f64> = (0..3).map(|i| b.get(i).unwrap().r).collect();
        rs.sort_by(f64::total_cmp);
        assert_eq!(rs, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn sampling_is_reproducible() {
        let mut b = ReplayBuffer::new(100).unwrap();
        b.extend((0..50).map(|i| t(i as f64))).unwrap();
        let a = b.sample_indices(20, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let c = b.sample_indices(20, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, c);
        assert!(b.sample_indices(51, &mut ChaCha8Rng::seed_from_u64(3)).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        let mut b = ReplayBuffer::new(4).unwrap();
        assert!(b.push(t(f64::NAN)).is_err());
        assert!(b.is_empty());
        assert!(ReplayBuffer::<1, 1>::new(0).is_err());
    }
}
