//! FIFO replay buffer with seeded uniform sampling.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub act: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    /// True only for genuine terminations (not time-limit truncations), so
    /// bootstrapping continues through truncated episodes.
    pub done: bool,
}

/// Column-per-sample minibatch handed to the SAC update.
pub struct TransitionBatch {
    pub obs: DMatrix<f64>,
    pub act: DMatrix<f64>,
    pub reward: DVector<f64>,
    pub next_obs: DMatrix<f64>,
    pub done: DVector<f64>,
}

pub struct ReplayBuffer {
    buf: VecDeque<Transition>,
    capacity: usize,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        assert!(capacity > 0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Dedicated stream so buffer sampling never aliases other draws.
        rng.set_stream(7);
        Self { buf: VecDeque::with_capacity(capacity), capacity, rng }
    }

    pub fn push(&mut self, t: Transition) {
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    /// Uniform sample with replacement.
    pub fn sample(&mut self, batch: usize) -> TransitionBatch {
        assert!(!self.buf.is_empty(), "cannot sample from an empty buffer");
        let obs_dim = self.buf[0].obs.len();
        let act_dim = self.buf[0].act.len();
        let mut obs = DMatrix::zeros(obs_dim, batch);
        let mut act = DMatrix::zeros(act_dim, batch);
        let mut reward = DVector::zeros(batch);
        let mut next_obs = DMatrix::zeros(obs_dim, batch);
        let mut done = DVector::zeros(batch);
        for j in 0..batch {
            let t = &self.buf[self.rng.gen_range(0..self.buf.len())];
            obs.column_mut(j).copy_from_slice(&t.obs);
            act.column_mut(j).copy_from_slice(&t.act);
            reward[j] = t.reward;
            next_obs.column_mut(j).copy_from_slice(&t.next_obs);
            done[j] = if t.done { 1.0 } else { 0.0 };
        }
        TransitionBatch { obs, act, reward, next_obs, done }
    }
}
