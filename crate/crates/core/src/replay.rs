//! Shared experience replay buffer.

use rand::Rng;

use crate::error::{check_len, HedError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub terminated: bool,
}

/// Column-packed mini-batch, row-major per field.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub len: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub states: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<f64>,
    pub terminated: Vec<bool>,
}

impl Batch {
    pub fn from_transitions(ts: &[Transition]) -> Result<Self> {
        let first = ts.first().ok_or(HedError::EmptyBuffer)?;
        let (sd, ad) = (first.s.len(), first.a.len());
        let mut b = Batch {
            len: ts.len(),
            state_dim: sd,
            action_dim: ad,
            states: Vec::with_capacity(ts.len() * sd),
            actions: Vec::with_capacity(ts.len() * ad),
            rewards: Vec::with_capacity(ts.len()),
            next_states: Vec::with_capacity(ts.len() * sd),
            terminated: Vec::with_capacity(ts.len()),
        };
        for t in ts {
            check_len("Batch state", sd, t.s.len())?;
            check_len("Batch next state", sd, t.s_next.len())?;
            check_len("Batch action", ad, t.a.len())?;
            b.states.extend_from_slice(&t.s);
            b.actions.extend_from_slice(&t.a);
            b.rewards.push(t.r);
            b.next_states.extend_from_slice(&t.s_next);
            b.terminated.push(t.terminated);
        }
        Ok(b)
    }

    /// `(state ‖ action)` rows for critic evaluation.
    pub fn state_actions(&self, actions: &[f64]) -> Vec<f64> {
        concat_rows(&self.states, self.state_dim, actions, self.action_dim)
    }
}

/// Row-wise concatenation of two row-major matrices with equal row counts.
pub fn concat_rows(left: &[f64], left_dim: usize, right: &[f64], right_dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(left.len() + right.len());
    for (l, r) in left
        .chunks_exact(left_dim)
        .zip(right.chunks_exact(right_dim))
    {
        out.extend_from_slice(l);
        out.extend_from_slice(r);
    }
    out
}

/// Fixed-capacity FIFO ring of transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    state_dim: usize,
    action_dim: usize,
    data: Vec<Transition>,
    /// Slot the next push overwrites once the buffer is full.
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, state_dim: usize, action_dim: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            state_dim,
            action_dim,
            data: Vec::with_capacity(capacity.min(1 << 16)),
            cursor: 0,
        }
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

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub(crate) fn cursor(&self) -> usize {
        self.cursor
    }

    /// Transitions in storage order (not insertion order once wrapped).
    pub fn raw(&self) -> &[Transition] {
        &self.data
    }

    pub(crate) fn from_raw(
        capacity: usize,
        state_dim: usize,
        action_dim: usize,
        data: Vec<Transition>,
        cursor: usize,
    ) -> Result<Self> {
        if capacity == 0 || data.len() > capacity || (cursor != 0 && cursor >= data.len()) {
            return Err(HedError::Checkpoint(
                "inconsistent replay buffer layout".into(),
            ));
        }
        Ok(Self {
            capacity,
            state_dim,
            action_dim,
            data,
            cursor,
        })
    }

    /// Transitions from oldest to newest.
    pub fn iter_fifo(&self) -> impl Iterator<Item = &Transition> {
        let (newer, older) = self.data.split_at(self.cursor);
        older.iter().chain(newer)
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        check_len("ReplayBuffer::push state", self.state_dim, t.s.len())?;
        check_len(
            "ReplayBuffer::push next state",
            self.state_dim,
            t.s_next.len(),
        )?;
        check_len("ReplayBuffer::push action", self.action_dim, t.a.len())?;
        if !t.r.is_finite() {
            return Err(HedError::NonFinite("reward"));
        }
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.cursor] = t;
            self.cursor = (self.cursor + 1) % self.capacity;
        }
        Ok(())
    }

    fn draw_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.data.is_empty() {
            return Err(HedError::EmptyBuffer);
        }
        let len = self.data.len();
        Ok((0..n).map(|_| rng.gen_range(0..len)).collect())
    }

    /// Uniform sample with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Transition>> {
        Ok(self
            .draw_indices(n, rng)?
            .into_iter()
            .map(|i| self.data[i].clone())
            .collect())
    }

    /// Same draw as [`sample`](Self::sample), packed into a [`Batch`].
    pub fn sample_batch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Batch> {
        let idx = self.draw_indices(n, rng)?;
        let (sd, ad) = (self.state_dim, self.action_dim);
        let mut b = Batch {
            len: n,
            state_dim: sd,
            action_dim: ad,
            states: Vec::with_capacity(n * sd),
            actions: Vec::with_capacity(n * ad),
            rewards: Vec::with_capacity(n),
            next_states: Vec::with_capacity(n * sd),
            terminated: Vec::with_capacity(n),
        };
        for i in idx {
            let t = &self.data[i];
            b.states.extend_from_slice(&t.s);
            b.actions.extend_from_slice(&t.a);
            b.rewards.push(t.r);
            b.next_states.extend_from_slice(&t.s_next);
            b.terminated.push(t.terminated);
        }
        Ok(b)
    }
}
