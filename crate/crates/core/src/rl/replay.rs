use std::collections::VecDeque;

use rand::Rng;

use super::{Action, AgentError};
use crate::state::StockState;

pub const DEFAULT_REPLAY_CAPACITY: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: StockState,
    pub action: Action,
    pub reward: f64,
    pub next_state: StockState,
    pub terminal: bool,
}

impl Transition {
    fn continues(&self, next: &Transition) -> bool {
        !self.terminal && self.next_state.group_index == next.state.group_index
    }
}

/// Transitions stored as time-contiguous runs. Eviction drops the oldest
/// transition first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    runs: VecDeque<VecDeque<Transition>>,
    capacity: usize,
    len: usize,
    open: bool,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { runs: VecDeque::new(), capacity, len: 0, open: false }
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

    pub fn run_lengths(&self) -> Vec<usize> {
        self.runs.iter().map(VecDeque::len).collect()
    }

    /// Closes the current run; the next push starts a new one.
    pub fn end_run(&mut self) {
        self.open = false;
    }

    /// Appends to the current run when `t` directly follows its last
    /// transition, otherwise starts a new run.
    pub fn push(&mut self, t: Transition) {
        let extend = self.open && self.runs.back().and_then(|r| r.back()).is_some_and(|last| last.continues(&t));
        if extend {
            self.runs.back_mut().expect("open run").push_back(t);
        } else {
            self.runs.push_back(VecDeque::from([t]));
            self.open = true;
        }
        self.len += 1;
        while self.len > self.capacity {
            let oldest = self.runs.front_mut().expect("non-empty buffer");
            oldest.pop_front();
            self.len -= 1;
            if oldest.is_empty() {
                self.runs.pop_front();
                if self.runs.is_empty() {
                    self.open = false;
                }
            }
        }
    }

    /// Number of distinct windows of length `seq_len`.
    pub fn window_count(&self, seq_len: usize) -> usize {
        self.runs.iter().map(|r| (r.len() + 1).saturating_sub(seq_len)).sum()
    }

    /// Samples `batch_size` contiguous windows uniformly (with replacement)
    /// over every window that lies inside a single run.
    pub fn sample_sequences<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        seq_len: usize,
        rng: &mut R,
    ) -> Result<Vec<Vec<Transition>>, AgentError> {
        if seq_len == 0 {
            return Err(AgentError::InvalidConfig("seq_len must be positive".into()));
        }
        let total = self.window_count(seq_len);
        if total < batch_size || total == 0 {
            return Err(AgentError::NotEnoughData(format!(
                "{total} windows of length {seq_len} available, {batch_size} requested"
            )));
        }
        let mut batch = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let mut k = rng.random_range(0..total);
            for run in &self.runs {
                let windows = (run.len() + 1).saturating_sub(seq_len);
                if k < windows {
                    batch.push(run.range(k..k + seq_len).cloned().collect());
                    break;
                }
                k -= windows;
            }
        }
        Ok(batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn state(g: usize) -> StockState {
        StockState { features: vec![g as f64], group_index: g, valid: true }
    }

    fn transition(g: usize) -> Transition {
        Transition { state: state(g), action: Action::Hold, reward: g as f64, next_state: state(g + 1), terminal: false }
    }

    #[test]
    fn evicts_oldest_first() {
        let mut buf = ReplayBuffer::new(10);
        for g in 0..25 {
            buf.push(transition(g));
        }
        assert_eq!(buf.len(), 10);
        assert_eq!(buf.run_lengths(), vec![10]);
        let first = buf.sample_sequences(1, 10, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(first[0][0].state.group_index, 15);
    }

    #[test]
    fn windows_are_contiguous_and_in_bounds() {
        let mut buf = ReplayBuffer::new(1000);
        for g in 0..100 {
            buf.push(transition(g));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            for w in buf.sample_sequences(16, 16, &mut rng).unwrap() {
                assert_eq!(w.len(), 16);
                assert!(w.windows(2).all(|p| p[0].continues(&p[1])));
                assert!(w[15].state.group_index < 100);
            }
        }
    }

    #[test]
    fn windows_never_straddle_runs() {
        let mut buf = ReplayBuffer::new(1000);
        for episode in 0..5 {
            for g in 0..30 {
                buf.push(transition(g));
            }
            if episode % 2 == 0 {
                buf.end_run();
            }
        }
        assert_eq!(buf.run_lengths(), vec![30; 5]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for w in buf.sample_sequences(100, 8, &mut rng).unwrap() {
            assert!(w.windows(2).all(|p| p[1].state.group_index == p[0].state.group_index + 1));
        }
    }

    #[test]
    fn seeded_sampling_is_deterministic() {
        let mut buf = ReplayBuffer::new(1000);
        (0..60).for_each(|g| buf.push(transition(g)));
        let a = buf.sample_sequences(4, 5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = buf.sample_sequences(4, 5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn not_enough_data() {
        let mut buf = ReplayBuffer::new(100);
        (0..10).for_each(|g| buf.push(transition(g)));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(buf.sample_sequences(1, 11, &mut rng), Err(AgentError::NotEnoughData(_))));
        assert!(buf.sample_sequences(1, 10, &mut rng).is_ok());
    }

    #[test]
    fn terminal_transition_closes_run() {
        let mut buf = ReplayBuffer::new(100);
        let mut t = transition(0);
        t.terminal = true;
        buf.push(t);
        buf.push(transition(1));
        assert_eq!(buf.run_lengths(), vec![1, 1]);
    }
}
