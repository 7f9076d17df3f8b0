use super::AgentError;
use crate::Scalar;

/// Dense Q-table over discrete states and actions.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable<T> {
    pub states: usize,
    pub actions: usize,
    pub values: Vec<T>,
}

impl<T: Scalar> QTable<T> {
    pub fn zeros(states: usize, actions: usize) -> Self {
        Self { states, actions, values: vec![T::zero(); states * actions] }
    }

    pub fn get(&self, s: usize, a: usize) -> T {
        self.values[s * self.actions + a]
    }

    pub fn set(&mut self, s: usize, a: usize, v: T) {
        self.values[s * self.actions + a] = v;
    }

    pub fn max(&self, s: usize) -> T {
        self.row(s).iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn row(&self, s: usize) -> &[T] {
        &self.values[s * self.actions..(s + 1) * self.actions]
    }

    fn check(&self, s: usize, a: usize) -> Result<(), AgentError> {
        if s >= self.states {
            return Err(AgentError::UnknownState(s));
        }
        if a >= self.actions {
            return Err(AgentError::UnknownAction(a));
        }
        Ok(())
    }

    /// One Q-learning update of cell `(s, a)`:
    /// `Q(s,a) += alpha * (r + gamma * max Q(s',.) - Q(s,a))`.
    pub fn update(&mut self, s: usize, a: usize, r: T, s_next: usize, alpha: T, gamma: T) -> Result<(), AgentError> {
        self.check(s, a)?;
        self.check(s_next, 0)?;
        let q = self.get(s, a);
        let target = r + gamma * self.max(s_next);
        self.set(s, a, q + alpha * (target - q));
        Ok(())
    }
}
