use serde::{Deserialize, Serialize};

use super::{NetError, Params};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

/// Adam (or plain SGD) state for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer<T> {
    pub kind: OptimizerKind,
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    pub step: u64,
    /// First and second moments, shaped like the parameters. Unused by SGD.
    pub m: Params<T>,
    pub v: Params<T>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, learning_rate: T, params: &Params<T>) -> Self {
        Self {
            kind,
            learning_rate,
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            epsilon: T::of(1e-8),
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn adam(learning_rate: T, params: &Params<T>) -> Self {
        Self::new(OptimizerKind::Adam, learning_rate, params)
    }

    /// Applies one update in place and advances the step counter.
    pub fn apply(&mut self, params: &mut Params<T>, grads: &Params<T>) -> Result<(), NetError> {
        params.check_shape(grads)?;
        self.m.check_shape(params)?;
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => params.add_scaled(grads, -self.learning_rate),
            OptimizerKind::Adam => {
                let t = i32::try_from(self.step).unwrap_or(i32::MAX);
                let correct1 = T::one() - self.beta1.powi(t);
                let correct2 = T::one() - self.beta2.powi(t);
                let (b1, b2) = (self.beta1, self.beta2);
                for (((p, g), m), v) in params.iter_mut().zip(grads.iter()).zip(self.m.iter_mut()).zip(self.v.iter_mut())
                {
                    *m = b1 * *m + (T::one() - b1) * *g;
                    *v = b2 * *v + (T::one() - b2) * *g * *g;
                    let m_hat = *m / correct1;
                    let v_hat = *v / correct2;
                    *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
                }
            }
        }
        Ok(())
    }
}
