use rand::Rng;

use super::{
    check_dim, init_bound, init_rng, ForwardPass, HiddenState, NetError, Params, QValues, StepCache, Tensor,
    ACTION_COUNT,
};
use crate::Scalar;

/// Feedforward Q-network: one tanh layer of width H and the same affine head
/// as [`super::LstmQNetwork`]. Has no recurrence; the hidden carry passes
/// through unchanged.
///
/// Tensors: `w` (H x D), `b` (1 x H), `head_w` (H x 3), `head_b` (1 x 3).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpQNetwork<T> {
    pub input_dim: usize,
    pub hidden: usize,
    pub params: Params<T>,
}

impl<T: Scalar> MlpQNetwork<T> {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        let params = Params {
            tensors: vec![
                Tensor::zeros("w", hidden, input_dim),
                Tensor::zeros("b", 1, hidden),
                Tensor::zeros("head_w", hidden, ACTION_COUNT),
                Tensor::zeros("head_b", 1, ACTION_COUNT),
            ],
        };
        Self { input_dim, hidden, params }
    }

    pub fn init(input_dim: usize, hidden: usize, seed: u64) -> Self {
        assert!(input_dim >= 1 && hidden >= 1, "network dimensions must be positive");
        let mut net = Self::zeros(input_dim, hidden);
        let bound = init_bound::<T>(hidden).as_f64();
        let mut rng = init_rng(seed);
        for v in net.params.iter_mut() {
            *v = T::of(rng.random_range(-bound..=bound));
        }
        net
    }

    pub fn from_params(input_dim: usize, hidden: usize, params: Params<T>) -> Result<Self, NetError> {
        let net = Self { input_dim, hidden, params };
        Self::zeros(input_dim, hidden).params.check_shape(&net.params)?;
        Ok(net)
    }

    pub fn forward<S: AsRef<[T]>>(
        &self,
        sequence: &[S],
        h0: &HiddenState<T>,
        keep_cache: bool,
    ) -> Result<ForwardPass<T>, NetError> {
        check_dim(sequence, self.input_dim)?;
        let (hd, d) = (self.hidden, self.input_dim);
        let t = &self.params.tensors;
        let (w, b, head_w, head_b) = (&t[0].data, &t[1].data, &t[2].data, &t[3].data);
        let mut qs = Vec::with_capacity(sequence.len());
        let mut cache = keep_cache.then(|| Vec::with_capacity(sequence.len()));
        for x in sequence {
            let x = x.as_ref();
            let act: Vec<T> = (0..hd)
                .map(|j| {
                    let mut acc = b[j];
                    for (wk, xk) in w[j * d..(j + 1) * d].iter().zip(x) {
                        acc += *wk * *xk;
                    }
                    acc.tanh()
                })
                .collect();
            let mut q = [T::zero(); ACTION_COUNT];
            for (a, qa) in q.iter_mut().enumerate() {
                let mut acc = head_b[a];
                for j in 0..hd {
                    acc += act[j] * head_w[j * ACTION_COUNT + a];
                }
                *qa = acc;
            }
            qs.push(q);
            if let Some(cache) = cache.as_mut() {
                cache.push(StepCache {
                    x: x.to_vec(),
                    h_prev: Vec::new(),
                    c_prev: Vec::new(),
                    gates: act.clone(),
                    c: Vec::new(),
                    tanh_c: Vec::new(),
                    h: act,
                });
            }
        }
        Ok(ForwardPass { q: qs, hidden: h0.clone(), cache })
    }

    pub fn backward(&self, pass: &ForwardPass<T>, dq: &[QValues<T>]) -> Result<Params<T>, NetError> {
        let cache = pass.cache.as_ref().ok_or(NetError::MissingCache)?;
        if dq.len() != cache.len() {
            return Err(NetError::DimensionMismatch { expected: cache.len(), found: dq.len() });
        }
        let (hd, d) = (self.hidden, self.input_dim);
        let head_w = &self.params.tensors[2].data;
        let mut grads = self.params.zeros_like();
        for (step, dq_t) in cache.iter().zip(dq) {
            for a in 0..ACTION_COUNT {
                grads.tensors[3].data[a] += dq_t[a];
            }
            for j in 0..hd {
                let mut da = T::zero();
                for a in 0..ACTION_COUNT {
                    grads.tensors[2].data[j * ACTION_COUNT + a] += step.h[j] * dq_t[a];
                    da += head_w[j * ACTION_COUNT + a] * dq_t[a];
                }
                let dpre = da * (T::one() - step.h[j] * step.h[j]);
                grads.tensors[1].data[j] += dpre;
                for (g, xk) in grads.tensors[0].data[j * d..(j + 1) * d].iter_mut().zip(&step.x) {
                    *g += dpre * *xk;
                }
            }
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn carry_is_identity() {
        let net = MlpQNetwork::<f64>::init(3, 4, 1);
        let h0 = HiddenState { h: vec![0.1, 0.2, 0.3, 0.4], c: vec![1.0; 4] };
        let pass = net.forward(&[vec![1.0, 2.0, 3.0], vec![0.0; 3]], &h0, false).unwrap();
        assert_eq!(pass.hidden, h0);
    }

    #[test]
    fn steps_are_independent() {
        let net = MlpQNetwork::<f64>::init(2, 3, 2);
        let h0 = HiddenState::zeros(3);
        let both = net.forward(&[vec![1.0, -1.0], vec![0.5, 0.5]], &h0, false).unwrap();
        let single = net.forward(&[vec![0.5, 0.5]], &h0, false).unwrap();
        assert_eq!(both.q[1], single.q[0]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = MlpQNetwork::<f64>::init(3, 4, 3);
        let seq: Vec<Vec<f64>> = (0..3).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let w: Vec<QValues<f64>> = (0..3).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let h0 = HiddenState::zeros(4);
        let loss = |n: &MlpQNetwork<f64>| -> f64 {
            let p = n.forward(&seq, &h0, false).unwrap();
            p.q.iter().zip(&w).map(|(q, w)| q.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()).sum()
        };
        let grads = net.backward(&net.forward(&seq, &h0, true).unwrap(), &w).unwrap();
        let eps = 1e-5;
        for ti in 0..4 {
            for k in 0..grads.tensors[ti].data.len() {
                let mut plus = net.clone();
                plus.params.tensors[ti].data[k] += eps;
                let mut minus = net.clone();
                minus.params.tensors[ti].data[k] -= eps;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * eps);
                let an = grads.tensors[ti].data[k];
                assert!((fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-8));
            }
        }
    }
}
