use rand::Rng;

use super::{
    check_dim, init_bound, init_rng, sigmoid, ForwardPass, HiddenState, NetError, Params, QValues, StepCache, Tensor,
    ACTION_COUNT,
};
use crate::Scalar;

const W_X: usize = 0;
const W_H: usize = 1;
const BIAS: usize = 2;
const HEAD_W: usize = 3;
const HEAD_B: usize = 4;

/// LSTM layer plus affine Q head.
///
/// Tensors, in order: `w_x` (4H x D), `w_h` (4H x H), `b` (1 x 4H),
/// `head_w` (H x 3), `head_b` (1 x 3). Gate rows are stacked as
/// input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmQNetwork<T> {
    pub input_dim: usize,
    pub hidden: usize,
    pub params: Params<T>,
}

impl<T: Scalar> LstmQNetwork<T> {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        let h4 = 4 * hidden;
        let params = Params {
            tensors: vec![
                Tensor::zeros("w_x", h4, input_dim),
                Tensor::zeros("w_h", h4, hidden),
                Tensor::zeros("b", 1, h4),
                Tensor::zeros("head_w", hidden, ACTION_COUNT),
                Tensor::zeros("head_b", 1, ACTION_COUNT),
            ],
        };
        Self { input_dim, hidden, params }
    }

    /// Uniform in `[-1/sqrt(H), 1/sqrt(H)]`, forget-gate bias 1.0.
    pub fn init(input_dim: usize, hidden: usize, seed: u64) -> Self {
        assert!(input_dim >= 1 && hidden >= 1, "network dimensions must be positive");
        let mut net = Self::zeros(input_dim, hidden);
        let bound = init_bound::<T>(hidden).as_f64();
        let mut rng = init_rng(seed);
        for v in net.params.iter_mut() {
            *v = T::of(rng.random_range(-bound..=bound));
        }
        for v in &mut net.params.tensors[BIAS].data[hidden..2 * hidden] {
            *v = T::one();
        }
        net
    }

    /// Rebuilds a network around an existing parameter set.
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
        if h0.h.len() != hd || h0.c.len() != hd {
            return Err(NetError::DimensionMismatch { expected: hd, found: h0.h.len() });
        }
        let t = &self.params.tensors;
        let (wx, wh, b) = (&t[W_X].data, &t[W_H].data, &t[BIAS].data);
        let (head_w, head_b) = (&t[HEAD_W].data, &t[HEAD_B].data);

        let mut h = h0.h.clone();
        let mut c = h0.c.clone();
        let mut qs = Vec::with_capacity(sequence.len());
        let mut cache = keep_cache.then(|| Vec::with_capacity(sequence.len()));
        let mut gates = vec![T::zero(); 4 * hd];
        for x in sequence {
            let x = x.as_ref();
            for (r, gate) in gates.iter_mut().enumerate() {
                let wx_row = &wx[r * d..(r + 1) * d];
                let wh_row = &wh[r * hd..(r + 1) * hd];
                let mut acc = b[r];
                for (w, xi) in wx_row.iter().zip(x) {
                    acc += *w * *xi;
                }
                for (w, hi) in wh_row.iter().zip(&h) {
                    acc += *w * *hi;
                }
                *gate = acc;
            }
            for j in 0..hd {
                gates[j] = sigmoid(gates[j]);
                gates[hd + j] = sigmoid(gates[hd + j]);
                gates[2 * hd + j] = gates[2 * hd + j].tanh();
                gates[3 * hd + j] = sigmoid(gates[3 * hd + j]);
            }
            let c_prev = std::mem::take(&mut c);
            let h_prev = std::mem::take(&mut h);
            c = (0..hd).map(|j| gates[hd + j] * c_prev[j] + gates[j] * gates[2 * hd + j]).collect();
            let tanh_c: Vec<T> = c.iter().map(|v| v.tanh()).collect();
            h = (0..hd).map(|j| gates[3 * hd + j] * tanh_c[j]).collect();

            let mut q = [T::zero(); ACTION_COUNT];
            for (a, qa) in q.iter_mut().enumerate() {
                let mut acc = head_b[a];
                for j in 0..hd {
                    acc += h[j] * head_w[j * ACTION_COUNT + a];
                }
                *qa = acc;
            }
            qs.push(q);
            if let Some(cache) = cache.as_mut() {
                cache.push(StepCache {
                    x: x.to_vec(),
                    h_prev,
                    c_prev,
                    gates: gates.clone(),
                    c: c.clone(),
                    tanh_c,
                    h: h.clone(),
                });
            }
        }
        Ok(ForwardPass { q: qs, hidden: HiddenState { h, c }, cache })
    }

    /// Backpropagation through time for upstream gradients `dq` (one per step).
    pub fn backward(&self, pass: &ForwardPass<T>, dq: &[QValues<T>]) -> Result<Params<T>, NetError> {
        let cache = pass.cache.as_ref().ok_or(NetError::MissingCache)?;
        if dq.len() != cache.len() {
            return Err(NetError::DimensionMismatch { expected: cache.len(), found: dq.len() });
        }
        let (hd, d) = (self.hidden, self.input_dim);
        let t = &self.params.tensors;
        let (wh, head_w) = (&t[W_H].data, &t[HEAD_W].data);
        let mut grads = self.params.zeros_like();

        let mut dh_next = vec![T::zero(); hd];
        let mut dc_next = vec![T::zero(); hd];
        let mut dz = vec![T::zero(); 4 * hd];
        for (step, dq_t) in cache.iter().zip(dq).rev() {
            {
                let g_hb = &mut grads.tensors[HEAD_B].data;
                for a in 0..ACTION_COUNT {
                    g_hb[a] += dq_t[a];
                }
            }
            {
                let g_hw = &mut grads.tensors[HEAD_W].data;
                for j in 0..hd {
                    for a in 0..ACTION_COUNT {
                        g_hw[j * ACTION_COUNT + a] += step.h[j] * dq_t[a];
                    }
                }
            }
            let gates = &step.gates;
            for j in 0..hd {
                let mut dh = dh_next[j];
                for a in 0..ACTION_COUNT {
                    dh += head_w[j * ACTION_COUNT + a] * dq_t[a];
                }
                let (i, f, g, o) = (gates[j], gates[hd + j], gates[2 * hd + j], gates[3 * hd + j]);
                let tc = step.tanh_c[j];
                let d_o = dh * tc;
                let dc = dh * o * (T::one() - tc * tc) + dc_next[j];
                let di = dc * g;
                let dg = dc * i;
                let df = dc * step.c_prev[j];
                dc_next[j] = dc * f;
                dz[j] = di * i * (T::one() - i);
                dz[hd + j] = df * f * (T::one() - f);
                dz[2 * hd + j] = dg * (T::one() - g * g);
                dz[3 * hd + j] = d_o * o * (T::one() - o);
            }
            {
                let (head, tail) = grads.tensors.split_at_mut(W_H);
                let g_wx = &mut head[W_X].data;
                let (g_wh_part, rest) = tail.split_at_mut(1);
                let g_wh = &mut g_wh_part[0].data;
                let g_b = &mut rest[0].data;
                for (r, dzr) in dz.iter().enumerate() {
                    if *dzr == T::zero() {
                        continue;
                    }
                    g_b[r] += *dzr;
                    for (gw, xi) in g_wx[r * d..(r + 1) * d].iter_mut().zip(&step.x) {
                        *gw += *dzr * *xi;
                    }
                    for (gw, hi) in g_wh[r * hd..(r + 1) * hd].iter_mut().zip(&step.h_prev) {
                        *gw += *dzr * *hi;
                    }
                }
            }
            dh_next.iter_mut().for_each(|v| *v = T::zero());
            for (r, dzr) in dz.iter().enumerate() {
                for (k, dh) in dh_next.iter_mut().enumerate() {
                    *dh += wh[r * hd + k] * *dzr;
                }
            }
        }
        Ok(grads)
    }
}
