use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::rng::Xoshiro256;

/// A single affine layer `logits = W·x + b`.
///
/// Parameters are kept in one flat buffer, weights row-major (`out × in`)
/// followed by the bias, so the optimizer can treat the head as a vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub inputs: usize,
    pub outputs: usize,
    pub params: Vec<f64>,
}

impl LinearHead {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, params: vec![0.0; (inputs + 1) * outputs] }
    }

    /// Uniform `±1/√in` initialisation, bias zero.
    pub fn init(inputs: usize, outputs: usize, rng: &mut Xoshiro256) -> Self {
        let mut head = Self::zeros(inputs, outputs);
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        for w in head.weights_mut() {
            *w = rng.uniform(-bound, bound);
        }
        head
    }

    pub fn from_parts(weights: Vec<f64>, bias: Vec<f64>) -> Result<Self, TrainError> {
        let outputs = bias.len();
        if outputs == 0 || !weights.len().is_multiple_of(outputs) {
            return Err(TrainError::DimMismatch { expected: outputs, got: weights.len() });
        }
        let inputs = weights.len() / outputs;
        let mut params = weights;
        params.extend(bias);
        Ok(Self { inputs, outputs, params })
    }

    pub fn weights(&self) -> &[f64] {
        &self.params[..self.inputs * self.outputs]
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        let n = self.inputs * self.outputs;
        &mut self.params[..n]
    }

    pub fn bias(&self) -> &[f64] {
        &self.params[self.inputs * self.outputs..]
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        let n = self.inputs * self.outputs;
        &mut self.params[n..]
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, TrainError> {
        if x.len() != self.inputs {
            return Err(TrainError::DimMismatch { expected: self.inputs, got: x.len() });
        }
        let mut out = self.bias().to_vec();
        self.forward_into(x, &mut out);
        Ok(out)
    }

    /// `out += W·x`; callers prefill `out` with the bias.
    pub(crate) fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.weights().chunks_exact(self.inputs)) {
            *o += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// Accumulate `∂L/∂θ` for one sample into `grad` (same layout as
    /// `params`), given `∂L/∂logits`.
    pub fn accumulate_grad(&self, x: &[f64], grad_logits: &[f64], grad: &mut [f64]) {
        let n = self.inputs * self.outputs;
        let (gw, gb) = grad.split_at_mut(n);
        for ((row, &g), b) in gw.chunks_exact_mut(self.inputs).zip(grad_logits).zip(gb) {
            if g != 0.0 {
                for (r, v) in row.iter_mut().zip(x) {
                    *r += g * v;
                }
            }
            *b += g;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Index of the largest logit; ties go to the lowest index.
    pub fn argmax(logits: &[f64]) -> usize {
        let mut best = 0;
        for (i, &v) in logits.iter().enumerate().skip(1) {
            if v > logits[best] {
                best = i;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_bias_only() {
        let mut eye = LinearHead::zeros(3, 3);
        for i in 0..3 {
            eye.weights_mut()[i * 3 + i] = 1.0;
        }
        assert_eq!(eye.forward(&[1.0, -2.0, 3.5]).unwrap(), vec![1.0, -2.0, 3.5]);

        let mut c = LinearHead::zeros(2, 2);
        c.bias_mut().copy_from_slice(&[0.25, -4.0]);
        assert_eq!(c.forward(&[9.0, 9.0]).unwrap(), vec![0.25, -4.0]);
    }

    #[test]
    fn matches_naive_loop() {
        let mut rng = Xoshiro256::seed_from_u64(5);
        let head = {
            let mut h = LinearHead::init(7, 4, &mut rng);
            for b in h.bias_mut() {
                *b = rng.normal();
            }
            h
        };
        let x: Vec<f64> = (0..7).map(|_| rng.normal()).collect();
        let got = head.forward(&x).unwrap();
        for o in 0..4 {
            let mut acc = head.params[7 * 4 + o];
            for i in 0..7 {
                acc += head.params[o * 7 + i] * x[i];
            }
            assert!((got[o] - acc).abs() < 1e-9);
        }
    }

    #[test]
    fn wrong_input_dim() {
        let head = LinearHead::zeros(3, 2);
        assert_eq!(head.forward(&[1.0]), Err(TrainError::DimMismatch { expected: 3, got: 1 }));
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(LinearHead::argmax(&[1.0, 3.0, 3.0, 0.0]), 1);
        assert_eq!(LinearHead::argmax(&[2.0, 2.0, 2.0, 2.0]), 0);
    }
}
