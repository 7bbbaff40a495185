//! One-hidden-layer classifier: affine -> tanh -> affine -> softmax cross-entropy.
//!
//! Parameter layout (row-major): `W1 [hidden x dim_in]`, `b1 [hidden]`,
//! `W2 [classes x hidden]`, `b2 [classes]`.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub dim_in: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl MlpShape {
    pub fn param_count(&self) -> usize {
        self.hidden * (self.dim_in + 1) + self.classes * (self.hidden + 1)
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.hidden * self.dim_in;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.classes * self.hidden;
        (b1, w2, b2)
    }

    /// Output logits for one input.
    pub(crate) fn logits(&self, theta: &[f64], x: &[f64], hidden_out: &mut [f64], logits: &mut [f64]) {
        let (b1, w2, b2) = self.offsets();
        for j in 0..self.hidden {
            let row = &theta[j * self.dim_in..(j + 1) * self.dim_in];
            let pre: f64 = row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + theta[b1 + j];
            hidden_out[j] = pre.tanh();
        }
        for c in 0..self.classes {
            let row = &theta[w2 + c * self.hidden..w2 + (c + 1) * self.hidden];
            logits[c] = row.iter().zip(hidden_out.iter()).map(|(w, h)| w * h).sum::<f64>() + theta[b2 + c];
        }
    }

    /// Cross-entropy of one sample; leaves softmax probabilities in `logits`.
    pub(crate) fn sample_loss(
        &self,
        theta: &[f64],
        x: &[f64],
        label: usize,
        hidden_out: &mut [f64],
        logits: &mut [f64],
    ) -> f64 {
        self.logits(theta, x, hidden_out, logits);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let shifted_label = logits[label] - max;
        let mut z = 0.0;
        for l in logits.iter_mut() {
            *l = (*l - max).exp();
            z += *l;
        }
        for l in logits.iter_mut() {
            *l /= z;
        }
        z.ln() - shifted_label
    }

    /// Accumulates `scale * d loss / d theta` for one sample into `grad`.
    pub(crate) fn accumulate_grad(
        &self,
        theta: &[f64],
        x: &[f64],
        label: usize,
        scale: f64,
        grad: &mut [f64],
        scratch: &mut MlpScratch,
    ) -> f64 {
        let (b1, w2, b2) = self.offsets();
        let loss = self.sample_loss(theta, x, label, &mut scratch.hidden, &mut scratch.probs);
        // d loss / d logits = softmax - onehot
        scratch.probs[label] -= 1.0;
        scratch.dhidden.iter_mut().for_each(|d| *d = 0.0);
        for c in 0..self.classes {
            let d = scratch.probs[c] * scale;
            grad[b2 + c] += d;
            let row = w2 + c * self.hidden;
            for j in 0..self.hidden {
                grad[row + j] += d * scratch.hidden[j];
                scratch.dhidden[j] += theta[row + j] * d;
            }
        }
        for j in 0..self.hidden {
            let dpre = scratch.dhidden[j] * (1.0 - scratch.hidden[j] * scratch.hidden[j]);
            grad[b1 + j] += dpre;
            let row = j * self.dim_in;
            for (k, xk) in x.iter().enumerate() {
                grad[row + k] += dpre * xk;
            }
        }
        loss
    }

    pub(crate) fn scratch(&self) -> MlpScratch {
        MlpScratch {
            hidden: vec![0.0; self.hidden],
            probs: vec![0.0; self.classes],
            dhidden: vec![0.0; self.hidden],
        }
    }
}

pub(crate) struct MlpScratch {
    pub(crate) hidden: Vec<f64>,
    pub(crate) probs: Vec<f64>,
    dhidden: Vec<f64>,
}
