//! Linear-chain CRF: sequence scores, partition function, negative
//! log-likelihood with gradients, and Viterbi decoding.
//!
//! Parameters may be stored in any [`Scalar`], but every recursion runs in
//! `f64`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::{log_sum_exp, Scalar};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct CrfParams<T> {
    /// `transitions[a][b]` scores label `a` followed by label `b`.
    pub transitions: Tensor<T>,
    pub begin: Tensor<T>,
    pub end: Tensor<T>,
}

impl<T: Scalar> CrfParams<T> {
    pub fn zeros(num_labels: usize) -> Self {
        Self {
            transitions: Tensor::zeros(&[num_labels, num_labels]),
            begin: Tensor::zeros(&[num_labels]),
            end: Tensor::zeros(&[num_labels]),
        }
    }

    pub fn uniform<R: Rng + ?Sized>(num_labels: usize, bound: f64, rng: &mut R) -> Self {
        Self {
            transitions: Tensor::uniform(&[num_labels, num_labels], bound, rng),
            begin: Tensor::uniform(&[num_labels], bound, rng),
            end: Tensor::uniform(&[num_labels], bound, rng),
        }
    }

    pub fn num_labels(&self) -> usize {
        self.begin.len()
    }

    fn trans(&self, a: usize, b: usize) -> f64 {
        self.transitions.data()[a * self.num_labels() + b].as_f64()
    }

    fn check(&self, logits: &[Vec<T>]) -> Result<()> {
        if logits.is_empty() {
            return Err(Error::EmptySequence);
        }
        let l = self.num_labels();
        if let Some(bad) = logits.iter().find(|r| r.len() != l) {
            return Err(Error::ShapeMismatch(format!("logit width {} for {} labels", bad.len(), l)));
        }
        Ok(())
    }
}

/// Gradients of the NLL with respect to logits and CRF parameters.
#[derive(Clone, Debug)]
pub struct CrfGrad {
    pub logits: Vec<Vec<f64>>,
    pub transitions: Vec<f64>,
    pub begin: Vec<f64>,
    pub end: Vec<f64>,
}

/// `begin[y_1] + Σ logits[t][y_t] + Σ T[y_t][y_{t+1}] + end[y_n]`.
pub fn score_sequence<T: Scalar>(p: &CrfParams<T>, logits: &[Vec<T>], labels: &[usize]) -> Result<f64> {
    if logits.len() != labels.len() {
        return Err(Error::LengthMismatch { left: logits.len(), right: labels.len() });
    }
    p.check(logits)?;
    if let Some(&bad) = labels.iter().find(|&&y| y >= p.num_labels()) {
        return Err(Error::InvalidArgument(format!("label {bad} out of range")));
    }
    let n = labels.len();
    let mut s = p.begin.data()[labels[0]].as_f64() + p.end.data()[labels[n - 1]].as_f64();
    for (t, &y) in labels.iter().enumerate() {
        s += logits[t][y].as_f64();
        if t + 1 < n {
            s += p.trans(y, labels[t + 1]);
        }
    }
    Ok(s)
}

/// Forward recursion in log space: `alpha[t][y]` is the log-sum of all
/// prefixes ending in `y` at position `t` (without end scores).
fn forward_table<T: Scalar>(p: &CrfParams<T>, logits: &[Vec<T>]) -> Vec<Vec<f64>> {
    let l = p.num_labels();
    let mut alpha = Vec::with_capacity(logits.len());
    alpha.push((0..l).map(|y| p.begin.data()[y].as_f64() + logits[0][y].as_f64()).collect::<Vec<_>>());
    let mut buf = vec![0.0; l];
    for row in &logits[1..] {
        let prev = alpha.last().unwrap();
        let next = (0..l)
            .map(|b| {
                for (a, v) in buf.iter_mut().enumerate() {
                    *v = prev[a] + p.trans(a, b);
                }
                log_sum_exp(&buf) + row[b].as_f64()
            })
            .collect();
        alpha.push(next);
    }
    alpha
}

fn backward_table<T: Scalar>(p: &CrfParams<T>, logits: &[Vec<T>]) -> Vec<Vec<f64>> {
    let l = p.num_labels();
    let n = logits.len();
    let mut beta = vec![vec![0.0; l]; n];
    beta[n - 1] = (0..l).map(|y| p.end.data()[y].as_f64()).collect();
    let mut buf = vec![0.0; l];
    for t in (0..n - 1).rev() {
        for a in 0..l {
            for (b, v) in buf.iter_mut().enumerate() {
                *v = p.trans(a, b) + logits[t + 1][b].as_f64() + beta[t + 1][b];
            }
            beta[t][a] = log_sum_exp(&buf);
        }
    }
    beta
}

/// `log Z`, the log-sum-exp of the scores of all `|L|^n` label sequences.
pub fn log_partition<T: Scalar>(p: &CrfParams<T>, logits: &[Vec<T>]) -> Result<f64> {
    p.check(logits)?;
    let alpha = forward_table(p, logits);
    let last = alpha.last().unwrap();
    let finals: Vec<f64> = last.iter().enumerate().map(|(y, a)| a + p.end.data()[y].as_f64()).collect();
    Ok(log_sum_exp(&finals))
}

/// `log Z - score(gold)` for one document.
pub fn nll_loss<T: Scalar>(p: &CrfParams<T>, logits: &[Vec<T>], gold: &[usize]) -> Result<f64> {
    let score = score_sequence(p, logits, gold)?;
    Ok(log_partition(p, logits)? - score)
}

/// NLL and its gradient, computed from forward-backward marginals.
pub fn nll_with_grad<T: Scalar>(p: &CrfParams<T>, logits: &[Vec<T>], gold: &[usize]) -> Result<(f64, CrfGrad)> {
    let score = score_sequence(p, logits, gold)?;
    let l = p.num_labels();
    let n = logits.len();
    let alpha = forward_table(p, logits);
    let beta = backward_table(p, logits);
    let finals: Vec<f64> = alpha[n - 1].iter().enumerate().map(|(y, a)| a + p.end.data()[y].as_f64()).collect();
    let log_z = log_sum_exp(&finals);

    let mut g = CrfGrad {
        logits: vec![vec![0.0; l]; n],
        transitions: vec![0.0; l * l],
        begin: vec![0.0; l],
        end: vec![0.0; l],
    };
    for t in 0..n {
        for y in 0..l {
            g.logits[t][y] = (alpha[t][y] + beta[t][y] - log_z).exp();
        }
    }
    g.begin.copy_from_slice(&g.logits[0]);
    g.end.copy_from_slice(&g.logits[n - 1]);
    for t in 0..n.saturating_sub(1) {
        for a in 0..l {
            for b in 0..l {
                let lp = alpha[t][a] + p.trans(a, b) + logits[t + 1][b].as_f64() + beta[t + 1][b] - log_z;
                g.transitions[a * l + b] += lp.exp();
            }
        }
    }
    for (t, &y) in gold.iter().enumerate() {
        g.logits[t][y] -= 1.0;
        if t + 1 < n {
            g.transitions[y * l + gold[t + 1]] -= 1.0;
        }
    }
    g.begin[gold[0]] -= 1.0;
    g.end[gold[n - 1]] -= 1.0;
    Ok((log_z - score, g))
}

/// Highest-scoring label sequence and its score. Ties go to the lower label
/// index, both at backpointers and at the final position.
pub fn viterbi_decode<T: Scalar>(p: &CrfParams<T>, logits: &[Vec<T>]) -> Result<(Vec<usize>, f64)> {
    p.check(logits)?;
    let l = p.num_labels();
    let n = logits.len();
    let mut delta: Vec<f64> = (0..l).map(|y| p.begin.data()[y].as_f64() + logits[0][y].as_f64()).collect();
    let mut back = vec![vec![0usize; l]; n];
    for t in 1..n {
        let mut next = vec![0.0; l];
        for b in 0..l {
            let mut best = 0;
            let mut best_v = delta[0] + p.trans(0, b);
            for a in 1..l {
                let v = delta[a] + p.trans(a, b);
                if v > best_v {
                    best_v = v;
                    best = a;
                }
            }
            back[t][b] = best;
            next[b] = best_v + logits[t][b].as_f64();
        }
        delta = next;
    }
    let mut last = 0;
    let mut best = delta[0] + p.end.data()[0].as_f64();
    for y in 1..l {
        let v = delta[y] + p.end.data()[y].as_f64();
        if v > best {
            best = v;
            last = y;
        }
    }
    let mut labels = vec![0; n];
    labels[n - 1] = last;
    for t in (1..n).rev() {
        labels[t - 1] = back[t][labels[t]];
    }
    Ok((labels, best))
}
