//! Sentence encoding with multi-head attention pooling, document-level
//! context enrichment, and the logit projection of the output layer.

pub mod lstm;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::crf::CrfParams;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{dot, matvec_acc, matvec_t_acc, outer_acc, Tensor};

pub use lstm::{BiLstm, BiLstmTrace, Lstm};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Word-embedding width.
    pub d_w: usize,
    /// Per-direction LSTM width; token and context representations are `2 * d_lstm`.
    pub d_lstm: usize,
    /// Attention hidden width.
    pub d_u: usize,
    /// Number of attention heads.
    pub r: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self { d_w: 768, d_lstm: 758, d_u: 200, r: 15 }
    }
}

impl ModelDims {
    pub fn d_h(&self) -> usize {
        2 * self.d_lstm
    }

    /// Width of a pooled sentence vector: `r` heads of `d_h` each.
    pub fn sentence_dim(&self) -> usize {
        self.r * self.d_h()
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_w == 0 || self.d_lstm == 0 || self.d_u == 0 || self.r == 0 {
            return Err(Error::InvalidArgument(format!("all model dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)`.
#[derive(Clone, Copy, Debug)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    pub fn mask<T: Scalar, R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<T> {
        let keep = T::of(1.0 / (1.0 - self.rate));
        (0..len).map(|_| if rng.gen::<f64>() < self.rate { T::zero() } else { keep }).collect()
    }

    pub fn active(&self) -> bool {
        self.rate > 0.0
    }
}

pub(crate) fn apply_mask<T: Scalar>(x: &mut [T], mask: &[T]) {
    for (a, m) in x.iter_mut().zip(mask) {
        *a *= *m;
    }
}

/// Token Bi-LSTM followed by `r`-head attention pooling.
#[derive(Clone, Debug, PartialEq)]
pub struct SentenceEncoder<T> {
    pub lstm: BiLstm<T>,
    /// `d_u x d_h`
    pub w_s: Tensor<T>,
    pub b_s: Tensor<T>,
    /// One context vector per head, `r x d_u`.
    pub u: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct SentenceTrace<T> {
    lstm: BiLstmTrace<T>,
    h: Vec<Vec<T>>,
    a: Vec<Vec<T>>,
    alpha: Vec<Vec<T>>,
}

impl<T> SentenceTrace<T> {
    /// Attention weights, one row per head over the tokens.
    pub fn attention(&self) -> &[Vec<T>] {
        &self.alpha
    }

    /// Token representations from the Bi-LSTM.
    pub fn token_states(&self) -> &[Vec<T>] {
        &self.h
    }
}

impl<T: Scalar> SentenceEncoder<T> {
    pub fn new<R: Rng + ?Sized>(dims: &ModelDims, rng: &mut R) -> Self {
        let d_h = dims.d_h();
        let lstm = BiLstm::new(dims.d_w, dims.d_lstm, rng);
        let bound = 1.0 / (d_h as f64).sqrt();
        Self {
            lstm,
            w_s: Tensor::uniform(&[dims.d_u, d_h], bound, rng),
            b_s: Tensor::uniform(&[dims.d_u], bound, rng),
            u: Tensor::uniform(&[dims.r, dims.d_u], 1.0 / (dims.d_u as f64).sqrt(), rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            lstm: self.lstm.zeros_like(),
            w_s: Tensor::zeros(self.w_s.shape()),
            b_s: Tensor::zeros(self.b_s.shape()),
            u: Tensor::zeros(self.u.shape()),
        }
    }

    pub fn heads(&self) -> usize {
        self.u.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.heads() * self.lstm.output_dim()
    }

    /// Pools a sentence's token embeddings into `concat(e_1, ..., e_r)`.
    pub fn encode(&self, emb: &[Vec<T>]) -> Result<(Vec<T>, SentenceTrace<T>)> {
        if emb.is_empty() {
            return Err(Error::ShapeMismatch("empty sentence".into()));
        }
        if let Some(bad) = emb.iter().find(|r| r.len() != self.lstm.fwd.input_dim()) {
            return Err(Error::ShapeMismatch(format!(
                "embedding width {} but encoder expects {}",
                bad.len(),
                self.lstm.fwd.input_dim()
            )));
        }
        let d_u = self.w_s.rows();
        let d_h = self.w_s.cols();
        let (h, lstm) = self.lstm.forward(emb);
        let a: Vec<Vec<T>> = h
            .iter()
            .map(|ht| {
                let mut z = self.b_s.data().to_vec();
                matvec_acc(self.w_s.data(), d_u, d_h, ht, &mut z);
                z.iter_mut().for_each(|v| *v = v.tanh());
                z
            })
            .collect();
        let mut alpha = Vec::with_capacity(self.heads());
        let mut e = Vec::with_capacity(self.output_dim());
        for k in 0..self.heads() {
            let uk = self.u.row(k);
            let scores: Vec<T> = a.iter().map(|at| dot(uk, at)).collect();
            let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
            let exps: Vec<T> = scores.iter().map(|s| (*s - max).exp()).collect();
            let sum: T = exps.iter().copied().sum();
            let weights: Vec<T> = exps.into_iter().map(|x| x / sum).collect();
            let mut ek = vec![T::zero(); d_h];
            for (w, ht) in weights.iter().zip(&h) {
                for (o, v) in ek.iter_mut().zip(ht) {
                    *o += *w * *v;
                }
            }
            e.extend(ek);
            alpha.push(weights);
        }
        Ok((e, SentenceTrace { lstm, h, a, alpha }))
    }

    /// Backpropagates `de` and returns the gradient w.r.t. the token embeddings.
    pub fn backward(&self, trace: &SentenceTrace<T>, de: &[T], grad: &mut SentenceEncoder<T>) -> Vec<Vec<T>> {
        let d_u = self.w_s.rows();
        let d_h = self.w_s.cols();
        let m = trace.h.len();
        let mut dh = vec![vec![T::zero(); d_h]; m];
        let mut da = vec![vec![T::zero(); d_u]; m];
        for k in 0..self.heads() {
            let dek = &de[k * d_h..(k + 1) * d_h];
            let alpha = &trace.alpha[k];
            let dalpha: Vec<T> = trace.h.iter().map(|ht| dot(dek, ht)).collect();
            let mean: T = alpha.iter().zip(&dalpha).map(|(a, d)| *a * *d).sum();
            for t in 0..m {
                for (o, v) in dh[t].iter_mut().zip(dek) {
                    *o += alpha[t] * *v;
                }
                let ds = alpha[t] * (dalpha[t] - mean);
                for (g, v) in grad.u.row_mut(k).iter_mut().zip(&trace.a[t]) {
                    *g += ds * *v;
                }
                for (o, v) in da[t].iter_mut().zip(self.u.row(k)) {
                    *o += ds * *v;
                }
            }
        }
        for t in 0..m {
            let dz: Vec<T> = da[t].iter().zip(&trace.a[t]).map(|(d, a)| *d * (T::one() - *a * *a)).collect();
            outer_acc(grad.w_s.data_mut(), &dz, &trace.h[t]);
            for (g, v) in grad.b_s.data_mut().iter_mut().zip(&dz) {
                *g += *v;
            }
            matvec_t_acc(self.w_s.data(), d_u, d_h, &dz, &mut dh[t]);
        }
        self.lstm.backward(&trace.lstm, &dh, &mut grad.lstm)
    }

    pub fn arrays(&self) -> Vec<(&'static str, &Tensor<T>)> {
        let mut v = self.lstm.arrays().to_vec();
        v.extend([("W_S", &self.w_s), ("b_S", &self.b_s), ("u", &self.u)]);
        v
    }

    pub fn arrays_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        let mut v: Vec<_> = self.lstm.arrays_mut().into_iter().collect();
        v.extend([("W_S", &mut self.w_s), ("b_S", &mut self.b_s), ("u", &mut self.u)]);
        v
    }
}

/// Sentence-level Bi-LSTM over the pooled sentence vectors of a document.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextEncoder<T> {
    pub lstm: BiLstm<T>,
}

impl<T: Scalar> ContextEncoder<T> {
    pub fn new<R: Rng + ?Sized>(dims: &ModelDims, rng: &mut R) -> Self {
        Self { lstm: BiLstm::new(dims.sentence_dim(), dims.d_lstm, rng) }
    }

    pub fn zeros_like(&self) -> Self {
        Self { lstm: self.lstm.zeros_like() }
    }

    pub fn enrich(&self, sents: &[Vec<T>]) -> Result<(Vec<Vec<T>>, BiLstmTrace<T>)> {
        if sents.is_empty() {
            return Err(Error::ShapeMismatch("document without sentences".into()));
        }
        if let Some(bad) = sents.iter().find(|s| s.len() != self.lstm.fwd.input_dim()) {
            return Err(Error::ShapeMismatch(format!(
                "sentence vector width {} but context encoder expects {}",
                bad.len(),
                self.lstm.fwd.input_dim()
            )));
        }
        Ok(self.lstm.forward(sents))
    }

    pub fn backward(&self, trace: &BiLstmTrace<T>, dctx: &[Vec<T>], grad: &mut ContextEncoder<T>) -> Vec<Vec<T>> {
        self.lstm.backward(trace, dctx, &mut grad.lstm)
    }

    pub fn arrays(&self) -> Vec<(&'static str, &Tensor<T>)> {
        self.lstm.arrays().to_vec()
    }

    pub fn arrays_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        self.lstm.arrays_mut().into_iter().collect()
    }
}

/// Linear logit projection plus the CRF parameters of one output set.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputLayer<T> {
    /// `|L| x d_h`
    pub w_o: Tensor<T>,
    pub b_o: Tensor<T>,
    pub crf: CrfParams<T>,
}

impl<T: Scalar> OutputLayer<T> {
    pub fn new<R: Rng + ?Sized>(dims: &ModelDims, num_labels: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (dims.d_h() as f64).sqrt();
        Self {
            w_o: Tensor::uniform(&[num_labels, dims.d_h()], bound, rng),
            b_o: Tensor::uniform(&[num_labels], bound, rng),
            crf: CrfParams::uniform(num_labels, 0.1, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w_o: Tensor::zeros(self.w_o.shape()),
            b_o: Tensor::zeros(self.b_o.shape()),
            crf: CrfParams::zeros(self.num_labels()),
        }
    }

    pub fn num_labels(&self) -> usize {
        self.w_o.rows()
    }

    /// `l_i = W_O c_i + b_O`.
    pub fn project(&self, ctx: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
        ctx.iter()
            .map(|c| {
                if c.len() != self.w_o.cols() {
                    return Err(Error::ShapeMismatch(format!(
                        "context width {} but output layer expects {}",
                        c.len(),
                        self.w_o.cols()
                    )));
                }
                let mut l = self.b_o.data().to_vec();
                matvec_acc(self.w_o.data(), self.w_o.rows(), self.w_o.cols(), c, &mut l);
                Ok(l)
            })
            .collect()
    }

    /// Accumulates projection gradients and returns `dL/dc`.
    pub fn backward_projection(&self, ctx: &[Vec<T>], dlogits: &[Vec<T>], grad: &mut OutputLayer<T>) -> Vec<Vec<T>> {
        let (rows, cols) = (self.w_o.rows(), self.w_o.cols());
        ctx.iter()
            .zip(dlogits)
            .map(|(c, dl)| {
                outer_acc(grad.w_o.data_mut(), dl, c);
                for (g, v) in grad.b_o.data_mut().iter_mut().zip(dl) {
                    *g += *v;
                }
                let mut dc = vec![T::zero(); cols];
                matvec_t_acc(self.w_o.data(), rows, cols, dl, &mut dc);
                dc
            })
            .collect()
    }

    pub fn arrays(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![
            ("W_O", &self.w_o),
            ("b_O", &self.b_o),
            ("crf.T", &self.crf.transitions),
            ("crf.b_begin", &self.crf.begin),
            ("crf.e_end", &self.crf.end),
        ]
    }

    pub fn arrays_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        vec![
            ("W_O", &mut self.w_o),
            ("b_O", &mut self.b_o),
            ("crf.T", &mut self.crf.transitions),
            ("crf.b_begin", &mut self.crf.begin),
            ("crf.e_end", &mut self.crf.end),
        ]
    }
}

/// Pools one sentence, applying dropout to the result when a mask source is given.
pub fn encode_sentence<T: Scalar, R: Rng + ?Sized>(
    p: &SentenceEncoder<T>,
    emb: &[Vec<T>],
    dropout: Dropout,
    training: Option<&mut R>,
) -> Result<Vec<T>> {
    let (mut e, _) = p.encode(emb)?;
    if let (Some(rng), true) = (training, dropout.active()) {
        let mask = dropout.mask(e.len(), rng);
        apply_mask(&mut e, &mask);
    }
    Ok(e)
}

pub fn enrich_context<T: Scalar, R: Rng + ?Sized>(
    p: &ContextEncoder<T>,
    sents: &[Vec<T>],
    dropout: Dropout,
    training: Option<&mut R>,
) -> Result<Vec<Vec<T>>> {
    let (mut c, _) = p.enrich(sents)?;
    if let (Some(rng), true) = (training, dropout.active()) {
        for ci in &mut c {
            let mask = dropout.mask(ci.len(), rng);
            apply_mask(ci, &mask);
        }
    }
    Ok(c)
}

pub fn project_logits<T: Scalar>(p: &OutputLayer<T>, ctx: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
    p.project(ctx)
}
