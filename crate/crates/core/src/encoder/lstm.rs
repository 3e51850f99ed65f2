//! LSTM and bidirectional LSTM with explicit backpropagation through time.

use rand::Rng;

use crate::scalar::{sigmoid, Scalar};
use crate::tensor::{matvec_acc, matvec_t_acc, outer_acc, Tensor};

/// Gate rows are laid out as `[input, forget, cell, output]`, each `hidden` wide.
#[derive(Clone, Debug, PartialEq)]
pub struct Lstm<T> {
    /// `4H x D`
    pub w: Tensor<T>,
    /// `4H x H`
    pub u: Tensor<T>,
    /// `4H`
    pub b: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct LstmTrace<T> {
    xs: Vec<Vec<T>>,
    gates: Vec<Vec<T>>,
    cs: Vec<Vec<T>>,
    hs: Vec<Vec<T>>,
}

impl<T: Scalar> Lstm<T> {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let w = Tensor::uniform(&[4 * hidden, input], 1.0 / (input as f64).sqrt(), rng);
        let u = Tensor::uniform(&[4 * hidden, hidden], 1.0 / (hidden as f64).sqrt(), rng);
        let mut b = Tensor::zeros(&[4 * hidden]);
        b.data_mut()[hidden..2 * hidden].iter_mut().for_each(|x| *x = T::one());
        Self { w, u, b }
    }

    pub fn zeros_like(&self) -> Self {
        Self { w: Tensor::zeros(self.w.shape()), u: Tensor::zeros(self.u.shape()), b: Tensor::zeros(self.b.shape()) }
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.u.cols()
    }

    pub fn forward(&self, xs: &[Vec<T>]) -> (Vec<Vec<T>>, LstmTrace<T>) {
        let h_dim = self.hidden_dim();
        let d = self.input_dim();
        let mut h = vec![T::zero(); h_dim];
        let mut c = vec![T::zero(); h_dim];
        let mut trace = LstmTrace {
            xs: xs.to_vec(),
            gates: Vec::with_capacity(xs.len()),
            cs: Vec::with_capacity(xs.len()),
            hs: Vec::with_capacity(xs.len()),
        };
        for x in xs {
            let mut z = self.b.data().to_vec();
            matvec_acc(self.w.data(), 4 * h_dim, d, x, &mut z);
            matvec_acc(self.u.data(), 4 * h_dim, h_dim, &h, &mut z);
            for (k, v) in z.iter_mut().enumerate() {
                *v = if (2 * h_dim..3 * h_dim).contains(&k) { v.tanh() } else { sigmoid(*v) };
            }
            for j in 0..h_dim {
                let (i, f, g, o) = (z[j], z[h_dim + j], z[2 * h_dim + j], z[3 * h_dim + j]);
                c[j] = f * c[j] + i * g;
                h[j] = o * c[j].tanh();
            }
            trace.gates.push(z);
            trace.cs.push(c.clone());
            trace.hs.push(h.clone());
        }
        (trace.hs.clone(), trace)
    }

    /// Accumulates parameter gradients into `grad` and returns input gradients.
    pub fn backward(&self, trace: &LstmTrace<T>, dhs: &[Vec<T>], grad: &mut Lstm<T>) -> Vec<Vec<T>> {
        let h_dim = self.hidden_dim();
        let d = self.input_dim();
        let n = trace.xs.len();
        let zero = vec![T::zero(); h_dim];
        let mut dh_next = vec![T::zero(); h_dim];
        let mut dc_next = vec![T::zero(); h_dim];
        let mut dxs = vec![vec![T::zero(); d]; n];
        let mut dz = vec![T::zero(); 4 * h_dim];
        let one = T::one();
        for t in (0..n).rev() {
            let z = &trace.gates[t];
            let c = &trace.cs[t];
            let c_prev = if t > 0 { &trace.cs[t - 1] } else { &zero };
            let h_prev = if t > 0 { &trace.hs[t - 1] } else { &zero };
            for j in 0..h_dim {
                let (i, f, g, o) = (z[j], z[h_dim + j], z[2 * h_dim + j], z[3 * h_dim + j]);
                let dh = dhs[t][j] + dh_next[j];
                let tc = c[j].tanh();
                let d_o = dh * tc;
                let dc = dh * o * (one - tc * tc) + dc_next[j];
                dz[j] = dc * g * i * (one - i);
                dz[h_dim + j] = dc * c_prev[j] * f * (one - f);
                dz[2 * h_dim + j] = dc * i * (one - g * g);
                dz[3 * h_dim + j] = d_o * o * (one - o);
                dc_next[j] = dc * f;
            }
            outer_acc(grad.w.data_mut(), &dz, &trace.xs[t]);
            outer_acc(grad.u.data_mut(), &dz, h_prev);
            for (gb, v) in grad.b.data_mut().iter_mut().zip(&dz) {
                *gb += *v;
            }
            matvec_t_acc(self.w.data(), 4 * h_dim, d, &dz, &mut dxs[t]);
            dh_next.iter_mut().for_each(|x| *x = T::zero());
            matvec_t_acc(self.u.data(), 4 * h_dim, h_dim, &dz, &mut dh_next);
        }
        dxs
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiLstm<T> {
    pub fwd: Lstm<T>,
    pub bwd: Lstm<T>,
}

#[derive(Clone, Debug)]
pub struct BiLstmTrace<T> {
    fwd: LstmTrace<T>,
    bwd: LstmTrace<T>,
}

impl<T: Scalar> BiLstm<T> {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let fwd = Lstm::new(input, hidden, rng);
        let bwd = Lstm::new(input, hidden, rng);
        Self { fwd, bwd }
    }

    pub fn zeros_like(&self) -> Self {
        Self { fwd: self.fwd.zeros_like(), bwd: self.bwd.zeros_like() }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.fwd.hidden_dim()
    }

    /// Output `t` is `[forward h_t ; backward h_t]`.
    pub fn forward(&self, xs: &[Vec<T>]) -> (Vec<Vec<T>>, BiLstmTrace<T>) {
        let (hf, tf) = self.fwd.forward(xs);
        let reversed: Vec<Vec<T>> = xs.iter().rev().cloned().collect();
        let (hb, tb) = self.bwd.forward(&reversed);
        let n = xs.len();
        let out = (0..n).map(|t| hf[t].iter().chain(&hb[n - 1 - t]).copied().collect()).collect();
        (out, BiLstmTrace { fwd: tf, bwd: tb })
    }

    pub fn backward(&self, trace: &BiLstmTrace<T>, douts: &[Vec<T>], grad: &mut BiLstm<T>) -> Vec<Vec<T>> {
        let h = self.fwd.hidden_dim();
        let n = douts.len();
        let df: Vec<Vec<T>> = douts.iter().map(|d| d[..h].to_vec()).collect();
        let db: Vec<Vec<T>> = douts.iter().rev().map(|d| d[h..].to_vec()).collect();
        let mut dx = self.fwd.backward(&trace.fwd, &df, &mut grad.fwd);
        let dxb = self.bwd.backward(&trace.bwd, &db, &mut grad.bwd);
        for t in 0..n {
            for (a, b) in dx[t].iter_mut().zip(&dxb[n - 1 - t]) {
                *a += *b;
            }
        }
        dx
    }

    pub(crate) fn arrays(&self) -> [(&'static str, &Tensor<T>); 6] {
        [
            ("lstm.fwd.W", &self.fwd.w),
            ("lstm.fwd.U", &self.fwd.u),
            ("lstm.fwd.b", &self.fwd.b),
            ("lstm.bwd.W", &self.bwd.w),
            ("lstm.bwd.U", &self.bwd.u),
            ("lstm.bwd.b", &self.bwd.b),
        ]
    }

    pub(crate) fn arrays_mut(&mut self) -> [(&'static str, &mut Tensor<T>); 6] {
        [
            ("lstm.fwd.W", &mut self.fwd.w),
            ("lstm.fwd.U", &mut self.fwd.u),
            ("lstm.fwd.b", &mut self.fwd.b),
            ("lstm.bwd.W", &mut self.bwd.w),
            ("lstm.bwd.U", &mut self.bwd.u),
            ("lstm.bwd.b", &mut self.bwd.b),
        ]
    }
}
