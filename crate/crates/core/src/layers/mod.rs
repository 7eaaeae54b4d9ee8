//! Neural building blocks. Each layer owns [`ParamId`]s into a shared store;
//! `forward` reads weights, `backward` accumulates into the store's gradients
//! (skipping frozen parameters) and returns the input gradient.

mod activation;
mod affine;
mod conv;
mod dropout;
mod embedding;
mod highway;
mod lstm;
mod pool;

pub use activation::Activation;
pub use affine::{affine, Linear};
pub use conv::{conv1d, Conv1d, ConvCache};
pub use dropout::{dropout, DropoutMask};
pub use embedding::{embed, Embedding};
pub use highway::{highway, Highway, HighwayCache};
pub use lstm::{lstm_step, Lstm, LstmCache, LstmState, LstmStack, LstmStackCache};
pub use pool::{max_pool_over_time, MaxPool};

use rand::RngCore;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Dropout settings threaded through a forward pass.
pub struct Regularizer<'a> {
    pub mode: Mode,
    pub keep_prob: f64,
    /// Reuse one recurrent mask per sequence instead of resampling each step.
    pub variational: bool,
    pub rng: &'a mut dyn RngCore,
}

impl<'a> Regularizer<'a> {
    pub fn eval(rng: &'a mut dyn RngCore) -> Self {
        Regularizer {
            mode: Mode::Eval,
            keep_prob: 1.0,
            variational: false,
            rng,
        }
    }

    pub fn active(&self) -> bool {
        self.mode == Mode::Train && self.keep_prob < 1.0
    }

    pub fn dropout<F: Scalar>(&mut self, x: &Tensor<F>) -> Result<(Tensor<F>, DropoutMask<F>)> {
        dropout(x, self.keep_prob, self.mode, &mut *self.rng)
    }
}

/// Half-open row range of one sequence inside a [`Ragged`] batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub len: usize,
}

/// Variable-length sequences stored back to back as rows of one matrix.
#[derive(Debug, Clone)]
pub struct Ragged<F> {
    pub values: Tensor<F>,
    pub spans: Vec<Span>,
}

impl<F: Scalar> Ragged<F> {
    pub fn new(values: Tensor<F>, spans: Vec<Span>) -> Result<Self> {
        let total: usize = spans.iter().map(|s| s.len).sum();
        if values.rows() != total || values.shape().len() != 2 {
            return Err(Error::dim(format!(
                "ragged batch: {} rows for spans totalling {}",
                values.rows(),
                total
            )));
        }
        Ok(Ragged { values, spans })
    }

    /// Packs a single `[T×d]` sequence.
    pub fn single(seq: Tensor<F>) -> Self {
        let len = seq.rows();
        Ragged {
            values: seq,
            spans: vec![Span { start: 0, len }],
        }
    }

    pub fn from_sequences(seqs: &[Tensor<F>]) -> Result<Self> {
        let dim = seqs.first().map_or(0, |s| s.cols());
        let mut data = Vec::new();
        let mut spans = Vec::with_capacity(seqs.len());
        for s in seqs {
            if s.cols() != dim {
                return Err(Error::dim("sequences of differing width"));
            }
            spans.push(Span {
                start: data.len() / dim.max(1),
                len: s.rows(),
            });
            data.extend_from_slice(s.data());
        }
        let total = spans.iter().map(|s| s.len).sum::<usize>();
        Ok(Ragged {
            values: Tensor::from_vec(&[total, dim], data)?,
            spans,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn total(&self) -> usize {
        self.values.rows()
    }

    pub fn sequence(&self, i: usize) -> Tensor<F> {
        let s = self.spans[i];
        let d = self.dim();
        Tensor::from_vec(
            &[s.len, d],
            self.values.data()[s.start * d..(s.start + s.len) * d].to_vec(),
        )
        .expect("span within values")
    }
}

/// Row-wise concatenation `[a | b]`.
pub fn concat_cols<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    if a.rows() != b.rows() {
        return Err(Error::dim("concat_cols: row counts differ"));
    }
    let (ca, cb) = (a.cols(), b.cols());
    let mut data = Vec::with_capacity(a.len() + b.len());
    for r in 0..a.rows() {
        data.extend_from_slice(a.row(r));
        data.extend_from_slice(b.row(r));
    }
    Tensor::from_vec(&[a.rows(), ca + cb], data)
}

/// Inverse of [`concat_cols`] for gradients.
pub fn split_cols<F: Scalar>(x: &Tensor<F>, left: usize) -> (Tensor<F>, Tensor<F>) {
    let right = x.cols() - left;
    let mut a = Vec::with_capacity(x.rows() * left);
    let mut b = Vec::with_capacity(x.rows() * right);
    for r in 0..x.rows() {
        let row = x.row(r);
        a.extend_from_slice(&row[..left]);
        b.extend_from_slice(&row[left..]);
    }
    (
        Tensor::from_vec(&[x.rows(), left], a).expect("split"),
        Tensor::from_vec(&[x.rows(), right], b).expect("split"),
    )
}

/// Adds `src` into the gradient of `id` unless the parameter is frozen.
pub(crate) fn accumulate<F: Scalar>(store: &mut ParamStore<F>, id: ParamId, f: impl FnOnce(&mut [F])) {
    if store.is_trainable(id) {
        f(store.grad_mut(id).data_mut());
    }
}

/// Sum of the rows of `m` added into `dst`.
pub(crate) fn add_col_sums<F: Scalar>(m: &Tensor<F>, dst: &mut [F]) {
    for r in 0..m.rows() {
        for (d, &v) in dst.iter_mut().zip(m.row(r)) {
            *d += v;
        }
    }
}
