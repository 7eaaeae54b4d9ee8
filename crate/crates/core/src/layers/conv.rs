use rand::RngCore;

use super::{accumulate, add_col_sums, Activation, Ragged, Span};
use crate::error::{Error, Result};
use crate::params::{Init, ParamId, ParamStore};
use crate::tensor::{debug_check_finite, gemm, Scalar, Tensor, Trans};

/// Unfolds every width-`w` window of every sequence into one row.
fn im2col<F: Scalar>(x: &Ragged<F>, width: usize) -> Result<(Tensor<F>, Vec<Span>)> {
    let din = x.dim();
    let row_len = width * din;
    let mut out_spans = Vec::with_capacity(x.spans.len());
    let mut data = Vec::new();
    let mut rows = 0;
    for s in &x.spans {
        if s.len < width {
            return Err(Error::dim(format!(
                "sequence of length {} shorter than filter width {}",
                s.len, width
            )));
        }
        let n_out = s.len - width + 1;
        out_spans.push(Span {
            start: rows,
            len: n_out,
        });
        for t in 0..n_out {
            let from = (s.start + t) * din;
            data.extend_from_slice(&x.values.data()[from..from + row_len]);
        }
        rows += n_out;
    }
    Ok((Tensor::from_vec(&[rows, row_len], data)?, out_spans))
}

fn conv_forward<F: Scalar>(
    x: &Ragged<F>,
    filters: &Tensor<F>,
    bias: &Tensor<F>,
    activation: Activation,
) -> Result<(Ragged<F>, Tensor<F>)> {
    if filters.shape().len() != 3 {
        return Err(Error::dim("filters must be [F×w×din]"));
    }
    let (nf, width, din) = (filters.shape()[0], filters.shape()[1], filters.shape()[2]);
    if x.dim() != din || bias.len() != nf {
        return Err(Error::dim(format!(
            "conv1d: input width {} / bias {} vs filters {:?}",
            x.dim(),
            bias.len(),
            filters.shape()
        )));
    }
    let (cols, spans) = im2col(x, width)?;
    let n = cols.rows();
    let mut y = Tensor::zeros(&[n, nf]);
    for r in 0..n {
        y.row_mut(r).copy_from_slice(bias.data());
    }
    gemm(Trans::No, Trans::Yes, n, nf, width * din, F::one(), cols.data(), filters.data(), F::one(), y.data_mut());
    activation.apply(y.data_mut());
    debug_check_finite("conv1d", y.data());
    Ok((Ragged { values: y, spans }, cols))
}

/// Narrow 1-D convolution of a `[T×din]` sequence with `[F×w×din]` filters;
/// output is `[(T−w+1)×F]`. Requires `T ≥ w` (callers pad first).
pub fn conv1d<F: Scalar>(
    x: &Tensor<F>,
    filters: &Tensor<F>,
    bias: &Tensor<F>,
    activation: Activation,
) -> Result<Tensor<F>> {
    if x.rows() == 0 {
        return Err(Error::EmptySequence);
    }
    let (y, _) = conv_forward(&Ragged::single(x.clone()), filters, bias, activation)?;
    Ok(y.values)
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    pub filters: ParamId,
    pub bias: ParamId,
    pub width: usize,
    pub input_dim: usize,
    pub num_filters: usize,
    pub activation: Activation,
}

pub struct ConvCache<F> {
    cols: Tensor<F>,
    input_spans: Vec<Span>,
    input_rows: usize,
}

impl Conv1d {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        input_dim: usize,
        num_filters: usize,
        width: usize,
        activation: Activation,
        rng: &mut dyn RngCore,
    ) -> Self {
        let filters = store.add_init(
            format!("{name}.filters"),
            &[num_filters, width, input_dim],
            Init::Glorot {
                fan_in: width * input_dim,
                fan_out: num_filters,
            },
            rng,
        );
        let bias = store.add_init(format!("{name}.bias"), &[num_filters], Init::Constant(0.0), rng);
        Conv1d {
            filters,
            bias,
            width,
            input_dim,
            num_filters,
            activation,
        }
    }

    pub fn forward<F: Scalar>(&self, store: &ParamStore<F>, x: &Ragged<F>) -> Result<(Ragged<F>, ConvCache<F>)> {
        let (y, cols) = conv_forward(x, store.value(self.filters), store.value(self.bias), self.activation)?;
        Ok((
            y,
            ConvCache {
                cols,
                input_spans: x.spans.clone(),
                input_rows: x.total(),
            },
        ))
    }

    /// `y` is the forward output, `dy` its gradient. Returns the input gradient.
    pub fn backward<F: Scalar>(
        &self,
        store: &mut ParamStore<F>,
        cache: &ConvCache<F>,
        y: &Tensor<F>,
        mut dy: Tensor<F>,
    ) -> Tensor<F> {
        self.activation.backprop(y.data(), dy.data_mut());
        let n = dy.rows();
        let k = self.width * self.input_dim;
        let nf = self.num_filters;
        accumulate(store, self.filters, |g| {
            gemm(Trans::Yes, Trans::No, nf, k, n, F::one(), dy.data(), cache.cols.data(), F::one(), g)
        });
        accumulate(store, self.bias, |g| add_col_sums(&dy, g));

        let mut dcols = Tensor::zeros(&[n, k]);
        gemm(
            Trans::No,
            Trans::No,
            n,
            k,
            nf,
            F::one(),
            dy.data(),
            store.value(self.filters).data(),
            F::zero(),
            dcols.data_mut(),
        );
        // col2im: overlapping windows add up
        let din = self.input_dim;
        let mut dx = Tensor::zeros(&[cache.input_rows, din]);
        let mut r = 0;
        for s in &cache.input_spans {
            for t in 0..s.len + 1 - self.width {
                let from = (s.start + t) * din;
                for (d, &v) in dx.data_mut()[from..from + k].iter_mut().zip(dcols.row(r)) {
                    *d += v;
                }
                r += 1;
            }
        }
        dx
    }
}
