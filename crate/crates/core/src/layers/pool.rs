use super::{Ragged, Span};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Per-feature maximum over the rows of a `[T×F]` sequence.
pub fn max_pool_over_time<F: Scalar>(seq: &Tensor<F>) -> Result<Tensor<F>> {
    let (pooled, _) = MaxPool::forward(&Ragged::single(seq.clone()))?;
    let f = pooled.len();
    pooled.reshape(&[f])
}

/// Max pooling over each sequence of a ragged batch. Ties go to the earliest
/// time step, which is also where the gradient is routed.
pub struct MaxPool {
    argmax: Vec<usize>,
    input_rows: usize,
    features: usize,
}

impl MaxPool {
    pub fn forward<F: Scalar>(x: &Ragged<F>) -> Result<(Tensor<F>, MaxPool)> {
        let nf = x.dim();
        let mut out = Tensor::zeros(&[x.spans.len(), nf]);
        let mut argmax = vec![0; x.spans.len() * nf];
        for (i, &Span { start, len }) in x.spans.iter().enumerate() {
            if len == 0 {
                return Err(Error::EmptySequence);
            }
            let best = &mut argmax[i * nf..(i + 1) * nf];
            best.iter_mut().for_each(|b| *b = start);
            let row = out.row_mut(i);
            row.copy_from_slice(x.values.row(start));
            for r in start + 1..start + len {
                for (j, &v) in x.values.row(r).iter().enumerate() {
                    if v > row[j] {
                        row[j] = v;
                        best[j] = r;
                    }
                }
            }
        }
        Ok((
            out,
            MaxPool {
                argmax,
                input_rows: x.total(),
                features: nf,
            },
        ))
    }

    pub fn backward<F: Scalar>(&self, dy: &Tensor<F>) -> Tensor<F> {
        let nf = self.features;
        let mut dx = Tensor::zeros(&[self.input_rows, nf]);
        for (k, &r) in self.argmax.iter().enumerate() {
            let j = k % nf;
            dx.data_mut()[r * nf + j] += dy.data()[k];
        }
        dx
    }
}
