use rand::RngCore;

use super::accumulate;
use crate::error::{Error, Result};
use crate::params::{Init, ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// Row `index` of a `[V×d]` table.
pub fn embed<F: Scalar>(table: &Tensor<F>, index: usize) -> Result<Tensor<F>> {
    if table.shape().len() != 2 {
        return Err(Error::dim("embedding table must be 2-D"));
    }
    if index >= table.rows() {
        return Err(Error::Index {
            index,
            size: table.rows(),
        });
    }
    Tensor::from_vec(&[table.cols()], table.row(index).to_vec())
}

/// Lookup table layer.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab_size: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        vocab_size: usize,
        dim: usize,
        rng: &mut dyn RngCore,
    ) -> Self {
        let limit = (3.0 / dim as f64).sqrt();
        let table = store.add_init(format!("{name}.table"), &[vocab_size, dim], Init::Uniform(limit), rng);
        Embedding {
            table,
            vocab_size,
            dim,
        }
    }

    pub fn from_table<F: Scalar>(store: &mut ParamStore<F>, name: &str, table: Tensor<F>) -> Result<Self> {
        if table.shape().len() != 2 {
            return Err(Error::dim("embedding table must be 2-D"));
        }
        let (vocab_size, dim) = (table.rows(), table.cols());
        let table = store.add(format!("{name}.table"), table);
        Ok(Embedding {
            table,
            vocab_size,
            dim,
        })
    }

    /// Gathers rows for `ids` into an `[n×dim]` matrix.
    pub fn forward<F: Scalar>(&self, store: &ParamStore<F>, ids: &[usize]) -> Result<Tensor<F>> {
        let table = store.value(self.table);
        let mut out = Vec::with_capacity(ids.len() * self.dim);
        for &i in ids {
            if i >= self.vocab_size {
                return Err(Error::Index {
                    index: i,
                    size: self.vocab_size,
                });
            }
            out.extend_from_slice(table.row(i));
        }
        Tensor::from_vec(&[ids.len(), self.dim], out)
    }

    /// Scatter-adds row gradients; repeated ids accumulate.
    pub fn backward<F: Scalar>(&self, store: &mut ParamStore<F>, ids: &[usize], dy: &Tensor<F>) {
        let dim = self.dim;
        accumulate(store, self.table, |g| {
            for (r, &i) in ids.iter().enumerate() {
                for (gv, &d) in g[i * dim..(i + 1) * dim].iter_mut().zip(dy.row(r)) {
                    *gv += d;
                }
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_table() {
        let t = Tensor::<f64>::from_rows(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        assert_eq!(embed(&t, 1).unwrap().data(), &[0.0, 1.0, 0.0]);
        assert!(matches!(embed(&t, 3), Err(Error::Index { index: 3, size: 3 })));
    }

    #[test]
    fn last_row() {
        let t = Tensor::<f64>::from_rows(&[
            &[0.1, 0.2],
            &[0.3, 0.4],
            &[0.5, 0.6],
            &[0.7, 0.8],
            &[-0.9, 1.1],
        ]);
        assert_eq!(embed(&t, 4).unwrap().data(), &[-0.9, 1.1]);
    }

    #[test]
    fn repeated_ids_accumulate() {
        let mut store = ParamStore::<f64>::new();
        let emb = Embedding::from_table(&mut store, "e", Tensor::zeros(&[3, 2])).unwrap();
        let dy = Tensor::from_rows(&[&[1.0, 2.0], &[10.0, 20.0], &[5.0, 5.0]]);
        emb.backward(&mut store, &[2, 0, 2], &dy);
        assert_eq!(store.grad(emb.table).data(), &[10.0, 20.0, 0.0, 0.0, 6.0, 7.0]);
    }

    #[test]
    fn frozen_table_gets_no_gradient() {
        let mut store = ParamStore::<f64>::new();
        let emb = Embedding::from_table(&mut store, "e", Tensor::zeros(&[2, 2])).unwrap();
        store.set_trainable(emb.table, false);
        emb.backward(&mut store, &[1], &Tensor::from_rows(&[&[1.0, 1.0]]));
        assert!(store.grad(emb.table).data().iter().all(|&v| v == 0.0));
    }
}
