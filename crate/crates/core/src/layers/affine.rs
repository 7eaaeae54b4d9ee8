use rand::RngCore;

use super::{accumulate, add_col_sums, Activation};
use crate::error::{Error, Result};
use crate::params::{Init, ParamId, ParamStore};
use crate::tensor::{debug_check_finite, gemm, Scalar, Tensor, Trans};

/// `activation(W·x + b)` for a single vector, `W` stored `[dout×din]`.
pub fn affine<F: Scalar>(
    x: &Tensor<F>,
    weight: &Tensor<F>,
    bias: &Tensor<F>,
    activation: Activation,
) -> Result<Tensor<F>> {
    let x = x.clone().reshape(&[1, x.len()])?;
    let y = affine_rows(&x, weight, bias, activation)?;
    let n = y.len();
    y.reshape(&[n])
}

/// Row-batched affine map: `X[n×din] → activation(X·Wᵀ + b)[n×dout]`.
pub(crate) fn affine_rows<F: Scalar>(
    x: &Tensor<F>,
    weight: &Tensor<F>,
    bias: &Tensor<F>,
    activation: Activation,
) -> Result<Tensor<F>> {
    if weight.shape().len() != 2 {
        return Err(Error::dim("affine weight must be 2-D"));
    }
    let (dout, din) = (weight.shape()[0], weight.shape()[1]);
    if x.cols() != din || bias.len() != dout {
        return Err(Error::dim(format!(
            "affine: input width {} / bias {} vs weight {}x{}",
            x.cols(),
            bias.len(),
            dout,
            din
        )));
    }
    let n = x.rows();
    let mut y = Tensor::zeros(&[n, dout]);
    for r in 0..n {
        y.row_mut(r).copy_from_slice(bias.data());
    }
    gemm(Trans::No, Trans::Yes, n, dout, din, F::one(), x.data(), weight.data(), F::one(), y.data_mut());
    activation.apply(y.data_mut());
    debug_check_finite("affine", y.data());
    Ok(y)
}

/// Fully connected layer.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl Linear {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        input_dim: usize,
        output_dim: usize,
        activation: Activation,
        bias_init: f64,
        rng: &mut dyn RngCore,
    ) -> Self {
        let weight = store.add_init(
            format!("{name}.weight"),
            &[output_dim, input_dim],
            Init::Glorot {
                fan_in: input_dim,
                fan_out: output_dim,
            },
            rng,
        );
        let bias = store.add_init(format!("{name}.bias"), &[output_dim], Init::Constant(bias_init), rng);
        Linear {
            weight,
            bias,
            input_dim,
            output_dim,
            activation,
        }
    }

    /// `x` is `[n×input_dim]`; returns post-activation `[n×output_dim]`.
    pub fn forward<F: Scalar>(&self, store: &ParamStore<F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        affine_rows(x, store.value(self.weight), store.value(self.bias), self.activation)
    }

    /// Consumes the output gradient `dy`, accumulates weight gradients and
    /// returns `dx`. `y` is the forward output.
    pub fn backward<F: Scalar>(
        &self,
        store: &mut ParamStore<F>,
        x: &Tensor<F>,
        y: &Tensor<F>,
        mut dy: Tensor<F>,
    ) -> Tensor<F> {
        self.activation.backprop(y.data(), dy.data_mut());
        let n = x.rows();
        let (din, dout) = (self.input_dim, self.output_dim);
        accumulate(store, self.weight, |g| {
            gemm(Trans::Yes, Trans::No, dout, din, n, F::one(), dy.data(), x.data(), F::one(), g)
        });
        accumulate(store, self.bias, |g| add_col_sums(&dy, g));
        let mut dx = Tensor::zeros(&[n, din]);
        gemm(
            Trans::No,
            Trans::No,
            n,
            din,
            dout,
            F::one(),
            dy.data(),
            store.value(self.weight).data(),
            F::zero(),
            dx.data_mut(),
        );
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights() {
        let w = Tensor::<f64>::from_rows(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let x = Tensor::vector(&[0.5, -1.0, 2.0]);
        let y = affine(&x, &w, &Tensor::zeros(&[3]), Activation::None).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_weights_give_activated_bias() {
        let w = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::vector(&[0.3, -2.0]);
        let y = affine(&Tensor::vector(&[9.0, 9.0, 9.0]), &w, &b, Activation::Tanh).unwrap();
        assert_eq!(y.data(), &[0.3f64.tanh(), (-2.0f64).tanh()]);
    }

    #[test]
    fn shape_mismatch() {
        let w = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2]);
        assert!(affine(&Tensor::vector(&[1.0, 2.0]), &w, &b, Activation::None).is_err());
    }
}
