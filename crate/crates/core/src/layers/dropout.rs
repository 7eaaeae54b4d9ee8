use rand::{Rng, RngCore};

use super::Mode;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Inverted-dropout mask: entries are 0 or 1/keep_prob, or absent when the
/// layer is a no-op (eval mode or keep_prob = 1).
#[derive(Debug, Clone)]
pub struct DropoutMask<F> {
    pub keep_prob: f64,
    pub mask: Option<Tensor<F>>,
}

impl<F: Scalar> DropoutMask<F> {
    pub fn identity() -> Self {
        DropoutMask {
            keep_prob: 1.0,
            mask: None,
        }
    }

    pub fn sample(shape: &[usize], keep_prob: f64, rng: &mut dyn RngCore) -> Self {
        let scale = F::from_f64(1.0 / keep_prob);
        let mut mask = Tensor::zeros(shape);
        for m in mask.data_mut() {
            if rng.gen::<f64>() < keep_prob {
                *m = scale;
            }
        }
        DropoutMask {
            keep_prob,
            mask: Some(mask),
        }
    }

    pub fn apply(&self, x: &mut [F]) {
        if let Some(m) = &self.mask {
            for (v, &k) in x.iter_mut().zip(m.data()) {
                *v *= k;
            }
        }
    }

    /// Backward is the same elementwise product.
    pub fn backward(&self, grad: &mut [F]) {
        self.apply(grad)
    }
}

pub(crate) fn check_keep_prob(keep_prob: f64) -> Result<()> {
    if keep_prob > 0.0 && keep_prob <= 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!("keep_prob {keep_prob} not in (0, 1]")))
    }
}

pub fn dropout<F: Scalar>(
    x: &Tensor<F>,
    keep_prob: f64,
    mode: Mode,
    rng: &mut dyn RngCore,
) -> Result<(Tensor<F>, DropoutMask<F>)> {
    check_keep_prob(keep_prob)?;
    if mode == Mode::Eval || keep_prob >= 1.0 {
        return Ok((x.clone(), DropoutMask::identity()));
    }
    let mask = DropoutMask::sample(x.shape(), keep_prob, rng);
    let mut y = x.clone();
    mask.apply(y.data_mut());
    Ok((y, mask))
}
