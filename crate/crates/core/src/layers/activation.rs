use std::fmt;
use std::str::FromStr;

use crate::error::Error;
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    None,
    Tanh,
    Relu,
    Sigmoid,
}

#[inline]
pub(crate) fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

impl Activation {
    pub fn apply<F: Scalar>(self, values: &mut [F]) {
        match self {
            Activation::None => {}
            Activation::Tanh => values.iter_mut().for_each(|v| *v = v.tanh()),
            Activation::Relu => values.iter_mut().for_each(|v| *v = v.max(F::zero())),
            Activation::Sigmoid => values.iter_mut().for_each(|v| *v = sigmoid(*v)),
        }
    }

    /// Turns `grad` (w.r.t. the output) into the gradient w.r.t. the
    /// pre-activation, using the stored outputs.
    pub fn backprop<F: Scalar>(self, outputs: &[F], grad: &mut [F]) {
        match self {
            Activation::None => {}
            Activation::Tanh => {
                for (g, &y) in grad.iter_mut().zip(outputs) {
                    *g *= F::one() - y * y;
                }
            }
            Activation::Relu => {
                for (g, &y) in grad.iter_mut().zip(outputs) {
                    if y <= F::zero() {
                        *g = F::zero();
                    }
                }
            }
            Activation::Sigmoid => {
                for (g, &y) in grad.iter_mut().zip(outputs) {
                    *g *= y * (F::one() - y);
                }
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::None => "none",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "none" => Ok(Activation::None),
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::config(format!("unknown activation {other:?}"))),
        }
    }
}
