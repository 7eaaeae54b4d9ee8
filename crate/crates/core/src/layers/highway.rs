use rand::RngCore;

use super::{Activation, Linear};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Scalar, Tensor};

/// Initial transform-gate bias; negative so the layer starts close to a carry.
pub const GATE_BIAS_INIT: f64 = -2.0;

/// `y = t⊙relu(W_H·x + b_H) + (1−t)⊙x` with `t = sigmoid(W_T·x + b_T)`.
pub fn highway<F: Scalar>(
    x: &Tensor<F>,
    w_h: &Tensor<F>,
    b_h: &Tensor<F>,
    w_t: &Tensor<F>,
    b_t: &Tensor<F>,
) -> Result<Tensor<F>> {
    let h = super::affine(x, w_h, b_h, Activation::Relu)?;
    let t = super::affine(x, w_t, b_t, Activation::Sigmoid)?;
    if h.len() != x.len() {
        return Err(Error::dim("highway layer must preserve dimensionality"));
    }
    let data = mix(x.data(), h.data(), t.data());
    Tensor::from_vec(x.shape(), data)
}

fn mix<F: Scalar>(x: &[F], h: &[F], t: &[F]) -> Vec<F> {
    x.iter()
        .zip(h)
        .zip(t)
        .map(|((&x, &h), &t)| t * h + (F::one() - t) * x)
        .collect()
}

#[derive(Debug, Clone)]
pub struct Highway {
    pub transform: Linear,
    pub gate: Linear,
}

pub struct HighwayCache<F> {
    h: Tensor<F>,
    t: Tensor<F>,
}

impl Highway {
    pub fn new<F: Scalar>(store: &mut ParamStore<F>, name: &str, dim: usize, rng: &mut dyn RngCore) -> Self {
        Highway {
            transform: Linear::new(store, &format!("{name}.transform"), dim, dim, Activation::Relu, 0.0, rng),
            gate: Linear::new(store, &format!("{name}.gate"), dim, dim, Activation::Sigmoid, GATE_BIAS_INIT, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.transform.input_dim
    }

    pub fn forward<F: Scalar>(&self, store: &ParamStore<F>, x: &Tensor<F>) -> Result<(Tensor<F>, HighwayCache<F>)> {
        let h = self.transform.forward(store, x)?;
        let t = self.gate.forward(store, x)?;
        let y = Tensor::from_vec(x.shape(), mix(x.data(), h.data(), t.data()))?;
        Ok((y, HighwayCache { h, t }))
    }

    pub fn backward<F: Scalar>(
        &self,
        store: &mut ParamStore<F>,
        x: &Tensor<F>,
        cache: &HighwayCache<F>,
        dy: &Tensor<F>,
    ) -> Tensor<F> {
        let n = dy.len();
        let mut dh = Tensor::zeros(dy.shape());
        let mut dt = Tensor::zeros(dy.shape());
        let mut dx = Tensor::zeros(dy.shape());
        for i in 0..n {
            let (g, t, h, xv) = (dy.data()[i], cache.t.data()[i], cache.h.data()[i], x.data()[i]);
            dh.data_mut()[i] = g * t;
            dt.data_mut()[i] = g * (h - xv);
            dx.data_mut()[i] = g * (F::one() - t);
        }
        let dx_h = self.transform.backward(store, x, &cache.h, dh);
        let dx_t = self.gate.backward(store, x, &cache.t, dt);
        dx.add_assign(&dx_h);
        dx.add_assign(&dx_t);
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn gate_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_t(&mut rng, &[4]);
        let w_h = rand_t(&mut rng, &[4, 4]);
        let b_h = rand_t(&mut rng, &[4]);
        let w_t = rand_t(&mut rng, &[4, 4]);

        let closed = highway(&x, &w_h, &b_h, &w_t, &Tensor::filled(&[4], -60.0)).unwrap();
        for (a, b) in closed.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let open = highway(&x, &w_h, &b_h, &w_t, &Tensor::filled(&[4], 60.0)).unwrap();
        let h = crate::layers::affine(&x, &w_h, &b_h, Activation::Relu).unwrap();
        for (a, b) in open.data().iter().zip(h.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = 4;
        let x = rand_t(&mut rng, &[d]);
        let (w_h, b_h, w_t, b_t) = (
            rand_t(&mut rng, &[d, d]),
            rand_t(&mut rng, &[d]),
            rand_t(&mut rng, &[d, d]),
            rand_t(&mut rng, &[d]),
        );
        let y = highway(&x, &w_h, &b_h, &w_t, &b_t).unwrap();
        for i in 0..d {
            let mut zh = b_h.data()[i];
            let mut zt = b_t.data()[i];
            for j in 0..d {
                zh += w_h.data()[i * d + j] * x.data()[j];
                zt += w_t.data()[i * d + j] * x.data()[j];
            }
            let t = 1.0 / (1.0 + (-zt).exp());
            let want = t * zh.max(0.0) + (1.0 - t) * x.data()[i];
            assert!((y.data()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_square_transform() {
        let x = Tensor::<f64>::zeros(&[3]);
        let w_h = Tensor::zeros(&[2, 3]);
        assert!(highway(&x, &w_h, &Tensor::zeros(&[2]), &w_h, &Tensor::zeros(&[2])).is_err());
    }
}
