//! Central finite-difference check of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::ParamStore;

/// A scalar function of a parameter store with a hand-written gradient.
pub trait Objective {
    fn loss(&self, params: &ParamStore<f64>) -> Result<f64>;

    /// Returns the loss and accumulates its gradient into `params` (which the
    /// caller has zeroed).
    fn loss_and_grad(&self, params: &mut ParamStore<f64>) -> Result<f64>;
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Check at most this many coordinates per tensor, sampled under `seed`.
    pub max_coords_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-4,
            max_coords_per_tensor: Some(48),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-12)
}

fn finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Evaluation(format!("non-finite objective value at {what}")))
    }
}

/// Compares the analytic gradient of `objective` against central differences
/// on every trainable parameter. Frozen parameters are excluded.
pub fn grad_check<O: Objective + ?Sized>(
    objective: &O,
    params: &mut ParamStore<f64>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    params.zero_grads();
    finite(objective.loss_and_grad(params)?, "base point")?;
    let analytic: Vec<_> = params.grads.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    for id in params.ids().collect::<Vec<_>>() {
        if !params.is_trainable(id) {
            continue;
        }
        let len = params.value(id).len();
        let coords: Vec<usize> = match opts.max_coords_per_tensor {
            Some(cap) if cap < len => {
                let mut picked = sample(&mut rng, len, cap).into_vec();
                picked.sort_unstable();
                picked
            }
            _ => (0..len).collect(),
        };
        for i in coords {
            let orig = params.value(id).data()[i];
            params.value_mut(id).data_mut()[i] = orig + opts.eps;
            let plus = finite(objective.loss(params)?, params.name(id))?;
            params.value_mut(id).data_mut()[i] = orig - opts.eps;
            let minus = finite(objective.loss(params)?, params.name(id))?;
            params.value_mut(id).data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * opts.eps);
            let err = rel_err(analytic[id.index()].data()[i], numeric);
            report.checked += 1;
            if err > report.max_rel_err || report.worst_param.is_empty() {
                report.max_rel_err = err.max(report.max_rel_err);
                report.worst_param = params.name(id).to_string();
                report.worst_index = i;
            }
        }
    }
    params.zero_grads();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{softmax_cross_entropy, Tensor};

    struct SumOf;

    impl Objective for SumOf {
        fn loss(&self, params: &ParamStore<f64>) -> Result<f64> {
            Ok(params.values.iter().map(|t| t.sum()).sum())
        }

        fn loss_and_grad(&self, params: &mut ParamStore<f64>) -> Result<f64> {
            for g in &mut params.grads {
                g.fill(1.0);
            }
            self.loss(params)
        }
    }

    #[test]
    fn linear_sum() {
        let mut p = ParamStore::new();
        p.add("x", Tensor::vector(&[0.3, -2.0, 7.5, 1e3]));
        let r = grad_check(&SumOf, &mut p, &GradCheckOptions::default()).unwrap();
        assert!(r.max_rel_err < 1e-9, "{r:?}");
        assert_eq!(r.checked, 4);
    }

    /// Cross-entropy on top of a 3-unit linear layer, hand-differentiated.
    struct LinearXent {
        x: Vec<f64>,
        gold: usize,
    }

    impl Objective for LinearXent {
        fn loss(&self, p: &ParamStore<f64>) -> Result<f64> {
            let w = p.values[0].data();
            let logits: Vec<f64> = (0..3)
                .map(|r| (0..self.x.len()).map(|c| w[r * self.x.len() + c] * self.x[c]).sum())
                .collect();
            Ok(softmax_cross_entropy(&Tensor::vector(&logits), self.gold)?.0)
        }

        fn loss_and_grad(&self, p: &mut ParamStore<f64>) -> Result<f64> {
            let d = self.x.len();
            let w = p.values[0].data().to_vec();
            let logits: Vec<f64> = (0..3)
                .map(|r| (0..d).map(|c| w[r * d + c] * self.x[c]).sum())
                .collect();
            let (loss, probs) = softmax_cross_entropy(&Tensor::vector(&logits), self.gold)?;
            let g = p.grads[0].data_mut();
            for r in 0..3 {
                let dl = probs.data()[r] - if r == self.gold { 1.0 } else { 0.0 };
                for c in 0..d {
                    g[r * d + c] += dl * self.x[c];
                }
            }
            Ok(loss)
        }
    }

    #[test]
    fn linear_softmax_layer() {
        let mut p = ParamStore::new();
        p.add(
            "w",
            Tensor::from_rows(&[&[0.1, -0.4], &[0.7, 0.2], &[-0.3, 0.5]]),
        );
        let obj = LinearXent { x: vec![1.5, -0.8], gold: 1 };
        let opts = GradCheckOptions { eps: 1e-5, ..Default::default() };
        let r = grad_check(&obj, &mut p, &opts).unwrap();
        assert!(r.max_rel_err < 1e-6, "{r:?}");
    }

    #[test]
    fn frozen_params_are_skipped() {
        let mut p = ParamStore::new();
        p.add("a", Tensor::vector(&[1.0, 2.0]));
        let b = p.add("b", Tensor::vector(&[3.0]));
        p.set_trainable(b, false);
        let r = grad_check(&SumOf, &mut p, &GradCheckOptions::default()).unwrap();
        assert_eq!(r.checked, 2);
    }

    struct Explodes;

    impl Objective for Explodes {
        fn loss(&self, _: &ParamStore<f64>) -> Result<f64> {
            Ok(f64::NAN)
        }
        fn loss_and_grad(&self, p: &mut ParamStore<f64>) -> Result<f64> {
            self.loss(p)
        }
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let mut p = ParamStore::new();
        p.add("a", Tensor::vector(&[1.0]));
        assert!(matches!(
            grad_check(&Explodes, &mut p, &GradCheckOptions::default()),
            Err(Error::Evaluation(_))
        ));
    }
}
