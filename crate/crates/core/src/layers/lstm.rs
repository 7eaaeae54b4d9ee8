//! LSTM cell without peepholes. Gate blocks are laid out `[i, f, g, o]` along
//! the `4H` axis of the weight matrices.
//!
//! [`Lstm`] runs a whole ragged batch of sequences at once: sequences are
//! visited longest-first so the active set at step `t` is always a prefix,
//! and the recurrent product is one GEMM per step. Each sequence only ever
//! sees its own rows, so its result does not depend on the rest of the batch.

use rand::{Rng, RngCore};

use super::activation::sigmoid;
use super::{accumulate, add_col_sums, DropoutMask, Ragged, Regularizer, Span};
use crate::error::{Error, Result};
use crate::params::{Init, ParamId, ParamStore};
use crate::tensor::{debug_check_finite, gemm, Scalar, Tensor, Trans};

/// Initial forget-gate bias.
pub const FORGET_BIAS_INIT: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<F> {
    pub h: Tensor<F>,
    pub c: Tensor<F>,
}

impl<F: Scalar> LstmState<F> {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            h: Tensor::zeros(&[hidden]),
            c: Tensor::zeros(&[hidden]),
        }
    }
}

/// Applies gate nonlinearities to `gates` in place and writes the new cell
/// state, its tanh and the output.
#[inline]
fn cell_forward<F: Scalar>(gates: &mut [F], c_prev: Option<&[F]>, c: &mut [F], tanh_c: &mut [F], h: &mut [F]) {
    let hd = c.len();
    for j in 0..hd {
        let i = sigmoid(gates[j]);
        let f = sigmoid(gates[hd + j]);
        let g = gates[2 * hd + j].tanh();
        let o = sigmoid(gates[3 * hd + j]);
        gates[j] = i;
        gates[hd + j] = f;
        gates[2 * hd + j] = g;
        gates[3 * hd + j] = o;
        let cp = c_prev.map_or(F::zero(), |cp| cp[j]);
        c[j] = f * cp + i * g;
        tanh_c[j] = c[j].tanh();
        h[j] = o * tanh_c[j];
    }
}

/// One LSTM step for a single input vector.
pub fn lstm_step<F: Scalar>(
    x: &Tensor<F>,
    state: &LstmState<F>,
    w_ih: &Tensor<F>,
    w_hh: &Tensor<F>,
    bias: &Tensor<F>,
) -> Result<LstmState<F>> {
    let hd = state.h.len();
    if state.c.len() != hd
        || w_hh.shape() != [4 * hd, hd]
        || w_ih.shape() != [4 * hd, x.len()]
        || bias.len() != 4 * hd
    {
        return Err(Error::dim(format!(
            "lstm_step: x {:?}, h {}, c {}, w_ih {:?}, w_hh {:?}, bias {:?}",
            x.shape(),
            hd,
            state.c.len(),
            w_ih.shape(),
            w_hh.shape(),
            bias.shape()
        )));
    }
    let mut gates = bias.data().to_vec();
    gemm(Trans::No, Trans::Yes, 1, 4 * hd, x.len(), F::one(), x.data(), w_ih.data(), F::one(), &mut gates);
    gemm(Trans::No, Trans::Yes, 1, 4 * hd, hd, F::one(), state.h.data(), w_hh.data(), F::one(), &mut gates);
    let mut next = LstmState::zeros(hd);
    let mut tanh_c = vec![F::zero(); hd];
    cell_forward(
        &mut gates,
        Some(state.c.data()),
        next.c.data_mut(),
        &mut tanh_c,
        next.h.data_mut(),
    );
    Ok(next)
}

#[derive(Debug, Clone)]
pub struct Lstm {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

pub struct LstmCache<F> {
    reverse: bool,
    spans: Vec<Span>,
    order: Vec<usize>,
    active: Vec<usize>,
    gates: Tensor<F>,
    c: Tensor<F>,
    tanh_c: Tensor<F>,
    h_prev: Tensor<F>,
    masks: Option<Tensor<F>>,
}

#[inline]
fn row_at(s: Span, t: usize, reverse: bool) -> usize {
    if reverse {
        s.start + s.len - 1 - t
    } else {
        s.start + t
    }
}

impl Lstm {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut dyn RngCore,
    ) -> Self {
        let w_ih = store.add_init(
            format!("{name}.w_ih"),
            &[4 * hidden, input_dim],
            Init::Glorot {
                fan_in: input_dim,
                fan_out: 4 * hidden,
            },
            rng,
        );
        let w_hh = store.add_init(
            format!("{name}.w_hh"),
            &[4 * hidden, hidden],
            Init::Glorot {
                fan_in: hidden,
                fan_out: 4 * hidden,
            },
            rng,
        );
        let bias = store.add_init(format!("{name}.bias"), &[4 * hidden], Init::Constant(0.0), rng);
        let fb = F::from_f64(FORGET_BIAS_INIT);
        store.value_mut(bias).data_mut()[hidden..2 * hidden]
            .iter_mut()
            .for_each(|b| *b = fb);
        Lstm {
            w_ih,
            w_hh,
            bias,
            input_dim,
            hidden,
        }
    }

    /// Runs every sequence of `x`, right-to-left when `reverse`. Output row
    /// `r` is the hidden state after consuming input row `r`.
    pub fn forward<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        x: &Ragged<F>,
        reverse: bool,
        reg: &mut Regularizer<'_>,
    ) -> Result<(Ragged<F>, LstmCache<F>)> {
        if x.dim() != self.input_dim {
            return Err(Error::dim(format!(
                "lstm: input width {} != {}",
                x.dim(),
                self.input_dim
            )));
        }
        if x.spans.iter().any(|s| s.len == 0) {
            return Err(Error::EmptySequence);
        }
        let hd = self.hidden;
        let total = x.total();
        let w_hh = store.value(self.w_hh);

        // input projections for all rows at once
        let mut gates = Tensor::zeros(&[total, 4 * hd]);
        let bias = store.value(self.bias).data();
        for r in 0..total {
            gates.row_mut(r).copy_from_slice(bias);
        }
        gemm(
            Trans::No,
            Trans::Yes,
            total,
            4 * hd,
            self.input_dim,
            F::one(),
            x.values.data(),
            store.value(self.w_ih).data(),
            F::one(),
            gates.data_mut(),
        );

        let mut order: Vec<usize> = (0..x.spans.len()).collect();
        order.sort_by(|&a, &b| x.spans[b].len.cmp(&x.spans[a].len));
        let max_len = order.first().map_or(0, |&s| x.spans[s].len);
        let active: Vec<usize> = (0..max_len)
            .map(|t| order.iter().take_while(|&&s| x.spans[s].len > t).count())
            .collect();

        let dropping = reg.active();
        let keep = reg.keep_prob;
        let mut masks = dropping.then(|| Tensor::<F>::zeros(&[total, hd]));
        let seq_masks: Option<Vec<DropoutMask<F>>> = (dropping && reg.variational).then(|| {
            order
                .iter()
                .map(|_| DropoutMask::sample(&[hd], keep, &mut *reg.rng))
                .collect()
        });
        let scale = F::from_f64(1.0 / keep);

        let mut c = Tensor::zeros(&[total, hd]);
        let mut tanh_c = Tensor::zeros(&[total, hd]);
        let mut h = Tensor::zeros(&[total, hd]);
        let mut h_prev = Tensor::zeros(&[total, hd]);
        let mut hbuf = Vec::new();
        let mut rec = Vec::new();

        for (t, &n_t) in active.iter().enumerate() {
            hbuf.clear();
            hbuf.resize(n_t * hd, F::zero());
            if t > 0 {
                for (p, &s) in order[..n_t].iter().enumerate() {
                    let span = x.spans[s];
                    let prev = row_at(span, t - 1, reverse);
                    let row = row_at(span, t, reverse);
                    let dst = &mut hbuf[p * hd..(p + 1) * hd];
                    dst.copy_from_slice(h.row(prev));
                    if let Some(m) = masks.as_mut() {
                        let mrow = m.row_mut(row);
                        match &seq_masks {
                            Some(sm) => mrow.copy_from_slice(sm[p].mask.as_ref().expect("sampled").data()),
                            None => {
                                for v in mrow.iter_mut() {
                                    *v = if reg.rng.gen::<f64>() < keep { scale } else { F::zero() };
                                }
                            }
                        }
                        for (d, &k) in dst.iter_mut().zip(mrow.iter()) {
                            *d *= k;
                        }
                    }
                    h_prev.row_mut(row).copy_from_slice(dst);
                }
            }
            rec.clear();
            rec.resize(n_t * 4 * hd, F::zero());
            if t > 0 {
                gemm(Trans::No, Trans::Yes, n_t, 4 * hd, hd, F::one(), &hbuf, w_hh.data(), F::zero(), &mut rec);
            }
            for (p, &s) in order[..n_t].iter().enumerate() {
                let span = x.spans[s];
                let row = row_at(span, t, reverse);
                let g = gates.row_mut(row);
                for (gv, &rv) in g.iter_mut().zip(&rec[p * 4 * hd..(p + 1) * 4 * hd]) {
                    *gv += rv;
                }
                let c_prev = (t > 0).then(|| c.row(row_at(span, t - 1, reverse)).to_vec());
                let mut c_row = vec![F::zero(); hd];
                cell_forward(
                    g,
                    c_prev.as_deref(),
                    &mut c_row,
                    tanh_c.row_mut(row),
                    h.row_mut(row),
                );
                c.row_mut(row).copy_from_slice(&c_row);
            }
        }
        debug_check_finite("lstm", h.data());

        let out = Ragged {
            values: h,
            spans: x.spans.clone(),
        };
        Ok((
            out,
            LstmCache {
                reverse,
                spans: x.spans.clone(),
                order,
                active,
                gates,
                c,
                tanh_c,
                h_prev,
                masks,
            },
        ))
    }

    /// BPTT. `d_out` is the gradient w.r.t. every output row; returns the
    /// gradient w.r.t. the input rows.
    pub fn backward<F: Scalar>(
        &self,
        store: &mut ParamStore<F>,
        x: &Ragged<F>,
        cache: &LstmCache<F>,
        d_out: &Tensor<F>,
    ) -> Tensor<F> {
        let hd = self.hidden;
        let total = x.total();
        let reverse = cache.reverse;
        let nseq = cache.order.len();
        let mut d_gates = Tensor::zeros(&[total, 4 * hd]);
        let mut dh_carry = vec![F::zero(); nseq * hd];
        let mut dc_carry = vec![F::zero(); nseq * hd];
        let mut gbuf = Vec::new();
        let mut dh_prev = Vec::new();
        let w_hh = store.value(self.w_hh).data().to_vec();

        for t in (0..cache.active.len()).rev() {
            let n_t = cache.active[t];
            gbuf.clear();
            gbuf.resize(n_t * 4 * hd, F::zero());
            for (p, &s) in cache.order[..n_t].iter().enumerate() {
                let span = cache.spans[s];
                let row = row_at(span, t, reverse);
                let g = cache.gates.row(row);
                let tc = cache.tanh_c.row(row);
                let c_prev = (t > 0).then(|| cache.c.row(row_at(span, t - 1, reverse)));
                let dout = d_out.row(row);
                let dh_c = &mut dh_carry[p * hd..(p + 1) * hd];
                let dc_c = &mut dc_carry[p * hd..(p + 1) * hd];
                let dg = &mut gbuf[p * 4 * hd..(p + 1) * 4 * hd];
                for j in 0..hd {
                    let (i, f, gg, o) = (g[j], g[hd + j], g[2 * hd + j], g[3 * hd + j]);
                    let dh = dout[j] + dh_c[j];
                    let dc = dc_c[j] + dh * o * (F::one() - tc[j] * tc[j]);
                    let cp = c_prev.map_or(F::zero(), |cp| cp[j]);
                    dg[j] = dc * gg * i * (F::one() - i);
                    dg[hd + j] = dc * cp * f * (F::one() - f);
                    dg[2 * hd + j] = dc * i * (F::one() - gg * gg);
                    dg[3 * hd + j] = dh * tc[j] * o * (F::one() - o);
                    dc_c[j] = dc * f;
                }
                d_gates.row_mut(row).copy_from_slice(dg);
            }
            if t > 0 {
                dh_prev.clear();
                dh_prev.resize(n_t * hd, F::zero());
                gemm(Trans::No, Trans::No, n_t, hd, 4 * hd, F::one(), &gbuf, &w_hh, F::zero(), &mut dh_prev);
                for (p, &s) in cache.order[..n_t].iter().enumerate() {
                    let row = row_at(cache.spans[s], t, reverse);
                    let dst = &mut dh_carry[p * hd..(p + 1) * hd];
                    dst.copy_from_slice(&dh_prev[p * hd..(p + 1) * hd]);
                    if let Some(m) = &cache.masks {
                        for (d, &k) in dst.iter_mut().zip(m.row(row)) {
                            *d *= k;
                        }
                    }
                }
            }
        }

        let din = self.input_dim;
        accumulate(store, self.w_ih, |g| {
            gemm(Trans::Yes, Trans::No, 4 * hd, din, total, F::one(), d_gates.data(), x.values.data(), F::one(), g)
        });
        accumulate(store, self.w_hh, |g| {
            gemm(Trans::Yes, Trans::No, 4 * hd, hd, total, F::one(), d_gates.data(), cache.h_prev.data(), F::one(), g)
        });
        accumulate(store, self.bias, |g| add_col_sums(&d_gates, g));
        let mut dx = Tensor::zeros(&[total, din]);
        gemm(
            Trans::No,
            Trans::No,
            total,
            din,
            4 * hd,
            F::one(),
            d_gates.data(),
            store.value(self.w_ih).data(),
            F::zero(),
            dx.data_mut(),
        );
        dx
    }
}

/// Stack of unidirectional LSTM layers running in one direction, with
/// dropout on the inputs of every layer above the first.
#[derive(Debug, Clone)]
pub struct LstmStack {
    pub layers: Vec<Lstm>,
    pub reverse: bool,
}

pub struct LstmStackCache<F> {
    inputs: Vec<Ragged<F>>,
    caches: Vec<LstmCache<F>>,
    masks: Vec<DropoutMask<F>>,
}

impl LstmStack {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        input_dim: usize,
        hidden: &[usize],
        reverse: bool,
        rng: &mut dyn RngCore,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden.len());
        let mut din = input_dim;
        for (l, &h) in hidden.iter().enumerate() {
            layers.push(Lstm::new(store, &format!("{name}.{l}"), din, h, rng));
            din = h;
        }
        LstmStack { layers, reverse }
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.hidden)
    }

    pub fn forward<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        x: &Ragged<F>,
        reg: &mut Regularizer<'_>,
    ) -> Result<(Ragged<F>, LstmStackCache<F>)> {
        let mut cache = LstmStackCache {
            inputs: Vec::with_capacity(self.layers.len()),
            caches: Vec::with_capacity(self.layers.len()),
            masks: Vec::with_capacity(self.layers.len()),
        };
        let mut cur = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            if l > 0 {
                let (dropped, mask) = reg.dropout(&cur.values)?;
                cur.values = dropped;
                cache.masks.push(mask);
            } else {
                cache.masks.push(DropoutMask::identity());
            }
            let (out, c) = layer.forward(store, &cur, self.reverse, reg)?;
            cache.inputs.push(cur);
            cache.caches.push(c);
            cur = out;
        }
        Ok((cur, cache))
    }

    pub fn backward<F: Scalar>(
        &self,
        store: &mut ParamStore<F>,
        cache: &LstmStackCache<F>,
        d_top: &Tensor<F>,
    ) -> Tensor<F> {
        let mut grad = d_top.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            grad = layer.backward(store, &cache.inputs[l], &cache.caches[l], &grad);
            cache.masks[l].backward(grad.data_mut());
        }
        grad
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Mode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_weights_zero_state() {
        let x = Tensor::<f64>::vector(&[0.4, -0.2, 1.0]);
        let next = lstm_step(
            &x,
            &LstmState::zeros(2),
            &Tensor::zeros(&[8, 3]),
            &Tensor::zeros(&[8, 2]),
            &Tensor::zeros(&[8]),
        )
        .unwrap();
        assert_eq!(next.h.data(), &[0.0, 0.0]);
        assert_eq!(next.c.data(), &[0.0, 0.0]);
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let mut bias = vec![0.0; 8];
        // input gate closed, forget gate open
        bias[0..2].iter_mut().for_each(|b| *b = -60.0);
        bias[2..4].iter_mut().for_each(|b| *b = 60.0);
        let state = LstmState {
            h: Tensor::vector(&[0.3, -0.1]),
            c: Tensor::vector(&[0.7, -1.2]),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let next = lstm_step(
            &rand_t(&mut rng, &[3]),
            &state,
            &(rand_t(&mut rng, &[8, 3])),
            &(rand_t(&mut rng, &[8, 2])),
            &Tensor::from_vec(&[8], bias).unwrap(),
        )
        .unwrap();
        for (a, b) in next.c.data().iter().zip(state.c.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn step_matches_scalar_gate_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (din, hd) = (3, 2);
        let x = rand_t(&mut rng, &[din]);
        let w_ih = rand_t(&mut rng, &[4 * hd, din]);
        let w_hh = rand_t(&mut rng, &[4 * hd, hd]);
        let b = rand_t(&mut rng, &[4 * hd]);
        let state = LstmState {
            h: rand_t(&mut rng, &[hd]),
            c: rand_t(&mut rng, &[hd]),
        };
        let next = lstm_step(&x, &state, &w_ih, &w_hh, &b).unwrap();
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let pre = |k: usize| -> f64 {
            let mut z = b.data()[k];
            for d in 0..din {
                z += w_ih.data()[k * din + d] * x.data()[d];
            }
            for d in 0..hd {
                z += w_hh.data()[k * hd + d] * state.h.data()[d];
            }
            z
        };
        for j in 0..hd {
            let i = sig(pre(j));
            let f = sig(pre(hd + j));
            let g = pre(2 * hd + j).tanh();
            let o = sig(pre(3 * hd + j));
            let c = f * state.c.data()[j] + i * g;
            assert!((next.c.data()[j] - c).abs() < 1e-12);
            assert!((next.h.data()[j] - o * c.tanh()).abs() < 1e-12);
        }
    }

    #[test]
    fn sequence_equals_composed_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParamStore::<f64>::new();
        let lstm = Lstm::new(&mut store, "l", 3, 4, &mut rng);
        let seqs = vec![rand_t(&mut rng, &[5, 3]), rand_t(&mut rng, &[2, 3]), rand_t(&mut rng, &[4, 3])];
        let batch = Ragged::from_sequences(&seqs).unwrap();
        for reverse in [false, true] {
            let mut reg = Regularizer::eval(&mut rng);
            let (out, _) = lstm.forward(&store, &batch, reverse, &mut reg).unwrap();
            for (i, seq) in seqs.iter().enumerate() {
                let span = batch.spans[i];
                let mut state = LstmState::zeros(4);
                for t in 0..span.len {
                    let r = if reverse { span.len - 1 - t } else { t };
                    let x = Tensor::vector(seq.row(r));
                    state = lstm_step(&x, &state, store.value(lstm.w_ih), store.value(lstm.w_hh), store.value(lstm.bias))
                        .unwrap();
                    let got = out.values.row(span.start + r);
                    for (a, b) in got.iter().zip(state.h.data()) {
                        assert!((a - b).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn forget_bias_initialized() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f32>::new();
        let lstm = Lstm::new(&mut store, "l", 2, 3, &mut rng);
        let b = store.value(lstm.bias).data();
        assert_eq!(&b[3..6], &[1.0, 1.0, 1.0]);
        assert!(b[..3].iter().chain(&b[6..]).all(|&v| v == 0.0));
    }

    #[test]
    fn variational_masks_repeat_per_sequence() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParamStore::<f64>::new();
        let lstm = Lstm::new(&mut store, "l", 2, 6, &mut rng);
        let batch = Ragged::single(rand_t(&mut rng, &[4, 2]));
        let mut reg = Regularizer {
            mode: Mode::Train,
            keep_prob: 0.5,
            variational: true,
            rng: &mut rng,
        };
        let (_, cache) = lstm.forward(&store, &batch, false, &mut reg).unwrap();
        let m = cache.masks.unwrap();
        assert_eq!(m.row(1), m.row(2));
        assert_eq!(m.row(2), m.row(3));
    }
}
