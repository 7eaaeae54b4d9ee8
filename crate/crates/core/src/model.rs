//! Sentence-level tagger: word vectors → two-layer bidirectional LSTM →
//! (optional skip connection) → per-position softmax classifier.
//!
//! Tags are predicted independently per position given the whole sentence,
//! so decoding is a position-wise argmax.

use std::collections::HashMap;

use crate::data::{Sentence, Tagset, Vocabularies};
use crate::encoders::{gather_rows, scatter_rows, EncoderCache, EncoderConfig, EncoderKind, PretrainedWords, WordEncoder};
use crate::error::{Error, Result};
use crate::layers::{
    concat_cols, split_cols, Activation, DropoutMask, Linear, Lstm, LstmCache, Ragged, Regularizer, Span,
};
use crate::params::ParamStore;
use crate::tensor::{softmax_rows, softmax_xent_row, Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub context_layers: usize,
    /// Hidden units per direction.
    pub context_hidden: usize,
    pub skip_connections: bool,
    pub tagset: Tagset,
}

impl ModelConfig {
    pub fn new(kind: EncoderKind, tagset: Tagset) -> Self {
        ModelConfig {
            encoder: EncoderConfig::default_for(kind),
            context_layers: 2,
            context_hidden: 256,
            skip_connections: false,
            tagset,
        }
    }

    /// Width of the classifier input.
    pub fn classifier_input_dim(&self) -> usize {
        2 * self.context_hidden + if self.skip_connections { self.encoder.word_vector_dim() } else { 0 }
    }
}

/// Per-position probabilities over the tag inventory, `[N×K]`.
#[derive(Debug, Clone)]
pub struct TagDistribution<F> {
    pub probs: Tensor<F>,
}

impl<F: Scalar> TagDistribution<F> {
    pub fn len(&self) -> usize {
        self.probs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.rows() == 0
    }
}

/// Position-wise argmax; ties go to the lowest tag id.
pub fn predict_tags<F: Scalar>(dist: &TagDistribution<F>) -> Vec<usize> {
    (0..dist.len()).map(|n| argmax(dist.probs.row(n))).collect()
}

fn argmax<F: Scalar>(row: &[F]) -> usize {
    let mut best = 0;
    for (k, &p) in row.iter().enumerate() {
        if p > row[best] {
            best = k;
        }
    }
    best
}

/// `−Σ_n log p(gold_n)`.
pub fn sentence_loss<F: Scalar>(dist: &TagDistribution<F>, gold: &[usize]) -> Result<f64> {
    if gold.len() != dist.len() {
        return Err(Error::Data(format!(
            "{} gold tags for a sentence of length {}",
            gold.len(),
            dist.len()
        )));
    }
    let k = dist.probs.cols();
    gold.iter()
        .enumerate()
        .map(|(n, &g)| {
            if g >= k {
                Err(Error::Index { index: g, size: k })
            } else {
                Ok(-dist.probs.row(n)[g].as_f64().ln())
            }
        })
        .sum()
}

/// One bidirectional context layer; outputs `[fwd | bwd]` per position.
#[derive(Debug, Clone)]
pub struct BiLayer {
    pub fwd: Lstm,
    pub bwd: Lstm,
}

#[derive(Debug, Clone)]
pub struct Tagger {
    pub config: ModelConfig,
    pub vocab: Vocabularies,
    pub encoder: WordEncoder,
    pub context: Vec<BiLayer>,
    pub classifier: Linear,
}

struct ContextCache<F> {
    inputs: Vec<Ragged<F>>,
    masks: Vec<DropoutMask<F>>,
    caches: Vec<(LstmCache<F>, LstmCache<F>)>,
    top_mask: DropoutMask<F>,
}

/// Everything the backward pass needs from one batched forward pass.
pub struct ForwardPass<F> {
    /// `[total tokens × K]`, sentences back to back.
    pub logits: Tensor<F>,
    pub spans: Vec<Span>,
    classifier_input: Tensor<F>,
    context: ContextCache<F>,
    encoder: EncoderCache<F>,
    token_types: Vec<usize>,
    num_types: usize,
}

impl Tagger {
    pub fn new<F: Scalar>(
        config: ModelConfig,
        vocab: Vocabularies,
        pretrained: Option<&PretrainedWords>,
        rng: &mut dyn rand::RngCore,
    ) -> Result<(Tagger, ParamStore<F>)> {
        if config.context_layers == 0 || config.context_hidden == 0 {
            return Err(Error::config("context BLSTM needs at least one layer of positive width"));
        }
        if vocab.tags.is_empty() {
            return Err(Error::config("empty tag inventory"));
        }
        let mut store = ParamStore::new();
        let encoder = WordEncoder::new(config.encoder.clone(), &vocab, pretrained, &mut store, rng)?;
        let mut config = config;
        config.encoder = encoder.config.clone();
        let h = config.context_hidden;
        let mut din = encoder.output_dim();
        let context = (0..config.context_layers)
            .map(|l| {
                let layer = BiLayer {
                    fwd: Lstm::new(&mut store, &format!("context.{l}.fwd"), din, h, rng),
                    bwd: Lstm::new(&mut store, &format!("context.{l}.bwd"), din, h, rng),
                };
                din = 2 * h;
                layer
            })
            .collect();
        let classifier = Linear::new(
            &mut store,
            "classifier",
            config.classifier_input_dim(),
            vocab.tags.len(),
            Activation::None,
            0.0,
            rng,
        );
        Ok((
            Tagger {
                config,
                vocab,
                encoder,
                context,
                classifier,
            },
            store,
        ))
    }

    pub fn num_tags(&self) -> usize {
        self.vocab.tags.len()
    }

    /// Context BLSTM + classifier over precomputed word vectors.
    fn context_forward<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        v: &Ragged<F>,
        reg: &mut Regularizer<'_>,
    ) -> Result<(Tensor<F>, Tensor<F>, ContextCache<F>)> {
        if v.dim() != self.encoder.output_dim() {
            return Err(Error::config(format!(
                "word vectors of width {} but the model expects {}",
                v.dim(),
                self.encoder.output_dim()
            )));
        }
        let mut cache = ContextCache {
            inputs: Vec::with_capacity(self.context.len()),
            masks: Vec::with_capacity(self.context.len()),
            caches: Vec::with_capacity(self.context.len()),
            top_mask: DropoutMask::identity(),
        };
        let mut cur = v.clone();
        for (l, layer) in self.context.iter().enumerate() {
            let mask = if l > 0 {
                let (dropped, m) = reg.dropout(&cur.values)?;
                cur.values = dropped;
                m
            } else {
                DropoutMask::identity()
            };
            let (f, fc) = layer.fwd.forward(store, &cur, false, reg)?;
            let (b, bc) = layer.bwd.forward(store, &cur, true, reg)?;
            let out = Ragged::new(concat_cols(&f.values, &b.values)?, cur.spans.clone())?;
            cache.inputs.push(cur);
            cache.masks.push(mask);
            cache.caches.push((fc, bc));
            cur = out;
        }
        let (top, top_mask) = reg.dropout(&cur.values)?;
        cache.top_mask = top_mask;
        let classifier_input = if self.config.skip_connections {
            concat_cols(&top, &v.values)?
        } else {
            top
        };
        let logits = self.classifier.forward(store, &classifier_input)?;
        Ok((logits, classifier_input, cache))
    }

    /// Returns the gradient with respect to the word vectors.
    fn context_backward<F: Scalar>(
        &self,
        store: &mut ParamStore<F>,
        logits: &Tensor<F>,
        classifier_input: &Tensor<F>,
        cache: &ContextCache<F>,
        dlogits: Tensor<F>,
    ) -> Tensor<F> {
        let dcls = self.classifier.backward(store, classifier_input, logits, dlogits);
        let top_dim = 2 * self.config.context_hidden;
        let (mut grad, dskip) = if self.config.skip_connections {
            let (a, b) = split_cols(&dcls, top_dim);
            (a, Some(b))
        } else {
            (dcls, None)
        };
        cache.top_mask.backward(grad.data_mut());
        for (l, layer) in self.context.iter().enumerate().rev() {
            let (df, db) = split_cols(&grad, self.config.context_hidden);
            let x = &cache.inputs[l];
            let (fc, bc) = &cache.caches[l];
            let mut dx = layer.fwd.backward(store, x, fc, &df);
            dx.add_assign(&layer.bwd.backward(store, x, bc, &db));
            cache.masks[l].backward(dx.data_mut());
            grad = dx;
        }
        if let Some(ds) = dskip {
            grad.add_assign(&ds);
        }
        grad
    }

    /// Tag distribution for one sentence given its word vectors (eval mode).
    pub fn forward_vectors<F: Scalar>(&self, store: &ParamStore<F>, v: &[Tensor<F>]) -> Result<TagDistribution<F>> {
        if v.is_empty() {
            return Err(Error::EmptySequence);
        }
        let rows: Vec<&[F]> = v.iter().map(|t| t.data()).collect();
        let dim = v[0].len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::config("word vectors of differing width"));
        }
        let seq = Ragged::single(Tensor::stack_rows(&rows, dim)?);
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut reg = Regularizer::eval(&mut rng);
        let (logits, _, _) = self.context_forward(store, &seq, &mut reg)?;
        Ok(TagDistribution {
            probs: softmax_rows(&logits),
        })
    }

    /// Full forward pass over a batch of sentences.
    pub fn forward<F: Scalar, S: AsRef<str>>(
        &self,
        store: &ParamStore<F>,
        sentences: &[&[S]],
        reg: &mut Regularizer<'_>,
    ) -> Result<ForwardPass<F>> {
        let mut types: Vec<&str> = Vec::new();
        let mut type_ids: HashMap<&str, usize> = HashMap::new();
        let mut token_types = Vec::new();
        let mut spans = Vec::with_capacity(sentences.len());
        for s in sentences {
            if s.is_empty() {
                return Err(Error::EmptySequence);
            }
            spans.push(Span {
                start: token_types.len(),
                len: s.len(),
            });
            for w in s.iter() {
                let w = w.as_ref();
                let id = *type_ids.entry(w).or_insert_with(|| {
                    types.push(w);
                    types.len() - 1
                });
                token_types.push(id);
            }
        }
        let (word_vecs, encoder) = self.encoder.forward(store, &self.vocab, &types, reg)?;
        let v = Ragged::new(gather_rows(&word_vecs, &token_types), spans.clone())?;
        let (logits, classifier_input, context) = self.context_forward(store, &v, reg)?;
        Ok(ForwardPass {
            logits,
            spans,
            classifier_input,
            context,
            encoder,
            token_types,
            num_types: types.len(),
        })
    }

    /// Accumulates parameter gradients given `dlogits`.
    pub fn backward<F: Scalar>(&self, store: &mut ParamStore<F>, pass: &ForwardPass<F>, dlogits: Tensor<F>) {
        let dv = self.context_backward(store, &pass.logits, &pass.classifier_input, &pass.context, dlogits);
        let dtypes = scatter_rows(&dv, &pass.token_types, pass.num_types);
        self.encoder.backward(store, &pass.encoder, &dtypes);
    }

    /// Gold tag ids; every tag must be in the training inventory.
    pub fn gold_ids(&self, sentence: &Sentence) -> Result<Vec<usize>> {
        sentence
            .tags
            .iter()
            .map(|t| {
                self.vocab
                    .tag_id(t)
                    .ok_or_else(|| Error::Data(format!("tag {t:?} is not in the training inventory")))
            })
            .collect()
    }

    /// Per-sentence losses of one batched forward pass plus `dlogits`.
    fn losses<F: Scalar>(&self, pass: &ForwardPass<F>, gold: &[Vec<usize>]) -> Result<(Vec<f64>, Tensor<F>)> {
        let k = self.num_tags();
        let mut dlogits = Tensor::zeros(pass.logits.shape());
        let mut losses = Vec::with_capacity(pass.spans.len());
        for (span, g) in pass.spans.iter().zip(gold) {
            if g.len() != span.len {
                return Err(Error::Data(format!("{} gold tags for {} words", g.len(), span.len)));
            }
            let mut total = 0.0;
            for (i, &tag) in g.iter().enumerate() {
                if tag >= k {
                    return Err(Error::Index { index: tag, size: k });
                }
                let r = span.start + i;
                total += softmax_xent_row(pass.logits.row(r), tag, dlogits.row_mut(r)).as_f64();
                dlogits.row_mut(r)[tag] -= F::one();
            }
            losses.push(total);
        }
        Ok((losses, dlogits))
    }

    /// Loss of each sentence, computed in one batch.
    pub fn sentence_losses<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        sentences: &[&Sentence],
        reg: &mut Regularizer<'_>,
    ) -> Result<Vec<f64>> {
        let words: Vec<&[String]> = sentences.iter().map(|s| s.words.as_slice()).collect();
        let gold = sentences.iter().map(|s| self.gold_ids(s)).collect::<Result<Vec<_>>>()?;
        let pass = self.forward(store, &words, reg)?;
        Ok(self.losses(&pass, &gold)?.0)
    }

    /// Summed loss of the batch; accumulates its (unnormalized) gradient.
    pub fn loss_and_grad<F: Scalar>(
        &self,
        store: &mut ParamStore<F>,
        sentences: &[&Sentence],
        reg: &mut Regularizer<'_>,
    ) -> Result<f64> {
        let words: Vec<&[String]> = sentences.iter().map(|s| s.words.as_slice()).collect();
        let gold = sentences.iter().map(|s| self.gold_ids(s)).collect::<Result<Vec<_>>>()?;
        let pass = self.forward(store, &words, reg)?;
        let (losses, dlogits) = self.losses(&pass, &gold)?;
        self.backward(store, &pass, dlogits);
        Ok(losses.iter().sum())
    }

    /// Eval-mode tag distributions, one per sentence.
    pub fn distributions<F: Scalar, S: AsRef<str>>(
        &self,
        store: &ParamStore<F>,
        sentences: &[&[S]],
    ) -> Result<Vec<TagDistribution<F>>> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut reg = Regularizer::eval(&mut rng);
        let pass = self.forward(store, sentences, &mut reg)?;
        let probs = softmax_rows(&pass.logits);
        let k = probs.cols();
        Ok(pass
            .spans
            .iter()
            .map(|s| TagDistribution {
                probs: Tensor::from_vec(&[s.len, k], probs.data()[s.start * k..(s.start + s.len) * k].to_vec())
                    .expect("span within batch"),
            })
            .collect())
    }

    pub fn forward_sentence<F: Scalar, S: AsRef<str>>(
        &self,
        store: &ParamStore<F>,
        words: &[S],
    ) -> Result<TagDistribution<F>> {
        Ok(self.distributions(store, &[words])?.remove(0))
    }

    /// Predicted tag ids per sentence, in eval mode.
    pub fn predict<F: Scalar, S: AsRef<str>>(&self, store: &ParamStore<F>, sentences: &[&[S]]) -> Result<Vec<Vec<usize>>> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut reg = Regularizer::eval(&mut rng);
        let pass = self.forward(store, sentences, &mut reg)?;
        Ok(pass
            .spans
            .iter()
            .map(|s| (s.start..s.start + s.len).map(|r| argmax(pass.logits.row(r))).collect())
            .collect())
    }

    /// Predicted tag strings, processing `batch_size` sentences at a time.
    pub fn tag<F: Scalar, S: AsRef<str>>(
        &self,
        store: &ParamStore<F>,
        sentences: &[&[S]],
        batch_size: usize,
    ) -> Result<Vec<Vec<String>>> {
        let mut out = Vec::with_capacity(sentences.len());
        for chunk in sentences.chunks(batch_size.max(1)) {
            for ids in self.predict(store, chunk)? {
                out.push(ids.iter().map(|&i| self.vocab.tags.symbol(i).to_string()).collect());
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sentence;
    use crate::gradcheck::{grad_check, GradCheckOptions, Objective};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_data() -> Vec<Sentence> {
        let s = |w: &[&str], t: &[&str]| {
            Sentence::new(
                w.iter().map(|x| x.to_string()).collect(),
                t.iter().map(|x| x.to_string()).collect(),
            )
            .unwrap()
        };
        vec![
            s(&["the", "dogs", "ran"], &["D", "N", "V"]),
            s(&["a", "cat", "sat", "down"], &["D", "N", "V", "A"]),
        ]
    }

    fn tiny_config(kind: EncoderKind) -> ModelConfig {
        let mut cfg = ModelConfig::new(kind, Tagset::Pos);
        let e = &mut cfg.encoder;
        e.char_dim = 3;
        e.word_dim = 4;
        e.dnn_hidden = 4;
        e.max_word_len = 5;
        e.conv_filters = 3;
        e.conv_width = 2;
        e.highway_max_width = 3;
        e.highway_filters_per_width = 2;
        e.highway_filter_cap = 5;
        e.lstm_hidden = vec![3, 2];
        e.blstm_hidden = vec![2, 2];
        cfg.context_hidden = 3;
        cfg
    }

    fn tiny(kind: EncoderKind, skip: bool, seed: u64) -> (Tagger, ParamStore<f64>, Vec<Sentence>) {
        let data = toy_data();
        let vocab = Vocabularies::build(&data).unwrap();
        let mut cfg = tiny_config(kind);
        cfg.skip_connections = skip;
        let (t, p) = Tagger::new(cfg, vocab, None, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        (t, p, data)
    }

    fn rand_vectors(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Tensor<f64>> {
        (0..n)
            .map(|_| Tensor::from_vec(&[d], (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap())
            .collect()
    }

    #[test]
    fn single_word_sentence() {
        let (t, p, _) = tiny(EncoderKind::Lut, false, 0);
        let d = t.forward_sentence(&p, &["dogs"]).unwrap();
        assert_eq!(d.len(), 1);
        assert!((d.probs.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rows_sum_to_one() {
        let (t, p, _) = tiny(EncoderKind::Cnn, true, 1);
        let d = t.forward_sentence(&p, &["the", "cat", "zzz", "ran"]).unwrap();
        for n in 0..d.len() {
            let s: f64 = d.probs.row(n).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn predict_ties_and_one_hot() {
        let uniform = TagDistribution {
            probs: Tensor::<f64>::from_rows(&[&[0.25; 4]]),
        };
        assert_eq!(predict_tags(&uniform), vec![0]);
        let one_hot = TagDistribution {
            probs: Tensor::<f64>::from_rows(&[&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], &[1.0, 0.0, 0.0]]),
        };
        assert_eq!(predict_tags(&one_hot), vec![1, 2, 0]);
    }

    #[test]
    fn position_wise_equals_joint_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (n, k) = (3usize, 4usize);
            let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|_| rng.gen::<f64>()).collect()).collect();
            let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
            let dist = TagDistribution {
                probs: softmax_rows(&Tensor::<f64>::from_rows(&refs)),
            };
            let mut best = (f64::NEG_INFINITY, vec![]);
            for code in 0..k.pow(n as u32) {
                let seq: Vec<usize> = (0..n).map(|i| code / k.pow(i as u32) % k).collect();
                let p: f64 = seq.iter().enumerate().map(|(i, &t)| dist.probs.row(i)[t]).product();
                if p > best.0 {
                    best = (p, seq);
                }
            }
            assert_eq!(predict_tags(&dist), best.1);
        }
    }

    #[test]
    fn loss_cases() {
        let one_hot = TagDistribution {
            probs: Tensor::<f64>::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]),
        };
        assert_eq!(sentence_loss(&one_hot, &[0, 1]).unwrap(), 0.0);
        let uniform = TagDistribution {
            probs: Tensor::<f64>::filled(&[3, 5], 0.2),
        };
        assert!((sentence_loss(&uniform, &[0, 4, 2]).unwrap() - 3.0 * 5f64.ln()).abs() < 1e-12);
        assert!(matches!(sentence_loss(&uniform, &[0]), Err(Error::Data(_))));
        let probs = Tensor::<f64>::from_rows(&[&[0.1, 0.7, 0.2], &[0.5, 0.25, 0.25]]);
        let expected = -(0.7f64.ln() + 0.25f64.ln());
        let got = sentence_loss(&TagDistribution { probs }, &[1, 2]).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn skip_changes_classifier_width_by_word_dim() {
        let (a, _, _) = tiny(EncoderKind::Blstm, false, 0);
        let (b, _, _) = tiny(EncoderKind::Blstm, true, 0);
        assert_eq!(
            b.config.classifier_input_dim() - a.config.classifier_input_dim(),
            b.encoder.output_dim()
        );
    }

    #[test]
    fn wrong_vector_width_is_config_error() {
        let (t, p, _) = tiny(EncoderKind::Lut, false, 0);
        let v = vec![Tensor::<f64>::zeros(&[7])];
        assert!(matches!(t.forward_vectors(&p, &v), Err(Error::Config(_))));
    }

    /// Swap every column half `[a | b]` → `[b | a]` of a matrix.
    fn swap_halves(t: &Tensor<f64>, half: usize, offset: usize) -> Tensor<f64> {
        let mut out = t.clone();
        for r in 0..t.rows() {
            let row = t.row(r);
            let dst = out.row_mut(r);
            dst[offset..offset + half].copy_from_slice(&row[offset + half..offset + 2 * half]);
            dst[offset + half..offset + 2 * half].copy_from_slice(&row[offset..offset + half]);
        }
        out
    }

    #[test]
    fn reversal_symmetry() {
        let (t, p, _) = tiny(EncoderKind::Lut, false, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = rand_vectors(&mut rng, 5, t.encoder.output_dim());
        let d = t.forward_vectors(&p, &v).unwrap();

        // Mirror the network: swap directions and the matching input halves.
        let mut q = p.clone();
        let h = t.config.context_hidden;
        for (l, layer) in t.context.iter().enumerate() {
            for (a, b) in [
                (layer.fwd.w_ih, layer.bwd.w_ih),
                (layer.fwd.w_hh, layer.bwd.w_hh),
                (layer.fwd.bias, layer.bwd.bias),
            ] {
                let (va, vb) = (p.value(a).clone(), p.value(b).clone());
                let (va, vb) = if l > 0 && a == layer.fwd.w_ih {
                    (swap_halves(&va, h, 0), swap_halves(&vb, h, 0))
                } else {
                    (va, vb)
                };
                q.set_value(a, vb).unwrap();
                q.set_value(b, va).unwrap();
            }
        }
        let w = t.classifier.weight;
        q.set_value(w, swap_halves(p.value(w), h, 0)).unwrap();

        let rev: Vec<Tensor<f64>> = v.iter().rev().cloned().collect();
        let dr = t.forward_vectors(&q, &rev).unwrap();
        for n in 0..v.len() {
            for (a, b) in d.probs.row(n).iter().zip(dr.probs.row(v.len() - 1 - n)) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    struct Toy<'a> {
        tagger: &'a Tagger,
        data: &'a [Sentence],
    }

    impl Objective for Toy<'_> {
        fn loss(&self, params: &ParamStore<f64>) -> Result<f64> {
            let mut rng = rand::rngs::mock::StepRng::new(0, 0);
            let refs: Vec<&Sentence> = self.data.iter().collect();
            Ok(self
                .tagger
                .sentence_losses(params, &refs, &mut Regularizer::eval(&mut rng))?
                .iter()
                .sum())
        }

        fn loss_and_grad(&self, params: &mut ParamStore<f64>) -> Result<f64> {
            let mut rng = rand::rngs::mock::StepRng::new(0, 0);
            let refs: Vec<&Sentence> = self.data.iter().collect();
            self.tagger.loss_and_grad(params, &refs, &mut Regularizer::eval(&mut rng))
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for kind in [EncoderKind::Lut, EncoderKind::Cnn] {
            for skip in [false, true] {
                let (t, mut p, data) = tiny(kind, skip, 2);
                let mut rng = ChaCha8Rng::seed_from_u64(11);
                for id in p.ids().collect::<Vec<_>>() {
                    for w in p.value_mut(id).data_mut() {
                        *w = rng.gen_range(-0.5..0.5);
                    }
                }
                let r = grad_check(&Toy { tagger: &t, data: &data }, &mut p, &GradCheckOptions::default()).unwrap();
                assert!(r.max_rel_err < 1e-4, "{kind} skip={skip}: {r:?}");
            }
        }
    }

    #[test]
    fn batch_losses_match_single_sentences() {
        let (t, p, data) = tiny(EncoderKind::Blstm, true, 5);
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let refs: Vec<&Sentence> = data.iter().collect();
        let batch = t.sentence_losses(&p, &refs, &mut Regularizer::eval(&mut rng)).unwrap();
        for (s, b) in data.iter().zip(batch) {
            let alone = t.sentence_losses(&p, &[s], &mut Regularizer::eval(&mut rng)).unwrap()[0];
            assert!((alone - b).abs() <= 1e-12 * alone.abs().max(1.0));
        }
    }
}
