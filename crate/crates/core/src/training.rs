//! RMSProp training with a step learning-rate schedule, dropout, gradient
//! clipping and early stopping on development error.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{make_batches, PretrainedMode, Sentence, Tagset, Vocabularies};
use crate::encoders::{EncoderKind, PretrainedWords};
use crate::error::{Error, Result};
use crate::evaluation::{error_rate, EvalReport};
use crate::gradcheck::{grad_check, GradCheckOptions, GradCheckReport, Objective};
use crate::layers::{Mode, Regularizer};
use crate::model::{ModelConfig, Tagger};
use crate::params::ParamStore;
use crate::tensor::{lit, Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub rms_decay: f64,
    pub rms_eps: f64,
    pub batch_size: usize,
    pub keep_prob: f64,
    /// One recurrent dropout mask per sequence instead of per step.
    pub variational_dropout: bool,
    pub lr_halving_period: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub grad_clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 1e-3,
            rms_decay: 0.9,
            rms_eps: 1e-8,
            batch_size: 16,
            keep_prob: 0.7,
            variational_dropout: false,
            lr_halving_period: 10,
            max_epochs: 100,
            patience: 7,
            grad_clip_norm: 5.0,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must be positive")))
            }
        };
        pos("base_lr", self.base_lr > 0.0)?;
        pos("rms_eps", self.rms_eps > 0.0)?;
        pos("batch_size", self.batch_size > 0)?;
        pos("lr_halving_period", self.lr_halving_period > 0)?;
        pos("max_epochs", self.max_epochs > 0)?;
        pos("grad_clip_norm", self.grad_clip_norm > 0.0)?;
        if !(0.0..1.0).contains(&self.rms_decay) {
            return Err(Error::config("rms_decay must lie in [0, 1)"));
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(Error::config("keep_prob must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        lr_at_epoch_with_period(self.base_lr, epoch, self.lr_halving_period)
    }
}

/// `base_lr / 2^floor(epoch/10)`.
pub fn lr_at_epoch(base_lr: f64, epoch: usize) -> f64 {
    lr_at_epoch_with_period(base_lr, epoch, 10)
}

fn lr_at_epoch_with_period(base_lr: f64, epoch: usize, period: usize) -> f64 {
    base_lr / 2f64.powi((epoch / period) as i32)
}

/// One RMSProp step on every trainable parameter, then zeroes gradients:
/// `acc ← ρ·acc + (1−ρ)·g²`, `w ← w − lr·g/√(acc+eps)`.
pub fn rmsprop_update<F: Scalar>(params: &mut ParamStore<F>, lr: f64, rho: f64, eps: f64) {
    let (lr, rho, eps): (F, F, F) = (lit(lr), lit(rho), lit(eps));
    let one_minus = F::one() - rho;
    for i in 0..params.len() {
        if !params.trainable[i] {
            continue;
        }
        let g = params.grads[i].data();
        crate::tensor::debug_check_finite(&params.names[i], g);
        let acc = params.rms[i].data_mut();
        let w = params.values[i].data_mut();
        for ((w, a), &g) in w.iter_mut().zip(acc.iter_mut()).zip(g) {
            *a = rho * *a + one_minus * g * g;
            *w -= lr * g / (*a + eps).sqrt();
        }
    }
    params.zero_grads();
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean per-token training loss over the epoch.
    pub train_loss: f64,
    /// Development error rate in percent.
    pub dev_error: f64,
    pub seconds: f64,
}

impl EpochMetrics {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,dev_error,seconds";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{:.3}", self.epoch, self.train_loss, self.dev_error, self.seconds)
    }
}

/// Mutable optimizer bookkeeping between epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState {
    pub epoch: usize,
    pub current_lr: f64,
    pub best_dev_error: Option<f64>,
    pub best_epoch: Option<usize>,
    pub epochs_since_improvement: usize,
}

impl TrainingState {
    pub fn new(cfg: &TrainConfig) -> Self {
        TrainingState {
            epoch: 0,
            current_lr: cfg.base_lr,
            best_dev_error: None,
            best_epoch: None,
            epochs_since_improvement: 0,
        }
    }

    /// Records the dev error of the epoch just finished; returns whether it
    /// is a new best.
    pub fn record(&mut self, dev_error: f64) -> bool {
        let improved = self.best_dev_error.is_none_or(|b| dev_error < b);
        if improved {
            self.best_dev_error = Some(dev_error);
            self.best_epoch = Some(self.epoch);
            self.epochs_since_improvement = 0;
        } else {
            self.epochs_since_improvement += 1;
        }
        improved
    }

    pub fn should_stop(&self, cfg: &TrainConfig) -> bool {
        self.epochs_since_improvement > cfg.patience
    }
}

/// Drives optimization of one model; owns the training random stream.
pub struct Trainer<'a> {
    pub tagger: &'a Tagger,
    pub cfg: TrainConfig,
    pub state: TrainingState,
    rng: ChaCha8Rng,
}

impl<'a> Trainer<'a> {
    pub fn new(tagger: &'a Tagger, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        // stream 0 is used for initialization under the same seed
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        Ok(Trainer {
            tagger,
            state: TrainingState::new(&cfg),
            rng,
            cfg,
        })
    }

    /// One pass over `train`; returns the mean per-token loss.
    pub fn train_epoch<F: Scalar>(&mut self, params: &mut ParamStore<F>, train: &[Sentence]) -> Result<f64> {
        self.state.current_lr = self.cfg.lr_at_epoch(self.state.epoch);
        let batches = make_batches(train.len(), self.cfg.batch_size, &mut self.rng);
        let mut total_loss = 0.0;
        let mut total_tokens = 0usize;
        for batch in batches {
            let sentences: Vec<&Sentence> = batch.sentences.iter().map(|&i| &train[i]).collect();
            let tokens: usize = sentences.iter().map(|s| s.len()).sum();
            let mut reg = Regularizer {
                mode: Mode::Train,
                keep_prob: self.cfg.keep_prob,
                variational: self.cfg.variational_dropout,
                rng: &mut self.rng,
            };
            let loss = self.tagger.loss_and_grad(params, &sentences, &mut reg)?;
            if !loss.is_finite() {
                params.zero_grads();
                return Err(Error::Diverged {
                    epoch: self.state.epoch,
                    message: format!("training loss became {loss}"),
                });
            }
            params.scale_grads(lit(1.0 / tokens as f64));
            let norm = params.grad_norm();
            if !norm.is_finite() {
                params.zero_grads();
                return Err(Error::Diverged {
                    epoch: self.state.epoch,
                    message: format!("gradient norm became {norm}"),
                });
            }
            if norm > self.cfg.grad_clip_norm {
                params.scale_grads(lit(self.cfg.grad_clip_norm / norm));
            }
            rmsprop_update(params, self.state.current_lr, self.cfg.rms_decay, self.cfg.rms_eps);
            total_loss += loss;
            total_tokens += tokens;
        }
        Ok(total_loss / total_tokens.max(1) as f64)
    }
}

/// Random stream used for parameter initialization under `seed`.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Tags `data` in eval mode and scores it against the gold tags.
pub fn evaluate<F: Scalar>(tagger: &Tagger, params: &ParamStore<F>, data: &[Sentence]) -> Result<EvalReport> {
    let mut pred = Vec::with_capacity(data.len());
    for chunk in data.chunks(64) {
        let words: Vec<&[String]> = chunk.iter().map(|s| s.words.as_slice()).collect();
        pred.extend(tagger.predict(params, &words)?);
    }
    let gold: Vec<Vec<String>> = data.iter().map(|s| s.tags.clone()).collect();
    error_rate(tagger.config.tagset, &tagger.vocab.tags, &pred, &gold)
}

#[derive(Debug, Clone, PartialEq)]
pub enum StopReason {
    Patience,
    MaxEpochs,
    Diverged(String),
}

pub struct FitOutcome<F> {
    /// Parameters of the epoch with the lowest dev error.
    pub best: ParamStore<F>,
    pub best_epoch: Option<usize>,
    pub best_dev_error: Option<f64>,
    pub metrics: Vec<EpochMetrics>,
    pub stop: StopReason,
}

/// Trains until dev error stops improving. Each epoch's metrics are written
/// to `log` as CSV rows (the header is written first).
pub fn fit<F: Scalar>(
    tagger: &Tagger,
    params: &mut ParamStore<F>,
    train: &[Sentence],
    dev: &[Sentence],
    cfg: &TrainConfig,
    log: &mut dyn Write,
) -> Result<FitOutcome<F>> {
    if dev.is_empty() {
        return Err(Error::config("early stopping needs a nonempty development set"));
    }
    let io = |e: std::io::Error| Error::Io {
        path: "<metrics log>".into(),
        source: e,
    };
    writeln!(log, "{}", EpochMetrics::CSV_HEADER).map_err(io)?;
    let mut trainer = Trainer::new(tagger, cfg.clone())?;
    let mut best = params.clone();
    let mut metrics = Vec::new();
    let mut stop = StopReason::MaxEpochs;
    for epoch in 0..cfg.max_epochs {
        trainer.state.epoch = epoch;
        let start = Instant::now();
        let train_loss = match trainer.train_epoch(params, train) {
            Ok(l) => l,
            Err(Error::Diverged { epoch, message }) => {
                stop = StopReason::Diverged(format!("epoch {epoch}: {message}"));
                break;
            }
            Err(e) => return Err(e),
        };
        let dev_error = evaluate(tagger, params, dev)?.error_rate();
        let m = EpochMetrics {
            epoch,
            train_loss,
            dev_error,
            seconds: start.elapsed().as_secs_f64(),
        };
        writeln!(log, "{}", m.csv_row()).map_err(io)?;
        metrics.push(m);
        if trainer.state.record(dev_error) {
            best = params.clone();
        }
        if trainer.state.should_stop(cfg) {
            stop = StopReason::Patience;
            break;
        }
    }
    Ok(FitOutcome {
        best,
        best_epoch: trainer.state.best_epoch,
        best_dev_error: trainer.state.best_dev_error,
        metrics,
        stop,
    })
}

/// Loss of a fixed batch with dropout disabled, as a function of the
/// parameters.
pub struct ModelObjective<'a> {
    pub tagger: &'a Tagger,
    pub sentences: &'a [Sentence],
}

impl Objective for ModelObjective<'_> {
    fn loss(&self, params: &ParamStore<f64>) -> Result<f64> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let refs: Vec<&Sentence> = self.sentences.iter().collect();
        Ok(self
            .tagger
            .sentence_losses(params, &refs, &mut Regularizer::eval(&mut rng))?
            .iter()
            .sum())
    }

    fn loss_and_grad(&self, params: &mut ParamStore<f64>) -> Result<f64> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let refs: Vec<&Sentence> = self.sentences.iter().collect();
        self.tagger.loss_and_grad(params, &refs, &mut Regularizer::eval(&mut rng))
    }
}

/// Two short sentences covering short, long and repeated words.
pub fn toy_batch() -> Vec<Sentence> {
    let s = |w: &str, t: &str| {
        Sentence::new(
            w.split(' ').map(String::from).collect(),
            t.split(' ').map(String::from).collect(),
        )
        .expect("well-formed toy sentence")
    };
    vec![
        s("die katzen schliefen .", "ART NN VVFIN $."),
        s("a unaufhaltsamerweise katzen x", "ART ADV NN XY"),
    ]
}

/// Scaled-down architecture of `kind` small enough for finite differences.
pub fn toy_model_config(kind: EncoderKind, skip: bool) -> ModelConfig {
    let mut cfg = ModelConfig::new(kind, Tagset::Pos);
    let e = &mut cfg.encoder;
    e.char_dim = 3;
    e.word_dim = 4;
    e.dnn_hidden = 4;
    e.max_word_len = 6;
    e.conv_filters = 4;
    e.conv_width = 3;
    e.highway_max_width = 4;
    e.highway_filters_per_width = 2;
    e.highway_filter_cap = 6;
    e.lstm_hidden = vec![5, 3];
    e.blstm_hidden = vec![3, 3];
    cfg.context_layers = 2;
    cfg.context_hidden = 3;
    cfg.skip_connections = skip;
    cfg
}

/// Small random embeddings for the words of `sentences`.
pub fn toy_pretrained(sentences: &[Sentence], dim: usize, seed: u64) -> PretrainedWords {
    let mut words: Vec<String> = sentences.iter().flat_map(|s| s.words.iter().cloned()).collect();
    words.sort();
    words.dedup();
    words.pop();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = words.len() + 1;
    let table = Tensor::from_vec(&[n, dim], (0..n * dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
        .expect("shape");
    PretrainedWords {
        words: crate::data::Vocab::from_symbols(words).expect("deduplicated"),
        table,
    }
}

/// Finite-difference check of the full model loss on `batch` in 64-bit
/// precision with dropout off. All parameters are redrawn from U(−0.5, 0.5)
/// first so that no layer sits in a regime with vanishing gradients.
pub fn gradcheck_model(
    cfg: &ModelConfig,
    batch: &[Sentence],
    pretrained: Option<&PretrainedWords>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let vocab = Vocabularies::build(batch)?;
    let mut rng = init_rng(opts.seed);
    let (tagger, mut params) = Tagger::new::<f64>(cfg.clone(), vocab, pretrained, &mut rng)?;
    for id in params.ids().collect::<Vec<_>>() {
        for w in params.value_mut(id).data_mut() {
            *w = rng.gen_range(-0.5..0.5);
        }
    }
    grad_check(
        &ModelObjective {
            tagger: &tagger,
            sentences: batch,
        },
        &mut params,
        opts,
    )
}

/// The check over every encoder kind, with and without skip connections.
pub fn gradcheck_all(opts: &GradCheckOptions) -> Result<Vec<(EncoderKind, bool, GradCheckReport)>> {
    let batch = toy_batch();
    let mut out = Vec::new();
    for kind in EncoderKind::ALL {
        for skip in [false, true] {
            let report = gradcheck_model(&toy_model_config(kind, skip), &batch, None, opts)?;
            out.push((kind, skip, report));
        }
    }
    Ok(out)
}

/// Config variant with pre-trained vectors attached in `mode`.
pub fn with_pretrained(mut cfg: ModelConfig, mode: PretrainedMode) -> ModelConfig {
    cfg.encoder.pretrained = mode;
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(w: f64, g: f64) -> ParamStore<f64> {
        let mut p = ParamStore::new();
        let id = p.add("w", Tensor::vector(&[w]));
        p.grad_mut(id).data_mut()[0] = g;
        p
    }

    #[test]
    fn rmsprop_scalar_example() {
        let mut p = store(1.0, 1.0);
        rmsprop_update(&mut p, 0.1, 0.9, 1e-8);
        let id = p.ids().next().unwrap();
        assert!((p.rms(id).data()[0] - 0.1).abs() < 1e-15);
        let expected = 1.0 - 0.1 / (0.1f64 + 1e-8).sqrt();
        assert!((p.value(id).data()[0] - expected).abs() < 1e-12);
        assert!((p.value(id).data()[0] - 0.68377).abs() < 1e-5);
        assert_eq!(p.grad(id).data()[0], 0.0);
    }

    #[test]
    fn rmsprop_zero_gradient_and_shrinking_steps() {
        let mut p = store(0.3, 0.0);
        rmsprop_update(&mut p, 0.1, 0.9, 1e-8);
        let id = p.ids().next().unwrap();
        assert_eq!(p.value(id).data()[0], 0.3);

        let mut p = store(1.0, 1.0);
        rmsprop_update(&mut p, 0.1, 0.9, 1e-8);
        let w1 = p.value(id).data()[0];
        p.grad_mut(id).data_mut()[0] = 1.0;
        rmsprop_update(&mut p, 0.1, 0.9, 1e-8);
        let w2 = p.value(id).data()[0];
        assert!((w2 - w1).abs() < (w1 - 1.0).abs());
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let mut p = store(1.0, 1.0);
        let id = p.ids().next().unwrap();
        p.set_trainable(id, false);
        rmsprop_update(&mut p, 0.1, 0.9, 1e-8);
        assert_eq!(p.value(id).data()[0], 1.0);
    }

    #[test]
    fn schedule() {
        for e in 0..10 {
            assert_eq!(lr_at_epoch(1e-3, e), 1e-3);
        }
        assert_eq!(lr_at_epoch(1e-3, 10), 5e-4);
        assert_eq!(lr_at_epoch(1e-3, 25), 2.5e-4);
        assert_eq!(lr_at_epoch(1e-3, 30), 1.25e-4);
    }

    #[test]
    fn patience_zero_stops_after_first_non_improvement() {
        let cfg = TrainConfig {
            patience: 0,
            ..TrainConfig::default()
        };
        let mut s = TrainingState::new(&cfg);
        for (epoch, err) in [10.0, 8.0, 9.0].into_iter().enumerate() {
            s.epoch = epoch;
            s.record(err);
            if epoch < 2 {
                assert!(!s.should_stop(&cfg));
            }
        }
        assert!(s.should_stop(&cfg));
        assert_eq!(s.best_epoch, Some(1));
    }

    #[test]
    fn gradcheck_with_frozen_pretrained() {
        let batch = toy_batch();
        let pre = toy_pretrained(&batch, 3, 5);
        for mode in [PretrainedMode::Fixed, PretrainedMode::Finetuned] {
            let cfg = with_pretrained(toy_model_config(EncoderKind::Cnn, true), mode);
            let r = gradcheck_model(&cfg, &batch, Some(&pre), &GradCheckOptions::default()).unwrap();
            assert!(r.max_rel_err < 1e-4, "{mode}: {r:?}");
        }
    }

    #[test]
    fn fixed_rows_survive_training() {
        let batch = toy_batch();
        let pre = toy_pretrained(&batch, 3, 5);
        let cfg = with_pretrained(toy_model_config(EncoderKind::Lut, false), PretrainedMode::Fixed);
        let vocab = Vocabularies::build(&batch).unwrap();
        let (tagger, mut params) = Tagger::new::<f32>(cfg, vocab, Some(&pre), &mut init_rng(0)).unwrap();
        let table = tagger.encoder.word_table().unwrap();
        let before = params.value(table).clone();
        let mut trainer = Trainer::new(&tagger, TrainConfig::default()).unwrap();
        trainer.train_epoch(&mut params, &batch).unwrap();
        assert_eq!(params.value(table).data(), before.data());
    }

    #[test]
    fn overfits_toy_batch() {
        let batch = toy_batch();
        let vocab = Vocabularies::build(&batch).unwrap();
        let (tagger, mut params) =
            Tagger::new::<f32>(toy_model_config(EncoderKind::Blstm, false), vocab, None, &mut init_rng(0)).unwrap();
        let cfg = TrainConfig {
            base_lr: 0.01,
            keep_prob: 1.0,
            lr_halving_period: 1000,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(&tagger, cfg).unwrap();
        let first = trainer.train_epoch(&mut params, &batch).unwrap();
        let mut last = first;
        for e in 1..150 {
            trainer.state.epoch = e;
            last = trainer.train_epoch(&mut params, &batch).unwrap();
        }
        assert!(last < 0.2 * first, "{first} → {last}");
        assert_eq!(evaluate(&tagger, &params, &batch).unwrap().errors, 0);
    }

    #[test]
    fn deterministic_metrics() {
        let batch = toy_batch();
        let run = || {
            let vocab = Vocabularies::build(&batch).unwrap();
            let (tagger, mut params) =
                Tagger::new::<f32>(toy_model_config(EncoderKind::Dnn, false), vocab, None, &mut init_rng(3)).unwrap();
            let cfg = TrainConfig {
                max_epochs: 3,
                ..TrainConfig::default()
            };
            let mut log = Vec::new();
            let out = fit(&tagger, &mut params, &batch, &batch, &cfg, &mut log).unwrap();
            (out.metrics.iter().map(|m| (m.train_loss, m.dev_error)).collect::<Vec<_>>(), params)
        };
        let (a, pa) = run();
        let (b, pb) = run();
        assert_eq!(a, b);
        for id in pa.ids() {
            assert_eq!(pa.value(id).data(), pb.value(id).data());
        }
    }

    #[test]
    fn empty_dev_is_rejected() {
        let batch = toy_batch();
        let vocab = Vocabularies::build(&batch).unwrap();
        let (tagger, mut params) =
            Tagger::new::<f32>(toy_model_config(EncoderKind::Lut, false), vocab, None, &mut init_rng(3)).unwrap();
        let r = fit(&tagger, &mut params, &batch, &[], &TrainConfig::default(), &mut std::io::sink());
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
