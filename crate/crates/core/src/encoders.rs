//! Word-vector producers: a word-level lookup table and five character-level
//! networks, optionally concatenated with pre-trained word embeddings.
//!
//! All encoders work on a list of distinct word forms and return one row per
//! form. Dropout is applied to the inputs of every layer above the first one
//! and to the character-level output vector, never to lookup-table rows.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::data::{EmbeddingTable, PretrainedMode, Vocab, Vocabularies};
use crate::error::{Error, Result};
use crate::layers::{
    concat_cols, split_cols, Activation, Conv1d, ConvCache, DropoutMask, Embedding, Highway, HighwayCache, Linear,
    LstmStack, LstmStackCache, MaxPool, Mode, Ragged, Regularizer, Span,
};
use crate::params::ParamStore;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EncoderKind {
    Lut,
    Dnn,
    Cnn,
    CnnHighway,
    Lstm,
    Blstm,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 6] = [
        EncoderKind::Lut,
        EncoderKind::Dnn,
        EncoderKind::Cnn,
        EncoderKind::CnnHighway,
        EncoderKind::Lstm,
        EncoderKind::Blstm,
    ];

    pub fn is_char_based(self) -> bool {
        self != EncoderKind::Lut
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::Lut => "lut",
            EncoderKind::Dnn => "dnn",
            EncoderKind::Cnn => "cnn",
            EncoderKind::CnnHighway => "cnnhighway",
            EncoderKind::Lstm => "lstm",
            EncoderKind::Blstm => "blstm",
        })
    }
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lut" => Ok(EncoderKind::Lut),
            "dnn" => Ok(EncoderKind::Dnn),
            "cnn" => Ok(EncoderKind::Cnn),
            "cnnhighway" | "cnn-highway" => Ok(EncoderKind::CnnHighway),
            "lstm" => Ok(EncoderKind::Lstm),
            "blstm" => Ok(EncoderKind::Blstm),
            other => Err(Error::config(format!("unknown encoder kind {other:?}"))),
        }
    }
}

/// Declarative description of the word-vector sub-network.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub char_dim: usize,
    /// Width of the trainable word lookup table (LUT kind without
    /// pre-trained vectors).
    pub word_dim: usize,
    pub dnn_hidden: usize,
    /// DNN input length; longer words keep their last characters.
    pub max_word_len: usize,
    pub conv_filters: usize,
    pub conv_width: usize,
    pub conv_layers: usize,
    /// CNNHighway uses filter widths `1..=highway_max_width`.
    pub highway_max_width: usize,
    pub highway_filters_per_width: usize,
    pub highway_filter_cap: usize,
    pub highway_layers: usize,
    pub lstm_hidden: Vec<usize>,
    pub blstm_hidden: Vec<usize>,
    pub pretrained: PretrainedMode,
    /// Dimension of the attached pre-trained vectors (0 when none).
    pub pretrained_dim: usize,
}

impl EncoderConfig {
    /// Best setups per architecture.
    pub fn default_for(kind: EncoderKind) -> Self {
        EncoderConfig {
            kind,
            char_dim: if kind == EncoderKind::CnnHighway { 15 } else { 128 },
            word_dim: 256,
            dnn_hidden: 256,
            max_word_len: 20,
            conv_filters: 256,
            conv_width: 5,
            conv_layers: 2,
            highway_max_width: 7,
            highway_filters_per_width: 50,
            highway_filter_cap: 200,
            highway_layers: 2,
            lstm_hidden: vec![1024, 256],
            blstm_hidden: vec![256, 256],
            pretrained: PretrainedMode::None,
            pretrained_dim: 0,
        }
    }

    /// Filter count of the CNNHighway branch with the given width.
    pub fn num_filters(&self, width: usize) -> Result<usize> {
        if width == 0 || width > self.highway_max_width {
            return Err(Error::config(format!(
                "filter width {width} outside 1..={}",
                self.highway_max_width
            )));
        }
        Ok(self.highway_filter_cap.min(self.highway_filters_per_width * width))
    }

    pub fn highway_widths(&self) -> std::ops::RangeInclusive<usize> {
        1..=self.highway_max_width
    }

    /// Output width of the character-level part (0 for LUT).
    pub fn char_output_dim(&self) -> usize {
        match self.kind {
            EncoderKind::Lut => 0,
            EncoderKind::Dnn => self.dnn_hidden,
            EncoderKind::Cnn => self.conv_filters,
            EncoderKind::CnnHighway => self
                .highway_widths()
                .map(|w| self.num_filters(w).expect("width in range"))
                .sum(),
            EncoderKind::Lstm => self.lstm_hidden.last().copied().unwrap_or(0),
            EncoderKind::Blstm => 2 * self.blstm_hidden.last().copied().unwrap_or(0),
        }
    }

    /// Output width of the word-level part (0 when there is none).
    pub fn word_part_dim(&self) -> usize {
        match (self.pretrained, self.kind) {
            (PretrainedMode::None, EncoderKind::Lut) => self.word_dim,
            (PretrainedMode::None, _) => 0,
            _ => self.pretrained_dim,
        }
    }

    pub fn word_vector_dim(&self) -> usize {
        self.char_output_dim() + self.word_part_dim()
    }

    /// Minimum character count a CNN input is padded to so that every
    /// stacked layer still produces at least one position.
    pub fn cnn_min_len(&self) -> usize {
        1 + self.conv_layers * (self.conv_width - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: usize| {
            if v == 0 {
                Err(Error::config(format!("{name} must be positive")))
            } else {
                Ok(())
            }
        };
        match self.kind {
            EncoderKind::Lut => {
                if self.pretrained == PretrainedMode::None {
                    positive("word_dim", self.word_dim)?;
                }
            }
            EncoderKind::Dnn => {
                positive("char_dim", self.char_dim)?;
                positive("dnn_hidden", self.dnn_hidden)?;
                positive("max_word_len", self.max_word_len)?;
            }
            EncoderKind::Cnn => {
                positive("char_dim", self.char_dim)?;
                positive("conv_filters", self.conv_filters)?;
                positive("conv_width", self.conv_width)?;
                positive("conv_layers", self.conv_layers)?;
            }
            EncoderKind::CnnHighway => {
                positive("char_dim", self.char_dim)?;
                positive("highway_max_width", self.highway_max_width)?;
                positive("highway_filters_per_width", self.highway_filters_per_width)?;
                positive("highway_filter_cap", self.highway_filter_cap)?;
            }
            EncoderKind::Lstm | EncoderKind::Blstm => {
                positive("char_dim", self.char_dim)?;
                let hidden = if self.kind == EncoderKind::Lstm {
                    &self.lstm_hidden
                } else {
                    &self.blstm_hidden
                };
                if hidden.is_empty() || hidden.contains(&0) {
                    return Err(Error::config("LSTM layer sizes must be nonempty and positive"));
                }
            }
        }
        if self.pretrained != PretrainedMode::None && self.pretrained_dim == 0 {
            return Err(Error::config("pre-trained mode set but no embeddings attached"));
        }
        Ok(())
    }
}

/// Concatenates the character part and the word part, in that order.
pub fn compose_word_vector<F: Scalar>(char_vec: Option<&Tensor<F>>, word_vec: Option<&Tensor<F>>) -> Result<Tensor<F>> {
    match (char_vec, word_vec) {
        (None, None) => Err(Error::config("word vector needs a character or a word part")),
        (Some(c), None) => Ok(c.clone()),
        (None, Some(w)) => Ok(w.clone()),
        (Some(c), Some(w)) => {
            if c.shape().len() == 1 && w.shape().len() == 1 {
                let mut data = c.data().to_vec();
                data.extend_from_slice(w.data());
                let n = data.len();
                Tensor::from_vec(&[n], data)
            } else {
                concat_cols(c, w)
            }
        }
    }
}

/// Pads `ids` on the right with `pad` up to `min_len`.
pub fn pad_to(ids: &[usize], min_len: usize, pad: usize) -> Vec<usize> {
    let mut out = ids.to_vec();
    if out.len() < min_len {
        out.resize(min_len, pad);
    }
    out
}

/// Fixed-length DNN window: the last `len` characters, right-padded.
pub fn dnn_window(ids: &[usize], len: usize, pad: usize) -> Vec<usize> {
    let tail = &ids[ids.len().saturating_sub(len)..];
    pad_to(tail, len, pad)
}

/// Pre-trained vectors attached to an encoder.
#[derive(Debug, Clone)]
pub struct PretrainedWords {
    /// Row `i` of the table is `words.symbol(i)`; the extra last row is UNK.
    pub words: Vocab,
    pub table: Tensor<f32>,
}

impl From<&EmbeddingTable> for PretrainedWords {
    fn from(t: &EmbeddingTable) -> Self {
        PretrainedWords {
            words: Vocab::from_symbols(t.words().iter().cloned()).expect("unique words"),
            table: t.matrix().clone(),
        }
    }
}

#[derive(Debug, Clone)]
enum CharNet {
    Dnn {
        emb: Embedding,
        hidden: Linear,
    },
    Cnn {
        emb: Embedding,
        convs: Vec<Conv1d>,
    },
    CnnHighway {
        emb: Embedding,
        branches: Vec<Conv1d>,
        highways: Vec<Highway>,
    },
    Lstm {
        emb: Embedding,
        stack: LstmStack,
    },
    Blstm {
        emb: Embedding,
        fwd: LstmStack,
        bwd: LstmStack,
    },
}

#[derive(Debug, Clone)]
struct WordTable {
    emb: Embedding,
    /// `Some` when rows follow a pre-trained vocabulary (UNK is the last row).
    pretrained: Option<Vocab>,
}

/// Maps word forms to word vectors.
#[derive(Debug, Clone)]
pub struct WordEncoder {
    pub config: EncoderConfig,
    chars: Option<CharNet>,
    words: Option<WordTable>,
}

enum CharCache<F> {
    Dnn {
        ids: Vec<usize>,
        x: Tensor<F>,
        y: Tensor<F>,
    },
    Cnn {
        ids: Vec<usize>,
        layers: Vec<ConvLayerCache<F>>,
        pool: MaxPool,
    },
    CnnHighway {
        branches: Vec<BranchCache<F>>,
        layers: Vec<(Tensor<F>, HighwayCache<F>, DropoutMask<F>)>,
    },
    Lstm {
        ids: Vec<usize>,
        stack: LstmStackCache<F>,
        rows: Vec<usize>,
        total: usize,
    },
    Blstm {
        ids: Vec<usize>,
        fwd: LstmStackCache<F>,
        bwd: LstmStackCache<F>,
        last: Vec<usize>,
        first: Vec<usize>,
        total: usize,
    },
}

/// Layer input (after dropout), conv cache, layer output, dropout mask.
type ConvLayerCache<F> = (Ragged<F>, ConvCache<F>, Tensor<F>, DropoutMask<F>);
/// Flattened padded char ids, conv cache, conv output, pooling argmax.
type BranchCache<F> = (Vec<usize>, ConvCache<F>, Tensor<F>, MaxPool);

pub struct EncoderCache<F> {
    chars: Option<(CharCache<F>, DropoutMask<F>)>,
    word_ids: Vec<usize>,
}

pub(crate) fn gather_rows<F: Scalar>(values: &Tensor<F>, rows: &[usize]) -> Tensor<F> {
    let d = values.cols();
    let mut data = Vec::with_capacity(rows.len() * d);
    for &r in rows {
        data.extend_from_slice(values.row(r));
    }
    Tensor::from_vec(&[rows.len(), d], data).expect("gather")
}

pub(crate) fn scatter_rows<F: Scalar>(grad: &Tensor<F>, rows: &[usize], total: usize) -> Tensor<F> {
    let d = grad.cols();
    let mut out = Tensor::zeros(&[total, d]);
    for (i, &r) in rows.iter().enumerate() {
        for (o, &g) in out.row_mut(r).iter_mut().zip(grad.row(i)) {
            *o += g;
        }
    }
    out
}

fn concat_many<F: Scalar>(parts: &[Tensor<F>]) -> Tensor<F> {
    let rows = parts[0].rows();
    let width: usize = parts.iter().map(|p| p.cols()).sum();
    let mut data = Vec::with_capacity(rows * width);
    for r in 0..rows {
        for p in parts {
            data.extend_from_slice(p.row(r));
        }
    }
    Tensor::from_vec(&[rows, width], data).expect("concat")
}

fn flatten(seqs: &[Vec<usize>]) -> (Vec<usize>, Vec<Span>) {
    let mut ids = Vec::new();
    let mut spans = Vec::with_capacity(seqs.len());
    for s in seqs {
        spans.push(Span {
            start: ids.len(),
            len: s.len(),
        });
        ids.extend_from_slice(s);
    }
    (ids, spans)
}

impl WordEncoder {
    pub fn new<F: Scalar>(
        mut config: EncoderConfig,
        vocab: &Vocabularies,
        pretrained: Option<&PretrainedWords>,
        store: &mut ParamStore<F>,
        rng: &mut dyn rand::RngCore,
    ) -> Result<Self> {
        if config.pretrained != PretrainedMode::None {
            let p = pretrained.ok_or_else(|| Error::config("pre-trained mode requires an embedding table"))?;
            config.pretrained_dim = p.table.cols();
        } else {
            config.pretrained_dim = 0;
        }
        config.validate()?;
        let nchars = vocab.chars.len();
        let cd = config.char_dim;
        let chars = match config.kind {
            EncoderKind::Lut => None,
            EncoderKind::Dnn => {
                let emb = Embedding::new(store, "char.emb", nchars, cd, rng);
                let hidden = Linear::new(
                    store,
                    "char.dnn",
                    config.max_word_len * cd,
                    config.dnn_hidden,
                    Activation::Tanh,
                    0.0,
                    rng,
                );
                Some(CharNet::Dnn { emb, hidden })
            }
            EncoderKind::Cnn => {
                let emb = Embedding::new(store, "char.emb", nchars, cd, rng);
                let mut din = cd;
                let convs = (0..config.conv_layers)
                    .map(|l| {
                        let c = Conv1d::new(
                            store,
                            &format!("char.conv.{l}"),
                            din,
                            config.conv_filters,
                            config.conv_width,
                            Activation::Relu,
                            rng,
                        );
                        din = config.conv_filters;
                        c
                    })
                    .collect();
                Some(CharNet::Cnn { emb, convs })
            }
            EncoderKind::CnnHighway => {
                let emb = Embedding::new(store, "char.emb", nchars, cd, rng);
                let branches = config
                    .highway_widths()
                    .map(|w| {
                        let nf = config.num_filters(w).expect("width in range");
                        Conv1d::new(store, &format!("char.branch.{w}"), cd, nf, w, Activation::Tanh, rng)
                    })
                    .collect();
                let dim = config.char_output_dim();
                let highways = (0..config.highway_layers)
                    .map(|l| Highway::new(store, &format!("char.highway.{l}"), dim, rng))
                    .collect();
                Some(CharNet::CnnHighway { emb, branches, highways })
            }
            EncoderKind::Lstm => {
                let emb = Embedding::new(store, "char.emb", nchars, cd, rng);
                let stack = LstmStack::new(store, "char.lstm", cd, &config.lstm_hidden, false, rng);
                Some(CharNet::Lstm { emb, stack })
            }
            EncoderKind::Blstm => {
                let emb = Embedding::new(store, "char.emb", nchars, cd, rng);
                let fwd = LstmStack::new(store, "char.blstm.fwd", cd, &config.blstm_hidden, false, rng);
                let bwd = LstmStack::new(store, "char.blstm.bwd", cd, &config.blstm_hidden, true, rng);
                Some(CharNet::Blstm { emb, fwd, bwd })
            }
        };
        let words = match (config.pretrained, pretrained) {
            (PretrainedMode::None, _) => (config.kind == EncoderKind::Lut).then(|| WordTable {
                emb: Embedding::new(store, "word.emb", vocab.words.len(), config.word_dim, rng),
                pretrained: None,
            }),
            (mode, Some(p)) => {
                if p.table.rows() != p.words.len() + 1 {
                    return Err(Error::dim("pre-trained table needs one row per word plus UNK"));
                }
                let emb = Embedding::from_table(store, "word.pretrained", p.table.cast())?;
                store.set_trainable(emb.table, mode == PretrainedMode::Finetuned);
                Some(WordTable {
                    emb,
                    pretrained: Some(p.words.clone()),
                })
            }
            (_, None) => unreachable!("checked above"),
        };
        Ok(WordEncoder { config, chars, words })
    }

    pub fn output_dim(&self) -> usize {
        self.config.word_vector_dim()
    }

    /// Vocabulary of the attached pre-trained vectors, if any.
    pub fn pretrained_words(&self) -> Option<&Vocab> {
        self.words.as_ref().and_then(|w| w.pretrained.as_ref())
    }

    /// The word lookup table parameter, if this encoder has one.
    pub fn word_table(&self) -> Option<crate::params::ParamId> {
        self.words.as_ref().map(|w| w.emb.table)
    }

    fn char_ids(&self, vocab: &Vocabularies, form: &str, reg: &mut Regularizer<'_>) -> Vec<usize> {
        let mut ids = vocab.char_ids(form);
        if reg.mode == Mode::Train {
            for id in &mut ids {
                if vocab.singleton_chars.contains(id) && reg.rng.gen_bool(0.5) {
                    *id = vocab.unk_char();
                }
            }
        }
        ids
    }

    fn word_id(&self, table: &WordTable, vocab: &Vocabularies, form: &str, reg: &mut Regularizer<'_>) -> usize {
        match &table.pretrained {
            Some(words) => words.id(form).unwrap_or(words.len()),
            None => {
                let id = vocab.word_id(form);
                if reg.mode == Mode::Train && vocab.singleton_words.contains(&id) && reg.rng.gen_bool(0.5) {
                    vocab.unk_word()
                } else {
                    id
                }
            }
        }
    }

    /// Encodes distinct forms; returns `[forms.len() × output_dim]`.
    pub fn forward<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        vocab: &Vocabularies,
        forms: &[&str],
        reg: &mut Regularizer<'_>,
    ) -> Result<(Tensor<F>, EncoderCache<F>)> {
        if forms.iter().any(|f| f.is_empty()) {
            return Err(Error::EmptySequence);
        }
        let char_part = match &self.chars {
            None => None,
            Some(net) => {
                let ids: Vec<Vec<usize>> = forms.iter().map(|f| self.char_ids(vocab, f, reg)).collect();
                let (y, cache) = self.char_forward(net, store, vocab, &ids, reg)?;
                let (y, mask) = reg.dropout(&y)?;
                Some((y, cache, mask))
            }
        };
        let mut word_ids = Vec::new();
        let word_part = match &self.words {
            None => None,
            Some(table) => {
                word_ids = forms.iter().map(|f| self.word_id(table, vocab, f, reg)).collect();
                Some(table.emb.forward(store, &word_ids)?)
            }
        };
        let out = compose_word_vector(char_part.as_ref().map(|c| &c.0), word_part.as_ref())?;
        Ok((
            out,
            EncoderCache {
                chars: char_part.map(|(_, c, m)| (c, m)),
                word_ids,
            },
        ))
    }

    fn char_forward<F: Scalar>(
        &self,
        net: &CharNet,
        store: &ParamStore<F>,
        vocab: &Vocabularies,
        words: &[Vec<usize>],
        reg: &mut Regularizer<'_>,
    ) -> Result<(Tensor<F>, CharCache<F>)> {
        let pad = vocab.pad_char();
        let cfg = &self.config;
        match net {
            CharNet::Dnn { emb, hidden } => {
                let windows: Vec<Vec<usize>> = words.iter().map(|w| dnn_window(w, cfg.max_word_len, pad)).collect();
                let ids: Vec<usize> = windows.concat();
                let x = emb
                    .forward(store, &ids)?
                    .reshape(&[words.len(), cfg.max_word_len * cfg.char_dim])?;
                let y = hidden.forward(store, &x)?;
                Ok((y.clone(), CharCache::Dnn { ids, x, y }))
            }
            CharNet::Cnn { emb, convs } => {
                let padded: Vec<Vec<usize>> = words.iter().map(|w| pad_to(w, cfg.cnn_min_len(), pad)).collect();
                let (ids, spans) = flatten(&padded);
                let mut cur = Ragged::new(emb.forward(store, &ids)?, spans)?;
                let mut layers = Vec::with_capacity(convs.len());
                for (l, conv) in convs.iter().enumerate() {
                    let mask = if l > 0 {
                        let (v, m) = reg.dropout(&cur.values)?;
                        cur.values = v;
                        m
                    } else {
                        DropoutMask::identity()
                    };
                    let (out, cache) = conv.forward(store, &cur)?;
                    layers.push((cur, cache, out.values.clone(), mask));
                    cur = out;
                }
                let (pooled, pool) = MaxPool::forward(&cur)?;
                Ok((pooled, CharCache::Cnn { ids, layers, pool }))
            }
            CharNet::CnnHighway { emb, branches, highways } => {
                let mut pooled = Vec::with_capacity(branches.len());
                let mut bcaches = Vec::with_capacity(branches.len());
                for conv in branches {
                    let padded: Vec<Vec<usize>> = words.iter().map(|w| pad_to(w, conv.width, pad)).collect();
                    let (ids, spans) = flatten(&padded);
                    let x = Ragged::new(emb.forward(store, &ids)?, spans)?;
                    let (out, cache) = conv.forward(store, &x)?;
                    let (p, pool) = MaxPool::forward(&out)?;
                    pooled.push(p);
                    bcaches.push((ids, cache, out.values, pool));
                }
                let mut cur = concat_many(&pooled);
                let mut layers = Vec::with_capacity(highways.len());
                for hw in highways {
                    let (x, mask) = reg.dropout(&cur)?;
                    let (y, cache) = hw.forward(store, &x)?;
                    layers.push((x, cache, mask));
                    cur = y;
                }
                Ok((
                    cur,
                    CharCache::CnnHighway {
                        branches: bcaches,
                        layers,
                    },
                ))
            }
            CharNet::Lstm { emb, stack } => {
                let (ids, spans) = flatten(words);
                let x = Ragged::new(emb.forward(store, &ids)?, spans)?;
                let (top, cache) = stack.forward(store, &x, reg)?;
                let rows: Vec<usize> = x.spans.iter().map(|s| s.start + s.len - 1).collect();
                Ok((
                    gather_rows(&top.values, &rows),
                    CharCache::Lstm {
                        ids,
                        stack: cache,
                        rows,
                        total: x.total(),
                    },
                ))
            }
            CharNet::Blstm { emb, fwd, bwd } => {
                let (ids, spans) = flatten(words);
                let x = Ragged::new(emb.forward(store, &ids)?, spans)?;
                let (ftop, fcache) = fwd.forward(store, &x, reg)?;
                let (btop, bcache) = bwd.forward(store, &x, reg)?;
                let last: Vec<usize> = x.spans.iter().map(|s| s.start + s.len - 1).collect();
                let first: Vec<usize> = x.spans.iter().map(|s| s.start).collect();
                let y = concat_cols(&gather_rows(&ftop.values, &last), &gather_rows(&btop.values, &first))?;
                Ok((
                    y,
                    CharCache::Blstm {
                        ids,
                        fwd: fcache,
                        bwd: bcache,
                        last,
                        first,
                        total: x.total(),
                    },
                ))
            }
        }
    }

    /// Accumulates parameter gradients from `dy` (`[forms × output_dim]`).
    pub fn backward<F: Scalar>(&self, store: &mut ParamStore<F>, cache: &EncoderCache<F>, dy: &Tensor<F>) {
        let cdim = self.config.char_output_dim();
        let (dchar, dword) = match (&self.chars, &self.words) {
            (Some(_), Some(_)) => {
                let (a, b) = split_cols(dy, cdim);
                (Some(a), Some(b))
            }
            (Some(_), None) => (Some(dy.clone()), None),
            (None, Some(_)) => (None, Some(dy.clone())),
            (None, None) => (None, None),
        };
        if let (Some(table), Some(dw)) = (&self.words, dword) {
            table.emb.backward(store, &cache.word_ids, &dw);
        }
        if let (Some(net), Some(mut dc), Some((cc, mask))) = (&self.chars, dchar, &cache.chars) {
            mask.backward(dc.data_mut());
            self.char_backward(net, store, cc, dc);
        }
    }

    fn char_backward<F: Scalar>(&self, net: &CharNet, store: &mut ParamStore<F>, cache: &CharCache<F>, dy: Tensor<F>) {
        match (net, cache) {
            (CharNet::Dnn { emb, hidden }, CharCache::Dnn { ids, x, y }) => {
                let dx = hidden.backward(store, x, y, dy);
                let dx = dx.reshape(&[ids.len(), self.config.char_dim]).expect("window size");
                emb.backward(store, ids, &dx);
            }
            (CharNet::Cnn { emb, convs }, CharCache::Cnn { ids, layers, pool }) => {
                let mut grad = pool.backward(&dy);
                for (l, conv) in convs.iter().enumerate().rev() {
                    let (_, ccache, out, mask) = &layers[l];
                    grad = conv.backward(store, ccache, out, grad);
                    mask.backward(grad.data_mut());
                }
                emb.backward(store, ids, &grad);
            }
            (CharNet::CnnHighway { emb, branches, highways }, CharCache::CnnHighway { branches: bc, layers }) => {
                let mut grad = dy;
                for (hw, (x, hcache, mask)) in highways.iter().zip(layers).rev() {
                    grad = hw.backward(store, x, hcache, &grad);
                    mask.backward(grad.data_mut());
                }
                let mut offset = 0;
                for (conv, (ids, ccache, out, pool)) in branches.iter().zip(bc) {
                    let (_, rest) = split_cols(&grad, offset);
                    let (dpool, _) = split_cols(&rest, conv.num_filters);
                    offset += conv.num_filters;
                    let dout = pool.backward(&dpool);
                    let dx = conv.backward(store, ccache, out, dout);
                    emb.backward(store, ids, &dx);
                }
            }
            (
                CharNet::Lstm { emb, stack },
                CharCache::Lstm {
                    ids,
                    stack: scache,
                    rows,
                    total,
                },
            ) => {
                let dtop = scatter_rows(&dy, rows, *total);
                let dx = stack.backward(store, scache, &dtop);
                emb.backward(store, ids, &dx);
            }
            (
                CharNet::Blstm { emb, fwd, bwd },
                CharCache::Blstm {
                    ids,
                    fwd: fcache,
                    bwd: bcache,
                    last,
                    first,
                    total,
                },
            ) => {
                let half = dy.cols() / 2;
                let (df, db) = split_cols(&dy, half);
                let mut dx = fwd.backward(store, fcache, &scatter_rows(&df, last, *total));
                dx.add_assign(&bwd.backward(store, bcache, &scatter_rows(&db, first, *total)));
                emb.backward(store, ids, &dx);
            }
            _ => unreachable!("cache built by the same network"),
        }
    }

    /// Convenience: the (eval-mode) vector of a single word.
    pub fn encode_word<F: Scalar>(&self, store: &ParamStore<F>, vocab: &Vocabularies, form: &str) -> Result<Tensor<F>> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut reg = Regularizer::eval(&mut rng);
        let (y, _) = self.forward(store, vocab, &[form], &mut reg)?;
        let n = y.len();
        y.reshape(&[n])
    }
}
