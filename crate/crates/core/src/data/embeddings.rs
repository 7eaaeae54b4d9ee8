//! Pre-trained word vectors in word2vec text format: a `V d` header line,
//! then `word v1 … vd` per line.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PretrainedMode {
    None,
    Fixed,
    Finetuned,
}

impl fmt::Display for PretrainedMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PretrainedMode::None => "none",
            PretrainedMode::Fixed => "fixed",
            PretrainedMode::Finetuned => "finetuned",
        })
    }
}

impl FromStr for PretrainedMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PretrainedMode::None),
            "fixed" => Ok(PretrainedMode::Fixed),
            "finetuned" => Ok(PretrainedMode::Finetuned),
            other => Err(Error::config(format!("unknown pretrained mode {other:?}"))),
        }
    }
}

/// Loaded vectors. Row `len()` (one past the last word) is the UNK vector,
/// the mean of all loaded rows.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    words: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Tensor<f32>,
    pub mode: PretrainedMode,
    /// Non-fatal problems found while loading (duplicate words).
    pub warnings: Vec<String>,
}

impl EmbeddingTable {
    /// Builds a table from words and a `[V×d]` matrix; appends the mean row.
    pub fn new(words: Vec<String>, vectors: Tensor<f32>, mode: PretrainedMode) -> Result<Self> {
        if vectors.shape().len() != 2 || vectors.rows() != words.len() {
            return Err(Error::dim("embedding rows must match word count"));
        }
        let dim = vectors.cols();
        let mut mean = vec![0f64; dim];
        for r in 0..vectors.rows() {
            for (m, &v) in mean.iter_mut().zip(vectors.row(r)) {
                *m += v as f64;
            }
        }
        let n = vectors.rows().max(1) as f64;
        let mut data = vectors.into_vec();
        data.extend(mean.iter().map(|&m| (m / n) as f32));
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Ok(EmbeddingTable {
            vectors: Tensor::from_vec(&[words.len() + 1, dim], data)?,
            words,
            index,
            mode,
            warnings: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    /// Number of loaded words (excluding the UNK row).
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn unk_row(&self) -> usize {
        self.words.len()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Row for `word`, falling back to the UNK row.
    pub fn row_of(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(self.unk_row())
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn vector(&self, word: &str) -> &[f32] {
        self.vectors.row(self.row_of(word))
    }

    /// Full `[(V+1)×d]` matrix including the UNK row.
    pub fn matrix(&self) -> &Tensor<f32> {
        &self.vectors
    }
}

/// Parses word2vec text format. Words are lowercased to match the corpus
/// normalization; if two entries collide, the first one wins.
pub fn read_embeddings<R: BufRead>(reader: R, mode: PretrainedMode, source: &str) -> Result<EmbeddingTable> {
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(source, 1, "missing header"))?;
    let header = header.map_err(|e| Error::parse(source, 1, e.to_string()))?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    let (count, dim) = match dims.as_slice() {
        [v, d] => (
            v.parse::<usize>()
                .map_err(|_| Error::parse(source, 1, format!("bad vocabulary size {v:?}")))?,
            d.parse::<usize>()
                .map_err(|_| Error::parse(source, 1, format!("bad dimension {d:?}")))?,
        ),
        _ => return Err(Error::parse(source, 1, "header must be \"<count> <dim>\"")),
    };
    if dim == 0 {
        return Err(Error::parse(source, 1, "dimension must be positive"));
    }

    let mut words = Vec::with_capacity(count);
    let mut seen = HashMap::new();
    let mut data = Vec::with_capacity(count * dim);
    let mut warnings = Vec::new();
    let mut entries = 0;
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::parse(source, lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let word = parts.next().expect("non-empty line").to_lowercase();
        let values: Vec<f32> = parts
            .map(|p| {
                p.parse::<f32>()
                    .map_err(|_| Error::parse(source, lineno, format!("bad number {p:?}")))
            })
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(Error::parse(
                source,
                lineno,
                format!("expected {dim} values, found {}", values.len()),
            ));
        }
        entries += 1;
        if seen.contains_key(&word) {
            warnings.push(format!("{source}:{lineno}: duplicate word {word:?} ignored"));
            continue;
        }
        seen.insert(word.clone(), ());
        words.push(word);
        data.extend(values);
    }
    if entries != count {
        return Err(Error::parse(
            source,
            1,
            format!("header declares {count} vectors, file has {entries}"),
        ));
    }
    let n = words.len();
    let mut table = EmbeddingTable::new(words, Tensor::from_vec(&[n, dim], data)?, mode)?;
    table.warnings = warnings;
    Ok(table)
}

pub fn load_embeddings(path: impl AsRef<Path>, mode: PretrainedMode) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(BufReader::new(file), mode, &path.display().to_string())
}
