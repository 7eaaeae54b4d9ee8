//! Tab-separated corpus format: one token per line as
//! `form<TAB>POS<TAB>MORPH`, sentences separated by a blank line. A MORPH
//! value of `_` means the token carries no morphological features.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tagset {
    Pos,
    Morph,
    PosMorph,
}

impl Tagset {
    pub const ALL: [Tagset; 3] = [Tagset::Pos, Tagset::Morph, Tagset::PosMorph];

    pub fn project(self, pos: &str, morph: &str) -> String {
        match self {
            Tagset::Pos => pos.to_string(),
            Tagset::Morph => morph.to_string(),
            Tagset::PosMorph => format!("{pos}|{morph}"),
        }
    }

    /// Recovers the `(POS, MORPH)` columns a projected tag came from, with
    /// `_` for the column the tag set does not carry.
    fn unproject(self, tag: &str) -> (&str, &str) {
        match self {
            Tagset::Pos => (tag, "_"),
            Tagset::Morph => ("_", tag),
            Tagset::PosMorph => tag.split_once('|').unwrap_or((tag, "_")),
        }
    }
}

impl fmt::Display for Tagset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tagset::Pos => "POS",
            Tagset::Morph => "MORPH",
            Tagset::PosMorph => "POSMORPH",
        })
    }
}

impl FromStr for Tagset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "POS" => Ok(Tagset::Pos),
            "MORPH" => Ok(Tagset::Morph),
            "POSMORPH" => Ok(Tagset::PosMorph),
            _ => Err(Error::config(format!(
                "undeclared tag set {s:?} (expected POS, MORPH or POSMORPH)"
            ))),
        }
    }
}

/// One token as it appears in the corpus file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedToken {
    pub form: String,
    pub pos: String,
    pub morph: String,
}

/// Lowercased words with their gold tags under one tag set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub words: Vec<String>,
    pub tags: Vec<String>,
}

impl Sentence {
    pub fn new(words: Vec<String>, tags: Vec<String>) -> Result<Self> {
        if words.is_empty() || words.len() != tags.len() {
            return Err(Error::Data(format!(
                "sentence with {} words and {} tags",
                words.len(),
                tags.len()
            )));
        }
        Ok(Sentence { words, tags })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn from_tokens(tokens: &[TaggedToken], tagset: Tagset) -> Self {
        Sentence {
            words: tokens.iter().map(|t| t.form.to_lowercase()).collect(),
            tags: tokens.iter().map(|t| tagset.project(&t.pos, &t.morph)).collect(),
        }
    }
}

/// Reads raw tokens, keeping the original casing.
pub fn read_tokens<R: BufRead>(reader: R, source: &str) -> Result<Vec<Vec<TaggedToken>>> {
    let mut sentences = Vec::new();
    let mut current = Vec::new();
    let mut pending_blank: Option<usize> = None;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::parse(source, lineno, e.to_string()))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            if current.is_empty() {
                pending_blank.get_or_insert(lineno);
            } else {
                sentences.push(std::mem::take(&mut current));
            }
            continue;
        }
        if let Some(blank) = pending_blank.take() {
            return Err(Error::parse(source, blank, "empty sentence"));
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                source,
                lineno,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        if fields.iter().any(|f| f.is_empty() || f.contains(' ')) {
            return Err(Error::parse(source, lineno, "empty field or embedded space"));
        }
        current.push(TaggedToken {
            form: fields[0].to_string(),
            pos: fields[1].to_string(),
            morph: fields[2].to_string(),
        });
    }
    if !current.is_empty() {
        sentences.push(current);
    }
    Ok(sentences)
}

/// Reads sentences projected onto `tagset`, lowercasing all forms.
pub fn read_corpus<R: BufRead>(reader: R, tagset: Tagset, source: &str) -> Result<Vec<Sentence>> {
    Ok(read_tokens(reader, source)?
        .iter()
        .map(|toks| Sentence::from_tokens(toks, tagset))
        .collect())
}

pub fn load_corpus(path: impl AsRef<Path>, tagset: Tagset) -> Result<Vec<Sentence>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file), tagset, &path.display().to_string())
}

pub fn write_tokens<W: Write>(mut w: W, sentences: &[Vec<TaggedToken>]) -> std::io::Result<()> {
    for s in sentences {
        for t in s {
            writeln!(w, "{}\t{}\t{}", t.form, t.pos, t.morph)?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Writes projected sentences back in corpus format; columns the tag set
/// does not carry are written as `_`.
pub fn write_corpus<W: Write>(mut w: W, sentences: &[Sentence], tagset: Tagset) -> std::io::Result<()> {
    for s in sentences {
        for (word, tag) in s.words.iter().zip(&s.tags) {
            let (pos, morph) = tagset.unproject(tag);
            writeln!(w, "{word}\t{pos}\t{morph}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}
