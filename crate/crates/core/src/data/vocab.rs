use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};

use super::Sentence;
use crate::error::{Error, Result};

pub const PAD_CHAR: &str = "<pad>";
pub const UNK_CHAR: &str = "<unk>";
pub const UNK_WORD: &str = "<unk>";

/// Bidirectional symbol ↔ id table.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocab {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_symbols(symbols: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut v = Vocab::default();
        for s in symbols {
            if v.index.contains_key(&s) {
                return Err(Error::Data(format!("duplicate vocabulary symbol {s:?}")));
            }
            v.index.insert(s.clone(), v.symbols.len());
            v.symbols.push(s);
        }
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn id(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, id: usize) -> &str {
        &self.symbols[id]
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    /// `id<TAB>symbol` per line.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (i, s) in self.symbols.iter().enumerate() {
            writeln!(w, "{i}\t{s}")?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(reader: R, source: &str) -> Result<Self> {
        let mut symbols = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::parse(source, i + 1, e.to_string()))?;
            let (id, sym) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(source, i + 1, "expected id<TAB>symbol"))?;
            if id.parse::<usize>().ok() != Some(i) {
                return Err(Error::parse(source, i + 1, format!("expected id {i}, found {id:?}")));
            }
            symbols.push(sym.to_string());
        }
        Vocab::from_symbols(symbols)
    }
}

/// Character, word and tag inventories built from the training split.
#[derive(Debug, Clone)]
pub struct Vocabularies {
    /// `<pad>` is id 0, `<unk>` id 1, then characters in sorted order.
    pub chars: Vocab,
    /// `<unk>` is id 0, then word forms in sorted order.
    pub words: Vocab,
    /// Every training tag exactly once, sorted.
    pub tags: Vocab,
    /// Char ids seen exactly once in training (candidates for UNK replacement).
    pub singleton_chars: BTreeSet<usize>,
    /// Word ids seen exactly once in training.
    pub singleton_words: BTreeSet<usize>,
}

impl Vocabularies {
    pub fn build(train: &[Sentence]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Data("cannot build vocabularies from an empty training set".into()));
        }
        let mut char_counts: BTreeMap<char, usize> = BTreeMap::new();
        let mut word_counts: BTreeMap<&str, usize> = BTreeMap::new();
        let mut tags: BTreeSet<&str> = BTreeSet::new();
        for s in train {
            for (w, t) in s.words.iter().zip(&s.tags) {
                *word_counts.entry(w).or_default() += 1;
                for c in w.chars() {
                    *char_counts.entry(c).or_default() += 1;
                }
                tags.insert(t);
            }
        }
        let chars = Vocab::from_symbols(
            [PAD_CHAR.to_string(), UNK_CHAR.to_string()]
                .into_iter()
                .chain(char_counts.keys().map(|c| c.to_string())),
        )?;
        let words = Vocab::from_symbols(
            std::iter::once(UNK_WORD.to_string()).chain(word_counts.keys().map(|w| w.to_string())),
        )?;
        let tags = Vocab::from_symbols(tags.into_iter().map(str::to_string))?;
        let singleton_chars = char_counts
            .iter()
            .filter(|(_, &n)| n == 1)
            .map(|(c, _)| chars.id(&c.to_string()).expect("present"))
            .collect();
        let singleton_words = word_counts
            .iter()
            .filter(|(_, &n)| n == 1)
            .map(|(w, _)| words.id(w).expect("present"))
            .collect();
        Ok(Vocabularies {
            chars,
            words,
            tags,
            singleton_chars,
            singleton_words,
        })
    }

    pub fn pad_char(&self) -> usize {
        0
    }

    pub fn unk_char(&self) -> usize {
        1
    }

    pub fn unk_word(&self) -> usize {
        0
    }

    pub fn char_ids(&self, word: &str) -> Vec<usize> {
        let mut buf = [0u8; 4];
        word.chars()
            .map(|c| self.chars.id(c.encode_utf8(&mut buf)).unwrap_or(self.unk_char()))
            .collect()
    }

    pub fn word_id(&self, word: &str) -> usize {
        self.words.id(word).unwrap_or(self.unk_word())
    }

    pub fn tag_id(&self, tag: &str) -> Option<usize> {
        self.tags.id(tag)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Vec<Sentence> {
        vec![
            Sentence::new(vec!["ab".into(), "ba".into()], vec!["X".into(), "Y".into()]).unwrap(),
            Sentence::new(vec!["ab".into(), "c".into()], vec!["X".into(), "Z".into()]).unwrap(),
        ]
    }

    #[test]
    fn tag_inventory_is_exactly_the_training_tags() {
        let v = Vocabularies::build(&toy()).unwrap();
        assert_eq!(v.tags.symbols(), &["X", "Y", "Z"]);
    }

    #[test]
    fn reserved_char_ids() {
        let v = Vocabularies::build(&toy()).unwrap();
        assert_eq!(v.chars.symbol(v.pad_char()), PAD_CHAR);
        assert_eq!(v.chars.symbol(v.unk_char()), UNK_CHAR);
        assert_ne!(v.pad_char(), v.unk_char());
        assert_eq!(v.chars.symbols()[2..], ["a", "b", "c"]);
        assert_eq!(v.char_ids("cq"), vec![4, 1]);
        assert_eq!(v.word_id("zzz"), v.unk_word());
    }

    #[test]
    fn singletons() {
        let v = Vocabularies::build(&toy()).unwrap();
        // "c" occurs once; "a" and "b" three times each
        assert_eq!(v.singleton_chars.iter().copied().collect::<Vec<_>>(), vec![4]);
        let ws: Vec<&str> = v.singleton_words.iter().map(|&i| v.words.symbol(i)).collect();
        assert_eq!(ws, vec!["ba", "c"]);
    }

    #[test]
    fn deterministic_ids() {
        let a = Vocabularies::build(&toy()).unwrap();
        let mut rev = toy();
        rev.reverse();
        let b = Vocabularies::build(&rev).unwrap();
        assert_eq!(a.chars, b.chars);
        assert_eq!(a.words, b.words);
        assert_eq!(a.tags, b.tags);
    }

    #[test]
    fn tsv_round_trip() {
        let v = Vocabularies::build(&toy()).unwrap();
        let mut buf = Vec::new();
        v.words.write_tsv(&mut buf).unwrap();
        assert_eq!(Vocab::read_tsv(buf.as_slice(), "buf").unwrap(), v.words);
    }

    #[test]
    fn empty_training_set() {
        assert!(Vocabularies::build(&[]).is_err());
    }
}
