//! Generated morphological corpus for desk-scale experiments.
//!
//! Words are built agglutinatively: a CV-syllable stem, a class marker
//! (none for nouns, `ys` for adjectives, `x` for verbs, `q` for adverbs)
//! and inflectional suffixes. There are exactly 40 POSMORPH tags:
//!
//! * NOUN, ADJ, DET: case {nom, acc, dat, gen} × number {sg, pl}
//! * VERB: person {1, 2, 3} × number × tense {pres, past}
//! * ADV, PREP, CONJ, PUNCT without features
//!
//! Every surface form determines its tag, so a character model can reach
//! zero error, while a word-level model has to guess on unseen forms from
//! context alone. Dev and test draw open-class stems from a pool disjoint
//! from training with probability `fresh_stem_prob`.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EmbeddingTable, PretrainedMode, TaggedToken};
use crate::tensor::Tensor;

const CONSONANTS: &[char] = &['b', 'd', 'f', 'g', 'k', 'm', 'n', 'p', 'r', 's', 't', 'v', 'z'];
const VOWELS: &[char] = &['a', 'e', 'i', 'o', 'u'];
const CASES: [&str; 4] = ["nom", "acc", "dat", "gen"];
const CASE_SUFFIX: [&str; 4] = ["a", "u", "e", "in"];
const NUMBERS: [&str; 2] = ["sg", "pl"];
const NUMBER_SUFFIX: [&str; 2] = ["", "l"];
const TENSES: [&str; 2] = ["pres", "past"];
const TENSE_SUFFIX: [&str; 2] = ["", "th"];
// indexed by person-1, then number
const AGREEMENT_SUFFIX: [[&str; 2]; 3] = [["m", "mz"], ["s", "sz"], ["t", "nt"]];
const PREPOSITIONS: &[&str] = &["an", "ob", "zu", "mit", "vor"];
const CONJUNCTIONS: &[&str] = &["und", "oder", "aber"];
const PUNCTUATION: &[&str] = &[".", "!", "?"];

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub train_sentences: usize,
    pub dev_sentences: usize,
    pub test_sentences: usize,
    /// Probability that a dev/test open-class word uses an unseen stem.
    pub fresh_stem_prob: f64,
    /// Stems per open class in the training pool.
    pub stems_per_class: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            train_sentences: 500,
            dev_sentences: 100,
            test_sentences: 200,
            fresh_stem_prob: 0.8,
            stems_per_class: 120,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub train: Vec<Vec<TaggedToken>>,
    pub dev: Vec<Vec<TaggedToken>>,
    pub test: Vec<Vec<TaggedToken>>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Class {
    Noun,
    Adj,
    Verb,
    Adv,
}

const CLASSES: [Class; 4] = [Class::Noun, Class::Adj, Class::Verb, Class::Adv];

struct StemPools {
    seen: Vec<Vec<String>>,
    fresh: Vec<Vec<String>>,
}

fn random_stem(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.gen_range(2..=3);
    let mut s = String::new();
    for _ in 0..syllables {
        s.push(*CONSONANTS.choose(rng).expect("nonempty"));
        s.push(*VOWELS.choose(rng).expect("nonempty"));
    }
    s
}

impl StemPools {
    fn new(per_class: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut used = BTreeSet::new();
        let mut draw = |rng: &mut ChaCha8Rng| loop {
            let s = random_stem(rng);
            if used.insert(s.clone()) {
                return s;
            }
        };
        let mut seen = Vec::new();
        let mut fresh = Vec::new();
        for _ in CLASSES {
            seen.push((0..per_class).map(|_| draw(rng)).collect());
            fresh.push((0..per_class).map(|_| draw(rng)).collect());
        }
        StemPools { seen, fresh }
    }

    fn stem(&self, class: Class, fresh_prob: f64, rng: &mut ChaCha8Rng) -> String {
        let c = CLASSES.iter().position(|&k| k == class).expect("known class");
        let pool = if fresh_prob > 0.0 && rng.gen_bool(fresh_prob) {
            &self.fresh[c]
        } else {
            &self.seen[c]
        };
        pool.choose(rng).expect("nonempty pool").clone()
    }
}

fn token(form: String, pos: &str, morph: String) -> TaggedToken {
    TaggedToken {
        form,
        pos: pos.to_string(),
        morph,
    }
}

fn nominal_morph(case: usize, num: usize) -> String {
    format!("case={}|num={}", CASES[case], NUMBERS[num])
}

struct Generator<'a> {
    pools: &'a StemPools,
    fresh_prob: f64,
    rng: ChaCha8Rng,
}

impl Generator<'_> {
    fn noun_phrase(&mut self, case: usize, num: usize, out: &mut Vec<TaggedToken>, depth: usize) {
        let inflection = format!("{}{}", NUMBER_SUFFIX[num], CASE_SUFFIX[case]);
        if self.rng.gen_bool(0.6) {
            out.push(token(format!("d{inflection}"), "DET", nominal_morph(case, num)));
        }
        if self.rng.gen_bool(0.5) {
            let stem = self.pools.stem(Class::Adj, self.fresh_prob, &mut self.rng);
            out.push(token(format!("{stem}ys{inflection}"), "ADJ", nominal_morph(case, num)));
        }
        let stem = self.pools.stem(Class::Noun, self.fresh_prob, &mut self.rng);
        out.push(token(format!("{stem}{inflection}"), "NOUN", nominal_morph(case, num)));
        if depth == 0 && self.rng.gen_bool(0.2) {
            let n = self.rng.gen_range(0..2);
            self.noun_phrase(3, n, out, depth + 1);
        }
    }

    fn clause(&mut self, out: &mut Vec<TaggedToken>) {
        let person = self.rng.gen_range(1..=3);
        let num = self.rng.gen_range(0..2);
        if person == 3 {
            self.noun_phrase(0, num, out, 0);
        }
        let tense = self.rng.gen_range(0..2);
        let stem = self.pools.stem(Class::Verb, self.fresh_prob, &mut self.rng);
        out.push(token(
            format!("{stem}x{}{}", TENSE_SUFFIX[tense], AGREEMENT_SUFFIX[person - 1][num]),
            "VERB",
            format!("person={person}|num={}|tense={}", NUMBERS[num], TENSES[tense]),
        ));
        if self.rng.gen_bool(0.7) {
            let case = self.rng.gen_range(1..3);
            let n = self.rng.gen_range(0..2);
            self.noun_phrase(case, n, out, 0);
        }
        if self.rng.gen_bool(0.35) {
            out.push(token(
                PREPOSITIONS.choose(&mut self.rng).expect("nonempty").to_string(),
                "PREP",
                "_".into(),
            ));
            let n = self.rng.gen_range(0..2);
            self.noun_phrase(2, n, out, 0);
        }
        if self.rng.gen_bool(0.3) {
            let stem = self.pools.stem(Class::Adv, self.fresh_prob, &mut self.rng);
            out.push(token(format!("{stem}q"), "ADV", "_".into()));
        }
    }

    fn sentence(&mut self) -> Vec<TaggedToken> {
        let mut out = Vec::new();
        self.clause(&mut out);
        if self.rng.gen_bool(0.2) {
            out.push(token(
                CONJUNCTIONS.choose(&mut self.rng).expect("nonempty").to_string(),
                "CONJ",
                "_".into(),
            ));
            self.clause(&mut out);
        }
        out.push(token(
            PUNCTUATION.choose(&mut self.rng).expect("nonempty").to_string(),
            "PUNCT",
            "_".into(),
        ));
        out
    }
}

/// All 40 `(POS, MORPH)` pairs the grammar can emit.
pub fn tag_inventory() -> Vec<(String, String)> {
    let mut tags = Vec::new();
    for pos in ["NOUN", "ADJ", "DET"] {
        for case in 0..4 {
            for num in 0..2 {
                tags.push((pos.to_string(), nominal_morph(case, num)));
            }
        }
    }
    for person in 1..=3 {
        for num in NUMBERS {
            for tense in TENSES {
                tags.push(("VERB".to_string(), format!("person={person}|num={num}|tense={tense}")));
            }
        }
    }
    for pos in ["ADV", "PREP", "CONJ", "PUNCT"] {
        tags.push((pos.to_string(), "_".to_string()));
    }
    tags
}

pub fn generate(cfg: &SyntheticConfig) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pools = StemPools::new(cfg.stems_per_class, &mut rng);
    let split = |n: usize, fresh_prob: f64, stream: u64| {
        let mut g = Generator {
            pools: &pools,
            fresh_prob,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(31).wrapping_add(stream)),
        };
        (0..n).map(|_| g.sentence()).collect::<Vec<_>>()
    };
    SyntheticCorpus {
        train: split(cfg.train_sentences, 0.0, 1),
        dev: split(cfg.dev_sentences, cfg.fresh_stem_prob, 2),
        test: split(cfg.test_sentences, cfg.fresh_stem_prob, 3),
    }
}

/// Word vectors standing in for embeddings trained on a large unlabeled
/// corpus: every form in `sentences` gets a fixed random code for its tag
/// plus noise, so the vectors carry (noisy) grammatical information.
pub fn embeddings(sentences: &[&[TaggedToken]], dim: usize, noise: f64, seed: u64) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inventory = tag_inventory();
    let codes: Vec<Vec<f64>> = inventory
        .iter()
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut words = BTreeSet::new();
    let mut entries = Vec::new();
    for tok in sentences.iter().flat_map(|s| s.iter()) {
        let form = tok.form.to_lowercase();
        if words.insert(form.clone()) {
            let tag = inventory
                .iter()
                .position(|(p, m)| *p == tok.pos && *m == tok.morph)
                .unwrap_or(0);
            entries.push((form, tag));
        }
    }
    let mut data = Vec::with_capacity(entries.len() * dim);
    for (_, tag) in &entries {
        for &c in &codes[*tag] {
            data.push((c + noise * rng.gen_range(-1.0..1.0)) as f32);
        }
    }
    let n = entries.len();
    EmbeddingTable::new(
        entries.into_iter().map(|(w, _)| w).collect(),
        Tensor::from_vec(&[n, dim], data).expect("sizes agree"),
        PretrainedMode::Fixed,
    )
    .expect("consistent table")
}
