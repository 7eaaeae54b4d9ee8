use std::collections::HashMap;

use super::Sentence;

/// Share of test tokens by how often their form occurred in training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coverage {
    pub tokens: usize,
    /// Never seen in training.
    pub unseen: f64,
    /// Seen 1–4 times.
    pub rare: f64,
    /// Seen 5 or more times.
    pub frequent: f64,
}

impl Coverage {
    pub const CSV_HEADER: &'static str = "unseen,rare,frequent,tokens";

    pub fn csv_row(&self) -> String {
        format!("{:?},{:?},{:?},{}", self.unseen, self.rare, self.frequent, self.tokens)
    }
}

/// Both splits are expected to be lowercased already (as `load_corpus`
/// does). An empty test split yields all-zero fractions.
pub fn coverage_report(train: &[Sentence], test: &[Sentence]) -> Coverage {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for s in train {
        for w in &s.words {
            *counts.entry(w).or_default() += 1;
        }
    }
    let mut buckets = [0usize; 3];
    for w in test.iter().flat_map(|s| &s.words) {
        let b = match counts.get(w.as_str()).copied().unwrap_or(0) {
            0 => 0,
            1..=4 => 1,
            _ => 2,
        };
        buckets[b] += 1;
    }
    let tokens: usize = buckets.iter().sum();
    let frac = |n: usize| if tokens == 0 { 0.0 } else { n as f64 / tokens as f64 };
    Coverage {
        tokens,
        unseen: frac(buckets[0]),
        rare: frac(buckets[1]),
        frequent: frac(buckets[2]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sent(words: &[&str]) -> Sentence {
        Sentence::new(
            words.iter().map(|w| w.to_string()).collect(),
            words.iter().map(|_| "X".to_string()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn self_coverage_has_no_unseen() {
        let data = vec![sent(&["a", "b", "a"]), sent(&["c"])];
        let c = coverage_report(&data, &data);
        assert_eq!(c.unseen, 0.0);
        assert!(c.csv_row().starts_with("0.0,"));
        assert!((c.unseen + c.rare + c.frequent - 1.0).abs() < 1e-9);
    }

    #[test]
    fn disjoint_is_all_unseen() {
        let c = coverage_report(&[sent(&["a", "b"])], &[sent(&["x", "y", "z"])]);
        assert_eq!(c.unseen, 1.0);
        assert_eq!(c.tokens, 3);
    }

    #[test]
    fn buckets() {
        let train = vec![sent(&["a"; 5]), sent(&["b", "b"])];
        let c = coverage_report(&train, &[sent(&["a", "b", "c", "a"])]);
        assert_eq!((c.unseen, c.rare, c.frequent), (0.25, 0.25, 0.5));
        assert_eq!(c.csv_row(), "0.25,0.25,0.5,4");
    }
}
