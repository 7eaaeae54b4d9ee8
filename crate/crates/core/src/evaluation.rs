//! Token-level tag error rates and their tabular presentation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::data::{Tagset, Vocab};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalReport {
    pub tagset: Tagset,
    pub tokens: usize,
    pub errors: usize,
    /// `(gold, predicted)` → count, for mistakes only.
    pub confusions: BTreeMap<(String, String), usize>,
}

impl EvalReport {
    /// Percentage of wrongly tagged tokens (0 for an empty report).
    pub fn error_rate(&self) -> f64 {
        if self.tokens == 0 {
            0.0
        } else {
            100.0 * self.errors as f64 / self.tokens as f64
        }
    }

    /// The error rate as a two-decimal string, rounded half up.
    pub fn error_rate_str(&self) -> String {
        format_percent(self.errors as u64, self.tokens as u64)
    }

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.tagset, self.tokens, self.errors, self.error_rate_str())
    }
}

/// `100·num/den` with two decimals, rounded half up in exact integer
/// arithmetic (so 8.715 becomes "8.72").
pub fn format_percent(num: u64, den: u64) -> String {
    if den == 0 {
        return "0.00".to_string();
    }
    let scaled = (num as u128 * 10_000 * 2 + den as u128) / (2 * den as u128);
    format!("{}.{:02}", scaled / 100, scaled % 100)
}

/// Compares predicted tag ids with gold tag strings. Gold tags outside the
/// training inventory are always counted as errors.
pub fn error_rate(tagset: Tagset, tags: &Vocab, pred: &[Vec<usize>], gold: &[Vec<String>]) -> Result<EvalReport> {
    if pred.len() != gold.len() {
        return Err(Error::Data(format!(
            "{} predicted sentences vs {} gold sentences",
            pred.len(),
            gold.len()
        )));
    }
    let mut report = EvalReport {
        tagset,
        tokens: 0,
        errors: 0,
        confusions: BTreeMap::new(),
    };
    for (i, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.len() != g.len() {
            return Err(Error::Data(format!(
                "sentence {}: {} predictions for {} gold tags",
                i + 1,
                p.len(),
                g.len()
            )));
        }
        for (&pid, gtag) in p.iter().zip(g) {
            report.tokens += 1;
            let correct = tags.id(gtag) == Some(pid);
            if !correct {
                report.errors += 1;
                let predicted = if pid < tags.len() { tags.symbol(pid) } else { "?" };
                *report
                    .confusions
                    .entry((gtag.clone(), predicted.to_string()))
                    .or_default() += 1;
            }
        }
    }
    Ok(report)
}

pub const CSV_HEADER: &str = "tagset,tokens,errors,error_rate";

/// Text table and CSV, rows ordered POS, MORPH, POSMORPH.
pub fn report_table(reports: &[EvalReport]) -> (String, String) {
    let mut sorted: Vec<&EvalReport> = reports.iter().collect();
    sorted.sort_by_key(|r| Tagset::ALL.iter().position(|t| *t == r.tagset));
    let mut text = format!("{:<10} {:>10} {:>10} {:>10}\n", "tagset", "tokens", "errors", "error %");
    let mut csv = format!("{CSV_HEADER}\n");
    for r in sorted {
        let _ = writeln!(
            text,
            "{:<10} {:>10} {:>10} {:>10}",
            r.tagset.to_string(),
            r.tokens,
            r.errors,
            r.error_rate_str()
        );
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    (text, csv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        Vocab::from_symbols(["A", "B", "C"].map(String::from)).unwrap()
    }

    fn gold(tags: &[&str]) -> Vec<Vec<String>> {
        vec![tags.iter().map(|t| t.to_string()).collect()]
    }

    #[test]
    fn two_of_ten() {
        let g = gold(&["A"; 10]);
        let p = vec![vec![0, 0, 1, 0, 0, 0, 0, 2, 0, 0]];
        let r = error_rate(Tagset::Pos, &vocab(), &p, &g).unwrap();
        assert_eq!((r.tokens, r.errors), (10, 2));
        assert_eq!(r.error_rate(), 20.0);
        assert_eq!(r.error_rate_str(), "20.00");
    }

    #[test]
    fn all_correct() {
        let r = error_rate(Tagset::Pos, &vocab(), &[vec![0, 1, 2]], &gold(&["A", "B", "C"])).unwrap();
        assert_eq!(r.error_rate_str(), "0.00");
    }

    #[test]
    fn unseen_gold_tag_is_wrong() {
        let r = error_rate(Tagset::Pos, &vocab(), &[vec![0, 1]], &gold(&["A", "Z"])).unwrap();
        assert_eq!(r.errors, 1);
    }

    #[test]
    fn length_mismatch() {
        assert!(error_rate(Tagset::Pos, &vocab(), &[vec![0]], &gold(&["A", "B"])).is_err());
        assert!(error_rate(Tagset::Pos, &vocab(), &[], &gold(&["A"])).is_err());
    }

    #[test]
    fn half_up_rounding() {
        // 1743/20000 = 8.715 %
        assert_eq!(format_percent(1743, 20000), "8.72");
        assert_eq!(format_percent(1, 3), "33.33");
        assert_eq!(format_percent(2, 3), "66.67");
        assert_eq!(format_percent(1, 8), "12.50");
    }

    #[test]
    fn permutation_invariant() {
        let g = gold(&["A", "B", "C", "A"]);
        let p = vec![vec![0, 2, 2, 1]];
        let a = error_rate(Tagset::Pos, &vocab(), &p, &g).unwrap();
        let g2 = gold(&["A", "C", "A", "B"]);
        let p2 = vec![vec![1, 2, 0, 2]];
        let b = error_rate(Tagset::Pos, &vocab(), &p2, &g2).unwrap();
        assert_eq!(a.error_rate(), b.error_rate());
    }

    #[test]
    fn table_order_and_consistency() {
        let mk = |tagset, tokens, errors| EvalReport {
            tagset,
            tokens,
            errors,
            confusions: BTreeMap::new(),
        };
        let reports = [mk(Tagset::PosMorph, 20000, 1743), mk(Tagset::Pos, 10, 2)];
        let (text, csv) = report_table(&reports);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "POS,10,2,20.00");
        assert_eq!(lines[2], "POSMORPH,20000,1743,8.72");
        assert!(text.contains("8.72") && text.contains("20.00"));
        assert!(text.find("POS ").unwrap() < text.find("POSMORPH").unwrap());
        assert_eq!(report_table(&reports[1..]).1.lines().count(), 2);
    }
}
