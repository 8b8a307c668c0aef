//! Scoring: normalized exact match, corpus BLEU, accuracy, and an
//! evidence-cell audit.
//!
//! Answer normalization (lowercase, compatibility character folding,
//! edge punctuation stripping, whitespace collapsing) is this artifact's
//! documented policy; evaluation harnesses vary on the fine points, so the
//! policy is centralized here rather than asserted as universal.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::markup::StructuredOutput;
use crate::table::{clip_cell, sanitize_cell, Table, TokenCounter};

/// Errors from metric computation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MetricsError {
    LengthMismatch { predictions: usize, references: usize },
    /// The parsed output carries no cells to audit.
    NoCells,
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::LengthMismatch {
                predictions,
                references,
            } => write!(
                f,
                "{predictions} predictions but {references} references"
            ),
            MetricsError::NoCells => write!(f, "output has no cells to audit"),
        }
    }
}

impl std::error::Error for MetricsError {}

// Folds compatibility characters that commonly differ between model output
// and gold annotations: fullwidth forms, typographic quotes and dashes,
// ellipses and f-ligatures. An approximation of NFKC for the character
// classes that occur in these datasets.
fn fold_compat(c: char, out: &mut String) {
    match c {
        // fullwidth ASCII block
        '\u{FF01}'..='\u{FF5E}' => out.push(char::from_u32(c as u32 - 0xFEE0).unwrap()),
        '\u{2018}' | '\u{2019}' | '\u{201A}' | '\u{2032}' => out.push('\''),
        '\u{201C}' | '\u{201D}' | '\u{201E}' | '\u{2033}' => out.push('"'),
        '\u{2010}' | '\u{2011}' | '\u{2012}' | '\u{2013}' | '\u{2014}' | '\u{2015}'
        | '\u{2212}' => out.push('-'),
        '\u{2026}' => out.push_str("..."),
        'ﬀ' => out.push_str("ff"),
        'ﬁ' => out.push_str("fi"),
        'ﬂ' => out.push_str("fl"),
        'ﬃ' => out.push_str("ffi"),
        'ﬄ' => out.push_str("ffl"),
        c => out.push(c),
    }
}

/// Normalizes an answer for comparison: fold compatibility characters,
/// lowercase, strip punctuation at token edges, collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    let mut folded = String::with_capacity(text.len());
    for c in text.chars() {
        fold_compat(c, &mut folded);
    }
    let lowered = folded.to_lowercase();
    lowered
        .split_whitespace()
        .map(|token| token.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|token| !token.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// True when the normalized prediction equals any normalized gold.
pub fn exact_match<S: AsRef<str>>(prediction: &str, golds: &[S]) -> bool {
    let pred = normalize_answer(prediction);
    golds
        .iter()
        .any(|gold| normalize_answer(gold.as_ref()) == pred)
}

/// Compares set-valued answers as normalized multisets: both sides are split
/// on `delimiter`, element order does not matter.
pub fn exact_match_multiset(prediction: &str, gold: &str, delimiter: &str) -> bool {
    let canon = |text: &str| -> Vec<String> {
        let mut parts: Vec<String> = text
            .split(delimiter.trim())
            .map(normalize_answer)
            .filter(|p| !p.is_empty())
            .collect();
        parts.sort();
        parts
    };
    canon(prediction) == canon(gold)
}

/// Fraction of positions where the normalized prediction equals the
/// normalized gold.
pub fn accuracy<S: AsRef<str>, G: AsRef<str>>(
    predictions: &[S],
    golds: &[G],
) -> Result<f64, MetricsError> {
    if predictions.len() != golds.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            references: golds.len(),
        });
    }
    if predictions.is_empty() {
        return Ok(0.0);
    }
    let hits = predictions
        .iter()
        .zip(golds)
        .filter(|(p, g)| normalize_answer(p.as_ref()) == normalize_answer(g.as_ref()))
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Zero-precision handling for BLEU.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Smoothing {
    /// Any zero clipped count at any order makes the score 0.
    None,
    /// A zero clipped count is replaced by this epsilon before the
    /// precision is computed.
    AddEpsilon(f64),
}

impl Default for Smoothing {
    fn default() -> Smoothing {
        Smoothing::AddEpsilon(0.1)
    }
}

/// Corpus BLEU with the default order (4) and smoothing.
pub fn corpus_bleu<S: AsRef<str>>(
    predictions: &[S],
    references: &[Vec<String>],
) -> Result<f64, MetricsError> {
    corpus_bleu_with(predictions, references, 4, Smoothing::default())
}

/// Corpus-level BLEU in `[0, 100]`.
///
/// Clipped n-gram matches are pooled over the whole corpus before the
/// per-order precisions are computed; the brevity penalty uses the
/// closest-length reference (ties to the shorter). Orders longer than every
/// prediction contribute nothing rather than zeroing the score; tokens are
/// whitespace-delimited as-is.
pub fn corpus_bleu_with<S: AsRef<str>>(
    predictions: &[S],
    references: &[Vec<String>],
    max_order: usize,
    smoothing: Smoothing,
) -> Result<f64, MetricsError> {
    if predictions.len() != references.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            references: references.len(),
        });
    }
    let mut numerators = vec![0usize; max_order];
    let mut denominators = vec![0usize; max_order];
    let mut pred_len_total = 0usize;
    let mut ref_len_total = 0usize;

    for (pred, refs) in predictions.iter().zip(references) {
        let pred_tokens: Vec<&str> = pred.as_ref().split_whitespace().collect();
        let ref_token_lists: Vec<Vec<&str>> = refs
            .iter()
            .map(|r| r.split_whitespace().collect())
            .collect();

        pred_len_total += pred_tokens.len();
        ref_len_total += closest_length(pred_tokens.len(), &ref_token_lists);

        for order in 1..=max_order {
            if pred_tokens.len() < order {
                break;
            }
            let pred_counts = ngram_counts(&pred_tokens, order);
            let mut max_ref_counts: HashMap<&[&str], usize> = HashMap::new();
            for ref_tokens in &ref_token_lists {
                for (gram, count) in ngram_counts(ref_tokens, order) {
                    let slot = max_ref_counts.entry(gram).or_insert(0);
                    *slot = (*slot).max(count);
                }
            }
            for (gram, count) in &pred_counts {
                let clipped = (*count).min(*max_ref_counts.get(gram).unwrap_or(&0));
                numerators[order - 1] += clipped;
            }
            denominators[order - 1] += pred_tokens.len() - order + 1;
        }
    }

    if pred_len_total == 0 {
        return Ok(0.0);
    }

    let mut log_sum = 0.0;
    let mut used = 0usize;
    for order in 0..max_order {
        if denominators[order] == 0 {
            continue;
        }
        used += 1;
        let numerator = if numerators[order] == 0 {
            match smoothing {
                Smoothing::None => return Ok(0.0),
                Smoothing::AddEpsilon(eps) => eps,
            }
        } else {
            numerators[order] as f64
        };
        log_sum += (numerator / denominators[order] as f64).ln();
    }
    if used == 0 {
        return Ok(0.0);
    }

    let precision_mean = (log_sum / used as f64).exp();
    let brevity = if pred_len_total >= ref_len_total {
        1.0
    } else {
        (1.0 - ref_len_total as f64 / pred_len_total as f64).exp()
    };
    Ok(100.0 * brevity * precision_mean)
}

fn ngram_counts<'a>(tokens: &'a [&'a str], order: usize) -> HashMap<&'a [&'a str], usize> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(order) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

fn closest_length(pred_len: usize, refs: &[Vec<&str>]) -> usize {
    refs.iter()
        .map(|r| r.len())
        .min_by_key(|&len| (len.abs_diff(pred_len), len))
        .unwrap_or(0)
}

/// The audit of one output's generated cells against a table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellAudit {
    pub valid_cells: Vec<String>,
    pub invalid_cells: Vec<String>,
    pub validity_rate: f64,
}

/// Checks each generated cell for presence in the table.
///
/// A cell is valid iff its text matches some table body cell after both
/// sides receive the same sanitize-and-clip treatment the linearizer
/// applies, compared case-insensitively. This is the machine-checkable
/// precursor to human relevance judgment: a hallucinated cell can never be
/// relevant evidence.
pub fn audit_cells(
    output: &StructuredOutput,
    table: &Table,
    cell_limit: usize,
    counter: &dyn TokenCounter,
) -> Result<CellAudit, MetricsError> {
    let cells = output.cells().ok_or(MetricsError::NoCells)?;
    let canon = |text: &str| -> String {
        clip_cell(&sanitize_cell(text), cell_limit, counter)
            .trim()
            .to_lowercase()
    };
    let table_cells: HashSet<String> = table
        .rows()
        .iter()
        .flat_map(|row| row.iter().map(|cell| canon(cell)))
        .collect();

    let mut valid_cells = Vec::new();
    let mut invalid_cells = Vec::new();
    for cell in cells {
        if table_cells.contains(&canon(cell)) {
            valid_cells.push(cell.clone());
        } else {
            invalid_cells.push(cell.clone());
        }
    }
    let validity_rate = valid_cells.len() as f64 / cells.len() as f64;
    Ok(CellAudit {
        valid_cells,
        invalid_cells,
        validity_rate,
    })
}

/// A scored evaluation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    /// Mean of `per_example` for EM/accuracy; the corpus-level value for
    /// BLEU (not a mean).
    pub score: f64,
    pub n_examples: usize,
    pub per_example: Vec<f64>,
    /// Predictions that needed the lenient fallback (no well-formed answer
    /// span).
    pub malformed: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markup::AnswerKind;
    use crate::table::WordCounter;

    #[test]
    fn normalization_hand_cases() {
        let cases = [
            ("  The  Answer. ", "the answer"),
            ("42", "42"),
            ("Entailed", "entailed"),
            ("Hello, World!", "hello world"),
            ("don’t stop", "don't stop"),
            ("“quoted”", "quoted"),
            ("em—dash", "em-dash"),
            ("ＦＵＬＬＷＩＤＴＨ　４２", "fullwidth 42"),
            ("(parenthetical)", "parenthetical"),
            ("multi   space\ttab", "multi space tab"),
            ("ﬁnal ﬁght", "final fight"),
            ("trailing...", "trailing"),
        ];
        for (input, expected) in cases {
            assert_eq!(normalize_answer(input), expected, "input {input:?}");
        }
    }

    #[test]
    fn exact_match_basics() {
        assert!(exact_match("The Answer", &["the answer."]));
        assert!(exact_match("b", &["a", "b", "c"]));
        assert!(!exact_match("a", &["b", "c"]));
        assert!(!exact_match("a", &[] as &[&str]));
    }

    #[test]
    fn multiset_match_ignores_order() {
        assert!(exact_match_multiset("A | B", "b | a", " | "));
        assert!(!exact_match_multiset("A | A", "a", " | "));
        assert!(exact_match_multiset("just one", "Just One", " | "));
    }

    #[test]
    fn accuracy_counts() {
        let preds = ["entailed", "refuted", "entailed", "refuted"];
        let golds = ["entailed", "refuted", "refuted", "entailed"];
        assert_eq!(accuracy(&preds, &golds).unwrap(), 0.5);
        assert_eq!(accuracy(&preds, &preds).unwrap(), 1.0);
        let flipped: Vec<&str> = golds.iter().rev().cloned().collect();
        assert_eq!(accuracy(&preds[..2], &flipped[..2]).unwrap(), 0.0);
        assert!(accuracy(&preds, &golds[..3]).is_err());
    }

    #[test]
    fn bleu_perfect_and_disjoint() {
        let preds = ["the cat sat on the mat", "a stitch in time"];
        let refs: Vec<Vec<String>> = preds.iter().map(|p| vec![p.to_string()]).collect();
        assert_eq!(corpus_bleu(&preds, &refs).unwrap(), 100.0);

        let disjoint = vec![vec!["completely different words".to_string()]; 2];
        assert_eq!(
            corpus_bleu_with(&preds, &disjoint, 4, Smoothing::None).unwrap(),
            0.0
        );
    }

    #[test]
    fn bleu_worked_example() {
        // pred "the cat sat" vs ref "the cat sat down":
        // p1 = 3/3, p2 = 2/2, p3 = 1/1, order 4 has no prediction n-grams;
        // BP = exp(1 - 4/3)
        let preds = ["the cat sat"];
        let refs = vec![vec!["the cat sat down".to_string()]];
        let score = corpus_bleu(&preds, &refs).unwrap();
        let expected = 100.0 * (1.0f64 - 4.0 / 3.0).exp();
        assert!((score - expected).abs() < 1e-9, "{score} vs {expected}");
    }

    #[test]
    fn bleu_clips_repeated_ngrams() {
        // "the the the" vs "the cat": clipped unigram count is 1 of 3
        let preds = ["the the the"];
        let refs = vec![vec!["the cat".to_string()]];
        let score = corpus_bleu_with(&preds, &refs, 1, Smoothing::None).unwrap();
        // BP = exp(1 - 2/3)? no: pred len 3 >= ref len 2, so BP = 1
        assert!((score - 100.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn bleu_permutation_invariant() {
        let preds = ["one two three", "four five", "six seven eight nine"];
        let refs = vec![
            vec!["one two four".to_string()],
            vec!["four five six".to_string()],
            vec!["six seven nine".to_string()],
        ];
        let forward = corpus_bleu(&preds, &refs).unwrap();
        let preds_rev: Vec<&str> = preds.iter().rev().cloned().collect();
        let refs_rev: Vec<Vec<String>> = refs.iter().rev().cloned().collect();
        let backward = corpus_bleu(&preds_rev, &refs_rev).unwrap();
        assert!((forward - backward).abs() < 1e-12);
    }

    #[test]
    fn bleu_length_mismatch() {
        assert!(corpus_bleu(&["a"], &[]).is_err());
    }

    #[test]
    fn audit_validates_against_table() {
        let table = Table::new(
            vec!["award".into(), "year".into()],
            vec![
                vec!["Best Vocals".into(), "1994".into()],
                vec!["Best Song".into(), "1995".into()],
            ],
        )
        .unwrap();
        let counter = WordCounter;

        let output = StructuredOutput::with_answer(
            Some(vec!["best vocals".into(), "1995".into()]),
            "MTV",
            AnswerKind::Short,
        )
        .unwrap();
        let audit = audit_cells(&output, &table, 15, &counter).unwrap();
        assert_eq!(audit.validity_rate, 1.0);
        assert!(audit.invalid_cells.is_empty());

        let output = StructuredOutput::with_answer(
            Some(vec!["Best Vocals".into(), "hallucinated".into()]),
            "MTV",
            AnswerKind::Short,
        )
        .unwrap();
        let audit = audit_cells(&output, &table, 15, &counter).unwrap();
        assert_eq!(audit.validity_rate, 0.5);
        assert_eq!(audit.invalid_cells, ["hallucinated"]);

        let no_cells = StructuredOutput::with_answer(None, "x", AnswerKind::Short).unwrap();
        assert_eq!(
            audit_cells(&no_cells, &table, 15, &counter),
            Err(MetricsError::NoCells)
        );
    }

    #[test]
    fn audit_applies_clipping_to_table_cells() {
        let long_cell = "one two three four five six seven eight nine ten \
                          eleven twelve thirteen fourteen fifteen sixteen";
        let table = Table::new(vec!["h".into()], vec![vec![long_cell.into()]]).unwrap();
        let counter = WordCounter;
        let clipped = clip_cell(long_cell, 15, &counter);
        let output = StructuredOutput::cells_only(vec![clipped]).unwrap();
        let audit = audit_cells(&output, &table, 15, &counter).unwrap();
        assert_eq!(audit.validity_rate, 1.0);
    }
}
