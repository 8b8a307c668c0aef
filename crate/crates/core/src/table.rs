//! Tables and their linearization.
//!
//! A [`Table`] is a rectangular grid of text cells under a header row. It
//! linearizes to the form
//!
//! ```text
//! Headers: h1 | h2 | h3 Row 1: a | b | c Row 2: d | e | f
//! ```
//!
//! with every cell sanitized (reserved markup characters substituted) and
//! clipped to a per-cell token limit. When the linearized text exceeds a
//! token budget, randomly chosen rows are dropped (seeded, reproducible)
//! until it fits; surviving rows keep their original relative order and are
//! relabeled contiguously. Rows carrying supervision can be marked protected
//! so truncation never removes them.
//!
//! Token counting is a pluggable contract ([`TokenCounter`]) so the exact
//! subword vocabulary of a downstream model can be injected; the default
//! [`WordCounter`] splits on whitespace and punctuation and is documented as
//! approximate.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Errors from table construction and linearization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TableError {
    /// A row's length differs from the header length.
    NotRectangular { row: usize, expected: usize, got: usize },
    /// Tables need at least one column.
    EmptyHeaders,
    /// A protected row index is outside the table.
    RowIndexOutOfRange(usize),
    /// Headers plus protected rows alone exceed the budget.
    BudgetInfeasible { needed: usize, budget: usize },
    /// Text did not parse as a linearized table.
    MalformedLinearization(String),
}

impl fmt::Display for TableError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TableError::NotRectangular { row, expected, got } => {
                write!(f, "row {row} has {got} cells, expected {expected}")
            }
            TableError::EmptyHeaders => write!(f, "table has no columns"),
            TableError::RowIndexOutOfRange(i) => write!(f, "row index {i} out of range"),
            TableError::BudgetInfeasible { needed, budget } => write!(
                f,
                "headers and protected rows need {needed} tokens, budget is {budget}"
            ),
            TableError::MalformedLinearization(msg) => {
                write!(f, "malformed linearized table: {msg}")
            }
        }
    }
}

impl std::error::Error for TableError {}

/// A rectangular table of text cells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TableRepr", into = "TableRepr")]
pub struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

// JSON shape: {"header": [...], "rows": [[...]]}.
#[derive(Serialize, Deserialize)]
struct TableRepr {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl TryFrom<TableRepr> for Table {
    type Error = TableError;
    fn try_from(repr: TableRepr) -> Result<Table, TableError> {
        Table::new(repr.header, repr.rows)
    }
}

impl From<Table> for TableRepr {
    fn from(table: Table) -> TableRepr {
        TableRepr {
            header: table.headers,
            rows: table.rows,
        }
    }
}

impl Table {
    pub fn new(headers: Vec<String>, rows: Vec<Vec<String>>) -> Result<Table, TableError> {
        if headers.is_empty() {
            return Err(TableError::EmptyHeaders);
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != headers.len() {
                return Err(TableError::NotRectangular {
                    row: i,
                    expected: headers.len(),
                    got: row.len(),
                });
            }
        }
        Ok(Table { headers, rows })
    }

    pub fn headers(&self) -> &[String] {
        &self.headers
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    pub fn width(&self) -> usize {
        self.headers.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn cell(&self, row: usize, column: usize) -> Option<&str> {
        self.rows.get(row)?.get(column).map(String::as_str)
    }
}

/// Pluggable token counting.
///
/// Implementations must be pure and prefix-stable: cutting the text at a
/// reported token end and re-tokenizing the prefix yields exactly the tokens
/// before the cut. Both hold for whitespace/punctuation splitting and for
/// sentence-piece style tokenizers.
pub trait TokenCounter {
    /// Byte offsets just past each token, strictly increasing.
    fn token_ends(&self, text: &str) -> Vec<usize>;

    /// Number of tokens in `text`; zero for the empty string.
    fn count(&self, text: &str) -> usize {
        self.token_ends(text).len()
    }
}

/// Default counter: maximal alphanumeric runs are one token each, every
/// other non-whitespace character is its own token.
///
/// This approximates subword counts without a vocabulary; rendered budgets
/// are exact only under the counter actually used downstream.
#[derive(Debug, Clone, Copy, Default)]
pub struct WordCounter;

impl TokenCounter for WordCounter {
    fn token_ends(&self, text: &str) -> Vec<usize> {
        let mut ends = Vec::new();
        let mut in_word = false;
        for (pos, c) in text.char_indices() {
            if c.is_alphanumeric() {
                if in_word {
                    // extend the current token
                    *ends.last_mut().unwrap() = pos + c.len_utf8();
                } else {
                    ends.push(pos + c.len_utf8());
                    in_word = true;
                }
            } else {
                in_word = false;
                if !c.is_whitespace() {
                    ends.push(pos + c.len_utf8());
                }
            }
        }
        ends
    }
}

/// Replaces the reserved markup characters `|`, `[`, `]` with visually
/// similar substitutes so cell text can never be mistaken for a separator
/// or a tag.
pub fn sanitize_cell(text: &str) -> String {
    if !text.contains(['|', '[', ']']) {
        return text.to_string();
    }
    text.chars()
        .map(|c| match c {
            '|' => '¦',
            '[' => '⟦',
            ']' => '⟧',
            c => c,
        })
        .collect()
}

/// Clips `text` to at most `limit` tokens, cutting at a token boundary.
/// Text already within the limit is returned unchanged.
pub fn clip_cell(text: &str, limit: usize, counter: &dyn TokenCounter) -> String {
    debug_assert!(limit >= 1, "cell limit must be at least 1");
    let ends = counter.token_ends(text);
    if ends.len() <= limit {
        text.to_string()
    } else {
        text[..ends[limit - 1]].to_string()
    }
}

/// A table flattened to text under a token budget.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinearizedTable {
    /// `Headers: … Row 1: … Row k: …` over the surviving rows.
    pub text: String,
    /// Original indices of the surviving rows, strictly increasing.
    pub retained_row_indices: Vec<usize>,
    /// Token count of `text` under the counter used to build it.
    pub token_count: usize,
}

/// Linearizes a table under `budget` tokens.
///
/// Cells and headers are sanitized and clipped to `cell_limit` tokens. If the
/// full table exceeds the budget, unprotected rows are removed in a seeded
/// uniform-random order until the text fits; a fixed seed always removes rows
/// in the same order, so raising the budget never loses a survivor. Rows in
/// `protected_rows` are never removed; if headers plus protected rows alone
/// exceed the budget the call fails with [`TableError::BudgetInfeasible`].
pub fn linearize(
    table: &Table,
    budget: usize,
    cell_limit: usize,
    counter: &dyn TokenCounter,
    rng_seed: u64,
    protected_rows: &BTreeSet<usize>,
) -> Result<LinearizedTable, TableError> {
    for &idx in protected_rows {
        if idx >= table.n_rows() {
            return Err(TableError::RowIndexOutOfRange(idx));
        }
    }

    let clean = |text: &str| clip_cell(&sanitize_cell(text), cell_limit, counter);
    let headers: Vec<String> = table.headers.iter().map(|h| clean(h)).collect();
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|row| row.iter().map(|c| clean(c)).collect())
        .collect();

    let render = |survivors: &BTreeSet<usize>| -> String {
        let mut text = format!("Headers: {}", headers.join(" | "));
        for (label, &idx) in survivors.iter().enumerate() {
            text.push_str(&format!(" Row {}: {}", label + 1, rows[idx].join(" | ")));
        }
        text
    };

    let mut survivors: BTreeSet<usize> = (0..table.n_rows()).collect();
    let mut removal_order: Vec<usize> = (0..table.n_rows())
        .filter(|i| !protected_rows.contains(i))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    removal_order.shuffle(&mut rng);
    let mut next_removal = 0;

    loop {
        let text = render(&survivors);
        let token_count = counter.count(&text);
        if token_count <= budget {
            return Ok(LinearizedTable {
                text,
                retained_row_indices: survivors.into_iter().collect(),
                token_count,
            });
        }
        match removal_order.get(next_removal) {
            Some(&idx) => {
                survivors.remove(&idx);
                next_removal += 1;
            }
            None => {
                return Err(TableError::BudgetInfeasible {
                    needed: token_count,
                    budget,
                });
            }
        }
    }
}

/// Parses linearized-table text back into a [`Table`].
///
/// The inverse of [`linearize`] up to the sanitize/clip applied there; used
/// for structural checks and for auditing generated cells against the table
/// a model actually saw.
pub fn parse_linearized(text: &str) -> Result<Table, TableError> {
    let body = text
        .strip_prefix("Headers: ")
        .ok_or_else(|| TableError::MalformedLinearization("missing 'Headers: '".into()))?;

    let mut segments = Vec::new();
    let mut rest = body;
    let mut next_row = 1;
    loop {
        let marker = format!(" Row {next_row}: ");
        match rest.find(&marker) {
            Some(pos) => {
                segments.push(&rest[..pos]);
                rest = &rest[pos + marker.len()..];
                next_row += 1;
            }
            None => {
                segments.push(rest);
                break;
            }
        }
    }

    let split_cells = |s: &str| -> Vec<String> { s.split(" | ").map(String::from).collect() };
    let headers = split_cells(segments[0]);
    let rows: Vec<Vec<String>> = segments[1..].iter().map(|s| split_cells(s)).collect();
    Table::new(headers, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counter() -> WordCounter {
        WordCounter
    }

    fn small_table() -> Table {
        Table::new(
            vec!["a".into(), "b".into()],
            vec![
                vec!["1".into(), "2".into()],
                vec!["3".into(), "4".into()],
            ],
        )
        .unwrap()
    }

    #[test]
    fn word_counter_basics() {
        let c = counter();
        assert_eq!(c.count(""), 0);
        assert_eq!(c.count("hello"), 1);
        assert_eq!(c.count("hello world"), 2);
        assert_eq!(c.count("a|b"), 3);
        assert_eq!(c.count("Headers: a | b"), 5);
        assert_eq!(c.count("  spaced   out  "), 2);
    }

    #[test]
    fn sanitize_replaces_reserved() {
        assert_eq!(sanitize_cell("a|b"), "a¦b");
        assert_eq!(sanitize_cell("plain"), "plain");
        assert_eq!(sanitize_cell("[answer]"), "⟦answer⟧");
    }

    #[test]
    fn clip_cell_prefix() {
        let c = counter();
        assert_eq!(clip_cell("one two three", 15, &c), "one two three");
        assert_eq!(clip_cell("one two three four", 2, &c), "one two");
        assert_eq!(clip_cell("", 15, &c), "");
        let twenty: String = (0..20).map(|i| format!("w{i} ")).collect();
        let clipped = clip_cell(twenty.trim_end(), 15, &c);
        assert_eq!(c.count(&clipped), 15);
        assert!(twenty.starts_with(&clipped));
    }

    #[test]
    fn rectangular_enforced() {
        let err = Table::new(
            vec!["a".into(), "b".into()],
            vec![vec!["1".into()]],
        )
        .unwrap_err();
        assert!(matches!(err, TableError::NotRectangular { .. }));
        assert!(matches!(
            Table::new(vec![], vec![]),
            Err(TableError::EmptyHeaders)
        ));
    }

    #[test]
    fn linearize_full_table() {
        let lin = linearize(&small_table(), 1024, 15, &counter(), 0, &BTreeSet::new()).unwrap();
        assert_eq!(lin.text, "Headers: a | b Row 1: 1 | 2 Row 2: 3 | 4");
        assert_eq!(lin.retained_row_indices, vec![0, 1]);
        assert_eq!(lin.token_count, counter().count(&lin.text));
    }

    #[test]
    fn linearize_protects_rows() {
        let table = small_table();
        let c = counter();
        // budget that fits headers + exactly one row
        let full = linearize(&table, 1024, 15, &c, 0, &BTreeSet::new()).unwrap();
        let one_row_budget = full.token_count - 4; // each row is "Row k: v | v" = 6 tokens; headers 5
        let protected: BTreeSet<usize> = [0].into();
        let lin = linearize(&table, one_row_budget, 15, &c, 7, &protected).unwrap();
        assert_eq!(lin.retained_row_indices, vec![0]);
        assert_eq!(lin.text, "Headers: a | b Row 1: 1 | 2");
        assert!(lin.token_count <= one_row_budget);
    }

    #[test]
    fn linearize_relabels_contiguously() {
        let table = Table::new(
            vec!["h".into()],
            vec![vec!["r0".into()], vec!["r1".into()], vec!["r2".into()]],
        )
        .unwrap();
        let protected: BTreeSet<usize> = [0, 2].into();
        // small budget forces dropping the only unprotected row
        let lin = linearize(&table, 8, 15, &counter(), 3, &protected).unwrap();
        assert_eq!(lin.retained_row_indices, vec![0, 2]);
        assert_eq!(lin.text, "Headers: h Row 1: r0 Row 2: r2");
    }

    #[test]
    fn budget_infeasible_cases() {
        let table = small_table();
        let c = counter();
        // headers alone need 5 tokens
        assert!(matches!(
            linearize(&table, 4, 15, &c, 0, &BTreeSet::new()),
            Err(TableError::BudgetInfeasible { .. })
        ));
        // protected rows cannot be dropped
        let protected: BTreeSet<usize> = [0, 1].into();
        assert!(matches!(
            linearize(&table, 12, 15, &c, 0, &protected),
            Err(TableError::BudgetInfeasible { .. })
        ));
    }

    #[test]
    fn protected_out_of_range() {
        let protected: BTreeSet<usize> = [5].into();
        assert_eq!(
            linearize(&small_table(), 100, 15, &counter(), 0, &protected),
            Err(TableError::RowIndexOutOfRange(5))
        );
    }

    #[test]
    fn deterministic_under_seed() {
        let table = Table::new(
            vec!["h".into()],
            (0..30).map(|i| vec![format!("row{i}")]).collect(),
        )
        .unwrap();
        let c = counter();
        let a = linearize(&table, 40, 15, &c, 42, &BTreeSet::new()).unwrap();
        let b = linearize(&table, 40, 15, &c, 42, &BTreeSet::new()).unwrap();
        assert_eq!(a, b);
        let other = linearize(&table, 40, 15, &c, 43, &BTreeSet::new()).unwrap();
        assert_eq!(other.token_count, a.token_count);
        assert_ne!(other.retained_row_indices, a.retained_row_indices);
    }

    #[test]
    fn monotone_retention_in_budget() {
        let table = Table::new(
            vec!["h".into()],
            (0..20).map(|i| vec![format!("row{i}")]).collect(),
        )
        .unwrap();
        let c = counter();
        let mut prev = 0;
        for budget in (10..80).step_by(5) {
            let lin = linearize(&table, budget, 15, &c, 9, &BTreeSet::new()).unwrap();
            assert!(lin.retained_row_indices.len() >= prev, "budget {budget}");
            prev = lin.retained_row_indices.len();
        }
    }

    #[test]
    fn parse_back_round_trip() {
        let table = Table::new(
            vec!["name".into(), "points scored".into()],
            vec![
                vec!["Alice Smith".into(), "10".into()],
                vec!["Bob".into(), "7".into()],
            ],
        )
        .unwrap();
        let lin = linearize(&table, 1024, 15, &counter(), 0, &BTreeSet::new()).unwrap();
        let back = parse_linearized(&lin.text).unwrap();
        assert_eq!(back, table);
        assert!(parse_linearized("no marker").is_err());
    }

    #[test]
    fn table_json_shape() {
        let json = r#"{"header": ["a", "b"], "rows": [["1", "2"]]}"#;
        let table: Table = serde_json::from_str(json).unwrap();
        assert_eq!(table.headers(), ["a", "b"]);
        let ragged = r#"{"header": ["a", "b"], "rows": [["1"]]}"#;
        assert!(serde_json::from_str::<Table>(ragged).is_err());
    }
}
