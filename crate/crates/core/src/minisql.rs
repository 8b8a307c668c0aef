//! Restricted SQL over in-memory tables.
//!
//! Supports exactly the WikiSQL query form: a single select column, an
//! optional aggregate (`MAX`, `MIN`, `COUNT`, `SUM`, `AVG`), and a
//! conjunction of `=`/`>`/`<` conditions. Executing a query yields the
//! relevant cells (the select-column cells of the matching rows) and the
//! answer values; relevant cells become decoder-side supervision while the
//! answer values become the final answer string.
//!
//! Comparison semantics: when both operands coerce to finite numbers the
//! comparison is numeric, otherwise `=` is case-insensitive string equality
//! and `>`/`<` fail with [`SqlError::NonComparable`]. Coercion trims
//! whitespace, strips a single leading currency symbol and thousands
//! separators, then parses a decimal.

use std::fmt;

use serde::Deserialize;

use crate::table::Table;

/// Aggregation applied over the matched select-column cells, in the code
/// order of the WikiSQL release.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Aggregate {
    None,
    Max,
    Min,
    Count,
    Sum,
    Avg,
}

impl Aggregate {
    pub fn from_code(code: usize) -> Result<Aggregate, SqlError> {
        match code {
            0 => Ok(Aggregate::None),
            1 => Ok(Aggregate::Max),
            2 => Ok(Aggregate::Min),
            3 => Ok(Aggregate::Count),
            4 => Ok(Aggregate::Sum),
            5 => Ok(Aggregate::Avg),
            _ => Err(SqlError::UnknownCode(format!("aggregate code {code}"))),
        }
    }

    pub fn keyword(&self) -> Option<&'static str> {
        match self {
            Aggregate::None => None,
            Aggregate::Max => Some("MAX"),
            Aggregate::Min => Some("MIN"),
            Aggregate::Count => Some("COUNT"),
            Aggregate::Sum => Some("SUM"),
            Aggregate::Avg => Some("AVG"),
        }
    }
}

/// Condition operator, in the code order of the WikiSQL release.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CondOp {
    Eq,
    Gt,
    Lt,
}

impl CondOp {
    pub fn from_code(code: usize) -> Result<CondOp, SqlError> {
        match code {
            0 => Ok(CondOp::Eq),
            1 => Ok(CondOp::Gt),
            2 => Ok(CondOp::Lt),
            _ => Err(SqlError::UnknownCode(format!("operator code {code}"))),
        }
    }

    pub fn symbol(&self) -> char {
        match self {
            CondOp::Eq => '=',
            CondOp::Gt => '>',
            CondOp::Lt => '<',
        }
    }
}

/// One conjunctive condition: `column <op> value`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Condition {
    pub column: usize,
    pub op: CondOp,
    pub value: String,
}

/// A restricted query: `SELECT [agg] col WHERE cond AND cond …`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SqlQuery {
    pub select_col: usize,
    pub agg: Aggregate,
    pub conditions: Vec<Condition>,
}

/// Errors from query construction and execution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SqlError {
    /// An aggregate or operator code outside the release encoding.
    UnknownCode(String),
    /// A column index not valid for the table.
    ColumnOutOfRange { column: usize, width: usize },
    /// A numeric aggregate hit a cell that does not coerce to a number.
    NonNumericAggregate { row: usize, column: usize, text: String },
    /// An order comparison between non-numeric operands.
    NonComparable { cell: String, value: String },
    /// The text grammar did not parse.
    MalformedQuery(String),
    /// A column name that matches no header.
    UnknownColumn(String),
}

impl fmt::Display for SqlError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SqlError::UnknownCode(what) => write!(f, "unknown {what}"),
            SqlError::ColumnOutOfRange { column, width } => {
                write!(f, "column {column} out of range for width {width}")
            }
            SqlError::NonNumericAggregate { row, column, text } => write!(
                f,
                "cell ({row}, {column}) '{text}' is not numeric; aggregate needs numbers"
            ),
            SqlError::NonComparable { cell, value } => {
                write!(f, "cannot order-compare '{cell}' with '{value}'")
            }
            SqlError::MalformedQuery(msg) => write!(f, "malformed query: {msg}"),
            SqlError::UnknownColumn(name) => write!(f, "no column named '{name}'"),
        }
    }
}

impl std::error::Error for SqlError {}

// Structured query JSON shape of the WikiSQL release:
// {"sel": 1, "agg": 0, "conds": [[0, 0, "value"], …]}.
#[derive(Debug, Deserialize)]
pub struct RawSql {
    pub sel: usize,
    pub agg: usize,
    #[serde(default)]
    pub conds: Vec<(usize, usize, serde_json::Value)>,
}

impl SqlQuery {
    /// Builds a query from the release's integer encoding.
    pub fn from_structured(
        sel: usize,
        agg_code: usize,
        conds: &[(usize, usize, String)],
    ) -> Result<SqlQuery, SqlError> {
        let agg = Aggregate::from_code(agg_code)?;
        let conditions = conds
            .iter()
            .map(|(col, op, value)| {
                Ok(Condition {
                    column: *col,
                    op: CondOp::from_code(*op)?,
                    value: value.clone(),
                })
            })
            .collect::<Result<Vec<_>, SqlError>>()?;
        Ok(SqlQuery {
            select_col: sel,
            agg,
            conditions,
        })
    }

    /// Builds a query from the release JSON shape, stringifying scalar
    /// condition literals.
    pub fn from_raw(raw: &RawSql) -> Result<SqlQuery, SqlError> {
        let conds: Vec<(usize, usize, String)> = raw
            .conds
            .iter()
            .map(|(col, op, value)| (*col, *op, scalar_to_string(value)))
            .collect();
        SqlQuery::from_structured(raw.sel, raw.agg, &conds)
    }

    /// Parses the restricted text grammar
    /// `SELECT [AGG] colname [WHERE colname OP value [AND …]]`,
    /// resolving column names case-insensitively against `headers`.
    pub fn from_text(sql: &str, headers: &[String]) -> Result<SqlQuery, SqlError> {
        let resolve = |name: &str| -> Result<usize, SqlError> {
            let name = unquote(name.trim());
            headers
                .iter()
                .position(|h| h.trim().eq_ignore_ascii_case(&name))
                .ok_or_else(|| SqlError::UnknownColumn(name.to_string()))
        };

        let trimmed = sql.trim();
        if trimmed.len() < 7 || !trimmed.as_bytes()[..7].eq_ignore_ascii_case(b"select ") {
            return Err(SqlError::MalformedQuery("must start with SELECT".into()));
        }
        let after_select = trimmed[7..].trim_start();

        let (select_part, where_part) = match find_ascii_ci(after_select, b" where ") {
            Some(pos) => (
                after_select[..pos].trim(),
                Some(after_select[pos + " where ".len()..].trim()),
            ),
            None => (after_select, None),
        };

        let mut agg = Aggregate::None;
        let mut col_name = select_part;
        for candidate in [
            Aggregate::Max,
            Aggregate::Min,
            Aggregate::Count,
            Aggregate::Sum,
            Aggregate::Avg,
        ] {
            let kw = candidate.keyword().unwrap();
            if select_part.len() > kw.len()
                && select_part.as_bytes()[..kw.len()].eq_ignore_ascii_case(kw.as_bytes())
                && select_part.as_bytes()[kw.len()].is_ascii_whitespace()
            {
                agg = candidate;
                col_name = select_part[kw.len()..].trim_start();
                break;
            }
        }
        if col_name.is_empty() {
            return Err(SqlError::MalformedQuery("missing select column".into()));
        }
        let select_col = resolve(col_name)?;

        let mut conditions = Vec::new();
        if let Some(where_part) = where_part {
            for clause in split_ascii_ci(where_part, b" and ") {
                let op_pos = clause
                    .find(['=', '>', '<'])
                    .ok_or_else(|| SqlError::MalformedQuery(format!("no operator in '{clause}'")))?;
                let op = match clause.as_bytes()[op_pos] {
                    b'=' => CondOp::Eq,
                    b'>' => CondOp::Gt,
                    _ => CondOp::Lt,
                };
                let column = resolve(&clause[..op_pos])?;
                let value = unquote(clause[op_pos + 1..].trim());
                conditions.push(Condition { column, op, value });
            }
        }

        Ok(SqlQuery {
            select_col,
            agg,
            conditions,
        })
    }
}

fn scalar_to_string(value: &serde_json::Value) -> String {
    match value {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn unquote(s: &str) -> String {
    let s = s.trim();
    for quote in ['\'', '"'] {
        if s.len() >= 2 && s.starts_with(quote) && s.ends_with(quote) {
            return s[1..s.len() - 1].to_string();
        }
    }
    s.to_string()
}

// ASCII-case-insensitive substring search; byte offsets stay valid because
// the needle is pure ASCII.
fn find_ascii_ci(haystack: &str, needle: &[u8]) -> Option<usize> {
    haystack
        .as_bytes()
        .windows(needle.len())
        .position(|w| w.eq_ignore_ascii_case(needle))
}

fn split_ascii_ci<'a>(text: &'a str, sep: &[u8]) -> Vec<&'a str> {
    let mut parts = Vec::new();
    let mut rest = text;
    while let Some(pos) = find_ascii_ci(rest, sep) {
        parts.push(rest[..pos].trim());
        rest = &rest[pos + sep.len()..];
    }
    parts.push(rest.trim());
    parts
}

/// A matched cell: coordinates plus its text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelevantCell {
    pub row: usize,
    pub column: usize,
    pub text: String,
}

/// The outcome of executing a query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionResult {
    /// Select-column cells of the matching rows, in row order.
    pub relevant_cells: Vec<RelevantCell>,
    /// Matched texts for plain selects; a single aggregated value otherwise.
    pub answer_values: Vec<String>,
}

/// Coerces messy cell text to a number: trim, strip one leading currency
/// symbol and thousands separators, parse as decimal.
pub fn coerce_number(text: &str) -> Option<f64> {
    let mut s = text.trim();
    if let Some(first) = s.chars().next() {
        if matches!(first, '$' | '€' | '£' | '¥') {
            s = s[first.len_utf8()..].trim_start();
        }
    }
    let cleaned = s.replace(',', "");
    if cleaned.is_empty() {
        return None;
    }
    cleaned.parse::<f64>().ok().filter(|x| x.is_finite())
}

/// Renders a float with up to `sig` significant digits, trailing zeros
/// trimmed, avoiding scientific notation.
pub fn format_significant(x: f64, sig: u32) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    let sig = sig as i32;
    if exp >= sig {
        // round to a power of ten above the units place
        let scale = 10f64.powi(exp - sig + 1);
        return format!("{:.0}", (x / scale).round() * scale);
    }
    let decimals = (sig - 1 - exp).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn condition_holds(cell: &str, cond: &Condition) -> Result<bool, SqlError> {
    let nums = (coerce_number(cell), coerce_number(&cond.value));
    match (nums, cond.op) {
        ((Some(a), Some(b)), CondOp::Eq) => Ok(a == b),
        ((Some(a), Some(b)), CondOp::Gt) => Ok(a > b),
        ((Some(a), Some(b)), CondOp::Lt) => Ok(a < b),
        (_, CondOp::Eq) => Ok(cell.trim().eq_ignore_ascii_case(cond.value.trim())),
        (_, _) => Err(SqlError::NonComparable {
            cell: cell.to_string(),
            value: cond.value.clone(),
        }),
    }
}

/// Executes a query over a table.
///
/// Zero matching rows is not an error: plain selects yield empty results,
/// `COUNT` answers `"0"` and `SUM` answers `"0"`, while `MAX`/`MIN`/`AVG`
/// are undefined over nothing and yield no answer values. Callers decide
/// whether empty extractions are usable.
pub fn execute(query: &SqlQuery, table: &Table) -> Result<ExecutionResult, SqlError> {
    let width = table.width();
    let check_col = |column: usize| -> Result<(), SqlError> {
        if column >= width {
            Err(SqlError::ColumnOutOfRange { column, width })
        } else {
            Ok(())
        }
    };
    check_col(query.select_col)?;
    for cond in &query.conditions {
        check_col(cond.column)?;
    }

    let mut relevant_cells = Vec::new();
    'rows: for (row_idx, row) in table.rows().iter().enumerate() {
        for cond in &query.conditions {
            if !condition_holds(&row[cond.column], cond)? {
                continue 'rows;
            }
        }
        relevant_cells.push(RelevantCell {
            row: row_idx,
            column: query.select_col,
            text: row[query.select_col].clone(),
        });
    }

    let numeric = |cells: &[RelevantCell]| -> Result<Vec<f64>, SqlError> {
        cells
            .iter()
            .map(|cell| {
                coerce_number(&cell.text).ok_or_else(|| SqlError::NonNumericAggregate {
                    row: cell.row,
                    column: cell.column,
                    text: cell.text.clone(),
                })
            })
            .collect()
    };

    let answer_values = match query.agg {
        Aggregate::None => relevant_cells.iter().map(|c| c.text.clone()).collect(),
        Aggregate::Count => vec![relevant_cells.len().to_string()],
        Aggregate::Max | Aggregate::Min => {
            let values = numeric(&relevant_cells)?;
            match pick_extremal(&values, query.agg == Aggregate::Max) {
                Some(idx) => vec![relevant_cells[idx].text.clone()],
                None => vec![],
            }
        }
        Aggregate::Sum => {
            let total: f64 = numeric(&relevant_cells)?.iter().sum();
            vec![format_significant(total, 6)]
        }
        Aggregate::Avg => {
            let values = numeric(&relevant_cells)?;
            if values.is_empty() {
                vec![]
            } else {
                let mean = values.iter().sum::<f64>() / values.len() as f64;
                vec![format_significant(mean, 6)]
            }
        }
    };

    Ok(ExecutionResult {
        relevant_cells,
        answer_values,
    })
}

fn pick_extremal(values: &[f64], want_max: bool) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        let better = match best {
            None => true,
            Some(b) => {
                if want_max {
                    *v > values[b]
                } else {
                    *v < values[b]
                }
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

/// The texts of the relevant cells in row order: the decoder-side `[cell]`
/// payload for extraction-based training targets. Duplicate texts are
/// preserved.
pub fn extract_relevant_cells(query: &SqlQuery, table: &Table) -> Result<Vec<String>, SqlError> {
    Ok(execute(query, table)?
        .relevant_cells
        .into_iter()
        .map(|cell| cell.text)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn points_table() -> Table {
        Table::new(
            vec!["team".into(), "points".into()],
            vec![
                vec!["A".into(), "3".into()],
                vec!["B".into(), "7".into()],
                vec!["A".into(), "5".into()],
                vec!["C".into(), "2".into()],
                vec!["A".into(), "9".into()],
            ],
        )
        .unwrap()
    }

    #[test]
    fn code_tables() {
        let q = SqlQuery::from_structured(1, 0, &[(0, 0, "x".into())]).unwrap();
        assert_eq!(q.agg, Aggregate::None);
        assert_eq!(q.conditions[0].op, CondOp::Eq);
        assert_eq!(Aggregate::from_code(3).unwrap(), Aggregate::Count);
        assert!(matches!(
            Aggregate::from_code(9),
            Err(SqlError::UnknownCode(_))
        ));
        assert!(matches!(CondOp::from_code(7), Err(SqlError::UnknownCode(_))));
    }

    #[test]
    fn max_over_all_rows() {
        let table = Table::new(
            vec!["points".into()],
            vec![vec!["3".into()], vec!["7".into()], vec!["5".into()]],
        )
        .unwrap();
        let q = SqlQuery {
            select_col: 0,
            agg: Aggregate::Max,
            conditions: vec![],
        };
        let result = execute(&q, &table).unwrap();
        assert_eq!(result.relevant_cells.len(), 3);
        assert_eq!(result.answer_values, ["7"]);
    }

    #[test]
    fn count_with_condition() {
        let q = SqlQuery::from_text("SELECT COUNT points WHERE team = 'A'", points_table().headers())
            .unwrap();
        let result = execute(&q, &points_table()).unwrap();
        assert_eq!(result.answer_values, ["3"]);
        assert_eq!(result.relevant_cells.len(), 3);
        assert_eq!(
            result.relevant_cells.iter().map(|c| c.row).collect::<Vec<_>>(),
            [0, 2, 4]
        );
    }

    #[test]
    fn plain_select_single_match() {
        let q = SqlQuery::from_text("SELECT points WHERE team = c", points_table().headers())
            .unwrap();
        let result = execute(&q, &points_table()).unwrap();
        assert_eq!(result.answer_values, ["2"]);
        assert_eq!(result.relevant_cells[0].text, "2");
    }

    #[test]
    fn numeric_conditions() {
        let table = points_table();
        let q = SqlQuery::from_text("SELECT team WHERE points > 4", table.headers()).unwrap();
        let result = execute(&q, &table).unwrap();
        assert_eq!(result.answer_values, ["B", "A", "A"]);
        let q = SqlQuery::from_text("SELECT team WHERE points < 3", table.headers()).unwrap();
        assert_eq!(execute(&q, &table).unwrap().answer_values, ["C"]);
    }

    #[test]
    fn sum_and_avg_rendering() {
        let table = points_table();
        let q = SqlQuery::from_text("SELECT SUM points WHERE team = a", table.headers()).unwrap();
        assert_eq!(execute(&q, &table).unwrap().answer_values, ["17"]);
        let q = SqlQuery::from_text("SELECT AVG points WHERE team = a", table.headers()).unwrap();
        // (3 + 5 + 9) / 3
        assert_eq!(execute(&q, &table).unwrap().answer_values, ["5.66667"]);
    }

    #[test]
    fn aggregate_needs_numbers() {
        let table = points_table();
        let q = SqlQuery::from_text("SELECT SUM team", table.headers()).unwrap();
        assert!(matches!(
            execute(&q, &table),
            Err(SqlError::NonNumericAggregate { .. })
        ));
    }

    #[test]
    fn order_on_strings_is_non_comparable() {
        let table = points_table();
        let q = SqlQuery::from_text("SELECT points WHERE team > 'A'", table.headers()).unwrap();
        assert!(matches!(execute(&q, &table), Err(SqlError::NonComparable { .. })));
    }

    #[test]
    fn equality_is_case_insensitive_and_numeric_aware() {
        let table = Table::new(
            vec!["name".into(), "price".into()],
            vec![vec!["Widget".into(), "$1,000.50".into()]],
        )
        .unwrap();
        let q = SqlQuery::from_text("SELECT price WHERE name = WIDGET", table.headers()).unwrap();
        assert_eq!(execute(&q, &table).unwrap().answer_values, ["$1,000.50"]);
        let q = SqlQuery::from_text("SELECT name WHERE price = 1000.5", table.headers()).unwrap();
        assert_eq!(execute(&q, &table).unwrap().answer_values, ["Widget"]);
    }

    #[test]
    fn empty_match_behaviour() {
        let table = points_table();
        for (sql, expected) in [
            ("SELECT points WHERE team = zzz", vec![]),
            ("SELECT COUNT points WHERE team = zzz", vec!["0".to_string()]),
            ("SELECT AVG points WHERE team = zzz", vec![]),
        ] {
            let q = SqlQuery::from_text(sql, table.headers()).unwrap();
            let result = execute(&q, &table).unwrap();
            assert!(result.relevant_cells.is_empty());
            assert_eq!(result.answer_values, expected, "{sql}");
        }
    }

    #[test]
    fn column_bounds_checked() {
        let q = SqlQuery {
            select_col: 5,
            agg: Aggregate::None,
            conditions: vec![],
        };
        assert!(matches!(
            execute(&q, &points_table()),
            Err(SqlError::ColumnOutOfRange { .. })
        ));
    }

    #[test]
    fn condition_narrowing_is_monotone() {
        let table = points_table();
        let base = SqlQuery::from_text("SELECT points WHERE team = a", table.headers()).unwrap();
        let narrowed =
            SqlQuery::from_text("SELECT points WHERE team = a AND points > 4", table.headers())
                .unwrap();
        let base_rows: Vec<usize> = execute(&base, &table)
            .unwrap()
            .relevant_cells
            .iter()
            .map(|c| c.row)
            .collect();
        let narrowed_rows: Vec<usize> = execute(&narrowed, &table)
            .unwrap()
            .relevant_cells
            .iter()
            .map(|c| c.row)
            .collect();
        assert!(narrowed_rows.iter().all(|r| base_rows.contains(r)));
        assert!(narrowed_rows.len() <= base_rows.len());
    }

    #[test]
    fn extract_matches_execute() {
        let table = points_table();
        let q = SqlQuery::from_text("SELECT MAX points", table.headers()).unwrap();
        let cells = extract_relevant_cells(&q, &table).unwrap();
        assert_eq!(cells, ["3", "7", "5", "2", "9"]);
    }

    #[test]
    fn text_grammar_errors() {
        let headers = points_table();
        assert!(matches!(
            SqlQuery::from_text("DROP TABLE x", headers.headers()),
            Err(SqlError::MalformedQuery(_))
        ));
        assert!(matches!(
            SqlQuery::from_text("SELECT nothing", headers.headers()),
            Err(SqlError::UnknownColumn(_))
        ));
        assert!(matches!(
            SqlQuery::from_text("SELECT points WHERE team ~ a", headers.headers()),
            Err(SqlError::MalformedQuery(_))
        ));
    }

    #[test]
    fn coercion_rules() {
        assert_eq!(coerce_number(" 42 "), Some(42.0));
        assert_eq!(coerce_number("$1,234.5"), Some(1234.5));
        assert_eq!(coerce_number("€ 99"), Some(99.0));
        assert_eq!(coerce_number("-3.5"), Some(-3.5));
        assert_eq!(coerce_number("n/a"), None);
        assert_eq!(coerce_number(""), None);
    }

    #[test]
    fn significant_digit_rendering() {
        assert_eq!(format_significant(7.0, 6), "7");
        assert_eq!(format_significant(5.666666666, 6), "5.66667");
        assert_eq!(format_significant(100.0, 6), "100");
        assert_eq!(format_significant(0.5, 6), "0.5");
        assert_eq!(format_significant(-2.25, 6), "-2.25");
        assert_eq!(format_significant(0.0, 6), "0");
        assert_eq!(format_significant(1234567.0, 6), "1234570");
    }
}
