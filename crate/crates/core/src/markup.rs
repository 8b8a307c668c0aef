//! Segment markup for encoder inputs and decoder targets.
//!
//! Encoder inputs concatenate a rendered configuration prefix with payload
//! segments like `[query] … [/query]` in the order the configuration's input
//! list dictates. Decoder targets wrap an optional relevant-cell list and an
//! answer:
//!
//! ```text
//! [cell] Best Vocals | 1994 [/cell] [answer] MTV [/answer]
//! ```
//!
//! Two parsers recover structure from decoder-side text: a strict one for
//! validating constructed training targets, and a lenient one for scoring
//! model predictions, which are malformed at a nonzero rate.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, IoType, TaskConfig, TaskType};

/// Default separator between cells inside a `[cell] … [/cell]` block,
/// mirroring the table linearization separator.
pub const DEFAULT_CELL_DELIMITER: &str = " | ";

/// Canonical binary answer surface strings.
pub const BINARY_LABELS: [&str; 2] = ["entailed", "refuted"];

/// The kind of answer a decoder target terminates with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKind {
    Short,
    Long,
    Binary,
}

impl AnswerKind {
    /// Maps an output io type to its answer kind.
    pub fn from_io(ty: IoType) -> Option<AnswerKind> {
        match ty {
            IoType::ShortAnswer => Some(AnswerKind::Short),
            IoType::LongAnswer => Some(AnswerKind::Long),
            IoType::BinaryAnswer => Some(AnswerKind::Binary),
            _ => None,
        }
    }

    /// The answer kind a configuration's output list calls for.
    pub fn from_config(config: &TaskConfig) -> Option<AnswerKind> {
        config.final_output().and_then(AnswerKind::from_io)
    }
}

/// Errors from rendering and parsing markup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MarkupError {
    /// A payload was provided without a declared input type, or vice versa.
    PayloadMismatch(String),
    /// Strict parsing rejected the text.
    MalformedOutput(String),
    /// The text does not start with configuration segments.
    MalformedPrefix(String),
    /// A parsed prefix violated configuration constraints.
    InvalidConfig(ConfigError),
    /// A constructed output violated a structural invariant.
    InvalidOutput(String),
}

impl fmt::Display for MarkupError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MarkupError::PayloadMismatch(msg) => write!(f, "payload mismatch: {msg}"),
            MarkupError::MalformedOutput(msg) => write!(f, "malformed output: {msg}"),
            MarkupError::MalformedPrefix(msg) => write!(f, "malformed prefix: {msg}"),
            MarkupError::InvalidConfig(err) => write!(f, "invalid configuration: {err}"),
            MarkupError::InvalidOutput(msg) => write!(f, "invalid structured output: {msg}"),
        }
    }
}

impl std::error::Error for MarkupError {}

impl From<ConfigError> for MarkupError {
    fn from(err: ConfigError) -> MarkupError {
        MarkupError::InvalidConfig(err)
    }
}

/// A structured decoder-side value: an optional relevant-cell list plus an
/// answer, or a cell list alone (the reverse cell-generation target).
///
/// Invariants: `cells`, when present, is non-empty; at least one of `cells`
/// and `answer` is present; `answer_kind` is present exactly when `answer`
/// is; a binary kind implies the answer is one of [`BINARY_LABELS`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StructuredOutput {
    #[serde(skip_serializing_if = "Option::is_none")]
    cells: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    answer: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    answer_kind: Option<AnswerKind>,
}

impl StructuredOutput {
    /// An answer-bearing output, optionally with cells preceding it.
    ///
    /// Binary answers are canonicalized to lowercase and must be one of
    /// [`BINARY_LABELS`].
    pub fn with_answer(
        cells: Option<Vec<String>>,
        answer: impl Into<String>,
        kind: AnswerKind,
    ) -> Result<StructuredOutput, MarkupError> {
        if let Some(cells) = &cells {
            if cells.is_empty() {
                return Err(MarkupError::InvalidOutput("cell list is empty".into()));
            }
        }
        let mut answer = answer.into();
        if kind == AnswerKind::Binary {
            answer = answer.trim().to_lowercase();
            if !BINARY_LABELS.contains(&answer.as_str()) {
                return Err(MarkupError::InvalidOutput(format!(
                    "binary answer must be one of {BINARY_LABELS:?}, got '{answer}'"
                )));
            }
        }
        Ok(StructuredOutput {
            cells,
            answer: Some(answer),
            answer_kind: Some(kind),
        })
    }

    /// A cells-only output, rendered without an `[answer]` block.
    pub fn cells_only(cells: Vec<String>) -> Result<StructuredOutput, MarkupError> {
        if cells.is_empty() {
            return Err(MarkupError::InvalidOutput("cell list is empty".into()));
        }
        Ok(StructuredOutput {
            cells: Some(cells),
            answer: None,
            answer_kind: None,
        })
    }

    pub fn cells(&self) -> Option<&[String]> {
        self.cells.as_deref()
    }

    pub fn answer(&self) -> Option<&str> {
        self.answer.as_deref()
    }

    pub fn answer_kind(&self) -> Option<AnswerKind> {
        self.answer_kind
    }

    /// Applies a text transform to every cell and the answer, preserving
    /// structure. Binary answers are left untouched.
    pub fn map_text(&self, f: impl Fn(&str) -> String) -> StructuredOutput {
        StructuredOutput {
            cells: self
                .cells
                .as_ref()
                .map(|cells| cells.iter().map(|c| f(c)).collect()),
            answer: match (self.answer.as_ref(), self.answer_kind) {
                (Some(a), Some(AnswerKind::Binary)) => Some(a.clone()),
                (Some(a), _) => Some(f(a)),
                (None, _) => None,
            },
            answer_kind: self.answer_kind,
        }
    }
}

impl<'de> Deserialize<'de> for StructuredOutput {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> Result<StructuredOutput, D::Error> {
        use serde::de::Error as _;
        #[derive(Deserialize)]
        struct Repr {
            cells: Option<Vec<String>>,
            answer: Option<String>,
            answer_kind: Option<AnswerKind>,
        }
        let repr = Repr::deserialize(deserializer)?;
        match (repr.answer, repr.answer_kind) {
            (Some(answer), Some(kind)) => {
                StructuredOutput::with_answer(repr.cells, answer, kind).map_err(D::Error::custom)
            }
            (None, None) => match repr.cells {
                Some(cells) => StructuredOutput::cells_only(cells).map_err(D::Error::custom),
                None => Err(D::Error::custom("output needs cells or an answer")),
            },
            _ => Err(D::Error::custom("answer and answer_kind must come together")),
        }
    }
}

/// A fully rendered encoder input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EncoderRecord {
    pub prefix: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub passage: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table_text: Option<String>,
    pub full_input: String,
}

/// Renders the full encoder input: the configuration prefix followed by each
/// payload wrapped as `[x] content [/x]`, in the order of the configuration's
/// input list.
///
/// Payloads must match the declared inputs exactly, with one exception: a
/// configuration with an empty input list accepts a table payload, appended
/// after the prefix. (The summarization templates omit the table from the
/// declared inputs while the model still receives the linearized table.)
pub fn render_input(
    config: &TaskConfig,
    query: Option<&str>,
    passage: Option<&str>,
    table_text: Option<&str>,
) -> Result<EncoderRecord, MarkupError> {
    let declared = |ty: IoType| config.inputs().contains(&ty);
    let check = |ty: IoType, present: bool| -> Result<(), MarkupError> {
        match (declared(ty), present) {
            (true, false) => Err(MarkupError::PayloadMismatch(format!(
                "config declares [Input: {}] but no payload was provided",
                ty.label()
            ))),
            (false, true) => Err(MarkupError::PayloadMismatch(format!(
                "payload '{}' is not declared by the config",
                ty.label()
            ))),
            _ => Ok(()),
        }
    };
    check(IoType::Query, query.is_some())?;
    check(IoType::Passage, passage.is_some())?;
    let table_exception = config.inputs().is_empty() && table_text.is_some();
    if !table_exception {
        check(IoType::Table, table_text.is_some())?;
    }

    let segment = |tag: &str, content: &str| format!("[{tag}] {content} [/{tag}]");
    let mut parts = vec![config.render_prefix()];
    for ty in config.inputs() {
        match ty {
            IoType::Query => parts.push(segment("query", query.unwrap())),
            IoType::Table => parts.push(segment("table", table_text.unwrap())),
            IoType::Passage => parts.push(segment("passage", passage.unwrap())),
            _ => unreachable!("validated at construction"),
        }
    }
    if table_exception {
        parts.push(segment("table", table_text.unwrap()));
    }
    // an ablated config can render an empty prefix; avoid a leading space
    parts.retain(|p| !p.is_empty());

    Ok(EncoderRecord {
        prefix: config.render_prefix(),
        query: query.map(String::from),
        passage: passage.map(String::from),
        table_text: table_text.map(String::from),
        full_input: parts.join(" "),
    })
}

/// Renders a decoder target: `[cell] … [/cell]` when cells are present, then
/// `[answer] … [/answer]` when an answer is present.
pub fn render_target(output: &StructuredOutput, cell_delimiter: &str) -> String {
    let mut parts = Vec::new();
    if let Some(cells) = output.cells() {
        parts.push(format!("[cell] {} [/cell]", cells.join(cell_delimiter)));
    }
    if let Some(answer) = output.answer() {
        parts.push(format!("[answer] {answer} [/answer]"));
    }
    parts.join(" ")
}

/// How strictly decoder-side text is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseMode {
    /// The text must match the target grammar exactly. For validating
    /// constructed training targets.
    Strict,
    /// Salvage the first well-formed spans; never fails. For scoring model
    /// predictions.
    Lenient,
}

/// Options for [`parse_output_with`].
#[derive(Debug, Clone)]
pub struct ParseOptions {
    pub mode: ParseMode,
    /// Separator used to split the cell block.
    pub delimiter: String,
    /// The answer kind the caller expects (usually from the task
    /// configuration). Without it, the kind is inferred: canonical binary
    /// labels parse as binary, anything else as short.
    pub expected_kind: Option<AnswerKind>,
}

impl ParseOptions {
    pub fn new(mode: ParseMode) -> ParseOptions {
        ParseOptions {
            mode,
            delimiter: DEFAULT_CELL_DELIMITER.to_string(),
            expected_kind: None,
        }
    }

    pub fn expecting(mode: ParseMode, kind: Option<AnswerKind>) -> ParseOptions {
        ParseOptions {
            expected_kind: kind,
            ..ParseOptions::new(mode)
        }
    }
}

/// Parses decoder-side text with the default delimiter and inferred answer
/// kind. See [`parse_output_with`].
pub fn parse_output(text: &str, mode: ParseMode) -> Result<StructuredOutput, MarkupError> {
    parse_output_with(text, &ParseOptions::new(mode))
}

/// Parses decoder-side text into a [`StructuredOutput`].
///
/// Strict mode accepts exactly an optional cell block followed by an answer
/// block (or a cell block alone) and rejects anything else. Lenient mode
/// extracts the first well-formed `[cell]…[/cell]` and `[answer]…[/answer]`
/// spans, ignores everything outside them, and falls back to treating the
/// whole trimmed text as the answer when no span exists.
///
/// The resulting answer kind honors `expected_kind` except that a binary
/// expectation downgrades to short when the text is not a canonical binary
/// label, so the binary invariant holds on every parsed value.
pub fn parse_output_with(
    text: &str,
    opts: &ParseOptions,
) -> Result<StructuredOutput, MarkupError> {
    match opts.mode {
        ParseMode::Strict => parse_strict(text, opts),
        ParseMode::Lenient => Ok(parse_lenient(text, opts)),
    }
}

fn collapse_ws(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn split_cells(content: &str, delimiter: &str) -> Vec<String> {
    content
        .split(delimiter.trim())
        .map(|c| c.trim().to_string())
        .filter(|c| !c.is_empty())
        .collect()
}

fn resolve_kind(answer: &str, expected: Option<AnswerKind>) -> (String, AnswerKind) {
    let canonical = answer.trim().to_lowercase();
    let is_binary = BINARY_LABELS.contains(&canonical.as_str());
    match expected {
        Some(AnswerKind::Binary) if is_binary => (canonical, AnswerKind::Binary),
        Some(AnswerKind::Binary) => (answer.to_string(), AnswerKind::Short),
        Some(kind) => (answer.to_string(), kind),
        None if is_binary => (canonical, AnswerKind::Binary),
        None => (answer.to_string(), AnswerKind::Short),
    }
}

const TAGS: [&str; 4] = ["[cell]", "[/cell]", "[answer]", "[/answer]"];

fn parse_strict(text: &str, opts: &ParseOptions) -> Result<StructuredOutput, MarkupError> {
    let text = collapse_ws(text);
    for tag in TAGS {
        if text.matches(tag).count() > 1 {
            return Err(MarkupError::MalformedOutput(format!("duplicated {tag}")));
        }
    }

    let mut rest = text.as_str();
    let mut cells = None;
    if let Some(after) = rest.strip_prefix("[cell]") {
        let end = after
            .find("[/cell]")
            .ok_or_else(|| MarkupError::MalformedOutput("unclosed [cell]".into()))?;
        let content = &after[..end];
        if content.contains("[answer]") || content.contains("[/answer]") {
            return Err(MarkupError::MalformedOutput("misnested tags".into()));
        }
        let parsed = split_cells(content, &opts.delimiter);
        if parsed.is_empty() {
            return Err(MarkupError::MalformedOutput("empty cell block".into()));
        }
        cells = Some(parsed);
        rest = after[end + "[/cell]".len()..].trim_start();
    }

    if rest.is_empty() {
        return match cells {
            Some(cells) => StructuredOutput::cells_only(cells),
            None => Err(MarkupError::MalformedOutput("no blocks found".into())),
        };
    }

    let inner = rest
        .strip_prefix("[answer]")
        .and_then(|s| s.strip_suffix("[/answer]"))
        .ok_or_else(|| {
            MarkupError::MalformedOutput("expected a single [answer] … [/answer] block".into())
        })?;
    if TAGS.iter().any(|tag| inner.contains(tag)) {
        return Err(MarkupError::MalformedOutput("misnested tags".into()));
    }
    let (answer, kind) = resolve_kind(inner.trim(), opts.expected_kind);
    if opts.expected_kind == Some(AnswerKind::Binary) && kind != AnswerKind::Binary {
        return Err(MarkupError::MalformedOutput(format!(
            "expected a binary answer, got '{answer}'"
        )));
    }
    Ok(StructuredOutput {
        cells,
        answer: Some(answer),
        answer_kind: Some(kind),
    })
}

fn span_between<'a>(text: &'a str, open: &str, close: &str) -> Option<&'a str> {
    let start = text.find(open)? + open.len();
    let len = text[start..].find(close)?;
    Some(&text[start..start + len])
}

fn parse_lenient(text: &str, opts: &ParseOptions) -> StructuredOutput {
    let cells = span_between(text, "[cell]", "[/cell]")
        .map(|content| split_cells(&collapse_ws(content), &opts.delimiter))
        .filter(|cells| !cells.is_empty());
    let answer_span = span_between(text, "[answer]", "[/answer]").map(collapse_ws);

    match (cells, answer_span) {
        (cells, Some(answer)) => {
            let (answer, kind) = resolve_kind(&answer, opts.expected_kind);
            StructuredOutput {
                cells,
                answer: Some(answer),
                answer_kind: Some(kind),
            }
        }
        (Some(cells), None) => StructuredOutput {
            cells: Some(cells),
            answer: None,
            answer_kind: None,
        },
        (None, None) => {
            let (answer, kind) = resolve_kind(&collapse_ws(text), opts.expected_kind);
            StructuredOutput {
                cells: None,
                answer: Some(answer),
                answer_kind: Some(kind),
            }
        }
    }
}

/// Parses the leading configuration segments of an encoder input, returning
/// the reconstructed configuration (including ablated forms) and the
/// unconsumed payload remainder.
pub fn parse_prefix(text: &str) -> Result<(TaskConfig, String), MarkupError> {
    let mut task: Option<TaskType> = None;
    let mut dataset: Option<String> = None;
    let mut inputs: Vec<IoType> = Vec::new();
    let mut outputs: Vec<IoType> = Vec::new();
    let mut singular = false;
    // segment kinds must appear in fixed order: task, dataset, inputs, outputs;
    // task and dataset at most once
    let mut stage: i8 = -1;
    let mut consumed = 0;

    loop {
        let rest = &text[consumed..];
        let skipped = rest.len() - rest.trim_start().len();
        let seg_start = consumed + skipped;
        let rest = &text[seg_start..];
        if !rest.starts_with('[') {
            break;
        }
        let Some(end) = rest.find(']') else { break };
        let Some((label, value)) = rest[1..end].split_once(": ") else {
            break; // a payload tag like [query]
        };
        let next_stage = match label {
            "Task" => 0,
            "Dataset" => 1,
            "Input" => 2,
            "Output" => 3,
            _ => break, // unknown segment: payload starts here
        };
        let repeatable = next_stage >= 2;
        if next_stage < stage || (next_stage == stage && !repeatable) {
            return Err(MarkupError::MalformedPrefix(format!(
                "[{label}: …] segment out of order"
            )));
        }
        stage = next_stage;
        match label {
            "Task" => task = Some(TaskType::parse(value).map_err(MarkupError::InvalidConfig)?),
            "Dataset" => dataset = Some(value.to_string()),
            "Input" => {
                let (ty, _) = IoType::parse(value).map_err(MarkupError::InvalidConfig)?;
                inputs.push(ty);
            }
            "Output" => {
                let (ty, s) = IoType::parse(value).map_err(MarkupError::InvalidConfig)?;
                singular |= s;
                outputs.push(ty);
            }
            _ => unreachable!(),
        }
        consumed = seg_start + end + 1;
    }

    if stage < 0 {
        return Err(MarkupError::MalformedPrefix(
            "text does not start with a configuration segment".into(),
        ));
    }
    let config = TaskConfig::from_parts(task, dataset, inputs, outputs, singular, true)?;
    Ok((config, text[consumed..].trim_start().to_string()))
}
