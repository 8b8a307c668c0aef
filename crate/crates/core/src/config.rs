//! Task configurations: compositional prompt prefixes naming a task type,
//! an optional dataset, and ordered input/output types.
//!
//! A [`TaskConfig`] renders to a deterministic prefix string of bracketed
//! segments, e.g.
//!
//! ```text
//! [Task: QA] [Dataset: WikiSQL] [Input: query] [Input: table] [Output: cells] [Output: short answer]
//! ```
//!
//! Configurations for datasets unseen at training time are composed without a
//! dataset segment. Ablation support removes individual facets (the dataset,
//! the task type, single input/output types, or whole segment groups) so that
//! degraded prefixes can be produced for controlled experiments.

use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// The end goal of a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskType {
    Qa,
    Summarization,
    FactChecking,
    CellGeneration,
}

impl TaskType {
    /// The label used inside a `[Task: …]` segment.
    pub fn label(&self) -> &'static str {
        match self {
            TaskType::Qa => "QA",
            TaskType::Summarization => "Summarization",
            TaskType::FactChecking => "Fact-checking",
            TaskType::CellGeneration => "Cell-generation",
        }
    }

    /// Parses a label, tolerating case and `-`/`_`/space variation.
    pub fn parse(s: &str) -> Result<TaskType, ConfigError> {
        match normalize_key(s).as_str() {
            "qa" => Ok(TaskType::Qa),
            "summarization" => Ok(TaskType::Summarization),
            "fact checking" | "factchecking" => Ok(TaskType::FactChecking),
            "cell generation" | "cellgeneration" => Ok(TaskType::CellGeneration),
            _ => Err(ConfigError::UnknownLabel(s.to_string())),
        }
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for TaskType {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskType::parse(s)
    }
}

/// An input or output type named by a configuration segment.
///
/// `Query`, `Table` and `Passage` are valid only as inputs. `Cells`,
/// `ShortAnswer`, `LongAnswer` and `BinaryAnswer` are valid only as outputs;
/// `Cells` is additionally allowed as the sole output of a
/// [`TaskType::CellGeneration`] configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IoType {
    Query,
    Table,
    Passage,
    Cells,
    ShortAnswer,
    LongAnswer,
    BinaryAnswer,
}

impl IoType {
    /// The label used inside `[Input: …]`/`[Output: …]` segments.
    pub fn label(&self) -> &'static str {
        match self {
            IoType::Query => "query",
            IoType::Table => "table",
            IoType::Passage => "passage",
            IoType::Cells => "cells",
            IoType::ShortAnswer => "short answer",
            IoType::LongAnswer => "long answer",
            IoType::BinaryAnswer => "binary answer",
        }
    }

    /// True for types usable on the encoder side.
    pub fn is_input_role(&self) -> bool {
        matches!(self, IoType::Query | IoType::Table | IoType::Passage)
    }

    /// True for the three types that may terminate an output list.
    pub fn is_answer_kind(&self) -> bool {
        matches!(
            self,
            IoType::ShortAnswer | IoType::LongAnswer | IoType::BinaryAnswer
        )
    }

    /// Parses a label, tolerating case and `-`/`_`/space variation.
    ///
    /// The singular spelling `cell` maps to [`IoType::Cells`] with the second
    /// tuple element set, so callers can preserve the surface form.
    pub fn parse(s: &str) -> Result<(IoType, bool), ConfigError> {
        let ty = match normalize_key(s).as_str() {
            "query" => IoType::Query,
            "table" => IoType::Table,
            "passage" => IoType::Passage,
            "cells" => IoType::Cells,
            "cell" => return Ok((IoType::Cells, true)),
            "short answer" => IoType::ShortAnswer,
            "long answer" => IoType::LongAnswer,
            "binary answer" => IoType::BinaryAnswer,
            _ => return Err(ConfigError::UnknownLabel(s.to_string())),
        };
        Ok((ty, false))
    }
}

impl fmt::Display for IoType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for IoType {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        IoType::parse(s).map(|(ty, _)| ty)
    }
}

fn normalize_key(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.trim().chars() {
        match c {
            '-' | '_' => out.push(' '),
            c if c.is_whitespace() => out.push(' '),
            c => out.extend(c.to_lowercase()),
        }
    }
    // collapse internal runs
    let mut collapsed = String::with_capacity(out.len());
    let mut prev_space = false;
    for c in out.chars() {
        if c == ' ' {
            if !prev_space {
                collapsed.push(' ');
            }
            prev_space = true;
        } else {
            collapsed.push(c);
            prev_space = false;
        }
    }
    collapsed.trim().to_string()
}

/// A facet of a configuration that can be removed by [`TaskConfig::ablate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Facet {
    /// The `[Dataset: …]` segment.
    Dataset,
    /// The `[Task: …]` segment.
    TaskType,
    /// Every `[Input: …]` segment.
    Input,
    /// Every `[Output: …]` segment.
    Output,
    /// The `[Input: passage]` segment only.
    InputPassage,
    /// The `[Input: table]` segment only.
    InputTable,
    /// The `[Output: cells]` segment only.
    OutputCells,
}

impl Facet {
    pub fn name(&self) -> &'static str {
        match self {
            Facet::Dataset => "dataset",
            Facet::TaskType => "task_type",
            Facet::Input => "input",
            Facet::Output => "output",
            Facet::InputPassage => "input_passage",
            Facet::InputTable => "input_table",
            Facet::OutputCells => "output_cells",
        }
    }

    /// Parses a facet name; `input:passage` style spellings are accepted.
    pub fn parse(s: &str) -> Result<Facet, ConfigError> {
        match normalize_key(&s.replace(':', " ")).as_str() {
            "dataset" => Ok(Facet::Dataset),
            "task type" | "task" => Ok(Facet::TaskType),
            "input" => Ok(Facet::Input),
            "output" => Ok(Facet::Output),
            "input passage" => Ok(Facet::InputPassage),
            "input table" => Ok(Facet::InputTable),
            "output cells" | "output cell" => Ok(Facet::OutputCells),
            _ => Err(ConfigError::UnknownLabel(s.to_string())),
        }
    }
}

impl fmt::Display for Facet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Facet {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Facet::parse(s)
    }
}

/// Errors from configuration construction and ablation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConfigError {
    /// An output-only type used as input, or vice versa.
    InvalidRole { ty: IoType, used_as_input: bool },
    /// The output list does not end with exactly one answer kind.
    MissingAnswerKind,
    /// A type appears twice in the same list.
    DuplicateType(IoType),
    /// Unknown builtin dataset id.
    UnknownDataset(String),
    /// The facet to ablate is not present in the configuration.
    FacetAbsent(Facet),
    /// A label that names no known task type, io type, or facet.
    UnknownLabel(String),
    /// Dataset names must be non-empty and bracket-free.
    InvalidDatasetName(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::InvalidRole { ty, used_as_input } => {
                let role = if *used_as_input { "input" } else { "output" };
                write!(f, "'{}' is not a valid {role} type", ty.label())
            }
            ConfigError::MissingAnswerKind => write!(
                f,
                "outputs must end with exactly one answer kind (short/long/binary answer), \
                 optionally preceded by 'cells'"
            ),
            ConfigError::DuplicateType(ty) => {
                write!(f, "'{}' appears more than once", ty.label())
            }
            ConfigError::UnknownDataset(id) => write!(f, "unknown builtin dataset id '{id}'"),
            ConfigError::FacetAbsent(facet) => {
                write!(f, "facet '{facet}' is not present in the configuration")
            }
            ConfigError::UnknownLabel(s) => write!(f, "unknown label '{s}'"),
            ConfigError::InvalidDatasetName(s) => {
                write!(f, "invalid dataset name '{s}': must be non-empty and bracket-free")
            }
        }
    }
}

impl std::error::Error for ConfigError {}

/// A compositional task configuration.
///
/// Immutable after construction; all mutating operations return copies.
/// Constructed values always satisfy the role constraints; the answer-kind
/// rule on outputs may only be violated by [`TaskConfig::ablate`], in which
/// case [`TaskConfig::is_ablated`] reports true and the value is accepted for
/// rendering only.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TaskConfig {
    task_type: Option<TaskType>,
    dataset: Option<String>,
    inputs: Vec<IoType>,
    outputs: Vec<IoType>,
    singular_cells: bool,
}

impl TaskConfig {
    /// Builds a validated configuration.
    pub fn new(
        task_type: TaskType,
        dataset: Option<String>,
        inputs: Vec<IoType>,
        outputs: Vec<IoType>,
    ) -> Result<TaskConfig, ConfigError> {
        let config = TaskConfig {
            task_type: Some(task_type),
            dataset,
            inputs,
            outputs,
            singular_cells: false,
        };
        config.validate(false)?;
        Ok(config)
    }

    /// Composes a configuration for a dataset unseen at training time: the
    /// dataset segment is omitted, everything else as [`TaskConfig::new`].
    pub fn for_unseen(
        task_type: TaskType,
        inputs: Vec<IoType>,
        outputs: Vec<IoType>,
    ) -> Result<TaskConfig, ConfigError> {
        TaskConfig::new(task_type, None, inputs, outputs)
    }

    /// Reconstructs a configuration from parsed parts, accepting the ablated
    /// forms (missing task type, missing or incomplete outputs) when
    /// `allow_ablated` is set. Role and duplicate constraints always apply.
    pub(crate) fn from_parts(
        task_type: Option<TaskType>,
        dataset: Option<String>,
        inputs: Vec<IoType>,
        outputs: Vec<IoType>,
        singular_cells: bool,
        allow_ablated: bool,
    ) -> Result<TaskConfig, ConfigError> {
        let config = TaskConfig {
            task_type,
            dataset,
            inputs,
            outputs,
            singular_cells,
        };
        config.validate(allow_ablated)?;
        Ok(config)
    }

    fn validate(&self, allow_ablated: bool) -> Result<(), ConfigError> {
        if let Some(name) = &self.dataset {
            if name.is_empty() || name.contains('[') || name.contains(']') {
                return Err(ConfigError::InvalidDatasetName(name.clone()));
            }
        }
        for (i, ty) in self.inputs.iter().enumerate() {
            if !ty.is_input_role() {
                return Err(ConfigError::InvalidRole {
                    ty: *ty,
                    used_as_input: true,
                });
            }
            if self.inputs[..i].contains(ty) {
                return Err(ConfigError::DuplicateType(*ty));
            }
        }
        for (i, ty) in self.outputs.iter().enumerate() {
            if ty.is_input_role() {
                return Err(ConfigError::InvalidRole {
                    ty: *ty,
                    used_as_input: false,
                });
            }
            if self.outputs[..i].contains(ty) {
                return Err(ConfigError::DuplicateType(*ty));
            }
        }
        if !allow_ablated {
            if self.task_type.is_none() || !self.outputs_complete() {
                return Err(ConfigError::MissingAnswerKind);
            }
        }
        Ok(())
    }

    /// True when the output list satisfies the answer-kind rule: it ends with
    /// exactly one answer kind, optionally preceded by `cells` — or it is the
    /// sole-`cells` output of a cell-generation task.
    fn outputs_complete(&self) -> bool {
        if self.outputs == [IoType::Cells] && self.task_type == Some(TaskType::CellGeneration) {
            return true;
        }
        match self.outputs.split_last() {
            Some((last, rest)) => {
                last.is_answer_kind() && rest.iter().all(|ty| *ty == IoType::Cells)
            }
            None => false,
        }
    }

    /// True for configurations only producible by ablation: the task segment
    /// is gone or the outputs no longer satisfy the answer-kind rule. Such
    /// values are accepted for rendering only.
    pub fn is_ablated(&self) -> bool {
        self.task_type.is_none() || !self.outputs_complete()
    }

    pub fn task_type(&self) -> Option<TaskType> {
        self.task_type
    }

    pub fn dataset(&self) -> Option<&str> {
        self.dataset.as_deref()
    }

    pub fn inputs(&self) -> &[IoType] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[IoType] {
        &self.outputs
    }

    /// The answer kind the decoder must terminate with, if any.
    pub fn final_output(&self) -> Option<IoType> {
        self.outputs.last().copied()
    }

    /// Whether the `cells` output renders with the singular label `cell`.
    pub fn renders_singular_cell(&self) -> bool {
        self.singular_cells
    }

    /// Renders the deterministic prefix string: task, dataset, inputs and
    /// outputs as bracketed segments in fixed order, single-space separated.
    pub fn render_prefix(&self) -> String {
        let mut segments: Vec<String> = Vec::new();
        if let Some(task) = self.task_type {
            segments.push(format!("[Task: {}]", task.label()));
        }
        if let Some(dataset) = &self.dataset {
            segments.push(format!("[Dataset: {dataset}]"));
        }
        for ty in &self.inputs {
            segments.push(format!("[Input: {}]", ty.label()));
        }
        for ty in &self.outputs {
            let label = if *ty == IoType::Cells && self.singular_cells {
                "cell"
            } else {
                ty.label()
            };
            segments.push(format!("[Output: {label}]"));
        }
        segments.join(" ")
    }

    /// Returns a copy with the named facet removed.
    pub fn ablate(&self, facet: Facet) -> Result<TaskConfig, ConfigError> {
        let mut out = self.clone();
        match facet {
            Facet::Dataset => {
                if out.dataset.take().is_none() {
                    return Err(ConfigError::FacetAbsent(facet));
                }
            }
            Facet::TaskType => {
                if out.task_type.take().is_none() {
                    return Err(ConfigError::FacetAbsent(facet));
                }
            }
            Facet::Input => {
                if out.inputs.is_empty() {
                    return Err(ConfigError::FacetAbsent(facet));
                }
                out.inputs.clear();
            }
            Facet::Output => {
                if out.outputs.is_empty() {
                    return Err(ConfigError::FacetAbsent(facet));
                }
                out.outputs.clear();
            }
            Facet::InputPassage => remove_one(&mut out.inputs, IoType::Passage, facet)?,
            Facet::InputTable => remove_one(&mut out.inputs, IoType::Table, facet)?,
            Facet::OutputCells => remove_one(&mut out.outputs, IoType::Cells, facet)?,
        }
        Ok(out)
    }
}

fn remove_one(list: &mut Vec<IoType>, ty: IoType, facet: Facet) -> Result<(), ConfigError> {
    match list.iter().position(|t| *t == ty) {
        Some(pos) => {
            list.remove(pos);
            Ok(())
        }
        None => Err(ConfigError::FacetAbsent(facet)),
    }
}

impl fmt::Display for TaskConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render_prefix())
    }
}

// JSON shape: {task?, dataset?, inputs[], outputs[], ablated?} with rendered
// labels as values; the singular `cell` spelling survives in `outputs`.
#[derive(Serialize, Deserialize)]
struct ConfigRepr {
    #[serde(skip_serializing_if = "Option::is_none")]
    task: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dataset: Option<String>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ablated: Option<bool>,
}

impl Serialize for TaskConfig {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let repr = ConfigRepr {
            task: self.task_type.map(|t| t.label().to_string()),
            dataset: self.dataset.clone(),
            inputs: self.inputs.iter().map(|t| t.label().to_string()).collect(),
            outputs: self
                .outputs
                .iter()
                .map(|t| {
                    if *t == IoType::Cells && self.singular_cells {
                        "cell".to_string()
                    } else {
                        t.label().to_string()
                    }
                })
                .collect(),
            ablated: if self.is_ablated() { Some(true) } else { None },
        };
        repr.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TaskConfig {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<TaskConfig, D::Error> {
        let repr = ConfigRepr::deserialize(deserializer)?;
        let task_type = repr
            .task
            .as_deref()
            .map(TaskType::parse)
            .transpose()
            .map_err(D::Error::custom)?;
        let mut inputs = Vec::new();
        for label in &repr.inputs {
            let (ty, _) = IoType::parse(label).map_err(D::Error::custom)?;
            inputs.push(ty);
        }
        let mut outputs = Vec::new();
        let mut singular = false;
        for label in &repr.outputs {
            let (ty, s) = IoType::parse(label).map_err(D::Error::custom)?;
            singular |= s;
            outputs.push(ty);
        }
        let allow_ablated = repr.ablated.unwrap_or(false);
        TaskConfig::from_parts(task_type, repr.dataset, inputs, outputs, singular, allow_ablated)
            .map_err(D::Error::custom)
    }
}

/// The ids of the builtin per-dataset configurations.
pub const BUILTIN_IDS: [&str; 12] = [
    "wikisql",
    "wikisql_answer_only",
    "wikitq",
    "squad",
    "totto",
    "totto_reverse",
    "tabfact",
    "nq_tables",
    "hybridqa",
    "tatqa",
    "fetaqa",
    "feverous",
];

/// Returns the builtin configuration for one of the known dataset ids.
///
/// Training datasets carry their dataset segment; test-only datasets omit it.
/// The ToTTo-Reverse configuration renders its output with the singular label
/// `cell`, matching the surface form used by that dataset's templates.
pub fn builtin_config(dataset_id: &str) -> Result<TaskConfig, ConfigError> {
    use IoType::*;
    use TaskType::*;
    let id = normalize_key(dataset_id).replace(' ', "_");
    let (task, dataset, inputs, outputs, singular) = match id.as_str() {
        "wikisql" => (Qa, Some("WikiSQL"), vec![Query, Table], vec![Cells, ShortAnswer], false),
        "wikisql_answer_only" => (Qa, Some("WikiSQL"), vec![Query, Table], vec![ShortAnswer], false),
        "wikitq" => (Qa, Some("WikiTQ"), vec![Query, Table], vec![ShortAnswer], false),
        "squad" => (Qa, Some("SQuAD"), vec![Query, Passage], vec![ShortAnswer], false),
        "totto" => (Summarization, Some("ToTTo"), vec![], vec![Cells, LongAnswer], false),
        "totto_reverse" => (CellGeneration, None, vec![Query, Table], vec![Cells], true),
        "tabfact" => (FactChecking, Some("TabFact"), vec![Query, Table], vec![BinaryAnswer], false),
        "nq_tables" => (Qa, None, vec![Query, Table], vec![ShortAnswer], false),
        "hybridqa" => (Qa, None, vec![Query, Table, Passage], vec![ShortAnswer], false),
        "tatqa" => (Qa, None, vec![Query, Table, Passage], vec![ShortAnswer], false),
        "fetaqa" => (Summarization, None, vec![Query, Table], vec![Cells, LongAnswer], false),
        "feverous" => (
            FactChecking,
            None,
            vec![Query, Table, Passage],
            vec![BinaryAnswer],
            false,
        ),
        _ => return Err(ConfigError::UnknownDataset(dataset_id.to_string())),
    };
    TaskConfig::from_parts(
        Some(task),
        dataset.map(String::from),
        inputs,
        outputs,
        singular,
        false,
    )
}
