//! Shared domain types: questions, mutation traces, schemas, linkings,
//! verdicts, and the evaluation counters.
//!
//! Everything here is an immutable value type, safe to share across worker
//! threads. Construction enforces the cheap structural invariants; richer
//! validation (pair locality, lexicon membership) lives in the mutation
//! module.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::mr::{MrCategory, MrFamily, MrId};

// ---------------------------------------------------------------------------
// Name normalization
// ---------------------------------------------------------------------------

/// Canonicalizes a schema identifier: trim, strip surrounding quote
/// characters (double, single, backtick), lowercase.
///
/// Generator output quotes and cases identifiers inconsistently; the linking
/// comparison needs one canonical spelling.
pub fn normalize_name(raw: &str) -> String {
    let trimmed = raw.trim();
    let stripped = trimmed.trim_matches(|c| c == '"' || c == '\'' || c == '`');
    stripped.trim().to_lowercase()
}

// ---------------------------------------------------------------------------
// Questions and mutation traces
// ---------------------------------------------------------------------------

/// One natural-language question bound to a database.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceCase {
    pub case_id: String,
    pub question: String,
    pub db_ref: String,
    /// External knowledge supplied alongside the question, when the dataset
    /// provides it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<String>,
    /// Ground-truth "hallucination present" label; consumed only by
    /// evaluation, never by detection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_label: Option<bool>,
}

impl SourceCase {
    pub fn new(case_id: impl Into<String>, question: impl Into<String>, db_ref: impl Into<String>) -> Self {
        SourceCase {
            case_id: case_id.into(),
            question: question.into(),
            db_ref: db_ref.into(),
            evidence: None,
            truth_label: None,
        }
    }
}

/// Byte span into a source question, `start..end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharSpan {
    pub start: usize,
    pub end: usize,
}

impl CharSpan {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        CharSpan { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// Record of exactly what a mutation changed.
///
/// For substitutions the span addresses the replaced fragment; for removals
/// the deleted fragment; for insertions (PI, SC) the span is empty and marks
/// the insertion point. Schema-renaming relations carry the rename map
/// instead of a text edit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationTrace {
    pub fragment_original: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fragment_replacement: Option<String>,
    pub char_span: CharSpan,
    /// Old name -> new name. Table keys are bare (`student`), column keys are
    /// qualified by the original table (`student.age`). Present only for DSR
    /// and DR.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema_rename_map: Option<BTreeMap<String, String>>,
}

/// A source question paired with one relation's follow-up question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionPair {
    pub case_ref: String,
    pub mr: MrId,
    pub source_question: String,
    pub followup_question: String,
    pub trace: MutationTrace,
    /// Differs from the source database only for DSR/DR, which point at a
    /// materialized schema variant.
    pub followup_db_ref: String,
}

// ---------------------------------------------------------------------------
// Schemas
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDescriptor {
    pub name: String,
    pub declared_type: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableDescriptor {
    pub name: String,
    pub columns: Vec<ColumnDescriptor>,
}

/// A `table.column` endpoint.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ColumnRef {
    pub table: String,
    pub column: String,
}

impl ColumnRef {
    pub fn new(table: impl Into<String>, column: impl Into<String>) -> Self {
        ColumnRef { table: table.into(), column: column.into() }
    }

    pub fn normalized(table: &str, column: &str) -> Self {
        ColumnRef { table: normalize_name(table), column: normalize_name(column) }
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.table, self.column)
    }
}

/// Declared foreign-key edge `from -> to`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForeignKey {
    pub from: ColumnRef,
    pub to: ColumnRef,
}

/// Structure of one database: tables, columns, keys.
///
/// All names are stored normalized (lowercase, unquoted); SQLite resolves
/// identifiers case-insensitively so execution is unaffected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaDescriptor {
    pub db_ref: String,
    pub tables: Vec<TableDescriptor>,
    pub primary_keys: Vec<ColumnRef>,
    pub foreign_keys: Vec<ForeignKey>,
}

/// Errors raised by structural validation of descriptors and linkings.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("duplicate table name {0:?}")]
    DuplicateTable(String),
    #[error("duplicate column {0} within a table")]
    DuplicateColumn(ColumnRef),
    #[error("foreign-key endpoint {0} does not exist")]
    DanglingForeignKey(ColumnRef),
    #[error("skip verdict requires a non-empty reason")]
    EmptySkipReason,
}

impl SchemaDescriptor {
    pub fn table(&self, name: &str) -> Option<&TableDescriptor> {
        let wanted = normalize_name(name);
        self.tables.iter().find(|t| t.name == wanted)
    }

    pub fn has_column(&self, col: &ColumnRef) -> bool {
        self.table(&col.table)
            .map(|t| t.columns.iter().any(|c| c.name == col.column))
            .unwrap_or(false)
    }

    /// Checks name uniqueness and foreign-key endpoint existence.
    pub fn validate(&self) -> Result<(), ModelError> {
        let mut seen = BTreeSet::new();
        for t in &self.tables {
            if !seen.insert(t.name.clone()) {
                return Err(ModelError::DuplicateTable(t.name.clone()));
            }
            let mut cols = BTreeSet::new();
            for c in &t.columns {
                if !cols.insert(c.name.clone()) {
                    return Err(ModelError::DuplicateColumn(ColumnRef::new(&t.name, &c.name)));
                }
            }
        }
        for fk in &self.foreign_keys {
            for end in [&fk.from, &fk.to] {
                if !self.has_column(end) {
                    return Err(ModelError::DanglingForeignKey(end.clone()));
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Schema linking
// ---------------------------------------------------------------------------

/// Unordered join edge between two column endpoints, stored sorted so the
/// two orientations compare equal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct JoinEdge(ColumnRef, ColumnRef);

impl JoinEdge {
    pub fn new(a: ColumnRef, b: ColumnRef) -> Self {
        if a <= b {
            JoinEdge(a, b)
        } else {
            JoinEdge(b, a)
        }
    }

    pub fn endpoints(&self) -> (&ColumnRef, &ColumnRef) {
        (&self.0, &self.1)
    }
}

/// The stage-1 artifact: which schema elements a question was mapped onto.
///
/// Insertion normalizes every name and keeps the containment invariants
/// satisfied (a column's table is always present in `tables`, and so are the
/// tables of join endpoints).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SchemaLinking {
    pub tables: BTreeSet<String>,
    pub columns: BTreeSet<ColumnRef>,
    pub joins: BTreeSet<JoinEdge>,
}

impl SchemaLinking {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_table(&mut self, name: &str) {
        let n = normalize_name(name);
        if !n.is_empty() {
            self.tables.insert(n);
        }
    }

    pub fn add_column(&mut self, table: &str, column: &str) {
        let col = ColumnRef::normalized(table, column);
        if col.table.is_empty() || col.column.is_empty() {
            return;
        }
        self.tables.insert(col.table.clone());
        self.columns.insert(col);
    }

    pub fn add_join(&mut self, a: ColumnRef, b: ColumnRef) {
        let a = ColumnRef::normalized(&a.table, &a.column);
        let b = ColumnRef::normalized(&b.table, &b.column);
        if a.table.is_empty() || b.table.is_empty() {
            return;
        }
        self.tables.insert(a.table.clone());
        self.tables.insert(b.table.clone());
        self.joins.insert(JoinEdge::new(a, b));
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty() && self.columns.is_empty() && self.joins.is_empty()
    }

    /// Compact single-line rendering, used in verdict details and prompts.
    pub fn summary(&self) -> String {
        let tables: Vec<_> = self.tables.iter().cloned().collect();
        let cols: Vec<_> = self.columns.iter().map(|c| c.to_string()).collect();
        let joins: Vec<_> = self
            .joins
            .iter()
            .map(|j| {
                let (a, b) = j.endpoints();
                format!("{a}={b}")
            })
            .collect();
        format!(
            "tables[{}] columns[{}] joins[{}]",
            tables.join(","),
            cols.join(","),
            joins.join(",")
        )
    }
}

// ---------------------------------------------------------------------------
// SQL artifacts
// ---------------------------------------------------------------------------

/// Which side of a metamorphic comparison a SQL query belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SqlSide {
    SourceSide,
    FollowupSide,
}

/// A SQL query extracted from a generator response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SqlArtifact {
    pub sql_text: String,
    pub stage: SqlSide,
    /// Hash of the exact prompt that produced this query.
    pub prompt_digest: String,
}

// ---------------------------------------------------------------------------
// Verdicts
// ---------------------------------------------------------------------------

/// Outcome of checking one relation on one case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerdictOutcome {
    Pass,
    Violation,
    /// Expectation was met only in a way degenerate data can legitimately
    /// produce; reported separately, never counted as a detection.
    Suspect,
    /// The relation could not be checked; carries a non-empty reason.
    Skip(String),
}

impl VerdictOutcome {
    pub fn skip(reason: impl Into<String>) -> Result<Self, ModelError> {
        let reason = reason.into();
        if reason.trim().is_empty() {
            return Err(ModelError::EmptySkipReason);
        }
        Ok(VerdictOutcome::Skip(reason))
    }

    pub fn is_violation(&self) -> bool {
        matches!(self, VerdictOutcome::Violation)
    }
}

impl fmt::Display for VerdictOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VerdictOutcome::Pass => f.write_str("pass"),
            VerdictOutcome::Violation => f.write_str("violation"),
            VerdictOutcome::Suspect => f.write_str("suspect"),
            VerdictOutcome::Skip(r) => write!(f, "skip({r})"),
        }
    }
}

/// Per-(case, relation, stage) check result.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub case_ref: String,
    pub mr: MrId,
    pub stage: MrFamily,
    pub outcome: VerdictOutcome,
    pub detail: String,
}

impl Verdict {
    pub fn new(
        case_ref: impl Into<String>,
        mr: MrId,
        outcome: VerdictOutcome,
        detail: impl Into<String>,
    ) -> Self {
        Verdict {
            case_ref: case_ref.into(),
            mr,
            stage: mr.family(),
            outcome,
            detail: detail.into(),
        }
    }
}

// ---------------------------------------------------------------------------
// Evaluation counters
// ---------------------------------------------------------------------------

/// Counts of detections (violations) plus the separately-reported suspect
/// and skip totals.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DetectionTally {
    /// Total hallucinations detected: the number of violation verdicts.
    pub hdn_total: u64,
    pub per_mr: BTreeMap<MrId, u64>,
    pub per_family: BTreeMap<MrFamily, u64>,
    pub per_category: BTreeMap<MrCategory, u64>,
    pub pass_total: u64,
    pub suspect_total: u64,
    pub skip_total: u64,
}

impl Add for DetectionTally {
    type Output = DetectionTally;

    fn add(mut self, rhs: DetectionTally) -> DetectionTally {
        self.hdn_total += rhs.hdn_total;
        self.pass_total += rhs.pass_total;
        self.suspect_total += rhs.suspect_total;
        self.skip_total += rhs.skip_total;
        for (k, v) in rhs.per_mr {
            *self.per_mr.entry(k).or_insert(0) += v;
        }
        for (k, v) in rhs.per_family {
            *self.per_family.entry(k).or_insert(0) += v;
        }
        for (k, v) in rhs.per_category {
            *self.per_category.entry(k).or_insert(0) += v;
        }
        self
    }
}

/// Binary classification counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    #[serde(rename = "tp")]
    pub true_positive: u64,
    #[serde(rename = "fp")]
    pub false_positive: u64,
    #[serde(rename = "fn")]
    pub false_negative: u64,
    #[serde(rename = "tn")]
    pub true_negative: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.true_positive + self.false_positive + self.false_negative + self.true_negative
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_strips_quotes_and_case() {
        assert_eq!(normalize_name("\"Student\""), "student");
        assert_eq!(normalize_name("  `Major`  "), "major");
        assert_eq!(normalize_name("'Has_Pet'"), "has_pet");
        assert_eq!(normalize_name("plain"), "plain");
    }

    #[test]
    fn linking_insertion_keeps_invariants() {
        let mut l = SchemaLinking::new();
        l.add_column("\"Student\"", "\"Major\"");
        assert!(l.tables.contains("student"));
        assert!(l.columns.contains(&ColumnRef::new("student", "major")));

        l.add_join(ColumnRef::new("Has_Pet", "StuID"), ColumnRef::new("Student", "StuID"));
        assert!(l.tables.contains("has_pet"));
        // both orientations of an edge are the same edge
        let e1 = JoinEdge::new(ColumnRef::new("a", "x"), ColumnRef::new("b", "y"));
        let e2 = JoinEdge::new(ColumnRef::new("b", "y"), ColumnRef::new("a", "x"));
        assert_eq!(e1, e2);
    }

    #[test]
    fn skip_requires_reason() {
        assert!(VerdictOutcome::skip("  ").is_err());
        assert!(VerdictOutcome::skip("missing fixture").is_ok());
    }

    #[test]
    fn schema_validation_catches_dangling_fk() {
        let schema = SchemaDescriptor {
            db_ref: "d".into(),
            tables: vec![TableDescriptor {
                name: "t".into(),
                columns: vec![ColumnDescriptor { name: "a".into(), declared_type: "int".into() }],
            }],
            primary_keys: vec![],
            foreign_keys: vec![ForeignKey {
                from: ColumnRef::new("t", "a"),
                to: ColumnRef::new("u", "b"),
            }],
        };
        assert!(matches!(schema.validate(), Err(ModelError::DanglingForeignKey(_))));
    }

    #[test]
    fn tally_add_merges_maps() {
        let mut a = DetectionTally::default();
        a.hdn_total = 1;
        a.per_mr.insert(MrId::ESR, 1);
        let mut b = DetectionTally::default();
        b.hdn_total = 2;
        b.per_mr.insert(MrId::ESR, 1);
        b.per_mr.insert(MrId::PI, 1);
        let c = a + b;
        assert_eq!(c.hdn_total, 3);
        assert_eq!(c.per_mr[&MrId::ESR], 2);
        assert_eq!(c.per_mr[&MrId::PI], 1);
    }
}
