//! Execution outcomes of SQL queries: normalized cells, row multisets, and
//! the error sentinel.
//!
//! A failed execution is data, not an exception: it yields a `ResultSet`
//! with `Error` status and size `-1`, which downstream relation checks treat
//! as its own comparison outcome.

use serde::{Deserialize, Serialize};

/// Absolute tolerance used when both cells parse as numbers.
pub const NUMERIC_TOLERANCE: f64 = 1e-9;

/// Token a SQL NULL normalizes to; distinguished from any text value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "CellRepr", into = "CellRepr")]
pub enum NormCell {
    Null,
    Value {
        raw: String,
        /// Cached numeric reading of `raw`, when it parses.
        #[serde(skip)]
        num: Option<f64>,
    },
}

/// Wire form of a cell: JSON `null` or the raw string.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum CellRepr {
    Null(Option<()>),
    Text(String),
}

impl From<CellRepr> for NormCell {
    fn from(r: CellRepr) -> Self {
        match r {
            CellRepr::Null(_) => NormCell::Null,
            CellRepr::Text(s) => NormCell::value(s),
        }
    }
}

impl From<NormCell> for CellRepr {
    fn from(c: NormCell) -> Self {
        match c {
            NormCell::Null => CellRepr::Null(None),
            NormCell::Value { raw, .. } => CellRepr::Text(raw),
        }
    }
}

impl NormCell {
    /// Normalizes a non-null value: trims whitespace and caches a numeric
    /// reading when the trimmed text parses as a float.
    pub fn value(raw: impl Into<String>) -> Self {
        let raw = raw.into().trim().to_owned();
        let num = raw.parse::<f64>().ok().filter(|n| n.is_finite());
        NormCell::Value { raw, num }
    }

    pub fn integer(v: i64) -> Self {
        NormCell::Value { raw: v.to_string(), num: Some(v as f64) }
    }

    pub fn real(v: f64) -> Self {
        NormCell::Value { raw: v.to_string(), num: v.is_finite().then_some(v) }
    }
}

/// Cell equality: null matches null; two numeric readings compare within
/// [`NUMERIC_TOLERANCE`]; everything else compares as trimmed text.
pub fn cells_equal(a: &NormCell, b: &NormCell) -> bool {
    match (a, b) {
        (NormCell::Null, NormCell::Null) => true,
        (NormCell::Null, _) | (_, NormCell::Null) => false,
        (NormCell::Value { raw: ra, num: na }, NormCell::Value { raw: rb, num: nb }) => {
            match (na, nb) {
                (Some(x), Some(y)) => (x - y).abs() <= NUMERIC_TOLERANCE,
                _ => ra == rb,
            }
        }
    }
}

pub type Row = Vec<NormCell>;

pub fn rows_equal(a: &Row, b: &Row) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| cells_equal(x, y))
}

/// Execution status of one SQL query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExecStatus {
    Ok,
    Error(String),
}

/// Result of executing one query: a row multiset, or an error with the `-1`
/// size sentinel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultSet {
    pub status: ExecStatus,
    pub rows: Vec<Row>,
    pub size: i64,
}

impl ResultSet {
    pub fn ok(rows: Vec<Row>) -> Self {
        let size = rows.len() as i64;
        ResultSet { status: ExecStatus::Ok, rows, size }
    }

    pub fn error(message: impl Into<String>) -> Self {
        ResultSet { status: ExecStatus::Error(message.into()), rows: Vec::new(), size: -1 }
    }

    pub fn is_error(&self) -> bool {
        matches!(self.status, ExecStatus::Error(_))
    }

    /// Column count observed on the first row; `None` when no rows came back.
    pub fn column_count(&self) -> Option<usize> {
        self.rows.first().map(|r| r.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructors_enforce_size_invariant() {
        let ok = ResultSet::ok(vec![vec![NormCell::integer(1)], vec![NormCell::integer(2)]]);
        assert_eq!(ok.size, 2);
        assert_eq!(ok.status, ExecStatus::Ok);

        let err = ResultSet::error("no such table: students");
        assert_eq!(err.size, -1);
        assert!(err.rows.is_empty());
    }

    #[test]
    fn numeric_cells_compare_with_tolerance() {
        let a = NormCell::value("1.0");
        let b = NormCell::integer(1);
        assert!(cells_equal(&a, &b));
        let c = NormCell::value("1.0000000001"); // within 1e-9
        assert!(cells_equal(&a, &c));
        let d = NormCell::value("1.001");
        assert!(!cells_equal(&a, &d));
    }

    #[test]
    fn text_cells_compare_after_trim() {
        assert!(cells_equal(&NormCell::value("  abc "), &NormCell::value("abc")));
        assert!(!cells_equal(&NormCell::value("abc"), &NormCell::value("abd")));
    }

    #[test]
    fn null_is_distinguished() {
        assert!(cells_equal(&NormCell::Null, &NormCell::Null));
        assert!(!cells_equal(&NormCell::Null, &NormCell::value("NULL")));
        assert!(!cells_equal(&NormCell::Null, &NormCell::value("")));
    }

    #[test]
    fn cell_serde_round_trip_restores_numeric_reading() {
        let cells: Row = vec![NormCell::Null, NormCell::integer(42), NormCell::value("x")];
        let json = serde_json::to_string(&cells).unwrap();
        let back: Row = serde_json::from_str(&json).unwrap();
        assert!(rows_equal(&cells, &back));
        match &back[1] {
            NormCell::Value { num, .. } => assert_eq!(*num, Some(42.0)),
            _ => panic!("expected value"),
        }
    }
}
