//! Dataset and database access: manifest loading, mutated-pair persistence,
//! schema introspection, read-only query handles, and materialization of
//! renamed schema variants.
//!
//! On-disk layout follows the common distribution format: a JSON-lines
//! manifest next to a `database/` directory holding
//! `<db_ref>/<db_ref>.sqlite` files.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};

use crate::model::{
    normalize_name, ColumnDescriptor, ColumnRef, ForeignKey, QuestionPair, SchemaDescriptor,
    SourceCase, TableDescriptor,
};
use crate::result::{NormCell, ResultSet, Row};

/// Default bound on rows collected from one query.
pub const DEFAULT_ROW_CAP: usize = 10_000;
/// Default statement timeout.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: duplicate case_id {case_id:?}")]
    DuplicateCaseId {
        path: String,
        line: usize,
        case_id: String,
    },
    #[error("{path}:{line}: question is empty after trimming (case {case_id:?})")]
    EmptyQuestion {
        path: String,
        line: usize,
        case_id: String,
    },
    #[error("database directory for {db_ref:?} not found under {root}")]
    MissingDatabase { db_ref: String, root: String },
    #[error("failed to open database {db_ref:?}: {message}")]
    OpenFailure { db_ref: String, message: String },
    #[error("schema introspection failed for {db_ref:?}: {message}")]
    Introspection { db_ref: String, message: String },
    #[error("variant materialization failed for {db_ref:?}: {message}")]
    Materialize { db_ref: String, message: String },
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

/// A loaded question dataset plus the root its databases live under.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub dataset_name: String,
    pub cases: Vec<SourceCase>,
    pub db_root: PathBuf,
}

/// Loads a JSON-lines manifest; databases are expected under the sibling
/// `database/` directory.
pub fn load_dataset(path: &Path) -> Result<DatasetManifest, DatasetError> {
    let root = path.parent().unwrap_or_else(|| Path::new(".")).join("database");
    load_dataset_with_root(path, &root)
}

/// Loads a JSON-lines manifest with an explicit database root.
pub fn load_dataset_with_root(path: &Path, db_root: &Path) -> Result<DatasetManifest, DatasetError> {
    let display = path.display().to_string();
    let file = fs::File::open(path).map_err(|source| DatasetError::Io {
        path: display.clone(),
        source,
    })?;
    let reader = BufReader::new(file);

    let mut cases = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|source| DatasetError::Io {
            path: display.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let case: SourceCase =
            serde_json::from_str(&line).map_err(|e| DatasetError::Malformed {
                path: display.clone(),
                line: lineno,
                message: e.to_string(),
            })?;
        if case.question.trim().is_empty() {
            return Err(DatasetError::EmptyQuestion {
                path: display.clone(),
                line: lineno,
                case_id: case.case_id,
            });
        }
        if !seen.insert(case.case_id.clone()) {
            return Err(DatasetError::DuplicateCaseId {
                path: display.clone(),
                line: lineno,
                case_id: case.case_id,
            });
        }
        let db_dir = db_root.join(&case.db_ref);
        if !db_dir.is_dir() {
            return Err(DatasetError::MissingDatabase {
                db_ref: case.db_ref,
                root: db_root.display().to_string(),
            });
        }
        cases.push(case);
    }

    let dataset_name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_owned());
    Ok(DatasetManifest {
        dataset_name,
        cases,
        db_root: db_root.to_path_buf(),
    })
}

/// Writes a manifest back out as JSON lines (used by fixtures and round-trip
/// tests; detection itself never rewrites datasets).
pub fn persist_dataset(cases: &[SourceCase], path: &Path) -> Result<(), DatasetError> {
    write_json_lines(cases, path)
}

/// Persists validated question pairs as JSON lines with embedded traces.
pub fn persist_mutated_dataset(pairs: &[QuestionPair], path: &Path) -> Result<(), DatasetError> {
    write_json_lines(pairs, path)
}

/// Loads question pairs written by [`persist_mutated_dataset`].
pub fn load_mutated_dataset(path: &Path) -> Result<Vec<QuestionPair>, DatasetError> {
    let display = path.display().to_string();
    let file = fs::File::open(path).map_err(|source| DatasetError::Io {
        path: display.clone(),
        source,
    })?;
    let mut pairs = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| DatasetError::Io {
            path: display.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: QuestionPair =
            serde_json::from_str(&line).map_err(|e| DatasetError::Malformed {
                path: display.clone(),
                line: idx + 1,
                message: e.to_string(),
            })?;
        pairs.push(pair);
    }
    Ok(pairs)
}

fn write_json_lines<T: Serialize>(items: &[T], path: &Path) -> Result<(), DatasetError> {
    let display = path.display().to_string();
    let mut out = fs::File::create(path).map_err(|source| DatasetError::Io {
        path: display.clone(),
        source,
    })?;
    for item in items {
        let line = serde_json::to_string(item).expect("domain types serialize");
        writeln!(out, "{line}").map_err(|source| DatasetError::Io {
            path: display.clone(),
            source,
        })?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// SQLite store
// ---------------------------------------------------------------------------

/// Execution limits applied to every query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecLimits {
    pub timeout: Duration,
    pub row_cap: usize,
}

impl Default for ExecLimits {
    fn default() -> Self {
        ExecLimits { timeout: DEFAULT_TIMEOUT, row_cap: DEFAULT_ROW_CAP }
    }
}

/// Resolves `db_ref`s against a database root directory.
#[derive(Debug, Clone)]
pub struct SqliteStore {
    pub db_root: PathBuf,
}

/// Read-only connection to one database with enforced limits.
///
/// Not shareable across workers; each worker opens its own handle.
pub struct DatabaseHandle {
    pub db_ref: String,
    conn: Connection,
    limits: ExecLimits,
}

/// Source of schema descriptors, keyed by database reference.
pub trait SchemaProvider: Sync {
    fn schema(&self, db_ref: &str) -> Result<SchemaDescriptor, DatasetError>;
}

/// Source of query handles, keyed by database reference.
pub trait DbOpener: Sync {
    fn open(&self, db_ref: &str) -> Result<DatabaseHandle, DatasetError>;
    fn limits(&self) -> ExecLimits {
        ExecLimits::default()
    }
}

impl SqliteStore {
    pub fn new(db_root: impl Into<PathBuf>) -> Self {
        SqliteStore { db_root: db_root.into() }
    }

    pub fn db_path(&self, db_ref: &str) -> PathBuf {
        self.db_root.join(db_ref).join(format!("{db_ref}.sqlite"))
    }

    /// Opens a read-only handle with the given limits.
    pub fn open_database(
        &self,
        db_ref: &str,
        limits: ExecLimits,
    ) -> Result<DatabaseHandle, DatasetError> {
        let path = self.db_path(db_ref);
        if !path.is_file() {
            return Err(DatasetError::OpenFailure {
                db_ref: db_ref.to_owned(),
                message: format!("no database file at {}", path.display()),
            });
        }
        let conn = Connection::open_with_flags(
            &path,
            OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
        )
        .map_err(|e| DatasetError::OpenFailure {
            db_ref: db_ref.to_owned(),
            message: e.to_string(),
        })?;
        conn.pragma_update(None, "query_only", true).map_err(|e| {
            DatasetError::OpenFailure { db_ref: db_ref.to_owned(), message: e.to_string() }
        })?;
        Ok(DatabaseHandle { db_ref: db_ref.to_owned(), conn, limits })
    }

    /// Reads tables, columns, primary keys, and declared foreign keys.
    pub fn load_schema(&self, db_ref: &str) -> Result<SchemaDescriptor, DatasetError> {
        let handle = self.open_database(db_ref, ExecLimits::default())?;
        introspect_schema(&handle.conn, db_ref)
    }

    /// Copies the source database and applies a rename map to the copy,
    /// producing a real variant file that SQL can execute against.
    ///
    /// Column keys in the map are qualified by the original table name
    /// (`student.age`); columns are renamed before tables so the keys stay
    /// resolvable.
    pub fn materialize_variant(
        &self,
        source_ref: &str,
        variant_ref: &str,
        rename_map: &BTreeMap<String, String>,
    ) -> Result<PathBuf, DatasetError> {
        let src = self.db_path(source_ref);
        let dst = self.db_path(variant_ref);
        let err = |message: String| DatasetError::Materialize {
            db_ref: variant_ref.to_owned(),
            message,
        };
        fs::create_dir_all(dst.parent().expect("variant path has a parent"))
            .map_err(|e| err(e.to_string()))?;
        fs::copy(&src, &dst).map_err(|e| err(format!("copy {}: {e}", src.display())))?;

        let conn = Connection::open(&dst).map_err(|e| err(e.to_string()))?;
        conn.pragma_update(None, "foreign_keys", false).map_err(|e| err(e.to_string()))?;
        for (old, new) in rename_map {
            if let Some((table, column)) = old.split_once('.') {
                conn.execute_batch(&format!(
                    "ALTER TABLE \"{table}\" RENAME COLUMN \"{column}\" TO \"{new}\";"
                ))
                .map_err(|e| err(format!("rename column {old}: {e}")))?;
            }
        }
        for (old, new) in rename_map {
            if !old.contains('.') {
                conn.execute_batch(&format!("ALTER TABLE \"{old}\" RENAME TO \"{new}\";"))
                    .map_err(|e| err(format!("rename table {old}: {e}")))?;
            }
        }
        Ok(dst)
    }
}

impl SchemaProvider for SqliteStore {
    fn schema(&self, db_ref: &str) -> Result<SchemaDescriptor, DatasetError> {
        self.load_schema(db_ref)
    }
}

impl DbOpener for SqliteStore {
    fn open(&self, db_ref: &str) -> Result<DatabaseHandle, DatasetError> {
        self.open_database(db_ref, ExecLimits::default())
    }
}

/// Store wrapper that opens every handle with fixed limits.
pub struct LimitedOpener {
    pub store: SqliteStore,
    pub exec_limits: ExecLimits,
}

impl DbOpener for LimitedOpener {
    fn open(&self, db_ref: &str) -> Result<DatabaseHandle, DatasetError> {
        self.store.open_database(db_ref, self.exec_limits)
    }

    fn limits(&self) -> ExecLimits {
        self.exec_limits
    }
}

fn introspect_schema(conn: &Connection, db_ref: &str) -> Result<SchemaDescriptor, DatasetError> {
    let err = |message: String| DatasetError::Introspection {
        db_ref: db_ref.to_owned(),
        message,
    };

    let mut stmt = conn
        .prepare(
            "SELECT name FROM sqlite_master \
             WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY name",
        )
        .map_err(|e| err(e.to_string()))?;
    let raw_names: Vec<String> = stmt
        .query_map([], |r| r.get::<_, String>(0))
        .map_err(|e| err(e.to_string()))?
        .collect::<Result<_, _>>()
        .map_err(|e| err(e.to_string()))?;

    let mut tables = Vec::new();
    let mut primary_keys = Vec::new();
    let mut foreign_keys = Vec::new();
    for raw in &raw_names {
        let tname = normalize_name(raw);
        let mut columns = Vec::new();
        let mut info = conn
            .prepare(&format!("PRAGMA table_info(\"{raw}\")"))
            .map_err(|e| err(e.to_string()))?;
        let mut rows = info.query([]).map_err(|e| err(e.to_string()))?;
        while let Some(row) = rows.next().map_err(|e| err(e.to_string()))? {
            let name: String = row.get(1).map_err(|e| err(e.to_string()))?;
            let declared: String = row.get(2).unwrap_or_default();
            let pk: i64 = row.get(5).unwrap_or(0);
            let cname = normalize_name(&name);
            if pk > 0 {
                primary_keys.push(ColumnRef::new(&tname, &cname));
            }
            columns.push(ColumnDescriptor {
                name: cname,
                declared_type: declared.to_lowercase(),
            });
        }
        drop(rows);

        let mut fk = conn
            .prepare(&format!("PRAGMA foreign_key_list(\"{raw}\")"))
            .map_err(|e| err(e.to_string()))?;
        let mut rows = fk.query([]).map_err(|e| err(e.to_string()))?;
        while let Some(row) = rows.next().map_err(|e| err(e.to_string()))? {
            let target_table: String = row.get(2).map_err(|e| err(e.to_string()))?;
            let from: String = row.get(3).map_err(|e| err(e.to_string()))?;
            // `to` is NULL when the FK references the target's primary key
            // implicitly; resolve it after all tables are read.
            let to: Option<String> = row.get(4).unwrap_or(None);
            foreign_keys.push((
                ColumnRef::new(&tname, normalize_name(&from)),
                normalize_name(&target_table),
                to.map(|t| normalize_name(&t)),
            ));
        }
        tables.push(TableDescriptor { name: tname, columns });
    }

    let resolved = foreign_keys
        .into_iter()
        .map(|(from, target, to)| {
            let to_col = to.or_else(|| {
                primary_keys
                    .iter()
                    .find(|pk| pk.table == target)
                    .map(|pk| pk.column.clone())
            });
            ForeignKey {
                from,
                to: ColumnRef { table: target, column: to_col.unwrap_or_default() },
            }
        })
        .collect();

    Ok(SchemaDescriptor {
        db_ref: db_ref.to_owned(),
        tables,
        primary_keys,
        foreign_keys,
    })
}

// ---------------------------------------------------------------------------
// Query execution
// ---------------------------------------------------------------------------

impl DatabaseHandle {
    pub fn limits(&self) -> ExecLimits {
        self.limits
    }

    /// Runs one SELECT and collects normalized rows.
    ///
    /// Anything that is not a plain SELECT/WITH, fails in the engine, runs
    /// past the timeout, or exceeds the row cap comes back as an `Error`
    /// result set (size -1), never a panic or an `Err`.
    pub fn run_select(&self, sql: &str) -> ResultSet {
        let statement = first_statement(sql);
        if statement.is_empty() {
            return ResultSet::error("empty statement");
        }
        if !is_select(&statement) {
            return ResultSet::error("non-select statement rejected");
        }

        let deadline = Instant::now() + self.limits.timeout;
        self.conn
            .progress_handler(1_000, Some(move || Instant::now() >= deadline));
        let result = self.collect_rows(&statement);
        self.conn.progress_handler(1_000, None::<fn() -> bool>);
        result
    }

    fn collect_rows(&self, statement: &str) -> ResultSet {
        let mut stmt = match self.conn.prepare(statement) {
            Ok(s) => s,
            Err(e) => return ResultSet::error(e.to_string()),
        };
        let ncols = stmt.column_count();
        let mut rows = match stmt.query([]) {
            Ok(r) => r,
            Err(e) => return ResultSet::error(e.to_string()),
        };
        let mut out: Vec<Row> = Vec::new();
        loop {
            match rows.next() {
                Ok(Some(row)) => {
                    if out.len() >= self.limits.row_cap {
                        return ResultSet::error(format!(
                            "row cap exceeded ({} rows)",
                            self.limits.row_cap
                        ));
                    }
                    let mut cells = Vec::with_capacity(ncols);
                    for i in 0..ncols {
                        cells.push(cell_from_sql(row.get_ref(i)));
                    }
                    out.push(cells);
                }
                Ok(None) => break,
                Err(e) => return ResultSet::error(e.to_string()),
            }
        }
        ResultSet::ok(out)
    }

    #[cfg(test)]
    pub(crate) fn raw_connection(&self) -> &Connection {
        &self.conn
    }
}

fn cell_from_sql(value: Result<rusqlite::types::ValueRef<'_>, rusqlite::Error>) -> NormCell {
    use rusqlite::types::ValueRef;
    match value {
        Ok(ValueRef::Null) => NormCell::Null,
        Ok(ValueRef::Integer(i)) => NormCell::integer(i),
        Ok(ValueRef::Real(f)) => NormCell::real(f),
        Ok(ValueRef::Text(t)) => NormCell::value(String::from_utf8_lossy(t).into_owned()),
        Ok(ValueRef::Blob(b)) => NormCell::value(format!("x'{}'", hex::encode(b))),
        Err(e) => NormCell::value(format!("<read error: {e}>")),
    }
}

/// Extracts the first statement: everything up to the first `;` that sits
/// outside single/double-quoted strings.
pub fn first_statement(sql: &str) -> String {
    let mut in_single = false;
    let mut in_double = false;
    for (i, c) in sql.char_indices() {
        match c {
            '\'' if !in_double => in_single = !in_single,
            '"' if !in_single => in_double = !in_double,
            ';' if !in_single && !in_double => return sql[..i].trim().to_owned(),
            _ => {}
        }
    }
    sql.trim().to_owned()
}

fn is_select(statement: &str) -> bool {
    let head = statement.trim_start().to_ascii_lowercase();
    head.starts_with("select") || head.starts_with("with")
}
