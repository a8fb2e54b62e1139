//! Stage 1: schema-linking hallucination detection.
//!
//! One source linking (SSL) is generated per case, one follow-up linking
//! (FSL) per applied relation; the comparison verdict follows the fixed
//! two-branch rule: equality-expected relations flag a difference,
//! inequality-expected relations (ENSR, DSR) flag an unexpected match.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::SchemaProvider;
use crate::gateway::{Gateway, GatewayError};
use crate::model::{QuestionPair, SchemaDescriptor, SchemaLinking, SourceCase, Verdict, VerdictOutcome};
use crate::mr::{MrFamily, MrId};
use crate::mutation::apply_rename_map;

/// Skip reason recorded when the generator answered with something neither
/// response grammar accepts.
pub const SKIP_PARSE_FAILURE: &str = "generator parse failure";
/// Prefix of skip reasons caused by missing replay fixtures.
pub const SKIP_MISSING_FIXTURE: &str = "missing fixture";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StageError {
    #[error("{mr} belongs to the {family} family, expected {expected}")]
    FamilyMismatch {
        mr: MrId,
        family: MrFamily,
        expected: MrFamily,
    },
}

pub(crate) fn require_family(mr: MrId, expected: MrFamily) -> Result<(), StageError> {
    if mr.family() == expected {
        Ok(())
    } else {
        Err(StageError::FamilyMismatch { mr, family: mr.family(), expected })
    }
}

// ---------------------------------------------------------------------------
// Linking comparison
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinkingComparison {
    Equal,
    Different,
    /// Follow-up linking is a proper subset of the source linking
    /// (Containment mode only).
    FollowupContained,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CompareMode {
    /// Plain set equality, the faithful default.
    #[default]
    Strict,
    /// Additionally distinguishes a follow-up linking that lost elements,
    /// which content-removing relations (RC, OS) may legitimately produce.
    Containment,
}

fn linkings_equal(ssl: &SchemaLinking, fsl: &SchemaLinking) -> bool {
    // Join edges count only when both sides report them: join output is
    // treated as optional generator capability.
    ssl.tables == fsl.tables
        && ssl.columns == fsl.columns
        && (ssl.joins.is_empty() || fsl.joins.is_empty() || ssl.joins == fsl.joins)
}

fn linking_contained(fsl: &SchemaLinking, ssl: &SchemaLinking) -> bool {
    fsl.tables.is_subset(&ssl.tables)
        && fsl.columns.is_subset(&ssl.columns)
        && (fsl.joins.is_empty() || ssl.joins.is_empty() || fsl.joins.is_subset(&ssl.joins))
}

/// Compares a source and follow-up linking under the configured mode.
pub fn compare_linkings(
    ssl: &SchemaLinking,
    fsl: &SchemaLinking,
    mode: CompareMode,
) -> LinkingComparison {
    if linkings_equal(ssl, fsl) {
        return LinkingComparison::Equal;
    }
    if mode == CompareMode::Containment && linking_contained(fsl, ssl) {
        return LinkingComparison::FollowupContained;
    }
    LinkingComparison::Different
}

/// Human-readable symmetric difference for verdict details.
pub fn linking_diff(ssl: &SchemaLinking, fsl: &SchemaLinking) -> String {
    let mut parts = Vec::new();
    for t in fsl.tables.difference(&ssl.tables) {
        parts.push(format!("+table {t}"));
    }
    for t in ssl.tables.difference(&fsl.tables) {
        parts.push(format!("-table {t}"));
    }
    for c in fsl.columns.difference(&ssl.columns) {
        parts.push(format!("+column {c}"));
    }
    for c in ssl.columns.difference(&fsl.columns) {
        parts.push(format!("-column {c}"));
    }
    if !ssl.joins.is_empty() && !fsl.joins.is_empty() {
        for j in fsl.joins.difference(&ssl.joins) {
            let (a, b) = j.endpoints();
            parts.push(format!("+join {a}={b}"));
        }
        for j in ssl.joins.difference(&fsl.joins) {
            let (a, b) = j.endpoints();
            parts.push(format!("-join {a}={b}"));
        }
    }
    if parts.is_empty() {
        "identical".to_owned()
    } else {
        parts.join(", ")
    }
}

// ---------------------------------------------------------------------------
// Verdicts
// ---------------------------------------------------------------------------

/// Maps one comparison outcome to a verdict under the relation's
/// expectation.
pub fn verdict_for_schema(
    mr: MrId,
    comparison: LinkingComparison,
) -> Result<VerdictOutcome, StageError> {
    require_family(mr, MrFamily::SchemaLinking)?;
    let outcome = match (mr, comparison) {
        // equality-expected group
        (
            MrId::SROCW | MrId::AROCW | MrId::ESR | MrId::RC | MrId::OS | MrId::SC,
            LinkingComparison::Equal,
        ) => VerdictOutcome::Pass,
        (
            MrId::SROCW | MrId::AROCW | MrId::ESR | MrId::RC | MrId::OS | MrId::SC,
            LinkingComparison::Different,
        ) => VerdictOutcome::Violation,
        // containment relaxation applies only to the content-removing pair
        (MrId::RC | MrId::OS, LinkingComparison::FollowupContained) => VerdictOutcome::Pass,
        (
            MrId::SROCW | MrId::AROCW | MrId::ESR | MrId::SC,
            LinkingComparison::FollowupContained,
        ) => VerdictOutcome::Violation,
        // inequality-expected group
        (MrId::ENSR | MrId::DSR, LinkingComparison::Equal) => VerdictOutcome::Violation,
        (
            MrId::ENSR | MrId::DSR,
            LinkingComparison::Different | LinkingComparison::FollowupContained,
        ) => VerdictOutcome::Pass,
        _ => unreachable!("family checked above"),
    };
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// Stage driver
// ---------------------------------------------------------------------------

/// Stage-1 output for one case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaStageReport {
    pub case_ref: String,
    pub verdicts: Vec<Verdict>,
    /// Absent when the source linking itself could not be generated.
    pub ssl: Option<SchemaLinking>,
    pub fsl_by_mr: BTreeMap<MrId, SchemaLinking>,
    pub hds_increment: u64,
}

impl SchemaStageReport {
    /// Case-level detection flag: any violation in this stage.
    pub fn is_positive(&self) -> bool {
        self.verdicts.iter().any(|v| v.outcome.is_violation())
    }
}

pub(crate) fn gateway_skip_reason(e: &GatewayError) -> String {
    match e {
        GatewayError::UnparseableResponse { .. } => SKIP_PARSE_FAILURE.to_owned(),
        GatewayError::FixtureMissing { digest } => format!("{SKIP_MISSING_FIXTURE} {digest}"),
        other => other.to_string(),
    }
}

/// Resolves the schema a pair's follow-up question is asked against: renamed
/// in memory for DSR/DR, otherwise the pair's database.
pub(crate) fn followup_schema(
    source_schema: &SchemaDescriptor,
    pair: &QuestionPair,
    schemas: &dyn SchemaProvider,
) -> Result<SchemaDescriptor, String> {
    if let Some(map) = &pair.trace.schema_rename_map {
        let mut variant = apply_rename_map(source_schema, map);
        variant.db_ref = pair.followup_db_ref.clone();
        return Ok(variant);
    }
    if pair.followup_db_ref == source_schema.db_ref {
        return Ok(source_schema.clone());
    }
    schemas.schema(&pair.followup_db_ref).map_err(|e| e.to_string())
}

/// Runs stage 1 for one case over its schema-linking pairs.
///
/// One relation's failure never aborts the others: gateway failures become
/// skip verdicts, and a failed source linking skips every relation.
pub fn run_schema_stage(
    case: &SourceCase,
    pairs: &[QuestionPair],
    gateway: &Gateway,
    schemas: &dyn SchemaProvider,
    mode: CompareMode,
) -> Result<SchemaStageReport, StageError> {
    for p in pairs {
        require_family(p.mr, MrFamily::SchemaLinking)?;
    }
    let mut ordered: Vec<&QuestionPair> = pairs.iter().collect();
    ordered.sort_by_key(|p| p.mr);

    let prepared = schemas
        .schema(&case.db_ref)
        .map_err(|e| e.to_string())
        .and_then(|schema| {
            gateway
                .generate_schema_linking(&case.question, &schema)
                .map(|ssl| (schema, ssl))
                .map_err(|e| gateway_skip_reason(&e))
        });

    let mut verdicts = Vec::new();
    let mut fsl_by_mr = BTreeMap::new();
    let (schema, ssl) = match prepared {
        Ok((schema, ssl)) => (schema, ssl),
        Err(reason) => {
            for pair in &ordered {
                verdicts.push(Verdict::new(
                    &case.case_id,
                    pair.mr,
                    VerdictOutcome::Skip(format!("source linking unavailable: {reason}")),
                    String::new(),
                ));
            }
            return Ok(SchemaStageReport {
                case_ref: case.case_id.clone(),
                verdicts,
                ssl: None,
                fsl_by_mr,
                hds_increment: 0,
            });
        }
    };

    for pair in &ordered {
        let verdict = match followup_schema(&schema, pair, schemas) {
            Err(reason) => Verdict::new(
                &case.case_id,
                pair.mr,
                VerdictOutcome::Skip(format!("follow-up schema unavailable: {reason}")),
                String::new(),
            ),
            Ok(pair_schema) => {
                match gateway.generate_schema_linking(&pair.followup_question, &pair_schema) {
                    Err(e) => Verdict::new(
                        &case.case_id,
                        pair.mr,
                        VerdictOutcome::Skip(gateway_skip_reason(&e)),
                        String::new(),
                    ),
                    Ok(fsl) => {
                        let comparison = compare_linkings(&ssl, &fsl, mode);
                        let outcome = verdict_for_schema(pair.mr, comparison)?;
                        let detail = linking_diff(&ssl, &fsl);
                        fsl_by_mr.insert(pair.mr, fsl);
                        Verdict::new(&case.case_id, pair.mr, outcome, detail)
                    }
                }
            }
        };
        verdicts.push(verdict);
    }

    let hds_increment = verdicts.iter().filter(|v| v.outcome.is_violation()).count() as u64;
    Ok(SchemaStageReport {
        case_ref: case.case_id.clone(),
        verdicts,
        ssl: Some(ssl),
        fsl_by_mr,
        hds_increment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ColumnRef;

    fn linking(tables: &[&str], columns: &[(&str, &str)]) -> SchemaLinking {
        let mut l = SchemaLinking::new();
        for t in tables {
            l.add_table(t);
        }
        for (t, c) in columns {
            l.add_column(t, c);
        }
        l
    }

    #[test]
    fn identical_linkings_compare_equal() {
        let a = linking(&["student"], &[("student", "major")]);
        let b = linking(&["student"], &[("student", "major")]);
        assert_eq!(compare_linkings(&a, &b, CompareMode::Strict), LinkingComparison::Equal);
    }

    #[test]
    fn extra_column_is_different_in_strict_mode() {
        let ssl = linking(&["student"], &[("student", "major")]);
        let fsl = linking(&["student"], &[("student", "major"), ("student", "age")]);
        assert_eq!(compare_linkings(&ssl, &fsl, CompareMode::Strict), LinkingComparison::Different);
    }

    #[test]
    fn containment_mode_reports_contained_followup() {
        let ssl = linking(&["student"], &[("student", "major"), ("student", "age")]);
        let fsl = linking(&["student"], &[("student", "major")]);
        assert_eq!(
            compare_linkings(&ssl, &fsl, CompareMode::Containment),
            LinkingComparison::FollowupContained
        );
        // strict mode never reports containment
        assert_eq!(compare_linkings(&ssl, &fsl, CompareMode::Strict), LinkingComparison::Different);
    }

    #[test]
    fn joins_compare_only_when_both_sides_report_them() {
        let mut with_joins = linking(&["a", "b"], &[("a", "x"), ("b", "y")]);
        with_joins.add_join(ColumnRef::new("a", "x"), ColumnRef::new("b", "y"));
        let without_joins = linking(&["a", "b"], &[("a", "x"), ("b", "y")]);
        assert_eq!(
            compare_linkings(&with_joins, &without_joins, CompareMode::Strict),
            LinkingComparison::Equal
        );

        let mut other_join = linking(&["a", "b"], &[("a", "x"), ("b", "y")]);
        other_join.add_join(ColumnRef::new("a", "x"), ColumnRef::new("b", "z"));
        assert_eq!(
            compare_linkings(&with_joins, &other_join, CompareMode::Strict),
            LinkingComparison::Different
        );
    }

    #[test]
    fn verdict_branches_follow_the_two_group_rule() {
        assert_eq!(
            verdict_for_schema(MrId::ENSR, LinkingComparison::Equal).unwrap(),
            VerdictOutcome::Violation
        );
        assert_eq!(
            verdict_for_schema(MrId::SROCW, LinkingComparison::Different).unwrap(),
            VerdictOutcome::Violation
        );
        assert_eq!(
            verdict_for_schema(MrId::OS, LinkingComparison::Equal).unwrap(),
            VerdictOutcome::Pass
        );
        assert_eq!(
            verdict_for_schema(MrId::RC, LinkingComparison::FollowupContained).unwrap(),
            VerdictOutcome::Pass
        );
        assert_eq!(
            verdict_for_schema(MrId::ESR, LinkingComparison::FollowupContained).unwrap(),
            VerdictOutcome::Violation
        );
        assert_eq!(
            verdict_for_schema(MrId::DSR, LinkingComparison::Different).unwrap(),
            VerdictOutcome::Pass
        );
    }

    #[test]
    fn logic_relation_is_a_family_mismatch() {
        let err = verdict_for_schema(MrId::PI, LinkingComparison::Equal).unwrap_err();
        assert!(matches!(err, StageError::FamilyMismatch { mr: MrId::PI, .. }));
    }
}
