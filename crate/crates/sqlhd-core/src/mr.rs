//! The metamorphic-relation catalog.
//!
//! Seventeen relations drive the detector, split across the two serial
//! stages: eight perturb the question (or its schema) and cross-check the
//! generated schema linking, nine perturb it and cross-check executed SQL
//! result sets. Each relation carries a fixed expectation describing how the
//! follow-up output must relate to the source output when the generator is
//! hallucination-free.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Identifier of a metamorphic relation.
///
/// Declaration order is the canonical ordering used for deterministic
/// iteration and report rendering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[allow(clippy::upper_case_acronyms)]
pub enum MrId {
    /// Synonym replacement of a comparative word.
    SROCW,
    /// Antonym replacement of a comparative word.
    AROCW,
    /// Entity synonymous replacement.
    ESR,
    /// Entity non-synonymous replacement.
    ENSR,
    /// Remove a conditional clause.
    RC,
    /// Ordinary simplification: drop an irrelevant component.
    OS,
    /// Sentence complication: append irrelevant content.
    SC,
    /// Database schema replacement (partial rename).
    DSR,
    /// Prefix insertion.
    PI,
    /// Prefix removal.
    PR,
    /// Prefix substitution.
    PS,
    /// Synonym replacement of an extremum word.
    SROE,
    /// Antonym replacement of an extremum word.
    AROE,
    /// Comparison range unchanged (synonym of a comparative).
    CRU,
    /// Comparison range expanded (strict bound made inclusive).
    CRE,
    /// Comparison range reduced (inclusive bound made strict).
    CWR,
    /// Database replacement (full rename).
    DR,
}

/// Detection stage a relation belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MrFamily {
    SchemaLinking,
    LogicalSynthesis,
}

/// Mutation category grouping related relations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[allow(clippy::upper_case_acronyms)]
pub enum MrCategory {
    /// Comparative word metamorphosis (SROCW, AROCW).
    CWM,
    /// Entity metamorphosis (ESR, ENSR).
    ENM,
    /// Sentence metamorphosis (RC, OS, SC).
    SEM,
    /// Database schema metamorphosis (DSR).
    DSM,
    /// Prefix word metamorphosis (PI, PR, PS).
    PWM,
    /// Extrema metamorphosis (SROE, AROE).
    EXM,
    /// Comparative range metamorphosis (CRU, CRE, CWR).
    CRM,
    /// Database metamorphosis (DR).
    DAM,
}

/// How the follow-up output must relate to the source output for the
/// generator to pass the relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Expectation {
    /// Follow-up schema linking must equal the source linking.
    LinkingEqual,
    /// Follow-up schema linking must differ from the source linking.
    LinkingDifferent,
    /// Follow-up result set must equal the source result set.
    ResultEqual,
    /// Follow-up result set must differ from the source result set.
    ResultDifferent,
    /// Follow-up result set must contain the source result set.
    FollowupSuperset,
    /// Follow-up result set must be contained in the source result set.
    FollowupSubset,
    /// Follow-up SQL must execute without error.
    FollowupExecutes,
}

/// A catalog entry: relation id plus its fixed classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetamorphicRelation {
    pub id: MrId,
    pub family: MrFamily,
    pub category: MrCategory,
    pub expectation: Expectation,
}

impl MrId {
    /// All seventeen ids in canonical order.
    pub const ALL: [MrId; 17] = [
        MrId::SROCW,
        MrId::AROCW,
        MrId::ESR,
        MrId::ENSR,
        MrId::RC,
        MrId::OS,
        MrId::SC,
        MrId::DSR,
        MrId::PI,
        MrId::PR,
        MrId::PS,
        MrId::SROE,
        MrId::AROE,
        MrId::CRU,
        MrId::CRE,
        MrId::CWR,
        MrId::DR,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MrId::SROCW => "SROCW",
            MrId::AROCW => "AROCW",
            MrId::ESR => "ESR",
            MrId::ENSR => "ENSR",
            MrId::RC => "RC",
            MrId::OS => "OS",
            MrId::SC => "SC",
            MrId::DSR => "DSR",
            MrId::PI => "PI",
            MrId::PR => "PR",
            MrId::PS => "PS",
            MrId::SROE => "SROE",
            MrId::AROE => "AROE",
            MrId::CRU => "CRU",
            MrId::CRE => "CRE",
            MrId::CWR => "CWR",
            MrId::DR => "DR",
        }
    }

    pub fn family(self) -> MrFamily {
        match self {
            MrId::SROCW
            | MrId::AROCW
            | MrId::ESR
            | MrId::ENSR
            | MrId::RC
            | MrId::OS
            | MrId::SC
            | MrId::DSR => MrFamily::SchemaLinking,
            MrId::PI
            | MrId::PR
            | MrId::PS
            | MrId::SROE
            | MrId::AROE
            | MrId::CRU
            | MrId::CRE
            | MrId::CWR
            | MrId::DR => MrFamily::LogicalSynthesis,
        }
    }

    pub fn category(self) -> MrCategory {
        match self {
            MrId::SROCW | MrId::AROCW => MrCategory::CWM,
            MrId::ESR | MrId::ENSR => MrCategory::ENM,
            MrId::RC | MrId::OS | MrId::SC => MrCategory::SEM,
            MrId::DSR => MrCategory::DSM,
            MrId::PI | MrId::PR | MrId::PS => MrCategory::PWM,
            MrId::SROE | MrId::AROE => MrCategory::EXM,
            MrId::CRU | MrId::CRE | MrId::CWR => MrCategory::CRM,
            MrId::DR => MrCategory::DAM,
        }
    }

    /// The fixed, total expectation mapping.
    pub fn expectation(self) -> Expectation {
        match self {
            MrId::SROCW | MrId::AROCW | MrId::ESR | MrId::RC | MrId::OS | MrId::SC => {
                Expectation::LinkingEqual
            }
            MrId::ENSR | MrId::DSR => Expectation::LinkingDifferent,
            MrId::PI | MrId::PR | MrId::PS | MrId::SROE | MrId::CRU => Expectation::ResultEqual,
            MrId::AROE => Expectation::ResultDifferent,
            MrId::CRE => Expectation::FollowupSuperset,
            MrId::CWR => Expectation::FollowupSubset,
            MrId::DR => Expectation::FollowupExecutes,
        }
    }

    /// True for the single-fragment substitution relations whose follow-up
    /// question is the source with one span replaced.
    pub fn is_substitution(self) -> bool {
        matches!(
            self,
            MrId::SROCW
                | MrId::AROCW
                | MrId::ESR
                | MrId::ENSR
                | MrId::PS
                | MrId::SROE
                | MrId::AROE
                | MrId::CRU
                | MrId::CRE
                | MrId::CWR
        )
    }

    /// True for the removal relations whose follow-up question is the source
    /// with one span deleted.
    pub fn is_removal(self) -> bool {
        matches!(self, MrId::RC | MrId::OS | MrId::PR)
    }

    /// True for the relations that rename the database schema.
    pub fn renames_schema(self) -> bool {
        matches!(self, MrId::DSR | MrId::DR)
    }
}

impl fmt::Display for MrId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MrId {
    type Err = UnknownMrId;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MrId::ALL
            .iter()
            .copied()
            .find(|id| id.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownMrId(s.trim().to_owned()))
    }
}

/// Error returned when parsing an unrecognized relation name.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown metamorphic relation id: {0:?}")]
pub struct UnknownMrId(pub String);

impl fmt::Display for MrFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MrFamily::SchemaLinking => f.write_str("schema-linking"),
            MrFamily::LogicalSynthesis => f.write_str("logical-synthesis"),
        }
    }
}

impl fmt::Display for MrCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MrCategory::CWM => "CWM",
            MrCategory::ENM => "ENM",
            MrCategory::SEM => "SEM",
            MrCategory::DSM => "DSM",
            MrCategory::PWM => "PWM",
            MrCategory::EXM => "EXM",
            MrCategory::CRM => "CRM",
            MrCategory::DAM => "DAM",
        };
        f.write_str(s)
    }
}

/// Returns the full catalog of seventeen relations in canonical order.
pub fn mr_catalog() -> Vec<MetamorphicRelation> {
    MrId::ALL
        .iter()
        .map(|&id| MetamorphicRelation {
            id,
            family: id.family(),
            category: id.category(),
            expectation: id.expectation(),
        })
        .collect()
}

/// Looks up the catalog entry for one relation.
pub fn mr_lookup(id: MrId) -> MetamorphicRelation {
    MetamorphicRelation {
        id,
        family: id.family(),
        category: id.category(),
        expectation: id.expectation(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_has_seventeen_entries() {
        assert_eq!(mr_catalog().len(), 17);
    }

    #[test]
    fn schema_linking_family_has_eight_members() {
        let n = mr_catalog()
            .iter()
            .filter(|r| r.family == MrFamily::SchemaLinking)
            .count();
        assert_eq!(n, 8);
        let n = mr_catalog()
            .iter()
            .filter(|r| r.family == MrFamily::LogicalSynthesis)
            .count();
        assert_eq!(n, 9);
    }

    #[test]
    fn expectation_mapping_is_fixed() {
        use Expectation::*;
        let expected = [
            (MrId::SROCW, LinkingEqual),
            (MrId::AROCW, LinkingEqual),
            (MrId::ESR, LinkingEqual),
            (MrId::ENSR, LinkingDifferent),
            (MrId::RC, LinkingEqual),
            (MrId::OS, LinkingEqual),
            (MrId::SC, LinkingEqual),
            (MrId::DSR, LinkingDifferent),
            (MrId::PI, ResultEqual),
            (MrId::PR, ResultEqual),
            (MrId::PS, ResultEqual),
            (MrId::SROE, ResultEqual),
            (MrId::AROE, ResultDifferent),
            (MrId::CRU, ResultEqual),
            (MrId::CRE, FollowupSuperset),
            (MrId::CWR, FollowupSubset),
            (MrId::DR, FollowupExecutes),
        ];
        assert_eq!(expected.len(), 17);
        for (id, exp) in expected {
            assert_eq!(id.expectation(), exp, "{id}");
        }
    }

    #[test]
    fn cre_expects_followup_superset() {
        assert_eq!(mr_lookup(MrId::CRE).expectation, Expectation::FollowupSuperset);
    }

    #[test]
    fn category_partition_matches_families() {
        for r in mr_catalog() {
            let schema_cat = matches!(
                r.category,
                MrCategory::CWM | MrCategory::ENM | MrCategory::SEM | MrCategory::DSM
            );
            assert_eq!(schema_cat, r.family == MrFamily::SchemaLinking, "{}", r.id);
        }
    }

    #[test]
    fn ids_round_trip_through_strings() {
        for id in MrId::ALL {
            assert_eq!(id.name().parse::<MrId>().unwrap(), id);
            assert_eq!(id.name().to_lowercase().parse::<MrId>().unwrap(), id);
        }
        assert!("XYZ".parse::<MrId>().is_err());
    }
}
