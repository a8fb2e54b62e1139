//! Deterministic question mutation: derives one follow-up question (or
//! schema variant) per applicable relation, entirely from the lexicon and a
//! seed, and re-validates the resulting pairs.
//!
//! Mutation is a pure function of `(case, relation, lexicon, schema, seed)`:
//! the leftmost matching fragment is mutated and the replacement is a seeded
//! uniform pick among the lexicon candidates that do not already occur in
//! the source question (so the edit stays unambiguous).

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::lexicon::{leftmost_match, phrase_occurs, FragmentMatch, Lexicon};
use crate::model::{
    CharSpan, ColumnRef, ForeignKey, MutationTrace, QuestionPair, SchemaDescriptor, SourceCase,
    TableDescriptor,
};
use crate::mr::{MrFamily, MrId};

/// Phrases that mark an equality condition inside a candidate RC clause.
const EQUALITY_CUES: [&str; 5] = ["equal to", "equals", "is", "are", "="];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MutationError {
    #[error("{mr} is not applicable here: {reason}")]
    NotApplicable { mr: MrId, reason: String },
    #[error("lexicon entry {key:?} has no usable candidate for {mr}")]
    NoUsableCandidate { mr: MrId, key: String },
}

// ---------------------------------------------------------------------------
// Applicability
// ---------------------------------------------------------------------------

/// Which relations can mutate this question.
///
/// Trigger-fragment relations require their fragment class to occur in the
/// question; PI, OS, SC, DSR, and DR are always applicable (their mutation
/// needs no trigger, though it may still fail on an empty candidate list).
pub fn applicable_relations(
    question: &str,
    _schema: &SchemaDescriptor,
    lexicon: &Lexicon,
) -> BTreeSet<MrId> {
    let mut out = BTreeSet::from([MrId::PI, MrId::OS, MrId::SC, MrId::DSR, MrId::DR]);
    if leftmost_match(question, lexicon.comparative_keys()).is_some() {
        out.extend([MrId::SROCW, MrId::AROCW, MrId::CRU, MrId::CRE, MrId::CWR]);
    }
    if leftmost_match(question, lexicon.entity_keys()).is_some() {
        out.extend([MrId::ESR, MrId::ENSR]);
    }
    if leftmost_match(question, lexicon.extrema_keys()).is_some() {
        out.extend([MrId::SROE, MrId::AROE]);
    }
    if lexicon.matched_prefix(question).is_some() {
        out.extend([MrId::PR, MrId::PS]);
    }
    if find_rc_clause(question, lexicon).is_some() {
        out.insert(MrId::RC);
    }
    out
}

// ---------------------------------------------------------------------------
// Mutation
// ---------------------------------------------------------------------------

/// Derives the follow-up question for one relation.
pub fn mutate(
    case: &SourceCase,
    mr: MrId,
    lexicon: &Lexicon,
    schema: &SchemaDescriptor,
    seed: u64,
) -> Result<QuestionPair, MutationError> {
    let sq = case.question.as_str();
    let mut rng = derive_rng(seed, &[&case.case_id, mr.name()]);

    let (followup, trace, followup_db_ref) = match mr {
        MrId::SROCW | MrId::CRU => {
            substitute(sq, mr, &lexicon.comparative_synonyms, &mut rng)?
        }
        MrId::AROCW => substitute(sq, mr, &lexicon.comparative_antonyms, &mut rng)?,
        MrId::ESR => substitute(sq, mr, &lexicon.entity_synonyms, &mut rng)?,
        MrId::ENSR => substitute(sq, mr, &lexicon.entity_non_synonyms, &mut rng)?,
        MrId::SROE => substitute(sq, mr, &lexicon.extrema_synonyms, &mut rng)?,
        MrId::AROE => substitute(sq, mr, &lexicon.extrema_antonyms, &mut rng)?,
        MrId::CRE => substitute(sq, mr, &lexicon.comparative_expanders, &mut rng)?,
        MrId::CWR => substitute(sq, mr, &lexicon.comparative_reducers, &mut rng)?,
        MrId::PI => prefix_insert(sq, lexicon, &mut rng)?,
        MrId::PR => prefix_remove(sq, lexicon)?,
        MrId::PS => prefix_substitute(sq, lexicon, &mut rng)?,
        MrId::RC => remove_span(
            sq,
            mr,
            find_rc_clause(sq, lexicon).ok_or_else(|| MutationError::NotApplicable {
                mr,
                reason: "no removable conditional clause".into(),
            })?,
        )?,
        MrId::OS => remove_span(
            sq,
            mr,
            find_os_fragment(sq, lexicon).ok_or_else(|| MutationError::NotApplicable {
                mr,
                reason: "no removable irrelevant component".into(),
            })?,
        )?,
        MrId::SC => complicate(sq, lexicon, &mut rng)?,
        MrId::DSR | MrId::DR => {
            let (variant, map) = derive_schema_variant(schema, mr, seed)?;
            let trace = MutationTrace {
                fragment_original: String::new(),
                fragment_replacement: None,
                char_span: CharSpan::new(0, 0),
                schema_rename_map: Some(map),
            };
            (sq.to_owned(), trace, variant.db_ref)
        }
    };

    Ok(QuestionPair {
        case_ref: case.case_id.clone(),
        mr,
        source_question: sq.to_owned(),
        followup_question: followup,
        trace,
        followup_db_ref: followup_db_ref_or(&followup_db_ref, &case.db_ref),
    })
}

fn followup_db_ref_or(candidate: &str, default: &str) -> String {
    if candidate.is_empty() {
        default.to_owned()
    } else {
        candidate.to_owned()
    }
}

type Mutated = (String, MutationTrace, String);

fn substitute(
    sq: &str,
    mr: MrId,
    table: &BTreeMap<String, Vec<String>>,
    rng: &mut ChaCha8Rng,
) -> Result<Mutated, MutationError> {
    let m = leftmost_match(sq, table.keys()).ok_or_else(|| MutationError::NotApplicable {
        mr,
        reason: "no matching fragment".into(),
    })?;
    let fragment = &sq[m.start..m.end];
    let picked = pick_candidate(sq, mr, &m.key, &table[&m.key], rng)?;
    let replacement = match_case(fragment, &picked);
    let span = CharSpan::new(m.start, m.end);
    let followup = splice(sq, span, &replacement);
    let trace = MutationTrace {
        fragment_original: fragment.to_owned(),
        fragment_replacement: Some(replacement),
        char_span: span,
        schema_rename_map: None,
    };
    Ok((followup, trace, String::new()))
}

/// Seeded uniform pick among candidates that neither equal the fragment nor
/// already occur in the source question.
fn pick_candidate(
    sq: &str,
    mr: MrId,
    key: &str,
    candidates: &[String],
    rng: &mut ChaCha8Rng,
) -> Result<String, MutationError> {
    let usable: Vec<&String> = candidates
        .iter()
        .filter(|c| !c.eq_ignore_ascii_case(key) && !phrase_occurs(sq, c))
        .collect();
    if usable.is_empty() {
        return Err(MutationError::NoUsableCandidate { mr, key: key.to_owned() });
    }
    Ok(usable[rng.gen_range(0..usable.len())].clone())
}

fn prefix_insert(sq: &str, lexicon: &Lexicon, rng: &mut ChaCha8Rng) -> Result<Mutated, MutationError> {
    let usable: Vec<&String> = lexicon
        .prefixes
        .iter()
        .filter(|p| !p.trim().is_empty() && !phrase_occurs(sq, p.trim()))
        .collect();
    if usable.is_empty() {
        return Err(MutationError::NoUsableCandidate { mr: MrId::PI, key: "prefixes".into() });
    }
    let prefix = usable[rng.gen_range(0..usable.len())].trim();
    let inserted = format!("{prefix} ");
    let followup = format!("{inserted}{sq}");
    let trace = MutationTrace {
        fragment_original: String::new(),
        fragment_replacement: Some(inserted),
        char_span: CharSpan::new(0, 0),
        schema_rename_map: None,
    };
    Ok((followup, trace, String::new()))
}

fn prefix_remove(sq: &str, lexicon: &Lexicon) -> Result<Mutated, MutationError> {
    let prefix = lexicon.matched_prefix(sq).ok_or_else(|| MutationError::NotApplicable {
        mr: MrId::PR,
        reason: "question does not start with a known prefix".into(),
    })?;
    let end = prefix.len() + trailing_ws(&sq[prefix.len()..]);
    if end >= sq.len() {
        return Err(MutationError::NotApplicable {
            mr: MrId::PR,
            reason: "removing the prefix would empty the question".into(),
        });
    }
    remove_span(sq, MrId::PR, CharSpan::new(0, end))
}

fn prefix_substitute(sq: &str, lexicon: &Lexicon, rng: &mut ChaCha8Rng) -> Result<Mutated, MutationError> {
    let prefix = lexicon.matched_prefix(sq).ok_or_else(|| MutationError::NotApplicable {
        mr: MrId::PS,
        reason: "question does not start with a known prefix".into(),
    })?;
    let usable: Vec<&String> = lexicon
        .prefixes
        .iter()
        .filter(|p| {
            let p = p.trim();
            !p.is_empty() && !p.eq_ignore_ascii_case(prefix) && !phrase_occurs(sq, p)
        })
        .collect();
    if usable.is_empty() {
        return Err(MutationError::NoUsableCandidate { mr: MrId::PS, key: prefix.to_lowercase() });
    }
    let picked = usable[rng.gen_range(0..usable.len())].trim();
    let replacement = match_case(prefix, picked);
    let span = CharSpan::new(0, prefix.len());
    let followup = splice(sq, span, &replacement);
    let trace = MutationTrace {
        fragment_original: prefix.to_owned(),
        fragment_replacement: Some(replacement),
        char_span: span,
        schema_rename_map: None,
    };
    Ok((followup, trace, String::new()))
}

fn remove_span(sq: &str, _mr: MrId, span: CharSpan) -> Result<Mutated, MutationError> {
    let followup = splice(sq, span, "");
    let trace = MutationTrace {
        fragment_original: sq[span.start..span.end].to_owned(),
        fragment_replacement: None,
        char_span: span,
        schema_rename_map: None,
    };
    Ok((followup, trace, String::new()))
}

fn complicate(sq: &str, lexicon: &Lexicon, rng: &mut ChaCha8Rng) -> Result<Mutated, MutationError> {
    let usable: Vec<&String> = lexicon
        .filler_phrases
        .iter()
        .filter(|f| !f.trim().is_empty() && !phrase_occurs(sq, f.trim()))
        .collect();
    if usable.is_empty() {
        return Err(MutationError::NoUsableCandidate { mr: MrId::SC, key: "filler_phrases".into() });
    }
    let filler = usable[rng.gen_range(0..usable.len())].trim();
    let appended = format!(" {filler}");
    let span = CharSpan::new(sq.len(), sq.len());
    let followup = format!("{sq}{appended}");
    let trace = MutationTrace {
        fragment_original: String::new(),
        fragment_replacement: Some(appended),
        char_span: span,
        schema_rename_map: None,
    };
    Ok((followup, trace, String::new()))
}

// ---------------------------------------------------------------------------
// Fragment detection for RC and OS
// ---------------------------------------------------------------------------

/// Finds the leftmost removable conditional clause: a cue word through the
/// next clause boundary, containing a comparative or equality phrase. The
/// span includes the whitespace before the cue so removal leaves clean text.
pub fn find_rc_clause(question: &str, lexicon: &Lexicon) -> Option<CharSpan> {
    let mut cue_hits: Vec<(usize, usize)> = Vec::new();
    for cue in &lexicon.rc_cue_words {
        for (s, e) in all_occurrences(question, cue) {
            cue_hits.push((s, e));
        }
    }
    cue_hits.sort_unstable();

    for (cue_start, _cue_end) in cue_hits {
        let clause_end = question[cue_start..]
            .find([',', '?', '.', '!', ';'])
            .map(|i| cue_start + i)
            .unwrap_or(question.len());
        let clause = &question[cue_start..clause_end];
        let conditional = lexicon.comparative_keys().any(|k| phrase_occurs(clause, k))
            || EQUALITY_CUES.iter().any(|c| phrase_occurs(clause, c));
        if !conditional {
            continue;
        }
        let start = leading_ws_start(question, cue_start);
        if start == 0 && clause_end >= question.len() {
            continue; // the clause is the whole question
        }
        return Some(CharSpan::new(start, clause_end));
    }
    None
}

/// Finds an irrelevant component to drop, in order of preference: a filler
/// phrase, the trailing punctuation mark, a leading prefix word.
pub fn find_os_fragment(question: &str, lexicon: &Lexicon) -> Option<CharSpan> {
    for filler in &lexicon.filler_phrases {
        if let Some(&(s, e)) = all_occurrences(question, filler.trim()).first() {
            return Some(CharSpan::new(leading_ws_start(question, s), e));
        }
    }
    if let Some((idx, c)) = question.char_indices().last() {
        if matches!(c, '?' | '.' | '!') {
            return Some(CharSpan::new(idx, question.len()));
        }
    }
    if let Some(prefix) = lexicon.matched_prefix(question) {
        let end = prefix.len() + trailing_ws(&question[prefix.len()..]);
        if end < question.len() {
            return Some(CharSpan::new(0, end));
        }
    }
    None
}

fn all_occurrences(text: &str, phrase: &str) -> Vec<(usize, usize)> {
    // word-bounded, case-insensitive; thin wrapper so RC can scan every hit
    let mut out = Vec::new();
    let hay = text.to_ascii_lowercase();
    let needle = phrase.to_ascii_lowercase();
    if needle.is_empty() {
        return out;
    }
    let mut from = 0;
    while let Some(pos) = hay[from..].find(&needle) {
        let start = from + pos;
        let end = start + needle.len();
        let before_ok = start == 0
            || !text[..start].chars().next_back().is_some_and(char::is_alphanumeric);
        let after_ok =
            end >= text.len() || !text[end..].chars().next().is_some_and(char::is_alphanumeric);
        if before_ok && after_ok {
            out.push((start, end));
        }
        from = start + 1;
    }
    out
}

fn leading_ws_start(text: &str, idx: usize) -> usize {
    text[..idx].trim_end().len()
}

fn trailing_ws(text: &str) -> usize {
    text.len() - text.trim_start().len()
}

fn splice(sq: &str, span: CharSpan, replacement: &str) -> String {
    format!("{}{}{}", &sq[..span.start], replacement, &sq[span.end..])
}

/// Carries the fragment's leading-capital over to the candidate.
fn match_case(fragment: &str, candidate: &str) -> String {
    let frag_upper = fragment.chars().next().is_some_and(char::is_uppercase);
    let mut chars = candidate.chars();
    match chars.next() {
        Some(first) if frag_upper && first.is_lowercase() => {
            first.to_uppercase().chain(chars).collect()
        }
        Some(first) if !frag_upper && first.is_uppercase() => {
            first.to_lowercase().chain(chars).collect()
        }
        _ => candidate.to_owned(),
    }
}

fn derive_rng(seed: u64, tags: &[&str]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for tag in tags {
        h.update([0xff]);
        h.update(tag.as_bytes());
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}

// ---------------------------------------------------------------------------
// Schema variants
// ---------------------------------------------------------------------------

/// Derives a renamed schema: DSR renames a seeded subset (at least one
/// table, possibly some columns); DR renames every table and every column.
/// The rename map is injective and every fresh name is absent from the
/// original schema.
pub fn derive_schema_variant(
    schema: &SchemaDescriptor,
    mr: MrId,
    seed: u64,
) -> Result<(SchemaDescriptor, BTreeMap<String, String>), MutationError> {
    if !mr.renames_schema() {
        return Err(MutationError::NotApplicable {
            mr,
            reason: "only DSR and DR derive schema variants".into(),
        });
    }
    if schema.tables.is_empty() {
        return Err(MutationError::NotApplicable { mr, reason: "schema has no tables".into() });
    }

    let mut rng = derive_rng(seed, &[&schema.db_ref, mr.name(), "schema-variant"]);
    let mut taken: BTreeSet<String> = schema.tables.iter().map(|t| t.name.clone()).collect();
    for t in &schema.tables {
        for c in &t.columns {
            taken.insert(c.name.clone());
        }
    }

    let mut map = BTreeMap::new();
    match mr {
        MrId::DR => {
            for t in &schema.tables {
                let fresh = fresh_name(&mut rng, &t.name, &mut taken);
                map.insert(t.name.clone(), fresh);
                for c in &t.columns {
                    let fresh = fresh_name(&mut rng, &c.name, &mut taken);
                    map.insert(format!("{}.{}", t.name, c.name), fresh);
                }
            }
        }
        _ => {
            let n = schema.tables.len();
            let k = rng.gen_range(1..=n);
            let mut order: Vec<usize> = (0..n).collect();
            for i in 0..k {
                let j = rng.gen_range(i..n);
                order.swap(i, j);
            }
            let chosen: BTreeSet<usize> = order[..k].iter().copied().collect();
            for (i, t) in schema.tables.iter().enumerate() {
                if chosen.contains(&i) {
                    let fresh = fresh_name(&mut rng, &t.name, &mut taken);
                    map.insert(t.name.clone(), fresh);
                }
            }
            for t in &schema.tables {
                for c in &t.columns {
                    if rng.gen_bool(0.25) {
                        let fresh = fresh_name(&mut rng, &c.name, &mut taken);
                        map.insert(format!("{}.{}", t.name, c.name), fresh);
                    }
                }
            }
        }
    }

    let variant_ref = format!(
        "{}__{}-{:08x}",
        schema.db_ref,
        mr.name().to_lowercase(),
        rng.gen::<u32>()
    );
    let mut variant = apply_rename_map(schema, &map);
    variant.db_ref = variant_ref;
    Ok((variant, map))
}

fn fresh_name(rng: &mut ChaCha8Rng, base: &str, taken: &mut BTreeSet<String>) -> String {
    loop {
        let candidate = format!("{base}_{:04x}", rng.gen_range(0..0x1_0000u32));
        if taken.insert(candidate.clone()) {
            return candidate;
        }
    }
}

/// Applies a rename map to a descriptor, remapping keys consistently.
pub fn apply_rename_map(
    schema: &SchemaDescriptor,
    map: &BTreeMap<String, String>,
) -> SchemaDescriptor {
    let table_name =
        |t: &str| map.get(t).cloned().unwrap_or_else(|| t.to_owned());
    let column_name = |t: &str, c: &str| {
        map.get(&format!("{t}.{c}")).cloned().unwrap_or_else(|| c.to_owned())
    };
    let column_ref = |r: &ColumnRef| ColumnRef {
        table: table_name(&r.table),
        column: column_name(&r.table, &r.column),
    };

    SchemaDescriptor {
        db_ref: schema.db_ref.clone(),
        tables: schema
            .tables
            .iter()
            .map(|t| TableDescriptor {
                name: table_name(&t.name),
                columns: t
                    .columns
                    .iter()
                    .map(|c| crate::model::ColumnDescriptor {
                        name: column_name(&t.name, &c.name),
                        declared_type: c.declared_type.clone(),
                    })
                    .collect(),
            })
            .collect(),
        primary_keys: schema.primary_keys.iter().map(|r| column_ref(r)).collect(),
        foreign_keys: schema
            .foreign_keys
            .iter()
            .map(|fk| ForeignKey { from: column_ref(&fk.from), to: column_ref(&fk.to) })
            .collect(),
    }
}

/// Builds the map that undoes `map` when applied to the renamed schema.
pub fn invert_rename_map(
    map: &BTreeMap<String, String>,
) -> BTreeMap<String, String> {
    let mut inv = BTreeMap::new();
    for (old, new) in map {
        if let Some((table, column)) = old.split_once('.') {
            let renamed_table = map.get(table).map(String::as_str).unwrap_or(table);
            inv.insert(format!("{renamed_table}.{new}"), column.to_owned());
        } else {
            inv.insert(new.clone(), old.clone());
        }
    }
    inv
}

// ---------------------------------------------------------------------------
// Pair validation
// ---------------------------------------------------------------------------

/// Machine-readable rejection reasons.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidationReason {
    EmptyQuestion,
    SpanMismatch,
    NonLocalEdit,
    MissingReplacement,
    UnexpectedReplacement,
    AmbiguousReplacement,
    UnknownFragment,
    ReplacementNotInLexicon,
    FollowupNotSuffixed,
    MissingRenameMap,
    UnexpectedRenameMap,
    EmptyRenameMap,
    NonInjectiveRenameMap,
}

impl ValidationReason {
    pub fn code(self) -> &'static str {
        match self {
            ValidationReason::EmptyQuestion => "empty-question",
            ValidationReason::SpanMismatch => "span-mismatch",
            ValidationReason::NonLocalEdit => "non-local edit",
            ValidationReason::MissingReplacement => "missing-replacement",
            ValidationReason::UnexpectedReplacement => "unexpected-replacement",
            ValidationReason::AmbiguousReplacement => "ambiguous-replacement",
            ValidationReason::UnknownFragment => "unknown-fragment",
            ValidationReason::ReplacementNotInLexicon => "replacement-not-in-lexicon",
            ValidationReason::FollowupNotSuffixed => "followup-not-suffixed",
            ValidationReason::MissingRenameMap => "missing-rename-map",
            ValidationReason::UnexpectedRenameMap => "unexpected-rename-map",
            ValidationReason::EmptyRenameMap => "empty-rename-map",
            ValidationReason::NonInjectiveRenameMap => "non-injective-rename-map",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("pair ({case_ref}, {mr}) rejected: {}", reason.code())]
pub struct ValidationFailure {
    pub case_ref: String,
    pub mr: MrId,
    pub reason: ValidationReason,
}

/// Re-checks every pair invariant: span addressing, edit locality, lexicon
/// membership, replacement unambiguity, and rename-map shape.
pub fn validate_pair(pair: QuestionPair, lexicon: &Lexicon) -> Result<QuestionPair, ValidationFailure> {
    let fail = |reason| {
        Err(ValidationFailure { case_ref: pair.case_ref.clone(), mr: pair.mr, reason })
    };
    let sq = pair.source_question.as_str();
    let fuq = pair.followup_question.as_str();
    let span = pair.trace.char_span;

    if sq.trim().is_empty() || fuq.trim().is_empty() {
        return fail(ValidationReason::EmptyQuestion);
    }
    if span.start > span.end
        || span.end > sq.len()
        || !sq.is_char_boundary(span.start)
        || !sq.is_char_boundary(span.end)
        || &sq[span.start..span.end] != pair.trace.fragment_original
    {
        return fail(ValidationReason::SpanMismatch);
    }
    if pair.trace.schema_rename_map.is_some() != pair.mr.renames_schema() {
        return fail(if pair.mr.renames_schema() {
            ValidationReason::MissingRenameMap
        } else {
            ValidationReason::UnexpectedRenameMap
        });
    }

    if pair.mr.is_substitution() {
        let Some(replacement) = pair.trace.fragment_replacement.as_deref() else {
            return fail(ValidationReason::MissingReplacement);
        };
        if splice(sq, span, replacement) != fuq {
            return fail(ValidationReason::NonLocalEdit);
        }
        if phrase_occurs(sq, replacement) {
            return fail(ValidationReason::AmbiguousReplacement);
        }
        if !substitution_in_lexicon(pair.mr, &pair.trace.fragment_original, replacement, lexicon) {
            return fail(ValidationReason::UnknownFragment);
        }
    } else if pair.mr.is_removal() {
        if pair.trace.fragment_replacement.is_some() {
            return fail(ValidationReason::UnexpectedReplacement);
        }
        if splice(sq, span, "") != fuq {
            return fail(ValidationReason::NonLocalEdit);
        }
        if pair.mr == MrId::PR {
            let prefix = pair.trace.fragment_original.trim();
            if !lexicon.prefixes.iter().any(|p| p.trim().eq_ignore_ascii_case(prefix)) {
                return fail(ValidationReason::UnknownFragment);
            }
        }
    } else {
        match pair.mr {
            MrId::PI => {
                let Some(inserted) = pair.trace.fragment_replacement.as_deref() else {
                    return fail(ValidationReason::MissingReplacement);
                };
                if !(span.is_empty() && span.start == 0) {
                    return fail(ValidationReason::SpanMismatch);
                }
                if fuq != format!("{inserted}{sq}") {
                    return fail(ValidationReason::FollowupNotSuffixed);
                }
                let prefix = inserted.trim();
                if !lexicon.prefixes.iter().any(|p| p.trim().eq_ignore_ascii_case(prefix)) {
                    return fail(ValidationReason::ReplacementNotInLexicon);
                }
            }
            MrId::SC => {
                let Some(appended) = pair.trace.fragment_replacement.as_deref() else {
                    return fail(ValidationReason::MissingReplacement);
                };
                if !(span.is_empty() && span.start == sq.len()) {
                    return fail(ValidationReason::SpanMismatch);
                }
                if fuq != format!("{sq}{appended}") {
                    return fail(ValidationReason::NonLocalEdit);
                }
                let filler = appended.trim();
                if !lexicon.filler_phrases.iter().any(|f| f.trim().eq_ignore_ascii_case(filler)) {
                    return fail(ValidationReason::ReplacementNotInLexicon);
                }
            }
            MrId::DSR | MrId::DR => {
                let map = pair.trace.schema_rename_map.as_ref().expect("checked above");
                if map.is_empty() {
                    return fail(ValidationReason::EmptyRenameMap);
                }
                let values: BTreeSet<&String> = map.values().collect();
                if values.len() != map.len() {
                    return fail(ValidationReason::NonInjectiveRenameMap);
                }
                if fuq != sq {
                    return fail(ValidationReason::NonLocalEdit);
                }
            }
            _ => unreachable!("all relations are substitution, removal, insertion, or rename"),
        }
    }

    Ok(pair)
}

fn substitution_in_lexicon(mr: MrId, fragment: &str, replacement: &str, lexicon: &Lexicon) -> bool {
    if mr == MrId::PS {
        let known = |s: &str| {
            lexicon.prefixes.iter().any(|p| p.trim().eq_ignore_ascii_case(s.trim()))
        };
        return known(fragment) && known(replacement);
    }
    let table = match mr {
        MrId::SROCW | MrId::CRU => &lexicon.comparative_synonyms,
        MrId::AROCW => &lexicon.comparative_antonyms,
        MrId::ESR => &lexicon.entity_synonyms,
        MrId::ENSR => &lexicon.entity_non_synonyms,
        MrId::SROE => &lexicon.extrema_synonyms,
        MrId::AROE => &lexicon.extrema_antonyms,
        MrId::CRE => &lexicon.comparative_expanders,
        MrId::CWR => &lexicon.comparative_reducers,
        _ => return false,
    };
    table
        .get(&fragment.to_lowercase())
        .is_some_and(|cands| cands.iter().any(|c| c.eq_ignore_ascii_case(replacement)))
}

/// Sanity check used before committing pairs to disk: family grouping of a
/// pair list matches an expected stage.
pub fn pairs_in_family(pairs: &[QuestionPair], family: MrFamily) -> bool {
    pairs.iter().all(|p| p.mr.family() == family)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn case(q: &str) -> SourceCase {
        SourceCase::new("c1", q, "db1")
    }

    fn toy_schema() -> SchemaDescriptor {
        use crate::model::ColumnDescriptor;
        SchemaDescriptor {
            db_ref: "db1".into(),
            tables: vec![
                TableDescriptor {
                    name: "student".into(),
                    columns: vec![
                        ColumnDescriptor { name: "stuid".into(), declared_type: "integer".into() },
                        ColumnDescriptor { name: "age".into(), declared_type: "integer".into() },
                    ],
                },
                TableDescriptor {
                    name: "pets".into(),
                    columns: vec![ColumnDescriptor {
                        name: "petid".into(),
                        declared_type: "integer".into(),
                    }],
                },
            ],
            primary_keys: vec![ColumnRef::new("student", "stuid")],
            foreign_keys: vec![],
        }
    }

    #[test]
    fn applicability_extrema_question() {
        let lex = Lexicon::builtin_default();
        let rels = applicable_relations("What is the highest salary?", &toy_schema(), &lex);
        assert!(rels.contains(&MrId::SROE));
        assert!(rels.contains(&MrId::AROE));
        assert!(!rels.contains(&MrId::PR));
    }

    #[test]
    fn applicability_comparative_with_prefix() {
        let lex = Lexicon::builtin_default();
        let rels = applicable_relations("Show me all students older than 20", &toy_schema(), &lex);
        for mr in [MrId::PR, MrId::SROCW, MrId::AROCW, MrId::CRU, MrId::CRE, MrId::CWR] {
            assert!(rels.contains(&mr), "{mr}");
        }
    }

    #[test]
    fn applicability_empty_lexicon() {
        let lex = Lexicon::empty();
        let rels = applicable_relations("What is the highest salary?", &toy_schema(), &lex);
        let expected: BTreeSet<MrId> =
            BTreeSet::from([MrId::PI, MrId::OS, MrId::SC, MrId::DSR, MrId::DR]);
        assert_eq!(rels, expected);
    }

    #[test]
    fn aroe_flips_highest_to_lowest() {
        let lex = Lexicon::builtin_default();
        let c = case("What is the highest salary of any employee?");
        let pair = mutate(&c, MrId::AROE, &lex, &toy_schema(), 7).unwrap();
        assert_eq!(pair.followup_question, "What is the lowest salary of any employee?");
        assert_eq!(pair.trace.fragment_original, "highest");
        assert_eq!(pair.trace.fragment_replacement.as_deref(), Some("lowest"));
    }

    #[test]
    fn cre_widens_greater_than() {
        let lex = Lexicon::from_toml_str(
            r#"
            [comparative_expanders]
            "greater than" = ["not less than"]
            [comparative_reducers]
            "not less than" = ["greater than"]
            "#,
        )
        .unwrap();
        let c = case("Show all orders with totals greater than 50");
        let pair = mutate(&c, MrId::CRE, &lex, &toy_schema(), 3).unwrap();
        assert_eq!(pair.followup_question, "Show all orders with totals not less than 50");
    }

    #[test]
    fn pi_prepends_a_prefix_keeping_the_source_as_suffix() {
        let mut lex = Lexicon::empty();
        lex.prefixes = vec!["Show me".into()];
        let sq = "What major is every student who does not own a cat as a pet, \
                  and also how old are they?";
        let pair = mutate(&case(sq), MrId::PI, &lex, &toy_schema(), 11).unwrap();
        assert!(pair.followup_question.ends_with(sq));
        let expected = "Show me what major is every student who does not own a cat as a pet, \
                        and also how old are they?";
        assert!(pair.followup_question.eq_ignore_ascii_case(expected));
    }

    #[test]
    fn mutation_is_deterministic() {
        let lex = Lexicon::builtin_default();
        let c = case("Show me all students older than 20 who own a cat.");
        for mr in [MrId::SROCW, MrId::AROCW, MrId::ESR, MrId::PI, MrId::PS, MrId::SC, MrId::DSR] {
            let a = mutate(&c, mr, &lex, &toy_schema(), 42).unwrap();
            let b = mutate(&c, mr, &lex, &toy_schema(), 42).unwrap();
            assert_eq!(a, b, "{mr}");
        }
    }

    #[test]
    fn rc_removes_a_conditional_clause() {
        let lex = Lexicon::builtin_default();
        let c = case("List the names of students who are older than 20, sorted by age.");
        let pair = mutate(&c, MrId::RC, &lex, &toy_schema(), 5).unwrap();
        assert_eq!(pair.followup_question, "List the names of students, sorted by age.");
        assert_eq!(pair.trace.fragment_original, " who are older than 20");
    }

    #[test]
    fn os_prefers_filler_then_punctuation() {
        let lex = Lexicon::builtin_default();
        let with_filler = case("List all pets. No rush at all.");
        let pair = mutate(&with_filler, MrId::OS, &lex, &toy_schema(), 1).unwrap();
        assert_eq!(pair.followup_question, "List all pets.");

        let plain = case("List all pets?");
        let pair = mutate(&plain, MrId::OS, &lex, &toy_schema(), 1).unwrap();
        assert_eq!(pair.followup_question, "List all pets");
    }

    #[test]
    fn dsr_renames_a_subset_and_dr_renames_everything() {
        let schema = toy_schema();
        for seed in 0..20 {
            let (variant, map) = derive_schema_variant(&schema, MrId::DSR, seed).unwrap();
            let renamed_tables =
                schema.tables.iter().filter(|t| map.contains_key(&t.name)).count();
            assert!(renamed_tables >= 1, "seed {seed}");
            assert_eq!(variant.tables.len(), schema.tables.len());
        }

        let (variant, map) = derive_schema_variant(&schema, MrId::DR, 9).unwrap();
        let originals: BTreeSet<_> = schema.tables.iter().map(|t| t.name.clone()).collect();
        for t in &variant.tables {
            assert!(!originals.contains(&t.name), "{} survived", t.name);
        }
        for t in &schema.tables {
            assert!(map.contains_key(&t.name));
            for c in &t.columns {
                assert!(map.contains_key(&format!("{}.{}", t.name, c.name)));
            }
        }
    }

    #[test]
    fn rename_map_is_injective_and_invertible() {
        let schema = toy_schema();
        for seed in 0..20 {
            for mr in [MrId::DSR, MrId::DR] {
                let (variant, map) = derive_schema_variant(&schema, mr, seed).unwrap();
                let values: BTreeSet<_> = map.values().collect();
                assert_eq!(values.len(), map.len(), "non-injective at seed {seed}");
                let mut back = apply_rename_map(&variant, &invert_rename_map(&map));
                back.db_ref = schema.db_ref.clone();
                assert_eq!(back, schema, "round trip failed at seed {seed} for {mr}");
            }
        }
    }

    #[test]
    fn validate_accepts_generated_pairs() {
        let lex = Lexicon::builtin_default();
        let c = case("Show me all students older than 20 who own a cat.");
        let schema = toy_schema();
        for mr in applicable_relations(&c.question, &schema, &lex) {
            match mutate(&c, mr, &lex, &schema, 13) {
                Ok(pair) => {
                    validate_pair(pair, &lex).unwrap_or_else(|e| panic!("{mr}: {e}"));
                }
                Err(MutationError::NoUsableCandidate { .. }) => {}
                Err(e) => panic!("{mr}: {e}"),
            }
        }
    }

    #[test]
    fn validate_rejects_two_place_edit() {
        let lex = Lexicon::builtin_default();
        let c = case("students older than 20 and dogs older than 3");
        let mut pair = mutate(&c, MrId::SROCW, &lex, &toy_schema(), 2).unwrap();
        // corrupt: apply the same replacement to the second site too
        pair.followup_question = pair
            .followup_question
            .replacen("older than", pair.trace.fragment_replacement.as_deref().unwrap(), 1)
            .replace("older than", pair.trace.fragment_replacement.as_deref().unwrap());
        let err = validate_pair(pair, &lex).unwrap_err();
        assert_eq!(err.reason, ValidationReason::NonLocalEdit);
        assert_eq!(err.reason.code(), "non-local edit");
    }

    #[test]
    fn validate_rejects_corrupted_pi_suffix() {
        let mut lex = Lexicon::empty();
        lex.prefixes = vec!["Show me".into()];
        let pair = mutate(&case("What pets are there?"), MrId::PI, &lex, &toy_schema(), 4).unwrap();
        let mut bad = pair.clone();
        // corrupt one character of the suffix
        bad.followup_question = bad.followup_question.replace("pets", "pats");
        let err = validate_pair(bad, &lex).unwrap_err();
        assert_eq!(err.reason, ValidationReason::FollowupNotSuffixed);
        assert!(validate_pair(pair, &lex).is_ok());
    }

    #[test]
    fn validate_rejects_ambiguous_replacement() {
        let lex = Lexicon::builtin_default();
        let sq = "students older than 20 and teachers younger than 60";
        let pair = QuestionPair {
            case_ref: "c1".into(),
            mr: MrId::AROCW,
            source_question: sq.into(),
            followup_question: splice(sq, CharSpan::new(9, 19), "younger than"),
            trace: MutationTrace {
                fragment_original: "older than".into(),
                fragment_replacement: Some("younger than".into()),
                char_span: CharSpan::new(9, 19),
                schema_rename_map: None,
            },
            followup_db_ref: "db1".into(),
        };
        let err = validate_pair(pair, &lex).unwrap_err();
        assert_eq!(err.reason, ValidationReason::AmbiguousReplacement);
    }
}
