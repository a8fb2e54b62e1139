//! Mutation lexicon: the phrase tables that drive deterministic question
//! mutation, plus case-insensitive fragment matching over questions.
//!
//! The file format is TOML with one map per section; the shipping English
//! defaults live in `lexicons/en-default/lexicon.toml` and are embedded into
//! the library so the toolchain works without any external file.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// Phrase tables for question mutation.
///
/// Map keys and candidate lists are folded to lowercase on load; fragment
/// matching against questions is case-insensitive, and the mutation engine
/// restores a leading capital when it substitutes at the start of a
/// sentence. `prefixes` and `filler_phrases` keep their stored casing since
/// they are inserted verbatim.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    #[serde(default)]
    pub comparative_synonyms: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub comparative_antonyms: BTreeMap<String, Vec<String>>,
    /// Strict bound to inclusive bound ("greater than" -> "not less than").
    #[serde(default)]
    pub comparative_expanders: BTreeMap<String, Vec<String>>,
    /// Inclusive bound to strict bound ("at least" -> "more than").
    #[serde(default)]
    pub comparative_reducers: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub extrema_synonyms: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub extrema_antonyms: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub entity_synonyms: BTreeMap<String, Vec<String>>,
    /// Same-domain, different-referent entities ("cat" -> "dog").
    #[serde(default)]
    pub entity_non_synonyms: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub prefixes: Vec<String>,
    /// Schema-neutral trailing clauses appended by SC.
    #[serde(default)]
    pub filler_phrases: Vec<String>,
    /// Clause cue words scanned by RC; defaults cover English relative and
    /// filter clauses.
    #[serde(default = "default_rc_cues")]
    pub rc_cue_words: Vec<String>,
}

fn default_rc_cues() -> Vec<String> {
    ["who", "whose", "which", "that", "with", "where", "having"]
        .map(str::to_owned)
        .to_vec()
}

const BUILTIN: &str = include_str!("../../../lexicons/en-default/lexicon.toml");

/// Lexicon load/validation failures.
#[derive(Debug, thiserror::Error)]
pub enum LexiconError {
    #[error("failed to read lexicon {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse lexicon: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{table}: phrase {phrase:?} maps to itself")]
    SelfMapping { table: &'static str, phrase: String },
    #[error("expander {key:?} -> {value:?} has no inverse reducer entry")]
    MissingInverse { key: String, value: String },
}

impl Lexicon {
    /// Parses and validates a lexicon from TOML text.
    pub fn from_toml_str(text: &str) -> Result<Self, LexiconError> {
        let mut lex: Lexicon = toml::from_str(text)?;
        lex.fold_case();
        lex.validate()?;
        Ok(lex)
    }

    pub fn load(path: &Path) -> Result<Self, LexiconError> {
        let text = std::fs::read_to_string(path).map_err(|source| LexiconError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// The embedded English defaults.
    pub fn builtin_default() -> Self {
        Self::from_toml_str(BUILTIN).expect("embedded default lexicon is valid")
    }

    /// An empty lexicon (useful for applicability edge cases).
    pub fn empty() -> Self {
        Lexicon { rc_cue_words: default_rc_cues(), ..Default::default() }
    }

    fn fold_case(&mut self) {
        for map in [
            &mut self.comparative_synonyms,
            &mut self.comparative_antonyms,
            &mut self.comparative_expanders,
            &mut self.comparative_reducers,
            &mut self.extrema_synonyms,
            &mut self.extrema_antonyms,
            &mut self.entity_synonyms,
            &mut self.entity_non_synonyms,
        ] {
            let folded: BTreeMap<String, Vec<String>> = std::mem::take(map)
                .into_iter()
                .map(|(k, vs)| {
                    (
                        k.trim().to_lowercase(),
                        vs.into_iter().map(|v| v.trim().to_lowercase()).collect(),
                    )
                })
                .collect();
            *map = folded;
        }
        for cue in &mut self.rc_cue_words {
            *cue = cue.trim().to_lowercase();
        }
    }

    fn validate(&self) -> Result<(), LexiconError> {
        for (name, map) in [
            ("comparative_antonyms", &self.comparative_antonyms),
            ("comparative_expanders", &self.comparative_expanders),
            ("comparative_reducers", &self.comparative_reducers),
            ("extrema_antonyms", &self.extrema_antonyms),
            ("entity_non_synonyms", &self.entity_non_synonyms),
        ] {
            for (k, vs) in map {
                if vs.iter().any(|v| v == k) {
                    return Err(LexiconError::SelfMapping { table: name, phrase: k.clone() });
                }
            }
        }
        // Wherever an expander target is itself a reducer key, the reducer
        // entry must map back.
        for (k, vs) in &self.comparative_expanders {
            for v in vs {
                if let Some(back) = self.comparative_reducers.get(v) {
                    if !back.contains(k) {
                        return Err(LexiconError::MissingInverse {
                            key: k.clone(),
                            value: v.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Keys treated as "a comparative word occurs in the question".
    pub fn comparative_keys(&self) -> impl Iterator<Item = &String> {
        self.comparative_synonyms
            .keys()
            .chain(self.comparative_antonyms.keys())
            .chain(self.comparative_expanders.keys())
            .chain(self.comparative_reducers.keys())
    }

    pub fn entity_keys(&self) -> impl Iterator<Item = &String> {
        self.entity_synonyms.keys().chain(self.entity_non_synonyms.keys())
    }

    pub fn extrema_keys(&self) -> impl Iterator<Item = &String> {
        self.extrema_synonyms.keys().chain(self.extrema_antonyms.keys())
    }

    /// The prefix the question starts with, if any, longest match first.
    pub fn matched_prefix<'q>(&self, question: &'q str) -> Option<&'q str> {
        let mut best: Option<usize> = None;
        for p in &self.prefixes {
            let p = p.trim();
            if p.is_empty() || p.len() > question.len() {
                continue;
            }
            if question[..p.len()].eq_ignore_ascii_case(p) && boundary_after(question, p.len()) {
                best = Some(best.map_or(p.len(), |b| b.max(p.len())));
            }
        }
        best.map(|len| &question[..len])
    }
}

// ---------------------------------------------------------------------------
// Fragment matching
// ---------------------------------------------------------------------------

/// A phrase occurrence inside a question.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FragmentMatch {
    pub start: usize,
    pub end: usize,
    /// The lexicon key that matched (lowercase).
    pub key: String,
}

fn boundary_before(text: &str, idx: usize) -> bool {
    idx == 0 || !text[..idx].chars().next_back().is_some_and(char::is_alphanumeric)
}

fn boundary_after(text: &str, idx: usize) -> bool {
    idx >= text.len() || !text[idx..].chars().next().is_some_and(char::is_alphanumeric)
}

/// All case-insensitive, word-bounded occurrences of `phrase` in `text`.
fn occurrences(text: &str, phrase: &str) -> Vec<(usize, usize)> {
    let hay = text.to_ascii_lowercase();
    let needle = phrase.to_ascii_lowercase();
    if needle.is_empty() {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(pos) = hay[from..].find(&needle) {
        let start = from + pos;
        let end = start + needle.len();
        if boundary_before(text, start) && boundary_after(text, end) {
            out.push((start, end));
        }
        from = start + 1;
    }
    out
}

/// True when `phrase` occurs in `text` as a word-bounded fragment.
pub fn phrase_occurs(text: &str, phrase: &str) -> bool {
    !occurrences(text, phrase).is_empty()
}

/// The leftmost occurrence of any key; ties broken toward the longest key so
/// "greater than" wins over "greater".
pub fn leftmost_match<'a, I>(question: &str, keys: I) -> Option<FragmentMatch>
where
    I: IntoIterator<Item = &'a String>,
{
    let mut best: Option<FragmentMatch> = None;
    for key in keys {
        if let Some(&(start, end)) = occurrences(question, key).first() {
            let better = match &best {
                None => true,
                Some(b) => start < b.start || (start == b.start && end > b.end),
            };
            if better {
                best = Some(FragmentMatch { start, end, key: key.clone() });
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_default_parses_and_validates() {
        let lex = Lexicon::builtin_default();
        assert!(!lex.comparative_synonyms.is_empty());
        assert!(!lex.prefixes.is_empty());
        assert!(lex.extrema_antonyms.contains_key("highest"));
    }

    #[test]
    fn self_mapping_antonym_is_rejected() {
        let err = Lexicon::from_toml_str(
            r#"
            [comparative_antonyms]
            "more than" = ["More Than"]
            "#,
        )
        .unwrap_err();
        assert!(matches!(err, LexiconError::SelfMapping { .. }));
    }

    #[test]
    fn expander_without_inverse_reducer_is_rejected() {
        let err = Lexicon::from_toml_str(
            r#"
            [comparative_expanders]
            "more than" = ["at least"]
            [comparative_reducers]
            "at least" = ["greater than"]
            "#,
        )
        .unwrap_err();
        assert!(matches!(err, LexiconError::MissingInverse { .. }));
    }

    #[test]
    fn matching_is_word_bounded_and_leftmost() {
        let q = "Which molder is older than the oldest folder?";
        let keys = vec!["older than".to_owned(), "oldest".to_owned()];
        let m = leftmost_match(q, keys.iter()).unwrap();
        // "molder" must not match "older than"; first true hit is "older than"
        assert_eq!(&q[m.start..m.end], "older than");
        assert!(phrase_occurs(q, "oldest"));
        assert!(!phrase_occurs("the moldest", "oldest"));
    }

    #[test]
    fn longest_key_wins_at_same_position() {
        let q = "salaries greater than 10";
        let keys = vec!["greater".to_owned(), "greater than".to_owned()];
        let m = leftmost_match(q, keys.iter()).unwrap();
        assert_eq!(m.key, "greater than");
    }

    #[test]
    fn prefix_match_requires_word_boundary() {
        let lex = Lexicon::builtin_default();
        assert_eq!(lex.matched_prefix("Show me the pets"), Some("Show me"));
        assert_eq!(lex.matched_prefix("show me the pets"), Some("show me"));
        assert_eq!(lex.matched_prefix("Listings of pets"), None);
        assert_eq!(lex.matched_prefix("What is the highest salary?"), None);
    }
}
