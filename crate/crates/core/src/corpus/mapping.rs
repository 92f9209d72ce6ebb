//! Source-tagset to Universal-tagset mapping.
//!
//! The mapped tag is the third vote in aggregation. Lookups are total: any
//! `(bangor_tag, lang)` pair resolves through an entry or the fallback tag.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::tags::{LangId, UniversalTag};
use super::token::Token;

/// Language scope of a mapping entry; `Any` applies to every language.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LangScope {
    Eng,
    Spa,
    Und,
    Any,
}

impl LangScope {
    fn lookup_order(lang: LangId) -> &'static [LangScope] {
        match lang {
            LangId::Eng => &[LangScope::Eng, LangScope::Any],
            LangId::Spa => &[LangScope::Spa, LangScope::Any],
            LangId::Und => &[LangScope::Und, LangScope::Eng, LangScope::Spa, LangScope::Any],
        }
    }
}

/// What to do with file entries whose source tag is itself ambiguous.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AmbiguousEntryPolicy {
    #[default]
    Reject,
    Drop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MappingTable {
    entries: BTreeMap<(String, LangScope), UniversalTag>,
    fallback: UniversalTag,
    delimiter: String,
}

#[derive(Debug, Error)]
pub enum MappingError {
    #[error("{}", .0.iter().map(|t| format!("unknown tag {t}")).collect::<Vec<_>>().join("; "))]
    UnknownTags(Vec<String>),
    #[error("mapping file has no fallback tag")]
    MissingFallback,
    #[error("ambiguous source tag {0:?} in mapping entries")]
    AmbiguousEntry(String),
    #[error("conflicting entries for ({0}, {1:?})")]
    Conflict(String, LangScope),
    #[error("empty ambiguity delimiter")]
    EmptyDelimiter,
    #[error("mapping file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("reading mapping file: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMapping {
    fallback: Option<String>,
    #[serde(default)]
    entries: Vec<RawEntry>,
    #[serde(default = "default_delimiter")]
    ambiguity_delimiter: String,
    #[serde(default)]
    ambiguous_entries: AmbiguousEntryPolicy,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    bangor: String,
    lang: LangScope,
    universal: String,
}

fn default_delimiter() -> String {
    "|".to_string()
}

impl MappingTable {
    pub fn new(fallback: UniversalTag) -> Self {
        MappingTable {
            entries: BTreeMap::new(),
            fallback,
            delimiter: default_delimiter(),
        }
    }

    pub fn with_entry(mut self, bangor: &str, lang: LangScope, tag: UniversalTag) -> Self {
        self.entries.insert((bangor.to_string(), lang), tag);
        self
    }

    pub fn fallback(&self) -> UniversalTag {
        self.fallback
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Serializes the table in the file format read by [`parse_mapping`].
    pub fn to_json(&self) -> String {
        let entries: Vec<_> = self
            .entries()
            .map(|(bangor, lang, tag)| {
                serde_json::json!({"bangor": bangor, "lang": lang, "universal": tag.as_str()})
            })
            .collect();
        let value = serde_json::json!({
            "fallback": self.fallback.as_str(),
            "ambiguity_delimiter": self.delimiter,
            "entries": entries,
        });
        serde_json::to_string_pretty(&value).expect("json value")
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, LangScope, UniversalTag)> {
        self.entries
            .iter()
            .map(|((bangor, lang), tag)| (bangor.as_str(), *lang, *tag))
    }

    fn resolve_exact(&self, bangor: &str, lang: LangId) -> Option<UniversalTag> {
        LangScope::lookup_order(lang)
            .iter()
            .find_map(|scope| self.entries.get(&(bangor.to_string(), *scope)).copied())
    }

    /// Resolves a source tag. Tags carrying several candidates (split on the
    /// ambiguity delimiter) resolve only when every candidate maps to the same
    /// Universal tag.
    pub fn lookup(&self, bangor: &str, lang: LangId) -> UniversalTag {
        if bangor.contains(self.delimiter.as_str()) {
            let mut resolved = None;
            for candidate in bangor.split(self.delimiter.as_str()) {
                match (self.resolve_exact(candidate.trim(), lang), resolved) {
                    (None, _) => return self.fallback,
                    (Some(tag), None) => resolved = Some(tag),
                    (Some(tag), Some(prev)) if tag != prev => return self.fallback,
                    _ => {}
                }
            }
            return resolved.unwrap_or(self.fallback);
        }
        self.resolve_exact(bangor, lang).unwrap_or(self.fallback)
    }
}

pub fn map_to_universal(token: &Token, table: &MappingTable) -> UniversalTag {
    table.lookup(&token.bangor_tag, token.lang)
}

pub fn parse_mapping(text: &str) -> Result<MappingTable, MappingError> {
    let raw: RawMapping = serde_json::from_str(text)?;
    if raw.ambiguity_delimiter.is_empty() {
        return Err(MappingError::EmptyDelimiter);
    }

    let mut unknown = Vec::new();
    let fallback = match raw.fallback.as_deref() {
        None => return Err(MappingError::MissingFallback),
        Some(name) => match name.parse::<UniversalTag>() {
            Ok(tag) => Some(tag),
            Err(_) => {
                unknown.push(name.to_string());
                None
            }
        },
    };

    let mut entries = BTreeMap::new();
    for entry in raw.entries {
        let tag = match entry.universal.parse::<UniversalTag>() {
            Ok(tag) => tag,
            Err(_) => {
                unknown.push(entry.universal);
                continue;
            }
        };
        if entry.bangor.contains(raw.ambiguity_delimiter.as_str()) {
            match raw.ambiguous_entries {
                AmbiguousEntryPolicy::Reject => {
                    return Err(MappingError::AmbiguousEntry(entry.bangor))
                }
                AmbiguousEntryPolicy::Drop => continue,
            }
        }
        let key = (entry.bangor, entry.lang);
        if let Some(prev) = entries.insert(key.clone(), tag) {
            if prev != tag {
                return Err(MappingError::Conflict(key.0, key.1));
            }
        }
    }
    if !unknown.is_empty() {
        return Err(MappingError::UnknownTags(unknown));
    }

    Ok(MappingTable {
        entries,
        fallback: fallback.expect("fallback parsed when no unknown tags"),
        delimiter: raw.ambiguity_delimiter,
    })
}

pub fn load_mapping(path: &Path) -> Result<MappingTable, MappingError> {
    parse_mapping(&std::fs::read_to_string(path)?)
}
