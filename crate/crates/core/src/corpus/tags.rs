use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The 17-tag Universal part-of-speech inventory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum UniversalTag {
    Adj,
    Adp,
    Adv,
    Aux,
    Conj,
    Sconj,
    Det,
    Intj,
    Noun,
    Num,
    Part,
    Pron,
    Propn,
    Punct,
    Sym,
    Verb,
    X,
}

impl UniversalTag {
    pub const COUNT: usize = 17;

    pub const ALL: [UniversalTag; 17] = [
        UniversalTag::Adj,
        UniversalTag::Adp,
        UniversalTag::Adv,
        UniversalTag::Aux,
        UniversalTag::Conj,
        UniversalTag::Sconj,
        UniversalTag::Det,
        UniversalTag::Intj,
        UniversalTag::Noun,
        UniversalTag::Num,
        UniversalTag::Part,
        UniversalTag::Pron,
        UniversalTag::Propn,
        UniversalTag::Punct,
        UniversalTag::Sym,
        UniversalTag::Verb,
        UniversalTag::X,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            UniversalTag::Adj => "ADJ",
            UniversalTag::Adp => "ADP",
            UniversalTag::Adv => "ADV",
            UniversalTag::Aux => "AUX",
            UniversalTag::Conj => "CONJ",
            UniversalTag::Sconj => "SCONJ",
            UniversalTag::Det => "DET",
            UniversalTag::Intj => "INTJ",
            UniversalTag::Noun => "NOUN",
            UniversalTag::Num => "NUM",
            UniversalTag::Part => "PART",
            UniversalTag::Pron => "PRON",
            UniversalTag::Propn => "PROPN",
            UniversalTag::Punct => "PUNCT",
            UniversalTag::Sym => "SYM",
            UniversalTag::Verb => "VERB",
            UniversalTag::X => "X",
        }
    }

    /// Position in [`UniversalTag::ALL`]; stable, usable as an array index.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }
}

impl fmt::Display for UniversalTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown tag {0}")]
pub struct UnknownTag(pub String);

impl FromStr for UniversalTag {
    type Err = UnknownTag;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|tag| tag.as_str() == s)
            .ok_or_else(|| UnknownTag(s.to_string()))
    }
}

/// Per-token language identifier carried by the source transcripts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LangId {
    Eng,
    Spa,
    Und,
}

impl LangId {
    pub const ALL: [LangId; 3] = [LangId::Eng, LangId::Spa, LangId::Und];

    pub fn as_str(self) -> &'static str {
        match self {
            LangId::Eng => "eng",
            LangId::Spa => "spa",
            LangId::Und => "und",
        }
    }
}

impl fmt::Display for LangId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown language id {0} (expected eng, spa or und)")]
pub struct UnknownLang(pub String);

impl FromStr for LangId {
    type Err = UnknownLang;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "eng" => Ok(LangId::Eng),
            "spa" => Ok(LangId::Spa),
            "und" => Ok(LangId::Und),
            other => Err(UnknownLang(other.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn exactly_seventeen_distinct_tags() {
        let names: HashSet<_> = UniversalTag::ALL.iter().map(|t| t.as_str()).collect();
        assert_eq!(names.len(), 17);
        for (i, tag) in UniversalTag::ALL.iter().enumerate() {
            assert_eq!(tag.index(), i);
            assert_eq!(UniversalTag::from_index(i), Some(*tag));
        }
        assert_eq!(UniversalTag::from_index(17), None);
    }

    #[test]
    fn tag_names_round_trip() {
        for tag in UniversalTag::ALL {
            assert_eq!(tag.as_str().parse::<UniversalTag>().unwrap(), tag);
            let json = serde_json::to_string(&tag).unwrap();
            assert_eq!(json, format!("\"{}\"", tag.as_str()));
        }
    }

    #[test]
    fn rejects_unknown_names() {
        let err = "NOUNS".parse::<UniversalTag>().unwrap_err();
        assert_eq!(err.to_string(), "unknown tag NOUNS");
        assert!("noun".parse::<UniversalTag>().is_err());
        assert!(serde_json::from_str::<UniversalTag>("\"VRB\"").is_err());
    }

    #[test]
    fn lang_ids() {
        for lang in LangId::ALL {
            assert_eq!(lang.as_str().parse::<LangId>().unwrap(), lang);
        }
        assert!("en".parse::<LangId>().is_err());
    }
}
