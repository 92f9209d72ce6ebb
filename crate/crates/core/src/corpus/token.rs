use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::tags::LangId;

/// Corpus-wide token identifier, derived from `(utterance_id, position)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub String);

impl TokenId {
    pub fn new(utterance_id: &str, position: u32) -> Self {
        TokenId(format!("{utterance_id}:{position}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for TokenId {
    fn from(s: &str) -> Self {
        TokenId(s.to_string())
    }
}

/// One transcribed word with its language id and source-corpus tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub token_id: TokenId,
    pub surface: String,
    pub lang: LangId,
    /// Tag from the source corpus' own tagset; opaque until mapped.
    pub bangor_tag: String,
    pub utterance_id: String,
    pub position: u32,
    /// Whole utterance, for display.
    pub context: String,
}

impl Token {
    /// Surface form used for wordlist lookups.
    pub fn key(&self) -> String {
        self.surface.to_lowercase()
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{utterance} line {line}: {message}")]
    Malformed {
        utterance: String,
        line: usize,
        message: String,
    },
    #[error("duplicate token {utterance}:{position} at line {line}")]
    Duplicate {
        utterance: String,
        position: u32,
        line: usize,
    },
    #[error("reading corpus: {0}")]
    Io(#[from] std::io::Error),
}

const FIELDS: usize = 5;

/// Parses the tab-separated corpus format:
/// `utterance_id  position  surface  lang  bangor_tag`, one token per line.
/// Blank lines and `#` comments are skipped. Utterance context is rebuilt by
/// joining each utterance's surfaces in position order.
pub fn parse_corpus<R: BufRead>(reader: R) -> Result<Vec<Token>, CorpusError> {
    let mut tokens = Vec::new();
    let mut seen = HashSet::new();

    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        let utterance = fields[0].trim().to_string();
        let malformed = |message: String| CorpusError::Malformed {
            utterance: utterance.clone(),
            line: line_no,
            message,
        };
        if fields.len() != FIELDS {
            return Err(malformed(format!("expected {FIELDS} fields")));
        }
        if utterance.is_empty() {
            return Err(malformed("empty utterance_id".into()));
        }
        let position: u32 = fields[1]
            .trim()
            .parse()
            .map_err(|_| malformed(format!("invalid position '{}'", fields[1])))?;
        let surface = fields[2].trim();
        if surface.is_empty() {
            return Err(malformed("empty surface".into()));
        }
        let lang: LangId = fields[3]
            .trim()
            .parse()
            .map_err(|e| malformed(format!("field lang: {e}")))?;
        let bangor_tag = fields[4].trim();
        if bangor_tag.is_empty() {
            return Err(malformed("empty bangor_tag".into()));
        }
        if !seen.insert((utterance.clone(), position)) {
            return Err(CorpusError::Duplicate {
                utterance,
                position,
                line: line_no,
            });
        }
        tokens.push(Token {
            token_id: TokenId::new(&utterance, position),
            surface: surface.to_string(),
            lang,
            bangor_tag: bangor_tag.to_string(),
            utterance_id: utterance,
            position,
            context: String::new(),
        });
    }

    fill_contexts(&mut tokens);
    Ok(tokens)
}

pub fn parse_corpus_str(text: &str) -> Result<Vec<Token>, CorpusError> {
    parse_corpus(text.as_bytes())
}

/// Rebuilds `context` for every token from its utterance's surfaces.
pub fn fill_contexts(tokens: &mut [Token]) {
    let mut utterances: BTreeMap<&str, Vec<(u32, &str)>> = BTreeMap::new();
    for token in tokens.iter() {
        utterances
            .entry(token.utterance_id.as_str())
            .or_default()
            .push((token.position, token.surface.as_str()));
    }
    let contexts: BTreeMap<String, String> = utterances
        .into_iter()
        .map(|(utt, mut words)| {
            words.sort_by_key(|(pos, _)| *pos);
            let text = words.iter().map(|(_, w)| *w).collect::<Vec<_>>().join(" ");
            (utt.to_string(), text)
        })
        .collect();
    for token in tokens.iter_mut() {
        token.context = contexts[&token.utterance_id].clone();
    }
}

/// Writes tokens back in the record format accepted by [`parse_corpus`].
pub fn serialize_corpus(tokens: &[Token]) -> String {
    let mut out = String::new();
    for t in tokens {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            t.utterance_id, t.position, t.surface, t.lang, t.bangor_tag
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_single_record() {
        let tokens = parse_corpus_str("u12\t3\tcan\teng\tv.inf").unwrap();
        assert_eq!(tokens.len(), 1);
        let t = &tokens[0];
        assert_eq!(t.surface, "can");
        assert_eq!(t.lang, LangId::Eng);
        assert_eq!(t.bangor_tag, "v.inf");
        assert_eq!(t.position, 3);
        assert_eq!(t.utterance_id, "u12");
        assert_eq!(t.token_id.as_str(), "u12:3");
        assert_eq!(t.context, "can");
    }

    #[test]
    fn empty_stream_is_empty_corpus() {
        assert!(parse_corpus_str("").unwrap().is_empty());
        assert!(parse_corpus_str("# only a comment\n\n").unwrap().is_empty());
    }

    #[test]
    fn wrong_field_count_names_line() {
        let text = "u7\t0\tyo\tspa\tpron\nu7\t1\tno\tspa\n";
        let err = parse_corpus_str(text).unwrap_err();
        assert_eq!(err.to_string(), "u7 line 2: expected 5 fields");
    }

    #[test]
    fn bad_fields_are_reported() {
        let err = parse_corpus_str("u1\tx\tyo\tspa\tpron").unwrap_err();
        assert!(err.to_string().contains("invalid position"));
        let err = parse_corpus_str("u1\t0\tyo\tes\tpron").unwrap_err();
        assert!(err.to_string().contains("field lang"));
        let err = parse_corpus_str("u1\t0\t  \tspa\tpron").unwrap_err();
        assert!(err.to_string().contains("empty surface"));
    }

    #[test]
    fn duplicate_positions_rejected() {
        let text = "u1\t0\tyo\tspa\tpron\nu1\t0\tno\tspa\tadv\n";
        let err = parse_corpus_str(text).unwrap_err();
        assert!(matches!(err, CorpusError::Duplicate { line: 2, .. }));
    }

    #[test]
    fn context_follows_positions_not_file_order() {
        let text = "u1\t1\tworld\teng\tn\nu1\t0\thello\teng\tim\nu2\t0\thola\tspa\tim\n";
        let tokens = parse_corpus_str(text).unwrap();
        assert_eq!(tokens[0].surface, "world");
        assert_eq!(tokens[0].context, "hello world");
        assert_eq!(tokens[2].context, "hola");
    }

    fn record() -> impl Strategy<Value = (String, u32, String, LangId, String)> {
        (
            "u[0-9]{1,2}",
            0u32..20,
            "[a-záéíóúñ]{1,8}",
            prop_oneof![Just(LangId::Eng), Just(LangId::Spa), Just(LangId::Und)],
            "[a-z]{1,4}(\\.[a-z0-9]{1,3})?",
        )
    }

    proptest! {
        #[test]
        fn parse_serialize_round_trip(records in proptest::collection::vec(record(), 0..40)) {
            let mut seen = HashSet::new();
            let text: String = records
                .into_iter()
                .filter(|(u, p, ..)| seen.insert((u.clone(), *p)))
                .map(|(u, p, s, l, b)| format!("{u}\t{p}\t{s}\t{l}\t{b}\n"))
                .collect();
            let tokens = parse_corpus_str(&text).unwrap();
            prop_assert_eq!(serialize_corpus(&tokens), text.clone());
            prop_assert_eq!(parse_corpus_str(&serialize_corpus(&tokens)).unwrap(), tokens);
        }
    }
}
