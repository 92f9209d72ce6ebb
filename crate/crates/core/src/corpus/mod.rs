//! Corpus data model, tagsets and the source-tag mapping stage.

mod mapping;
mod tags;
mod token;

pub use mapping::{
    load_mapping, map_to_universal, parse_mapping, AmbiguousEntryPolicy, LangScope, MappingError,
    MappingTable,
};
pub use tags::{LangId, UniversalTag, UnknownLang, UnknownTag};
pub use token::{fill_contexts, parse_corpus, parse_corpus_str, serialize_corpus, CorpusError, Token, TokenId};

use std::path::Path;

pub fn load_corpus(path: &Path) -> Result<Vec<Token>, CorpusError> {
    let file = std::fs::File::open(path)?;
    parse_corpus(std::io::BufReader::new(file))
}
