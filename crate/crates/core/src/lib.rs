//! Crowdsourced Universal POS annotation for code-switched Spanish-English
//! speech transcripts.
//!
//! Every corpus token is routed to exactly one annotation task: automatic
//! wordlist tagging, in-lab manual tagging, a token-specific question, or a
//! per-language question tree. Crowd tasks collect two judgments which are
//! combined with the mapped source-corpus tag by majority vote; three-way
//! splits go to experts. Workers are screened with a quiz and monitored with
//! hidden gold questions, one per page.
//!
//! The [`project`] module ties the pieces together as an event-sourced state
//! machine; [`sim`] drives it with synthetic workers.

pub mod aggregate;
pub mod bank;
pub mod corpus;
pub mod metrics;
pub mod project;
pub mod qc;
pub mod rng;
pub mod router;
pub mod sim;

pub use aggregate::{classify_split, majority_vote, Outcome, Split, VoteRecord};
pub use corpus::{LangId, MappingTable, Token, TokenId, UniversalTag};
pub use router::{assign_task, route_corpus, TaskAssignment, TaskKind, WordLists};
