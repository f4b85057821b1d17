//! Synthetic corpora: English-like text, its clone, knowledge statements,
//! and the period schedule that mixes them.

pub mod clone;
pub mod io;
pub mod knowledge;
pub mod natural;
pub mod schedule;

pub use clone::{clone_words, unclone_words, CloneMap, DEFAULT_MARKER};
pub use knowledge::{KnowledgeConfig, KnowledgeSet, Language, Probe, Triplet, RELATIONS};
pub use natural::{generate_corpus, Lexicon, NaturalConfig};
pub use schedule::{Mix, Schedule, ScheduleSpec, Segment, Source};
