//! Corpora bundled with the crate.

use mirror_core::corpus::Dialogue;

use crate::corpus_io::read_jsonl;

/// 32 three-turn dialogues built from noun and adjective templates.
pub const TOY32: &str = include_str!("../data/toy32.jsonl");
/// 8 three-turn dialogues.
pub const TOY8: &str = include_str!("../data/toy8.jsonl");

pub fn dialogues(text: &str) -> Vec<Dialogue> {
    read_jsonl(text.as_bytes()).expect("bundled corpus parses")
}
