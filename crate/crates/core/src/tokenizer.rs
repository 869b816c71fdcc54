//! Offset-preserving tokenization.

use serde::{Deserialize, Serialize};

/// A token as a byte range of the source text.
///
/// `start..core_start` is leading whitespace carried by the token,
/// `core_start..end` is its visible text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub id: u32,
    pub start: usize,
    pub core_start: usize,
    pub end: usize,
}

impl Token {
    pub fn surface<'a>(&self, text: &'a str) -> &'a str {
        &text[self.start..self.end]
    }

    pub fn core<'a>(&self, text: &'a str) -> &'a str {
        &text[self.core_start..self.end]
    }
}

/// Contract: the returned tokens tile `text` exactly, in order, with no gaps,
/// so concatenating every surface reproduces the input.
pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> Vec<Token>;

    fn encode(&self, text: &str) -> Vec<u32> {
        self.tokenize(text).iter().map(|t| t.id).collect()
    }
}

/// Splits into alphanumeric runs and single punctuation characters, each
/// carrying its preceding whitespace. Ids are a 32-bit FNV-1a hash of the surface.
#[derive(Debug, Clone, Copy, Default)]
pub struct WordTokenizer;

impl Tokenizer for WordTokenizer {
    fn tokenize(&self, text: &str) -> Vec<Token> {
        let mut tokens = Vec::new();
        let mut chars = text.char_indices().peekable();
        let mut start = 0;
        while chars.peek().is_some() {
            while let Some(&(_, c)) = chars.peek() {
                if c.is_whitespace() {
                    chars.next();
                } else {
                    break;
                }
            }
            let core_start = chars.peek().map_or(text.len(), |&(i, _)| i);
            if let Some((_, first)) = chars.next() {
                if first.is_alphanumeric() {
                    while let Some(&(_, c)) = chars.peek() {
                        if c.is_alphanumeric() {
                            chars.next();
                        } else {
                            break;
                        }
                    }
                }
            }
            let end = chars.peek().map_or(text.len(), |&(i, _)| i);
            tokens.push(Token {
                id: fnv1a(&text[start..end]),
                start,
                core_start,
                end,
            });
            start = end;
        }
        tokens
    }
}

fn fnv1a(s: &str) -> u32 {
    let mut hash: u32 = 0x811c_9dc5;
    for b in s.bytes() {
        hash ^= u32::from(b);
        hash = hash.wrapping_mul(0x0100_0193);
    }
    hash
}
