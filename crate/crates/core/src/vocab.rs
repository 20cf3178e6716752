//! Character vocabulary over target-side text.
//!
//! Ids 0..=3 are reserved control tokens; real symbols follow, sorted by
//! codepoint, so a vocabulary is fully determined by its character set. The
//! fingerprint makes that identity checkable across checkpoints.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::hash::sha256_hex;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
/// Number of reserved ids preceding the first real symbol.
pub const RESERVED: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharVocab {
    chars: Vec<char>,
}

impl CharVocab {
    /// Collect every character of the given target translations. The order
    /// of the input does not matter; symbols are sorted by codepoint.
    pub fn build<'a>(translations: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut seen_any = false;
        let mut set = BTreeSet::new();
        for text in translations {
            seen_any = true;
            set.extend(text.chars());
        }
        if !seen_any {
            return Err(Error::EmptyCorpus);
        }
        Ok(CharVocab {
            chars: set.into_iter().collect(),
        })
    }

    /// Rebuild from a stored symbol list, which must be strictly ascending.
    pub fn from_symbols(chars: Vec<char>) -> Result<Self> {
        if chars.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::BadArgument {
                op: "vocab",
                msg: String::from("symbol list must be strictly ascending by codepoint"),
            });
        }
        Ok(CharVocab { chars })
    }

    pub fn symbols(&self) -> &[char] {
        &self.chars
    }

    /// Total id count, reserved tokens included.
    pub fn size(&self) -> usize {
        RESERVED + self.chars.len()
    }

    pub fn id_of(&self, c: char) -> u32 {
        match self.chars.binary_search(&c) {
            Ok(i) => (RESERVED + i) as u32,
            Err(_) => UNK,
        }
    }

    pub fn char_of(&self, id: u32) -> Option<char> {
        let id = id as usize;
        if id < RESERVED {
            None
        } else {
            self.chars.get(id - RESERVED).copied()
        }
    }

    /// `BOS, chars..., EOS`; characters outside the vocabulary become UNK.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut ids = Vec::with_capacity(text.chars().count() + 2);
        ids.push(BOS);
        ids.extend(text.chars().map(|c| self.id_of(c)));
        ids.push(EOS);
        ids
    }

    /// Inverse of `encode` up to specials: reserved and out-of-range ids
    /// are dropped.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter().filter_map(|&id| self.char_of(id)).collect()
    }

    /// Content hash of the symbol list: sha-256 over the codepoints as
    /// little-endian u32 words, in id order.
    pub fn fingerprint(&self) -> String {
        let mut bytes = Vec::with_capacity(self.chars.len() * 4);
        for &c in &self.chars {
            bytes.extend_from_slice(&(c as u32).to_le_bytes());
        }
        sha256_hex(&bytes)
    }
}
