use std::collections::HashMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
/// Output index meaning "the source character is already correct".
pub const KEEP_ID: usize = 1;
pub const UNK_ID: usize = 2;
pub const MASK_ID: usize = 3;
pub const FIRST_CHAR_ID: usize = 4;
pub const RESERVED: [&str; FIRST_CHAR_ID] = ["[PAD]", "[KEEP]", "[UNK]", "[MASK]"];

/// Character inventory. Ids `0..4` are reserved; characters start at 4 in
/// first-occurrence order.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Vocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

/// Reserved ids followed by the distinct characters of `corpus` in order of
/// first appearance.
pub fn build_vocab<S: AsRef<str>>(corpus: &[S]) -> Vocab {
    let mut vocab = Vocab::default();
    for sentence in corpus {
        for c in sentence.as_ref().chars() {
            vocab.push(c);
        }
    }
    vocab
}

impl Vocab {
    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Result<Self> {
        let mut vocab = Vocab::default();
        for c in chars {
            if !vocab.push(c) {
                return Err(Error::Format(format!("duplicate vocabulary entry {c:?}")));
            }
        }
        Ok(vocab)
    }

    fn push(&mut self, c: char) -> bool {
        if self.index.contains_key(&c) {
            return false;
        }
        self.index.insert(c, FIRST_CHAR_ID + self.chars.len());
        self.chars.push(c);
        true
    }

    /// Total id count including the reserved slots.
    pub fn len(&self) -> usize {
        FIRST_CHAR_ID + self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn id(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    pub fn id_or_unk(&self, c: char) -> usize {
        self.id(c).unwrap_or(UNK_ID)
    }

    /// The character at `id`, or `None` for reserved and out-of-range ids.
    pub fn char_of(&self, id: usize) -> Option<char> {
        id.checked_sub(FIRST_CHAR_ID).and_then(|i| self.chars.get(i)).copied()
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn contains(&self, c: char) -> bool {
        self.index.contains_key(&c)
    }
}

impl Serialize for Vocab {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.chars.iter().collect::<String>())
    }
}

impl<'de> Deserialize<'de> for Vocab {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Vocab::from_chars(s.chars()).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_chars() {
        let v = build_vocab(&["我爱"]);
        assert_eq!(v.len(), 6);
        assert_eq!(v.id('我'), Some(4));
        assert_eq!(v.id('爱'), Some(5));
    }

    #[test]
    fn empty_corpus_has_only_reserved_ids() {
        let v = build_vocab::<&str>(&[]);
        assert_eq!(v.len(), 4);
        for id in 0..4 {
            assert_eq!(v.char_of(id), None);
        }
    }

    #[test]
    fn repeats_collapse() {
        let v = build_vocab(&["好好学习", "学习"]);
        assert_eq!(v.chars(), &['好', '学', '习']);
    }

    #[test]
    fn serde_round_trip() {
        let v = build_vocab(&["中文拼写纠错"]);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocab>(&json).unwrap(), v);
        assert!(serde_json::from_str::<Vocab>("\"中中\"").is_err());
    }

    proptest! {
        #[test]
        fn ids_are_contiguous_and_invertible(corpus in prop::collection::vec("\\PC{0,12}", 0..8)) {
            let v = build_vocab(&corpus);
            for (k, &c) in v.chars().iter().enumerate() {
                let id = v.id(c).unwrap();
                prop_assert_eq!(id, FIRST_CHAR_ID + k);
                prop_assert_eq!(v.char_of(id), Some(c));
            }
            prop_assert_eq!(v.char_of(v.len()), None);
        }
    }
}
