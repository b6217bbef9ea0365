//! BMES tagging scheme: conversions between word segmentations and
//! per-character tag sequences.
//!
//! A segmentation is a list of word lengths partitioning a sentence. Each
//! word maps to tags `B M* E` (length ≥ 2) or `S` (length 1). Predicted tag
//! sequences can be invalid as BMES paths; [`tags_to_segmentation`] repairs
//! them deterministically without dropping characters.

use std::fmt;
use std::ops::Range;

use crate::error::{Error, Result};

/// Number of tags. The tag index order is part of the model file contract.
pub const NUM_TAGS: usize = 4;

/// One BMES label. Index order B=0, M=1, E=2, S=3 is frozen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Tag {
    B = 0,
    M = 1,
    E = 2,
    S = 3,
}

impl Tag {
    pub const ALL: [Tag; NUM_TAGS] = [Tag::B, Tag::M, Tag::E, Tag::S];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Panics on an out-of-range index; tag indices come from internal
    /// decoders that only ever produce 0..4.
    pub fn from_index(index: usize) -> Tag {
        match index {
            0 => Tag::B,
            1 => Tag::M,
            2 => Tag::E,
            3 => Tag::S,
            _ => panic!("tag index out of range: {index}"),
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self {
            Tag::B => 'B',
            Tag::M => 'M',
            Tag::E => 'E',
            Tag::S => 'S',
        };
        write!(f, "{c}")
    }
}

/// True exactly for the adjacent tag pairs that can occur in a well-formed
/// BMES sequence: B→M, B→E, M→M, M→E, E→B, E→S, S→B, S→S.
pub fn is_valid_tag_bigram(prev: Tag, next: Tag) -> bool {
    matches!(
        (prev, next),
        (Tag::B, Tag::M)
            | (Tag::B, Tag::E)
            | (Tag::M, Tag::M)
            | (Tag::M, Tag::E)
            | (Tag::E, Tag::B)
            | (Tag::E, Tag::S)
            | (Tag::S, Tag::B)
            | (Tag::S, Tag::S)
    )
}

/// A partition of a sentence into contiguous words, stored as word lengths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    lengths: Vec<usize>,
}

impl Segmentation {
    /// Every length must be ≥ 1.
    pub fn new(lengths: Vec<usize>) -> Result<Self> {
        if let Some(pos) = lengths.iter().position(|&l| l == 0) {
            return Err(Error::data(format!("zero-length word at index {pos}")));
        }
        Ok(Segmentation { lengths })
    }

    /// Word lengths measured in Unicode scalar values.
    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Result<Self> {
        Segmentation::new(words.iter().map(|w| w.as_ref().chars().count()).collect())
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn word_count(&self) -> usize {
        self.lengths.len()
    }

    /// Total number of characters covered.
    pub fn char_count(&self) -> usize {
        self.lengths.iter().sum()
    }

    /// Character-offset span of each word, in order.
    pub fn spans(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        self.lengths.iter().scan(0usize, |start, &len| {
            let span = *start..*start + len;
            *start += len;
            Some(span)
        })
    }

    /// Splits `chars` into the words this segmentation describes.
    /// Panics if the lengths do not cover `chars` exactly.
    pub fn split_chars(&self, chars: &[char]) -> Vec<String> {
        assert_eq!(
            self.char_count(),
            chars.len(),
            "segmentation covers {} chars, sentence has {}",
            self.char_count(),
            chars.len()
        );
        self.spans().map(|s| chars[s].iter().collect()).collect()
    }
}

/// Expands a segmentation into its tag sequence: a length-1 word becomes
/// `[S]`, a length-n word becomes `[B, M×(n−2), E]`.
pub fn segmentation_to_tags(seg: &Segmentation) -> Vec<Tag> {
    let mut tags = Vec::with_capacity(seg.char_count());
    for &len in seg.lengths() {
        if len == 1 {
            tags.push(Tag::S);
        } else {
            tags.push(Tag::B);
            tags.extend(std::iter::repeat_n(Tag::M, len - 2));
            tags.push(Tag::E);
        }
    }
    tags
}

/// Inverts [`segmentation_to_tags`] for well-formed sequences and repairs
/// anything else: a word ends after position i when tags[i] is E or S, and
/// also when tags[i] is B or M and the sequence ends there or continues
/// with B or S (an unclosed word). Total length is always preserved.
pub fn tags_to_segmentation(tags: &[Tag]) -> Segmentation {
    let mut lengths = Vec::new();
    let mut current = 0usize;
    for (i, &tag) in tags.iter().enumerate() {
        current += 1;
        let next = tags.get(i + 1);
        let ends = match tag {
            Tag::E | Tag::S => true,
            Tag::B | Tag::M => matches!(next, None | Some(Tag::B) | Some(Tag::S)),
        };
        if ends {
            lengths.push(current);
            current = 0;
        }
    }
    debug_assert_eq!(current, 0);
    Segmentation { lengths }
}
