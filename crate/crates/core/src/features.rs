//! Vocabularies and per-position feature extraction.
//!
//! Every feature family (characters, bigrams, word n-grams) gets ids from
//! its own [`Vocab`] with two reserved entries: PAD (id 0) for windows that
//! cross a sentence boundary and UNK (id 1) for tokens absent from the
//! vocabulary. A "character" is one Unicode scalar value; the input text is
//! never normalized.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Reserved id for out-of-range windows.
pub const PAD: usize = 0;
/// Reserved id for tokens missing from the vocabulary.
pub const UNK: usize = 1;

/// Printable names for the reserved ids, used in embedding files.
pub const PAD_TOKEN: &str = "<PAD>";
pub const UNK_TOKEN: &str = "<UNK>";

/// Word-feature slots per position: 1 unigram, 2 bigrams, 3 trigrams and
/// 4 four-grams, every n-gram that contains the current character with
/// length capped at 4.
pub const WORD_SLOTS: usize = 10;
/// Longest word n-gram considered a feature.
pub const MAX_WORD_LEN: usize = 4;
/// Bigram slots per position: the bigram ending and the bigram starting
/// at the current character.
pub const BIGRAM_SLOTS: usize = 2;

const VOCAB_FILE_VERSION: &str = "charseg vocab 1";

/// Dense token→id map. Ids 0 and 1 are PAD and UNK; real tokens start at 2,
/// ordered by descending corpus frequency with ties broken by first
/// occurrence, which makes builds deterministic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    min_count: u32,
}

impl Vocab {
    /// Builds from a token stream keeping tokens seen at least `min_count`
    /// times. Tokens spelled like the reserved names are ignored.
    pub fn build<I, S>(stream: I, min_count: u32) -> Vocab
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        assert!(min_count >= 1, "min_count must be at least 1");
        let mut counts: HashMap<String, (u64, usize)> = HashMap::new();
        let mut order = 0usize;
        for token in stream {
            let token = token.as_ref();
            if token == PAD_TOKEN || token == UNK_TOKEN {
                continue;
            }
            let entry = counts.entry(token.to_owned()).or_insert((0, order));
            entry.0 += 1;
            order += 1;
        }

        let mut kept: Vec<(String, (u64, usize))> = counts
            .into_iter()
            .filter(|(_, (n, _))| *n >= u64::from(min_count))
            .collect();
        kept.sort_by(|a, b| (b.1 .0, a.1 .1).cmp(&(a.1 .0, b.1 .1)));

        Vocab::from_token_list(kept.into_iter().map(|(t, _)| t), min_count)
            .expect("frequency map cannot produce duplicates")
    }

    /// Assembles a vocab from already-ordered real tokens (ids 2..).
    pub fn from_token_list<I, S>(tokens: I, min_count: u32) -> Result<Vocab>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all = vec![PAD_TOKEN.to_owned(), UNK_TOKEN.to_owned()];
        all.extend(tokens.into_iter().map(Into::into));
        let mut index = HashMap::with_capacity(all.len());
        for (id, token) in all.iter().enumerate().skip(2) {
            if token.is_empty() {
                return Err(Error::data(format!("empty token at id {id}")));
            }
            if index.insert(token.clone(), id).is_some() {
                return Err(Error::data(format!("duplicate token {token:?}")));
            }
        }
        Ok(Vocab {
            tokens: all,
            index,
            min_count,
        })
    }

    /// Total entries including PAD and UNK.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // PAD and UNK are always present
    }

    /// True when no real token survived the frequency threshold.
    pub fn is_degenerate(&self) -> bool {
        self.tokens.len() == 2
    }

    pub fn min_count(&self) -> u32 {
        self.min_count
    }

    /// Id for a token, UNK when absent.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn lookup(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Token for an id; reserved ids return their printable names.
    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    /// All tokens in id order, reserved names first.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Text format: a version line, a min_count line, then one real token
    /// per line in id order (ids 2..). PAD and UNK are implicit.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        writeln!(out, "{VOCAB_FILE_VERSION}").unwrap();
        writeln!(out, "{}", self.min_count).unwrap();
        for token in &self.tokens[2..] {
            writeln!(out, "{token}").unwrap();
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        let text = read_utf8(path)?;
        let mut lines = text.lines();
        let version = lines
            .next()
            .ok_or_else(|| Error::parse(path, 1, "missing version line"))?;
        if version != VOCAB_FILE_VERSION {
            return Err(Error::parse(
                path,
                1,
                format!("unsupported vocab version {version:?}"),
            ));
        }
        let min_count: u32 = lines
            .next()
            .and_then(|l| l.trim().parse().ok())
            .ok_or_else(|| Error::parse(path, 2, "missing or invalid min_count"))?;
        let tokens: Vec<&str> = lines.collect();
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() {
                return Err(Error::parse(path, 3 + i, "empty token line"));
            }
        }
        Vocab::from_token_list(tokens, min_count)
            .map_err(|e| Error::parse(path, 0, e.to_string()))
    }
}

/// Reads a file requiring valid UTF-8, reporting the byte offset otherwise.
pub(crate) fn read_utf8(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    String::from_utf8(bytes).map_err(|e| Error::Utf8 {
        path: path.to_owned(),
        offset: e.utf8_error().valid_up_to(),
    })
}

/// Which feature families feed the encoder, and their embedding widths.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FeatureConfig {
    pub use_bigram: bool,
    pub use_word: bool,
    pub d_char: usize,
    pub d_bigram: usize,
    pub d_word: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            use_bigram: false,
            use_word: false,
            d_char: 200,
            d_bigram: 50,
            d_word: 50,
        }
    }
}

impl FeatureConfig {
    /// Concatenated per-position input width: characters, then bigrams,
    /// then word slots. The order is frozen.
    pub fn input_width(&self) -> usize {
        let mut w = self.d_char;
        if self.use_bigram {
            w += BIGRAM_SLOTS * self.d_bigram;
        }
        if self.use_word {
            w += WORD_SLOTS * self.d_word;
        }
        w
    }

    pub fn validate(&self) -> Result<()> {
        for (name, d) in [
            ("d_char", self.d_char),
            ("d_bigram", self.d_bigram),
            ("d_word", self.d_word),
        ] {
            if d == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// The vocabularies a model carries, one per enabled feature family.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabs {
    pub chars: Vocab,
    pub bigrams: Option<Vocab>,
    pub words: Option<Vocab>,
}

/// A sentence mapped to feature ids, ready for embedding lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSentence {
    pub chars: Vec<usize>,
    pub bigrams: Option<Vec<[usize; BIGRAM_SLOTS]>>,
    pub words: Option<Vec<[usize; WORD_SLOTS]>>,
}

impl EncodedSentence {
    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }
}

fn window(chars: &[char], start: isize, len: usize) -> Option<String> {
    if start < 0 {
        return None;
    }
    let start = start as usize;
    let end = start + len;
    if end > chars.len() {
        return None;
    }
    Some(chars[start..end].iter().collect())
}

/// The 10 word-feature tokens at position `i`: every n-gram of length 1..=4
/// containing c_i, shorter first, within a length ordered by start offset
/// (leftmost window first). Out-of-range windows are `None` (PAD).
pub fn extract_word_features(chars: &[char], i: usize) -> [Option<String>; WORD_SLOTS] {
    assert!(i < chars.len(), "position out of range");
    let mut out: [Option<String>; WORD_SLOTS] = Default::default();
    let mut slot = 0;
    for len in 1..=MAX_WORD_LEN {
        for offset in (0..len).rev() {
            out[slot] = window(chars, i as isize - offset as isize, len);
            slot += 1;
        }
    }
    debug_assert_eq!(slot, WORD_SLOTS);
    out
}

/// The two bigram tokens at position `i`: c_{i−1}c_i and c_i c_{i+1}.
pub fn extract_bigrams(chars: &[char], i: usize) -> [Option<String>; BIGRAM_SLOTS] {
    assert!(i < chars.len(), "position out of range");
    [
        window(chars, i as isize - 1, 2),
        window(chars, i as isize, 2),
    ]
}

fn map_token(vocab: &Vocab, token: Option<String>) -> usize {
    match token {
        None => PAD,
        Some(t) => vocab.id(&t),
    }
}

/// Maps a sentence to ids for every enabled feature family. Unknown tokens
/// become UNK, out-of-range windows PAD.
pub fn encode(chars: &[char], vocabs: &Vocabs, config: &FeatureConfig) -> Result<EncodedSentence> {
    if chars.is_empty() {
        return Err(Error::data("cannot encode an empty sentence"));
    }
    let char_ids = chars
        .iter()
        .map(|c| vocabs.chars.id(&c.to_string()))
        .collect();

    let bigrams = if config.use_bigram {
        let vocab = vocabs
            .bigrams
            .as_ref()
            .ok_or_else(|| Error::config("bigram features enabled but no bigram vocab"))?;
        Some(
            (0..chars.len())
                .map(|i| extract_bigrams(chars, i).map(|t| map_token(vocab, t)))
                .collect(),
        )
    } else {
        None
    };

    let words = if config.use_word {
        let vocab = vocabs
            .words
            .as_ref()
            .ok_or_else(|| Error::config("word features enabled but no word vocab"))?;
        Some(
            (0..chars.len())
                .map(|i| extract_word_features(chars, i).map(|t| map_token(vocab, t)))
                .collect(),
        )
    } else {
        None
    };

    Ok(EncodedSentence {
        chars: char_ids,
        bigrams,
        words,
    })
}
