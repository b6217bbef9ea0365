//! Corpus readers and writers.
//!
//! Two on-disk layouts, both UTF-8 with one sentence per line: segmented
//! text has words separated by runs of ASCII spaces or tabs, raw text is
//! unsegmented. Blank lines in segmented corpora are skipped (their count
//! is kept for reporting); raw corpora preserve them so segmentation can
//! echo them back.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::read_utf8;
use crate::tagging::Segmentation;

/// Sentences as word lists. Words are nonempty and contain no ASCII
/// whitespace, so writing and re-reading is lossless.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentedCorpus {
    sentences: Vec<Vec<String>>,
    blank_lines_skipped: usize,
}

impl SegmentedCorpus {
    pub fn new(sentences: Vec<Vec<String>>) -> Result<Self> {
        for (i, sentence) in sentences.iter().enumerate() {
            if sentence.is_empty() {
                return Err(Error::data(format!("sentence {i} has no words")));
            }
            for word in sentence {
                if word.is_empty() {
                    return Err(Error::data(format!("empty word in sentence {i}")));
                }
                if word.chars().any(|c| c.is_ascii_whitespace()) {
                    return Err(Error::data(format!(
                        "word {word:?} in sentence {i} contains whitespace"
                    )));
                }
            }
        }
        Ok(SegmentedCorpus {
            sentences,
            blank_lines_skipped: 0,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = read_utf8(path)?;
        Self::read_from_lines(text.lines())
    }

    /// Parses already-loaded lines the same way [`Self::read`] parses a
    /// file: split on space/tab runs, skip (and count) blank lines.
    pub fn read_from_lines<I, S>(lines: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut sentences = Vec::new();
        let mut blank = 0usize;
        for line in lines {
            let words: Vec<String> = line
                .as_ref()
                .split([' ', '\t'])
                .filter(|w| !w.is_empty())
                .map(str::to_owned)
                .collect();
            if words.is_empty() {
                blank += 1;
            } else {
                sentences.push(words);
            }
        }
        let mut corpus = SegmentedCorpus::new(sentences)?;
        corpus.blank_lines_skipped = blank;
        Ok(corpus)
    }

    /// Single spaces between words, one sentence per line.
    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for sentence in &self.sentences {
            out.push_str(&sentence.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn sentences(&self) -> &[Vec<String>] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Blank input lines dropped by [`SegmentedCorpus::read`].
    pub fn blank_lines_skipped(&self) -> usize {
        self.blank_lines_skipped
    }

    /// The character sequence and gold segmentation of one sentence.
    pub fn example(&self, i: usize) -> (Vec<char>, Segmentation) {
        let words = &self.sentences[i];
        let chars = words.iter().flat_map(|w| w.chars()).collect();
        let seg = Segmentation::from_words(words).expect("corpus words are nonempty");
        (chars, seg)
    }

    /// All sentences as (characters, segmentation) pairs.
    pub fn examples(&self) -> Vec<(Vec<char>, Segmentation)> {
        (0..self.len()).map(|i| self.example(i)).collect()
    }

    /// Word tokens in corpus order, the stream V_word is built from.
    pub fn word_tokens(&self) -> impl Iterator<Item = &str> {
        self.sentences.iter().flatten().map(String::as_str)
    }
}

/// Reads raw text: one sentence per line, empty lines preserved.
pub fn read_raw(path: &Path) -> Result<Vec<String>> {
    let text = read_utf8(path)?;
    Ok(text.lines().map(str::to_owned).collect())
}

/// Writes one sentence per line.
pub fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut out = String::new();
    for line in lines {
        out.push_str(line);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}
