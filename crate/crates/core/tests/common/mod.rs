//! Shared helpers for the integration tests: a deterministic synthetic
//! language whose segmentation is unambiguous by construction.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use charseg::corpus::SegmentedCorpus;

/// Fifty distinct words over a 10-letter alphabet forming a prefix code
/// (no word is a prefix of another), so every generated sentence has
/// exactly one parse into lexicon words and training F can reach 1.0.
pub fn lexicon() -> Vec<String> {
    let letters: Vec<char> = "abcdefghij".chars().collect();
    let mut words = Vec::with_capacity(50);
    // 10 two-letter words xX, 40 three-letter words xyZ built from
    // distinct leading pairs: first letters never start a word alone.
    for (i, &c) in letters.iter().enumerate() {
        let next = letters[(i + 1) % letters.len()];
        words.push(format!("{c}{}", next.to_ascii_uppercase()));
    }
    'outer: for &a in &letters {
        for &b in letters.iter().rev() {
            if words.len() == 50 {
                break 'outer;
            }
            words.push(format!("{a}{b}Z"));
        }
    }
    assert_eq!(words.len(), 50);
    words
}

/// `n` sentences of 3 to 8 lexicon words drawn with a fixed seed.
pub fn synthetic_corpus(n: usize, seed: u64) -> SegmentedCorpus {
    use rand::SeedableRng;
    let lexicon = lexicon();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sentences: Vec<Vec<String>> = (0..n)
        .map(|_| {
            let len = rng.random_range(3..=8);
            (0..len)
                .map(|_| lexicon[rng.random_range(0..lexicon.len())].clone())
                .collect()
        })
        .collect();
    SegmentedCorpus::new(sentences).unwrap()
}
