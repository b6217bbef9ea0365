//! Embedding pretraining: skip-gram with negative sampling over token
//! sentences, average-initialized bigram embeddings, and the text
//! embedding-file format.
//!
//! The trainer is single-threaded and seeded, so runs are reproducible
//! bit for bit. Character and bigram streams come from raw text via
//! [`char_sentences`] and [`bigram_sentences`]; word streams come from
//! segmented (or auto-segmented) corpora.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::features::{read_utf8, Vocab, PAD_TOKEN, UNK_TOKEN};
use crate::tensor::{sigmoid, Array};

/// Token list plus a dense `[n, dim]` matrix, one row per token.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    matrix: Array,
}

impl EmbeddingTable {
    pub fn new(tokens: Vec<String>, matrix: Array) -> Result<Self> {
        assert_eq!(matrix.shape().len(), 2, "embedding matrix must be [n, dim]");
        if matrix.dim(0) != tokens.len() {
            return Err(Error::data(format!(
                "{} tokens but {} embedding rows",
                tokens.len(),
                matrix.dim(0)
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(|c| c.is_whitespace()) {
                return Err(Error::data(format!("token {t:?} cannot round-trip")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::data(format!("duplicate token {t:?}")));
            }
        }
        Ok(EmbeddingTable {
            tokens,
            index,
            matrix,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim(1)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn matrix(&self) -> &Array {
        &self.matrix
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.matrix.row(i)
    }

    pub fn row_for(&self, token: &str) -> Option<&[f64]> {
        self.index.get(token).map(|&i| self.matrix.row(i))
    }

    /// Text format: header "count dim", then one `token v1 .. vdim` line
    /// per row. Floats are printed with the shortest representation that
    /// parses back to the same bits, so save→load is exact.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        writeln!(out, "{} {}", self.len(), self.dim()).unwrap();
        for (token, i) in self.tokens.iter().zip(0..) {
            out.push_str(token);
            for v in self.row(i) {
                write!(out, " {v}").unwrap();
            }
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_utf8(path)?;
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 1, "empty embedding file"))?;
        let mut fields = header.split_ascii_whitespace();
        let count: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| Error::parse(path, 1, "header must be `count dim`"))?;
        let dim: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| Error::parse(path, 1, "header must be `count dim`"))?;
        if fields.next().is_some() {
            return Err(Error::parse(path, 1, "header must be `count dim`"));
        }

        let mut tokens = Vec::with_capacity(count);
        let mut data = Vec::with_capacity(count * dim);
        for (idx, line) in lines {
            let lineno = idx + 1;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split_ascii_whitespace();
            let token = fields
                .next()
                .ok_or_else(|| Error::parse(path, lineno, "missing token"))?;
            let mut row = 0usize;
            for f in fields {
                let v: f64 = f.parse().map_err(|_| {
                    Error::parse(path, lineno, format!("invalid float {f:?}"))
                })?;
                data.push(v);
                row += 1;
            }
            if row != dim {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("expected {dim} values, found {row}"),
                ));
            }
            tokens.push(token.to_owned());
        }
        if tokens.len() != count {
            return Err(Error::parse(
                path,
                1,
                format!("header claims {count} rows, file has {}", tokens.len()),
            ));
        }
        let matrix = Array::from_vec(&[count, dim], data);
        EmbeddingTable::new(tokens, matrix)
            .map_err(|e| Error::parse(path, 0, e.to_string()))
    }
}

/// Skip-gram hyper-parameters. The defaults are the standard word2vec
/// settings: window 5, 5 negatives, 5 epochs, lr 0.025 with linear decay,
/// frequency threshold 5, subsampling at 1e-3.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgnsConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub min_count: u32,
    pub subsample: f64,
}

impl Default for SgnsConfig {
    fn default() -> Self {
        SgnsConfig {
            dim: 50,
            window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            min_count: 5,
            subsample: 1e-3,
        }
    }
}

impl SgnsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("embedding dim must be positive"));
        }
        if self.window == 0 {
            return Err(Error::config("window must be positive"));
        }
        if self.min_count == 0 {
            return Err(Error::config("min_count must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be positive"));
        }
        if self.subsample < 0.0 {
            return Err(Error::config("subsample threshold must be nonnegative"));
        }
        Ok(())
    }
}

/// One row per sentence, one single-character token per position.
pub fn char_sentences(lines: &[String]) -> Vec<Vec<String>> {
    lines
        .iter()
        .map(|l| l.chars().map(|c| c.to_string()).collect())
        .collect()
}

/// Overlapping bigram tokens per sentence: a length-L line yields L−1
/// bigrams.
pub fn bigram_sentences(lines: &[String]) -> Vec<Vec<String>> {
    lines
        .iter()
        .map(|l| {
            let chars: Vec<char> = l.chars().collect();
            chars
                .windows(2)
                .map(|w| w.iter().collect::<String>())
                .collect()
        })
        .collect()
}

struct SgnsVocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    counts: Vec<u64>,
    total: u64,
}

fn build_sgns_vocab(sentences: &[Vec<String>], min_count: u32) -> SgnsVocab {
    let mut counts: HashMap<&str, (u64, usize)> = HashMap::new();
    for (order, token) in sentences.iter().flatten().enumerate() {
        let entry = counts.entry(token.as_str()).or_insert((0, order));
        entry.0 += 1;
    }
    let mut kept: Vec<(&str, (u64, usize))> = counts
        .into_iter()
        .filter(|(_, (n, _))| *n >= u64::from(min_count))
        .collect();
    kept.sort_by(|a, b| (b.1 .0, a.1 .1).cmp(&(a.1 .0, b.1 .1)));

    let mut tokens = Vec::with_capacity(kept.len());
    let mut index = HashMap::with_capacity(kept.len());
    let mut freq = Vec::with_capacity(kept.len());
    for (i, (t, (n, _))) in kept.into_iter().enumerate() {
        tokens.push(t.to_owned());
        index.insert(t.to_owned(), i);
        freq.push(n);
    }
    let total = freq.iter().sum();
    SgnsVocab {
        tokens,
        index,
        counts: freq,
        total,
    }
}

/// Draws negatives proportionally to freq^0.75 via binary search over the
/// cumulative weights.
struct NegativeSampler {
    cumulative: Vec<f64>,
}

impl NegativeSampler {
    fn new(counts: &[u64]) -> Self {
        let mut cumulative = Vec::with_capacity(counts.len());
        let mut acc = 0.0;
        for &n in counts {
            acc += (n as f64).powf(0.75);
            cumulative.push(acc);
        }
        NegativeSampler { cumulative }
    }

    fn draw(&self, rng: &mut impl Rng) -> usize {
        let total = *self.cumulative.last().expect("nonempty vocab");
        let r = rng.random::<f64>() * total;
        self.cumulative.partition_point(|&c| c <= r)
    }
}

/// Trains skip-gram-with-negative-sampling embeddings and returns the
/// input-vector table, with `<PAD>` (zeros) and `<UNK>` (mean of trained
/// rows) prepended so the table plugs directly into model initialization.
pub fn sgns_train(
    sentences: &[Vec<String>],
    config: &SgnsConfig,
    rng: &mut impl Rng,
) -> Result<EmbeddingTable> {
    config.validate()?;
    let vocab = build_sgns_vocab(sentences, config.min_count);
    let n = vocab.tokens.len();
    if n == 0 {
        return Err(Error::data(format!(
            "no token reached min_count {}",
            config.min_count
        )));
    }
    let dim = config.dim;

    // word2vec initialization: input vectors uniform in ±0.5/dim, output
    // vectors zero.
    let half = 0.5 / dim as f64;
    let mut input = Array::uniform(&[n, dim], -half, half, rng);
    let mut output = Array::zeros(&[n, dim]);
    let sampler = NegativeSampler::new(&vocab.counts);

    let total_train = (config.epochs as u64) * vocab.total;
    let mut processed = 0u64;
    let mut scratch = vec![0.0; dim];

    for _ in 0..config.epochs {
        for sentence in sentences {
            // Linear lr decay with the conventional floor.
            let frac = processed as f64 / (total_train as f64 + 1.0);
            let alpha = (config.learning_rate * (1.0 - frac))
                .max(config.learning_rate * 1e-4);

            // Keep in-vocab tokens, randomly discarding very frequent ones.
            let mut kept: Vec<usize> = Vec::with_capacity(sentence.len());
            for token in sentence {
                let Some(&id) = vocab.index.get(token.as_str()) else {
                    continue;
                };
                processed += 1;
                if config.subsample > 0.0 {
                    let f = vocab.counts[id] as f64 / vocab.total as f64;
                    let keep = (config.subsample / f).sqrt() + config.subsample / f;
                    if keep < 1.0 && rng.random::<f64>() >= keep {
                        continue;
                    }
                }
                kept.push(id);
            }

            for (i, &center) in kept.iter().enumerate() {
                let reach = rng.random_range(1..=config.window);
                let lo = i.saturating_sub(reach);
                let hi = (i + reach).min(kept.len() - 1);
                for (j, &context) in kept.iter().enumerate().take(hi + 1).skip(lo) {
                    if j == i {
                        continue;
                    }
                    scratch.fill(0.0);
                    // Positive pair plus sampled negatives; a negative
                    // colliding with the true context is skipped.
                    for neg in 0..=config.negatives {
                        let (target, label) = if neg == 0 {
                            (context, 1.0)
                        } else {
                            let t = sampler.draw(rng);
                            if t == context {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let dot: f64 = input
                            .row(center)
                            .iter()
                            .zip(output.row(target))
                            .map(|(a, b)| a * b)
                            .sum();
                        let g = alpha * (label - sigmoid(dot));
                        for (s, o) in scratch.iter_mut().zip(output.row(target)) {
                            *s += g * o;
                        }
                        for (o, x) in output.row_mut(target).iter_mut().zip(input.row(center)) {
                            *o += g * x;
                        }
                    }
                    for (v, s) in input.row_mut(center).iter_mut().zip(&scratch) {
                        *v += s;
                    }
                }
            }
        }
    }

    if !input.is_finite() {
        return Err(Error::numeric("skip-gram training produced non-finite embeddings"));
    }

    // Assemble the final table: PAD is zeros, UNK is the mean trained row.
    let mut tokens = Vec::with_capacity(n + 2);
    tokens.push(PAD_TOKEN.to_owned());
    tokens.push(UNK_TOKEN.to_owned());
    tokens.extend(vocab.tokens);
    let mut matrix = Array::zeros(&[n + 2, dim]);
    for d in 0..dim {
        let mean = (0..n).map(|i| input.at2(i, d)).sum::<f64>() / n as f64;
        matrix.row_mut(1)[d] = mean;
    }
    for i in 0..n {
        matrix.row_mut(i + 2).copy_from_slice(input.row(i));
    }
    EmbeddingTable::new(tokens, matrix)
}

/// Builds bigram embeddings as the average of the two characters' rows,
/// truncated to `d_bigram` components. Characters missing from the
/// character table fall back to its `<UNK>` row.
pub fn average_init_bigrams(
    char_table: &EmbeddingTable,
    bigram_vocab: &Vocab,
    d_bigram: usize,
) -> Result<EmbeddingTable> {
    if char_table.dim() < d_bigram {
        return Err(Error::config(format!(
            "character embedding dim {} is narrower than bigram dim {d_bigram}",
            char_table.dim()
        )));
    }
    let unk_row = char_table.row_for(UNK_TOKEN);

    let char_row = |c: char| -> Result<&[f64]> {
        let s = c.to_string();
        char_table.row_for(&s).or(unk_row).ok_or_else(|| {
            Error::data(format!(
                "character {c:?} missing from table and no {UNK_TOKEN} row present"
            ))
        })
    };

    let tokens: Vec<String> = bigram_vocab.tokens().to_vec();
    let mut matrix = Array::zeros(&[tokens.len(), d_bigram]);
    for (id, token) in tokens.iter().enumerate().skip(1) {
        if id == 1 {
            // UNK bigram: both characters unknown.
            if let Some(u) = unk_row {
                matrix.row_mut(1).copy_from_slice(&u[..d_bigram]);
            }
            continue;
        }
        let mut chars = token.chars();
        let (Some(a), Some(b), None) = (chars.next(), chars.next(), chars.next()) else {
            return Err(Error::data(format!(
                "bigram vocab token {token:?} is not two characters"
            )));
        };
        let (ra, rb) = (char_row(a)?, char_row(b)?);
        for d in 0..d_bigram {
            matrix.row_mut(id)[d] = 0.5 * (ra[d] + rb[d]);
        }
    }
    EmbeddingTable::new(tokens, matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn table(entries: &[(&str, &[f64])]) -> EmbeddingTable {
        let dim = entries[0].1.len();
        let tokens = entries.iter().map(|(t, _)| t.to_string()).collect();
        let data = entries.iter().flat_map(|(_, r)| r.iter().copied()).collect();
        EmbeddingTable::new(tokens, Array::from_vec(&[entries.len(), dim], data)).unwrap()
    }

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn table_io_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        let t = table(&[
            ("<PAD>", &[0.0, 0.0]),
            ("<UNK>", &[0.1, -0.25]),
            ("中", &[1.0 / 3.0, -1e-17]),
            ("文", &[f64::MIN_POSITIVE, 12345.678901234567]),
        ]);
        t.save(&path).unwrap();
        let back = EmbeddingTable::load(&path).unwrap();
        assert_eq!(back.tokens(), t.tokens());
        assert_eq!(back.matrix().data(), t.matrix().data());
    }

    #[test]
    fn load_rejects_row_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        fs::write(&path, "3 2\na 1 2\nb 3 4\n").unwrap();
        let err = EmbeddingTable::load(&path).unwrap_err();
        assert!(err.to_string().contains("claims 3"), "{err}");
    }

    #[test]
    fn load_reports_line_of_bad_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        fs::write(&path, "2 2\na 1 2\nb 3\n").unwrap();
        let err = EmbeddingTable::load(&path).unwrap_err();
        assert!(err.to_string().contains(":3:"), "{err}");

        fs::write(&path, "2 2\na 1 2\nb 3 oops\n").unwrap();
        let err = EmbeddingTable::load(&path).unwrap_err();
        assert!(err.to_string().contains("oops"), "{err}");
        assert!(err.to_string().contains(":3:"), "{err}");
    }

    #[test]
    fn average_init_basic_arithmetic() {
        let chars = table(&[
            ("<UNK>", &[9.0, 9.0]),
            ("a", &[1.0, 0.0]),
            ("b", &[0.0, 1.0]),
        ]);
        let vocab = Vocab::from_token_list(["ab", "aa", "xb"], 5).unwrap();
        let bigrams = average_init_bigrams(&chars, &vocab, 2).unwrap();
        assert_eq!(bigrams.row_for("ab").unwrap(), &[0.5, 0.5]);
        assert_eq!(bigrams.row_for("aa").unwrap(), &[1.0, 0.0]);
        // x is unknown: its half comes from the character UNK row.
        assert_eq!(bigrams.row_for("xb").unwrap(), &[4.5, 5.0]);
        assert_eq!(bigrams.row_for("<PAD>").unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn average_init_truncates_wider_char_rows() {
        let chars = table(&[("a", &[1.0, 2.0, 3.0, 4.0]), ("b", &[5.0, 6.0, 7.0, 8.0])]);
        let vocab = Vocab::from_token_list(["ab"], 5).unwrap();
        let bigrams = average_init_bigrams(&chars, &vocab, 2).unwrap();
        assert_eq!(bigrams.row_for("ab").unwrap(), &[3.0, 4.0]);
    }

    #[test]
    fn average_init_is_linear_in_char_table() {
        let chars = table(&[("<UNK>", &[0.5, -1.0]), ("a", &[1.0, 2.0]), ("b", &[3.0, -4.0])]);
        let mut scaled_matrix = chars.matrix().clone();
        scaled_matrix.scale(2.0);
        let scaled =
            EmbeddingTable::new(chars.tokens().to_vec(), scaled_matrix).unwrap();
        let vocab = Vocab::from_token_list(["ab", "bq"], 5).unwrap();
        let base = average_init_bigrams(&chars, &vocab, 2).unwrap();
        let doubled = average_init_bigrams(&scaled, &vocab, 2).unwrap();
        for (x, y) in base.matrix().data().iter().zip(doubled.matrix().data()) {
            assert!((2.0 * x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn average_init_rejects_narrow_char_table() {
        let chars = table(&[("a", &[1.0])]);
        let vocab = Vocab::from_token_list(["aa"], 5).unwrap();
        assert!(average_init_bigrams(&chars, &vocab, 2).is_err());
    }

    fn sentences(text: &[&str]) -> Vec<Vec<String>> {
        text.iter()
            .map(|s| s.split(' ').map(str::to_owned).collect())
            .collect()
    }

    #[test]
    fn sgns_single_repeated_token_stays_finite() {
        let corpus = vec![vec!["x".to_string(); 30]; 4];
        let config = SgnsConfig {
            dim: 8,
            min_count: 1,
            ..SgnsConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let t = sgns_train(&corpus, &config, &mut rng).unwrap();
        assert_eq!(t.len(), 3); // PAD, UNK, x
        assert!(t.matrix().is_finite());
    }

    #[test]
    fn sgns_empty_vocab_is_an_error() {
        let corpus = sentences(&["a b c"]);
        let config = SgnsConfig {
            dim: 8,
            min_count: 5,
            ..SgnsConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        assert!(sgns_train(&corpus, &config, &mut rng).is_err());
    }

    #[test]
    fn sgns_min_count_drops_rare_tokens() {
        let mut corpus = vec![vec![]];
        for _ in 0..10 {
            corpus[0].push("often".to_string());
            corpus[0].push("also".to_string());
        }
        corpus[0].push("once".to_string());
        let config = SgnsConfig {
            dim: 4,
            min_count: 5,
            ..SgnsConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let t = sgns_train(&corpus, &config, &mut rng).unwrap();
        assert!(t.row_for("often").is_some());
        assert!(t.row_for("once").is_none());
    }

    #[test]
    fn sgns_is_seed_reproducible() {
        let corpus = sentences(&["a b c a b", "c b a c b a", "b a c b"]);
        let config = SgnsConfig {
            dim: 6,
            min_count: 1,
            epochs: 2,
            ..SgnsConfig::default()
        };
        let t1 = sgns_train(&corpus, &config, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let t2 = sgns_train(&corpus, &config, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(t1.matrix().data(), t2.matrix().data());
        let t3 = sgns_train(&corpus, &config, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_ne!(t1.matrix().data(), t3.matrix().data());
    }

    /// Interleaved sentences drawn from two disjoint vocabularies; trained
    /// vectors should cluster by topic.
    #[test]
    fn sgns_separates_topics() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let topic_a: Vec<String> = (0..8).map(|i| format!("a{i}")).collect();
        let topic_b: Vec<String> = (0..8).map(|i| format!("b{i}")).collect();
        let mut corpus = Vec::new();
        for s in 0..100 {
            let topic = if s % 2 == 0 { &topic_a } else { &topic_b };
            let sentence = (0..25)
                .map(|_| topic[rng.random_range(0..topic.len())].clone())
                .collect();
            corpus.push(sentence);
        }
        let config = SgnsConfig {
            dim: 16,
            min_count: 1,
            subsample: 0.0,
            ..SgnsConfig::default()
        };
        let t = sgns_train(&corpus, &config, &mut rng).unwrap();

        let mut within = Vec::new();
        let mut cross = Vec::new();
        for x in topic_a.iter().chain(&topic_b) {
            for y in topic_a.iter().chain(&topic_b) {
                if x >= y {
                    continue;
                }
                let c = cosine(t.row_for(x).unwrap(), t.row_for(y).unwrap());
                if x.as_bytes()[0] == y.as_bytes()[0] {
                    within.push(c);
                } else {
                    cross.push(c);
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (w, c) = (mean(&within), mean(&cross));
        assert!(w - c >= 0.2, "within {w:.3}, cross {c:.3}");
    }

    #[test]
    fn char_and_bigram_streams() {
        let lines = vec!["中文分".to_string(), "x".to_string(), String::new()];
        assert_eq!(
            char_sentences(&lines),
            vec![vec!["中", "文", "分"], vec!["x"], vec![]]
        );
        assert_eq!(
            bigram_sentences(&lines),
            vec![vec!["中文".to_string(), "文分".to_string()], vec![], vec![]]
        );
    }
}
