//! Training, evaluation, segmentation of raw text, and the five-stage
//! teacher-student procedure that turns unlabeled text into a word
//! vocabulary and pretrained word embeddings for a second model.

use std::fs;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{read_raw, write_lines, SegmentedCorpus};
use crate::crf::{nll_loss, viterbi};
use crate::encoder::{ModelConfig, PretrainedEmbeddings};
use crate::error::{Error, Result};
use crate::features::{encode, EncodedSentence, FeatureConfig, Vocab, Vocabs};
use crate::model::Model;
use crate::pretrain::{sgns_train, EmbeddingTable, SgnsConfig};
use crate::tagging::{segmentation_to_tags, tags_to_segmentation, Segmentation, Tag};
use crate::tensor::{Adam, AdamConfig};

/// Characters keep every occurrence; rare bigrams and words fall to UNK.
pub const CHAR_MIN_COUNT: u32 = 1;
pub const BIGRAM_MIN_COUNT: u32 = 5;

/// Word-level precision, recall, and F1 with the underlying span counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PRF {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold_words: usize,
    pub predicted_words: usize,
    pub correct_words: usize,
}

impl PRF {
    fn from_counts(gold: usize, predicted: usize, correct: usize) -> PRF {
        debug_assert!(correct <= gold.min(predicted));
        let precision = if predicted == 0 {
            0.0
        } else {
            correct as f64 / predicted as f64
        };
        let recall = if gold == 0 {
            0.0
        } else {
            correct as f64 / gold as f64
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        PRF {
            precision,
            recall,
            f1,
            gold_words: gold,
            predicted_words: predicted,
            correct_words: correct,
        }
    }
}

/// Holds the last ⌈0.1·n⌉ sentences out as a development set, in file
/// order, without shuffling.
pub fn split_train_dev(corpus: &SegmentedCorpus) -> Result<(SegmentedCorpus, SegmentedCorpus)> {
    let n = corpus.len();
    if n < 10 {
        return Err(Error::data(format!(
            "need at least 10 sentences to hold out a development set, got {n}"
        )));
    }
    let dev_len = n.div_ceil(10);
    let split = n - dev_len;
    let train = SegmentedCorpus::new(corpus.sentences()[..split].to_vec())?;
    let dev = SegmentedCorpus::new(corpus.sentences()[split..].to_vec())?;
    Ok((train, dev))
}

/// Builds the vocabularies a model needs from its training split. Word
/// vocabularies come from elsewhere (auto-segmented text), so one is
/// accepted ready-made.
pub fn build_vocabs(
    train: &SegmentedCorpus,
    features: &FeatureConfig,
    word_vocab: Option<Vocab>,
) -> Result<Vocabs> {
    let mut chars: Vec<String> = Vec::new();
    let mut bigrams: Vec<String> = Vec::new();
    for sentence in train.sentences() {
        let cs: Vec<char> = sentence.iter().flat_map(|w| w.chars()).collect();
        chars.extend(cs.iter().map(|c| c.to_string()));
        if features.use_bigram {
            bigrams.extend(cs.windows(2).map(|w| format!("{}{}", w[0], w[1])));
        }
    }
    let words = if features.use_word {
        Some(word_vocab.ok_or_else(|| {
            Error::config("word features enabled but no word vocabulary provided")
        })?)
    } else {
        None
    };
    Ok(Vocabs {
        chars: Vocab::build(chars, CHAR_MIN_COUNT),
        bigrams: features
            .use_bigram
            .then(|| Vocab::build(bigrams, BIGRAM_MIN_COUNT)),
        words,
    })
}

/// Knobs of the supervised training loop.
#[derive(Debug, Clone)]
pub struct TrainSpec {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Where to save the selected model, if anywhere.
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            batch_size: 100,
            max_epochs: 100,
            seed: 1,
            adam: AdamConfig::default(),
            checkpoint: None,
        }
    }
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        Ok(())
    }
}

/// One epoch of history: mean per-sentence loss and development scores.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev: PRF,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// The parameters with the best development F seen at any epoch end
    /// (the earliest such epoch on ties), or the initial parameters when
    /// no epochs ran.
    pub model: Model,
    /// 1-based epoch the model comes from; 0 means the initial parameters.
    pub best_epoch: usize,
    pub best_dev_f: Option<f64>,
    pub history: Vec<EpochRecord>,
}

/// Minibatch training with Adam. Sentences are reshuffled every epoch from
/// the spec seed, per-sentence losses are summed over a batch and averaged,
/// and the development set is scored after every epoch. Fixing the seed
/// fixes every bit of the outcome.
pub fn train(
    model: Model,
    train: &SegmentedCorpus,
    dev: &SegmentedCorpus,
    spec: &TrainSpec,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    spec.validate()?;
    if train.is_empty() {
        return Err(Error::data("training corpus is empty"));
    }
    let mut model = model;
    let features = model.config().features;

    let mut examples = Vec::with_capacity(train.len());
    for (chars, seg) in train.examples() {
        let enc = encode(&chars, &model.vocabs, &features)?;
        let gold: Vec<usize> = segmentation_to_tags(&seg).iter().map(|t| t.index()).collect();
        examples.push((enc, gold));
    }
    let mut dev_set = Vec::with_capacity(dev.len());
    for (chars, seg) in dev.examples() {
        dev_set.push((encode(&chars, &model.vocabs, &features)?, seg));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut optimizer = Adam::new(spec.adam);
    let mut best_model = model.clone();
    let mut best_epoch = 0usize;
    let mut best_dev_f: Option<f64> = None;
    let mut history = Vec::with_capacity(spec.max_epochs);
    let mut indices: Vec<usize> = (0..examples.len()).collect();

    for epoch in 1..=spec.max_epochs {
        indices.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in indices.chunks(spec.batch_size).enumerate() {
            model.zero_grads();
            let mut batch_loss = 0.0;
            for &i in batch {
                let (enc, gold) = &examples[i];
                let (emissions, tape) = model.encoder.forward(enc, true, &mut rng);
                let (loss, d_e, d_t) = nll_loss(&emissions, model.transitions.value(), gold);
                model.encoder.backward(&tape, &d_e);
                model.transitions.accumulate(&d_t);
                batch_loss += loss;
            }
            if !batch_loss.is_finite() {
                return Err(Error::numeric(format!(
                    "loss became non-finite at epoch {epoch}, batch {}",
                    b + 1
                )));
            }
            epoch_loss += batch_loss;
            let scale = 1.0 / batch.len() as f64;
            for (name, p) in model.named_params_mut() {
                p.scale_grads(scale);
                for (suffix, value, grad) in p.optimizer_slots() {
                    optimizer.step(&format!("{name}{suffix}"), value, grad)?;
                }
            }
        }

        let dev_prf = score_dev(&model, &dev_set);
        let record = EpochRecord {
            epoch,
            train_loss: epoch_loss / examples.len() as f64,
            dev: dev_prf,
        };
        on_epoch(&record);
        if best_dev_f.is_none_or(|f| record.dev.f1 > f) {
            best_model = model.clone();
            best_epoch = epoch;
            best_dev_f = Some(record.dev.f1);
        }
        history.push(record);
    }

    if let Some(path) = &spec.checkpoint {
        best_model.save(path)?;
    }
    Ok(TrainOutcome {
        model: best_model,
        best_epoch,
        best_dev_f,
        history,
    })
}

fn decode_tags(model: &Model, enc: &EncodedSentence) -> Segmentation {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let emissions = model.emissions(enc, false, &mut rng);
    let (path, _) = viterbi(&emissions, model.transitions.value(), false);
    let tags: Vec<Tag> = path.into_iter().map(Tag::from_index).collect();
    tags_to_segmentation(&tags)
}

fn score_dev(model: &Model, dev: &[(EncodedSentence, Segmentation)]) -> PRF {
    let mut counts = SpanCounts::default();
    for (enc, gold) in dev {
        counts.add(gold, &decode_tags(model, enc));
    }
    counts.prf()
}

#[derive(Default)]
struct SpanCounts {
    gold: usize,
    predicted: usize,
    correct: usize,
}

impl SpanCounts {
    fn add(&mut self, gold: &Segmentation, predicted: &Segmentation) {
        self.gold += gold.word_count();
        self.predicted += predicted.word_count();
        let gold_spans: std::collections::HashSet<(usize, usize)> =
            gold.spans().map(|r| (r.start, r.end)).collect();
        self.correct += predicted
            .spans()
            .filter(|r| gold_spans.contains(&(r.start, r.end)))
            .count();
    }

    fn prf(&self) -> PRF {
        PRF::from_counts(self.gold, self.predicted, self.correct)
    }
}

/// Segments raw lines with a trained model: encode, score, decode, then
/// join the words with single spaces. An empty line stays empty.
pub fn segment(model: &Model, lines: &[String]) -> Result<Vec<String>> {
    let features = model.config().features;
    let mut out = Vec::with_capacity(lines.len());
    for line in lines {
        let chars: Vec<char> = line.chars().collect();
        if chars.is_empty() {
            out.push(String::new());
            continue;
        }
        let enc = encode(&chars, &model.vocabs, &features)?;
        let seg = decode_tags(model, &enc);
        out.push(seg.split_chars(&chars).join(" "));
    }
    Ok(out)
}

/// Word-level scores micro-averaged over the corpus. Words are matched as
/// character-offset spans, so both sides must segment the same text.
pub fn evaluate_prf(gold: &SegmentedCorpus, predicted: &SegmentedCorpus) -> Result<PRF> {
    if gold.len() != predicted.len() {
        return Err(Error::data(format!(
            "gold has {} sentences, predicted has {}",
            gold.len(),
            predicted.len()
        )));
    }
    let mut counts = SpanCounts::default();
    for i in 0..gold.len() {
        let (gold_chars, gold_seg) = gold.example(i);
        let (pred_chars, pred_seg) = predicted.example(i);
        if gold_chars != pred_chars {
            return Err(Error::data(format!(
                "sentence {}: character sequences differ between gold and predicted",
                i + 1
            )));
        }
        counts.add(&gold_seg, &pred_seg);
    }
    Ok(counts.prf())
}

/// 64-bit FNV-1a. Used to derive independent per-stage seeds from one base
/// seed, so stages can be recomputed or skipped without shifting the random
/// streams of the stages after them.
pub fn fnv1a64(data: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &byte in data {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub fn stage_seed(base: u64, stage: &str) -> u64 {
    base ^ fnv1a64(stage.as_bytes())
}

/// The five-stage semi-supervised procedure.
#[derive(Debug, Clone)]
pub struct SemiSupSpec {
    /// Teacher architecture; must not use word features.
    pub teacher_config: ModelConfig,
    /// Student architecture; must use word features.
    pub student_config: ModelConfig,
    /// Words rarer than this in the auto-segmented text fall out of the
    /// vocabulary (and to UNK at lookup time).
    pub word_min_count: u32,
    /// Word-embedding pretraining knobs; dim and min_count are overridden
    /// to match the student configuration and `word_min_count`.
    pub sgns: SgnsConfig,
    /// Shared training knobs. The seed is the base for per-stage seeds.
    pub train: TrainSpec,
    /// When false, the student keeps random word embeddings (the
    /// vocabulary is still used), isolating the effect of pretraining.
    pub pretrained_word_emb: bool,
    /// Directory for intermediate artifacts; existing ones are reused.
    pub workdir: PathBuf,
}

impl SemiSupSpec {
    pub fn validate(&self) -> Result<()> {
        self.teacher_config.validate()?;
        self.student_config.validate()?;
        self.train.validate()?;
        if self.teacher_config.features.use_word {
            return Err(Error::config("the teacher must not use word features"));
        }
        if !self.student_config.features.use_word {
            return Err(Error::config("the student must use word features"));
        }
        if self.word_min_count == 0 {
            return Err(Error::config("word_min_count must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatus {
    Computed,
    /// Loaded from an artifact left by an earlier run.
    Resumed,
    /// Not applicable under this spec (nothing to pretrain).
    Skipped,
}

/// Progress callbacks emitted by [`teacher_student`].
pub enum Progress<'a> {
    Stage {
        name: &'static str,
        status: StageStatus,
    },
    Epoch {
        stage: &'static str,
        record: &'a EpochRecord,
    },
}

#[derive(Debug)]
pub struct TeacherStudentOutcome {
    pub student: Model,
    pub stages: Vec<(&'static str, StageStatus)>,
    /// Development F of freshly trained stages; absent when resumed.
    pub teacher_dev_f: Option<f64>,
    pub student_dev_f: Option<f64>,
}

/// Runs the teacher-student pipeline: train a word-free teacher, segment
/// the unlabeled text with it, build a word vocabulary from the result,
/// pretrain word embeddings on it, and train the student with both. Each
/// stage persists its artifact in the workdir and reuses it when present,
/// so an interrupted run picks up where it stopped; per-stage seeds make
/// the resumed run bit-identical to an uninterrupted one. The unlabeled
/// text never contributes gold labels, only the teacher's own output.
pub fn teacher_student(
    labeled: &SegmentedCorpus,
    unlabeled: &[String],
    spec: &SemiSupSpec,
    mut progress: impl FnMut(Progress<'_>),
) -> Result<TeacherStudentOutcome> {
    spec.validate()?;
    fs::create_dir_all(&spec.workdir)?;
    let teacher_path = spec.workdir.join("teacher.model");
    let dprime_path = spec.workdir.join("dprime.txt");
    let vocab_path = spec.workdir.join("word.vocab");
    let emb_path = spec.workdir.join("word.emb");
    let student_path = spec.workdir.join("student.model");

    let mut stages = Vec::new();
    let mut teacher_dev_f = None;
    let mut student_dev_f = None;
    let (train_split, dev_split) = split_train_dev(labeled)?;

    let stage = "teacher";
    let teacher = if teacher_path.exists() {
        stages.push((stage, StageStatus::Resumed));
        progress(Progress::Stage {
            name: stage,
            status: StageStatus::Resumed,
        });
        Model::load(&teacher_path).map_err(Error::in_stage(stage))?
    } else {
        stages.push((stage, StageStatus::Computed));
        progress(Progress::Stage {
            name: stage,
            status: StageStatus::Computed,
        });
        let outcome = (|| {
            let vocabs = build_vocabs(&train_split, &spec.teacher_config.features, None)?;
            let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(spec.train.seed, "teacher.init"));
            let model = Model::init(
                spec.teacher_config.clone(),
                vocabs,
                PretrainedEmbeddings::default(),
                &mut rng,
            )?;
            let stage_spec = TrainSpec {
                seed: stage_seed(spec.train.seed, "teacher.train"),
                checkpoint: None,
                ..spec.train.clone()
            };
            train(model, &train_split, &dev_split, &stage_spec, |r| {
                progress(Progress::Epoch { stage, record: r })
            })
        })()
        .map_err(Error::in_stage(stage))?;
        outcome.model.save(&teacher_path).map_err(Error::in_stage(stage))?;
        teacher_dev_f = outcome.best_dev_f;
        outcome.model
    };

    let stage = "segment-unlabeled";
    let dprime: Vec<String> = if dprime_path.exists() {
        stages.push((stage, StageStatus::Resumed));
        progress(Progress::Stage {
            name: stage,
            status: StageStatus::Resumed,
        });
        read_raw(&dprime_path).map_err(Error::in_stage(stage))?
    } else {
        stages.push((stage, StageStatus::Computed));
        progress(Progress::Stage {
            name: stage,
            status: StageStatus::Computed,
        });
        let lines = segment(&teacher, unlabeled).map_err(Error::in_stage(stage))?;
        write_lines(&dprime_path, &lines).map_err(Error::in_stage(stage))?;
        lines
    };
    drop(teacher);

    let dprime_words = |line: &String| -> Vec<String> {
        line.split(' ')
            .filter(|w| !w.is_empty())
            .map(str::to_owned)
            .collect()
    };

    let stage = "word-vocab";
    let word_vocab = if vocab_path.exists() {
        stages.push((stage, StageStatus::Resumed));
        progress(Progress::Stage {
            name: stage,
            status: StageStatus::Resumed,
        });
        Vocab::load(&vocab_path).map_err(Error::in_stage(stage))?
    } else {
        stages.push((stage, StageStatus::Computed));
        progress(Progress::Stage {
            name: stage,
            status: StageStatus::Computed,
        });
        let vocab = Vocab::build(
            dprime.iter().flat_map(|l| l.split(' ')).filter(|w| !w.is_empty()),
            spec.word_min_count,
        );
        vocab.save(&vocab_path).map_err(Error::in_stage(stage))?;
        vocab
    };

    let stage = "word-embeddings";
    let word_emb: Option<EmbeddingTable> = if !spec.pretrained_word_emb
        || word_vocab.is_degenerate()
    {
        stages.push((stage, StageStatus::Skipped));
        progress(Progress::Stage {
            name: stage,
            status: StageStatus::Skipped,
        });
        None
    } else if emb_path.exists() {
        stages.push((stage, StageStatus::Resumed));
        progress(Progress::Stage {
            name: stage,
            status: StageStatus::Resumed,
        });
        Some(EmbeddingTable::load(&emb_path).map_err(Error::in_stage(stage))?)
    } else {
        stages.push((stage, StageStatus::Computed));
        progress(Progress::Stage {
            name: stage,
            status: StageStatus::Computed,
        });
        let table = (|| {
            let sentences: Vec<Vec<String>> = dprime
                .iter()
                .map(dprime_words)
                .filter(|s| !s.is_empty())
                .collect();
            let config = SgnsConfig {
                dim: spec.student_config.features.d_word,
                min_count: spec.word_min_count,
                ..spec.sgns
            };
            config.validate()?;
            let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(spec.train.seed, "word-embeddings"));
            sgns_train(&sentences, &config, &mut rng)
        })()
        .map_err(Error::in_stage(stage))?;
        table.save(&emb_path).map_err(Error::in_stage(stage))?;
        Some(table)
    };

    let stage = "student";
    let student = if student_path.exists() {
        stages.push((stage, StageStatus::Resumed));
        progress(Progress::Stage {
            name: stage,
            status: StageStatus::Resumed,
        });
        Model::load(&student_path).map_err(Error::in_stage(stage))?
    } else {
        stages.push((stage, StageStatus::Computed));
        progress(Progress::Stage {
            name: stage,
            status: StageStatus::Computed,
        });
        let outcome = (|| {
            let vocabs = build_vocabs(
                &train_split,
                &spec.student_config.features,
                Some(word_vocab.clone()),
            )?;
            let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(spec.train.seed, "student.init"));
            let model = Model::init(
                spec.student_config.clone(),
                vocabs,
                PretrainedEmbeddings {
                    words: word_emb.as_ref(),
                    ..Default::default()
                },
                &mut rng,
            )?;
            let stage_spec = TrainSpec {
                seed: stage_seed(spec.train.seed, "student.train"),
                checkpoint: None,
                ..spec.train.clone()
            };
            train(model, &train_split, &dev_split, &stage_spec, |r| {
                progress(Progress::Epoch { stage, record: r })
            })
        })()
        .map_err(Error::in_stage(stage))?;
        outcome.model.save(&student_path).map_err(Error::in_stage(stage))?;
        student_dev_f = outcome.best_dev_f;
        outcome.model
    };

    Ok(TeacherStudentOutcome {
        student,
        stages,
        teacher_dev_f,
        student_dev_f,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Nonlinearity;
    use rand::Rng;

    fn corpus_of(sentences: &[&[&str]]) -> SegmentedCorpus {
        SegmentedCorpus::new(
            sentences
                .iter()
                .map(|s| s.iter().map(|w| w.to_string()).collect())
                .collect(),
        )
        .unwrap()
    }

    /// Unambiguous toy language: sentences cycle through fixed word
    /// patterns over a tiny lexicon.
    fn toy_corpus(n: usize) -> SegmentedCorpus {
        let patterns: Vec<Vec<&str>> = vec![
            vec!["a", "bc", "de"],
            vec!["bc", "fgh", "a"],
            vec!["de", "a", "fgh", "bc"],
            vec!["fgh", "de"],
            vec!["a", "a", "bc"],
        ];
        SegmentedCorpus::new(
            (0..n)
                .map(|i| patterns[i % patterns.len()].iter().map(|w| w.to_string()).collect())
                .collect(),
        )
        .unwrap()
    }

    fn tiny_config(use_word: bool) -> ModelConfig {
        ModelConfig {
            features: FeatureConfig {
                d_char: 8,
                d_bigram: 4,
                d_word: 4,
                use_bigram: false,
                use_word,
            },
            depth: 1,
            channels: 8,
            kernel: 3,
            dropout: 0.1,
            nonlinearity: Nonlinearity::Glu,
        }
    }

    fn tiny_spec(seed: u64) -> TrainSpec {
        TrainSpec {
            batch_size: 4,
            max_epochs: 2,
            seed,
            adam: AdamConfig::default(),
            checkpoint: None,
        }
    }

    fn init_toy_model(corpus: &SegmentedCorpus, use_word: bool, seed: u64) -> Model {
        let word_vocab = use_word.then(|| Vocab::build(Vec::<String>::new(), 5));
        let vocabs = build_vocabs(corpus, &tiny_config(use_word).features, word_vocab).unwrap();
        Model::init(
            tiny_config(use_word),
            vocabs,
            PretrainedEmbeddings::default(),
            &mut ChaCha8Rng::seed_from_u64(seed),
        )
        .unwrap()
    }

    #[test]
    fn split_holds_out_the_ceiling_tail() {
        let c = toy_corpus(100);
        let (tr, dv) = split_train_dev(&c).unwrap();
        assert_eq!((tr.len(), dv.len()), (90, 10));
        assert_eq!(dv.sentences(), &c.sentences()[90..]);

        let c = toy_corpus(101);
        let (tr, dv) = split_train_dev(&c).unwrap();
        assert_eq!((tr.len(), dv.len()), (90, 11));

        assert!(split_train_dev(&toy_corpus(9)).is_err());
    }

    #[test]
    fn prf_matches_hand_counts() {
        let gold = corpus_of(&[&["ab", "c", "d"]]);
        let pred = corpus_of(&[&["ab", "cd"]]);
        let prf = evaluate_prf(&gold, &pred).unwrap();
        assert_eq!(prf.correct_words, 1);
        assert_eq!(prf.precision, 0.5);
        assert!((prf.recall - 1.0 / 3.0).abs() < 1e-15);
        assert!((prf.f1 - 0.4).abs() < 1e-15, "{}", prf.f1);

        let exact = evaluate_prf(&gold, &gold).unwrap();
        assert_eq!((exact.precision, exact.recall, exact.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn prf_rejects_text_mismatch() {
        let gold = corpus_of(&[&["ab"], &["cd"]]);
        let pred = corpus_of(&[&["ab"], &["ce"]]);
        let err = evaluate_prf(&gold, &pred).unwrap_err();
        assert!(err.to_string().contains("sentence 2"), "{err}");

        let short = corpus_of(&[&["ab"]]);
        assert!(evaluate_prf(&gold, &short).is_err());
    }

    #[test]
    fn prf_precision_of_one_side_is_recall_of_the_other() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..20 {
            let n = rng.random_range(1..5);
            let mut a = Vec::new();
            let mut b = Vec::new();
            for _ in 0..n {
                let len = rng.random_range(1..9usize);
                let text: String = (0..len)
                    .map(|_| char::from(b'a' + rng.random_range(0..4u8)))
                    .collect();
                let cut = |rng: &mut ChaCha8Rng| {
                    let mut words = Vec::new();
                    let mut start = 0;
                    while start < len {
                        let w = rng.random_range(1..=(len - start).min(3));
                        words.push(text[start..start + w].to_string());
                        start += w;
                    }
                    words
                };
                a.push(cut(&mut rng));
                b.push(cut(&mut rng));
            }
            let a = SegmentedCorpus::new(a).unwrap();
            let b = SegmentedCorpus::new(b).unwrap();
            let ab = evaluate_prf(&a, &b).unwrap();
            let ba = evaluate_prf(&b, &a).unwrap();
            assert_eq!(ab.precision, ba.recall);
            assert_eq!(ab.recall, ba.precision);
        }
    }

    #[test]
    fn segment_preserves_characters_and_empty_lines() {
        let corpus = toy_corpus(10);
        let model = init_toy_model(&corpus, false, 5);
        let lines = vec![
            "abcdefgh".to_string(),
            String::new(),
            "a".to_string(),
            "zzz".to_string(),
        ];
        let out = segment(&model, &lines).unwrap();
        assert_eq!(out.len(), lines.len());
        for (raw, seg) in lines.iter().zip(&out) {
            assert_eq!(seg.replace(' ', ""), *raw);
        }
        assert_eq!(out[1], "");
        assert_eq!(out[2], "a");
        let again = segment(&model, &lines).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn zero_epochs_returns_initial_parameters() {
        let corpus = toy_corpus(12);
        let (tr, dv) = split_train_dev(&corpus).unwrap();
        let model = init_toy_model(&tr, false, 6);
        let before: Vec<Array2> = snapshot(&model);
        let spec = TrainSpec {
            max_epochs: 0,
            ..tiny_spec(6)
        };
        let out = train(model, &tr, &dv, &spec, |_| {}).unwrap();
        assert_eq!(out.best_epoch, 0);
        assert!(out.best_dev_f.is_none());
        assert!(out.history.is_empty());
        assert_eq!(snapshot(&out.model), before);
    }

    type Array2 = (String, Vec<f64>);

    fn snapshot(model: &Model) -> Vec<Array2> {
        model
            .named_params()
            .into_iter()
            .map(|(n, p)| (n, p.value().data().to_vec()))
            .collect()
    }

    #[test]
    fn training_reduces_loss_and_selects_earliest_best() {
        let corpus = toy_corpus(20);
        let (tr, dv) = split_train_dev(&corpus).unwrap();
        let model = init_toy_model(&tr, false, 7);
        let spec = TrainSpec {
            max_epochs: 6,
            ..tiny_spec(7)
        };
        let mut seen = 0;
        let out = train(model, &tr, &dv, &spec, |_| seen += 1).unwrap();
        assert_eq!(out.history.len(), 6);
        assert_eq!(seen, 6);
        assert!(
            out.history.last().unwrap().train_loss < out.history[0].train_loss,
            "loss did not move: {:?}",
            out.history.iter().map(|r| r.train_loss).collect::<Vec<_>>()
        );
        let best = out.best_dev_f.unwrap();
        let earliest = out
            .history
            .iter()
            .find(|r| r.dev.f1 == best)
            .unwrap()
            .epoch;
        assert_eq!(out.best_epoch, earliest);
        assert!(out.history.iter().all(|r| r.dev.f1 <= best));
    }

    #[test]
    fn training_is_bit_reproducible() {
        let corpus = toy_corpus(15);
        let (tr, dv) = split_train_dev(&corpus).unwrap();
        let run = || {
            let model = init_toy_model(&tr, false, 8);
            train(model, &tr, &dv, &tiny_spec(8), |_| {}).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(snapshot(&a.model), snapshot(&b.model));
        assert_eq!(a.best_epoch, b.best_epoch);
    }

    #[test]
    fn fnv1a64_matches_reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
        assert_ne!(stage_seed(1, "teacher.init"), stage_seed(1, "student.init"));
    }

    fn semi_spec(workdir: PathBuf, seed: u64) -> SemiSupSpec {
        SemiSupSpec {
            teacher_config: tiny_config(false),
            student_config: tiny_config(true),
            word_min_count: 5,
            sgns: SgnsConfig {
                dim: 4,
                epochs: 1,
                ..SgnsConfig::default()
            },
            train: tiny_spec(seed),
            pretrained_word_emb: true,
            workdir,
        }
    }

    #[test]
    fn empty_unlabeled_equals_direct_supervised_training() {
        let corpus = toy_corpus(12);
        let dir = tempfile::tempdir().unwrap();
        let spec = semi_spec(dir.path().join("ts"), 9);
        let outcome = teacher_student(&corpus, &[], &spec, |_| {}).unwrap();
        assert!(outcome
            .stages
            .contains(&("word-embeddings", StageStatus::Skipped)));

        let (tr, dv) = split_train_dev(&corpus).unwrap();
        let vocabs = build_vocabs(
            &tr,
            &spec.student_config.features,
            Some(Vocab::build(Vec::<String>::new(), spec.word_min_count)),
        )
        .unwrap();
        let model = Model::init(
            spec.student_config.clone(),
            vocabs,
            PretrainedEmbeddings::default(),
            &mut ChaCha8Rng::seed_from_u64(stage_seed(9, "student.init")),
        )
        .unwrap();
        let direct_spec = TrainSpec {
            seed: stage_seed(9, "student.train"),
            ..tiny_spec(9)
        };
        let direct = train(model, &tr, &dv, &direct_spec, |_| {}).unwrap();
        assert_eq!(snapshot(&outcome.student), snapshot(&direct.model));
    }

    #[test]
    fn resumption_reproduces_the_uninterrupted_run_bit_for_bit() {
        let corpus = toy_corpus(12);
        // Plenty of repeated words once the teacher segments these.
        let unlabeled: Vec<String> = (0..30).map(|_| "aaaa".to_string()).collect();
        let dir = tempfile::tempdir().unwrap();

        let full_dir = dir.path().join("full");
        let spec = semi_spec(full_dir.clone(), 10);
        let full = teacher_student(&corpus, &unlabeled, &spec, |_| {}).unwrap();
        assert!(full
            .stages
            .iter()
            .all(|&(_, s)| s == StageStatus::Computed || s == StageStatus::Skipped));

        // Pretend a previous run died after the first two stages.
        let resumed_dir = dir.path().join("resumed");
        fs::create_dir_all(&resumed_dir).unwrap();
        for artifact in ["teacher.model", "dprime.txt"] {
            fs::copy(full_dir.join(artifact), resumed_dir.join(artifact)).unwrap();
        }
        let spec = semi_spec(resumed_dir.clone(), 10);
        let resumed = teacher_student(&corpus, &unlabeled, &spec, |_| {}).unwrap();
        assert!(resumed.stages.contains(&("teacher", StageStatus::Resumed)));
        assert!(resumed
            .stages
            .contains(&("segment-unlabeled", StageStatus::Resumed)));

        let full_bytes = fs::read(full_dir.join("student.model")).unwrap();
        let resumed_bytes = fs::read(resumed_dir.join("student.model")).unwrap();
        assert_eq!(full_bytes, resumed_bytes);
        assert_eq!(snapshot(&full.student), snapshot(&resumed.student));
    }

    #[test]
    fn rejects_misconfigured_roles() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = semi_spec(dir.path().to_path_buf(), 11);
        spec.teacher_config.features.use_word = true;
        assert!(teacher_student(&toy_corpus(12), &[], &spec, |_| {}).is_err());

        let mut spec = semi_spec(dir.path().to_path_buf(), 11);
        spec.student_config.features.use_word = false;
        assert!(teacher_student(&toy_corpus(12), &[], &spec, |_| {}).is_err());
    }
}
