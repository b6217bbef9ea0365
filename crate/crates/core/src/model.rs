//! A full segmentation model: vocabularies, the convolutional encoder, and
//! the tag-transition matrix, with exact binary serialization.
//!
//! File layout: a magic line, a little-endian u64 header length, a JSON
//! header (configuration, vocabularies, array directory), then the raw
//! little-endian f64 payload of every array in directory order. Floats
//! round-trip bit for bit.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};

use crate::encoder::{EncoderParams, ModelConfig, PretrainedEmbeddings};
use crate::error::{Error, Result};
use crate::features::{EncodedSentence, Vocab, Vocabs};
use crate::tagging::NUM_TAGS;
use crate::tensor::{Array, Param};

const MAGIC: &[u8] = b"charseg model 1\n";

#[derive(Debug, Clone)]
pub struct Model {
    pub vocabs: Vocabs,
    pub encoder: EncoderParams,
    /// Tag-transition scores, shape [4, 4], indexed [from, to].
    pub transitions: Param,
}

impl Model {
    /// Fresh model with random encoder weights and zero transitions.
    pub fn init(
        config: ModelConfig,
        vocabs: Vocabs,
        pretrained: PretrainedEmbeddings<'_>,
        rng: &mut impl Rng,
    ) -> Result<Model> {
        let encoder = EncoderParams::init(config, &vocabs, pretrained, rng)?;
        Ok(Model {
            vocabs,
            encoder,
            transitions: Param::plain(Array::zeros(&[NUM_TAGS, NUM_TAGS])),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.encoder.config
    }

    /// Per-position tag scores for one encoded sentence.
    pub fn emissions(
        &self,
        encoded: &EncodedSentence,
        training: bool,
        rng: &mut impl Rng,
    ) -> Array {
        self.encoder.emissions(encoded, training, rng)
    }

    pub fn named_params(&self) -> Vec<(String, &Param)> {
        let mut params = self.encoder.named_params();
        params.push(("crf.T".into(), &self.transitions));
        params
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut params = self.encoder.named_params_mut();
        params.push(("crf.T".into(), &mut self.transitions));
        params
    }

    pub fn zero_grads(&mut self) {
        for (_, p) in self.named_params_mut() {
            p.zero_grad();
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let params = self.named_params();
        let header = Header {
            config: self.encoder.config.clone(),
            chars: VocabEntry::of(&self.vocabs.chars),
            bigrams: self.vocabs.bigrams.as_ref().map(VocabEntry::of),
            words: self.vocabs.words.as_ref().map(VocabEntry::of),
            arrays: params
                .iter()
                .map(|(name, p)| ArrayEntry {
                    name: name.clone(),
                    shape: p.value().shape().to_vec(),
                    has_g: p.is_normalized(),
                })
                .collect(),
        };
        let header_bytes = serde_json::to_vec(&header)
            .map_err(|e| Error::data(format!("model header: {e}")))?;

        let mut out = Vec::with_capacity(MAGIC.len() + 8 + header_bytes.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_bytes);
        for (_, p) in &params {
            write_f64s(&mut out, p.value().data());
            if let Some(g) = p.scale_value() {
                write_f64s(&mut out, g.data());
            }
        }
        let mut file = fs::File::create(path)?;
        file.write_all(&out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Model> {
        let bytes = fs::read(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        let fail = |msg: &str| Error::data(format!("{}: {msg}", path.display()));
        if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(fail("not a model file"));
        }
        let mut pos = MAGIC.len();
        let header_len = u64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap()) as usize;
        pos += 8;
        if bytes.len() < pos + header_len {
            return Err(fail("truncated header"));
        }
        let header: Header = serde_json::from_slice(&bytes[pos..pos + header_len])
            .map_err(|e| fail(&format!("bad header: {e}")))?;
        pos += header_len;

        header.config.validate()?;
        let vocabs = Vocabs {
            chars: header.chars.rebuild()?,
            bigrams: header.bigrams.map(|v| v.rebuild()).transpose()?,
            words: header.words.map(|v| v.rebuild()).transpose()?,
        };

        // Build the parameter skeleton from the config, then replace every
        // tensor with the stored bits. The throwaway rng never leaks out.
        let mut model = Model::init(
            header.config,
            vocabs,
            PretrainedEmbeddings::default(),
            &mut rand_chacha::ChaCha8Rng::seed_from_u64(0),
        )?;

        let mut expected = 0usize;
        for entry in &header.arrays {
            expected += entry.payload_len();
        }
        if bytes.len() - pos != expected * 8 {
            return Err(fail(&format!(
                "payload is {} bytes, directory claims {}",
                bytes.len() - pos,
                expected * 8
            )));
        }

        let params = model.named_params_mut();
        if params.len() != header.arrays.len() {
            return Err(fail(&format!(
                "directory lists {} arrays, model has {}",
                header.arrays.len(),
                params.len()
            )));
        }
        for ((name, param), entry) in params.into_iter().zip(&header.arrays) {
            if name != entry.name {
                return Err(fail(&format!(
                    "directory names {:?} where model expects {name:?}",
                    entry.name
                )));
            }
            if param.value().shape() != &entry.shape[..] {
                return Err(fail(&format!(
                    "array {name:?} has shape {:?}, model expects {:?}",
                    entry.shape,
                    param.value().shape()
                )));
            }
            if entry.has_g != param.is_normalized() {
                return Err(fail(&format!(
                    "array {name:?} normalization does not match the configuration"
                )));
            }
            let n: usize = entry.shape.iter().product();
            let v = Array::from_vec(&entry.shape, read_f64s(&bytes, &mut pos, n));
            let g = entry.has_g.then(|| {
                let rows = *entry.shape.last().unwrap();
                Array::from_vec(&[rows], read_f64s(&bytes, &mut pos, rows))
            });
            *param = Param::from_parts(v, g);
        }
        Ok(model)
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Header {
    config: ModelConfig,
    chars: VocabEntry,
    bigrams: Option<VocabEntry>,
    words: Option<VocabEntry>,
    arrays: Vec<ArrayEntry>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct VocabEntry {
    min_count: u32,
    /// Real tokens only; the two reserved slots are implicit.
    tokens: Vec<String>,
}

impl VocabEntry {
    fn of(vocab: &Vocab) -> VocabEntry {
        VocabEntry {
            min_count: vocab.min_count(),
            tokens: vocab.tokens()[2..].to_vec(),
        }
    }

    fn rebuild(self) -> Result<Vocab> {
        Vocab::from_token_list(self.tokens, self.min_count)
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    has_g: bool,
}

impl ArrayEntry {
    fn payload_len(&self) -> usize {
        let n: usize = self.shape.iter().product();
        n + if self.has_g {
            self.shape.last().copied().unwrap_or(0)
        } else {
            0
        }
    }
}

fn write_f64s(out: &mut Vec<u8>, data: &[f64]) {
    for &x in data {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn read_f64s(bytes: &[u8], pos: &mut usize, n: usize) -> Vec<f64> {
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(f64::from_le_bytes(bytes[*pos..*pos + 8].try_into().unwrap()));
        *pos += 8;
    }
    data
}
