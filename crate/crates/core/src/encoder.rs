//! The convolutional encoder: embedding lookup and concatenation, dropout,
//! a stack of gated (or ReLU) convolution layers, and a linear projection
//! to per-position tag scores.
//!
//! One position's output depends on input positions at distance at most
//! (k−1)·D/2, so a depth-5, width-3 stack sees 11 characters. Word features
//! widen that by up to 3 more characters per side, bigrams by 1.

use rand::Rng;

use crate::error::{Error, Result};
use crate::features::{EncodedSentence, FeatureConfig, Vocab, Vocabs};
use crate::pretrain::EmbeddingTable;
use crate::tagging::NUM_TAGS;
use crate::tensor::{
    conv1d_same, conv1d_same_backward, dropout, dropout_backward, glu, glu_backward, linear,
    linear_backward, relu, relu_backward, Array, DropoutMask, Param,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Nonlinearity {
    Glu,
    Relu,
}

/// Architecture hyper-parameters. Defaults: 5 gated convolution layers of
/// 200 channels with kernel width 3 and dropout 0.2.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub features: FeatureConfig,
    pub depth: usize,
    pub channels: usize,
    pub kernel: usize,
    pub dropout: f64,
    pub nonlinearity: Nonlinearity,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            features: FeatureConfig::default(),
            depth: 5,
            channels: 200,
            kernel: 3,
            dropout: 0.2,
            nonlinearity: Nonlinearity::Glu,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        if self.depth == 0 {
            return Err(Error::config("depth must be at least 1"));
        }
        if self.channels == 0 {
            return Err(Error::config("channels must be at least 1"));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::config(format!(
                "kernel width must be odd, got {}",
                self.kernel
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Convolution output width. A gated layer carries two filter banks of
    /// `channels` each; the ReLU variant widens its single bank by √2 to
    /// keep the per-layer parameter count comparable.
    pub fn hidden_width(&self) -> usize {
        match self.nonlinearity {
            Nonlinearity::Glu => self.channels,
            Nonlinearity::Relu => {
                ((self.channels as f64) * std::f64::consts::SQRT_2).round() as usize
            }
        }
    }

    /// How far one output position sees along the character axis.
    pub fn context_radius(&self) -> usize {
        (self.kernel - 1) * self.depth / 2
    }
}

/// One convolution layer. `w`/`b` is the value path; gated layers add the
/// `v`/`c` sigmoid path. Filters are weight-normalized.
#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub w: Param,
    pub b: Param,
    pub v: Option<Param>,
    pub c: Option<Param>,
}

/// All trainable encoder state plus the configuration that shapes it.
#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub config: ModelConfig,
    pub char_table: Param,
    pub bigram_table: Option<Param>,
    pub word_table: Option<Param>,
    pub layers: Vec<ConvLayer>,
    pub proj_w: Param,
    pub proj_b: Param,
}

/// Pretrained tables to copy rows from at initialization. Rows are matched
/// by token; tokens without a pretrained row keep their random values.
#[derive(Default, Clone, Copy)]
pub struct PretrainedEmbeddings<'a> {
    pub chars: Option<&'a EmbeddingTable>,
    pub bigrams: Option<&'a EmbeddingTable>,
    pub words: Option<&'a EmbeddingTable>,
}

fn init_embedding(
    vocab: &Vocab,
    dim: usize,
    pretrained: Option<&EmbeddingTable>,
    family: &str,
    rng: &mut impl Rng,
) -> Result<Param> {
    if let Some(table) = pretrained {
        if table.dim() != dim {
            return Err(Error::config(format!(
                "{family} embeddings: pretrained dim {} does not match configured dim {dim}",
                table.dim()
            )));
        }
    }
    // Random rows first, drawn whether or not a pretrained table is given,
    // so the rng stream does not depend on what gets copied over.
    let s = (3.0 / dim as f64).sqrt();
    let mut matrix = Array::uniform(&[vocab.len(), dim], -s, s, rng);
    if let Some(table) = pretrained {
        for id in 0..vocab.len() {
            if let Some(row) = table.row_for(vocab.token(id)) {
                matrix.row_mut(id).copy_from_slice(row);
            }
        }
    }
    Ok(Param::plain(matrix))
}

fn init_conv_filter(k: usize, n: usize, m: usize, rng: &mut impl Rng) -> Result<Param> {
    let s = (6.0 / ((k * n + k * m) as f64)).sqrt();
    Param::weight_normalized(Array::uniform(&[k, n, m], -s, s, rng))
}

impl EncoderParams {
    /// Initializes a model: fan-based uniform convolution filters under
    /// neutral weight normalization, zero biases, uniform embedding rows
    /// overwritten from the pretrained tables where tokens match.
    pub fn init(
        config: ModelConfig,
        vocabs: &Vocabs,
        pretrained: PretrainedEmbeddings<'_>,
        rng: &mut impl Rng,
    ) -> Result<EncoderParams> {
        config.validate()?;
        let f = &config.features;

        let char_table =
            init_embedding(&vocabs.chars, f.d_char, pretrained.chars, "character", rng)?;
        let bigram_table = if f.use_bigram {
            let vocab = vocabs
                .bigrams
                .as_ref()
                .ok_or_else(|| Error::config("bigram features enabled but no bigram vocab"))?;
            Some(init_embedding(vocab, f.d_bigram, pretrained.bigrams, "bigram", rng)?)
        } else {
            None
        };
        let word_table = if f.use_word {
            let vocab = vocabs
                .words
                .as_ref()
                .ok_or_else(|| Error::config("word features enabled but no word vocab"))?;
            Some(init_embedding(vocab, f.d_word, pretrained.words, "word", rng)?)
        } else {
            None
        };

        let hidden = config.hidden_width();
        let mut layers = Vec::with_capacity(config.depth);
        for d in 0..config.depth {
            let input = if d == 0 { f.input_width() } else { hidden };
            let w = init_conv_filter(config.kernel, input, hidden, rng)?;
            let b = Param::plain(Array::zeros(&[hidden]));
            let (v, c) = match config.nonlinearity {
                Nonlinearity::Glu => (
                    Some(init_conv_filter(config.kernel, input, hidden, rng)?),
                    Some(Param::plain(Array::zeros(&[hidden]))),
                ),
                Nonlinearity::Relu => (None, None),
            };
            layers.push(ConvLayer { w, b, v, c });
        }

        let s = (6.0 / ((hidden + NUM_TAGS) as f64)).sqrt();
        let proj_w = Param::plain(Array::uniform(&[hidden, NUM_TAGS], -s, s, rng));
        let proj_b = Param::plain(Array::zeros(&[NUM_TAGS]));

        Ok(EncoderParams {
            config,
            char_table,
            bigram_table,
            word_table,
            layers,
            proj_w,
            proj_b,
        })
    }

    /// Embedding lookup and concatenation: characters, then bigram slots,
    /// then word slots. The order is frozen.
    fn embed(&self, encoded: &EncodedSentence) -> Array {
        let f = &self.config.features;
        let l = encoded.len();
        let mut x = Array::zeros(&[l, f.input_width()]);
        for i in 0..l {
            let row = x.row_mut(i);
            let mut off = 0;
            row[..f.d_char].copy_from_slice(self.char_table.value().row(encoded.chars[i]));
            off += f.d_char;
            if let Some(table) = &self.bigram_table {
                let ids = &encoded.bigrams.as_ref().expect("encoded without bigrams")[i];
                for &id in ids {
                    row[off..off + f.d_bigram].copy_from_slice(table.value().row(id));
                    off += f.d_bigram;
                }
            }
            if let Some(table) = &self.word_table {
                let ids = &encoded.words.as_ref().expect("encoded without word features")[i];
                for &id in ids {
                    row[off..off + f.d_word].copy_from_slice(table.value().row(id));
                    off += f.d_word;
                }
            }
            debug_assert_eq!(off, f.input_width());
        }
        x
    }

    /// Per-position tag scores, shape [L, 4]. Inference mode (training =
    /// false) is deterministic and draws nothing from the rng.
    pub fn emissions(
        &self,
        encoded: &EncodedSentence,
        training: bool,
        rng: &mut impl Rng,
    ) -> Array {
        self.forward(encoded, training, rng).0
    }

    /// Forward pass keeping every intermediate needed for [`Self::backward`].
    pub fn forward(
        &self,
        encoded: &EncodedSentence,
        training: bool,
        rng: &mut impl Rng,
    ) -> (Array, Tape) {
        assert!(!encoded.is_empty(), "cannot encode an empty sentence");
        let p = self.config.dropout;

        let (x0, embed_mask) = dropout(&self.embed(encoded), p, training, rng);
        let mut inputs = vec![x0];
        let mut layer_caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let x = inputs.last().unwrap();
            let value_pre = conv1d_same(x, &layer.w.effective(), layer.b.value());
            let (h, gate_pre) = match (&layer.v, &layer.c) {
                (Some(v), Some(c)) => {
                    let gate = conv1d_same(x, &v.effective(), c.value());
                    (glu(&value_pre, &gate), Some(gate))
                }
                _ => (relu(&value_pre), None),
            };
            let (out, mask) = dropout(&h, p, training, rng);
            layer_caches.push(LayerCache {
                value_pre,
                gate_pre,
                mask,
            });
            inputs.push(out);
        }

        let emissions = linear(inputs.last().unwrap(), self.proj_w.value(), self.proj_b.value());
        let tape = Tape {
            encoded: encoded.clone(),
            embed_mask,
            inputs,
            layer_caches,
        };
        (emissions, tape)
    }

    /// Accumulates parameter gradients for one sentence given the gradient
    /// of the loss with respect to the emissions.
    pub fn backward(&mut self, tape: &Tape, d_emissions: &Array) {
        let (dx_proj, dw, db) = linear_backward(
            tape.inputs.last().unwrap(),
            self.proj_w.value(),
            d_emissions,
        );
        self.proj_w.accumulate(&dw);
        self.proj_b.accumulate(&db);

        let mut d_out = dx_proj;
        for (layer, cache, input) in self
            .layers
            .iter_mut()
            .zip(&tape.layer_caches)
            .zip(&tape.inputs)
            .map(|((l, c), i)| (l, c, i))
            .rev()
        {
            let d_h = dropout_backward(&cache.mask, &d_out);
            d_out = match (&cache.gate_pre, &mut layer.v, &mut layer.c) {
                (Some(gate_pre), Some(v), Some(c)) => {
                    let (d_value, d_gate) = glu_backward(&cache.value_pre, gate_pre, &d_h);
                    let (dx_v, dw, db) = conv1d_same_backward(input, &layer.w.effective(), &d_value);
                    layer.w.accumulate(&dw);
                    layer.b.accumulate(&db);
                    let (dx_g, dv, dc) = conv1d_same_backward(input, &v.effective(), &d_gate);
                    v.accumulate(&dv);
                    c.accumulate(&dc);
                    let mut dx = dx_v;
                    dx.add_assign(&dx_g);
                    dx
                }
                _ => {
                    let d_value = relu_backward(&cache.value_pre, &d_h);
                    let (dx, dw, db) = conv1d_same_backward(input, &layer.w.effective(), &d_value);
                    layer.w.accumulate(&dw);
                    layer.b.accumulate(&db);
                    dx
                }
            };
        }

        let d_embed = dropout_backward(&tape.embed_mask, &d_out);
        self.scatter_embedding_grads(&tape.encoded, &d_embed);
    }

    fn scatter_embedding_grads(&mut self, encoded: &EncodedSentence, d_embed: &Array) {
        let f = self.config.features;
        for i in 0..encoded.len() {
            let row = d_embed.row(i);
            let mut off = 0;
            axpy_row(
                self.char_table.grad_mut(),
                encoded.chars[i],
                &row[..f.d_char],
            );
            off += f.d_char;
            if let Some(table) = &mut self.bigram_table {
                for &id in &encoded.bigrams.as_ref().unwrap()[i] {
                    axpy_row(table.grad_mut(), id, &row[off..off + f.d_bigram]);
                    off += f.d_bigram;
                }
            }
            if let Some(table) = &mut self.word_table {
                for &id in &encoded.words.as_ref().unwrap()[i] {
                    axpy_row(table.grad_mut(), id, &row[off..off + f.d_word]);
                    off += f.d_word;
                }
            }
        }
    }

    /// Read-only view of every trainable parameter. Must list the same
    /// names in the same order as [`Self::named_params_mut`].
    pub fn named_params(&self) -> Vec<(String, &Param)> {
        let mut params: Vec<(String, &Param)> = vec![("emb.char".into(), &self.char_table)];
        if let Some(t) = self.bigram_table.as_ref() {
            params.push(("emb.bigram".into(), t));
        }
        if let Some(t) = self.word_table.as_ref() {
            params.push(("emb.word".into(), t));
        }
        for (d, layer) in self.layers.iter().enumerate() {
            let n = d + 1;
            params.push((format!("conv{n}.w"), &layer.w));
            params.push((format!("conv{n}.b"), &layer.b));
            if let Some(v) = layer.v.as_ref() {
                params.push((format!("conv{n}.v"), v));
            }
            if let Some(c) = layer.c.as_ref() {
                params.push((format!("conv{n}.c"), c));
            }
        }
        params.push(("proj.w".into(), &self.proj_w));
        params.push(("proj.b".into(), &self.proj_b));
        params
    }

    /// Every trainable parameter with its stable name. The order is frozen;
    /// it fixes both the optimizer state keys and the model file layout.
    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut params: Vec<(String, &mut Param)> =
            vec![("emb.char".into(), &mut self.char_table)];
        if let Some(t) = self.bigram_table.as_mut() {
            params.push(("emb.bigram".into(), t));
        }
        if let Some(t) = self.word_table.as_mut() {
            params.push(("emb.word".into(), t));
        }
        for (d, layer) in self.layers.iter_mut().enumerate() {
            let n = d + 1;
            params.push((format!("conv{n}.w"), &mut layer.w));
            params.push((format!("conv{n}.b"), &mut layer.b));
            if let Some(v) = layer.v.as_mut() {
                params.push((format!("conv{n}.v"), v));
            }
            if let Some(c) = layer.c.as_mut() {
                params.push((format!("conv{n}.c"), c));
            }
        }
        params.push(("proj.w".into(), &mut self.proj_w));
        params.push(("proj.b".into(), &mut self.proj_b));
        params
    }
}

fn axpy_row(grad: &mut Array, id: usize, d: &[f64]) {
    for (g, x) in grad.row_mut(id).iter_mut().zip(d) {
        *g += x;
    }
}

/// Intermediates cached by [`EncoderParams::forward`].
pub struct Tape {
    encoded: EncodedSentence,
    embed_mask: DropoutMask,
    inputs: Vec<Array>,
    layer_caches: Vec<LayerCache>,
}

struct LayerCache {
    value_pre: Array,
    gate_pre: Option<Array>,
    mask: DropoutMask,
}
