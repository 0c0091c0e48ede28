//! Event-relation models: a transformer-encoder classifier over serialized
//! event pairs or full sequences, and an encoder-decoder that emits the
//! four relations of a sequence one after another.

pub mod balance;
pub mod classifier;
pub mod encoder;
pub mod format;
pub mod optim;
pub mod params;
pub mod seq2seq;
mod trainer;

use serde::{Deserialize, Serialize};

use crate::codec::{MarkerStyle, Vocabulary};
use crate::error::{Result, SsrError};
use crate::event::{Corpus, LabelSpace, RelationLabel, TARGET_INDICES};
use encoder::{is_encoder_param, EncoderShape};
use optim::AdamConfig;
use params::{Init, ParamSet, Tensor};

/// Half-open token range of one event.
pub(crate) type Span = (usize, usize);

pub use balance::{class_weights, undersample, ClassWeights, Undersampled};
pub use classifier::{
    batch_gradient, batch_loss, encode_corpus, predict, pretrain_finetune, swap_head, train, Example, Pretrained,
};
pub use format::{load, save};
pub use seq2seq::{
    beam_search, decode_beam, step_log_probs, teacher_forcing_gradient, teacher_forcing_loss, train_seq2seq,
};
pub use trainer::{EpochLog, TrainLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    Plain,
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    EncoderClassifier,
    EncoderDecoder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// Mean over every token.
    Mean,
    /// The first token's state.
    First,
    /// Verb-token states of the target and the center event, concatenated.
    #[default]
    Events,
}

impl Pooling {
    /// Width of the pooled vector for encoder width `dim`.
    pub fn width(self, dim: usize) -> usize {
        match self {
            Pooling::Mean | Pooling::First => dim,
            Pooling::Events => 2 * dim,
        }
    }
}

/// Which events the classifier sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    Pair,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub label_space: LabelSpace,
    /// Filled in from the vocabulary when a model is built.
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss_mode: LossMode,
    pub architecture: Architecture,
    pub pooling: Pooling,
    pub input_mode: InputMode,
    pub include_aux: bool,
    pub marker_style: MarkerStyle,
    /// Minimum corpus frequency for a token to enter the vocabulary.
    pub min_count: usize,
    pub optimizer: AdamConfig,
    /// Stop once validation macro accuracy reaches this value.
    pub stop_at_val_macro: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            label_space: LabelSpace::vidsitu(),
            vocab_size: 0,
            embed_dim: 128,
            num_layers: 2,
            num_heads: 4,
            ff_dim: 256,
            max_len: 192,
            learning_rate: 1e-3,
            epochs: 30,
            batch_size: 32,
            seed: 0,
            loss_mode: LossMode::Plain,
            architecture: Architecture::EncoderClassifier,
            pooling: Pooling::Events,
            input_mode: InputMode::Full,
            include_aux: true,
            marker_style: MarkerStyle::Single,
            min_count: 1,
            optimizer: AdamConfig::default(),
            stop_at_val_macro: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(SsrError::Param(m));
        if self.num_heads == 0 || self.embed_dim == 0 || !self.embed_dim.is_multiple_of(self.num_heads) {
            return fail(format!(
                "embed_dim {} must be a positive multiple of num_heads {}",
                self.embed_dim, self.num_heads
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.ff_dim == 0 || self.num_layers == 0 {
            return fail("batch_size, ff_dim and num_layers must be positive".into());
        }
        if self.max_len < 2 {
            return fail(format!("max_len must be at least 2, got {}", self.max_len));
        }
        Ok(())
    }

    pub fn encoder_shape(&self) -> EncoderShape {
        EncoderShape {
            vocab: self.vocab_size,
            dim: self.embed_dim,
            heads: self.num_heads,
            ff: self.ff_dim,
            layers: self.num_layers,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.label_space.size()
    }
}

/// Probabilities over a label space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub labels: Vec<RelationLabel>,
    pub probs: Vec<f64>,
}

impl Distribution {
    pub fn argmax_index(&self) -> usize {
        self.probs
            .iter()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |best, (i, &p)| {
                    if p > best.1 {
                        (i, p)
                    } else {
                        best
                    }
                },
            )
            .0
    }

    pub fn argmax(&self) -> RelationLabel {
        self.labels[self.argmax_index()]
    }

    pub fn prob(&self, label: RelationLabel) -> Option<f64> {
        self.labels.iter().position(|&l| l == label).map(|i| self.probs[i])
    }
}

/// Trained parameters together with everything needed to reuse them.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ParamSet,
    /// Run provenance (flags, seed, data hashes); `null` when absent.
    pub manifest: serde_json::Value,
}

pub(crate) fn head_spec(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (d, c) = (cfg.embed_dim, cfg.num_classes());
    match cfg.architecture {
        Architecture::EncoderClassifier => {
            let p = cfg.pooling.width(d);
            vec![
                ("head.dense_w".into(), vec![p, p], Init::Normal(1.0 / (p as f64).sqrt())),
                ("head.dense_b".into(), vec![p], Init::Zeros),
                ("head.w".into(), vec![p, c], Init::Zeros),
                ("head.b".into(), vec![c], Init::Zeros),
            ]
        }
        Architecture::EncoderDecoder => seq2seq::decoder_spec(d, c),
    }
}

impl Model {
    /// A freshly initialized model for `vocab`; the output layer starts at
    /// zero so every input maps to the uniform distribution.
    pub fn init(mut config: ModelConfig, vocab: Vocabulary) -> Result<Self> {
        config.vocab_size = vocab.len();
        config.validate()?;
        let mut spec = encoder::param_spec(&config.encoder_shape());
        spec.extend(head_spec(&config));
        let params = ParamSet::init(&spec, config.seed);
        Ok(Model {
            config,
            vocab,
            params,
            manifest: serde_json::Value::Null,
        })
    }

    pub fn encoder_tensors(&self) -> Vec<&Tensor> {
        self.params
            .tensors()
            .iter()
            .filter(|t| is_encoder_param(&t.name))
            .collect()
    }

    pub(crate) fn require_arch(&self, arch: Architecture) -> Result<()> {
        if self.config.architecture != arch {
            return Err(SsrError::Param(format!(
                "operation needs a {arch:?} model, got {:?}",
                self.config.architecture
            )));
        }
        Ok(())
    }
}

/// Predicted label of every relation instance of `corpus`, in instance
/// order. Encoder-decoder models decode each sequence once with a beam of
/// `beam_width`.
pub fn predict_corpus(model: &Model, corpus: &Corpus, beam_width: usize) -> Result<Vec<RelationLabel>> {
    if corpus.label_space != model.config.label_space {
        return Err(SsrError::LabelSpaceMismatch {
            expected: model.config.label_space.name().to_string(),
            found: corpus.label_space.name().to_string(),
        });
    }
    let cfg = &model.config;
    let mut out = Vec::with_capacity(corpus.num_instances());
    for seq in &corpus.sequences {
        match cfg.architecture {
            Architecture::EncoderClassifier => {
                for r in &seq.relations {
                    out.push(predict(model, seq, r.target_index, cfg.input_mode, cfg.include_aux)?.argmax());
                }
            }
            Architecture::EncoderDecoder => {
                if seq.relations.is_empty() {
                    continue;
                }
                let labels = decode_beam(model, seq, beam_width)?;
                for r in &seq.relations {
                    let k = TARGET_INDICES
                        .iter()
                        .position(|&t| t == r.target_index)
                        .ok_or(SsrError::TargetIndex(r.target_index))?;
                    out.push(labels[k]);
                }
            }
        }
    }
    Ok(out)
}
