//! Relation classifier: encoder, pooled representation, linear head.

use ndarray::{concatenate, s, Array1, Array2, Axis};

use super::encoder::{is_encoder_param, Encoder};
use super::params::{ParamSet, Tensor};
use super::trainer::{self, EpochEval, LoopSpec, TrainLog};
use super::{
    head_spec, Architecture, ClassWeights, Distribution, InputMode, LossMode, Model, ModelConfig, Pooling, Span,
};
use crate::analysis::relation_histogram;
use crate::codec::{
    build_vocab, build_vocab_multi, event_spans, fit_tokens, serialize_full_styled, serialize_pair, Vocabulary, MARK,
    MARK_CENTER,
};
use crate::error::{Result, SsrError};
use crate::event::{dominant_label, Corpus, EventSequence, LabelSpace, CENTER_INDEX};
use crate::metrics::evaluate;

/// One encoded relation instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    /// Token ids without padding.
    pub ids: Vec<u32>,
    /// Gold class index in the model's label space.
    pub label: usize,
    /// Token ranges of the target and the center event.
    pub spans: [(usize, usize); 2],
}

/// Token ranges of the target and center events inside fitted tokens.
fn focus_spans(tokens: &[String], mode: InputMode, target_index: usize) -> Result<[(usize, usize); 2]> {
    let spans = event_spans(tokens)?;
    let whole = (0, tokens.len());
    match mode {
        InputMode::Pair => {
            let t = spans.first().copied().unwrap_or(whole);
            Ok([t, spans.get(1).copied().unwrap_or(t)])
        }
        InputMode::Full => {
            let marked: Vec<(usize, usize)> = tokens
                .iter()
                .enumerate()
                .filter(|(_, t)| *t == MARK || *t == MARK_CENTER)
                .filter_map(|(i, _)| spans.iter().copied().find(|s| s.0 == i + 1))
                .collect();
            if marked.len() != 2 {
                return Err(SsrError::Param(format!(
                    "expected two marked events, found {}",
                    marked.len()
                )));
            }
            Ok(if target_index < CENTER_INDEX {
                [marked[0], marked[1]]
            } else {
                [marked[1], marked[0]]
            })
        }
    }
}

pub(crate) fn encode_instance(
    cfg: &ModelConfig,
    vocab: &Vocabulary,
    seq: &EventSequence,
    target_index: usize,
    mode: InputMode,
    include_aux: bool,
) -> Result<(Vec<u32>, [Span; 2])> {
    let ts = match mode {
        InputMode::Pair => serialize_pair(seq, target_index, include_aux)?,
        InputMode::Full => serialize_full_styled(seq, target_index, include_aux, cfg.marker_style)?,
    };
    if cfg.max_len < 2 {
        return Err(SsrError::Param(format!(
            "max_len must be at least 2, got {}",
            cfg.max_len
        )));
    }
    let tokens = fit_tokens(&ts, cfg.max_len)?;
    let spans = focus_spans(&tokens, mode, target_index)?;
    Ok((tokens.iter().map(|t| vocab.id_or_unk(t)).collect(), spans))
}

pub fn encode_corpus(model: &Model, corpus: &Corpus) -> Result<Vec<Example>> {
    encode_examples(&model.config, &model.vocab, corpus)
}

fn encode_examples(cfg: &ModelConfig, vocab: &Vocabulary, corpus: &Corpus) -> Result<Vec<Example>> {
    corpus
        .instances()
        .map(|(seq, rel)| {
            let (ids, spans) = encode_instance(cfg, vocab, seq, rel.target_index, cfg.input_mode, cfg.include_aux)?;
            Ok(Example {
                ids,
                label: cfg.label_space.require(rel.label)?,
                spans,
            })
        })
        .collect()
}

/// Row of an event's verb token: the one after `<EVT>`.
fn verb_row((start, end): (usize, usize)) -> usize {
    (start + 1).min(end - 1)
}

/// Tensor positions of a classifier inside its parameter set.
pub(crate) struct Classifier {
    enc: Encoder,
    dense_w: usize,
    dense_b: usize,
    w: usize,
    b: usize,
    pooling: Pooling,
}

impl Classifier {
    pub fn resolve(model: &Model) -> Result<Self> {
        model.require_arch(Architecture::EncoderClassifier)?;
        Self::resolve_parts(&model.config, &model.params)
    }

    fn resolve_parts(cfg: &ModelConfig, params: &ParamSet) -> Result<Self> {
        let enc = Encoder::resolve(params, cfg.encoder_shape())?;
        let idx = |name: &str| {
            params
                .index(name)
                .ok_or_else(|| SsrError::ModelFormat(format!("missing tensor {name}")))
        };
        Ok(Classifier {
            enc,
            dense_w: idx("head.dense_w")?,
            dense_b: idx("head.dense_b")?,
            w: idx("head.w")?,
            b: idx("head.b")?,
            pooling: cfg.pooling,
        })
    }

    fn pool(&self, h: &Array2<f64>, spans: &[(usize, usize); 2]) -> Array1<f64> {
        match self.pooling {
            Pooling::Mean => h.mean_axis(Axis(0)).expect("non-empty input"),
            Pooling::First => h.row(0).to_owned(),
            Pooling::Events => concatenate![Axis(0), h.row(verb_row(spans[0])), h.row(verb_row(spans[1]))],
        }
    }

    /// Spreads the gradient of the pooled vector back over token states.
    fn unpool(&self, dpooled: &Array1<f64>, rows: usize, spans: &[(usize, usize); 2], dh: &mut Array2<f64>) {
        match self.pooling {
            Pooling::Mean => *dh += &(dpooled / rows as f64),
            Pooling::First => dh.row_mut(0).assign(dpooled),
            Pooling::Events => {
                let d = dh.ncols();
                for (k, &span) in spans.iter().enumerate() {
                    dh.row_mut(verb_row(span))
                        .scaled_add(1.0, &dpooled.slice(s![k * d..(k + 1) * d]));
                }
            }
        }
    }

    /// Dense tanh layer over the pooled vector.
    fn hidden(&self, params: &ParamSet, pooled: &Array1<f64>) -> Array1<f64> {
        (pooled.dot(&params.mat(self.dense_w)) + params.vec(self.dense_b)).mapv(f64::tanh)
    }

    pub fn logits(&self, params: &ParamSet, ex: &Example) -> Result<Array1<f64>> {
        let cache = self.enc.forward(params, &ex.ids)?;
        let pooled = self.pool(&cache.output, &ex.spans);
        Ok(self.hidden(params, &pooled).dot(&params.mat(self.w)) + params.vec(self.b))
    }

    /// Mean cross-entropy over `batch`. With class weights each term is
    /// scaled by its gold-class weight and the sum is divided by the total
    /// weight of the batch. Accumulates the gradient into `grads` when given.
    pub fn loss(
        &self,
        params: &ParamSet,
        batch: &[&Example],
        weights: Option<&[f64]>,
        mut grads: Option<&mut ParamSet>,
    ) -> Result<f64> {
        let n: f64 = match weights {
            Some(w) => batch.iter().map(|ex| w[ex.label]).sum(),
            None => batch.len() as f64,
        };
        let n = if n > 0.0 { n } else { 1.0 };
        let mut total = 0.0;
        for ex in batch {
            let cache = self.enc.forward(params, &ex.ids)?;
            let pooled = self.pool(&cache.output, &ex.spans);
            let hidden = self.hidden(params, &pooled);
            let logits = hidden.dot(&params.mat(self.w)) + params.vec(self.b);
            let log_probs = log_softmax(&logits);
            let beta = weights.map_or(1.0, |w| w[ex.label]);
            total += -beta * log_probs[ex.label];
            let Some(grads) = grads.as_deref_mut() else {
                continue;
            };
            let mut dlogits = log_probs.mapv(f64::exp);
            dlogits[ex.label] -= 1.0;
            dlogits *= beta / n;
            {
                let mut gw = grads.mat_mut(self.w);
                gw += &outer(&hidden, &dlogits);
            }
            grads.vec_mut(self.b).scaled_add(1.0, &dlogits);
            let dz = params.mat(self.w).dot(&dlogits) * hidden.mapv(|h| 1.0 - h * h);
            {
                let mut gw = grads.mat_mut(self.dense_w);
                gw += &outer(&pooled, &dz);
            }
            grads.vec_mut(self.dense_b).scaled_add(1.0, &dz);
            let dpooled = params.mat(self.dense_w).dot(&dz);
            let mut dh = Array2::zeros(cache.output.raw_dim());
            self.unpool(&dpooled, cache.output.nrows(), &ex.spans, &mut dh);
            self.enc.backward(params, &cache, &dh, grads);
        }
        Ok(total / n)
    }
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    a.view().insert_axis(Axis(1)).dot(&b.view().insert_axis(Axis(0)))
}

pub(crate) fn log_softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + logits.mapv(|v| (v - max).exp()).sum().ln();
    logits - lse
}

fn weight_vector(weights: Option<&ClassWeights>, space: &LabelSpace) -> Result<Option<Vec<f64>>> {
    weights.map(|w| w.for_space(space)).transpose()
}

/// Mean loss of `batch` under `model`, optionally class-weighted.
pub fn batch_loss(model: &Model, batch: &[Example], weights: Option<&ClassWeights>) -> Result<f64> {
    let clf = Classifier::resolve(model)?;
    let w = weight_vector(weights, &model.config.label_space)?;
    let refs: Vec<&Example> = batch.iter().collect();
    clf.loss(&model.params, &refs, w.as_deref(), None)
}

/// Mean loss of `batch` and its gradient with respect to every parameter.
pub fn batch_gradient(model: &Model, batch: &[Example], weights: Option<&ClassWeights>) -> Result<(f64, ParamSet)> {
    let clf = Classifier::resolve(model)?;
    let w = weight_vector(weights, &model.config.label_space)?;
    let refs: Vec<&Example> = batch.iter().collect();
    let mut grads = model.params.zeros_like();
    let loss = clf.loss(&model.params, &refs, w.as_deref(), Some(&mut grads))?;
    Ok((loss, grads))
}

fn check_corpora(cfg: &ModelConfig, corpora: &[&Corpus]) -> Result<()> {
    for c in corpora {
        if c.label_space != cfg.label_space {
            return Err(SsrError::LabelSpaceMismatch {
                expected: cfg.label_space.name().to_string(),
                found: c.label_space.name().to_string(),
            });
        }
    }
    Ok(())
}

/// Trains a classifier on every relation instance of `train`, keeping the
/// epoch with the best macro accuracy on `val`.
///
/// Class weights, when given, switch the objective to weighted
/// cross-entropy; with `LossMode::Weighted` and no weights they are derived
/// from `train`.
pub fn train(
    cfg: &ModelConfig,
    train: &Corpus,
    val: &Corpus,
    weights: Option<&ClassWeights>,
    mode: InputMode,
    include_aux: bool,
) -> Result<(Model, TrainLog)> {
    if cfg.architecture != Architecture::EncoderClassifier {
        return Err(SsrError::Param("train needs architecture encoder-classifier".into()));
    }
    check_corpora(cfg, &[train, val])?;
    if train.num_instances() == 0 {
        return Err(SsrError::InsufficientData("training corpus has no relations".into()));
    }
    let mut cfg = cfg.clone();
    cfg.input_mode = mode;
    cfg.include_aux = include_aux;
    let weights = match (weights, cfg.loss_mode) {
        (Some(w), _) => Some(w.clone()),
        (None, LossMode::Weighted) => Some(super::class_weights(train)?),
        (None, LossMode::Plain) => None,
    };
    if weights.is_some() {
        cfg.loss_mode = LossMode::Weighted;
    }
    let weights = weight_vector(weights.as_ref(), &cfg.label_space)?;
    let vocab = build_vocab(train, cfg.min_count);
    let model = Model::init(cfg, vocab)?;
    fit(model, train, val, weights.as_deref())
}

fn fit(mut model: Model, train: &Corpus, val: &Corpus, weights: Option<&[f64]>) -> Result<(Model, TrainLog)> {
    let examples = encode_corpus(&model, train)?;
    let val_examples = encode_corpus(&model, val)?;
    let dominant = dominant_label(relation_histogram(train)).expect("non-empty training corpus");
    let clf = Classifier::resolve(&model)?;
    let space = model.config.label_space.clone();
    let spec = LoopSpec {
        epochs: model.config.epochs,
        batch_size: model.config.batch_size,
        learning_rate: model.config.learning_rate,
        optimizer: model.config.optimizer,
        seed: model.config.seed,
        stop_at_val_macro: model.config.stop_at_val_macro,
    };
    let log = trainer::run(
        &mut model.params,
        examples.len(),
        &spec,
        |params, batch, grads| {
            let refs: Vec<&Example> = batch.iter().map(|&i| &examples[i]).collect();
            clf.loss(params, &refs, weights, Some(grads))
        },
        |params| {
            if val_examples.is_empty() {
                return Ok(None);
            }
            let preds = val_examples
                .iter()
                .map(|ex| Ok(space.label(argmax(&clf.logits(params, ex)?))))
                .collect::<Result<Vec<_>>>()?;
            let report = evaluate(&preds, val)?;
            let dominant_fraction = preds.iter().filter(|&&p| p == dominant).count() as f64 / preds.len() as f64;
            Ok(Some(EpochEval {
                macro_top1: report.macro_top1,
                top1: report.top1,
                dominant_fraction,
            }))
        },
    )?;
    Ok((model, log))
}

pub(crate) fn argmax(v: &Array1<f64>) -> usize {
    v.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |best, (i, &x)| {
                if x > best.1 {
                    (i, x)
                } else {
                    best
                }
            },
        )
        .0
}

fn softmax(logits: &Array1<f64>) -> Vec<f64> {
    log_softmax(logits).mapv(f64::exp).to_vec()
}

/// Relation distribution between event `target_index` and the center.
pub fn predict(
    m: &Model,
    seq: &EventSequence,
    target_index: usize,
    mode: InputMode,
    include_aux: bool,
) -> Result<Distribution> {
    let clf = Classifier::resolve(m)?;
    if m.vocab.len() != m.config.vocab_size {
        return Err(SsrError::VocabMismatch(format!(
            "vocabulary has {} tokens, model expects {}",
            m.vocab.len(),
            m.config.vocab_size
        )));
    }
    let (ids, spans) = encode_instance(&m.config, &m.vocab, seq, target_index, mode, include_aux)?;
    let logits = clf.logits(&m.params, &Example { ids, label: 0, spans })?;
    Ok(Distribution {
        labels: m.config.label_space.labels().to_vec(),
        probs: softmax(&logits),
    })
}

/// Replaces the classification head with a fresh zero head for the label
/// space of `cfg`. Encoder tensors are copied unchanged.
pub fn swap_head(pretrained: &Model, cfg: &ModelConfig) -> Result<Model> {
    let mut config = cfg.clone();
    config.vocab_size = pretrained.vocab.len();
    config.architecture = Architecture::EncoderClassifier;
    config.validate()?;
    if config.encoder_shape() != pretrained.config.encoder_shape() {
        return Err(SsrError::Param(
            "encoder shape differs between pretraining and fine-tuning".into(),
        ));
    }
    let mut tensors: Vec<Tensor> = pretrained
        .params
        .tensors()
        .iter()
        .filter(|t| is_encoder_param(&t.name))
        .cloned()
        .collect();
    let head = ParamSet::init(&head_spec(&config), config.seed);
    tensors.extend(head.tensors().iter().cloned());
    Ok(Model {
        config,
        vocab: pretrained.vocab.clone(),
        params: ParamSet::from_tensors(tensors),
        manifest: serde_json::Value::Null,
    })
}

#[derive(Debug, Clone)]
pub struct Pretrained {
    pub model: Model,
    /// The knowledge-base model at the end of pretraining, if any ran.
    pub pretrained: Option<Model>,
    pub pretrain_log: TrainLog,
    pub finetune_log: TrainLog,
}

/// Pretrains on a three-label knowledge-base corpus, swaps in a head for the
/// label space of `cfg` and fine-tunes on `train`.
///
/// With `pretrain_epochs == 0` this is exactly [`train`].
#[allow(clippy::too_many_arguments)]
pub fn pretrain_finetune(
    cfg: &ModelConfig,
    kb: &Corpus,
    pretrain_epochs: usize,
    train: &Corpus,
    val: &Corpus,
    mode: InputMode,
    include_aux: bool,
) -> Result<Pretrained> {
    if kb.label_space != LabelSpace::kb_pretrain() {
        return Err(SsrError::LabelSpaceMismatch {
            expected: LabelSpace::KB_PRETRAIN.to_string(),
            found: kb.label_space.name().to_string(),
        });
    }
    check_corpora(cfg, &[train, val])?;
    if pretrain_epochs == 0 {
        let (model, finetune_log) = self::train(cfg, train, val, None, mode, include_aux)?;
        return Ok(Pretrained {
            model,
            pretrained: None,
            pretrain_log: TrainLog::default(),
            finetune_log,
        });
    }
    if kb.num_instances() == 0 || train.num_instances() == 0 {
        return Err(SsrError::InsufficientData(
            "pretraining and fine-tuning need relations".into(),
        ));
    }
    let mut main_cfg = cfg.clone();
    main_cfg.input_mode = mode;
    main_cfg.include_aux = include_aux;
    let vocab = build_vocab_multi(&[kb, train], cfg.min_count);
    let pre_cfg = ModelConfig {
        label_space: LabelSpace::kb_pretrain(),
        epochs: pretrain_epochs,
        loss_mode: LossMode::Plain,
        stop_at_val_macro: None,
        ..main_cfg.clone()
    };
    let pre_model = Model::init(pre_cfg, vocab)?;
    let (pre_model, pretrain_log) = fit(pre_model, kb, &Corpus::empty(LabelSpace::kb_pretrain()), None)?;
    let weights = match main_cfg.loss_mode {
        LossMode::Weighted => Some(super::class_weights(train)?),
        LossMode::Plain => None,
    };
    let weights = weight_vector(weights.as_ref(), &main_cfg.label_space)?;
    let handoff = swap_head(&pre_model, &main_cfg)?;
    let (model, finetune_log) = fit(handoff, train, val, weights.as_deref())?;
    Ok(Pretrained {
        model,
        pretrained: Some(pre_model),
        pretrain_log,
        finetune_log,
    })
}
