//! Encoder-decoder: reads the whole sequence once and emits the relation of
//! each target to the center in the order 1, 2, 4, 5, each step conditioned
//! on the labels emitted before it.

use log::warn;
use ndarray::{Array1, Array2, ArrayView1, Axis};

use super::classifier::log_softmax;
use super::encoder::{Encoder, EncoderCache};
use super::params::{Init, ParamSet};
use super::trainer::{self, EpochEval, LoopSpec, TrainLog};
use super::{Architecture, Model, ModelConfig, Span};
use crate::analysis::relation_histogram;
use crate::codec::{build_vocab, event_spans, fit_tokens, serialize_context, Vocabulary};
use crate::error::{Result, SsrError};
use crate::event::{dominant_label, Corpus, EventSequence, RelationLabel, CENTER_INDEX, TARGET_INDICES};
use crate::metrics::evaluate;

const STEPS: usize = TARGET_INDICES.len();

pub(crate) fn decoder_spec(d: usize, c: usize) -> Vec<(String, Vec<usize>, Init)> {
    let std = 1.0 / (d as f64).sqrt();
    vec![
        ("dec.w_target".into(), vec![d, d], Init::Normal(std)),
        ("dec.w_center".into(), vec![d, d], Init::Normal(std)),
        ("dec.step".into(), vec![STEPS, d], Init::Normal(0.1)),
        ("dec.prefix".into(), vec![(STEPS - 1) * c, d], Init::Normal(0.1)),
        ("dec.b".into(), vec![d], Init::Zeros),
        ("dec.out_w".into(), vec![d, c], Init::Zeros),
        ("dec.out_b".into(), vec![c], Init::Zeros),
    ]
}

struct Decoder {
    enc: Encoder,
    classes: usize,
    w_target: usize,
    w_center: usize,
    step: usize,
    prefix: usize,
    b: usize,
    out_w: usize,
    out_b: usize,
}

/// Encoder states for one sequence plus each event's verb-token state.
struct Encoded {
    cache: EncoderCache,
    verb_rows: Vec<usize>,
    verbs: Vec<Array1<f64>>,
}

pub(crate) fn encode_context(
    cfg: &ModelConfig,
    vocab: &Vocabulary,
    seq: &EventSequence,
) -> Result<(Vec<u32>, Vec<Span>)> {
    let ts = serialize_context(seq, cfg.include_aux)?;
    let tokens = fit_tokens(&ts, cfg.max_len)?;
    let spans = event_spans(&tokens)?;
    let ids = tokens.iter().map(|t| vocab.id_or_unk(t)).collect();
    Ok((ids, spans))
}

impl Decoder {
    fn resolve(model: &Model) -> Result<Self> {
        model.require_arch(Architecture::EncoderDecoder)?;
        let p = &model.params;
        let idx = |name: &str| {
            p.index(name)
                .ok_or_else(|| SsrError::ModelFormat(format!("missing tensor {name}")))
        };
        Ok(Decoder {
            enc: Encoder::resolve(p, model.config.encoder_shape())?,
            classes: model.config.num_classes(),
            w_target: idx("dec.w_target")?,
            w_center: idx("dec.w_center")?,
            step: idx("dec.step")?,
            prefix: idx("dec.prefix")?,
            b: idx("dec.b")?,
            out_w: idx("dec.out_w")?,
            out_b: idx("dec.out_b")?,
        })
    }

    fn encode(&self, params: &ParamSet, ids: &[u32], spans: &[(usize, usize)]) -> Result<Encoded> {
        let cache = self.enc.forward(params, ids)?;
        let verb_rows: Vec<usize> = spans.iter().map(|&(s, e)| (s + 1).min(e - 1)).collect();
        let verbs = verb_rows.iter().map(|&r| cache.output.row(r).to_owned()).collect();
        Ok(Encoded {
            cache,
            verb_rows,
            verbs,
        })
    }

    fn target_mean<'a>(&self, enc: &'a Encoded, step: usize) -> &'a Array1<f64> {
        &enc.verbs[TARGET_INDICES[step] - 1]
    }

    /// Pre-activation of step `k` given the labels of earlier steps.
    fn pre_activation(&self, params: &ParamSet, enc: &Encoded, k: usize, prefix: &[usize]) -> Array1<f64> {
        let mut z = self.target_mean(enc, k).dot(&params.mat(self.w_target))
            + enc.verbs[CENTER_INDEX - 1].dot(&params.mat(self.w_center))
            + params.mat(self.step).row(k)
            + params.vec(self.b);
        for (j, &l) in prefix.iter().enumerate().take(k) {
            z += &params.mat(self.prefix).row(j * self.classes + l);
        }
        z
    }

    fn step_log_probs(
        &self,
        params: &ParamSet,
        enc: &Encoded,
        k: usize,
        prefix: &[usize],
    ) -> (Array1<f64>, Array1<f64>) {
        let h = self.pre_activation(params, enc, k, prefix).mapv(f64::tanh);
        let logits = h.dot(&params.mat(self.out_w)) + params.vec(self.out_b);
        (h, log_softmax(&logits))
    }

    /// Summed per-step cross-entropy under teacher forcing; accumulates
    /// `scale` times its gradient into `grads` when given.
    fn loss(
        &self,
        params: &ParamSet,
        enc: &Encoded,
        gold: &[usize; STEPS],
        scale: f64,
        grads: Option<&mut ParamSet>,
    ) -> f64 {
        let mut total = 0.0;
        let mut d_verbs: Vec<Array1<f64>> = enc.verbs.iter().map(|m| Array1::zeros(m.len())).collect();
        let mut grads = grads;
        for k in 0..STEPS {
            let (h, lp) = self.step_log_probs(params, enc, k, gold);
            total -= lp[gold[k]];
            let Some(g) = grads.as_deref_mut() else {
                continue;
            };
            let mut dlogits = lp.mapv(f64::exp);
            dlogits[gold[k]] -= 1.0;
            dlogits *= scale;
            g.mat_mut(self.out_w).scaled_add(1.0, &outer(h.view(), dlogits.view()));
            g.vec_mut(self.out_b).scaled_add(1.0, &dlogits);
            let dh = params.mat(self.out_w).dot(&dlogits);
            let dz = dh * h.mapv(|v| 1.0 - v * v);
            g.vec_mut(self.b).scaled_add(1.0, &dz);
            g.mat_mut(self.step).row_mut(k).scaled_add(1.0, &dz);
            for (j, &l) in gold.iter().enumerate().take(k) {
                g.mat_mut(self.prefix)
                    .row_mut(j * self.classes + l)
                    .scaled_add(1.0, &dz);
            }
            let t = TARGET_INDICES[k] - 1;
            g.mat_mut(self.w_target)
                .scaled_add(1.0, &outer(enc.verbs[t].view(), dz.view()));
            g.mat_mut(self.w_center)
                .scaled_add(1.0, &outer(enc.verbs[CENTER_INDEX - 1].view(), dz.view()));
            d_verbs[t] += &params.mat(self.w_target).dot(&dz);
            d_verbs[CENTER_INDEX - 1] += &params.mat(self.w_center).dot(&dz);
        }
        if let Some(g) = grads {
            let mut d_out = Array2::zeros(enc.cache.output.raw_dim());
            for (&r, dm) in enc.verb_rows.iter().zip(&d_verbs) {
                d_out.row_mut(r).scaled_add(1.0, dm);
            }
            self.enc.backward(params, &enc.cache, &d_out, g);
        }
        total
    }
}

fn outer(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    a.insert_axis(Axis(1)).dot(&b.insert_axis(Axis(0)))
}

/// Highest-scoring label sequence of length `steps` under summed
/// log-probabilities, keeping `width` hypotheses per step. Ties prefer the
/// lexicographically smaller sequence, so `width == 1` is greedy decoding.
pub fn beam_search<F>(steps: usize, width: usize, mut log_probs: F) -> Result<Vec<usize>>
where
    F: FnMut(&[usize]) -> Result<Vec<f64>>,
{
    if width < 1 {
        return Err(SsrError::Param("beam width must be at least 1".into()));
    }
    let mut beam: Vec<(f64, Vec<usize>)> = vec![(0.0, Vec::new())];
    for _ in 0..steps {
        let mut next = Vec::new();
        for (score, prefix) in &beam {
            for (l, lp) in log_probs(prefix)?.into_iter().enumerate() {
                let mut seq = prefix.clone();
                seq.push(l);
                next.push((score + lp, seq));
            }
        }
        next.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        next.truncate(width);
        beam = next;
    }
    Ok(beam.swap_remove(0).1)
}

fn prepare(model: &Model, seq: &EventSequence) -> Result<(Decoder, Encoded)> {
    let dec = Decoder::resolve(model)?;
    let (ids, spans) = encode_context(&model.config, &model.vocab, seq)?;
    let enc = dec.encode(&model.params, &ids, &spans)?;
    Ok((dec, enc))
}

/// Log-probabilities of step `k` given the labels chosen for earlier steps.
pub fn step_log_probs(model: &Model, seq: &EventSequence, k: usize, prefix: &[RelationLabel]) -> Result<Vec<f64>> {
    if k >= STEPS || prefix.len() < k {
        return Err(SsrError::Param(format!("step {k} needs {k} prefix labels")));
    }
    let (dec, enc) = prepare(model, seq)?;
    let prefix = prefix
        .iter()
        .map(|&l| model.config.label_space.require(l))
        .collect::<Result<Vec<_>>>()?;
    Ok(dec.step_log_probs(&model.params, &enc, k, &prefix).1.to_vec())
}

/// Summed cross-entropy of the gold labels of `seq` with gold prefixes.
pub fn teacher_forcing_loss(model: &Model, seq: &EventSequence) -> Result<f64> {
    let gold = gold_indices(model, seq)?.ok_or(SsrError::IncompleteAnnotation { skipped: 1 })?;
    let (dec, enc) = prepare(model, seq)?;
    Ok(dec.loss(&model.params, &enc, &gold, 1.0, None))
}

/// [`teacher_forcing_loss`] and its gradient with respect to every parameter.
pub fn teacher_forcing_gradient(model: &Model, seq: &EventSequence) -> Result<(f64, ParamSet)> {
    let gold = gold_indices(model, seq)?.ok_or(SsrError::IncompleteAnnotation { skipped: 1 })?;
    let (dec, enc) = prepare(model, seq)?;
    let mut grads = model.params.zeros_like();
    let loss = dec.loss(&model.params, &enc, &gold, 1.0, Some(&mut grads));
    Ok((loss, grads))
}

fn gold_indices(model: &Model, seq: &EventSequence) -> Result<Option<[usize; STEPS]>> {
    let Some(labels) = seq.full_labels() else {
        return Ok(None);
    };
    let mut out = [0; STEPS];
    for (o, l) in out.iter_mut().zip(labels) {
        *o = model.config.label_space.require(l)?;
    }
    Ok(Some(out))
}

/// The four relations of `seq`, targets in order 1, 2, 4, 5.
pub fn decode_beam(m: &Model, seq: &EventSequence, beam_width: usize) -> Result<[RelationLabel; STEPS]> {
    if beam_width < 1 {
        return Err(SsrError::Param("beam width must be at least 1".into()));
    }
    let (dec, enc) = prepare(m, seq)?;
    decode_with(&dec, &m.params, &enc, beam_width).map(|ids| ids.map(|i| m.config.label_space.label(i)))
}

fn decode_with(dec: &Decoder, params: &ParamSet, enc: &Encoded, width: usize) -> Result<[usize; STEPS]> {
    let best = beam_search(STEPS, width, |prefix| {
        Ok(dec.step_log_probs(params, enc, prefix.len(), prefix).1.to_vec())
    })?;
    Ok(best.try_into().expect("four steps"))
}

/// Trains the encoder-decoder with teacher forcing on every fully
/// annotated sequence of `train`; the rest are skipped and counted.
pub fn train_seq2seq(cfg: &ModelConfig, train: &Corpus, val: &Corpus) -> Result<(Model, TrainLog)> {
    if cfg.architecture != Architecture::EncoderDecoder {
        return Err(SsrError::Param(
            "train_seq2seq needs architecture encoder-decoder".into(),
        ));
    }
    for c in [train, val] {
        if c.label_space != cfg.label_space {
            return Err(SsrError::LabelSpaceMismatch {
                expected: cfg.label_space.name().to_string(),
                found: c.label_space.name().to_string(),
            });
        }
    }
    let vocab = build_vocab(train, cfg.min_count);
    let mut model = Model::init(cfg.clone(), vocab)?;
    let dec = Decoder::resolve(&model)?;
    let mut examples = Vec::new();
    let mut skipped = 0;
    for seq in &train.sequences {
        match gold_indices(&model, seq)? {
            Some(gold) => examples.push((encode_context(&model.config, &model.vocab, seq)?, gold)),
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        warn!("skipped {skipped} training sequences without all four relations");
    }
    if examples.is_empty() {
        return Err(SsrError::IncompleteAnnotation { skipped });
    }
    let val_inputs = val
        .sequences
        .iter()
        .map(|s| encode_context(&model.config, &model.vocab, s))
        .collect::<Result<Vec<_>>>()?;
    let dominant = dominant_label(relation_histogram(train)).expect("non-empty training corpus");
    let space = model.config.label_space.clone();
    let spec = LoopSpec {
        epochs: model.config.epochs,
        batch_size: model.config.batch_size,
        learning_rate: model.config.learning_rate,
        optimizer: model.config.optimizer,
        seed: model.config.seed,
        stop_at_val_macro: model.config.stop_at_val_macro,
    };
    let mut log = trainer::run(
        &mut model.params,
        examples.len(),
        &spec,
        |params, batch, grads| {
            let scale = 1.0 / batch.len() as f64;
            let mut total = 0.0;
            for &i in batch {
                let ((ids, spans), gold) = &examples[i];
                let enc = dec.encode(params, ids, spans)?;
                total += dec.loss(params, &enc, gold, scale, Some(grads));
            }
            Ok(total * scale)
        },
        |params| {
            if val.num_instances() == 0 {
                return Ok(None);
            }
            let mut preds = Vec::with_capacity(val.num_instances());
            for (seq, (ids, spans)) in val.sequences.iter().zip(&val_inputs) {
                let enc = dec.encode(params, ids, spans)?;
                let labels = decode_with(&dec, params, &enc, 1)?;
                for r in &seq.relations {
                    let k = TARGET_INDICES
                        .iter()
                        .position(|&t| t == r.target_index)
                        .expect("validated target");
                    preds.push(space.label(labels[k]));
                }
            }
            let report = evaluate(&preds, val)?;
            let dominant_fraction = preds.iter().filter(|&&p| p == dominant).count() as f64 / preds.len() as f64;
            Ok(Some(EpochEval {
                macro_top1: report.macro_top1,
                top1: report.top1,
                dominant_fraction,
            }))
        },
    )?;
    log.skipped_incomplete = skipped;
    Ok((model, log))
}
