//! Subcommands of the `ssr` binary. Every command reads its inputs from
//! files, writes its outputs to files and reports failures through
//! [`exit_code`]: 1 for usage errors, 2 for invalid data, 3 for runtime
//! failures.

pub mod args;

use std::fmt;
use std::fs;
use std::io::BufReader;
use std::path::Path;

use anyhow::{Context, Result};
use log::info;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use ssr_core::analysis::{
    distance_distribution, histogram_csv, majority_baseline, memorization_baseline, pair_dominant_table,
    relation_histogram,
};
use ssr_core::codec::{serialize_context, serialize_full_styled, serialize_pair, MarkerStyle, TokenDump};
use ssr_core::corpus_io::{corpus_to_string, read_corpus, read_jsonl, write_jsonl};
use ssr_core::error::SsrError;
use ssr_core::event::Corpus;
use ssr_core::kb::{self, KbRecord, LabelMapping, RuleExtractor};
use ssr_core::metrics::{compare, evaluate, EvalReport};
use ssr_core::model::{
    self, format, pretrain_finetune, train_seq2seq, Architecture, InputMode, LossMode, Model, ModelConfig, Pooling,
    TrainLog,
};
use ssr_core::synth::{self, SynthSpec};

use args::*;

/// Flag combinations the argument parser cannot rule out on its own.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

/// Exit status for a failed command. Library I/O errors come from reading
/// inputs and count as data errors; failures writing outputs are runtime
/// errors.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<SsrError>() {
            return match e {
                SsrError::Param(_) | SsrError::Unsupported(_) => EXIT_USAGE,
                SsrError::Io(_) => EXIT_DATA,
                e if e.is_data_error() => EXIT_DATA,
                _ => EXIT_RUNTIME,
            };
        }
    }
    EXIT_RUNTIME
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Analyze(a) => analyze(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::Reformulate(a) => reformulate(&a),
        Command::Synth(a) => synth_cmd(&a),
        Command::Serialize(a) => serialize(&a),
        Command::Sweep(a) => sweep(&a),
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path)
        .map_err(SsrError::from)
        .with_context(|| format!("reading {}", path.display()))
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let bytes = read_bytes(path)?;
    read_corpus(BufReader::new(bytes.as_slice())).with_context(|| format!("in {}", path.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, text)
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn data_entry(path: &Path) -> Result<Value> {
    Ok(json!({"path": path.display().to_string(), "sha256": sha256_hex(&read_bytes(path)?)}))
}

/// Report of the requested statistics, keyed by statistic name.
pub fn analysis_report(corpus: &Corpus, stat: Stat) -> Result<Value> {
    let mut report = serde_json::Map::new();
    report.insert("label_space".into(), json!(corpus.label_space.name()));
    report.insert("sequences".into(), json!(corpus.len()));
    report.insert("instances".into(), json!(corpus.num_instances()));
    if matches!(stat, Stat::Histogram | Stat::All) {
        report.insert("histogram".into(), serde_json::to_value(relation_histogram(corpus))?);
    }
    if matches!(stat, Stat::PairDominant | Stat::All) {
        report.insert(
            "pair_dominant".into(),
            serde_json::to_value(pair_dominant_table(corpus))?,
        );
    }
    if matches!(stat, Stat::Distance | Stat::All) {
        report.insert("distance".into(), serde_json::to_value(distance_distribution(corpus))?);
    }
    Ok(Value::Object(report))
}

fn analyze(a: &AnalyzeArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    write_json(&a.out, &analysis_report(&corpus, a.stat)?)?;
    if let Some(dir) = &a.csv_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        if matches!(a.stat, Stat::Histogram | Stat::All) {
            write(&dir.join("histogram.csv"), histogram_csv(&relation_histogram(&corpus)))?;
        }
        if matches!(a.stat, Stat::PairDominant | Stat::All) {
            write(&dir.join("pair_dominant.csv"), pair_dominant_table(&corpus).to_csv())?;
        }
        if matches!(a.stat, Stat::Distance | Stat::All) {
            write(&dir.join("distance.csv"), distance_distribution(&corpus).to_csv())?;
        }
    }
    Ok(())
}

/// Library defaults overridden by the given flags.
pub fn model_config(m: &ModelArgs, lr: f64, seed: u64, arch: Arch) -> ModelConfig {
    let d = ModelConfig::default();
    ModelConfig {
        learning_rate: lr,
        seed,
        architecture: match arch {
            Arch::Classifier => Architecture::EncoderClassifier,
            Arch::Seq2seq => Architecture::EncoderDecoder,
        },
        epochs: m.epochs.unwrap_or(d.epochs),
        embed_dim: m.embed_dim.unwrap_or(d.embed_dim),
        num_layers: m.layers.unwrap_or(d.num_layers),
        num_heads: m.heads.unwrap_or(d.num_heads),
        ff_dim: m.ff_dim.unwrap_or(d.ff_dim),
        max_len: m.max_len.unwrap_or(d.max_len),
        batch_size: m.batch_size.unwrap_or(d.batch_size),
        min_count: m.min_count.unwrap_or(d.min_count),
        pooling: match m.pooling {
            Some(PoolingArg::Mean) => Pooling::Mean,
            Some(PoolingArg::First) => Pooling::First,
            Some(PoolingArg::Events) | None => d.pooling,
        },
        marker_style: match m.markers {
            Some(Markers::Double) => MarkerStyle::Double,
            Some(Markers::Single) | None => d.marker_style,
        },
        stop_at_val_macro: m.stop_at.or(d.stop_at_val_macro),
        ..d
    }
}

fn input_mode(m: Mode) -> InputMode {
    match m {
        Mode::Pair => InputMode::Pair,
        Mode::Full => InputMode::Full,
    }
}

struct Trained {
    model: Model,
    log: TrainLog,
    pretrain_log: Option<TrainLog>,
    undersample: Option<Value>,
}

fn check_train_flags(a: &TrainArgs) -> Result<()> {
    if a.arch == Arch::Seq2seq && a.mode == Mode::Pair {
        return Err(UsageError("--arch seq2seq reads whole sequences and cannot use --mode pair".into()).into());
    }
    if a.arch == Arch::Seq2seq && a.kb.is_some() {
        return Err(UsageError("--kb pretraining needs --arch classifier".into()).into());
    }
    if a.kb.is_none() && a.pretrain_epochs > 0 {
        return Err(UsageError("--pretrain-epochs needs --kb".into()).into());
    }
    Ok(())
}

fn fit(a: &TrainArgs, train_c: Corpus, val_c: &Corpus) -> Result<Trained> {
    let mut cfg = model_config(&a.model, a.lr, a.seed, a.arch);
    cfg.input_mode = input_mode(a.mode);
    cfg.include_aux = a.aux.on();
    if a.balanced_loss.on() {
        cfg.loss_mode = LossMode::Weighted;
    }
    cfg.label_space = train_c.label_space.clone();
    let (train_c, undersample) = if a.undersample.on() {
        let u = model::undersample(&train_c, a.seed)?;
        info!("undersampling removed {} sequences", u.removed.len());
        let meta = u.corpus.meta.get("undersample").cloned();
        (u.corpus, meta)
    } else {
        (train_c, None)
    };
    if let Some(kb_path) = &a.kb {
        let kb_c = load_corpus(kb_path)?;
        let p = pretrain_finetune(
            &cfg,
            &kb_c,
            a.pretrain_epochs,
            &train_c,
            val_c,
            cfg.input_mode,
            cfg.include_aux,
        )?;
        return Ok(Trained {
            model: p.model,
            log: p.finetune_log,
            pretrain_log: Some(p.pretrain_log),
            undersample,
        });
    }
    let (model, log) = match a.arch {
        Arch::Classifier => model::train(&cfg, &train_c, val_c, None, cfg.input_mode, cfg.include_aux)?,
        Arch::Seq2seq => train_seq2seq(&cfg, &train_c, val_c)?,
    };
    Ok(Trained {
        model,
        log,
        pretrain_log: None,
        undersample,
    })
}

fn train(a: &TrainArgs) -> Result<()> {
    check_train_flags(a)?;
    let train_c = load_corpus(&a.train)?;
    let val_c = load_corpus(&a.val)?;
    let mut data = serde_json::Map::new();
    data.insert("train".into(), data_entry(&a.train)?);
    data.insert("val".into(), data_entry(&a.val)?);
    if let Some(kb_path) = &a.kb {
        data.insert("kb".into(), data_entry(kb_path)?);
    }
    let mut t = fit(a, train_c, &val_c)?;
    t.model.manifest = json!({
        "command": "train",
        "version": env!("CARGO_PKG_VERSION"),
        "flags": a,
        "seed": a.seed,
        "data": data,
        "undersample": t.undersample,
        "best_epoch": t.log.best_epoch,
    });
    write(&a.model_out, format::to_bytes(&t.model)?)?;
    if let Some(path) = &a.log_out {
        write_json(path, &json!({"train": t.log, "pretrain": t.pretrain_log}))?;
    }
    if let Some(best) = t.log.best() {
        info!("kept epoch {} (validation macro {:?})", best.epoch, best.val_macro);
    }
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let (name, predictions) = match (&a.model, a.baseline) {
        (Some(path), _) => {
            let m = format::from_bytes(&read_bytes(path)?).with_context(|| format!("in {}", path.display()))?;
            (path.display().to_string(), model::predict_corpus(&m, &corpus, a.beam)?)
        }
        (None, Some(b)) => {
            let train_path = a
                .train
                .as_ref()
                .ok_or_else(|| UsageError("--baseline needs --train".into()))?;
            let train_c = load_corpus(train_path)?;
            let predictions = match b {
                Baseline::Majority => majority_baseline(&train_c, &corpus)?,
                Baseline::Memorization => memorization_baseline(&train_c, &corpus)?,
            };
            (format!("{b:?}").to_lowercase(), predictions)
        }
        (None, None) => return Err(UsageError("pass --model or --baseline".into()).into()),
    };
    let report = evaluate(&predictions, &corpus)?;
    write_json(&a.out, &json!({"name": name, "report": report}))?;
    Ok(())
}

fn reformulate(a: &ReformulateArgs) -> Result<()> {
    let bytes = read_bytes(&a.kb)?;
    let records: Vec<KbRecord> =
        read_jsonl(BufReader::new(bytes.as_slice())).with_context(|| format!("in {}", a.kb.display()))?;
    let mapping = match a.map {
        MapMode::Keep3 => LabelMapping::Keep3,
        MapMode::Map4 => LabelMapping::MapTo4,
    };
    let (corpus, built) = kb::reformulate(&records, a.n, a.seed, mapping, &RuleExtractor)?;
    let reused = built.iter().filter(|b| b.intent_reused).count();
    if reused > 0 {
        info!("{reused} sequences reuse an intent sentence on both sides");
    }
    write(&a.out, corpus_to_string(&corpus))
}

fn synth_cmd(a: &SynthArgs) -> Result<()> {
    let bytes = read_bytes(&a.spec)?;
    let mut spec: SynthSpec = serde_json::from_slice(&bytes)
        .map_err(SsrError::from)
        .with_context(|| format!("in {}", a.spec.display()))?;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let corpus = synth::generate(&spec)?;
    write(&a.out, corpus_to_string(&corpus))?;
    if let Some(dir) = &a.split_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let parts = synth::split(&corpus);
        for (name, part) in [("train", &parts.train), ("val", &parts.val), ("test", &parts.test)] {
            write(&dir.join(format!("{name}.jsonl")), corpus_to_string(part))?;
        }
    }
    Ok(())
}

/// Token dump lines: one per relation instance, or one per sequence in
/// context mode.
pub fn token_dumps(corpus: &Corpus, mode: DumpMode, aux: bool, markers: Markers) -> Result<Vec<TokenDump>> {
    let style = match markers {
        Markers::Single => MarkerStyle::Single,
        Markers::Double => MarkerStyle::Double,
    };
    let mut out = Vec::new();
    for seq in &corpus.sequences {
        if mode == DumpMode::Context {
            out.push(TokenDump::new(&seq.id, &serialize_context(seq, aux)?));
            continue;
        }
        for r in &seq.relations {
            let ts = match mode {
                DumpMode::Pair => serialize_pair(seq, r.target_index, aux)?,
                _ => serialize_full_styled(seq, r.target_index, aux, style)?,
            };
            out.push(TokenDump::new(&seq.id, &ts));
        }
    }
    Ok(out)
}

fn serialize(a: &SerializeArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let dumps = token_dumps(&corpus, a.mode, a.aux.on(), a.markers)?;
    let mut buf = Vec::new();
    write_jsonl(&dumps, &mut buf)?;
    write(&a.out, buf)
}

#[derive(Serialize)]
struct SweepRun {
    lr: f64,
    name: String,
    report: EvalReport,
    log: TrainLog,
}

fn sweep(a: &SweepArgs) -> Result<()> {
    let train_c = load_corpus(&a.train)?;
    let val_c = load_corpus(&a.val)?;
    let test_c = match &a.test {
        Some(p) => load_corpus(p)?,
        None => val_c.clone(),
    };
    let mut runs = Vec::new();
    for &lr in &a.lrs {
        let mut cfg = model_config(&a.model, lr, a.seed, Arch::Classifier);
        cfg.label_space = train_c.label_space.clone();
        if a.balanced_loss.on() {
            cfg.loss_mode = LossMode::Weighted;
        }
        let (m, log) = model::train(&cfg, &train_c, &val_c, None, input_mode(a.mode), a.aux.on())?;
        let report = evaluate(&model::predict_corpus(&m, &test_c, 1)?, &test_c)?;
        info!("lr {lr}: macro {:.4}", report.macro_top1);
        runs.push(SweepRun {
            lr,
            name: format!("lr={lr:e}"),
            report,
            log,
        });
    }
    let table = compare(
        &runs
            .iter()
            .map(|r| (r.name.clone(), r.report.clone()))
            .collect::<Vec<_>>(),
    );
    print!("{}", table.render());
    write_json(&a.out, &json!({"flags": a, "table": table, "runs": runs}))?;
    if let Some(path) = &a.csv {
        let mut csv = String::from("lr,epoch,train_loss,val_macro,dominant_fraction\n");
        for r in &runs {
            for e in &r.log.epochs {
                let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    r.lr,
                    e.epoch,
                    e.train_loss,
                    opt(e.val_macro),
                    opt(e.dominant_fraction)
                ));
            }
        }
        write(path, csv)?;
    }
    Ok(())
}
