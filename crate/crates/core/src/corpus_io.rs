//! JSON Lines corpus files.
//!
//! An optional header line `{"label_space": ..., "meta": {...}}` is followed
//! by one sequence per line:
//!
//! ```json
//! {"id":"v1","events":[{"verb":"run","args":[{"role":"Arg0","entity":"a man"}]}, ...],
//!  "relations":[{"target":1,"label":"Enables"}]}
//! ```
//!
//! A record may carry its own `"label_space"`; it must agree with the header.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SsrError};
use crate::event::{validate_sequence, Corpus, Event, EventSequence, LabelSpace, RelationInstance, RelationLabel};

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    label_space: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    meta: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RelationLine {
    target: usize,
    label: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordLine {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label_space: Option<String>,
    events: Vec<Event>,
    #[serde(default)]
    relations: Vec<RelationLine>,
}

fn schema(line: usize, code: &str, message: impl Into<String>) -> SsrError {
    SsrError::Schema {
        line,
        code: code.to_string(),
        message: message.into(),
    }
}

pub fn read_corpus_file(path: impl AsRef<Path>) -> Result<Corpus> {
    read_corpus(BufReader::new(File::open(path)?))
}

/// Parses and validates a corpus; the first problem found is reported with
/// its 1-based line number.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Corpus> {
    let mut space: Option<LabelSpace> = None;
    let mut meta = BTreeMap::new();
    let mut sequences = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| schema(lineno, "JSON", e.to_string()))?;
        if value.get("id").is_none() {
            if !sequences.is_empty() || space.is_some() {
                return Err(schema(lineno, "SCHEMA", "header must be the first line"));
            }
            let header: Header = serde_json::from_value(value).map_err(|e| schema(lineno, "SCHEMA", e.to_string()))?;
            space = Some(
                LabelSpace::by_name(&header.label_space).map_err(|e| schema(lineno, "LABEL_SPACE", e.to_string()))?,
            );
            meta = header.meta;
            continue;
        }
        let record: RecordLine = serde_json::from_value(value).map_err(|e| schema(lineno, "SCHEMA", e.to_string()))?;
        if let Some(name) = &record.label_space {
            let declared = LabelSpace::by_name(name).map_err(|e| schema(lineno, "LABEL_SPACE", e.to_string()))?;
            match &space {
                Some(s) if *s != declared => {
                    return Err(schema(
                        lineno,
                        "LABEL_SPACE",
                        format!("record declares {name}, corpus is {}", s.name()),
                    ))
                }
                Some(_) => {}
                None => space = Some(declared),
            }
        }
        let space = space.get_or_insert_with(LabelSpace::vidsitu);
        let mut seq = EventSequence::new(record.id, record.events);
        for rel in record.relations {
            let label: RelationLabel = rel
                .label
                .parse()
                .map_err(|e: SsrError| schema(lineno, "UNKNOWN_LABEL", e.to_string()))?;
            seq.relations.push(RelationInstance {
                sequence_id: seq.id.clone(),
                target_index: rel.target,
                label,
            });
        }
        if let Some(v) = validate_sequence(&seq, space).violations.first() {
            return Err(schema(
                lineno,
                v.code.as_str(),
                format!("{}: {}", v.location, v.message),
            ));
        }
        if !ids.insert(seq.id.clone()) {
            return Err(schema(
                lineno,
                "DUPLICATE_SEQUENCE_ID",
                format!("sequence id {:?} repeats", seq.id),
            ));
        }
        sequences.push(seq);
    }
    Ok(Corpus {
        label_space: space.unwrap_or_else(LabelSpace::vidsitu),
        sequences,
        meta,
    })
}

pub fn write_corpus_file(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_corpus(corpus, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_corpus<W: Write>(corpus: &Corpus, w: &mut W) -> Result<()> {
    let header = Header {
        label_space: corpus.label_space.name().to_string(),
        meta: corpus.meta.clone(),
    };
    serde_json::to_writer(&mut *w, &header)?;
    writeln!(w)?;
    for seq in &corpus.sequences {
        let record = RecordLine {
            id: seq.id.clone(),
            label_space: None,
            events: seq.events.clone(),
            relations: seq
                .relations
                .iter()
                .map(|r| RelationLine {
                    target: r.target_index,
                    label: r.label.name().to_string(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut *w, &record)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn corpus_to_string(corpus: &Corpus) -> String {
    let mut buf = Vec::new();
    write_corpus(corpus, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("serde_json writes UTF-8")
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| schema(i + 1, "SCHEMA", e.to_string()))?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize, W: Write>(items: &[T], w: &mut W) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut *w, item)?;
        writeln!(w)?;
    }
    Ok(())
}
