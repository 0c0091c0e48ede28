//! Token serialization of events and event sequences, and the vocabulary
//! that maps tokens to ids.
//!
//! An event becomes `[<EVT>, verb, <ROLE:code>, entity tokens..., ...]`.
//! Entities are lowercased and split on whitespace. Full-sequence inputs put
//! a marker token immediately before the two events whose relation is asked
//! for.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SsrError};
use crate::event::{Argument, ArgumentRole, Corpus, Event, EventSequence, CENTER_INDEX, SEQUENCE_LEN, TARGET_INDICES};

pub const PAD: &str = "<PAD>";
pub const UNK: &str = "<UNK>";
pub const EVT: &str = "<EVT>";
pub const MARK: &str = "<*>";
pub const MARK_CENTER: &str = "<**>";

const ROLE_PREFIX: &str = "<ROLE:";

/// Roles that always receive a token so that vocabularies built from
/// different corpora agree on them.
const STANDARD_ROLES: [&str; 11] = [
    "Arg0", "Arg1", "Arg2", "Arg3", "Arg4", "Arg5", "ADir", "ALoc", "AMnr", "APrp", "AScn",
];

pub fn role_token(role: &ArgumentRole) -> String {
    format!("{ROLE_PREFIX}{}>", role.code())
}

fn role_from_token(token: &str) -> Option<&str> {
    token.strip_prefix(ROLE_PREFIX)?.strip_suffix('>')
}

fn is_marker(token: &str) -> bool {
    token == MARK || token == MARK_CENTER
}

fn is_structural(token: &str) -> bool {
    token == EVT || is_marker(token) || token == PAD || token == UNK || role_from_token(token).is_some()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenMode {
    /// Target event followed by the center event, no markers.
    Pair,
    /// All five events with markers before the target and the center.
    Full,
    /// All five events without markers; the input of the sequence decoder.
    Context,
}

impl TokenMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenMode::Pair => "pair",
            TokenMode::Full => "full",
            TokenMode::Context => "context",
        }
    }
}

/// How the two marked events are told apart in full mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarkerStyle {
    /// The same `<*>` token before both events; order is carried by position.
    #[default]
    Single,
    /// `<*>` before the target event and `<**>` before the center event.
    Double,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    pub marker_positions: Vec<usize>,
    pub mode: TokenMode,
    /// 1-based target event; 0 in context mode, which has no single target.
    pub target_index: usize,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// One line of a token dump file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenDump {
    pub id: String,
    pub target: usize,
    pub mode: TokenMode,
    pub tokens: Vec<String>,
}

impl TokenDump {
    pub fn new(id: &str, ts: &TokenSequence) -> Self {
        TokenDump {
            id: id.to_string(),
            target: ts.target_index,
            mode: ts.mode,
            tokens: ts.tokens.clone(),
        }
    }
}

pub fn serialize_event(e: &Event, include_aux: bool) -> Vec<String> {
    let mut out = vec![EVT.to_string(), e.verb.to_lowercase()];
    let mut args: Vec<&Argument> = e.args.iter().filter(|a| include_aux || a.role.is_base()).collect();
    args.sort_by(|a, b| a.role.cmp(&b.role));
    for arg in args {
        out.push(role_token(&arg.role));
        out.extend(arg.entity.split_whitespace().map(str::to_lowercase));
    }
    out
}

fn check_target(target_index: usize) -> Result<()> {
    if TARGET_INDICES.contains(&target_index) {
        Ok(())
    } else {
        Err(SsrError::TargetIndex(target_index))
    }
}

pub fn serialize_pair(seq: &EventSequence, target_index: usize, include_aux: bool) -> Result<TokenSequence> {
    check_target(target_index)?;
    let mut tokens = serialize_event(seq.event(target_index)?, include_aux);
    tokens.extend(serialize_event(seq.center()?, include_aux));
    Ok(TokenSequence {
        tokens,
        marker_positions: Vec::new(),
        mode: TokenMode::Pair,
        target_index,
    })
}

pub fn serialize_full(seq: &EventSequence, target_index: usize, include_aux: bool) -> Result<TokenSequence> {
    serialize_full_styled(seq, target_index, include_aux, MarkerStyle::Single)
}

pub fn serialize_full_styled(
    seq: &EventSequence,
    target_index: usize,
    include_aux: bool,
    style: MarkerStyle,
) -> Result<TokenSequence> {
    check_target(target_index)?;
    if seq.events.len() != SEQUENCE_LEN {
        return Err(SsrError::TargetIndex(target_index));
    }
    let mut tokens = Vec::new();
    let mut marker_positions = Vec::with_capacity(2);
    for (i, event) in seq.events.iter().enumerate() {
        let index = i + 1;
        if index == target_index || index == CENTER_INDEX {
            marker_positions.push(tokens.len());
            let marker = match (style, index == CENTER_INDEX) {
                (MarkerStyle::Double, true) => MARK_CENTER,
                _ => MARK,
            };
            tokens.push(marker.to_string());
        }
        tokens.extend(serialize_event(event, include_aux));
    }
    Ok(TokenSequence {
        tokens,
        marker_positions,
        mode: TokenMode::Full,
        target_index,
    })
}

pub fn serialize_context(seq: &EventSequence, include_aux: bool) -> Result<TokenSequence> {
    if seq.events.len() != SEQUENCE_LEN {
        return Err(SsrError::Param(format!(
            "sequence {} has {} events",
            seq.id,
            seq.events.len()
        )));
    }
    let tokens = seq
        .events
        .iter()
        .flat_map(|e| serialize_event(e, include_aux))
        .collect();
    Ok(TokenSequence {
        tokens,
        marker_positions: Vec::new(),
        mode: TokenMode::Context,
        target_index: 0,
    })
}

fn parse_error(offset: usize, message: impl Into<String>) -> SsrError {
    SsrError::Parse {
        offset,
        message: message.into(),
    }
}

/// Inverse of [`serialize_event`] with auxiliary arguments kept.
pub fn parse_event<S: AsRef<str>>(tokens: &[S]) -> Result<Event> {
    parse_event_at(tokens, 0)
}

fn parse_event_at<S: AsRef<str>>(tokens: &[S], base: usize) -> Result<Event> {
    let tok = |i: usize| tokens[i].as_ref();
    if tokens.is_empty() {
        return Err(parse_error(base, "empty token stream"));
    }
    if tok(0) != EVT {
        return Err(parse_error(base, format!("expected {EVT}, found {:?}", tok(0))));
    }
    if tokens.len() < 2 || is_structural(tok(1)) {
        return Err(parse_error(base + 1, "missing verb"));
    }
    let verb = tok(1).to_string();
    let mut args: Vec<Argument> = Vec::new();
    let mut i = 2;
    while i < tokens.len() {
        let Some(code) = role_from_token(tok(i)) else {
            return Err(parse_error(
                base + i,
                format!("expected a role token, found {:?}", tok(i)),
            ));
        };
        let role = ArgumentRole::new(code).map_err(|_| parse_error(base + i, "malformed role token"))?;
        let start = i + 1;
        let mut end = start;
        while end < tokens.len() && !is_structural(tok(end)) {
            end += 1;
        }
        if end == start {
            return Err(parse_error(base + i, format!("role {code} has no entity tokens")));
        }
        let entity = tokens[start..end]
            .iter()
            .map(AsRef::as_ref)
            .collect::<Vec<_>>()
            .join(" ");
        args.push(Argument { role, entity });
        i = end;
    }
    Ok(Event { verb, args })
}

/// Splits a serialized sequence (any mode) back into events, skipping
/// marker tokens.
pub fn parse_events<S: AsRef<str>>(tokens: &[S]) -> Result<Vec<Event>> {
    event_spans(tokens)?
        .into_iter()
        .map(|(start, end)| parse_event_at(&tokens[start..end], start))
        .collect()
}

/// Half-open token ranges of each event, starting at its `<EVT>` token.
pub fn event_spans<S: AsRef<str>>(tokens: &[S]) -> Result<Vec<(usize, usize)>> {
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    for (i, t) in tokens.iter().enumerate() {
        let t = t.as_ref();
        if t == EVT || is_marker(t) {
            if let Some(s) = start.take() {
                spans.push((s, i));
            }
            if t == EVT {
                start = Some(i);
            }
        } else if start.is_none() {
            return Err(parse_error(i, format!("token {t:?} outside any event")));
        }
    }
    if let Some(s) = start {
        spans.push((s, tokens.len()));
    }
    Ok(spans)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    num_reserved: usize,
}

impl Vocabulary {
    pub const PAD_ID: u32 = 0;
    pub const UNK_ID: u32 = 1;
    pub const EVT_ID: u32 = 2;
    pub const MARK_ID: u32 = 3;
    pub const MARK_CENTER_ID: u32 = 4;

    fn reserved(extra_roles: &BTreeSet<ArgumentRole>) -> Vec<String> {
        let mut roles: BTreeSet<ArgumentRole> = STANDARD_ROLES
            .iter()
            .map(|c| ArgumentRole::new(*c).expect("standard role"))
            .collect();
        roles.extend(extra_roles.iter().cloned());
        let mut out: Vec<String> = [PAD, UNK, EVT, MARK, MARK_CENTER]
            .iter()
            .map(|s| s.to_string())
            .collect();
        out.extend(roles.iter().map(role_token));
        out
    }

    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let fixed = [PAD, UNK, EVT, MARK, MARK_CENTER];
        if tokens.len() < fixed.len() || tokens.iter().zip(fixed).any(|(t, f)| t != f) {
            return Err(SsrError::VocabMismatch(
                "reserved tokens missing or out of place".into(),
            ));
        }
        let num_reserved = tokens.iter().take_while(|t| is_structural(t)).count();
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(SsrError::VocabMismatch(format!("token {t:?} repeats")));
            }
        }
        Ok(Vocabulary {
            tokens,
            index,
            num_reserved,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn num_reserved(&self) -> usize {
        self.num_reserved
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(Self::UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }
}

/// Builds a vocabulary from every event of the given corpora.
///
/// Reserved tokens come first. Corpus tokens seen at least `min_count` times
/// follow, ordered by descending frequency and then lexicographically.
pub fn build_vocab(corpus: &Corpus, min_count: usize) -> Vocabulary {
    build_vocab_multi(&[corpus], min_count)
}

pub fn build_vocab_multi(corpora: &[&Corpus], min_count: usize) -> Vocabulary {
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut roles = BTreeSet::new();
    for corpus in corpora {
        for event in corpus.sequences.iter().flat_map(|s| s.events.iter()) {
            roles.extend(event.args.iter().map(|a| a.role.clone()));
            for t in serialize_event(event, true) {
                if !is_structural(&t) {
                    *counts.entry(t).or_default() += 1;
                }
            }
        }
    }
    let mut observed: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count.max(1)).collect();
    observed.sort_by(|(ta, ca), (tb, cb)| cb.cmp(ca).then_with(|| ta.cmp(tb)));
    let mut tokens = Vocabulary::reserved(&roles);
    let num_reserved = tokens.len();
    tokens.extend(observed.into_iter().map(|(t, _)| t));
    let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
    Vocabulary {
        tokens,
        index,
        num_reserved,
    }
}

struct Segment {
    marker: Option<String>,
    head: [String; 2],
    args: Vec<(String, Vec<String>)>,
}

impl Segment {
    fn len(&self) -> usize {
        self.marker.is_some() as usize + 2 + self.args.iter().map(|(_, e)| 1 + e.len()).sum::<usize>()
    }

    /// Entity tokens that may be dropped; one token per argument is kept.
    fn trimmable(&self) -> usize {
        self.args.iter().map(|(_, e)| e.len().saturating_sub(1)).sum()
    }

    fn trim_one(&mut self) {
        let longest = self
            .args
            .iter_mut()
            .rev()
            .max_by_key(|(_, e)| e.len())
            .expect("trimmable segment has arguments");
        longest.1.pop();
    }

    fn push_into(self, out: &mut Vec<String>) {
        out.extend(self.marker);
        out.extend(self.head);
        for (role, entity) in self.args {
            out.push(role);
            out.extend(entity);
        }
    }
}

fn segments(ts: &TokenSequence) -> Result<Vec<Segment>> {
    let mut out = Vec::new();
    let mut pending_marker = None;
    let spans = event_spans(&ts.tokens)?;
    let mut cursor = 0;
    for (start, end) in spans {
        for t in &ts.tokens[cursor..start] {
            if is_marker(t) {
                pending_marker = Some(t.clone());
            }
        }
        cursor = end;
        let toks = &ts.tokens[start..end];
        if toks.len() < 2 {
            return Err(parse_error(start, "event without verb"));
        }
        let mut args: Vec<(String, Vec<String>)> = Vec::new();
        for t in &toks[2..] {
            if role_from_token(t).is_some() {
                args.push((t.clone(), Vec::new()));
            } else if let Some(last) = args.last_mut() {
                last.1.push(t.clone());
            } else {
                return Err(parse_error(start, "entity token before any role"));
            }
        }
        out.push(Segment {
            marker: pending_marker.take(),
            head: [toks[0].clone(), toks[1].clone()],
            args,
        });
    }
    Ok(out)
}

/// Maps a token sequence to exactly `max_len` ids.
///
/// Over-long inputs are right-truncated. When that would cut a marker or the
/// verb of a marked event, entity tokens of the longest earlier events are
/// trimmed first so that the markers survive.
pub fn encode(ts: &TokenSequence, vocab: &Vocabulary, max_len: usize) -> Result<Vec<u32>> {
    if max_len < 2 {
        return Err(SsrError::Param(format!("max_len must be at least 2, got {max_len}")));
    }
    let tokens = fit_tokens(ts, max_len)?;
    let mut ids: Vec<u32> = tokens.iter().map(|t| vocab.id_or_unk(t)).collect();
    ids.resize(max_len, Vocabulary::PAD_ID);
    Ok(ids)
}

/// The tokens that [`encode`] keeps, before id mapping and padding.
///
/// Protected events are the marked ones in full mode and every event in
/// context mode; each keeps its marker, `<EVT>` and verb.
pub fn fit_tokens(ts: &TokenSequence, max_len: usize) -> Result<Vec<String>> {
    if ts.tokens.len() <= max_len {
        return Ok(ts.tokens.clone());
    }
    let mut segs = segments(ts)?;
    let last_protected = match ts.mode {
        TokenMode::Pair => None,
        TokenMode::Full => segs.iter().rposition(|s| s.marker.is_some()),
        TokenMode::Context => segs.len().checked_sub(1),
    };
    let Some(last) = last_protected else {
        return Ok(ts.tokens[..max_len].to_vec());
    };
    let prefix_len = |segs: &[Segment]| {
        segs[..last].iter().map(Segment::len).sum::<usize>() + segs[last].marker.is_some() as usize + 2
    };
    if prefix_len(&segs) <= max_len {
        return Ok(ts.tokens[..max_len].to_vec());
    }
    let min_required = prefix_len(&segs) - segs[..last].iter().map(Segment::trimmable).sum::<usize>();
    if min_required > max_len {
        return Err(SsrError::Capacity {
            max_len,
            required: min_required,
        });
    }
    while prefix_len(&segs) > max_len {
        let (_, victim) = segs[..last]
            .iter_mut()
            .enumerate()
            .filter(|(_, s)| s.trimmable() > 0)
            .max_by(|(ia, a), (ib, b)| a.len().cmp(&b.len()).then_with(|| ib.cmp(ia)))
            .expect("min_required check guarantees a trimmable segment");
        victim.trim_one();
    }
    let mut out = Vec::with_capacity(ts.tokens.len());
    for s in segs {
        s.push_into(&mut out);
    }
    out.truncate(max_len);
    Ok(out)
}
