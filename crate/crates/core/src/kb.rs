//! Knowledge-base reformulation: commonsense records with a current event
//! and Before / Intent / After inference sentences become five-event
//! sequences whose relation labels come from the source list of each
//! sampled sentence.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SsrError};
use crate::event::{ArgumentRole, Corpus, Event, EventSequence, LabelSpace, RelationLabel, RoleKind};
use crate::model::params::fnv1a;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbRecord {
    pub id: String,
    /// The current event sentence.
    #[serde(rename = "event")]
    pub current: String,
    #[serde(default)]
    pub before: Vec<String>,
    #[serde(default)]
    pub intent: Vec<String>,
    #[serde(default)]
    pub after: Vec<String>,
}

impl KbRecord {
    /// Sentences of the list named by `label`.
    pub fn list(&self, label: RelationLabel) -> &[String] {
        match label {
            RelationLabel::Before => &self.before,
            RelationLabel::Intent => &self.intent,
            RelationLabel::After => &self.after,
            _ => &[],
        }
    }
}

const UNITS: [&str; 10] = [
    "", "first", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth", "ninth",
];
const TEENS: [&str; 10] = [
    "tenth",
    "eleventh",
    "twelfth",
    "thirteenth",
    "fourteenth",
    "fifteenth",
    "sixteenth",
    "seventeenth",
    "eighteenth",
    "nineteenth",
];
const TENS: [&str; 10] = [
    "", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety",
];
const TENS_ORDINAL: [&str; 10] = [
    "",
    "",
    "twentieth",
    "thirtieth",
    "fortieth",
    "fiftieth",
    "sixtieth",
    "seventieth",
    "eightieth",
    "ninetieth",
];

/// English ordinal word for 1..=99.
pub fn ordinal_word(n: u32) -> Option<String> {
    let n = n as usize;
    match n {
        1..=9 => Some(UNITS[n].to_string()),
        10..=19 => Some(TEENS[n - 10].to_string()),
        20..=99 if n.is_multiple_of(10) => Some(TENS_ORDINAL[n / 10].to_string()),
        20..=99 => Some(format!("{}-{}", TENS[n / 10], UNITS[n % 10])),
        _ => None,
    }
}

static PERSON_TAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bperson\s*(\d+)\b").expect("valid regex"));
static BARE_NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(\d+)\b").expect("valid regex"));

fn replace_tag(caps: &Captures<'_>) -> String {
    caps[1]
        .parse::<u32>()
        .ok()
        .and_then(ordinal_word)
        .map_or_else(|| caps[0].to_string(), |w| format!("{w} person"))
}

/// Rewrites numbered person references ("person 1", "Person2", a bare "3")
/// as "first person", "second person", "third person". Numbers outside
/// 1..=99 are left alone.
pub fn normalize_person_tags(sentence: &str) -> String {
    let tagged = PERSON_TAG.replace_all(sentence, replace_tag);
    BARE_NUMBER.replace_all(&tagged, replace_tag).into_owned()
}

/// Turns a sentence into an event.
pub trait SsrExtractor {
    fn extract(&self, sentence: &str) -> Result<Event>;
}

/// Ordered heuristics standing in for a full semantic parser.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleExtractor;

const DETERMINERS: &[&str] = &[
    "the", "a", "an", "this", "that", "these", "those", "his", "her", "their", "its", "my", "your", "our", "some",
    "another", "each", "every",
];
const PRONOUNS: &[&str] = &[
    "he",
    "she",
    "they",
    "it",
    "i",
    "you",
    "we",
    "someone",
    "somebody",
    "everyone",
    "everybody",
    "people",
    "person",
];
const AUXILIARIES: &[&str] = &[
    "is", "are", "was", "were", "be", "been", "being", "am", "has", "have", "had", "will", "would", "can", "could",
    "should", "may", "might", "must", "do", "does", "did", "not", "to", "going", "gonna", "just", "also", "still",
    "then", "already",
];
const CATENATIVES: &[&str] = &[
    "want", "wants", "wanted", "need", "needs", "needed", "try", "tries", "tried", "begin", "begins", "began", "start",
    "starts", "started",
];
const STOPWORDS: &[&str] = &[
    "the", "a", "an", "to", "of", "and", "or", "in", "on", "at", "is", "are", "was", "were", "be", "been", "he", "she",
    "they", "it", "i", "you", "we", "his", "her", "their", "its", "this", "that", "with", "for", "from", "by",
];
const IRREGULAR: &[(&str, &str)] = &[
    ("went", "go"),
    ("gone", "go"),
    ("goes", "go"),
    ("ran", "run"),
    ("saw", "see"),
    ("seen", "see"),
    ("took", "take"),
    ("taken", "take"),
    ("made", "make"),
    ("came", "come"),
    ("got", "get"),
    ("gave", "give"),
    ("given", "give"),
    ("sat", "sit"),
    ("stood", "stand"),
    ("held", "hold"),
    ("left", "leave"),
    ("ate", "eat"),
    ("told", "tell"),
    ("said", "say"),
    ("thought", "think"),
    ("felt", "feel"),
    ("found", "find"),
    ("bought", "buy"),
    ("brought", "bring"),
    ("wore", "wear"),
    ("threw", "throw"),
    ("fell", "fall"),
    ("met", "meet"),
    ("put", "put"),
    ("lay", "lie"),
];
/// Stems that regain a final `e` after `-ing` / `-ed` is stripped.
const E_STEMS: &[&str] = &[
    "mak", "tak", "hav", "com", "giv", "leav", "us", "driv", "smil", "danc", "mov", "clos", "writ", "rid", "slid",
    "serv", "chas", "los", "wav", "receiv", "believ", "argu", "escap", "shar", "car", "prepar", "arriv", "announc",
    "pac", "rais", "plac", "stor", "wip", "wast", "hid", "bak", "skat", "shak", "tas", "practic", "notic", "chang",
    "charg", "judg", "welcom", "invit", "hat", "lik", "lov", "liv",
];
const NO_UNDOUBLE: &[char] = &['l', 's', 'z', 'f'];

const fn preposition_role(word: &str) -> Option<&'static str> {
    match word.as_bytes() {
        b"away" | b"to" | b"toward" | b"towards" | b"into" | b"from" | b"onto" | b"out" | b"across" | b"through" => {
            Some("ADir")
        }
        b"in" | b"at" | b"on" | b"inside" | b"near" | b"outside" | b"behind" => Some("AScn"),
        b"by" | b"with" => Some("AMnr"),
        b"for" => Some("APrp"),
        _ => None,
    }
}

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u')
}

fn undouble(stem: &str) -> String {
    let chars: Vec<char> = stem.chars().collect();
    let n = chars.len();
    if n >= 3 && chars[n - 1] == chars[n - 2] && !is_vowel(chars[n - 1]) && !NO_UNDOUBLE.contains(&chars[n - 1]) {
        chars[..n - 1].iter().collect()
    } else {
        stem.to_string()
    }
}

fn restore_e(stem: String) -> String {
    if E_STEMS.contains(&stem.as_str()) {
        stem + "e"
    } else {
        stem
    }
}

/// Base form by a small suffix-strip table.
pub fn lemmatize(word: &str) -> String {
    if let Some((_, base)) = IRREGULAR.iter().find(|(w, _)| *w == word) {
        return base.to_string();
    }
    let n = word.len();
    if n > 4 && word.ends_with("ing") {
        return restore_e(undouble(&word[..n - 3]));
    }
    if n > 4 && word.ends_with("ied") {
        return format!("{}y", &word[..n - 3]);
    }
    if n > 3 && word.ends_with("ed") {
        return restore_e(undouble(&word[..n - 2]));
    }
    if n > 3 && word.ends_with("ies") {
        return format!("{}y", &word[..n - 3]);
    }
    if n > 3 && ["sses", "shes", "ches", "xes", "zes"].iter().any(|s| word.ends_with(s)) {
        return word[..n - 2].to_string();
    }
    if n > 2 && word.ends_with('s') && !word.ends_with("ss") && !word.ends_with("us") {
        return word[..n - 1].to_string();
    }
    word.to_string()
}

fn tokens(sentence: &str) -> Vec<String> {
    sentence
        .split_whitespace()
        .map(|t| {
            t.chars()
                .filter(|c| c.is_alphanumeric() || *c == '\'' || *c == '-')
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

fn is_ordinal(word: &str) -> bool {
    (1..=99).any(|n| ordinal_word(n).as_deref() == Some(word))
}

fn looks_verbal(word: &str) -> bool {
    AUXILIARIES.contains(&word)
        || CATENATIVES.contains(&word)
        || IRREGULAR.iter().any(|(w, _)| *w == word)
        || (word.len() > 4 && (word.ends_with("ing") || word.ends_with("ed")))
        || (word.len() > 3 && word.ends_with('s') && !word.ends_with("ss"))
}

/// Length of the subject noun phrase at the start of `toks`.
fn subject_len(toks: &[String]) -> usize {
    let first = toks[0].as_str();
    if toks.len() >= 2 && is_ordinal(first) && toks[1] == "person" {
        return 2;
    }
    if PRONOUNS.contains(&first) {
        return 1;
    }
    if DETERMINERS.contains(&first) {
        let mut end = 1;
        while end < toks.len() && end < 4 && (end == 1 || !looks_verbal(&toks[end])) {
            end += 1;
        }
        return end;
    }
    0
}

impl SsrExtractor for RuleExtractor {
    fn extract(&self, sentence: &str) -> Result<Event> {
        let toks = tokens(&normalize_person_tags(sentence));
        if toks.is_empty() {
            return Err(SsrError::Parse {
                offset: 0,
                message: "empty sentence".into(),
            });
        }
        let subj = subject_len(&toks);
        let mut i = subj;
        while i < toks.len() {
            let w = toks[i].as_str();
            let catenative = CATENATIVES.contains(&w) && toks.get(i + 1).is_some_and(|t| t == "to");
            if AUXILIARIES.contains(&w) || catenative {
                i += 1;
            } else {
                break;
            }
        }
        if i >= toks.len() || preposition_role(&toks[i]).is_some() || DETERMINERS.contains(&toks[i].as_str()) {
            let verb = toks
                .iter()
                .find(|t| !STOPWORDS.contains(&t.as_str()))
                .unwrap_or(&toks[0]);
            return Ok(Event::verb_only(lemmatize(verb)));
        }
        let verb = lemmatize(&toks[i]);
        let mut args: BTreeMap<ArgumentRole, Vec<String>> = BTreeMap::new();
        if subj > 0 {
            args.insert(ArgumentRole::new("Arg0")?, toks[..subj].to_vec());
        }
        let mut current: Option<ArgumentRole> = None;
        let mut object = Vec::new();
        for (k, w) in toks[i + 1..].iter().enumerate() {
            let prev_is_prep = k > 0 && preposition_role(&toks[i + k]).is_some();
            let role = if w.len() > 3 && w.ends_with("ly") {
                Some("AMnr")
            } else {
                preposition_role(w)
            };
            match role {
                Some(code) if !prev_is_prep => {
                    let role = ArgumentRole::new(code)?;
                    args.entry(role.clone()).or_default().push(w.clone());
                    current = Some(role);
                }
                _ => match &current {
                    Some(role) => args.get_mut(role).expect("open phrase").push(w.clone()),
                    None => object.push(w.clone()),
                },
            }
        }
        if !object.is_empty() {
            args.insert(ArgumentRole::new("Arg1")?, object);
        }
        Ok(Event::new(verb, args.into_iter().map(|(r, ws)| (r, ws.join(" "))).collect()).normalized())
    }
}

/// [`RuleExtractor`] applied to one sentence.
pub fn extract_ssr(sentence: &str) -> Result<Event> {
    RuleExtractor.extract(sentence)
}

/// Where a sampled target event came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Source {
    pub list: RelationLabel,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KbSequence {
    pub sequence: EventSequence,
    /// Sources of events 1, 2, 4 and 5.
    pub sources: [Source; 4],
    /// An intent sentence appears on both sides of the center.
    pub intent_reused: bool,
}

fn pool(rec: &KbRecord, lists: [RelationLabel; 2]) -> Vec<Source> {
    lists
        .iter()
        .flat_map(|&list| (0..rec.list(list).len()).map(move |index| Source { list, index }))
        .collect()
}

fn pick_two(pool: &[Source], rng: &mut ChaCha8Rng) -> [Source; 2] {
    let idx = sample(rng, pool.len(), 2);
    [pool[idx.index(0)], pool[idx.index(1)]]
}

/// Samples `n` sequences from one record: events 1 and 2 come from Before or
/// Intent, events 4 and 5 from Intent or After, the center is the current
/// event. An intent sentence is used on both sides only when the lists
/// leave no other choice; such sequences are flagged.
pub fn build_sequences(rec: &KbRecord, n: usize, seed: u64, extractor: &dyn SsrExtractor) -> Result<Vec<KbSequence>> {
    use RelationLabel::{After, Before, Intent};
    let left = pool(rec, [Before, Intent]);
    let right = pool(rec, [Intent, After]);
    if rec.current.trim().is_empty() || left.len() < 2 || right.len() < 2 {
        return Err(SsrError::InsufficientInferences { id: rec.id.clone() });
    }
    let center = extractor.extract(&rec.current)?;
    let need_left = 2usize.saturating_sub(rec.before.len());
    let need_right = 2usize.saturating_sub(rec.after.len());
    let disjoint_possible = need_left + need_right <= rec.intent.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(&rec.id));
    let mut cache: BTreeMap<(RelationLabel, usize), Event> = BTreeMap::new();
    let mut event_of = |s: Source| -> Result<Event> {
        if let Some(e) = cache.get(&(s.list, s.index)) {
            return Ok(e.clone());
        }
        let e = extractor.extract(&rec.list(s.list)[s.index])?;
        cache.insert((s.list, s.index), e.clone());
        Ok(e)
    };
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let (l, r) = loop {
            let l = pick_two(&left, &mut rng);
            let remaining: Vec<Source> = if disjoint_possible {
                right.iter().copied().filter(|s| !l.contains(s)).collect()
            } else {
                right.clone()
            };
            if remaining.len() >= 2 {
                break (l, pick_two(&remaining, &mut rng));
            }
        };
        let intent_reused = r.iter().any(|s| s.list == Intent && l.contains(s));
        let sources = [l[0], l[1], r[0], r[1]];
        let mut events = vec![
            event_of(l[0])?,
            event_of(l[1])?,
            center.clone(),
            event_of(r[0])?,
            event_of(r[1])?,
        ];
        for e in &mut events {
            *e = e.normalized();
        }
        let mut seq = EventSequence::new(format!("{}-{k}", rec.id), events);
        for (&t, s) in [1, 2, 4, 5].iter().zip(&sources) {
            seq = seq.with_relation(t, s.list);
        }
        out.push(KbSequence {
            sequence: seq,
            sources,
            intent_reused,
        });
    }
    Ok(out)
}

/// How knowledge-base labels enter the main label space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelMapping {
    /// Keep Before / Intent / After with a separate pretraining head.
    #[default]
    Keep3,
    /// Before to Enables, After to Causes, Intent to ReactionTo.
    MapTo4,
}

pub fn map_label(label: RelationLabel) -> Result<RelationLabel> {
    match label {
        RelationLabel::Before => Ok(RelationLabel::Enables),
        RelationLabel::After => Ok(RelationLabel::Causes),
        RelationLabel::Intent => Ok(RelationLabel::ReactionTo),
        other => Err(SsrError::LabelOutsideSpace {
            label: other,
            space: LabelSpace::KB_PRETRAIN.to_string(),
        }),
    }
}

pub fn map_labels(seq: &EventSequence, mode: LabelMapping) -> Result<EventSequence> {
    let kb = LabelSpace::kb_pretrain();
    for r in &seq.relations {
        kb.require(r.label)?;
    }
    match mode {
        LabelMapping::Keep3 => Ok(seq.clone()),
        LabelMapping::MapTo4 => {
            let mut out = seq.clone();
            for r in &mut out.relations {
                r.label = map_label(r.label)?;
            }
            Ok(out)
        }
    }
}

/// Reformulates every record into one corpus.
pub fn reformulate(
    records: &[KbRecord],
    n: usize,
    seed: u64,
    mode: LabelMapping,
    extractor: &dyn SsrExtractor,
) -> Result<(Corpus, Vec<KbSequence>)> {
    let mut built = Vec::new();
    for rec in records {
        built.extend(build_sequences(rec, n, seed, extractor)?);
    }
    let space = match mode {
        LabelMapping::Keep3 => LabelSpace::kb_pretrain(),
        LabelMapping::MapTo4 => LabelSpace::vidsitu(),
    };
    let sequences = built
        .iter()
        .map(|b| map_labels(&b.sequence, mode))
        .collect::<Result<Vec<_>>>()?;
    let mut corpus = Corpus::new(space, sequences);
    let reused: Vec<&str> = built
        .iter()
        .filter(|b| b.intent_reused)
        .map(|b| b.sequence.id.as_str())
        .collect();
    corpus.meta.insert(
        "reformulation".into(),
        serde_json::json!({
            "records": records.len(),
            "per_record": n,
            "seed": seed,
            "mapping": mode,
            "intent_reused": reused,
        }),
    );
    Ok((corpus, built))
}

/// Constraint violations of one reformulated sequence against its record:
/// targets 1 and 2 must come from Before or Intent, 4 and 5 from Intent or
/// After, each label must name its source list and each event must be the
/// extraction of its source sentence.
pub fn check_constraints(rec: &KbRecord, built: &KbSequence, extractor: &dyn SsrExtractor) -> Vec<String> {
    use RelationLabel::{After, Before, Intent};
    let mut problems = Vec::new();
    let seq = &built.sequence;
    if seq.events.len() != 5 || seq.relations.len() != 4 {
        problems.push(format!("{}: expected 5 events and 4 relations", seq.id));
        return problems;
    }
    for (k, (&t, src)) in [1usize, 2, 4, 5].iter().zip(&built.sources).enumerate() {
        let allowed = if k < 2 { [Before, Intent] } else { [Intent, After] };
        if !allowed.contains(&src.list) {
            problems.push(format!("{}: event {t} drawn from {}", seq.id, src.list));
        }
        match seq.relation_for(t) {
            Some(r) if r.label == src.list => {}
            _ => problems.push(format!(
                "{}: event {t} label does not match source {}",
                seq.id, src.list
            )),
        }
        match rec.list(src.list).get(src.index) {
            Some(sentence) => match extractor.extract(sentence) {
                Ok(e) if e.normalized() == seq.events[t - 1] => {}
                _ => problems.push(format!("{}: event {t} differs from its source sentence", seq.id)),
            },
            None => problems.push(format!("{}: event {t} source index out of range", seq.id)),
        }
    }
    match extractor.extract(&rec.current) {
        Ok(e) if e.normalized() == seq.events[2] => {}
        _ => problems.push(format!("{}: center differs from the current event", seq.id)),
    }
    if (built.sources[..2].contains(&built.sources[2]) || built.sources[..2].contains(&built.sources[3]))
        && !built.intent_reused
    {
        problems.push(format!("{}: reused intent not flagged", seq.id));
    }
    if built.sources[0] == built.sources[1] || built.sources[2] == built.sources[3] {
        problems.push(format!("{}: a sentence repeats on one side", seq.id));
    }
    problems
}

/// Whether `role` is one the extractor can emit.
pub fn is_extractor_role(role: &ArgumentRole) -> bool {
    match role.kind() {
        RoleKind::Base => matches!(role.code(), "Arg0" | "Arg1"),
        RoleKind::Auxiliary => matches!(role.code(), "ADir" | "AScn" | "AMnr" | "APrp"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn person_tags_become_ordinals() {
        assert_eq!(normalize_person_tags("person 1 runs away"), "first person runs away");
        assert_eq!(
            normalize_person_tags("Person2 hugs 3"),
            "second person hugs third person"
        );
        assert_eq!(normalize_person_tags("nobody here"), "nobody here");
        assert_eq!(normalize_person_tags("person 21 waves"), "twenty-first person waves");
        assert_eq!(normalize_person_tags("room 250"), "room 250");
    }

    #[test]
    fn ordinals() {
        assert_eq!(ordinal_word(12).unwrap(), "twelfth");
        assert_eq!(ordinal_word(40).unwrap(), "fortieth");
        assert_eq!(ordinal_word(99).unwrap(), "ninety-ninth");
        assert!(ordinal_word(0).is_none() && ordinal_word(100).is_none());
    }

    #[test]
    fn golden_extraction() {
        let e = extract_ssr("first person runs away from the explosion").unwrap();
        assert_eq!(e.verb, "run");
        assert_eq!(e.arg("Arg0"), Some("first person"));
        assert_eq!(e.arg("ADir"), Some("away from the explosion"));
        assert_eq!(e.args.len(), 2);

        let e = extract_ssr("Person1 is holding a cup in the kitchen").unwrap();
        assert_eq!(e.verb, "hold");
        assert_eq!(e.arg("Arg0"), Some("first person"));
        assert_eq!(e.arg("Arg1"), Some("a cup"));
        assert_eq!(e.arg("AScn"), Some("in the kitchen"));

        let e = extract_ssr("wanted to get the attention of person 2").unwrap();
        assert_eq!(e.verb, "get");
        assert_eq!(e.arg("Arg1"), Some("the attention of second person"));

        let e = extract_ssr("the old man stopped quickly").unwrap();
        assert_eq!(e.verb, "stop");
        assert_eq!(e.arg("Arg0"), Some("the old man"));
        assert_eq!(e.arg("AMnr"), Some("quickly"));
    }

    #[test]
    fn single_token_fallback() {
        assert_eq!(extract_ssr("smile").unwrap(), Event::verb_only("smile"));
        assert_eq!(extract_ssr("the").unwrap(), Event::verb_only("the"));
        assert!(matches!(extract_ssr("  "), Err(SsrError::Parse { .. })));
    }

    #[test]
    fn lemma_table() {
        for (w, l) in [
            ("runs", "run"),
            ("running", "run"),
            ("stopped", "stop"),
            ("tries", "try"),
            ("carried", "carry"),
            ("watches", "watch"),
            ("making", "make"),
            ("falling", "fall"),
            ("walked", "walk"),
            ("went", "go"),
        ] {
            assert_eq!(lemmatize(w), l, "{w}");
        }
    }

    fn record() -> KbRecord {
        KbRecord {
            id: "r1".into(),
            current: "person 1 opens the door".into(),
            before: vec!["walk to the house".into(), "find the key".into()],
            intent: vec!["get inside".into()],
            after: vec!["close the door".into(), "sit on the couch".into()],
        }
    }

    #[test]
    fn sequences_respect_sources() {
        let rec = record();
        let built = build_sequences(&rec, 20, 4, &RuleExtractor).unwrap();
        assert_eq!(built.len(), 20);
        for b in &built {
            assert!(check_constraints(&rec, b, &RuleExtractor).is_empty());
            assert!(!b.intent_reused);
            assert_eq!(b.sequence.events[2].verb, "open");
        }
        assert_eq!(built, build_sequences(&rec, 20, 4, &RuleExtractor).unwrap());
    }

    #[test]
    fn forced_intent_reuse_is_flagged() {
        let rec = KbRecord {
            before: vec![],
            intent: vec!["get inside".into(), "rest".into()],
            after: vec!["sleep".into()],
            ..record()
        };
        let built = build_sequences(&rec, 10, 0, &RuleExtractor).unwrap();
        assert!(built.iter().all(|b| b.intent_reused));
        for b in &built {
            assert!(check_constraints(&rec, b, &RuleExtractor).is_empty());
        }
    }

    #[test]
    fn too_few_inferences() {
        let rec = KbRecord {
            before: vec![],
            intent: vec!["x".into()],
            ..record()
        };
        assert!(matches!(
            build_sequences(&rec, 1, 0, &RuleExtractor),
            Err(SsrError::InsufficientInferences { .. })
        ));
    }

    #[test]
    fn label_mapping() {
        let seq = build_sequences(&record(), 1, 0, &RuleExtractor)
            .unwrap()
            .remove(0)
            .sequence;
        assert_eq!(map_labels(&seq, LabelMapping::Keep3).unwrap(), seq);
        let mapped = map_labels(&seq, LabelMapping::MapTo4).unwrap();
        for (a, b) in seq.relations.iter().zip(&mapped.relations) {
            assert_eq!(map_label(a.label).unwrap(), b.label);
        }
        assert_eq!(map_label(RelationLabel::Before).unwrap(), RelationLabel::Enables);
        let images: std::collections::BTreeSet<_> =
            [RelationLabel::Before, RelationLabel::Intent, RelationLabel::After]
                .into_iter()
                .map(|l| map_label(l).unwrap())
                .collect();
        assert_eq!(images.len(), 3);
        assert!(map_labels(&mapped, LabelMapping::MapTo4).is_err());
    }

    #[test]
    fn reformulated_corpus_is_valid() {
        let (c, built) = reformulate(&[record()], 5, 1, LabelMapping::Keep3, &RuleExtractor).unwrap();
        assert_eq!(c.len(), 5);
        assert_eq!(built.len(), 5);
        assert!(c.validate().is_ok(), "{:?}", c.validate());
        for s in &c.sequences {
            for e in &s.events {
                assert!(e.args.iter().all(|a| is_extractor_role(&a.role)));
            }
        }
    }

    fn tagged_sentence() -> impl Strategy<Value = String> {
        let word = prop_oneof![
            Just("runs".to_string()),
            Just("the".to_string()),
            Just("door".to_string()),
            (0u32..130).prop_map(|n| n.to_string()),
            (0u32..130).prop_map(|n| format!("person {n}")),
            (0u32..130).prop_map(|n| format!("Person{n}")),
        ];
        prop::collection::vec(word, 1..8).prop_map(|ws| ws.join(" "))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]
        #[test]
        fn person_normalization_is_idempotent(s in tagged_sentence()) {
            let once = normalize_person_tags(&s);
            prop_assert_eq!(normalize_person_tags(&once), once.clone());
        }

        #[test]
        fn extraction_is_pure(s in tagged_sentence()) {
            prop_assert_eq!(extract_ssr(&s).unwrap(), extract_ssr(&s).unwrap());
            let e = extract_ssr(&s).unwrap();
            prop_assert!(e.violations("x").is_empty());
        }
    }
}
