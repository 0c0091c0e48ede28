//! Events, argument roles, relation labels and corpora.
//!
//! An [`Event`] is one verb plus an ordered list of `(role, entity)` pairs.
//! Five consecutive events form an [`EventSequence`]; relations are annotated
//! only between the center event (position 3) and each of the other four.
//!
//! Constructors do not reject malformed data. Loaders need to represent bad
//! input in order to report it, so structural checks live in
//! [`validate_sequence`] and return violations as data.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SsrError};

/// 1-based position of the center event.
pub const CENTER_INDEX: usize = 3;
/// 1-based positions of the events related to the center, in emission order.
pub const TARGET_INDICES: [usize; 4] = [1, 2, 4, 5];
/// Number of events in a sequence.
pub const SEQUENCE_LEN: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RoleKind {
    Base,
    Auxiliary,
}

/// Classifies a role code. `Arg` followed by one or more digits is a base
/// role, anything else is auxiliary.
pub fn classify_role(code: &str) -> Result<RoleKind> {
    if code.is_empty() {
        return Err(SsrError::MalformedRole(code.to_string()));
    }
    match code.strip_prefix("Arg") {
        Some(digits) if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) => Ok(RoleKind::Base),
        _ => Ok(RoleKind::Auxiliary),
    }
}

/// Semantic role code such as `Arg0` or `AMnr`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ArgumentRole(String);

impl ArgumentRole {
    pub fn new(code: impl Into<String>) -> Result<Self> {
        let code = code.into();
        if code.is_empty() || !code.is_ascii() || code.bytes().any(|b| b.is_ascii_whitespace()) {
            return Err(SsrError::MalformedRole(code));
        }
        Ok(ArgumentRole(code))
    }

    pub fn code(&self) -> &str {
        &self.0
    }

    pub fn kind(&self) -> RoleKind {
        // non-empty by construction
        classify_role(&self.0).unwrap_or(RoleKind::Auxiliary)
    }

    pub fn is_base(&self) -> bool {
        self.kind() == RoleKind::Base
    }

    pub fn is_auxiliary(&self) -> bool {
        self.kind() == RoleKind::Auxiliary
    }

    fn sort_key(&self) -> (u8, usize, &str, &str) {
        match self.kind() {
            RoleKind::Base => {
                let digits = self.0[3..].trim_start_matches('0');
                (0, digits.len(), digits, &self.0)
            }
            RoleKind::Auxiliary => (1, 0, "", &self.0),
        }
    }
}

impl Ord for ArgumentRole {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sort_key().cmp(&other.sort_key())
    }
}

impl PartialOrd for ArgumentRole {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl TryFrom<String> for ArgumentRole {
    type Error = SsrError;
    fn try_from(code: String) -> Result<Self> {
        ArgumentRole::new(code)
    }
}

impl From<ArgumentRole> for String {
    fn from(role: ArgumentRole) -> String {
        role.0
    }
}

impl fmt::Display for ArgumentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Argument {
    pub role: ArgumentRole,
    pub entity: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Event {
    pub verb: String,
    #[serde(default)]
    pub args: Vec<Argument>,
}

impl Event {
    pub fn new(verb: impl Into<String>, args: Vec<(ArgumentRole, String)>) -> Self {
        Event {
            verb: verb.into(),
            args: args
                .into_iter()
                .map(|(role, entity)| Argument { role, entity })
                .collect(),
        }
    }

    pub fn verb_only(verb: impl Into<String>) -> Self {
        Event::new(verb, Vec::new())
    }

    /// Canonical form: lowercased verb and entities, collapsed whitespace,
    /// base roles first by numeric suffix, then auxiliary roles by code.
    pub fn normalized(&self) -> Event {
        let mut args: Vec<Argument> = self
            .args
            .iter()
            .map(|a| Argument {
                role: a.role.clone(),
                entity: normalize_text(&a.entity),
            })
            .collect();
        args.sort_by(|a, b| a.role.cmp(&b.role));
        Event {
            verb: normalize_text(&self.verb),
            args,
        }
    }

    pub fn arg(&self, role: &str) -> Option<&str> {
        self.args
            .iter()
            .find(|a| a.role.code() == role)
            .map(|a| a.entity.as_str())
    }

    /// Structural violations of this event, tagged with `location`.
    pub fn violations(&self, location: &str) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.verb.is_empty() {
            out.push(Violation::new(ViolationCode::EmptyVerb, location, "verb is empty"));
        } else if self.verb.chars().any(char::is_whitespace)
            || self.verb.chars().any(char::is_uppercase)
            || is_reserved_surface(&self.verb)
        {
            out.push(Violation::new(
                ViolationCode::VerbFormat,
                location,
                format!("verb {:?} must be one lowercase token", self.verb),
            ));
        }
        let mut seen = HashSet::new();
        for arg in &self.args {
            if arg.entity.trim().is_empty() {
                out.push(Violation::new(
                    ViolationCode::EmptyEntity,
                    location,
                    format!("role {} has an empty entity", arg.role),
                ));
            } else if arg
                .entity
                .split_whitespace()
                .any(|t| is_reserved_surface(&t.to_lowercase()))
            {
                out.push(Violation::new(
                    ViolationCode::ReservedToken,
                    location,
                    format!("entity {:?} contains a reserved token", arg.entity),
                ));
            }
            if !seen.insert(arg.role.code()) {
                out.push(Violation::new(
                    ViolationCode::DuplicateRole,
                    location,
                    format!("role {} repeats", arg.role),
                ));
            }
        }
        if self.args.windows(2).any(|w| w[0].role > w[1].role) {
            out.push(Violation::new(
                ViolationCode::ArgOrder,
                location,
                "arguments are not in canonical role order",
            ));
        }
        out
    }
}

fn is_reserved_surface(token: &str) -> bool {
    matches!(token, "<*>" | "<**>")
}

/// Lowercases and collapses runs of whitespace to single spaces.
pub fn normalize_text(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelationLabel {
    Causes,
    Enables,
    ReactionTo,
    NoRelation,
    Before,
    Intent,
    After,
}

impl RelationLabel {
    pub const ALL: [RelationLabel; 7] = [
        RelationLabel::Causes,
        RelationLabel::Enables,
        RelationLabel::ReactionTo,
        RelationLabel::NoRelation,
        RelationLabel::Before,
        RelationLabel::Intent,
        RelationLabel::After,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RelationLabel::Causes => "Causes",
            RelationLabel::Enables => "Enables",
            RelationLabel::ReactionTo => "ReactionTo",
            RelationLabel::NoRelation => "NoRelation",
            RelationLabel::Before => "Before",
            RelationLabel::Intent => "Intent",
            RelationLabel::After => "After",
        }
    }
}

impl fmt::Display for RelationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RelationLabel {
    type Err = SsrError;

    /// Accepts the canonical names as well as spaced or underscored variants
    /// such as `"Reaction To"` or `"no_relation"`.
    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| !c.is_whitespace() && *c != '_' && *c != '-')
            .flat_map(char::to_lowercase)
            .collect();
        RelationLabel::ALL
            .into_iter()
            .find(|l| l.name().to_lowercase() == key)
            .ok_or_else(|| SsrError::UnknownLabel(s.to_string()))
    }
}

/// Picks the label with the highest count, breaking ties by label name.
pub fn dominant_label<I>(counts: I) -> Option<RelationLabel>
where
    I: IntoIterator<Item = (RelationLabel, usize)>,
{
    counts
        .into_iter()
        .max_by(|(la, ca), (lb, cb)| ca.cmp(cb).then_with(|| lb.name().cmp(la.name())))
        .map(|(l, _)| l)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelSpace {
    name: String,
    labels: Vec<RelationLabel>,
}

impl LabelSpace {
    pub const VIDSITU: &'static str = "vidsitu";
    pub const KB_PRETRAIN: &'static str = "kb-pretrain";

    /// The four-way video event-relation space.
    pub fn vidsitu() -> Self {
        LabelSpace {
            name: Self::VIDSITU.to_string(),
            labels: vec![
                RelationLabel::Causes,
                RelationLabel::Enables,
                RelationLabel::ReactionTo,
                RelationLabel::NoRelation,
            ],
        }
    }

    /// The three-way knowledge-base pretraining space.
    pub fn kb_pretrain() -> Self {
        LabelSpace {
            name: Self::KB_PRETRAIN.to_string(),
            labels: vec![RelationLabel::Before, RelationLabel::Intent, RelationLabel::After],
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            Self::VIDSITU => Ok(Self::vidsitu()),
            Self::KB_PRETRAIN => Ok(Self::kb_pretrain()),
            other => Err(SsrError::Param(format!("unknown label space {other:?}"))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn labels(&self) -> &[RelationLabel] {
        &self.labels
    }

    /// Number of classes.
    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn index_of(&self, label: RelationLabel) -> Option<usize> {
        self.labels.iter().position(|&l| l == label)
    }

    pub fn contains(&self, label: RelationLabel) -> bool {
        self.index_of(label).is_some()
    }

    pub fn label(&self, index: usize) -> RelationLabel {
        self.labels[index]
    }

    pub fn require(&self, label: RelationLabel) -> Result<usize> {
        self.index_of(label).ok_or_else(|| SsrError::LabelOutsideSpace {
            label,
            space: self.name.clone(),
        })
    }
}

impl Serialize for LabelSpace {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name)
    }
}

impl<'de> Deserialize<'de> for LabelSpace {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        LabelSpace::by_name(&name).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelationInstance {
    pub sequence_id: String,
    /// 1-based position of the event related to the center.
    pub target_index: usize,
    pub label: RelationLabel,
}

impl RelationInstance {
    /// Relative distance to the center event, `target_index - 3`.
    pub fn distance(&self) -> i32 {
        self.target_index as i32 - CENTER_INDEX as i32
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EventSequence {
    pub id: String,
    pub events: Vec<Event>,
    pub relations: Vec<RelationInstance>,
}

impl EventSequence {
    pub fn new(id: impl Into<String>, events: Vec<Event>) -> Self {
        EventSequence {
            id: id.into(),
            events,
            relations: Vec::new(),
        }
    }

    pub fn with_relation(mut self, target_index: usize, label: RelationLabel) -> Self {
        self.relations.push(RelationInstance {
            sequence_id: self.id.clone(),
            target_index,
            label,
        });
        self
    }

    /// Event at a 1-based position.
    pub fn event(&self, index: usize) -> Result<&Event> {
        index
            .checked_sub(1)
            .and_then(|i| self.events.get(i))
            .ok_or(SsrError::TargetIndex(index))
    }

    pub fn center(&self) -> Result<&Event> {
        self.event(CENTER_INDEX)
    }

    pub fn relation_for(&self, target_index: usize) -> Option<&RelationInstance> {
        self.relations.iter().find(|r| r.target_index == target_index)
    }

    /// Labels in target order (1, 2, 4, 5) when all four are annotated.
    pub fn full_labels(&self) -> Option<[RelationLabel; 4]> {
        let mut out = [RelationLabel::NoRelation; 4];
        for (slot, &t) in out.iter_mut().zip(TARGET_INDICES.iter()) {
            *slot = self.relation_for(t)?.label;
        }
        Some(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationCode {
    SeqLen,
    SelfRelation,
    TargetRange,
    DuplicateTarget,
    TooManyRelations,
    SequenceIdMismatch,
    LabelSpace,
    EmptyVerb,
    VerbFormat,
    EmptyEntity,
    DuplicateRole,
    ArgOrder,
    ReservedToken,
    DuplicateSequenceId,
}

impl ViolationCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationCode::SeqLen => "SEQ_LEN",
            ViolationCode::SelfRelation => "SELF_RELATION",
            ViolationCode::TargetRange => "TARGET_RANGE",
            ViolationCode::DuplicateTarget => "DUPLICATE_TARGET",
            ViolationCode::TooManyRelations => "TOO_MANY_RELATIONS",
            ViolationCode::SequenceIdMismatch => "SEQUENCE_ID_MISMATCH",
            ViolationCode::LabelSpace => "LABEL_SPACE",
            ViolationCode::EmptyVerb => "EMPTY_VERB",
            ViolationCode::VerbFormat => "VERB_FORMAT",
            ViolationCode::EmptyEntity => "EMPTY_ENTITY",
            ViolationCode::DuplicateRole => "DUPLICATE_ROLE",
            ViolationCode::ArgOrder => "ARG_ORDER",
            ViolationCode::ReservedToken => "RESERVED_TOKEN",
            ViolationCode::DuplicateSequenceId => "DUPLICATE_SEQUENCE_ID",
        }
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub location: String,
    pub message: String,
}

impl Violation {
    fn new(code: ViolationCode, location: &str, message: impl Into<String>) -> Self {
        Violation {
            code,
            location: location.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, code: ViolationCode) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }
}

pub fn validate_sequence(seq: &EventSequence, space: &LabelSpace) -> ValidationReport {
    let mut violations = Vec::new();
    if seq.events.len() != SEQUENCE_LEN {
        violations.push(Violation::new(
            ViolationCode::SeqLen,
            &seq.id,
            format!("expected {SEQUENCE_LEN} events, found {}", seq.events.len()),
        ));
    }
    for (i, event) in seq.events.iter().enumerate() {
        violations.extend(event.violations(&format!("{}/event{}", seq.id, i + 1)));
    }
    if seq.relations.len() > TARGET_INDICES.len() {
        violations.push(Violation::new(
            ViolationCode::TooManyRelations,
            &seq.id,
            format!("{} relations annotated, at most 4 allowed", seq.relations.len()),
        ));
    }
    let mut targets = HashSet::new();
    for rel in &seq.relations {
        let loc = format!("{}/relation{}", seq.id, rel.target_index);
        if rel.target_index == CENTER_INDEX {
            violations.push(Violation::new(
                ViolationCode::SelfRelation,
                &loc,
                "the center event cannot relate to itself",
            ));
        } else if !TARGET_INDICES.contains(&rel.target_index) {
            violations.push(Violation::new(
                ViolationCode::TargetRange,
                &loc,
                format!("target index {} out of range", rel.target_index),
            ));
        }
        if !targets.insert(rel.target_index) {
            violations.push(Violation::new(
                ViolationCode::DuplicateTarget,
                &loc,
                "target index annotated twice",
            ));
        }
        if rel.sequence_id != seq.id {
            violations.push(Violation::new(
                ViolationCode::SequenceIdMismatch,
                &loc,
                format!("relation refers to sequence {:?}", rel.sequence_id),
            ));
        }
        if !space.contains(rel.label) {
            violations.push(Violation::new(
                ViolationCode::LabelSpace,
                &loc,
                format!("label {} not in {}", rel.label, space.name()),
            ));
        }
    }
    ValidationReport { violations }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub label_space: LabelSpace,
    pub sequences: Vec<EventSequence>,
    /// Free-form provenance (generator rule tables, balancing statistics, ...).
    pub meta: BTreeMap<String, serde_json::Value>,
}

impl Corpus {
    pub fn new(label_space: LabelSpace, sequences: Vec<EventSequence>) -> Self {
        Corpus {
            label_space,
            sequences,
            meta: BTreeMap::new(),
        }
    }

    pub fn empty(label_space: LabelSpace) -> Self {
        Corpus::new(label_space, Vec::new())
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// All relation instances with their owning sequence, in corpus order.
    pub fn instances(&self) -> impl Iterator<Item = (&EventSequence, &RelationInstance)> {
        self.sequences
            .iter()
            .flat_map(|s| s.relations.iter().map(move |r| (s, r)))
    }

    pub fn num_instances(&self) -> usize {
        self.sequences.iter().map(|s| s.relations.len()).sum()
    }

    /// Every violation across the corpus, including duplicate sequence ids.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let mut ids = HashSet::new();
        for seq in &self.sequences {
            if !ids.insert(seq.id.as_str()) {
                report.violations.push(Violation::new(
                    ViolationCode::DuplicateSequenceId,
                    &seq.id,
                    "sequence id repeats",
                ));
            }
            report
                .violations
                .extend(validate_sequence(seq, &self.label_space).violations);
        }
        report
    }
}
