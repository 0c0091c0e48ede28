//! Synthetic corpora with a planted, recoverable relation rule.
//!
//! Each sequence draws a center verb, then for every target slot a target
//! verb; the relation is the rule table's label for the (target, center)
//! pair, with slots reweighted by a per-label distance prior and optionally
//! replaced by uniform noise.

use std::collections::{BTreeMap, HashMap};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SsrError};
use crate::event::{ArgumentRole, Corpus, Event, EventSequence, LabelSpace, RelationLabel, TARGET_INDICES};
use crate::model::params::fnv1a;

/// Metadata key holding the serialized [`RuleTable`].
pub const RULE_TABLE_KEY: &str = "rule_table";

const MAX_REJECTIONS: usize = 1000;

/// How the rule table is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RuleSource {
    /// Verbs fall into latent classes and the label depends only on the
    /// classes of target and center, so unseen pairs are predictable.
    Classes { num_classes: usize },
    /// Every pair gets its own label: the first label of the space, or with
    /// probability `non_global_fraction` one of the others.
    Pairs { non_global_fraction: f64 },
    /// Hand-written rules over verb indices.
    Explicit { rules: Vec<ExplicitRule> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplicitRule {
    pub target: usize,
    pub center: usize,
    pub label: RelationLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub num_sequences: usize,
    pub verb_vocab_size: usize,
    pub entity_vocab_size: usize,
    pub label_space: LabelSpace,
    pub rules: RuleSource,
    /// Share of verb pairs that carry a rule.
    pub coverage: f64,
    /// When positive, each verb is center to exactly this many covered
    /// targets instead of sampling coverage pair by pair.
    pub partners_per_center: usize,
    /// Per-label weights over distances -2, -1, +1, +2; missing labels
    /// weigh 1 everywhere.
    pub distance_prior: BTreeMap<RelationLabel, [f64; 4]>,
    pub noise_rate: f64,
    pub seed: u64,
    pub id_prefix: String,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_sequences: 1000,
            verb_vocab_size: 50,
            entity_vocab_size: 30,
            label_space: LabelSpace::vidsitu(),
            rules: RuleSource::Classes { num_classes: 4 },
            coverage: 1.0,
            partners_per_center: 2,
            distance_prior: BTreeMap::new(),
            noise_rate: 0.0,
            seed: 0,
            id_prefix: "syn".into(),
        }
    }
}

/// Ground-truth relation rules of a generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RuleTable {
    /// Every pair is covered; the label depends only on verb classes.
    Classes {
        verbs: Vec<String>,
        verb_class: Vec<usize>,
        /// `table[target_class][center_class]`.
        table: Vec<Vec<RelationLabel>>,
    },
    Pairs {
        verbs: Vec<String>,
        /// Sorted `(target, center, label)` over verb indices.
        rules: Vec<(usize, usize, RelationLabel)>,
    },
}

impl RuleTable {
    pub fn verbs(&self) -> &[String] {
        match self {
            RuleTable::Classes { verbs, .. } | RuleTable::Pairs { verbs, .. } => verbs,
        }
    }

    /// Rule for a pair of verb indices.
    pub fn lookup_index(&self, target: usize, center: usize) -> Option<RelationLabel> {
        match self {
            RuleTable::Classes { verb_class, table, .. } => {
                let (t, c) = (verb_class.get(target)?, verb_class.get(center)?);
                Some(table[*t][*c])
            }
            RuleTable::Pairs { rules, .. } => rules
                .binary_search_by(|r| (r.0, r.1).cmp(&(target, center)))
                .ok()
                .map(|i| rules[i].2),
        }
    }

    /// Rule for a pair of verbs by name.
    pub fn lookup(&self, target_verb: &str, center_verb: &str) -> Option<RelationLabel> {
        let verbs = self.verbs();
        let t = verbs.iter().position(|v| v == target_verb)?;
        let c = verbs.iter().position(|v| v == center_verb)?;
        self.lookup_index(t, c)
    }

    /// Covered targets of each center verb, ascending.
    pub fn partners(&self) -> Vec<Vec<usize>> {
        let n = self.verbs().len();
        match self {
            RuleTable::Classes { .. } => vec![(0..n).collect(); n],
            RuleTable::Pairs { rules, .. } => {
                let mut out = vec![Vec::new(); n];
                for &(t, c, _) in rules {
                    out[c].push(t);
                }
                out
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            RuleTable::Classes { verbs, .. } => verbs.is_empty(),
            RuleTable::Pairs { rules, .. } => rules.is_empty(),
        }
    }

    pub fn from_corpus(c: &Corpus) -> Result<Self> {
        let v = c
            .meta
            .get(RULE_TABLE_KEY)
            .ok_or_else(|| SsrError::InsufficientData("corpus carries no rule table".into()))?;
        Ok(serde_json::from_value(v.clone())?)
    }
}

const ONSETS: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
const DETERMINERS: [&str; 3] = ["the", "a", "this"];
const ADJECTIVES: [&str; 8] = ["red", "small", "old", "tall", "quiet", "bright", "young", "heavy"];

/// Pronounceable, distinct pseudo-words: syllable digits of the index,
/// at least two syllables.
fn pseudo_words(n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut syllables: Vec<String> = ONSETS
        .iter()
        .flat_map(|o| VOWELS.iter().map(move |v| format!("{o}{v}")))
        .collect();
    syllables.shuffle(rng);
    let base = syllables.len();
    (0..n)
        .map(|i| {
            let mut k = i;
            let mut word = String::new();
            let mut digits = 0;
            while k > 0 || digits < 2 {
                word.push_str(&syllables[k % base]);
                k /= base;
                digits += 1;
            }
            word
        })
        .collect()
}

fn nouns(n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    pseudo_words(n, rng).into_iter().map(|w| format!("{w}n")).collect()
}

fn validate(spec: &SynthSpec) -> Result<()> {
    let fail = |m: String| Err(SsrError::Param(m));
    if !(0.0..=1.0).contains(&spec.noise_rate) {
        return fail(format!("noise_rate {} is outside [0, 1]", spec.noise_rate));
    }
    if !(0.0..=1.0).contains(&spec.coverage) {
        return fail(format!("coverage {} is outside [0, 1]", spec.coverage));
    }
    if spec.verb_vocab_size == 0 || spec.entity_vocab_size == 0 {
        return fail("verb and entity vocabularies must be non-empty".into());
    }
    for (l, w) in &spec.distance_prior {
        spec.label_space.require(*l)?;
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return fail(format!("distance prior of {l} has a negative or non-finite weight"));
        }
    }
    for d in 0..4 {
        if spec.label_space.labels().iter().all(|l| prior(spec, *l, d) == 0.0) {
            return fail(format!("distance prior is zero for every label at slot {d}"));
        }
    }
    match &spec.rules {
        RuleSource::Classes { num_classes } if *num_classes == 0 => fail("num_classes must be positive".into()),
        RuleSource::Pairs { non_global_fraction } if !(0.0..=1.0).contains(non_global_fraction) => {
            fail(format!("non_global_fraction {non_global_fraction} is outside [0, 1]"))
        }
        RuleSource::Explicit { rules } => {
            for r in rules {
                spec.label_space.require(r.label)?;
                if r.target >= spec.verb_vocab_size || r.center >= spec.verb_vocab_size {
                    return fail(format!(
                        "rule ({}, {}) refers to a verb outside the vocabulary",
                        r.target, r.center
                    ));
                }
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

fn prior(spec: &SynthSpec, label: RelationLabel, slot: usize) -> f64 {
    spec.distance_prior.get(&label).map_or(1.0, |w| w[slot])
}

/// The covered targets of every center verb.
fn coverage_sets(spec: &SynthSpec, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    (0..n)
        .map(|_| {
            let mut targets: Vec<usize> = if spec.partners_per_center > 0 {
                rand::seq::index::sample(rng, n, spec.partners_per_center.min(n)).into_vec()
            } else {
                (0..n).filter(|_| rng.random::<f64>() < spec.coverage).collect()
            };
            targets.sort_unstable();
            targets
        })
        .collect()
}

fn build_rules(spec: &SynthSpec, verbs: Vec<String>, rng: &mut ChaCha8Rng) -> RuleTable {
    let n = verbs.len();
    let labels = spec.label_space.labels();
    let dense = spec.partners_per_center == 0 && spec.coverage >= 1.0;
    let pairs_from = |sets: Vec<Vec<usize>>, label: &mut dyn FnMut(usize, usize) -> RelationLabel| {
        let mut rules: Vec<(usize, usize, RelationLabel)> = sets
            .iter()
            .enumerate()
            .flat_map(|(c, ts)| ts.iter().map(move |&t| (t, c)))
            .map(|(t, c)| (t, c, label(t, c)))
            .collect();
        rules.sort_unstable();
        rules
    };
    match &spec.rules {
        RuleSource::Classes { num_classes } => {
            let k = *num_classes;
            let mut verb_class: Vec<usize> = (0..n).map(|i| i % k).collect();
            verb_class.shuffle(rng);
            let mut row_shift: Vec<usize> = (0..k).collect();
            row_shift.shuffle(rng);
            let mut col_shift: Vec<usize> = (0..k).collect();
            col_shift.shuffle(rng);
            let table: Vec<Vec<RelationLabel>> = (0..k)
                .map(|a| {
                    (0..k)
                        .map(|b| labels[(row_shift[a] + col_shift[b]) % labels.len()])
                        .collect()
                })
                .collect();
            if dense {
                return RuleTable::Classes {
                    verbs,
                    verb_class,
                    table,
                };
            }
            let sets = coverage_sets(spec, n, rng);
            let rules = pairs_from(sets, &mut |t, c| table[verb_class[t]][verb_class[c]]);
            RuleTable::Pairs { verbs, rules }
        }
        RuleSource::Pairs { non_global_fraction } => {
            let sets = coverage_sets(spec, n, rng);
            let f = *non_global_fraction;
            let mut pick = |_t: usize, _c: usize| {
                if labels.len() > 1 && rng.random_bool(f) {
                    labels[rng.random_range(1..labels.len())]
                } else {
                    labels[0]
                }
            };
            let mut rules = Vec::new();
            for (c, ts) in sets.iter().enumerate() {
                for &t in ts {
                    rules.push((t, c, pick(t, c)));
                }
            }
            rules.sort_unstable();
            RuleTable::Pairs { verbs, rules }
        }
        RuleSource::Explicit { rules } => {
            let mut map = BTreeMap::new();
            for r in rules {
                map.insert((r.target, r.center), r.label);
            }
            RuleTable::Pairs {
                verbs,
                rules: map.into_iter().map(|((t, c), l)| (t, c, l)).collect(),
            }
        }
    }
}

fn entity(nouns: &[String], rng: &mut ChaCha8Rng) -> String {
    let det = DETERMINERS.choose(rng).expect("non-empty");
    let noun = nouns.choose(rng).expect("non-empty");
    if rng.random_bool(0.4) {
        let adj = ADJECTIVES.choose(rng).expect("non-empty");
        format!("{det} {adj} {noun}")
    } else {
        format!("{det} {noun}")
    }
}

fn event(verb: &str, nouns: &[String], rng: &mut ChaCha8Rng) -> Result<Event> {
    let mut args = vec![(ArgumentRole::new("Arg0")?, entity(nouns, rng))];
    if rng.random_bool(0.5) {
        args.push((ArgumentRole::new("Arg1")?, entity(nouns, rng)));
    }
    if rng.random_bool(0.3) {
        let aux = ["ADir", "AMnr", "AScn"].choose(rng).expect("non-empty");
        args.push((ArgumentRole::new(*aux)?, entity(nouns, rng)));
    }
    Ok(Event::new(verb, args))
}

/// Draws a target verb and its label for one slot. Covered targets of the
/// center are proposed uniformly and accepted with probability
/// proportional to the distance prior of their label.
fn draw_slot(
    spec: &SynthSpec,
    rules: &RuleTable,
    candidates: &[usize],
    center: usize,
    slot: usize,
    max_weight: f64,
    rng: &mut ChaCha8Rng,
) -> (usize, RelationLabel) {
    let labels = spec.label_space.labels();
    if candidates.is_empty() {
        let target = rng.random_range(0..spec.verb_vocab_size);
        return (target, labels[rng.random_range(0..labels.len())]);
    }
    let mut last = (candidates[0], labels[0]);
    for _ in 0..MAX_REJECTIONS {
        let target = *candidates.choose(rng).expect("non-empty");
        let label = rules.lookup_index(target, center).expect("covered pair");
        last = (target, label);
        if rng.random::<f64>() * max_weight < prior(spec, label, slot) {
            return last;
        }
    }
    last
}

/// Generates a corpus; the rule table is stored under [`RULE_TABLE_KEY`]
/// in the corpus metadata.
pub fn generate(spec: &SynthSpec) -> Result<Corpus> {
    validate(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let verbs = pseudo_words(spec.verb_vocab_size, &mut rng);
    let nouns = nouns(spec.entity_vocab_size, &mut rng);
    let rules = build_rules(spec, verbs.clone(), &mut rng);
    if rules.is_empty() && spec.noise_rate < 1.0 {
        return Err(SsrError::Underdetermined(
            "the rule table is empty and noise_rate is below 1".into(),
        ));
    }
    let partners = rules.partners();
    let centers: Vec<usize> = (0..spec.verb_vocab_size).filter(|&c| !partners[c].is_empty()).collect();
    let labels = spec.label_space.labels();
    let max_weights: Vec<f64> = (0..4)
        .map(|d| labels.iter().map(|&l| prior(spec, l, d)).fold(0.0, f64::max))
        .collect();
    let width = spec.num_sequences.max(1).to_string().len();
    let mut sequences = Vec::with_capacity(spec.num_sequences);
    for i in 0..spec.num_sequences {
        let center = match centers.choose(&mut rng) {
            Some(&c) => c,
            None => rng.random_range(0..spec.verb_vocab_size),
        };
        let mut slots = Vec::with_capacity(4);
        for (slot, &max_weight) in max_weights.iter().enumerate() {
            let (target, mut label) = draw_slot(spec, &rules, &partners[center], center, slot, max_weight, &mut rng);
            if rng.random::<f64>() < spec.noise_rate {
                label = labels[rng.random_range(0..labels.len())];
            }
            slots.push((target, label));
        }
        let mut events = Vec::with_capacity(5);
        for (pos, &(target, _)) in slots.iter().enumerate() {
            if pos == 2 {
                events.push(event(&verbs[center], &nouns, &mut rng)?);
            }
            events.push(event(&verbs[target], &nouns, &mut rng)?);
        }
        let mut seq = EventSequence::new(format!("{}-{i:0width$}", spec.id_prefix), events);
        for (&t, &(_, label)) in TARGET_INDICES.iter().zip(&slots) {
            seq = seq.with_relation(t, label);
        }
        sequences.push(seq);
    }
    let mut corpus = Corpus::new(spec.label_space.clone(), sequences);
    corpus.meta.insert("synth_spec".into(), serde_json::to_value(spec)?);
    corpus.meta.insert(RULE_TABLE_KEY.into(), serde_json::to_value(&rules)?);
    Ok(corpus)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Corpus,
    pub val: Corpus,
    pub test: Corpus,
}

/// Bucket 0..10 of a sequence id; 0-7 train, 8 validation, 9 test.
pub fn split_bucket(id: &str) -> u64 {
    fnv1a(id) % 10
}

/// Deterministic 80/10/10 split by sequence-id hash. Metadata is copied to
/// every part together with the part's name.
pub fn split(c: &Corpus) -> Splits {
    let mut parts: HashMap<&str, Vec<EventSequence>> = HashMap::new();
    for s in &c.sequences {
        let name = match split_bucket(&s.id) {
            0..=7 => "train",
            8 => "val",
            _ => "test",
        };
        parts.entry(name).or_default().push(s.clone());
    }
    let mut make = |name: &str| {
        let mut part = Corpus::new(c.label_space.clone(), parts.remove(name).unwrap_or_default());
        part.meta = c.meta.clone();
        part.meta.insert("split".into(), serde_json::Value::String(name.into()));
        part
    };
    Splits {
        train: make("train"),
        val: make("val"),
        test: make("test"),
    }
}
