//! Dataset pattern statistics and the non-learned baselines they motivate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SsrError};
use crate::event::{dominant_label, Corpus, LabelSpace, RelationLabel};

pub type Histogram = BTreeMap<RelationLabel, usize>;

/// Relative distances `target_index - 3`, in bucket order.
pub const DISTANCES: [i32; 4] = [-2, -1, 1, 2];

fn zero_histogram(space: &LabelSpace) -> Histogram {
    space.labels().iter().map(|&l| (l, 0)).collect()
}

pub fn relation_histogram(c: &Corpus) -> Histogram {
    let mut hist = zero_histogram(&c.label_space);
    for (_, rel) in c.instances() {
        *hist.entry(rel.label).or_default() += 1;
    }
    hist
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub target_verb: String,
    pub center_verb: String,
    pub histogram: Histogram,
    pub dominant: RelationLabel,
    /// More than one label shares the maximum count.
    pub tied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRelationTable {
    pub global_dominant: Option<RelationLabel>,
    pub num_pairs: usize,
    /// Pairs whose unique majority label differs from the global dominant.
    pub non_global_pairs: usize,
    /// Pairs with a tied maximum; never counted as non-global.
    pub tied_pairs: usize,
    pub non_global_fraction: f64,
    pub pairs: Vec<PairEntry>,
}

impl PairRelationTable {
    pub fn lookup(&self, target_verb: &str, center_verb: &str) -> Option<&PairEntry> {
        self.pairs
            .binary_search_by(|p| (p.target_verb.as_str(), p.center_verb.as_str()).cmp(&(target_verb, center_verb)))
            .ok()
            .map(|i| &self.pairs[i])
    }

    pub fn to_csv(&self) -> String {
        let labels: Vec<RelationLabel> = self
            .pairs
            .first()
            .map(|p| p.histogram.keys().copied().collect())
            .unwrap_or_default();
        let mut out = String::from("target_verb,center_verb");
        for l in &labels {
            out.push(',');
            out.push_str(l.name());
        }
        out.push_str(",dominant,tied\n");
        for p in &self.pairs {
            out.push_str(&csv_field(&p.target_verb));
            out.push(',');
            out.push_str(&csv_field(&p.center_verb));
            for l in &labels {
                out.push_str(&format!(",{}", p.histogram.get(l).copied().unwrap_or(0)));
            }
            out.push_str(&format!(",{},{}\n", p.dominant, p.tied));
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn histogram_csv(hist: &Histogram) -> String {
    let mut out = String::from("label,count\n");
    for (l, c) in hist {
        out.push_str(&format!("{l},{c}\n"));
    }
    out
}

fn pair_histograms(c: &Corpus) -> BTreeMap<(String, String), Histogram> {
    let mut pairs: BTreeMap<(String, String), Histogram> = BTreeMap::new();
    for (seq, rel) in c.instances() {
        let (Ok(target), Ok(center)) = (seq.event(rel.target_index), seq.center()) else {
            continue;
        };
        *pairs
            .entry((target.verb.clone(), center.verb.clone()))
            .or_insert_with(|| zero_histogram(&c.label_space))
            .entry(rel.label)
            .or_default() += 1;
    }
    pairs
}

/// Per ordered `(target verb, center verb)` pair label histograms.
pub fn pair_dominant_table(c: &Corpus) -> PairRelationTable {
    let global_dominant = if c.num_instances() == 0 {
        None
    } else {
        dominant_label(relation_histogram(c))
    };
    let mut pairs = Vec::new();
    let (mut non_global, mut tied_pairs) = (0, 0);
    for ((target_verb, center_verb), histogram) in pair_histograms(c) {
        let max = histogram.values().copied().max().unwrap_or(0);
        let tied = histogram.values().filter(|&&n| n == max).count() > 1;
        let dominant = dominant_label(histogram.iter().map(|(&l, &n)| (l, n))).expect("non-empty histogram");
        if tied {
            tied_pairs += 1;
        } else if Some(dominant) != global_dominant {
            non_global += 1;
        }
        pairs.push(PairEntry {
            target_verb,
            center_verb,
            histogram,
            dominant,
            tied,
        });
    }
    let num_pairs = pairs.len();
    PairRelationTable {
        global_dominant,
        num_pairs,
        non_global_pairs: non_global,
        tied_pairs,
        non_global_fraction: if num_pairs == 0 {
            0.0
        } else {
            non_global as f64 / num_pairs as f64
        },
        pairs,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistanceDistribution {
    pub distances: [i32; 4],
    /// Per label, counts in [`DISTANCES`] order.
    pub counts: BTreeMap<RelationLabel, [usize; 4]>,
}

impl DistanceDistribution {
    pub fn count(&self, label: RelationLabel, distance: i32) -> usize {
        let Some(bucket) = DISTANCES.iter().position(|&d| d == distance) else {
            return 0;
        };
        self.counts.get(&label).map_or(0, |row| row[bucket])
    }

    pub fn total(&self) -> usize {
        self.counts.values().flat_map(|r| r.iter()).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,d=-2,d=-1,d=+1,d=+2\n");
        for (l, row) in &self.counts {
            out.push_str(&format!("{l},{},{},{},{}\n", row[0], row[1], row[2], row[3]));
        }
        out
    }
}

pub fn distance_distribution(c: &Corpus) -> DistanceDistribution {
    let mut counts: BTreeMap<RelationLabel, [usize; 4]> = c.label_space.labels().iter().map(|&l| (l, [0; 4])).collect();
    for (_, rel) in c.instances() {
        if let Some(bucket) = DISTANCES.iter().position(|&d| d == rel.distance()) {
            counts.entry(rel.label).or_default()[bucket] += 1;
        }
    }
    DistanceDistribution {
        distances: DISTANCES,
        counts,
    }
}

fn check_baseline_inputs(train: &Corpus, test: &Corpus) -> Result<()> {
    if train.label_space != test.label_space {
        return Err(SsrError::LabelSpaceMismatch {
            expected: train.label_space.name().to_string(),
            found: test.label_space.name().to_string(),
        });
    }
    if train.num_instances() == 0 {
        return Err(SsrError::InsufficientData("training corpus has no relations".into()));
    }
    Ok(())
}

/// Predicts, for every test relation, the majority training label of its
/// verb pair, falling back to the global majority for unseen pairs.
pub fn memorization_baseline(train: &Corpus, test: &Corpus) -> Result<Vec<RelationLabel>> {
    check_baseline_inputs(train, test)?;
    let table = pair_dominant_table(train);
    let fallback = table.global_dominant.expect("non-empty training corpus");
    Ok(test
        .instances()
        .map(|(seq, rel)| {
            match (seq.event(rel.target_index), seq.center()) {
                (Ok(t), Ok(c)) => table.lookup(&t.verb, &c.verb).map(|p| p.dominant),
                _ => None,
            }
            .unwrap_or(fallback)
        })
        .collect())
}

/// Predicts the global training majority for every test relation.
pub fn majority_baseline(train: &Corpus, test: &Corpus) -> Result<Vec<RelationLabel>> {
    check_baseline_inputs(train, test)?;
    let dominant = dominant_label(relation_histogram(train)).expect("non-empty training corpus");
    Ok(vec![dominant; test.num_instances()])
}
