//! Class-imbalance handling: inverse-proportion loss weights and
//! sequence-level undersampling.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::analysis::relation_histogram;
use crate::error::{Result, SsrError};
use crate::event::{Corpus, EventSequence, LabelSpace, RelationLabel};

/// Per-class loss weights in label-space order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub label_space: String,
    pub weights: Vec<f64>,
}

impl ClassWeights {
    pub fn uniform(space: &LabelSpace) -> Self {
        ClassWeights {
            label_space: space.name().to_string(),
            weights: vec![1.0; space.size()],
        }
    }

    pub fn weight(&self, space: &LabelSpace, label: RelationLabel) -> Option<f64> {
        if self.label_space != space.name() {
            return None;
        }
        space.index_of(label).map(|i| self.weights[i])
    }

    /// The weight vector, checked against `space`.
    pub fn for_space(&self, space: &LabelSpace) -> Result<Vec<f64>> {
        if self.label_space != space.name() || self.weights.len() != space.size() {
            return Err(SsrError::LabelSpaceMismatch {
                expected: space.name().to_string(),
                found: self.label_space.clone(),
            });
        }
        if let Some(w) = self.weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(SsrError::Param(format!("class weight {w} is not positive and finite")));
        }
        Ok(self.weights.clone())
    }
}

/// Weight of each class = total instances / instances of that class.
pub fn class_weights(c: &Corpus) -> Result<ClassWeights> {
    let hist = relation_histogram(c);
    let total: usize = hist.values().sum();
    let weights = c
        .label_space
        .labels()
        .iter()
        .map(|&l| match hist.get(&l).copied().unwrap_or(0) {
            0 => Err(SsrError::ZeroFrequency(l)),
            n => Ok(total as f64 / n as f64),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ClassWeights {
        label_space: c.label_space.name().to_string(),
        weights,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Undersampled {
    pub corpus: Corpus,
    /// Ids of removed sequences, in removal order.
    pub removed: Vec<String>,
    /// Kept share of relation instances.
    pub fraction_kept: f64,
}

fn count_of(seq: &EventSequence, label: RelationLabel) -> usize {
    seq.relations.iter().filter(|r| r.label == label).count()
}

/// Removes whole sequences until the largest class is no bigger than the
/// next largest. Each round drops the sequence carrying the most instances of
/// the current largest class; ties go to the earliest sequence in a seeded
/// shuffle.
pub fn undersample(c: &Corpus, seed: u64) -> Result<Undersampled> {
    let mut hist: BTreeMap<RelationLabel, usize> = relation_histogram(c);
    hist.retain(|_, n| *n > 0);
    if hist.len() < 2 {
        return Err(SsrError::CannotBalance);
    }
    let total = c.num_instances();
    let mut order: Vec<usize> = (0..c.sequences.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut alive = vec![true; c.sequences.len()];
    let mut removed = Vec::new();
    loop {
        let mut ranked: Vec<(RelationLabel, usize)> = hist.iter().map(|(&l, &n)| (l, n)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.name().cmp(b.0.name())));
        let (top, top_n) = ranked[0];
        let second = ranked.get(1).map_or(0, |r| r.1);
        if top_n <= second {
            break;
        }
        let mut pick: Option<(usize, usize)> = None;
        for &i in &order {
            if !alive[i] {
                continue;
            }
            let k = count_of(&c.sequences[i], top);
            if k > 0 && pick.is_none_or(|(_, best)| k > best) {
                pick = Some((i, k));
            }
        }
        let Some((i, _)) = pick else { break };
        alive[i] = false;
        for r in &c.sequences[i].relations {
            *hist.entry(r.label).or_default() -= 1;
        }
        removed.push(c.sequences[i].id.clone());
    }
    let mut corpus = Corpus::new(
        c.label_space.clone(),
        c.sequences
            .iter()
            .zip(&alive)
            .filter(|(_, &a)| a)
            .map(|(s, _)| s.clone())
            .collect(),
    );
    corpus.meta = c.meta.clone();
    let kept = corpus.num_instances();
    let fraction_kept = if total == 0 { 1.0 } else { kept as f64 / total as f64 };
    corpus.meta.insert(
        "undersample".into(),
        json!({
            "seed": seed,
            "sequences_removed": removed.len(),
            "instances_kept": kept,
            "instances_total": total,
            "fraction_kept": fraction_kept,
        }),
    );
    Ok(Undersampled {
        corpus,
        removed,
        fraction_kept,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::Event;
    use proptest::prelude::*;
    use RelationLabel::*;

    fn seq(id: &str, labels: &[RelationLabel]) -> EventSequence {
        let mut s = EventSequence::new(id, (0..5).map(|i| Event::verb_only(format!("v{i}"))).collect());
        for (&t, &l) in [1, 2, 4, 5].iter().zip(labels) {
            s = s.with_relation(t, l);
        }
        s
    }

    fn corpus(rows: &[&[RelationLabel]]) -> Corpus {
        Corpus::new(
            LabelSpace::vidsitu(),
            rows.iter().enumerate().map(|(i, r)| seq(&format!("s{i}"), r)).collect(),
        )
    }

    #[test]
    fn weights_are_inverse_proportions() {
        let c = corpus(&[
            &[Causes, Causes, Causes, Causes],
            &[Enables, Enables, ReactionTo, NoRelation],
        ]);
        let w = class_weights(&c).unwrap();
        assert_eq!(w.weights, vec![2.0, 4.0, 8.0, 8.0]);
    }

    #[test]
    fn absent_class_is_an_error() {
        let c = corpus(&[&[Causes, Enables, ReactionTo]]);
        assert!(matches!(class_weights(&c), Err(SsrError::ZeroFrequency(NoRelation))));
    }

    #[test]
    fn balanced_corpus_unchanged() {
        let c = corpus(&[
            &[Causes, Enables, ReactionTo, NoRelation],
            &[NoRelation, ReactionTo, Enables, Causes],
        ]);
        let u = undersample(&c, 3).unwrap();
        assert_eq!(u.corpus.sequences, c.sequences);
        assert!(u.removed.is_empty());
        assert_eq!(u.fraction_kept, 1.0);
    }

    #[test]
    fn single_label_cannot_balance() {
        let c = corpus(&[&[Causes, Causes]]);
        assert!(matches!(undersample(&c, 0), Err(SsrError::CannotBalance)));
    }

    #[test]
    fn packed_enables_reduced() {
        // Enables 10, Causes 4, ReactionTo 3, NoRelation 3
        let c = corpus(&[
            &[Enables, Enables],
            &[Enables, Enables],
            &[Enables, Enables],
            &[Enables, Enables, Causes],
            &[Enables, Enables, Causes],
            &[Causes, ReactionTo, NoRelation],
            &[Causes, ReactionTo, NoRelation],
            &[ReactionTo, NoRelation],
        ]);
        let u = undersample(&c, 11).unwrap();
        let h = relation_histogram(&u.corpus);
        assert!(h[&Enables] <= 6);
        assert!(u.corpus.meta.contains_key("undersample"));
    }

    fn arb_corpus() -> impl Strategy<Value = Corpus> {
        let label = prop::sample::select(LabelSpace::vidsitu().labels().to_vec());
        prop::collection::vec(prop::collection::vec(label, 1..=4), 2..20).prop_map(|rows| {
            Corpus::new(
                LabelSpace::vidsitu(),
                rows.iter().enumerate().map(|(i, r)| seq(&format!("s{i}"), r)).collect(),
            )
        })
    }

    proptest! {
        #[test]
        fn undersample_only_removes_whole_sequences(c in arb_corpus(), seed in 0u64..50) {
            let before = relation_histogram(&c);
            if let Ok(u) = undersample(&c, seed) {
                let after = relation_histogram(&u.corpus);
                for (l, n) in &after {
                    prop_assert!(*n <= before.get(l).copied().unwrap_or(0));
                }
                for s in &u.corpus.sequences {
                    prop_assert!(c.sequences.contains(s));
                }
                let mut counts: Vec<usize> = after.values().copied().filter(|&n| n > 0).collect();
                counts.sort_unstable_by(|a, b| b.cmp(a));
                if counts.len() >= 2 {
                    prop_assert!(counts[0] <= counts[1] + 4);
                }
                prop_assert_eq!(undersample(&c, seed).unwrap(), u);
            }
        }
    }
}
