//! Top-1 and class-macro-averaged Top-1 accuracy.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SsrError};
use crate::event::{Corpus, RelationLabel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub label: RelationLabel,
    pub support: usize,
    pub correct: usize,
    /// `None` when the class never occurs in the gold data.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub top1: f64,
    pub macro_top1: f64,
    pub per_class_accuracy: Vec<ClassAccuracy>,
    /// Rows are gold labels, columns predictions, both in label-space order.
    pub confusion: Vec<Vec<usize>>,
    pub n: usize,
    /// Classes excluded from the macro mean because they have no support.
    pub absent_classes: Vec<RelationLabel>,
}

impl EvalReport {
    pub fn class_accuracy(&self, label: RelationLabel) -> Option<f64> {
        self.per_class_accuracy
            .iter()
            .find(|c| c.label == label)
            .and_then(|c| c.accuracy)
    }
}

/// Scores `predictions`, given in [`Corpus::instances`] order, against the
/// gold relations of `gold`.
pub fn evaluate(predictions: &[RelationLabel], gold: &Corpus) -> Result<EvalReport> {
    let n = gold.num_instances();
    if predictions.len() != n {
        return Err(SsrError::CountMismatch {
            expected: n,
            found: predictions.len(),
        });
    }
    let space = &gold.label_space;
    let c = space.size();
    let mut confusion = vec![vec![0usize; c]; c];
    for ((_, rel), &pred) in gold.instances().zip(predictions) {
        let g = space.require(rel.label)?;
        let p = space.require(pred)?;
        confusion[g][p] += 1;
    }
    let mut per_class = Vec::with_capacity(c);
    let mut absent = Vec::new();
    let mut defined = Vec::new();
    for (i, &label) in space.labels().iter().enumerate() {
        let support: usize = confusion[i].iter().sum();
        let correct = confusion[i][i];
        let accuracy = (support > 0).then(|| correct as f64 / support as f64);
        match accuracy {
            Some(a) => defined.push(a),
            None => absent.push(label),
        }
        per_class.push(ClassAccuracy {
            label,
            support,
            correct,
            accuracy,
        });
    }
    let trace: usize = (0..c).map(|i| confusion[i][i]).sum();
    Ok(EvalReport {
        top1: if n == 0 { 0.0 } else { trace as f64 / n as f64 },
        macro_top1: if defined.is_empty() {
            0.0
        } else {
            defined.iter().sum::<f64>() / defined.len() as f64
        },
        per_class_accuracy: per_class,
        confusion,
        n,
        absent_classes: absent,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub macro_top1: f64,
    pub top1: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

/// Rows sorted by macro accuracy, best first; equal scores keep name order.
pub fn compare(reports: &[(String, EvalReport)]) -> ComparisonTable {
    let mut rows: Vec<ComparisonRow> = reports
        .iter()
        .map(|(name, r)| ComparisonRow {
            name: name.clone(),
            macro_top1: r.macro_top1,
            top1: r.top1,
            n: r.n,
        })
        .collect();
    rows.sort_by(|a, b| b.macro_top1.total_cmp(&a.macro_top1).then_with(|| a.name.cmp(&b.name)));
    ComparisonTable { rows }
}

impl ComparisonTable {
    /// Fixed-width text table with accuracies in percent.
    pub fn render(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(4);
        let mut out = format!("{:<width$}  {:>9}  {:>9}  {:>7}\n", "name", "macro", "top1", "n");
        for r in &self.rows {
            out.push_str(&format!(
                "{:<width$}  {:>9.2}  {:>9.2}  {:>7}\n",
                r.name,
                r.macro_top1 * 100.0,
                r.top1 * 100.0,
                r.n
            ));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,macro_top1,top1,n\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.name, r.macro_top1, r.top1, r.n));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{Event, EventSequence, LabelSpace};
    use proptest::prelude::*;
    use RelationLabel::*;

    fn gold(labels: &[RelationLabel]) -> Corpus {
        let seqs = labels
            .chunks(4)
            .enumerate()
            .map(|(i, chunk)| {
                let mut s = EventSequence::new(format!("s{i}"), (0..5).map(|_| Event::verb_only("v")).collect());
                for (&t, &l) in [1, 2, 4, 5].iter().zip(chunk) {
                    s = s.with_relation(t, l);
                }
                s
            })
            .collect();
        Corpus::new(LabelSpace::vidsitu(), seqs)
    }

    #[test]
    fn perfect_predictions() {
        let labels = [Causes, Enables, ReactionTo, NoRelation, Enables];
        let r = evaluate(&labels, &gold(&labels)).unwrap();
        assert_eq!(r.top1, 1.0);
        assert_eq!(r.macro_top1, 1.0);
    }

    #[test]
    fn dominant_only_scores_a_quarter() {
        let labels = [Causes, Enables, ReactionTo, NoRelation, Enables, Enables];
        let r = evaluate(&[Enables; 6], &gold(&labels)).unwrap();
        assert_eq!(r.macro_top1, 0.25);
        assert_eq!(r.top1, 0.5);
    }

    #[test]
    fn hand_computed_confusion() {
        let g = [
            Causes, Causes, Enables, Enables, ReactionTo, ReactionTo, NoRelation, NoRelation,
        ];
        let p = [
            Causes, Causes, Enables, Causes, Enables, NoRelation, NoRelation, NoRelation,
        ];
        let r = evaluate(&p, &gold(&g)).unwrap();
        let per: Vec<_> = r.per_class_accuracy.iter().map(|c| c.accuracy.unwrap()).collect();
        assert_eq!(per, vec![1.0, 0.5, 0.0, 1.0]);
        assert!((r.macro_top1 - 0.625).abs() < 1e-12);
        assert!((r.top1 - 0.625).abs() < 1e-12);
        assert_eq!(r.confusion[1], vec![1, 1, 0, 0]);
        assert_eq!(r.confusion[2], vec![0, 1, 0, 1]);
    }

    #[test]
    fn absent_classes_are_excluded() {
        let r = evaluate(&[Causes, Enables], &gold(&[Causes, Causes])).unwrap();
        assert_eq!(r.absent_classes, vec![Enables, ReactionTo, NoRelation]);
        assert_eq!(r.macro_top1, 0.5);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            evaluate(&[Causes], &gold(&[])),
            Err(SsrError::CountMismatch { .. })
        ));
        assert!(matches!(
            evaluate(&[Before], &gold(&[Causes])),
            Err(SsrError::LabelOutsideSpace { .. })
        ));
    }

    fn report(macro_top1: f64) -> EvalReport {
        EvalReport {
            top1: 0.5,
            macro_top1,
            per_class_accuracy: vec![],
            confusion: vec![],
            n: 10,
            absent_classes: vec![],
        }
    }

    #[test]
    fn comparison_order() {
        let t = compare(&[("solo".into(), report(0.3))]);
        assert_eq!(t.rows.len(), 1);
        let t = compare(&[
            ("b".into(), report(0.4)),
            ("a".into(), report(0.4)),
            ("c".into(), report(0.9)),
        ]);
        let names: Vec<_> = t.rows.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, ["c", "a", "b"]);
        assert!(t.render().lines().nth(1).unwrap().starts_with("c "));
        assert_eq!(t.to_csv().lines().count(), 4);
    }

    fn arb_label() -> impl Strategy<Value = RelationLabel> {
        proptest::sample::select(vec![Causes, Enables, ReactionTo, NoRelation])
    }

    proptest! {
        #[test]
        fn report_invariants(pairs in proptest::collection::vec((arb_label(), arb_label()), 1..60)) {
            let (g, p): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
            let r = evaluate(&p, &gold(&g)).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.top1));
            prop_assert!((0.0..=1.0).contains(&r.macro_top1));
            prop_assert_eq!(r.confusion.iter().flatten().sum::<usize>(), r.n);
        }

        #[test]
        fn permutation_invariance(pairs in proptest::collection::vec((arb_label(), arb_label()), 1..40), seed in 0u64..1000) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let (g1, p1): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let (g2, p2): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
            let a = evaluate(&p1, &gold(&g1)).unwrap();
            let b = evaluate(&p2, &gold(&g2)).unwrap();
            prop_assert_eq!(a.confusion, b.confusion);
            prop_assert_eq!(a.top1, b.top1);
            prop_assert_eq!(a.macro_top1, b.macro_top1);
        }

        #[test]
        fn equal_support_macro_equals_top1(preds in proptest::collection::vec(arb_label(), 8)) {
            let g = [Causes, Enables, ReactionTo, NoRelation, Causes, Enables, ReactionTo, NoRelation];
            let r = evaluate(&preds, &gold(&g)).unwrap();
            prop_assert!((r.macro_top1 - r.top1).abs() < 1e-12);
        }
    }
}
