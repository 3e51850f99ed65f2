//! Confusion matrices, per-class and support-weighted F1, accuracy.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are gold classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self { n: num_classes, counts: vec![0; num_classes * num_classes] }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::ShapeMismatch("confusion matrix must be square".into()));
        }
        Ok(Self { n, counts: rows.concat() })
    }

    pub fn num_classes(&self) -> usize {
        self.n
    }

    pub fn get(&self, gold: usize, pred: usize) -> u64 {
        self.counts[gold * self.n + pred]
    }

    pub fn add(&mut self, gold: usize, pred: usize) {
        self.counts[gold * self.n + pred] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, gold: usize) -> u64 {
        (0..self.n).map(|p| self.get(gold, p)).sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.n).map(|g| self.get(g, pred)).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n).map(|c| self.get(c, c)).sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.n.max(1)).map(<[u64]>::to_vec).collect()
    }
}

/// Tallies paired gold/predicted labels.
pub fn confusion(gold: &[usize], pred: &[usize], num_classes: usize) -> Result<ConfusionMatrix> {
    if gold.len() != pred.len() {
        return Err(Error::LengthMismatch { left: gold.len(), right: pred.len() });
    }
    let mut cm = ConfusionMatrix::new(num_classes);
    for (&g, &p) in gold.iter().zip(pred) {
        if g >= num_classes || p >= num_classes {
            return Err(Error::InvalidArgument(format!("label out of range ({g}, {p})")));
        }
        cm.add(g, p);
    }
    Ok(cm)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassScores>,
    pub weighted_f1: f64,
    pub accuracy: f64,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Per-class P/R/F1 (0 when undefined), support-weighted F1 and accuracy.
pub fn report(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyMatrix);
    }
    let per_class: Vec<ClassScores> = (0..cm.num_classes())
        .map(|c| {
            let tp = cm.get(c, c);
            let precision = ratio(tp, cm.col_sum(c));
            let recall = ratio(tp, cm.row_sum(c));
            let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
            ClassScores { precision, recall, f1, support: cm.row_sum(c) }
        })
        .collect();
    let weighted_f1 = per_class.iter().map(|s| s.support as f64 / total as f64 * s.f1).sum();
    Ok(MetricsReport { per_class, weighted_f1, accuracy: ratio(cm.trace(), total) })
}

/// Metrics record written per task, fold and restart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub task: String,
    pub fold: Option<usize>,
    pub restart: Option<usize>,
    pub per_class: IndexMap<String, ClassScores>,
    pub weighted_f1: f64,
    pub accuracy: f64,
}

impl MetricsRecord {
    pub fn new(task: &str, fold: Option<usize>, restart: Option<usize>, classes: &[String], r: &MetricsReport) -> Self {
        Self {
            task: task.to_string(),
            fold,
            restart,
            per_class: classes.iter().cloned().zip(r.per_class.iter().cloned()).collect(),
            weighted_f1: r.weighted_f1,
            accuracy: r.accuracy,
        }
    }
}

/// Arithmetic mean of weighted F1 and accuracy over runs.
pub fn mean_scores<'a, I: IntoIterator<Item = &'a MetricsReport>>(reports: I) -> Option<(f64, f64)> {
    let (mut f, mut a, mut n) = (0.0, 0.0, 0usize);
    for r in reports {
        f += r.weighted_f1;
        a += r.accuracy;
        n += 1;
    }
    (n > 0).then(|| (f / n as f64, a / n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn diagonal_and_antidiagonal() {
        let cm = confusion(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        assert_eq!(cm.rows(), vec![vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 1]]);
        let r = report(&cm).unwrap();
        assert_eq!((r.weighted_f1, r.accuracy), (1.0, 1.0));
        assert!(r.per_class.iter().all(|c| c.f1 == 1.0));

        let cm = confusion(&[0, 1], &[1, 0], 2).unwrap();
        assert_eq!(cm.rows(), vec![vec![0, 1], vec![1, 0]]);
        assert!(matches!(confusion(&[0], &[0, 1], 2), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn hand_computed_report() {
        let cm = ConfusionMatrix::from_rows(&[vec![5, 5], vec![0, 10]]).unwrap();
        let r = report(&cm).unwrap();
        assert!((r.per_class[0].f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.per_class[1].precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.per_class[1].f1 - 0.8).abs() < 1e-12);
        assert!((r.weighted_f1 - 0.7333333333333333).abs() < 1e-9);
        assert_eq!(r.accuracy, 0.75);
    }

    #[test]
    fn zero_support_class_has_no_weight() {
        let cm = ConfusionMatrix::from_rows(&[vec![3, 1, 0], vec![0, 0, 0], vec![0, 0, 4]]).unwrap();
        let r = report(&cm).unwrap();
        assert_eq!(r.per_class[1].support, 0);
        assert_eq!(r.per_class[1].f1, 0.0);
        let expected = 0.5 * r.per_class[0].f1 + 0.5 * r.per_class[2].f1;
        assert!((r.weighted_f1 - expected).abs() < 1e-12);
        assert!(matches!(report(&ConfusionMatrix::new(2)), Err(Error::EmptyMatrix)));
    }

    #[test]
    fn row_sums_are_gold_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let gold: Vec<usize> = (0..1000).map(|_| rng.gen_range(0..4)).collect();
        let pred: Vec<usize> = (0..1000).map(|_| rng.gen_range(0..4)).collect();
        let cm = confusion(&gold, &pred, 4).unwrap();
        for c in 0..4 {
            assert_eq!(cm.row_sum(c), gold.iter().filter(|&&g| g == c).count() as u64);
        }
        assert_eq!(cm.total(), 1000);
    }

    proptest! {
        #[test]
        fn accuracy_is_weighted_recall_and_f1_is_bounded(
            pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..200)
        ) {
            let (gold, pred): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let cm = confusion(&gold, &pred, 4).unwrap();
            let r = report(&cm).unwrap();
            let total = cm.total() as f64;
            let wr: f64 = r.per_class.iter().map(|c| c.support as f64 / total * c.recall).sum();
            prop_assert!((wr - r.accuracy).abs() < 1e-12);
            let supported: Vec<f64> = r.per_class.iter().filter(|c| c.support > 0).map(|c| c.f1).collect();
            let lo = supported.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = supported.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(r.weighted_f1 >= lo - 1e-12 && r.weighted_f1 <= hi + 1e-12);
        }

        #[test]
        fn report_is_permutation_equivariant(
            pairs in proptest::collection::vec((0usize..3, 0usize..3), 1..100),
            perm_idx in 0usize..6,
        ) {
            let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            let p = perms[perm_idx];
            let (gold, pred): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let r = report(&confusion(&gold, &pred, 3).unwrap()).unwrap();
            let g2: Vec<_> = gold.iter().map(|&g| p[g]).collect();
            let p2: Vec<_> = pred.iter().map(|&x| p[x]).collect();
            let r2 = report(&confusion(&g2, &p2, 3).unwrap()).unwrap();
            prop_assert!((r.weighted_f1 - r2.weighted_f1).abs() < 1e-12);
            prop_assert_eq!(r.accuracy, r2.accuracy);
            for c in 0..3 {
                prop_assert!((r.per_class[c].f1 - r2.per_class[p[c]].f1).abs() < 1e-12);
            }
        }
    }
}
