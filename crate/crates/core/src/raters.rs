//! Inter-annotator comparison: pairwise F1, Ward clustering of the F1
//! differences, the one-standard-deviation outlier rule and confusion
//! statistics against a consensus mask.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{AnnotationStack, BinaryMask};

/// Symmetric matrix of pairwise F1-scores.
///
/// `precision[i][j] = |Mi & Mj| / |Mi|`, `recall[i][j] = |Mi & Mj| / |Mj|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Matrix {
    pub ids: Vec<String>,
    pub f1: Vec<Vec<f64>>,
    pub precision: Vec<Vec<f64>>,
    pub recall: Vec<Vec<f64>>,
    /// Annotators whose mask is empty within the ROI.
    pub degenerate: Vec<bool>,
}

impl F1Matrix {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// `1 - F` for every pair.
    pub fn diff(&self) -> Vec<Vec<f64>> {
        self.f1
            .iter()
            .map(|row| row.iter().map(|f| 1.0 - f).collect())
            .collect()
    }

    /// Build from a precomputed F1 table, e.g. when replaying published values.
    pub fn from_scores(ids: Vec<String>, f1: Vec<Vec<f64>>) -> Result<Self> {
        let n = ids.len();
        if f1.len() != n || f1.iter().any(|r| r.len() != n) {
            return Err(Error::dims(format!("{n}x{n}"), "ragged matrix"));
        }
        for i in 0..n {
            for j in 0..n {
                let v = f1[i][j];
                if !(0.0..=1.0).contains(&v) || v != f1[j][i] {
                    return Err(Error::Domain(format!(
                        "F1[{i}][{j}] = {v} is not a symmetric score"
                    )));
                }
            }
        }
        Ok(F1Matrix {
            precision: f1.clone(),
            recall: f1.clone(),
            degenerate: vec![false; n],
            ids,
            f1,
        })
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Pairwise F1 between every pair of annotators over the ROI.
pub fn pairwise_f1(stack: &AnnotationStack) -> Result<F1Matrix> {
    let n = stack.len();
    if n < 2 {
        return Err(Error::Argument(
            "pairwise F1 needs at least two annotators".into(),
        ));
    }
    let masks: Vec<Vec<u8>> = stack
        .annotators()
        .iter()
        .map(|a| {
            a.mask
                .as_slice()
                .iter()
                .enumerate()
                .map(|(i, &v)| v & stack.in_roi(i) as u8)
                .collect()
        })
        .collect();
    let sizes: Vec<usize> = masks
        .iter()
        .map(|m| m.iter().map(|&v| v as usize).sum())
        .collect();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    let overlaps: Vec<usize> = pairs
        .par_iter()
        .map(|&(i, j)| {
            masks[i]
                .iter()
                .zip(&masks[j])
                .map(|(&a, &b)| (a & b) as usize)
                .sum()
        })
        .collect();

    let mut f1 = vec![vec![1.0; n]; n];
    let mut precision = vec![vec![1.0; n]; n];
    let mut recall = vec![vec![1.0; n]; n];
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    for (&(i, j), &both) in pairs.iter().zip(&overlaps) {
        let p = ratio(both, sizes[i]);
        let r = ratio(both, sizes[j]);
        let f = f1_score(p, r);
        f1[i][j] = f;
        f1[j][i] = f;
        precision[i][j] = p;
        recall[i][j] = r;
        precision[j][i] = r;
        recall[j][i] = p;
    }
    Ok(F1Matrix {
        ids: stack.ids().into_iter().map(String::from).collect(),
        f1,
        precision,
        recall,
        degenerate: sizes.iter().map(|&s| s == 0).collect(),
    })
}

/// One agglomeration step. Nodes `0..N` are leaves; step `k` creates node `N + k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub labels: Vec<String>,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn n_leaves(&self) -> usize {
        self.labels.len()
    }

    fn height(&self, node: usize) -> f64 {
        if node < self.n_leaves() {
            0.0
        } else {
            self.merges[node - self.n_leaves()].height
        }
    }

    /// Newick text; branch lengths are height differences so the root-to-leaf
    /// path length equals the root merge height.
    pub fn to_newick(&self) -> String {
        let mut out = String::new();
        match self.merges.last() {
            None => {
                if let Some(l) = self.labels.first() {
                    out.push_str(&newick_label(l));
                }
            }
            Some(_) => self.write_node(self.n_leaves() + self.merges.len() - 1, &mut out),
        }
        out.push(';');
        out
    }

    fn write_node(&self, node: usize, out: &mut String) {
        if node < self.n_leaves() {
            out.push_str(&newick_label(&self.labels[node]));
            return;
        }
        let m = self.merges[node - self.n_leaves()];
        out.push('(');
        for (k, child) in [m.left, m.right].into_iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            self.write_node(child, out);
            let _ = write!(out, ":{:.6}", m.height - self.height(child));
        }
        out.push(')');
    }
}

fn newick_label(label: &str) -> String {
    if label.chars().any(|c| "()[]':;, \t".contains(c)) {
        format!("'{}'", label.replace('\'', "''"))
    } else {
        label.to_string()
    }
}

/// Ward clustering of the F1 differences `1 - F`.
pub fn ward_cluster(matrix: &F1Matrix) -> Result<Dendrogram> {
    if matrix.len() < 2 {
        return Err(Error::Argument(
            "clustering needs at least two annotators".into(),
        ));
    }
    Ok(Dendrogram {
        labels: matrix.ids.clone(),
        merges: ward_linkage(&matrix.diff()),
    })
}

/// Agglomerative clustering with the Lance-Williams form of Ward's update:
/// `d(i+j, k) = [(ni+nk) d(i,k) + (nj+nk) d(j,k) - nk d(i,j)] / (ni+nj+nk)`.
///
/// Among equal minima the pair with the smallest `(left, right)` node ids wins.
pub fn ward_linkage(dist: &[Vec<f64>]) -> Vec<Merge> {
    let n = dist.len();
    let total = 2 * n - 1;
    let mut d = vec![vec![f64::INFINITY; total]; total];
    for i in 0..n {
        for j in 0..n {
            d[i][j] = dist[i][j];
        }
    }
    let mut size = vec![1usize; total];
    let mut active: Vec<usize> = (0..n).collect();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for step in 0..n.saturating_sub(1) {
        let mut best: Option<(usize, usize, f64)> = None;
        for (ai, &a) in active.iter().enumerate() {
            for &b in &active[ai + 1..] {
                let v = d[a][b];
                if best.is_none_or(|(_, _, bv)| v < bv) {
                    best = Some((a, b, v));
                }
            }
        }
        let (a, b, h) = best.expect("at least two active clusters");
        let new = n + step;
        let (na, nb) = (size[a] as f64, size[b] as f64);
        for &k in &active {
            if k == a || k == b {
                continue;
            }
            let nk = size[k] as f64;
            let v = ((na + nk) * d[a][k] + (nb + nk) * d[b][k] - nk * d[a][b]) / (na + nb + nk);
            d[new][k] = v;
            d[k][new] = v;
        }
        size[new] = size[a] + size[b];
        active.retain(|&k| k != a && k != b);
        active.push(new);
        merges.push(Merge {
            left: a,
            right: b,
            height: h,
            size: size[new],
        });
    }
    merges
}

/// Which standard deviation the outlier rule uses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum StdForm {
    #[default]
    Population,
    Sample,
}

impl StdForm {
    pub fn std(self, values: &[f64]) -> f64 {
        self.mean_std(values).1
    }

    /// Mean and standard deviation, summed in ascending order so the result
    /// does not depend on the order of `values`.
    pub fn mean_std(self, values: &[f64]) -> (f64, f64) {
        let sorted = sorted(values);
        let n = sorted.len() as f64;
        if sorted.is_empty() {
            return (0.0, 0.0);
        }
        let mean = sorted.iter().sum::<f64>() / n;
        let ss: f64 = sorted.iter().map(|v| (v - mean) * (v - mean)).sum();
        let den = match self {
            StdForm::Population => n,
            StdForm::Sample => n - 1.0,
        };
        let std = if den <= 0.0 { 0.0 } else { (ss / den).sqrt() };
        (mean, std)
    }
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierReport {
    pub ids: Vec<String>,
    pub mean_differences: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub threshold: f64,
    pub outliers: Vec<String>,
    pub warning: Option<String>,
}

/// Flag annotators whose mean F1 difference to everyone else exceeds the
/// cohort average by more than one standard deviation.
pub fn detect_outliers(matrix: &F1Matrix, form: StdForm) -> OutlierReport {
    let n = matrix.len();
    let diffs: Vec<f64> = (0..n)
        .map(|i| {
            if n < 2 {
                return 0.0;
            }
            let row: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| 1.0 - matrix.f1[i][j])
                .collect();
            sorted(&row).iter().sum::<f64>() / (n - 1) as f64
        })
        .collect();
    outliers_from_mean_differences(&matrix.ids, &diffs, form)
}

/// The outlier rule applied to precomputed mean differences.
pub fn outliers_from_mean_differences(
    ids: &[String],
    diffs: &[f64],
    form: StdForm,
) -> OutlierReport {
    let n = diffs.len();
    let (mean, std) = form.mean_std(diffs);
    let threshold = mean + std;
    let mut report = OutlierReport {
        ids: ids.to_vec(),
        mean_differences: diffs.to_vec(),
        mean,
        std,
        threshold,
        outliers: Vec::new(),
        warning: None,
    };
    if n < 3 {
        report.warning = Some(format!(
            "no outliers can be identified with only {n} annotators"
        ));
        return report;
    }
    let spread = diffs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - diffs.iter().cloned().fold(f64::INFINITY, f64::min);
    if spread > 0.0 {
        report.outliers = ids
            .iter()
            .zip(diffs)
            .filter(|(_, &m)| m > threshold)
            .map(|(id, _)| id.clone())
            .collect();
    }
    report
}

/// 2x2 confusion counts of a mask against a reference.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl Confusion {
    /// Counts of `mask` against `reference` over the ROI.
    pub fn between(
        mask: &BinaryMask,
        reference: &BinaryMask,
        roi: Option<&BinaryMask>,
    ) -> Result<Self> {
        mask.grid().check(&reference.grid())?;
        if let Some(r) = roi {
            mask.grid().check(&r.grid())?;
        }
        let mut c = Confusion::default();
        for i in 0..mask.grid().len() {
            if roi.is_some_and(|r| !r.at(i)) {
                continue;
            }
            match (mask.at(i), reference.at(i)) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn sensitivity(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn specificity(&self) -> Option<f64> {
        ratio(self.tn, self.tn + self.fp)
    }

    pub fn ppv(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn npv(&self) -> Option<f64> {
        ratio(self.tn, self.tn + self.fn_)
    }

    pub fn f1(&self) -> Option<f64> {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    /// Cohen's kappa; undefined when chance agreement is total.
    pub fn kappa(&self) -> Option<f64> {
        let n = self.total() as f64;
        if n == 0.0 {
            return None;
        }
        let (tp, fp, fn_, tn) = (
            self.tp as f64,
            self.fp as f64,
            self.fn_ as f64,
            self.tn as f64,
        );
        let po = (tp + tn) / n;
        let pe = ((tp + fp) * (tp + fn_) + (fn_ + tn) * (fp + tn)) / (n * n);
        if pe >= 1.0 {
            None
        } else {
            Some((po - pe) / (1.0 - pe))
        }
    }
}

/// Statistics of one annotator against the consensus. `None` marks a
/// statistic whose denominator is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaterStats {
    pub id: String,
    pub counts: Confusion,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
    pub kappa: Option<f64>,
}

pub fn rater_stats(stack: &AnnotationStack, consensus: &BinaryMask) -> Result<Vec<RaterStats>> {
    stack.grid().check(&consensus.grid())?;
    stack
        .annotators()
        .iter()
        .map(|a| {
            let c = Confusion::between(&a.mask, consensus, stack.roi())?;
            Ok(RaterStats {
                id: a.id.clone(),
                counts: c,
                sensitivity: c.sensitivity(),
                specificity: c.specificity(),
                ppv: c.ppv(),
                npv: c.npv(),
                kappa: c.kappa(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::{agreement_map, threshold_consensus, ConsensusParams, ImageGrid};
    use proptest::prelude::*;

    fn mask_of(len: usize, set: &[usize]) -> BinaryMask {
        let g = ImageGrid::new(len, 1).unwrap();
        BinaryMask::from_fn(g, |x, _| set.contains(&x))
    }

    #[test]
    fn f1_examples() {
        let a = mask_of(16, &[0, 1, 2, 3]);
        let b = mask_of(16, &[2, 3, 4, 5, 6, 7, 8, 9]);
        let s =
            AnnotationStack::from_masks([("i", a.clone()), ("j", b), ("k", a.clone())]).unwrap();
        let m = pairwise_f1(&s).unwrap();
        assert_eq!(m.precision[0][1], 0.5);
        assert_eq!(m.recall[0][1], 0.25);
        assert!((m.f1[0][1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.f1[0][2], 1.0);
        assert_eq!(m.f1[1][1], 1.0);

        let s = AnnotationStack::from_masks([("i", mask_of(4, &[0])), ("j", mask_of(4, &[3]))])
            .unwrap();
        assert_eq!(pairwise_f1(&s).unwrap().f1[0][1], 0.0);
    }

    #[test]
    fn empty_mask_is_degenerate() {
        let s =
            AnnotationStack::from_masks([("i", mask_of(4, &[])), ("j", mask_of(4, &[1]))]).unwrap();
        let m = pairwise_f1(&s).unwrap();
        assert_eq!(m.degenerate, vec![true, false]);
        assert_eq!(m.f1[0][1], 0.0);
        assert_eq!(m.f1[0][0], 1.0);
    }

    #[test]
    fn ward_two_leaves() {
        let m = F1Matrix::from_scores(
            vec!["a".into(), "b".into()],
            vec![vec![1.0, 0.7], vec![0.7, 1.0]],
        )
        .unwrap();
        let d = ward_cluster(&m).unwrap();
        assert_eq!(d.merges.len(), 1);
        assert!((d.merges[0].height - 0.3).abs() < 1e-15);
        assert_eq!(d.to_newick(), "(a:0.300000,b:0.300000);");
    }

    #[test]
    fn ward_tie_takes_lowest_pair() {
        let f = vec![
            vec![1.0, 0.5, 0.5],
            vec![0.5, 1.0, 0.5],
            vec![0.5, 0.5, 1.0],
        ];
        let m = F1Matrix::from_scores(vec!["a".into(), "b".into(), "c".into()], f).unwrap();
        let d = ward_cluster(&m).unwrap();
        assert_eq!((d.merges[0].left, d.merges[0].right), (0, 1));
        assert_eq!((d.merges[1].left, d.merges[1].right), (2, 3));
        // d(ab, c) = (2*0.5 + 2*0.5 - 0.5) / 3
        assert!((d.merges[1].height - 0.5).abs() < 1e-15);
    }

    #[test]
    fn outlier_rule_examples() {
        let ids: Vec<String> = (1..=5).map(|i| format!("A{i}")).collect();
        let r = outliers_from_mean_differences(&ids, &[0.3; 5], StdForm::Population);
        assert!(r.outliers.is_empty());

        let r = outliers_from_mean_differences(&ids[..2], &[0.1, 0.9], StdForm::Population);
        assert!(r.outliers.is_empty());
        assert!(r.warning.is_some());
    }

    #[test]
    fn std_forms() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert!((StdForm::Population.std(&v) - 1.25f64.sqrt()).abs() < 1e-15);
        assert!((StdForm::Sample.std(&v) - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn confusion_by_hand() {
        let c = Confusion {
            tp: 8,
            fp: 2,
            fn_: 4,
            tn: 86,
        };
        assert!((c.sensitivity().unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((c.specificity().unwrap() - 86.0 / 88.0).abs() < 1e-15);
        assert!((c.ppv().unwrap() - 0.8).abs() < 1e-15);
        assert!((c.npv().unwrap() - 86.0 / 90.0).abs() < 1e-15);
        // po = 0.94, pe = (10*12 + 90*88) / 100^2 = 0.804
        let expected = (0.94 - 0.804) / (1.0 - 0.804);
        assert!((c.kappa().unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn stats_against_identical_consensus() {
        let m = mask_of(6, &[1, 2]);
        let s = AnnotationStack::from_masks([("a", m.clone())]).unwrap();
        let st = &rater_stats(&s, &m).unwrap()[0];
        for v in [st.sensitivity, st.specificity, st.ppv, st.npv, st.kappa] {
            assert_eq!(v, Some(1.0));
        }
    }

    #[test]
    fn two_annotators_half_consensus_is_union() {
        let s = AnnotationStack::from_masks([
            ("a", mask_of(8, &[0, 1, 2])),
            ("b", mask_of(8, &[2, 3, 4, 5])),
        ])
        .unwrap();
        let cons = threshold_consensus(&agreement_map(&s), ConsensusParams::new(0.5).unwrap());
        for st in rater_stats(&s, &cons).unwrap() {
            assert_eq!(st.specificity, Some(1.0));
            assert_eq!(st.ppv, Some(1.0));
        }
    }

    #[test]
    fn degenerate_consensus_flags_undefined() {
        let s = AnnotationStack::from_masks([("a", mask_of(4, &[]))]).unwrap();
        let st = &rater_stats(&s, &mask_of(4, &[])).unwrap()[0];
        assert_eq!(st.sensitivity, None);
        assert_eq!(st.ppv, None);
        assert_eq!(st.kappa, None);
        assert_eq!(st.specificity, Some(1.0));
    }

    proptest! {
        #[test]
        fn ward_heights_non_decreasing(vals in proptest::collection::vec(0.0f64..1.0, 15)) {
            let n = 6;
            let mut d = vec![vec![0.0; n]; n];
            let mut k = 0;
            for i in 0..n {
                for j in i + 1..n {
                    d[i][j] = vals[k];
                    d[j][i] = vals[k];
                    k += 1;
                }
            }
            let merges = ward_linkage(&d);
            prop_assert_eq!(merges.len(), n - 1);
            for w in merges.windows(2) {
                prop_assert!(w[1].height >= w[0].height - 1e-12);
            }
            prop_assert_eq!(merges.last().unwrap().size, n);
        }

        #[test]
        fn kappa_symmetric_under_relabelling(tp in 0u64..50, fp in 0u64..50, fn_ in 0u64..50, tn in 0u64..50) {
            let c = Confusion { tp, fp, fn_, tn };
            let flipped = Confusion { tp: tn, fp: fn_, fn_: fp, tn: tp };
            match (c.kappa(), flipped.kappa()) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
                (a, b) => prop_assert_eq!(a.is_none(), b.is_none()),
            }
        }
    }
}
