//! Correlation of responses with agreement, detector ranking under several
//! ground truths, and AUC bounds from the vote ground truths.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::curve::{PbarRCurve, Thresholds};
use super::matching::{MatchPlan, Matcher};
use super::SkewSpec;
use crate::error::{Error, Result};
use crate::features::{pearson, CorrelationResult, ScalarField};
use crate::fusion::{fuse_preset, VotePreset};
use crate::mask::{AgreementMap, AnnotationStack, BinaryMask};

fn correlate(
    resp: &ScalarField,
    agreement: &AgreementMap,
    keep: impl Fn(usize) -> bool,
) -> Result<CorrelationResult> {
    resp.grid().check(&agreement.grid())?;
    let idx: Vec<usize> = (0..resp.grid().len()).filter(|&i| keep(i)).collect();
    let xs: Vec<f64> = idx.iter().map(|&i| resp.values()[i]).collect();
    let ys: Vec<f64> = idx.iter().map(|&i| agreement.counts()[i] as f64).collect();
    pearson(&xs, &ys)
}

/// Correlation of response and agreement over pixels marked by anyone.
pub fn cco(resp: &ScalarField, agreement: &AgreementMap) -> Result<CorrelationResult> {
    if agreement.counts().iter().all(|&a| a == 0) {
        return Err(Error::EmptyAnnotation);
    }
    correlate(resp, agreement, |i| agreement.counts()[i] > 0)
}

/// Correlation of response and agreement over the whole ROI.
pub fn cci(resp: &ScalarField, agreement: &AgreementMap) -> Result<CorrelationResult> {
    correlate(resp, agreement, |i| agreement.in_roi(i))
}

pub fn cco_cci(
    resp: &ScalarField,
    agreement: &AgreementMap,
) -> Result<(CorrelationResult, CorrelationResult)> {
    Ok((cco(resp, agreement)?, cci(resp, agreement)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub detector: String,
    pub auc: f64,
    pub rank: usize,
    /// Another detector has exactly the same AUC; the order between them
    /// is by name.
    pub tied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtRanking {
    pub gt: String,
    pub entries: Vec<RankEntry>,
}

/// Ground truths inducing the same detector order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistinctRanking {
    pub order: Vec<String>,
    pub gts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub detectors: Vec<String>,
    pub gts: Vec<String>,
    pub per_gt: Vec<GtRanking>,
    pub distinct: Vec<DistinctRanking>,
}

fn unique_names<'a>(names: impl Iterator<Item = &'a str>, what: &str) -> Result<()> {
    let mut seen = BTreeSet::new();
    for n in names {
        if !seen.insert(n) {
            return Err(Error::Argument(format!("duplicate {what} name `{n}`")));
        }
    }
    Ok(())
}

/// Rank detectors by AUC under every ground truth. Detectors are processed
/// in name order, so the result does not depend on input order.
pub fn rank_detectors(
    responses: &[(String, ScalarField)],
    gts: &[(String, BinaryMask)],
    roi: Option<&BinaryMask>,
    plan: &MatchPlan,
    skew: &SkewSpec,
    thresholds: Thresholds,
) -> Result<Ranking> {
    if responses.is_empty() || gts.is_empty() {
        return Err(Error::Argument(
            "ranking needs at least one detector and one ground truth".into(),
        ));
    }
    unique_names(responses.iter().map(|(n, _)| n.as_str()), "detector")?;
    unique_names(gts.iter().map(|(n, _)| n.as_str()), "ground truth")?;
    let mut detectors: Vec<&(String, ScalarField)> = responses.iter().collect();
    detectors.sort_by(|a, b| a.0.cmp(&b.0));

    let jobs: Vec<(usize, usize)> = (0..gts.len())
        .flat_map(|g| (0..detectors.len()).map(move |d| (g, d)))
        .collect();
    let aucs: Vec<f64> = jobs
        .par_iter()
        .map(|&(g, d)| {
            let matcher = Matcher::new(&detectors[d].1, &gts[g].1, roi, plan)?;
            let range = skew.resolve(matcher.positives(), matcher.negatives())?;
            Ok(PbarRCurve::from_matcher(&matcher, &range, thresholds)?.auc)
        })
        .collect::<Result<_>>()?;

    let mut per_gt = Vec::new();
    let mut distinct: Vec<DistinctRanking> = Vec::new();
    for (g, (gt_name, _)) in gts.iter().enumerate() {
        let row = &aucs[g * detectors.len()..(g + 1) * detectors.len()];
        let mut order: Vec<usize> = (0..detectors.len()).collect();
        order.sort_by(|&a, &b| {
            row[b]
                .total_cmp(&row[a])
                .then_with(|| detectors[a].0.cmp(&detectors[b].0))
        });
        let entries: Vec<RankEntry> = order
            .iter()
            .enumerate()
            .map(|(k, &d)| RankEntry {
                detector: detectors[d].0.clone(),
                auc: row[d],
                rank: k + 1,
                tied: order.iter().any(|&o| o != d && row[o] == row[d]),
            })
            .collect();
        let names: Vec<String> = entries.iter().map(|e| e.detector.clone()).collect();
        match distinct.iter_mut().find(|r| r.order == names) {
            Some(r) => r.gts.push(gt_name.clone()),
            None => distinct.push(DistinctRanking {
                order: names,
                gts: vec![gt_name.clone()],
            }),
        }
        per_gt.push(GtRanking {
            gt: gt_name.clone(),
            entries,
        });
    }
    Ok(Ranking {
        detectors: detectors.iter().map(|d| d.0.clone()).collect(),
        gts: gts.iter().map(|g| g.0.clone()).collect(),
        per_gt,
        distinct,
    })
}

/// Curves against the most and least permissive vote ground truths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceBounds {
    /// Against Any-GT.
    pub lower: PbarRCurve,
    /// Against 0.75-GT.
    pub upper: PbarRCurve,
}

impl PerformanceBounds {
    /// `(min, max)` of the two AUCs.
    pub fn interval(&self) -> (f64, f64) {
        let (a, b) = (self.lower.auc, self.upper.auc);
        (a.min(b), a.max(b))
    }

    pub fn contains(&self, auc: f64) -> bool {
        let (lo, hi) = self.interval();
        lo <= auc && auc <= hi
    }
}

pub fn performance_bounds(
    resp: &ScalarField,
    stack: &AnnotationStack,
    plan: &MatchPlan,
    skew: &SkewSpec,
    thresholds: Thresholds,
) -> Result<PerformanceBounds> {
    let curve = |preset| -> Result<PbarRCurve> {
        let gt = fuse_preset(stack, preset)?;
        let matcher = Matcher::new(resp, &gt, stack.roi(), plan)?;
        let range = skew.resolve(matcher.positives(), matcher.negatives())?;
        PbarRCurve::from_matcher(&matcher, &range, thresholds)
    };
    Ok(PerformanceBounds {
        lower: curve(VotePreset::Any)?,
        upper: curve(VotePreset::ThreeQuarters)?,
    })
}

/// Length of the intersection of two intervals over the length of their
/// union; two identical points overlap fully.
pub fn interval_overlap(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (a0, a1) = (a.0.min(a.1), a.0.max(a.1));
    let (b0, b1) = (b.0.min(b.1), b.0.max(b.1));
    let inter = (a1.min(b1) - a0.max(b0)).max(0.0);
    let union = (a1 - a0) + (b1 - b0) - inter;
    if union > 0.0 {
        inter / union
    } else if a0 == b0 {
        1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{MatchTolerance, Phi};
    use crate::mask::{agreement_map, ImageGrid};

    fn grid(n: usize) -> ImageGrid {
        ImageGrid::new(n, 1).unwrap()
    }

    fn field(v: &[f64]) -> ScalarField {
        ScalarField::new(grid(v.len()), v.to_vec()).unwrap()
    }

    fn mask(bits: &[u8]) -> BinaryMask {
        BinaryMask::from_vec(grid(bits.len()), bits.to_vec()).unwrap()
    }

    fn skew() -> SkewSpec {
        SkewSpec {
            pi1: 0.0,
            pi2: 1.0,
            phi: Phi::Dataset,
        }
    }

    #[test]
    fn cco_and_cci_on_a_six_pixel_fixture() {
        let stack = AnnotationStack::from_masks([
            ("a", mask(&[1, 1, 1, 0, 0, 0])),
            ("b", mask(&[1, 1, 0, 0, 0, 0])),
            ("c", mask(&[1, 0, 0, 0, 0, 0])),
        ])
        .unwrap();
        let agreement = agreement_map(&stack);
        let resp = field(&[0.9, 0.8, 0.1, 0.2, 0.0, 0.4]);
        let (o, i) = cco_cci(&resp, &agreement).unwrap();
        // C = first three pixels: A = [3, 2, 1], resp = [0.9, 0.8, 0.1]
        assert!((o.r - 0.8 / 0.76f64.sqrt()).abs() < 1e-12, "{}", o.r);
        assert_eq!(o.n, 3);
        // A = [3, 2, 1, 0, 0, 0], resp mean 0.4: sxy = 2, sxx = 8, syy = 0.7
        assert!((i.r - 2.0 / 5.6f64.sqrt()).abs() < 1e-12, "{}", i.r);
        assert_eq!(i.n, 6);
    }

    #[test]
    fn cco_undefined_for_constant_response_inside_marks() {
        let stack =
            AnnotationStack::from_masks([("a", mask(&[1, 1, 1, 0])), ("b", mask(&[1, 0, 0, 0]))])
                .unwrap();
        let agreement = agreement_map(&stack);
        let resp = field(&[0.5, 0.5, 0.5, 0.1]);
        assert!(matches!(
            cco(&resp, &agreement),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(cci(&resp, &agreement).is_ok());
    }

    #[test]
    fn cci_is_one_for_proportional_response() {
        let stack =
            AnnotationStack::from_masks([("a", mask(&[1, 1, 0, 0])), ("b", mask(&[1, 0, 0, 1]))])
                .unwrap();
        let agreement = agreement_map(&stack);
        let resp = field(&[1.0, 0.5, 0.0, 0.5]);
        assert!((cci(&resp, &agreement).unwrap().r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ranking_flips_between_ground_truths() {
        let gt1 = mask(&[1, 1, 0, 0, 0, 0]);
        let gt2 = mask(&[0, 0, 1, 1, 0, 0]);
        let a = field(&[0.9, 0.8, 0.1, 0.2, 0.0, 0.0]);
        let b = field(&[0.1, 0.2, 0.9, 0.8, 0.0, 0.0]);
        let plan = MatchPlan::whole(grid(6), MatchTolerance::exact());
        let responses = vec![("B".to_string(), b), ("A".to_string(), a)];
        let gts = vec![("gt1".to_string(), gt1), ("gt2".to_string(), gt2)];
        let r = rank_detectors(
            &responses,
            &gts,
            None,
            &plan,
            &skew(),
            Thresholds::default(),
        )
        .unwrap();
        assert_eq!(r.distinct.len(), 2);
        assert_eq!(r.per_gt[0].entries[0].detector, "A");
        assert_eq!(r.per_gt[1].entries[0].detector, "B");
        let swapped: Vec<_> = responses.into_iter().rev().collect();
        let r2 =
            rank_detectors(&swapped, &gts, None, &plan, &skew(), Thresholds::default()).unwrap();
        assert_eq!(r, r2);
    }

    #[test]
    fn equal_aucs_are_flagged() {
        let gt = mask(&[1, 0, 1, 0]);
        let a = field(&[1.0, 0.0, 1.0, 0.0]);
        let plan = MatchPlan::whole(grid(4), MatchTolerance::exact());
        let responses = vec![("y".to_string(), a.clone()), ("x".to_string(), a)];
        let r = rank_detectors(
            &responses,
            &[("g".into(), gt)],
            None,
            &plan,
            &skew(),
            Thresholds::default(),
        )
        .unwrap();
        let e = &r.per_gt[0].entries;
        assert_eq!(
            (e[0].detector.as_str(), e[0].rank, e[0].tied),
            ("x", 1, true)
        );
        assert_eq!(
            (e[1].detector.as_str(), e[1].rank, e[1].tied),
            ("y", 2, true)
        );
    }

    #[test]
    fn unanimous_stack_has_equal_bounds() {
        let m = mask(&[0, 1, 1, 0, 1, 0]);
        let stack =
            AnnotationStack::from_masks([("a", m.clone()), ("b", m.clone()), ("c", m)]).unwrap();
        let resp = field(&[0.1, 0.9, 0.4, 0.3, 0.8, 0.5]);
        let plan = MatchPlan::whole(grid(6), MatchTolerance::exact());
        let b = performance_bounds(&resp, &stack, &plan, &skew(), Thresholds::default()).unwrap();
        assert_eq!(b.lower, b.upper);
    }

    #[test]
    fn overlap_statistic() {
        assert_eq!(interval_overlap((0.0, 1.0), (0.0, 1.0)), 1.0);
        assert_eq!(interval_overlap((0.0, 1.0), (2.0, 3.0)), 0.0);
        assert!((interval_overlap((0.0, 2.0), (1.0, 3.0)) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(interval_overlap((0.5, 0.5), (0.5, 0.5)), 1.0);
        assert_eq!(interval_overlap((0.5, 0.5), (0.6, 0.6)), 0.0);
        assert_eq!(interval_overlap((1.0, 0.0), (0.0, 1.0)), 1.0);
    }
}
