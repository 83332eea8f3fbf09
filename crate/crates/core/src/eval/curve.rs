//! P̄-R curves and their area.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::matching::{MatchPlan, Matcher};
use super::{pbar_counts, SkewRange};
use crate::error::{Error, Result};
use crate::features::ScalarField;
use crate::mask::BinaryMask;

/// Largest number of finite thresholds in a sweep.
pub const MAX_THRESHOLDS: usize = 4096;

/// Interpolated points per segment when integrating a curve.
pub const AUC_DENSITY: usize = 20;

/// Threshold sweep: every distinct response when there are at most `max`,
/// otherwise `max` quantile-spaced distinct responses. The infinite
/// endpoints are always added.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thresholds {
    pub max: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            max: MAX_THRESHOLDS,
        }
    }
}

impl Thresholds {
    /// Thresholds in descending order, from `+inf` to `-inf`.
    pub fn select(&self, ascending: &[f64]) -> Vec<f64> {
        let mut unique = ascending.to_vec();
        unique.dedup();
        let max = self.max.max(2);
        let picked: Vec<f64> = if unique.len() <= max {
            unique
        } else {
            let last = (unique.len() - 1) as f64;
            let mut v: Vec<f64> = (0..max)
                .map(|k| unique[(k as f64 * last / (max - 1) as f64).round() as usize])
                .collect();
            v.dedup();
            v
        };
        std::iter::once(f64::INFINITY)
            .chain(picked.into_iter().rev())
            .chain(std::iter::once(f64::NEG_INFINITY))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub theta: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub recall: f64,
    pub pbar: f64,
}

/// Curve points ordered by decreasing threshold, so recall never decreases
/// along the list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PbarRCurve {
    pub points: Vec<CurvePoint>,
    pub auc: f64,
    pub positives: u64,
    pub negatives: u64,
    pub skew: SkewRange,
}

impl PbarRCurve {
    pub fn from_matcher(
        matcher: &Matcher,
        skew: &SkewRange,
        thresholds: Thresholds,
    ) -> Result<Self> {
        let np = matcher.positives();
        if np == 0 {
            return Err(Error::UndefinedRecall);
        }
        let points: Vec<CurvePoint> = thresholds
            .select(matcher.responses())
            .par_iter()
            .map(|&theta| {
                let op = matcher.point(theta);
                CurvePoint {
                    theta,
                    tp: op.tp,
                    fp: op.fp,
                    fn_: op.fn_,
                    tn: op.tn,
                    recall: op.tp as f64 / np as f64,
                    pbar: pbar_counts(op.tp as f64, op.fp as f64, skew),
                }
            })
            .collect();
        let auc = auc_with_density(&points, np, skew, AUC_DENSITY);
        Ok(PbarRCurve {
            points,
            auc,
            positives: np,
            negatives: matcher.negatives(),
            skew: *skew,
        })
    }

    /// The curve as CSV with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("theta,tp,fp,fn,tn,recall,pbar\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                p.theta, p.tp, p.fp, p.fn_, p.tn, p.recall, p.pbar
            ));
        }
        out
    }
}

pub fn pr_curve(
    resp: &ScalarField,
    gt: &BinaryMask,
    roi: Option<&BinaryMask>,
    plan: &MatchPlan,
    skew: &SkewRange,
    thresholds: Thresholds,
) -> Result<PbarRCurve> {
    let matcher = Matcher::new(resp, gt, roi, plan)?;
    PbarRCurve::from_matcher(&matcher, skew, thresholds)
}

/// Area under the curve with `density` interpolated steps per segment.
///
/// TP and FP move linearly along each segment and P̄ is recomputed at the
/// fractional counts. P̄ depends only on the ratio of TP to FP, so a segment
/// leaving the origin starts at the P̄ of its own direction.
pub fn auc_with_density(
    points: &[CurvePoint],
    positives: u64,
    skew: &SkewRange,
    density: usize,
) -> f64 {
    let density = density.max(1);
    let np = positives as f64;
    let mut area = 0.0;
    for w in points.windows(2) {
        let (tp0, fp0) = (w[0].tp as f64, w[0].fp as f64);
        let (dtp, dfp) = (w[1].tp as f64 - tp0, w[1].fp as f64 - fp0);
        if dtp == 0.0 {
            continue;
        }
        let at = |s: usize| {
            let t = s as f64 / density as f64;
            let (tp, fp) = (tp0 + t * dtp, fp0 + t * dfp);
            let pb = if tp == 0.0 && fp == 0.0 {
                pbar_counts(dtp, dfp, skew)
            } else {
                pbar_counts(tp, fp, skew)
            };
            (tp / np, pb)
        };
        let mut prev = at(0);
        for s in 1..=density {
            let cur = at(s);
            area += (cur.0 - prev.0) * (cur.1 + prev.1) / 2.0;
            prev = cur;
        }
    }
    area.clamp(0.0, 1.0)
}
