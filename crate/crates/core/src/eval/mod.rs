//! Detector evaluation: confusion counts with an optional distance
//! tolerance, skew-integrated precision, P̄-R curves, CCO/CCI and ranking
//! against several ground truths.

mod curve;
mod matching;
mod rank;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use curve::{
    auc_with_density, pr_curve, CurvePoint, PbarRCurve, Thresholds, AUC_DENSITY, MAX_THRESHOLDS,
};
pub use matching::{
    confusion_at, squared_distance_transform, Extent, MatchPlan, MatchTolerance, Matcher,
    ToleranceSpec,
};
pub use rank::{
    cci, cco, cco_cci, interval_overlap, performance_bounds, rank_detectors, DistinctRanking,
    GtRanking, PerformanceBounds, RankEntry, Ranking,
};

/// Range of skews `[pi1, pi2]` over which precision is averaged, and the
/// dataset ratio `phi = N_p / N_n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkewRange {
    pi1: f64,
    pi2: f64,
    phi: f64,
}

impl SkewRange {
    pub fn new(pi1: f64, pi2: f64, phi: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&pi1) || !(pi2 > 0.0 && pi2 <= 1.0) || !(pi1 < pi2) {
            return Err(Error::Argument(format!(
                "skew range needs 0 <= pi1 < pi2 <= 1, got [{pi1}, {pi2}]"
            )));
        }
        if !(phi > 0.0) || !phi.is_finite() {
            return Err(Error::Argument(format!("phi must be positive, got {phi}")));
        }
        Ok(SkewRange { pi1, pi2, phi })
    }

    pub fn pi1(&self) -> f64 {
        self.pi1
    }

    pub fn pi2(&self) -> f64 {
        self.pi2
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    /// Same range with a different `phi`.
    pub fn with_phi(self, phi: f64) -> Result<Self> {
        SkewRange::new(self.pi1, self.pi2, phi)
    }
}

/// Dataset ratio used by a [`SkewSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Phi {
    Fixed(f64),
    /// `N_p / N_n` of the ground truth being evaluated.
    #[default]
    Dataset,
}

impl Serialize for Phi {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Phi::Fixed(v) => s.serialize_f64(*v),
            Phi::Dataset => s.serialize_str("dataset"),
        }
    }
}

impl<'de> Deserialize<'de> for Phi {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::Number(n) => n
                .as_f64()
                .map(Phi::Fixed)
                .ok_or_else(|| serde::de::Error::custom("phi is not a finite number")),
            serde_json::Value::String(s) if s == "dataset" => Ok(Phi::Dataset),
            other => Err(serde::de::Error::custom(format!(
                "phi must be a number or \"dataset\", got {other}"
            ))),
        }
    }
}

/// A skew range whose `phi` may still depend on the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkewSpec {
    pub pi1: f64,
    pub pi2: f64,
    pub phi: Phi,
}

impl SkewSpec {
    pub fn resolve(&self, positives: u64, negatives: u64) -> Result<SkewRange> {
        let phi = match self.phi {
            Phi::Fixed(v) => v,
            Phi::Dataset if negatives == 0 => {
                return Err(Error::Domain(
                    "phi is undefined: the ground truth has no negative pixel".into(),
                ))
            }
            Phi::Dataset => positives as f64 / negatives as f64,
        };
        SkewRange::new(self.pi1, self.pi2, phi)
    }
}

/// Confusion counts of a thresholded response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub theta: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl OperatingPoint {
    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.fp + self.tn
    }

    pub fn recall(&self) -> Result<f64> {
        match self.positives() {
            0 => Err(Error::UndefinedRecall),
            p => Ok(self.tp as f64 / p as f64),
        }
    }
}

/// Integrated precision of an operating point.
pub fn pbar(point: &OperatingPoint, skew: &SkewRange) -> f64 {
    pbar_counts(point.tp as f64, point.fp as f64, skew)
}

/// Mean over `pi` in `[pi1, pi2]` of `pi*TP / (pi*TP + (1-pi)*phi*FP)`.
///
/// Counts may be fractional. With `a = TP`, `b = phi*FP`, `d = a - b`,
/// `c = b + pi1*d` and `x = (pi2-pi1)*d/c` the mean is
/// `(a/c) * (pi1*g(x) + (pi2-pi1)*h(x))` where `g(x) = ln(1+x)/x` and
/// `h(x) = (x - ln(1+x))/x^2`. Both are evaluated by series near zero, so
/// the form stays accurate as `d` vanishes.
pub fn pbar_counts(tp: f64, fp: f64, skew: &SkewRange) -> f64 {
    let a = tp;
    let b = skew.phi * fp;
    if b == 0.0 {
        return 1.0;
    }
    if a == 0.0 {
        return 0.0;
    }
    let d = a - b;
    let c = (1.0 - skew.pi1) * b + skew.pi1 * a;
    let delta = skew.pi2 - skew.pi1;
    let x = delta * d / c;
    let (g, h) = g_h(x);
    ((a / c) * (skew.pi1 * g + delta * h)).clamp(0.0, 1.0)
}

fn g_h(x: f64) -> (f64, f64) {
    if x.abs() < 0.05 {
        // sum of (-x)^k / (k+1) and (-x)^k / (k+2)
        let mut g = 0.0;
        let mut h = 0.0;
        let mut term = 1.0;
        for k in 0..16 {
            g += term / (k + 1) as f64;
            h += term / (k + 2) as f64;
            term *= -x;
        }
        (g, h)
    } else {
        let l = x.ln_1p();
        (l / x, (x - l) / (x * x))
    }
}
