//! Ground-truth estimation from an annotation stack.

mod simple;
mod staple;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{
    agreement_map, threshold_consensus, AnnotationStack, BinaryMask, ConsensusParams,
};
use crate::raters::{detect_outliers, pairwise_f1, OutlierReport, StdForm};

pub use simple::{fuse_simple, DroppedRater, SimpleConfig, SimpleResult, SimpleScore};
pub use staple::{fuse_staple, Prior, RaterPerformance, SoftLabelMap, StapleConfig, StapleResult};

/// Named consensus thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VotePreset {
    /// Anything marked by at least one annotator (`tau = 1/N`).
    Any,
    /// Majority vote (`tau = 0.5`).
    Half,
    /// Three-quarter consensus (`tau = 0.75`).
    ThreeQuarters,
}

impl VotePreset {
    pub fn tau(self, n_annotators: usize) -> f64 {
        match self {
            VotePreset::Any => 1.0 / n_annotators as f64,
            VotePreset::Half => 0.5,
            VotePreset::ThreeQuarters => 0.75,
        }
    }
}

/// Consensus vote at `tau`.
pub fn fuse_vote(stack: &AnnotationStack, tau: f64) -> Result<BinaryMask> {
    let params = ConsensusParams::new(tau)?;
    Ok(threshold_consensus(&agreement_map(stack), params))
}

pub fn fuse_preset(stack: &AnnotationStack, preset: VotePreset) -> Result<BinaryMask> {
    fuse_vote(stack, preset.tau(stack.len()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExclusionResult {
    pub mask: BinaryMask,
    pub excluded: Vec<String>,
    pub outliers: Option<OutlierReport>,
    pub warning: Option<String>,
}

/// Vote at `tau` after removing the annotators flagged by the outlier rule.
pub fn fuse_excl_vote(stack: &AnnotationStack, tau: f64, form: StdForm) -> Result<ExclusionResult> {
    ConsensusParams::new(tau)?;
    if stack.len() < 3 {
        return Ok(ExclusionResult {
            mask: fuse_vote(stack, tau)?,
            excluded: Vec::new(),
            outliers: None,
            warning: Some(format!(
                "outlier detection needs at least 3 annotators, got {}; voting over all",
                stack.len()
            )),
        });
    }
    let report = detect_outliers(&pairwise_f1(stack)?, form);
    let excluded = report.outliers.clone();
    if stack.len() - excluded.len() < 2 {
        return Ok(ExclusionResult {
            mask: fuse_vote(stack, tau)?,
            excluded: Vec::new(),
            warning: Some(format!(
                "{} of {} annotators flagged; voting over all",
                excluded.len(),
                stack.len()
            )),
            outliers: Some(report),
        });
    }
    let keep: Vec<&str> = stack
        .ids()
        .into_iter()
        .filter(|id| !excluded.iter().any(|e| e == id))
        .collect();
    let reduced = stack.retain_ids(&keep)?;
    Ok(ExclusionResult {
        mask: fuse_vote(&reduced, tau)?,
        excluded,
        outliers: Some(report),
        warning: None,
    })
}

pub(crate) fn require_annotators(stack: &AnnotationStack, min: usize, what: &str) -> Result<()> {
    if stack.len() < min {
        return Err(Error::Argument(format!(
            "{what} needs at least {min} annotators, got {}",
            stack.len()
        )));
    }
    Ok(())
}
