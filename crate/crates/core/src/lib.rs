//! Annotator agreement analysis, ground-truth fusion and skew-integrated
//! precision-recall evaluation for binary pixel annotations.
//!
//! The modules follow the analysis pipeline:
//!
//! * [`mask`]: masks, annotation stacks, the agreement map, the Smyth error
//!   bound and consensus thresholding.
//! * [`morph`]: window filters, dilation/erosion and thinning.
//! * [`features`]: intensity, CIELAB lightness, Michelson contrast and Pearson
//!   correlation against agreement.
//! * [`raters`]: pairwise F1, Ward clustering, outliers and rater statistics.
//! * [`fusion`]: vote, outlier-excluded vote, STAPLE and SIMPLE ground truths.
//! * [`eval`]: operating points, integrated precision, curves, AUC, CCO/CCI
//!   and detector ranking.
//! * [`synth`]: seeded synthetic scenes and annotator cohorts.
//! * [`io`] and [`cli`]: file formats, manifests, run reports and the
//!   `raterkit` command line.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod error;
pub mod eval;
pub mod features;
pub mod fusion;
pub mod io;
pub mod mask;
pub mod morph;
pub mod raters;
pub mod synth;

pub use error::{Error, Result};
pub use mask::{
    agreement_curve, agreement_fraction, agreement_map, smyth_bound, threshold_consensus,
    AgreementMap, Annotation, AnnotationStack, BinaryMask, ConsensusParams, ImageGrid,
};
